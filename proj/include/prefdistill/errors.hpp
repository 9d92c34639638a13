// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace prefdistill {

// Base class for every error thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define PREFDISTILL_ERROR(Name)                                           \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
    };

PREFDISTILL_ERROR(ZeroVector)
PREFDISTILL_ERROR(DimensionMismatch)
PREFDISTILL_ERROR(EmptyCatalog)
PREFDISTILL_ERROR(BadMagic)
PREFDISTILL_ERROR(TruncatedFile)
PREFDISTILL_ERROR(DuplicateId)
PREFDISTILL_ERROR(IoError)
PREFDISTILL_ERROR(InvalidPermutation)
PREFDISTILL_ERROR(UnknownId)
PREFDISTILL_ERROR(ShapeMismatch)
PREFDISTILL_ERROR(PrematureStep)
PREFDISTILL_ERROR(TeacherUnavailable)
PREFDISTILL_ERROR(CacheCorrupt)
PREFDISTILL_ERROR(CatalogTooSmall)
PREFDISTILL_ERROR(KOutOfRange)
PREFDISTILL_ERROR(UnknownWinner)
PREFDISTILL_ERROR(ConfigError)
PREFDISTILL_ERROR(StaleCache)

#undef PREFDISTILL_ERROR

// Keeps the offending response body around for auditing.
class MalformedResponse : public Error {
public:
    explicit MalformedResponse(const std::string& what, std::string raw = "")
        : Error("MalformedResponse: " + what), raw_response(std::move(raw)) {}

    std::string raw_response;
};

}  // namespace prefdistill
