// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefdistill/embedding.hpp"
#include "prefdistill/errors.hpp"

namespace prefdistill {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian");

namespace detail {

inline std::string manifest_path(const std::string& path) {
    return path + ".manifest.json";
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void append_u32(std::string& buf, std::uint32_t v) {
    char tmp[4];
    std::memcpy(tmp, &v, 4);
    buf.append(tmp, 4);
}

inline void append_u64(std::string& buf, std::uint64_t v) {
    char tmp[8];
    std::memcpy(tmp, &v, 8);
    buf.append(tmp, 8);
}

inline void append_f32(std::string& buf, float v) {
    char tmp[4];
    std::memcpy(tmp, &v, 4);
    buf.append(tmp, 4);
}

class Reader {
public:
    Reader(const std::string& bytes, std::string path)
        : bytes_(bytes), path_(std::move(path)) {}

    void expect_magic(const char* magic) {
        if (bytes_.size() < pos_ + 4)
            throw TruncatedFile("'" + path_ + "': missing magic");
        if (std::memcmp(bytes_.data() + pos_, magic, 4) != 0)
            throw BadMagic("'" + path_ + "': expected " + magic);
        pos_ += 4;
    }

    std::uint32_t u32() {
        check(4);
        std::uint32_t v;
        std::memcpy(&v, bytes_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        check(8);
        std::uint64_t v;
        std::memcpy(&v, bytes_.data() + pos_, 8);
        pos_ += 8;
        return v;
    }

    std::vector<float> f32_block(std::size_t n) {
        check(n * 4);
        std::vector<float> v(n);
        std::memcpy(v.data(), bytes_.data() + pos_, n * 4);
        pos_ += n * 4;
        return v;
    }

    void expect_end() {
        if (pos_ != bytes_.size())
            throw TruncatedFile("'" + path_ + "': " +
                                std::to_string(bytes_.size() - pos_) +
                                " unexpected trailing bytes");
    }

private:
    void check(std::size_t n) {
        if (bytes_.size() < pos_ + n)
            throw TruncatedFile("'" + path_ + "': need " + std::to_string(n) +
                                " bytes at offset " + std::to_string(pos_));
    }

    const std::string& bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace detail

// Embedding binary: magic "PDE1", u32 count, u32 dim, count*dim f32
// row-major, plus a "<path>.manifest.json" sidecar with ids and shape.
inline void save_embeddings(const CatalogStore& store, const std::string& path,
                            bool normalized = false) {
    std::string buf;
    buf.reserve(12 + store.size() * store.dim() * 4);
    buf.append("PDE1", 4);
    detail::append_u32(buf, static_cast<std::uint32_t>(store.size()));
    detail::append_u32(buf, static_cast<std::uint32_t>(store.dim()));
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto row = normalized ? store.normalized_row(i) : store.raw_row(i);
        for (double x : row) detail::append_f32(buf, static_cast<float>(x));
    }
    detail::write_file(path, buf);

    nlohmann::json manifest;
    manifest["ids"] = store.ids();
    manifest["dim"] = store.dim();
    manifest["count"] = store.size();
    manifest["normalized"] = normalized;
    detail::write_file(detail::manifest_path(path), manifest.dump() + "\n");
}

inline CatalogStore load_embeddings(const std::string& path) {
    const std::string bytes = detail::read_file(path);
    detail::Reader r(bytes, path);
    r.expect_magic("PDE1");
    const std::uint32_t count = r.u32();
    const std::uint32_t dim = r.u32();
    const std::vector<float> data =
        r.f32_block(static_cast<std::size_t>(count) * dim);
    r.expect_end();

    const std::string mpath = detail::manifest_path(path);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(detail::read_file(mpath));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("manifest '" + mpath + "': " + e.what());
    }
    if (manifest.value("count", std::uint64_t{0}) != count ||
        manifest.value("dim", std::uint64_t{0}) != dim)
        throw DimensionMismatch("manifest '" + mpath +
                                "' disagrees with binary header");
    std::vector<std::string> ids =
        manifest.at("ids").get<std::vector<std::string>>();
    if (ids.size() != count)
        throw DimensionMismatch("manifest '" + mpath + "' has " +
                                std::to_string(ids.size()) + " ids for " +
                                std::to_string(count) + " rows");

    std::vector<double> raw(data.begin(), data.end());
    return CatalogStore(std::move(ids), dim, std::move(raw));
}

// Persona file: JSON Lines, one {"id", "text", "embedding"?} per line.
// Records without an embedding get a deterministic random unit vector
// derived from (seed, id); the text side is frozen either way.
inline PersonaSet load_personas(const std::string& path, std::size_t dim,
                                std::uint64_t seed) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    PersonaSet set;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw IoError("'" + path + "' line " + std::to_string(lineno) +
                          ": " + e.what());
        }
        PersonaRecord rec;
        rec.id = j.at("id").get<std::string>();
        rec.text = j.value("text", std::string{});
        if (j.contains("embedding")) {
            Vec v = j.at("embedding").get<Vec>();
            if (v.size() != dim)
                throw DimensionMismatch("persona '" + rec.id + "' embedding dim " +
                                        std::to_string(v.size()) + " vs " +
                                        std::to_string(dim));
            rec.embedding = normalize(v);
        } else {
            Rng rng(substream_seed(seed, "persona-embed", fnv1a64(rec.id)));
            rec.embedding = rng.unit_vector(dim);
        }
        set.add(std::move(rec));
    }
    return set;
}

inline void save_personas(const PersonaSet& set, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& rec : set) {
        nlohmann::json j;
        j["id"] = rec.id;
        j["text"] = rec.text;
        j["embedding"] = rec.embedding;
        out << j.dump() << "\n";
    }
}

}  // namespace prefdistill
