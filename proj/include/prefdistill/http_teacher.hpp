// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <memory>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "prefdistill/errors.hpp"
#include "prefdistill/teacher.hpp"

namespace prefdistill {

struct EndpointConfig {
    std::string url;        // e.g. http://host:port/rank
    std::string model;      // forwarded verbatim in the request body
    std::string auth_env;   // env var holding a bearer token, optional
    int max_parallel = 8;
    int max_retries = 3;
    int timeout_ms = 30000;
    int retry_backoff_ms = 250;
    std::string prompt_template =
        "Persona: {persona}\n"
        "Rank the following candidate images from most to least suitable "
        "for this persona. Answer with the labels in order, e.g. B > A > C.\n"
        "{candidates}\n";
};

// Candidate labels A..Z, then AA, AB, ...
inline std::string candidate_label(std::size_t i) {
    std::string s;
    do {
        s.insert(s.begin(), static_cast<char>('A' + i % 26));
        i = i / 26;
    } while (i-- > 0);
    return s;
}

inline std::string render_prompt(const std::string& templ,
                                 const std::string& persona_text,
                                 const std::vector<std::string>& refs) {
    std::string candidates;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        candidates += candidate_label(i);
        candidates += ": ";
        candidates += refs[i];
        candidates += "\n";
    }
    std::string out = templ;
    const auto replace_all = [&out](const std::string& key, const std::string& value) {
        std::size_t pos = 0;
        while ((pos = out.find(key, pos)) != std::string::npos) {
            out.replace(pos, key.size(), value);
            pos += value.size();
        }
    };
    replace_all("{persona}", persona_text);
    replace_all("{candidates}", candidates);
    return out;
}

// Parses a ranking out of a response body. Accepts "C > A > B" style
// label chains, a JSON array of labels, or JSON objects carrying the
// text under ranking/text/content/response. Returns the rank of each of
// the n candidates (1 = best). Throws MalformedResponse (retaining the
// body) on anything that is not a strict permutation of all n labels.
inline std::vector<int> parse_ranking_response(const std::string& body, std::size_t n) {
    std::vector<std::string> tokens;

    const auto tokens_from_text = [](const std::string& text) {
        std::vector<std::string> toks;
        std::string cur;
        for (char c : text) {
            if (std::isalpha(static_cast<unsigned char>(c))) {
                cur.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
            } else if (!cur.empty()) {
                toks.push_back(cur);
                cur.clear();
            }
        }
        if (!cur.empty()) toks.push_back(cur);
        return toks;
    };

    nlohmann::json j = nlohmann::json::parse(body, nullptr, /*allow_exceptions=*/false);
    if (j.is_array()) {
        for (const auto& item : j)
            if (item.is_string()) tokens.push_back(item.get<std::string>());
    } else if (j.is_object()) {
        for (const char* field : {"ranking", "text", "content", "response"}) {
            if (!j.contains(field)) continue;
            const auto& v = j.at(field);
            if (v.is_array()) {
                for (const auto& item : v)
                    if (item.is_string()) tokens.push_back(item.get<std::string>());
            } else if (v.is_string()) {
                tokens = tokens_from_text(v.get<std::string>());
            }
            break;
        }
    } else if (j.is_string()) {
        tokens = tokens_from_text(j.get<std::string>());
    } else {
        tokens = tokens_from_text(body);
    }

    if (tokens.size() != n)
        throw MalformedResponse("expected " + std::to_string(n) + " labels, got " +
                                    std::to_string(tokens.size()),
                                body);
    std::vector<int> ranking(n, 0);
    for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
        std::size_t idx = n;
        for (std::size_t i = 0; i < n; ++i)
            if (tokens[pos] == candidate_label(i)) {
                idx = i;
                break;
            }
        if (idx == n)
            throw MalformedResponse("unknown label '" + tokens[pos] + "'", body);
        if (ranking[idx] != 0)
            throw MalformedResponse("label '" + tokens[pos] + "' repeated", body);
        ranking[idx] = static_cast<int>(pos) + 1;
    }
    return ranking;
}

// Generic HTTP ranking client. Sends persona text plus labeled candidate
// references as JSON, parses the ranking from the response, and retries
// with exponential backoff on transport errors or parse failures. A
// counting semaphore enforces the request parallelism cap.
class HttpTeacher : public Teacher {
public:
    explicit HttpTeacher(EndpointConfig cfg)
        : cfg_(std::move(cfg)), gate_(std::max(1, cfg_.max_parallel)) {
        split_url(cfg_.url, base_, path_);
    }

    std::string id() const override {
        return cfg_.model.empty() ? "http" : cfg_.model;
    }

    const EndpointConfig& config() const { return cfg_; }

protected:
    TeacherRanking do_rank(const TeacherRequest& req) override {
        gate_.acquire();
        struct Release {
            std::counting_semaphore<>& g;
            ~Release() { g.release(); }
        } release{gate_};

        const std::vector<std::string>& refs =
            req.payload_refs.empty() ? req.candidate_ids : req.payload_refs;
        nlohmann::json payload;
        payload["model"] = cfg_.model;
        payload["persona"] = req.persona_text;
        payload["prompt"] = render_prompt(cfg_.prompt_template, req.persona_text, refs);
        nlohmann::json cands = nlohmann::json::array();
        for (std::size_t i = 0; i < req.candidate_ids.size(); ++i) {
            nlohmann::json c;
            c["label"] = candidate_label(i);
            c["id"] = req.candidate_ids[i];
            c["ref"] = refs[i];
            cands.push_back(std::move(c));
        }
        payload["candidates"] = std::move(cands);
        const std::string body = payload.dump();

        std::string last_error;
        std::string last_body;
        bool last_was_parse = false;
        for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
            if (attempt > 0)
                std::this_thread::sleep_for(std::chrono::milliseconds(
                    cfg_.retry_backoff_ms << (attempt - 1)));
            httplib::Client client(base_);
            client.set_connection_timeout(cfg_.timeout_ms / 1000,
                                          (cfg_.timeout_ms % 1000) * 1000);
            client.set_read_timeout(cfg_.timeout_ms / 1000, (cfg_.timeout_ms % 1000) * 1000);
            if (!cfg_.auth_env.empty()) {
                if (const char* token = std::getenv(cfg_.auth_env.c_str()))
                    client.set_default_headers(
                        {{"Authorization", std::string("Bearer ") + token}});
            }
            auto res = client.Post(path_, body, "application/json");
            if (!res || res->status < 200 || res->status >= 300) {
                last_was_parse = false;
                last_error = !res ? "transport error: " + httplib::to_string(res.error())
                                  : "HTTP status " + std::to_string(res->status);
                continue;
            }
            try {
                TeacherRanking out;
                out.ranking = parse_ranking_response(res->body, req.candidate_ids.size());
                out.teacher_id = id();
                out.raw_response = res->body;
                return out;
            } catch (const MalformedResponse& e) {
                last_was_parse = true;
                last_error = e.what();
                last_body = e.raw_response;
            }
        }
        if (last_was_parse) throw MalformedResponse(last_error, last_body);
        throw TeacherUnavailable(cfg_.url + ": " + last_error);
    }

private:
    static void split_url(const std::string& url, std::string& base, std::string& path) {
        const auto scheme = url.find("://");
        if (scheme == std::string::npos)
            throw ConfigError("teacher url '" + url + "' missing scheme");
        const auto slash = url.find('/', scheme + 3);
        if (slash == std::string::npos) {
            base = url;
            path = "/";
        } else {
            base = url.substr(0, slash);
            path = url.substr(slash);
        }
    }

    EndpointConfig cfg_;
    std::string base_;
    std::string path_;
    std::counting_semaphore<> gate_;
};

}  // namespace prefdistill
