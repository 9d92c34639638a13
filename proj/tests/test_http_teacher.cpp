// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <chrono>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "prefdistill/http_teacher.hpp"

using namespace prefdistill;

namespace {

// Local stub endpoint. The handler decides the response from the parsed
// request payload; in-flight concurrency is tracked for the cap test.
class StubServer {
public:
    using Handler = std::function<std::string(const nlohmann::json&)>;

    explicit StubServer(Handler handler) : handler_(std::move(handler)) {
        server_.Post("/rank", [this](const httplib::Request& req, httplib::Response& res) {
            const int now = ++inflight_;
            int seen = max_inflight_.load();
            while (now > seen && !max_inflight_.compare_exchange_weak(seen, now)) {
            }
            ++requests_;
            std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms_));
            res.set_content(handler_(nlohmann::json::parse(req.body)), "text/plain");
            --inflight_;
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~StubServer() {
        server_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/rank"; }
    int requests() const { return requests_.load(); }
    int max_inflight() const { return max_inflight_.load(); }
    void set_delay(int ms) { delay_ms_ = ms; }

private:
    httplib::Server server_;
    Handler handler_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> requests_{0};
    std::atomic<int> inflight_{0};
    std::atomic<int> max_inflight_{0};
    int delay_ms_ = 0;
};

TeacherRequest request(std::vector<std::string> ids) {
    TeacherRequest req;
    req.persona_id = "p";
    req.persona_text = "a persona";
    req.candidate_ids = std::move(ids);
    return req;
}

EndpointConfig quick_config(const std::string& url) {
    EndpointConfig cfg;
    cfg.url = url;
    cfg.model = "stub-model";
    cfg.retry_backoff_ms = 5;
    cfg.timeout_ms = 5000;
    return cfg;
}

}  // namespace

TEST_CASE("candidate labels") {
    CHECK(candidate_label(0) == "A");
    CHECK(candidate_label(2) == "C");
    CHECK(candidate_label(25) == "Z");
    CHECK(candidate_label(26) == "AA");
    CHECK(candidate_label(27) == "AB");
}

TEST_CASE("prompt rendering") {
    const std::string prompt = render_prompt("Persona: {persona}\n{candidates}end",
                                             "a gardener", {"ref1", "ref2"});
    CHECK(prompt == "Persona: a gardener\nA: ref1\nB: ref2\nend");
}

TEST_CASE("parse fixtures") {
    CHECK(parse_ranking_response("C > A > B", 3) == std::vector<int>{2, 3, 1});
    CHECK(parse_ranking_response("c>a>b", 3) == std::vector<int>{2, 3, 1});
    CHECK(parse_ranking_response(R"(["C","A","B"])", 3) == std::vector<int>{2, 3, 1});
    CHECK(parse_ranking_response(R"({"ranking":"B > A"})", 2) == std::vector<int>{2, 1});
    CHECK(parse_ranking_response(R"({"text":"A > B > C > D"})", 4) ==
          std::vector<int>{1, 2, 3, 4});
    CHECK(parse_ranking_response(R"({"ranking":["B","A"]})", 2) == std::vector<int>{2, 1});

    CHECK_THROWS_AS(parse_ranking_response("A > A > B", 3), MalformedResponse);
    CHECK_THROWS_AS(parse_ranking_response("A > B", 3), MalformedResponse);
    CHECK_THROWS_AS(parse_ranking_response("A > B > Q", 3), MalformedResponse);
    try {
        parse_ranking_response("A > A > B", 3);
        FAIL("expected MalformedResponse");
    } catch (const MalformedResponse& e) {
        CHECK(e.raw_response == "A > A > B");
    }
}

TEST_CASE("http teacher parses a stub ranking") {
    StubServer server([](const nlohmann::json&) { return "C > A > B"; });
    HttpTeacher teacher(quick_config(server.url()));
    const TeacherRanking r = teacher.rank(request({"x", "y", "z"}));
    CHECK(r.ranking == std::vector<int>{2, 3, 1});
    CHECK(r.teacher_id == "stub-model");
    CHECK(r.raw_response == "C > A > B");
    CHECK(server.requests() == 1);
}

TEST_CASE("malformed responses retry then fail") {
    StubServer server([](const nlohmann::json&) { return "A > A > B"; });
    EndpointConfig cfg = quick_config(server.url());
    cfg.max_retries = 3;
    HttpTeacher teacher(cfg);
    CHECK_THROWS_AS(teacher.rank(request({"x", "y", "z"})), MalformedResponse);
    CHECK(server.requests() == 4);  // initial attempt + 3 retries
}

TEST_CASE("transient malformed response recovers on retry") {
    std::atomic<int> count{0};
    StubServer server([&count](const nlohmann::json&) {
        return ++count <= 2 ? std::string("A > A") : std::string("B > A");
    });
    HttpTeacher teacher(quick_config(server.url()));
    const TeacherRanking r = teacher.rank(request({"x", "y"}));
    CHECK(r.ranking == std::vector<int>{2, 1});
    CHECK(server.requests() == 3);
}

TEST_CASE("transport failure raises TeacherUnavailable") {
    EndpointConfig cfg = quick_config("http://127.0.0.1:1/rank");  // nothing listens
    cfg.max_retries = 1;
    cfg.timeout_ms = 500;
    HttpTeacher teacher(cfg);
    CHECK_THROWS_AS(teacher.rank(request({"x", "y"})), TeacherUnavailable);
}

TEST_CASE("parallel requests are attributed correctly under the cap") {
    // response derived from the request: reverse of the label order
    StubServer server([](const nlohmann::json& body) {
        const auto& cands = body.at("candidates");
        std::string out;
        for (auto it = cands.rbegin(); it != cands.rend(); ++it) {
            if (!out.empty()) out += " > ";
            out += it->at("label").get<std::string>();
        }
        return out;
    });
    server.set_delay(20);

    EndpointConfig cfg = quick_config(server.url());
    cfg.max_parallel = 4;
    HttpTeacher teacher(cfg);

    std::vector<std::thread> threads;
    std::vector<TeacherRanking> results(16);
    for (int t = 0; t < 16; ++t)
        threads.emplace_back([&teacher, &results, t] {
            results[static_cast<std::size_t>(t)] = teacher.rank(
                request({"a" + std::to_string(t), "b" + std::to_string(t),
                         "c" + std::to_string(t)}));
        });
    for (auto& t : threads) t.join();

    for (const auto& r : results) CHECK(r.ranking == std::vector<int>{3, 2, 1});
    CHECK(server.requests() == 16);
    CHECK(server.max_inflight() <= 4);
}

TEST_CASE("request body carries model, persona, prompt, and labeled refs") {
    nlohmann::json captured;
    StubServer server([&captured](const nlohmann::json& body) {
        captured = body;
        return "A > B";
    });
    EndpointConfig cfg = quick_config(server.url());
    cfg.prompt_template = "P={persona} C={candidates}";
    HttpTeacher teacher(cfg);
    TeacherRequest req = request({"u1", "u2"});
    req.payload_refs = {"/images/u1.jpg", "/images/u2.jpg"};
    teacher.rank(req);
    CHECK(captured.at("model") == "stub-model");
    CHECK(captured.at("persona") == "a persona");
    CHECK(captured.at("candidates").size() == 2);
    CHECK(captured.at("candidates")[0].at("label") == "A");
    CHECK(captured.at("candidates")[0].at("ref") == "/images/u1.jpg");
    CHECK(captured.at("prompt").get<std::string>().find("A: /images/u1.jpg") !=
          std::string::npos);
}
