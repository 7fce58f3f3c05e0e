#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "eppc/recovery.hpp"

using namespace eppc;

namespace {

const std::string canonical =
    "{\"results\": [{\"Code\": \"InfoGive\", \"Sub-code\": \"Diagnostics\", "
    "\"Span\": \"blood test\"}]}";

}  // namespace

TEST_CASE("clean JSON parses on the direct route") {
    auto out = recover(canonical, "e1");
    REQUIRE(out.route == recovery_route::direct);
    REQUIRE(out.prediction.status == parse_status::valid);
    REQUIRE(out.prediction.example_id == "e1");
    REQUIRE(out.prediction.annotations.size() == 1);
    REQUIRE(out.prediction.annotations[0].span == "blood test");
}

TEST_CASE("fenced documents route through fence stripping") {
    SECTION("plain fence") {
        auto out = recover("```\n" + canonical + "\n```", "e1");
        REQUIRE(out.route == recovery_route::fence_stripped);
        REQUIRE(out.prediction.status == parse_status::recovered);
        REQUIRE(out.prediction.annotations.size() == 1);
    }
    SECTION("json language tag with surrounding prose") {
        auto out = recover("Sure, here you go:\n```json\n" + canonical + "\n```\nLet me know!",
                           "e1");
        REQUIRE(out.route == recovery_route::fence_stripped);
        REQUIRE(out.prediction.annotations.size() == 1);
    }
    SECTION("unterminated fences fall through to bracket recovery") {
        auto out = recover("```json\n" + canonical, "e1");
        REQUIRE(out.route == recovery_route::bracket_recovered);
        REQUIRE(out.prediction.annotations.size() == 1);
    }
}

TEST_CASE("embedded objects route through bracket recovery") {
    auto out = recover("Here is the answer: " + canonical + " Hope this helps.", "e1");
    REQUIRE(out.route == recovery_route::bracket_recovered);
    REQUIRE(out.prediction.status == parse_status::recovered);
    REQUIRE(out.prediction.annotations.size() == 1);
}

TEST_CASE("bracket recovery keeps only the first balanced object") {
    std::string second =
        "{\"results\": [{\"Code\": \"InfoSeek\", \"Sub-code\": \"Scheduling\", "
        "\"Span\": \"next week\"}]}";
    auto out = recover("first: " + canonical + " second: " + second, "e1");
    REQUIRE(out.route == recovery_route::bracket_recovered);
    REQUIRE(out.prediction.annotations.size() == 1);
    REQUIRE(out.prediction.annotations[0].code == "InfoGive");
}

TEST_CASE("braces inside string literals do not break balancing") {
    std::string tricky =
        "note {\"results\": [{\"Code\": \"InfoGive\", \"Sub-code\": \"Diagnostics\", "
        "\"Span\": \"curly } brace\"}]} end";
    auto out = recover(tricky, "e1");
    REQUIRE(out.route == recovery_route::bracket_recovered);
    REQUIRE(out.prediction.annotations.size() == 1);
    REQUIRE(out.prediction.annotations[0].span == "curly } brace");
}

TEST_CASE("a bare top-level array is recovered as the results list") {
    std::string arr =
        "[{\"Code\": \"InfoGive\", \"Sub-code\": \"Diagnostics\", \"Span\": \"blood test\"}]";
    auto out = recover(arr, "e1");
    REQUIRE(out.route == recovery_route::bracket_recovered);
    REQUIRE(out.prediction.annotations.size() == 1);
}

TEST_CASE("prose and garbage fail with empty results") {
    for (const std::string raw :
         {std::string("I could not find any relevant categories in this message."),
          std::string(""), std::string("{\"results\": \"oops\"}"),
          std::string("{ definitely not json ]")}) {
        auto out = recover(raw, "e9");
        REQUIRE(out.route == recovery_route::failed);
        REQUIRE(out.prediction.status == parse_status::invalid);
        REQUIRE(out.prediction.annotations.empty());
        REQUIRE(out.prediction.example_id == "e9");
    }
}

TEST_CASE("malformed result entries are dropped individually") {
    std::string mixed =
        "{\"results\": [{\"Code\": \"A\", \"Sub-code\": \"B\", \"Span\": \"x\"}, 42, "
        "{\"Code\": \"C\"}, {\"Code\": \"D\", \"Sub-code\": \"E\", \"Span\": \"y\"}]}";
    auto out = recover(mixed, "e1");
    REQUIRE(out.route == recovery_route::direct);
    REQUIRE(out.prediction.annotations.size() == 2);
    REQUIRE(out.dropped_entries == 2);
    REQUIRE(out.prediction.annotations[1].code == "D");
}

TEST_CASE("recovery is deterministic") {
    std::string raw = "noise " + canonical + " noise";
    auto a = recover(raw, "e1");
    auto b = recover(raw, "e1");
    REQUIRE(a.route == b.route);
    REQUIRE(a.prediction == b.prediction);
}

TEST_CASE("serialize then recover is the identity with route direct") {
    std::mt19937 rng(71);
    const char* codes[] = {"InfoGive", "InfoSeek", "Emotion"};
    const char* subs[] = {"Diagnostics", "Medication", "Scheduling", "Fear"};
    const char* words[] = {"blood", "test", "visit", "refill", "scan", "results"};
    for (int trial = 0; trial < 100; ++trial) {
        prediction_set p;
        p.example_id = "ex" + std::to_string(trial);
        std::size_t n = rng() % 4;
        for (std::size_t k = 0; k < n; ++k) {
            annotation ann;
            ann.code = codes[rng() % 3];
            ann.sub_code = subs[rng() % 4];
            for (int w = 0; w < 1 + static_cast<int>(rng() % 3); ++w)
                ann.span += std::string(w ? " " : "") + words[rng() % 6];
            p.annotations.push_back(ann);
        }
        auto out = recover(serialize(p), p.example_id);
        REQUIRE(out.route == recovery_route::direct);
        REQUIRE(out.prediction == p);
    }
}

TEST_CASE("recovered annotations appear in the input text") {
    for (const std::string raw :
         {"prefix " + canonical + " suffix", "```json\n" + canonical + "\n```", canonical}) {
        auto out = recover(raw, "e1");
        for (const auto& ann : out.prediction.annotations) {
            REQUIRE(raw.find(ann.code) != std::string::npos);
            REQUIRE(raw.find(ann.sub_code) != std::string::npos);
            REQUIRE(raw.find(ann.span) != std::string::npos);
        }
    }
}
