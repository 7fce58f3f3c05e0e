// Hand-built evaluation corpus shared by the unit and acceptance suites.
// Twelve examples exercising: exact matches at every level, an empty
// prediction, an unparseable output, duplicate triplets, a span sitting
// exactly on the 0.6 Jaccard boundary, label confusions, a crossed-parent
// sub-code, ranking competition between two predictions, over-extraction,
// a missed gold annotation, and an out-of-inventory code.
//
// The expected micro counts below were derived by hand from the greedy
// per-level alignment rules before the implementation ran.
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "eppc/annotation.hpp"
#include "eppc/ontology.hpp"

namespace golden {

inline std::string inventory_text() {
    return "code\tInfoGive\t\tprovides clinical information\n"
           "code\tInfoSeek\t\trequests clinical information\n"
           "code\tEmotion\t\texpresses an emotional state\n"
           "sub_code\tDiagnostics\tInfoGive\tshares test or imaging results\n"
           "sub_code\tMedication\tInfoGive\tshares drug or dosing details\n"
           "sub_code\tDiagnostics\tInfoSeek\tasks about tests or imaging\n"
           "sub_code\tScheduling\tInfoSeek\tasks about appointments or timing\n"
           "sub_code\tFear\tEmotion\tworry or fear about care\n";
}

inline eppc::label_inventory inventory() { return eppc::load_inventory(inventory_text()); }

struct fixture {
    std::vector<eppc::gold_example> golds;
    std::vector<eppc::prediction_set> preds;
};

inline fixture corpus() {
    using eppc::annotation;
    using eppc::gold_example;
    using eppc::parse_status;
    using eppc::prediction_set;

    fixture f;
    auto add = [&](const std::string& id, const std::string& context,
                   std::vector<annotation> gold_anns, std::vector<annotation> pred_anns,
                   parse_status status = parse_status::valid) {
        gold_example g;
        g.example_id = id;
        g.context = context;
        g.sentence = context;
        g.annotations = std::move(gold_anns);
        f.golds.push_back(std::move(g));
        prediction_set p;
        p.example_id = id;
        p.annotations = std::move(pred_anns);
        p.status = status;
        f.preds.push_back(std::move(p));
    };

    // e01: exact match at every level.
    add("e01", "Your blood test results look great and we will call you.",
        {{"InfoGive", "Diagnostics", "blood test results"}},
        {{"InfoGive", "Diagnostics", "blood test results"}});

    // e02: empty (but valid) prediction against one gold annotation.
    add("e02", "Please bring your insurance card to the visit.",
        {{"InfoSeek", "Scheduling", "bring your insurance card"}}, {});

    // e03: unparseable output; two gold annotations become misses.
    add("e03", "We adjusted your dose and will see you next month.",
        {{"InfoGive", "Medication", "adjusted your dose"},
         {"InfoSeek", "Scheduling", "see you next month"}},
        {}, parse_status::invalid);

    // e04: duplicated predicted triplet collapses before scoring.
    add("e04", "The MRI scan is scheduled for Friday morning.",
        {{"InfoSeek", "Scheduling", "scheduled for Friday"}},
        {{"InfoSeek", "Scheduling", "scheduled for Friday"},
         {"InfoSeek", "Scheduling", "scheduled for Friday"}});

    // e05: span Jaccard exactly 0.6 (three shared tokens, union of five).
    add("e05", "Could you please renew my prescription refill today?",
        {{"InfoSeek", "Scheduling", "renew my prescription refill"}},
        {{"InfoSeek", "Scheduling", "please renew my prescription"}});

    // e06: correct pair, span Jaccard 0.5 - below the threshold.
    add("e06", "I want to ask about my test results from last week.",
        {{"InfoSeek", "Diagnostics", "my test results"}},
        {{"InfoSeek", "Diagnostics", "test results today"}});

    // e07: both labels wrong, span identical.
    add("e07", "I am scared about the upcoming surgery next week.",
        {{"Emotion", "Fear", "scared about the upcoming surgery"}},
        {{"InfoGive", "Medication", "scared about the upcoming surgery"}});

    // e08: sub-code name valid under a different parent, span identical.
    add("e08", "When can I schedule the next appointment with the doctor?",
        {{"InfoSeek", "Scheduling", "schedule the next appointment"}},
        {{"InfoGive", "Scheduling", "schedule the next appointment"}});

    // e09: label correctness outranks span overlap in the greedy alignment:
    // prediction A has the right pair at Jaccard 0.5, prediction B a perfect
    // span with wrong labels.
    add("e09", "I got the blood test now and feel fine.",
        {{"InfoGive", "Diagnostics", "the blood test"}},
        {{"InfoGive", "Diagnostics", "blood test now"}, {"Emotion", "Fear", "the blood test"}});

    // e10: over-extraction - a second prediction with no gold counterpart.
    add("e10", "Your new medication dose is 20mg once daily.",
        {{"InfoGive", "Medication", "new medication dose"}},
        {{"InfoGive", "Medication", "new medication dose"}, {"Emotion", "Fear", "once daily"}});

    // e11: one gold annotation missed entirely.
    add("e11", "We will order the chest X-ray and discuss anxiety support.",
        {{"InfoGive", "Diagnostics", "order the chest X-ray"},
         {"Emotion", "Fear", "anxiety support"}},
        {{"InfoGive", "Diagnostics", "order the chest X-ray"}});

    // e12: out-of-inventory code with matching sub-code and span.
    add("e12", "The pharmacy will text you when the refill is ready.",
        {{"InfoGive", "Medication", "refill is ready"}},
        {{"Pharmacy", "Medication", "refill is ready"}});

    return f;
}

inline void write_fixture_files(const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream out(dir + "/inventory.tsv");
        out << inventory_text();
    }
    fixture f = corpus();
    {
        std::ofstream out(dir + "/gold.jsonl");
        for (const auto& g : f.golds) {
            eppc::json j;
            j["example_id"] = g.example_id;
            j["context"] = g.context;
            j["sentence"] = g.sentence;
            j["results"] = eppc::json::array();
            for (const auto& ann : g.annotations)
                j["results"].push_back({{"Code", ann.code},
                                        {"Sub-code", ann.sub_code},
                                        {"Span", ann.span}});
            out << j.dump() << "\n";
        }
    }
    {
        std::ofstream out(dir + "/predictions.jsonl");
        for (const auto& p : f.preds) {
            eppc::json j;
            j["example_id"] = p.example_id;
            j["parse_status"] = eppc::to_string(p.status);
            j["results"] = eppc::json::array();
            for (const auto& ann : p.annotations)
                j["results"].push_back({{"Code", ann.code},
                                        {"Sub-code", ann.sub_code},
                                        {"Span", ann.span}});
            out << j.dump() << "\n";
        }
    }
}

// Hand-derived micro counts over the corpus above (12 scored predictions,
// 14 gold annotations).
struct expected_level {
    std::size_t tp, fp, fn;
};
inline expected_level expected_code() { return {7, 5, 7}; }
inline expected_level expected_sub_code() { return {9, 3, 5}; }
inline expected_level expected_pair() { return {7, 5, 7}; }
inline expected_level expected_span() { return {9, 3, 5}; }
inline expected_level expected_triplet() { return {5, 7, 9}; }
inline double expected_code_f1() { return 700.0 / 13.0; }
inline double expected_sub_code_f1() { return 900.0 / 13.0; }
inline double expected_pair_f1() { return 700.0 / 13.0; }
inline double expected_span_f1() { return 900.0 / 13.0; }
inline double expected_triplet_f1() { return 500.0 / 13.0; }

}  // namespace golden
