#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "eppc/core.hpp"
#include "eppc/ontology.hpp"
#include "eppc/text_match.hpp"

namespace eppc {

using json = nlohmann::ordered_json;

/// One predicted or gold (Code, Sub-code, Span) triplet. Raw model output
/// may violate the ontology, so construction never validates; validity is a
/// judgment made by validate() against an inventory.
struct annotation {
    std::string code;
    std::string sub_code;
    std::string span;

    bool operator==(const annotation& o) const = default;

    /// Exact-equality key after trimming surrounding whitespace.
    annotation trimmed() const { return {trim(code), trim(sub_code), trim(span)}; }

    std::pair<std::string, std::string> pair() const { return {trim(code), trim(sub_code)}; }
};

enum class parse_status { valid, recovered, invalid };

inline std::string to_string(parse_status s) {
    switch (s) {
        case parse_status::valid: return "valid";
        case parse_status::recovered: return "recovered";
        case parse_status::invalid: return "invalid";
    }
    return "invalid";
}

inline parse_status parse_status_from_string(const std::string& s) {
    if (s == "valid") return parse_status::valid;
    if (s == "recovered") return parse_status::recovered;
    if (s == "invalid") return parse_status::invalid;
    throw data_error("unknown parse_status '" + s + "'");
}

/// The per-example collection of annotations. Order is preserved from the
/// source so downstream tie-breaks stay deterministic. Invalid status
/// implies an empty annotation list.
struct prediction_set {
    std::string example_id;
    std::vector<annotation> annotations;
    parse_status status = parse_status::valid;

    bool operator==(const prediction_set& o) const = default;
};

struct gold_example {
    std::string example_id;
    std::string context;
    std::string sentence;
    std::vector<annotation> annotations;
};

struct validation_report {
    std::vector<std::string> unknown_codes;
    std::vector<std::string> unknown_sub_codes;
    std::vector<std::pair<std::string, std::string>> invalid_pairs;
    bool is_empty = false;

    bool clean() const {
        return unknown_codes.empty() && unknown_sub_codes.empty() && invalid_pairs.empty();
    }
};

/// Categorizes every annotation's labels against the inventory. Never
/// mutates the prediction: out-of-ontology labels stay in place and are
/// simply unmatched at scoring time.
inline validation_report validate(const prediction_set& pred, const label_inventory& inv) {
    validation_report rep;
    rep.is_empty = pred.annotations.empty();
    auto push_unique = [](std::vector<std::string>& v, const std::string& s) {
        if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
    };
    for (const auto& ann : pred.annotations) {
        std::string code = trim(ann.code);
        std::string sub = trim(ann.sub_code);
        if (!inv.has_code(code)) push_unique(rep.unknown_codes, code);
        if (inv.has_pair(code, sub)) continue;
        auto parents = inv.parents_of_sub_name(sub);
        if (parents.empty()) {
            push_unique(rep.unknown_sub_codes, sub);
        } else {
            auto p = std::make_pair(code, sub);
            if (std::find(rep.invalid_pairs.begin(), rep.invalid_pairs.end(), p) ==
                rep.invalid_pairs.end())
                rep.invalid_pairs.push_back(p);
        }
    }
    return rep;
}

/// Keeps the first occurrence of each exact (code, sub-code, span) triplet,
/// compared after trimming surrounding whitespace. Order is otherwise
/// preserved. Idempotent.
inline prediction_set dedup(const prediction_set& pred) {
    prediction_set out;
    out.example_id = pred.example_id;
    out.status = pred.status;
    std::vector<annotation> seen;
    for (const auto& ann : pred.annotations) {
        annotation key = ann.trimmed();
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
        seen.push_back(key);
        out.annotations.push_back(ann);
    }
    return out;
}

namespace detail {

inline json annotation_to_json(const annotation& ann) {
    json j;
    j["Code"] = ann.code;
    j["Sub-code"] = ann.sub_code;
    j["Span"] = ann.span;
    return j;
}

// Accepted spellings of the sub-code key, canonicalized to "Sub-code".
inline const json* find_sub_code_field(const json& obj) {
    for (const char* key : {"Sub-code", "Subcode", "sub_code"}) {
        auto it = obj.find(key);
        if (it != obj.end()) return &*it;
    }
    return nullptr;
}

/// Strict interpretation of one results entry; throws on any deviation.
inline annotation annotation_from_json(const json& obj) {
    if (!obj.is_object()) throw data_error("results entry is not an object");
    auto code = obj.find("Code");
    auto span = obj.find("Span");
    const json* sub = find_sub_code_field(obj);
    if (code == obj.end() || sub == nullptr || span == obj.end())
        throw data_error("results entry is missing Code, Sub-code, or Span");
    if (!code->is_string() || !sub->is_string() || !span->is_string())
        throw data_error("results entry fields must be strings");
    return annotation{code->get<std::string>(), sub->get<std::string>(),
                      span->get<std::string>()};
}

}  // namespace detail

/// Canonical JSON document for a prediction: {"example_id": ..., "results":
/// [...]} with the example_id omitted when empty. Serializing an invalid
/// prediction is a contract violation.
inline std::string serialize(const prediction_set& pred) {
    if (pred.status == parse_status::invalid)
        throw std::logic_error("serialize: prediction has invalid parse status");
    json j;
    if (!pred.example_id.empty()) j["example_id"] = pred.example_id;
    j["results"] = json::array();
    for (const auto& ann : pred.annotations) j["results"].push_back(detail::annotation_to_json(ann));
    return j.dump();
}

/// Strict inverse of serialize: the text must be a JSON object with a
/// results array of fully formed annotation objects. Lenient reading of
/// messy model output lives in the recovery module, not here.
inline prediction_set deserialize(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw data_error(std::string("deserialize: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw data_error("deserialize: document is not a JSON object");
    auto results = j.find("results");
    if (results == j.end()) throw data_error("deserialize: missing 'results' field");
    if (!results->is_array()) throw data_error("deserialize: 'results' is not an array");
    prediction_set pred;
    if (j.contains("example_id") && j["example_id"].is_string())
        pred.example_id = j["example_id"].get<std::string>();
    for (const auto& entry : *results) pred.annotations.push_back(detail::annotation_from_json(entry));
    pred.status = parse_status::valid;
    return pred;
}

}  // namespace eppc
