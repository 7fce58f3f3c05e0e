#pragma once

#include <optional>
#include <string>

#include "eppc/annotation.hpp"

namespace eppc {

enum class recovery_route { direct, fence_stripped, bracket_recovered, failed };

inline std::string to_string(recovery_route r) {
    switch (r) {
        case recovery_route::direct: return "direct";
        case recovery_route::fence_stripped: return "fence_stripped";
        case recovery_route::bracket_recovered: return "bracket_recovered";
        case recovery_route::failed: return "failed";
    }
    return "failed";
}

struct recovery_outcome {
    prediction_set prediction;
    recovery_route route = recovery_route::failed;
    std::size_t dropped_entries = 0;  // malformed results entries skipped individually
};

namespace detail {

/// Content of the first complete ``` fenced block, tolerating a language
/// tag after the opening marker and trailing prose after the closing one.
inline std::optional<std::string> strip_fenced_block(const std::string& text) {
    std::size_t open = text.find("```");
    if (open == std::string::npos) return std::nullopt;
    std::size_t body = open + 3;
    // Skip a language tag such as "json" up to the end of the marker line.
    std::size_t eol = text.find('\n', body);
    if (eol == std::string::npos) return std::nullopt;
    std::string tag = trim(text.substr(body, eol - body));
    bool tag_ok = tag.empty();
    if (!tag_ok) {
        tag_ok = true;
        for (char c : tag)
            if (!std::isalnum(static_cast<unsigned char>(c))) tag_ok = false;
    }
    std::size_t content_begin = tag_ok ? eol + 1 : body;
    std::size_t close = text.find("```", content_begin);
    if (close == std::string::npos) return std::nullopt;
    return text.substr(content_begin, close - content_begin);
}

/// First balanced top-level bracket span starting at the first occurrence of
/// `open_ch`. Balance counting ignores brackets inside JSON string literals.
inline std::optional<std::string> balanced_span(const std::string& text, char open_ch,
                                                char close_ch) {
    std::size_t start = text.find(open_ch);
    if (start == std::string::npos) return std::nullopt;
    int depth = 0;
    bool in_string = false, escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
        char c = text[i];
        if (in_string) {
            if (escaped)
                escaped = false;
            else if (c == '\\')
                escaped = true;
            else if (c == '"')
                in_string = false;
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == open_ch) {
            ++depth;
        } else if (c == close_ch) {
            --depth;
            if (depth == 0) return text.substr(start, i - start + 1);
        }
    }
    return std::nullopt;
}

/// Lenient interpretation of a parsed JSON document as a prediction. The
/// document must be an object with a results array (or, recovery-only, a
/// bare top-level array standing in for the results list); malformed
/// entries are dropped individually and counted rather than failing the
/// sibling entries.
inline bool interpret_document(const json& doc, prediction_set& out, std::size_t& dropped,
                               bool allow_bare_array) {
    const json* results = nullptr;
    if (doc.is_object()) {
        auto it = doc.find("results");
        if (it == doc.end() || !it->is_array()) return false;
        results = &*it;
        if (doc.contains("example_id") && doc["example_id"].is_string())
            out.example_id = doc["example_id"].get<std::string>();
    } else if (doc.is_array() && allow_bare_array) {
        results = &doc;
    } else {
        return false;
    }
    for (const auto& entry : *results) {
        try {
            out.annotations.push_back(annotation_from_json(entry));
        } catch (const data_error&) {
            ++dropped;
        }
    }
    return true;
}

inline bool try_parse_stage(const std::string& text, prediction_set& out, std::size_t& dropped,
                            bool allow_bare_array = false) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception&) {
        return false;
    }
    prediction_set candidate;
    candidate.example_id = out.example_id;
    std::size_t candidate_dropped = 0;
    if (!interpret_document(doc, candidate, candidate_dropped, allow_bare_array)) return false;
    if (candidate.example_id.empty()) candidate.example_id = out.example_id;
    out = std::move(candidate);
    dropped = candidate_dropped;
    return true;
}

}  // namespace detail

/// Deterministic recovery of a structured prediction from raw model text.
/// Pipeline: strip one outermost fenced block if present, try a strict
/// parse, then retry on the first balanced top-level object (or array)
/// span. Failure is a value: the outcome carries an invalid, empty
/// prediction and never throws.
inline recovery_outcome recover(const std::string& raw, const std::string& example_id) {
    recovery_outcome out;
    out.prediction.example_id = example_id;

    auto fenced = detail::strip_fenced_block(raw);
    const std::string& working = fenced ? *fenced : raw;

    prediction_set parsed;
    parsed.example_id = example_id;
    std::size_t dropped = 0;
    if (detail::try_parse_stage(trim(working), parsed, dropped)) {
        out.prediction = std::move(parsed);
        out.prediction.example_id = example_id;
        out.prediction.status = fenced ? parse_status::recovered : parse_status::valid;
        out.route = fenced ? recovery_route::fence_stripped : recovery_route::direct;
        out.dropped_entries = dropped;
        return out;
    }

    // A bare array counts as the results list only when it is the outermost
    // structure, not an array nested inside some other object.
    std::size_t first_brace = working.find('{');
    std::size_t first_bracket = working.find('[');
    bool array_is_outermost =
        first_bracket != std::string::npos &&
        (first_brace == std::string::npos || first_bracket < first_brace);

    for (auto [open_ch, close_ch] : {std::pair{'{', '}'}, std::pair{'[', ']'}}) {
        if (open_ch == '[' && !array_is_outermost) continue;
        auto span = detail::balanced_span(working, open_ch, close_ch);
        if (!span) continue;
        if (detail::try_parse_stage(*span, parsed, dropped, open_ch == '[')) {
            out.prediction = std::move(parsed);
            out.prediction.example_id = example_id;
            out.prediction.status = parse_status::recovered;
            out.route = recovery_route::bracket_recovered;
            out.dropped_entries = dropped;
            return out;
        }
    }

    out.prediction.annotations.clear();
    out.prediction.status = parse_status::invalid;
    out.route = recovery_route::failed;
    return out;
}

}  // namespace eppc
