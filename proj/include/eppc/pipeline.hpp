#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "eppc/annotation.hpp"
#include "eppc/gateway.hpp"
#include "eppc/io.hpp"
#include "eppc/metrics.hpp"
#include "eppc/ontology.hpp"
#include "eppc/ot.hpp"
#include "eppc/recovery.hpp"
#include "eppc/refine.hpp"

namespace eppc {

inline constexpr const char* version_string = "0.1.0";

// ---------------------------------------------------------------------------
// Corpus statistics
// ---------------------------------------------------------------------------

struct corpus_statistics {
    std::size_t examples = 0;
    std::size_t annotations = 0;
    double annotations_per_example_mean = 0.0;
    double annotations_per_example_median = 0.0;
    double span_tokens_mean = 0.0;
    double span_tokens_median = 0.0;
    double span_tokens_q1 = 0.0;
    double span_tokens_q3 = 0.0;
    std::size_t observed_pairs = 0;
    std::vector<std::pair<std::string, std::size_t>> code_counts;      // inventory order
    std::vector<std::pair<std::string, std::size_t>> sub_code_counts;  // "code::sub", inventory order
};

namespace detail {

inline double median_of(std::vector<double> xs) {
    if (xs.empty()) return 0.0;
    std::sort(xs.begin(), xs.end());
    std::size_t n = xs.size();
    if (n % 2 == 1) return xs[n / 2];
    return (xs[n / 2 - 1] + xs[n / 2]) / 2.0;
}

// Quartiles as medians of the lower/upper halves, excluding the middle
// element for odd-length samples.
inline std::pair<double, double> quartiles_of(std::vector<double> xs) {
    if (xs.empty()) return {0.0, 0.0};
    std::sort(xs.begin(), xs.end());
    std::size_t n = xs.size();
    std::vector<double> lower(xs.begin(), xs.begin() + n / 2);
    std::vector<double> upper(xs.begin() + (n + 1) / 2, xs.end());
    return {median_of(lower), median_of(upper)};
}

}  // namespace detail

inline corpus_statistics corpus_stats(const std::vector<gold_example>& golds,
                                      const label_inventory& inv) {
    corpus_statistics s;
    s.examples = golds.size();
    std::vector<double> per_example, span_tokens;
    std::map<std::string, std::size_t> code_freq;
    std::map<std::string, std::size_t> sub_freq;
    std::set<std::pair<std::string, std::string>> pairs;
    for (const auto& g : golds) {
        per_example.push_back(static_cast<double>(g.annotations.size()));
        for (const auto& ann : g.annotations) {
            if (!inv.has_pair(ann.code, ann.sub_code))
                throw data_error("corpus_stats: gold example '" + g.example_id +
                                 "' uses label pair outside the inventory");
            s.annotations += 1;
            code_freq[trim(ann.code)] += 1;
            sub_freq[trim(ann.code) + "::" + trim(ann.sub_code)] += 1;
            pairs.insert(ann.pair());
            span_tokens.push_back(static_cast<double>(tokenize(ann.span).size()));
        }
    }
    s.observed_pairs = pairs.size();
    if (!per_example.empty()) {
        double total = 0.0;
        for (double v : per_example) total += v;
        s.annotations_per_example_mean = total / static_cast<double>(per_example.size());
        s.annotations_per_example_median = detail::median_of(per_example);
    }
    if (!span_tokens.empty()) {
        double total = 0.0;
        for (double v : span_tokens) total += v;
        s.span_tokens_mean = total / static_cast<double>(span_tokens.size());
        s.span_tokens_median = detail::median_of(span_tokens);
        auto [q1, q3] = detail::quartiles_of(span_tokens);
        s.span_tokens_q1 = q1;
        s.span_tokens_q3 = q3;
    }
    for (const auto& code : inv.codes()) {
        auto it = code_freq.find(code);
        s.code_counts.emplace_back(code, it == code_freq.end() ? 0 : it->second);
    }
    for (const auto& sc : inv.sub_codes()) {
        std::string key = sc.code + "::" + sc.name;
        auto it = sub_freq.find(key);
        s.sub_code_counts.emplace_back(key, it == sub_freq.end() ? 0 : it->second);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Preference pairs
// ---------------------------------------------------------------------------

enum class corruption_kind { deletion, substitution, span_perturbation };

inline std::string to_string(corruption_kind k) {
    switch (k) {
        case corruption_kind::deletion: return "deletion";
        case corruption_kind::substitution: return "substitution";
        case corruption_kind::span_perturbation: return "span_perturbation";
    }
    return "deletion";
}

struct preference_pair {
    std::string example_id;
    std::string context;
    std::string chosen;    // canonical serialized gold annotation set
    std::string rejected;  // serialized corrupted set
    corruption_kind kind = corruption_kind::deletion;
};

namespace detail {

// Engine-stable uniform draw in [0, n); avoids std::uniform_int_distribution
// whose mapping is implementation-defined.
inline std::size_t draw_index(std::mt19937& rng, std::size_t n) {
    return static_cast<std::size_t>(rng()) % n;
}

inline std::string serialize_results_only(const std::vector<annotation>& anns) {
    prediction_set tmp;
    tmp.annotations = anns;
    return serialize(tmp);
}

// Removes the first or last token of a multi-token span, staying within the
// span's own character layout so internal spacing is preserved.
inline std::optional<std::string> shrink_span(const std::string& span, bool drop_first) {
    token_sequence toks = tokenize(span);
    if (toks.size() < 2) return std::nullopt;
    if (drop_first)
        return span.substr(toks.begin_offsets[1], toks.end_offsets.back() - toks.begin_offsets[1]);
    return span.substr(toks.begin_offsets.front(),
                       toks.end_offsets[toks.size() - 2] - toks.begin_offsets.front());
}

// Extends a single-token span with the adjacent context token; the token
// following the first occurrence wins, falling back to the preceding one.
inline std::optional<std::string> extend_span(const std::string& span, const std::string& context) {
    token_sequence span_toks = tokenize(span);
    if (span_toks.size() != 1) return std::nullopt;
    token_sequence ctx = tokenize(context);
    for (std::size_t i = 0; i < ctx.size(); ++i) {
        if (ctx.tokens[i] != span_toks.tokens[0]) continue;
        if (i + 1 < ctx.size())
            return context.substr(ctx.begin_offsets[i], ctx.end_offsets[i + 1] - ctx.begin_offsets[i]);
        if (i > 0)
            return context.substr(ctx.begin_offsets[i - 1],
                                  ctx.end_offsets[i] - ctx.begin_offsets[i - 1]);
        return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace detail

/// One synthetic preference pair per gold example: the chosen side is the
/// serialized gold set; the rejected side applies one of three corruptions
/// drawn uniformly (an infeasible draw is redrawn). Deterministic under a
/// fixed seed.
inline std::vector<preference_pair> generate_preference_pairs(
    const std::vector<gold_example>& golds, const label_inventory& inv, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::vector<preference_pair> out;
    out.reserve(golds.size());
    for (const auto& g : golds) {
        if (g.annotations.empty())
            throw data_error("preference pairs: example '" + g.example_id +
                             "' has no annotations");
        preference_pair pair;
        pair.example_id = g.example_id;
        pair.context = g.context;
        pair.chosen = detail::serialize_results_only(g.annotations);

        bool done = false;
        for (int attempt = 0; attempt < 100 && !done; ++attempt) {
            corruption_kind kind = static_cast<corruption_kind>(detail::draw_index(rng, 3));
            std::vector<annotation> corrupted = g.annotations;
            std::size_t idx = detail::draw_index(rng, corrupted.size());
            if (kind == corruption_kind::deletion) {
                corrupted.erase(corrupted.begin() + static_cast<std::ptrdiff_t>(idx));
            } else if (kind == corruption_kind::substitution) {
                const annotation& target = corrupted[idx];
                auto siblings = inv.sub_names_under(trim(target.code));
                siblings.erase(std::remove(siblings.begin(), siblings.end(),
                                           trim(target.sub_code)),
                               siblings.end());
                if (siblings.empty()) continue;  // parent has one sub-code: redraw the kind
                corrupted[idx].sub_code = siblings[detail::draw_index(rng, siblings.size())];
            } else {
                token_sequence toks = tokenize(corrupted[idx].span);
                std::optional<std::string> new_span;
                if (toks.size() >= 2) {
                    bool drop_first = detail::draw_index(rng, 2) == 0;
                    new_span = detail::shrink_span(corrupted[idx].span, drop_first);
                } else if (toks.size() == 1) {
                    new_span = detail::extend_span(corrupted[idx].span, g.context);
                }
                if (!new_span) continue;  // no usable perturbation: redraw the kind
                corrupted[idx].span = *new_span;
            }
            std::string rejected = detail::serialize_results_only(corrupted);
            if (rejected == pair.chosen) continue;
            pair.rejected = std::move(rejected);
            pair.kind = kind;
            done = true;
        }
        if (!done)
            throw data_error("preference pairs: no feasible corruption for example '" +
                             g.example_id + "'");
        out.push_back(std::move(pair));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint weight averaging
// ---------------------------------------------------------------------------

/// Parameter-wise arithmetic mean of K named vector maps. All maps must
/// share the same key set and per-key dimensions.
inline io::named_vector_map average_named_vectors(const std::vector<io::named_vector_map>& maps) {
    if (maps.empty()) throw std::invalid_argument("average_named_vectors: no maps");
    const auto& first = maps.front();
    for (std::size_t k = 1; k < maps.size(); ++k) {
        if (maps[k].entries.size() != first.entries.size())
            throw data_error("average_named_vectors: key-set size mismatch in map " +
                             std::to_string(k));
        for (const auto& [name, values] : first.entries) {
            auto it = maps[k].entries.find(name);
            if (it == maps[k].entries.end())
                throw data_error("average_named_vectors: map " + std::to_string(k) +
                                 " is missing key '" + name + "'");
            if (it->second.size() != values.size())
                throw data_error("average_named_vectors: dimension mismatch for key '" + name +
                                 "'");
        }
    }
    io::named_vector_map out;
    const double k_inv = 1.0 / static_cast<double>(maps.size());
    for (const auto& [name, values] : first.entries) {
        std::vector<double> mean(values.size(), 0.0);
        for (const auto& m : maps) {
            const auto& v = m.entries.at(name);
            for (std::size_t i = 0; i < v.size(); ++i) mean[i] += v[i];
        }
        for (double& v : mean) v *= k_inv;
        out.entries.emplace(name, std::move(mean));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline configuration
// ---------------------------------------------------------------------------

struct pipeline_paths {
    std::string inventory;
    std::string gold;
    std::string predictions;
    std::string raw_outputs;
    std::string representations;
    std::string embeddings;
    std::string contexts;  // gold-shaped file consumed for contexts only
    std::string sc_predictions;
    std::string cot_predictions;
    std::string mock_script;
    std::vector<std::string> samples;      // per-sample prediction files
    std::vector<std::string> seeds;        // per-seed prediction files
    std::vector<std::string> checkpoints;  // vector-map files to average
    std::map<std::string, std::string> candidates;  // source tag -> predictions file
    std::string output_dir = "out";
};

struct pipeline_config {
    pipeline_paths paths;
    alignment_config alignment;
    refinement_config refinement;
    gateway_config gateway;
    std::string gateway_mode = "http";  // http | mock
    std::string strategy = "cot-sr";
    double span_threshold = 0.6;
    bool taxonomy = false;
    std::size_t rare_cutoff = 10;  // pair-frequency ceiling for rare-label omission
    double sft_loss = 0.0;
    std::string prior = "identity";  // identity | semantic
    std::uint32_t seed = 0;
    std::size_t workers = 4;
};

namespace detail {

inline void read_if(const json& j, const char* key, std::string& out) {
    if (j.contains(key) && j[key].is_string()) out = j[key].get<std::string>();
}
inline void read_if(const json& j, const char* key, double& out) {
    if (j.contains(key) && j[key].is_number()) out = j[key].get<double>();
}
inline void read_if(const json& j, const char* key, std::size_t& out) {
    if (j.contains(key) && j[key].is_number_unsigned()) out = j[key].get<std::size_t>();
}
inline void read_if(const json& j, const char* key, std::uint32_t& out) {
    if (j.contains(key) && j[key].is_number_unsigned()) out = j[key].get<std::uint32_t>();
}
inline void read_if(const json& j, const char* key, bool& out) {
    if (j.contains(key) && j[key].is_boolean()) out = j[key].get<bool>();
}
inline void read_if(const json& j, const char* key, std::vector<std::string>& out) {
    if (j.contains(key) && j[key].is_array()) {
        out.clear();
        for (const auto& v : j[key]) out.push_back(v.get<std::string>());
    }
}

}  // namespace detail

inline pipeline_config parse_pipeline_config(const json& j) {
    pipeline_config cfg;
    if (j.contains("paths")) {
        const json& p = j["paths"];
        detail::read_if(p, "inventory", cfg.paths.inventory);
        detail::read_if(p, "gold", cfg.paths.gold);
        detail::read_if(p, "predictions", cfg.paths.predictions);
        detail::read_if(p, "raw_outputs", cfg.paths.raw_outputs);
        detail::read_if(p, "representations", cfg.paths.representations);
        detail::read_if(p, "embeddings", cfg.paths.embeddings);
        detail::read_if(p, "contexts", cfg.paths.contexts);
        detail::read_if(p, "sc_predictions", cfg.paths.sc_predictions);
        detail::read_if(p, "cot_predictions", cfg.paths.cot_predictions);
        detail::read_if(p, "mock_script", cfg.paths.mock_script);
        detail::read_if(p, "samples", cfg.paths.samples);
        detail::read_if(p, "seeds", cfg.paths.seeds);
        detail::read_if(p, "checkpoints", cfg.paths.checkpoints);
        detail::read_if(p, "output_dir", cfg.paths.output_dir);
        if (p.contains("candidates") && p["candidates"].is_object())
            for (const auto& [k, v] : p["candidates"].items())
                cfg.paths.candidates[k] = v.get<std::string>();
    }
    if (j.contains("alignment")) {
        const json& a = j["alignment"];
        detail::read_if(a, "tau", cfg.alignment.tau);
        detail::read_if(a, "sinkhorn_reg", cfg.alignment.sinkhorn_reg);
        detail::read_if(a, "eps0", cfg.alignment.eps0);
        detail::read_if(a, "lambda_ont", cfg.alignment.lambda_ont);
        detail::read_if(a, "max_iters", cfg.alignment.max_iters);
        detail::read_if(a, "tolerance", cfg.alignment.tolerance);
        detail::read_if(a, "min_fill_fraction", cfg.alignment.min_fill_fraction);
    }
    if (j.contains("refinement")) {
        const json& r = j["refinement"];
        detail::read_if(r, "sc_samples", cfg.refinement.sc_samples);
        detail::read_if(r, "sc_temperature", cfg.refinement.sc_temperature);
        detail::read_if(r, "refine_samples", cfg.refinement.refine_samples);
        detail::read_if(r, "refine_temperature", cfg.refinement.refine_temperature);
        detail::read_if(r, "span_check_threshold", cfg.refinement.span_check_threshold);
        detail::read_if(r, "hybrid_threshold", cfg.refinement.hybrid_threshold);
        detail::read_if(r, "cgra_min_triplets", cfg.refinement.cgra_min_triplets);
        detail::read_if(r, "cgra_samples", cfg.refinement.cgra_samples);
        detail::read_if(r, "cgra_temperature", cfg.refinement.cgra_temperature);
        detail::read_if(r, "snap_threshold", cfg.refinement.snap_threshold);
        detail::read_if(r, "snap_margin", cfg.refinement.snap_margin);
        detail::read_if(r, "merge_threshold", cfg.refinement.merge_threshold);
        detail::read_if(r, "merge_min_support", cfg.refinement.merge_min_support);
        detail::read_if(r, "w_agree", cfg.refinement.w_agree);
        detail::read_if(r, "w_verbatim", cfg.refinement.w_verbatim);
        detail::read_if(r, "w_snap", cfg.refinement.w_snap);
        detail::read_if(r, "accept_threshold", cfg.refinement.accept_threshold);
        detail::read_if(r, "fuzzy_label_threshold", cfg.refinement.fuzzy_label_threshold);
        detail::read_if(r, "max_tokens", cfg.refinement.max_tokens);
        detail::read_if(r, "system_prompt", cfg.refinement.system_prompt);
        detail::read_if(r, "generate_template", cfg.refinement.generate_template);
        detail::read_if(r, "verify_template", cfg.refinement.verify_template);
        detail::read_if(r, "refine_template", cfg.refinement.refine_template);
    }
    if (j.contains("gateway")) {
        const json& g = j["gateway"];
        detail::read_if(g, "endpoint", cfg.gateway.endpoint);
        detail::read_if(g, "model", cfg.gateway.model);
        detail::read_if(g, "api_key_env", cfg.gateway.api_key_env);
        detail::read_if(g, "concurrency_limit", cfg.gateway.concurrency_limit);
        detail::read_if(g, "timeout_seconds", cfg.gateway.timeout_seconds);
        detail::read_if(g, "max_attempts", cfg.gateway.max_attempts);
        detail::read_if(g, "backoff_base_seconds", cfg.gateway.backoff_base_seconds);
        detail::read_if(g, "transcript_path", cfg.gateway.transcript_path);
        detail::read_if(g, "mode", cfg.gateway_mode);
    }
    detail::read_if(j, "strategy", cfg.strategy);
    detail::read_if(j, "span_threshold", cfg.span_threshold);
    detail::read_if(j, "taxonomy", cfg.taxonomy);
    detail::read_if(j, "rare_cutoff", cfg.rare_cutoff);
    detail::read_if(j, "sft_loss", cfg.sft_loss);
    detail::read_if(j, "prior", cfg.prior);
    detail::read_if(j, "seed", cfg.seed);
    detail::read_if(j, "workers", cfg.workers);
    return cfg;
}

inline pipeline_config load_pipeline_config(const std::string& path) {
    json j;
    try {
        j = json::parse(io::read_text_file(path));
    } catch (const json::exception& e) {
        throw data_error("config '" + path + "': " + e.what());
    }
    return parse_pipeline_config(j);
}

/// Effective configuration as JSON; hashed into the run manifest so every
/// output file is attributable to the exact thresholds that produced it.
inline json pipeline_config_to_json(const pipeline_config& cfg) {
    json j;
    json& p = j["paths"];
    p["inventory"] = cfg.paths.inventory;
    p["gold"] = cfg.paths.gold;
    p["predictions"] = cfg.paths.predictions;
    p["raw_outputs"] = cfg.paths.raw_outputs;
    p["representations"] = cfg.paths.representations;
    p["embeddings"] = cfg.paths.embeddings;
    p["contexts"] = cfg.paths.contexts;
    p["sc_predictions"] = cfg.paths.sc_predictions;
    p["cot_predictions"] = cfg.paths.cot_predictions;
    p["mock_script"] = cfg.paths.mock_script;
    p["samples"] = cfg.paths.samples;
    p["seeds"] = cfg.paths.seeds;
    p["checkpoints"] = cfg.paths.checkpoints;
    p["candidates"] = cfg.paths.candidates;
    p["output_dir"] = cfg.paths.output_dir;
    json& a = j["alignment"];
    a["tau"] = cfg.alignment.tau;
    a["sinkhorn_reg"] = cfg.alignment.sinkhorn_reg;
    a["eps0"] = cfg.alignment.eps0;
    a["lambda_ont"] = cfg.alignment.lambda_ont;
    a["max_iters"] = cfg.alignment.max_iters;
    a["tolerance"] = cfg.alignment.tolerance;
    a["min_fill_fraction"] = cfg.alignment.min_fill_fraction;
    json& r = j["refinement"];
    r["sc_samples"] = cfg.refinement.sc_samples;
    r["sc_temperature"] = cfg.refinement.sc_temperature;
    r["refine_samples"] = cfg.refinement.refine_samples;
    r["refine_temperature"] = cfg.refinement.refine_temperature;
    r["span_check_threshold"] = cfg.refinement.span_check_threshold;
    r["hybrid_threshold"] = cfg.refinement.hybrid_threshold;
    r["cgra_min_triplets"] = cfg.refinement.cgra_min_triplets;
    r["cgra_samples"] = cfg.refinement.cgra_samples;
    r["cgra_temperature"] = cfg.refinement.cgra_temperature;
    r["snap_threshold"] = cfg.refinement.snap_threshold;
    r["snap_margin"] = cfg.refinement.snap_margin;
    r["merge_threshold"] = cfg.refinement.merge_threshold;
    r["merge_min_support"] = cfg.refinement.merge_min_support;
    r["w_agree"] = cfg.refinement.w_agree;
    r["w_verbatim"] = cfg.refinement.w_verbatim;
    r["w_snap"] = cfg.refinement.w_snap;
    r["accept_threshold"] = cfg.refinement.accept_threshold;
    r["fuzzy_label_threshold"] = cfg.refinement.fuzzy_label_threshold;
    r["max_tokens"] = cfg.refinement.max_tokens;
    r["system_prompt"] = cfg.refinement.system_prompt;
    r["generate_template"] = cfg.refinement.generate_template;
    r["verify_template"] = cfg.refinement.verify_template;
    r["refine_template"] = cfg.refinement.refine_template;
    json& g = j["gateway"];
    g["endpoint"] = cfg.gateway.endpoint;
    g["model"] = cfg.gateway.model;
    g["api_key_env"] = cfg.gateway.api_key_env;
    g["concurrency_limit"] = cfg.gateway.concurrency_limit;
    g["timeout_seconds"] = cfg.gateway.timeout_seconds;
    g["max_attempts"] = cfg.gateway.max_attempts;
    g["backoff_base_seconds"] = cfg.gateway.backoff_base_seconds;
    g["transcript_path"] = cfg.gateway.transcript_path;
    g["mode"] = cfg.gateway_mode;
    j["strategy"] = cfg.strategy;
    j["span_threshold"] = cfg.span_threshold;
    j["taxonomy"] = cfg.taxonomy;
    j["rare_cutoff"] = cfg.rare_cutoff;
    j["sft_loss"] = cfg.sft_loss;
    j["prior"] = cfg.prior;
    j["seed"] = cfg.seed;
    j["workers"] = cfg.workers;
    return j;
}

}  // namespace eppc
