#pragma once

#include <filesystem>
#include <iomanip>
#include <sstream>

#include "eppc/http_transport.hpp"
#include "eppc/pipeline.hpp"

namespace eppc {

namespace detail {

inline std::uint64_t fnv1a_hash(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream ss;
    ss << std::hex << std::setfill('0') << std::setw(16) << v;
    return ss.str();
}

inline std::string iso_timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

inline std::string fmt_pct(double v) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(4) << v;
    return ss.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

inline json metrics_to_json(const metrics_report& rep) {
    json j;
    auto level = [&](const level_counts& lc) {
        json l;
        l["tp"] = lc.tp;
        l["fp"] = lc.fp;
        l["fn"] = lc.fn;
        l["precision"] = lc.precision;
        l["recall"] = lc.recall;
        l["f1"] = lc.f1;
        return l;
    };
    j["code"] = level(rep.code);
    j["sub_code"] = level(rep.sub_code);
    j["span"] = level(rep.span);
    j["code_sub_code"] = level(rep.pair);
    j["triplet"] = level(rep.triplet);
    j["counts"]["examples"] = rep.examples;
    j["counts"]["predictions"] = rep.predictions;
    j["counts"]["gold_annotations"] = rep.gold_annotations;
    j["counts"]["invalid_parse_examples"] = rep.invalid_parse_examples;
    j["span_threshold"] = rep.span_threshold;
    return j;
}

inline std::string metrics_to_csv(const metrics_report& rep) {
    std::ostringstream ss;
    ss << "level,tp,fp,fn,precision,recall,f1\n";
    auto row = [&](const char* name, const level_counts& lc) {
        ss << name << "," << lc.tp << "," << lc.fp << "," << lc.fn << ","
           << detail::fmt_pct(lc.precision) << "," << detail::fmt_pct(lc.recall) << ","
           << detail::fmt_pct(lc.f1) << "\n";
    };
    row("code", rep.code);
    row("sub_code", rep.sub_code);
    row("span", rep.span);
    row("code_sub_code", rep.pair);
    row("triplet", rep.triplet);
    return ss.str();
}

inline json taxonomy_to_json(const error_taxonomy_report& rep) {
    json j;
    j["per_example"]["code_confusion"] = rep.code_confusion;
    j["per_example"]["sub_code_confusion"] = rep.sub_code_confusion;
    j["per_example"]["missing_annotation"] = rep.missing_annotation;
    j["per_example"]["over_extraction"] = rep.over_extraction;
    j["per_example"]["evidence_boundary_error"] = rep.evidence_boundary_error;
    j["per_example"]["malformed_json"] = rep.malformed_json;
    j["per_example"]["adjacent_label_confusion"] = rep.adjacent_label_confusion;
    j["per_prediction"]["invalid_ontology_label"] = rep.invalid_ontology_label;
    j["per_prediction"]["invalid_code_sub_pair"] = rep.invalid_code_sub_pair;
    j["per_prediction"]["parent_sub_code_mismatch"] = rep.parent_sub_code_mismatch;
    j["rare"]["rare_label_omission"] = rep.rare_label_omission;
    j["rare"]["rare_gold_instances"] = rep.rare_gold_instances;
    j["grounding"]["boundary_drift"] = rep.boundary_drift;
    j["grounding"]["wrong_evidence_phrase"] = rep.wrong_evidence_phrase;
    j["grounding"]["no_evidence_span"] = rep.no_evidence_span;
    j["per_code_f1"] = json::object();
    for (const auto& [code, lc] : rep.per_code) {
        j["per_code_f1"][code] = {{"tp", lc.tp},
                                  {"fp", lc.fp},
                                  {"fn", lc.fn},
                                  {"f1", lc.f1}};
    }
    j["counts"]["examples"] = rep.examples;
    j["counts"]["total_predictions"] = rep.total_predictions;
    j["counts"]["matched_pairs"] = rep.matched_pairs;
    return j;
}

inline std::string taxonomy_to_csv(const error_taxonomy_report& rep) {
    std::ostringstream ss;
    ss << "group,category,rate_percent\n";
    auto row = [&](const char* group, const char* name, double v) {
        ss << group << "," << name << "," << detail::fmt_pct(v) << "\n";
    };
    row("per_example", "code_confusion", rep.code_confusion);
    row("per_example", "sub_code_confusion", rep.sub_code_confusion);
    row("per_example", "missing_annotation", rep.missing_annotation);
    row("per_example", "over_extraction", rep.over_extraction);
    row("per_example", "evidence_boundary_error", rep.evidence_boundary_error);
    row("per_example", "malformed_json", rep.malformed_json);
    row("per_example", "adjacent_label_confusion", rep.adjacent_label_confusion);
    row("per_prediction", "invalid_ontology_label", rep.invalid_ontology_label);
    row("per_prediction", "invalid_code_sub_pair", rep.invalid_code_sub_pair);
    row("per_prediction", "parent_sub_code_mismatch", rep.parent_sub_code_mismatch);
    row("rare", "rare_label_omission", rep.rare_label_omission);
    row("grounding", "boundary_drift", rep.boundary_drift);
    row("grounding", "wrong_evidence_phrase", rep.wrong_evidence_phrase);
    row("grounding", "no_evidence_span", rep.no_evidence_span);
    for (const auto& [code, lc] : rep.per_code)
        ss << "per_code_f1," << code << "," << detail::fmt_pct(lc.f1) << "\n";
    return ss.str();
}

inline std::string diagnostics_to_csv(const schema_diagnostics& d) {
    std::ostringstream ss;
    ss << "diagnostic,rate_percent\n";
    ss << "invalid_json_rate," << detail::fmt_pct(d.invalid_json_rate) << "\n";
    ss << "invalid_label_rate," << detail::fmt_pct(d.invalid_label_rate) << "\n";
    ss << "empty_output_rate," << detail::fmt_pct(d.empty_output_rate) << "\n";
    return ss.str();
}

inline json diagnostics_to_json(const schema_diagnostics& d) {
    json j;
    j["invalid_json_rate"] = d.invalid_json_rate;
    j["invalid_label_rate"] = d.invalid_label_rate;
    j["empty_output_rate"] = d.empty_output_rate;
    j["outputs"] = d.outputs;
    j["annotations"] = d.annotations;
    return j;
}

inline json stats_to_json(const corpus_statistics& s) {
    json j;
    j["examples"] = s.examples;
    j["annotations"] = s.annotations;
    j["annotations_per_example"]["mean"] = s.annotations_per_example_mean;
    j["annotations_per_example"]["median"] = s.annotations_per_example_median;
    j["span_tokens"]["mean"] = s.span_tokens_mean;
    j["span_tokens"]["median"] = s.span_tokens_median;
    j["span_tokens"]["q1"] = s.span_tokens_q1;
    j["span_tokens"]["q3"] = s.span_tokens_q3;
    j["observed_pairs"] = s.observed_pairs;
    double denom = s.annotations ? static_cast<double>(s.annotations) : 1.0;
    j["code_counts"] = json::object();
    for (const auto& [code, count] : s.code_counts)
        j["code_counts"][code] = {{"count", count},
                                  {"percent", 100.0 * static_cast<double>(count) / denom}};
    j["sub_code_counts"] = json::object();
    for (const auto& [key, count] : s.sub_code_counts)
        j["sub_code_counts"][key] = {{"count", count},
                                     {"percent", 100.0 * static_cast<double>(count) / denom}};
    return j;
}

inline std::string stats_to_markdown(const corpus_statistics& s) {
    std::ostringstream ss;
    ss << "| Characteristic | Value |\n|---|---|\n";
    ss << "| Annotated examples | " << s.examples << " |\n";
    ss << "| Annotations | " << s.annotations << " |\n";
    ss << "| Annotations per example | " << detail::fmt_pct(s.annotations_per_example_mean)
       << " mean; " << detail::fmt_pct(s.annotations_per_example_median) << " median |\n";
    ss << "| Span token length | " << detail::fmt_pct(s.span_tokens_mean) << " mean; "
       << detail::fmt_pct(s.span_tokens_median) << " median; IQR "
       << detail::fmt_pct(s.span_tokens_q1) << "-" << detail::fmt_pct(s.span_tokens_q3) << " |\n";
    ss << "| Observed code/sub-code pairs | " << s.observed_pairs << " |\n";
    std::size_t annotations = s.annotations ? s.annotations : 1;
    ss << "\n| Code | Count | Share |\n|---|---|---|\n";
    for (const auto& [code, count] : s.code_counts)
        ss << "| " << code << " | " << count << " | "
           << detail::fmt_pct(100.0 * static_cast<double>(count) / static_cast<double>(annotations))
           << "% |\n";
    ss << "\n| Sub-code | Count | Share |\n|---|---|---|\n";
    for (const auto& [key, count] : s.sub_code_counts)
        ss << "| " << key << " | " << count << " | "
           << detail::fmt_pct(100.0 * static_cast<double>(count) / static_cast<double>(annotations))
           << "% |\n";
    return ss.str();
}

// ---------------------------------------------------------------------------
// Refinement driver
// ---------------------------------------------------------------------------

/// Per-example scripted generation turns parsed from a mock-script file:
/// {"example_id": ..., "turns": [["text", ...] | {"fail": true}, ...]}.
inline std::map<std::string, std::vector<scripted_client::turn>> load_mock_script(
    const std::string& path) {
    std::map<std::string, std::vector<scripted_client::turn>> out;
    io::for_each_jsonl(path, [&](const json& doc, std::size_t lineno) {
        std::string where = path + ":" + std::to_string(lineno);
        std::string id = io::require_string(doc, "example_id", where);
        auto it = doc.find("turns");
        if (it == doc.end() || !it->is_array())
            throw data_error(where + ": missing 'turns' array");
        std::vector<scripted_client::turn> turns;
        for (const auto& t : *it) {
            scripted_client::turn turn;
            if (t.is_array()) {
                for (const auto& s : t) turn.texts.push_back(s.get<std::string>());
            } else if (t.is_object() && t.value("fail", false)) {
                turn.fail = true;
            } else {
                throw data_error(where + ": turn must be a text array or {\"fail\": true}");
            }
            turns.push_back(std::move(turn));
        }
        out[id] = std::move(turns);
    });
    return out;
}

struct refined_example {
    prediction_set prediction;
    std::vector<std::string> provenance;
};

/// Builds the per-example generation client: a scripted replay in mock mode,
/// the shared HTTP gateway otherwise.
class client_factory {
public:
    virtual ~client_factory() = default;
    virtual std::unique_ptr<generation_client> make(const std::string& example_id) = 0;
};

class mock_client_factory : public client_factory {
public:
    explicit mock_client_factory(std::map<std::string, std::vector<scripted_client::turn>> turns)
        : turns_(std::move(turns)) {}

    std::unique_ptr<generation_client> make(const std::string& example_id) override {
        auto it = turns_.find(example_id);
        if (it == turns_.end())
            return std::make_unique<scripted_client>(std::vector<scripted_client::turn>{});
        return std::make_unique<scripted_client>(it->second);
    }

private:
    std::map<std::string, std::vector<scripted_client::turn>> turns_;
};

class gateway_client_factory : public client_factory {
public:
    explicit gateway_client_factory(std::shared_ptr<gateway> gw) : gw_(std::move(gw)) {}
    std::unique_ptr<generation_client> make(const std::string&) override {
        return std::make_unique<gateway_client>(gw_);
    }

private:
    std::shared_ptr<gateway> gw_;
};

namespace detail {

/// Runs fn over [0, n) on `workers` threads; outputs land at their input
/// index, so aggregation order never depends on scheduling.
template <typename Fn>
inline void parallel_for_ordered(std::size_t n, std::size_t workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::size_t count = std::min(workers, n);
    for (std::size_t w = 0; w < count; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                fn(i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

inline std::map<std::string, prediction_set> index_predictions(
    const std::vector<prediction_set>& preds, const std::string& what) {
    std::map<std::string, prediction_set> out;
    for (const auto& p : preds)
        if (!out.emplace(p.example_id, p).second)
            throw data_error(what + ": duplicate example_id '" + p.example_id + "'");
    return out;
}

inline prediction_set find_prediction(const std::map<std::string, prediction_set>& by_id,
                                      const std::string& example_id, const std::string& what) {
    auto it = by_id.find(example_id);
    if (it == by_id.end())
        throw data_error(what + ": no prediction for example '" + example_id + "'");
    return it->second;
}

}  // namespace detail

/// Applies one refinement strategy to every example, in parallel across
/// examples, with per-example provenance. Inputs beyond the context file are
/// prediction files keyed by example_id as each strategy requires.
inline std::vector<refined_example> run_refinement(const pipeline_config& cfg,
                                                   const std::vector<refine_input>& inputs,
                                                   client_factory& clients) {
    const std::string& strategy = cfg.strategy;
    std::map<std::string, prediction_set> greedy, sc, cot;
    std::vector<std::map<std::string, prediction_set>> sample_files, seed_files;
    std::vector<std::pair<std::string, std::map<std::string, prediction_set>>> candidate_files;
    std::optional<label_inventory> inventory;

    if (strategy == "hybrid" || strategy == "cgra")
        greedy = detail::index_predictions(io::load_predictions_file(cfg.paths.predictions),
                                           "predictions");
    if (strategy == "hybrid" || strategy == "selector")
        sc = detail::index_predictions(io::load_predictions_file(cfg.paths.sc_predictions),
                                       "sc_predictions");
    if (strategy == "selector")
        cot = detail::index_predictions(io::load_predictions_file(cfg.paths.cot_predictions),
                                        "cot_predictions");
    if (strategy == "self-consistency" && !cfg.paths.samples.empty())
        for (const auto& path : cfg.paths.samples)
            sample_files.push_back(
                detail::index_predictions(io::load_predictions_file(path), path));
    if (strategy == "seed-merge")
        for (const auto& path : cfg.paths.seeds)
            seed_files.push_back(detail::index_predictions(io::load_predictions_file(path), path));
    if (strategy == "rerank") {
        inventory = io::load_inventory_file(cfg.paths.inventory);
        for (const auto& [source, path] : cfg.paths.candidates)
            candidate_files.emplace_back(
                source, detail::index_predictions(io::load_predictions_file(path), path));
        if (candidate_files.empty()) throw data_error("rerank: no candidate files configured");
    }

    std::vector<refined_example> out(inputs.size());
    std::mutex error_mu;
    std::exception_ptr first_error;

    detail::parallel_for_ordered(inputs.size(), cfg.workers, [&](std::size_t i) {
        try {
            const refine_input& input = inputs[i];
            refined_example& result = out[i];
            std::vector<std::string>* prov = &result.provenance;
            if (strategy == "cot-sr") {
                auto client = clients.make(input.example_id);
                result.prediction = cot_sr(input, *client, cfg.refinement, prov);
            } else if (strategy == "self-consistency") {
                std::vector<prediction_set> samples;
                if (!sample_files.empty()) {
                    for (auto& file : sample_files)
                        samples.push_back(
                            detail::find_prediction(file, input.example_id, "samples"));
                } else {
                    auto client = clients.make(input.example_id);
                    auto texts = client->complete(
                        detail::build_messages(cfg.refinement, cfg.refinement.generate_template,
                                               input, ""),
                        cfg.refinement.sc_temperature, cfg.refinement.sc_samples,
                        cfg.refinement.max_tokens);
                    for (const auto& t : texts)
                        samples.push_back(detail::recover_sample(t, input.example_id));
                }
                result.prediction = self_consistency(samples, prov);
                result.prediction.example_id = input.example_id;
            } else if (strategy == "hybrid") {
                auto g = dedup(detail::find_prediction(greedy, input.example_id, "greedy"));
                auto s = dedup(detail::find_prediction(sc, input.example_id, "self-consistency"));
                result.prediction = hybrid_mild(g, s, cfg.refinement.hybrid_threshold, prov);
            } else if (strategy == "selector") {
                auto c = detail::find_prediction(cot, input.example_id, "cot");
                auto s = detail::find_prediction(sc, input.example_id, "self-consistency");
                result.prediction = selector(c, s, input.context, prov);
            } else if (strategy == "cgra") {
                auto g = detail::find_prediction(greedy, input.example_id, "greedy");
                auto client = clients.make(input.example_id);
                result.prediction = cgra(g, input.context, *client, cfg.refinement, prov);
            } else if (strategy == "seed-merge") {
                std::vector<prediction_set> seeds;
                for (auto& file : seed_files)
                    seeds.push_back(detail::find_prediction(file, input.example_id, "seeds"));
                result.prediction = seed_merge(seeds, cfg.refinement, prov);
                result.prediction.example_id = input.example_id;
            } else if (strategy == "rerank") {
                std::vector<candidate_set> cands;
                for (auto& [source, file] : candidate_files)
                    cands.push_back(
                        {source, detail::find_prediction(file, input.example_id, source)});
                result.prediction =
                    span_anchored_rerank(cands, *inventory, input.context, cfg.refinement, prov);
                result.prediction.example_id = input.example_id;
            } else {
                throw std::invalid_argument("unknown refinement strategy '" + strategy + "'");
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mu);
            if (!first_error) first_error = std::current_exception();
        }
    });
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

// ---------------------------------------------------------------------------
// Command dispatch
// ---------------------------------------------------------------------------

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int usage = 1;
inline constexpr int data = 2;
inline constexpr int service = 3;
}  // namespace exit_code

namespace detail {

inline void write_manifest(const pipeline_config& cfg, const std::string& command,
                           const json& config_json, const std::vector<std::string>& outputs) {
    json m;
    m["command"] = command;
    m["config_hash"] = hex64(fnv1a_hash(config_json.dump()));
    m["seed"] = cfg.seed;
    m["version"] = version_string;
    m["timestamp"] = iso_timestamp();
    m["outputs"] = outputs;
    io::write_text_file((std::filesystem::path(cfg.paths.output_dir) / "run_manifest.json").string(),
                        m.dump(2) + "\n");
}

// Reads only example_id/context/sentence from a gold-shaped file; any
// results field stays untouched so refinement never sees gold labels.
inline std::vector<refine_input> load_contexts(const std::string& path) {
    std::vector<refine_input> inputs;
    io::for_each_jsonl(path, [&](const json& doc, std::size_t lineno) {
        std::string where = path + ":" + std::to_string(lineno);
        refine_input in;
        in.example_id = io::require_string(doc, "example_id", where);
        in.context = io::require_string(doc, "context", where);
        in.sentence = doc.contains("sentence") ? io::require_string(doc, "sentence", where)
                                               : in.context;
        inputs.push_back(std::move(in));
    });
    return inputs;
}

inline std::string out_path(const pipeline_config& cfg, const std::string& name) {
    return (std::filesystem::path(cfg.paths.output_dir) / name).string();
}

inline void require_path(const std::string& path, const std::string& what) {
    if (path.empty()) throw std::invalid_argument("config: missing required path '" + what + "'");
    if (!std::filesystem::exists(path))
        throw data_error("config: path for '" + what + "' does not exist: " + path);
}

}  // namespace detail

/// Executes one pipeline command and writes its report files plus a run
/// manifest into the output directory. Returns a process exit status:
/// 0 success, 1 usage error, 2 data error, 3 service error.
inline int run_pipeline(const pipeline_config& cfg, const std::string& command,
                        const json& config_json = json::object(), std::ostream& err = std::cerr) {
    try {
        std::filesystem::create_directories(cfg.paths.output_dir);
        std::vector<std::string> outputs;

        if (command == "parse") {
            detail::require_path(cfg.paths.raw_outputs, "raw_outputs");
            auto raws = io::load_raw_outputs_file(cfg.paths.raw_outputs);
            std::vector<prediction_set> preds;
            std::map<std::string, std::size_t> routes;
            std::size_t dropped = 0;
            for (const auto& r : raws) {
                recovery_outcome out = recover(r.text, r.example_id);
                routes[to_string(out.route)] += 1;
                dropped += out.dropped_entries;
                preds.push_back(out.prediction);
            }
            io::write_predictions_file(detail::out_path(cfg, "predictions.jsonl"), preds);
            json rep;
            rep["outputs"] = raws.size();
            rep["routes"] = json::object();
            for (const char* route : {"direct", "fence_stripped", "bracket_recovered", "failed"})
                rep["routes"][route] = routes.count(route) ? routes[route] : 0;
            rep["dropped_entries"] = dropped;
            io::write_text_file(detail::out_path(cfg, "parse_report.json"), rep.dump(2) + "\n");
            outputs = {"predictions.jsonl", "parse_report.json"};
        } else if (command == "validate") {
            detail::require_path(cfg.paths.predictions, "predictions");
            detail::require_path(cfg.paths.inventory, "inventory");
            auto inv = io::load_inventory_file(cfg.paths.inventory);
            auto preds = io::load_predictions_file(cfg.paths.predictions);
            std::ostringstream lines;
            std::size_t clean = 0;
            for (const auto& p : preds) {
                validation_report rep = validate(p, inv);
                if (rep.clean()) ++clean;
                json j;
                j["example_id"] = p.example_id;
                j["unknown_codes"] = rep.unknown_codes;
                j["unknown_sub_codes"] = rep.unknown_sub_codes;
                j["invalid_pairs"] = json::array();
                for (const auto& [c, s] : rep.invalid_pairs)
                    j["invalid_pairs"].push_back({{"code", c}, {"sub_code", s}});
                j["is_empty"] = rep.is_empty;
                lines << j.dump() << "\n";
            }
            io::write_text_file(detail::out_path(cfg, "validation.jsonl"), lines.str());
            json summary;
            summary["examples"] = preds.size();
            summary["clean_examples"] = clean;
            io::write_text_file(detail::out_path(cfg, "validation_summary.json"),
                                summary.dump(2) + "\n");
            outputs = {"validation.jsonl", "validation_summary.json"};
        } else if (command == "evaluate") {
            detail::require_path(cfg.paths.predictions, "predictions");
            detail::require_path(cfg.paths.gold, "gold");
            detail::require_path(cfg.paths.inventory, "inventory");
            auto inv = io::load_inventory_file(cfg.paths.inventory);
            auto preds = io::load_predictions_file(cfg.paths.predictions);
            auto golds = io::load_gold_file(cfg.paths.gold);
            metrics_report rep = evaluate(preds, golds, inv, cfg.span_threshold);
            io::write_text_file(detail::out_path(cfg, "metrics.json"),
                                metrics_to_json(rep).dump(2) + "\n");
            io::write_text_file(detail::out_path(cfg, "metrics.csv"), metrics_to_csv(rep));
            outputs = {"metrics.json", "metrics.csv"};
            if (cfg.taxonomy) {
                taxonomy_options opts;
                opts.rare_cutoff = cfg.rare_cutoff;
                error_taxonomy_report tax = error_taxonomy(preds, golds, inv, opts);
                io::write_text_file(detail::out_path(cfg, "taxonomy.json"),
                                    taxonomy_to_json(tax).dump(2) + "\n");
                io::write_text_file(detail::out_path(cfg, "taxonomy.csv"), taxonomy_to_csv(tax));
                outputs.push_back("taxonomy.json");
                outputs.push_back("taxonomy.csv");
            }
            if (!cfg.paths.raw_outputs.empty() && std::filesystem::exists(cfg.paths.raw_outputs)) {
                auto raws = io::load_raw_outputs_file(cfg.paths.raw_outputs);
                std::vector<std::pair<std::string, std::string>> id_texts;
                for (const auto& r : raws) id_texts.emplace_back(r.example_id, r.text);
                schema_diagnostics d = diagnose_schema(id_texts, inv);
                io::write_text_file(detail::out_path(cfg, "diagnostics.json"),
                                    diagnostics_to_json(d).dump(2) + "\n");
                io::write_text_file(detail::out_path(cfg, "diagnostics.csv"),
                                    diagnostics_to_csv(d));
                outputs.push_back("diagnostics.json");
                outputs.push_back("diagnostics.csv");
            }
        } else if (command == "diagnose") {
            detail::require_path(cfg.paths.raw_outputs, "raw_outputs");
            detail::require_path(cfg.paths.inventory, "inventory");
            auto inv = io::load_inventory_file(cfg.paths.inventory);
            auto raws = io::load_raw_outputs_file(cfg.paths.raw_outputs);
            std::vector<std::pair<std::string, std::string>> pairs;
            for (const auto& r : raws) pairs.emplace_back(r.example_id, r.text);
            schema_diagnostics d = diagnose_schema(pairs, inv);
            io::write_text_file(detail::out_path(cfg, "diagnostics.json"),
                                diagnostics_to_json(d).dump(2) + "\n");
            io::write_text_file(detail::out_path(cfg, "diagnostics.csv"), diagnostics_to_csv(d));
            outputs = {"diagnostics.json", "diagnostics.csv"};
        } else if (command == "refine") {
            detail::require_path(cfg.paths.contexts, "contexts");
            auto inputs = detail::load_contexts(cfg.paths.contexts);
            std::unique_ptr<client_factory> clients;
            if (cfg.gateway_mode == "mock") {
                detail::require_path(cfg.paths.mock_script, "mock_script");
                clients = std::make_unique<mock_client_factory>(
                    load_mock_script(cfg.paths.mock_script));
            } else {
                auto gw = std::make_shared<gateway>(make_http_transport(cfg.gateway), cfg.gateway);
                clients = std::make_unique<gateway_client_factory>(gw);
            }
            auto results = run_refinement(cfg, inputs, *clients);
            std::vector<prediction_set> preds;
            std::ostringstream prov_lines;
            for (std::size_t i = 0; i < results.size(); ++i) {
                preds.push_back(results[i].prediction);
                json j;
                j["example_id"] = inputs[i].example_id;
                j["strategy"] = cfg.strategy;
                j["triplets"] = json::array();
                const auto& pred = results[i].prediction;
                for (std::size_t k = 0; k < pred.annotations.size(); ++k) {
                    json t = detail::annotation_to_json(pred.annotations[k]);
                    t["provenance"] = k < results[i].provenance.size()
                                          ? results[i].provenance[k]
                                          : cfg.strategy;
                    j["triplets"].push_back(t);
                }
                prov_lines << j.dump() << "\n";
            }
            io::write_predictions_file(detail::out_path(cfg, "predictions.jsonl"), preds);
            io::write_text_file(detail::out_path(cfg, "provenance.jsonl"), prov_lines.str());
            outputs = {"predictions.jsonl", "provenance.jsonl"};
        } else if (command == "align-loss") {
            detail::require_path(cfg.paths.inventory, "inventory");
            detail::require_path(cfg.paths.gold, "gold");
            detail::require_path(cfg.paths.representations, "representations");
            auto inv = io::load_inventory_file(cfg.paths.inventory);
            auto golds = io::load_gold_file(cfg.paths.gold);
            auto reps = io::load_representations_file(cfg.paths.representations);
            std::map<std::string, const gold_example*> golds_by_id;
            for (const auto& g : golds) golds_by_id[g.example_id] = &g;

            prior_matrix prior = identity_prior(inv);
            if (cfg.prior == "semantic") {
                detail::require_path(cfg.paths.embeddings, "embeddings");
                prior = build_prior(inv, io::load_embeddings_file(cfg.paths.embeddings));
            } else if (cfg.prior != "identity") {
                throw std::invalid_argument("config: prior must be 'identity' or 'semantic'");
            }

            std::vector<memory_bank::entry> entries;
            for (const auto& r : reps) {
                auto it = golds_by_id.find(r.example_id);
                if (it == golds_by_id.end())
                    throw data_error("align-loss: representation '" + r.example_id +
                                     "' has no gold example");
                std::vector<std::pair<std::string, std::string>> pairs;
                for (const auto& ann : it->second->annotations)
                    pairs.emplace_back(ann.code, ann.sub_code);
                entries.push_back({r, build_ontology_vector(inv, pairs)});
            }
            if (entries.empty()) throw data_error("align-loss: no representations");
            memory_bank bank = prefill_bank(entries);
            std::vector<std::pair<representation_vector, ontology_vector>> batch;
            for (const auto& e : entries) batch.emplace_back(e.rep, e.ont);
            double ont = alignment_loss(batch, bank, prior, cfg.alignment, cfg.workers);
            training_loss_breakdown breakdown =
                total_loss(cfg.sft_loss, ont, cfg.alignment.lambda_ont);
            json j;
            j["sft_loss"] = breakdown.sft_loss;
            j["ont_loss"] = breakdown.ont_loss;
            j["lambda_ont"] = cfg.alignment.lambda_ont;
            j["total"] = breakdown.total;
            j["bank_size"] = bank.size();
            j["examples"] = batch.size();
            io::write_text_file(detail::out_path(cfg, "align_loss.json"), j.dump(2) + "\n");
            outputs = {"align_loss.json"};
        } else if (command == "prior-build") {
            detail::require_path(cfg.paths.inventory, "inventory");
            detail::require_path(cfg.paths.embeddings, "embeddings");
            auto inv = io::load_inventory_file(cfg.paths.inventory);
            prior_matrix prior = build_prior(inv, io::load_embeddings_file(cfg.paths.embeddings));
            json j;
            j["dimension"] = prior.rows();
            j["labels"] = json::array();
            for (std::size_t i = 0; i < inv.dimension(); ++i) j["labels"].push_back(inv.label_key(i));
            j["entries"] = prior.data();
            io::write_text_file(detail::out_path(cfg, "prior.json"), j.dump() + "\n");
            outputs = {"prior.json"};
        } else if (command == "prefs") {
            detail::require_path(cfg.paths.gold, "gold");
            detail::require_path(cfg.paths.inventory, "inventory");
            auto inv = io::load_inventory_file(cfg.paths.inventory);
            auto golds = io::load_gold_file(cfg.paths.gold);
            auto pairs = generate_preference_pairs(golds, inv, cfg.seed);
            std::ostringstream lines;
            for (const auto& p : pairs) {
                json j;
                j["example_id"] = p.example_id;
                j["context"] = p.context;
                j["chosen"] = p.chosen;
                j["rejected"] = p.rejected;
                j["corruption_kind"] = to_string(p.kind);
                lines << j.dump() << "\n";
            }
            io::write_text_file(detail::out_path(cfg, "preference_pairs.jsonl"), lines.str());
            outputs = {"preference_pairs.jsonl"};
        } else if (command == "avg-checkpoints") {
            if (cfg.paths.checkpoints.empty())
                throw std::invalid_argument("config: no checkpoint paths configured");
            std::vector<io::named_vector_map> maps;
            for (const auto& path : cfg.paths.checkpoints) {
                detail::require_path(path, "checkpoints");
                maps.push_back(io::load_vector_map(path));
            }
            io::named_vector_map averaged = average_named_vectors(maps);
            io::write_vector_map(detail::out_path(cfg, "averaged.evm"), averaged);
            outputs = {"averaged.evm"};
        } else if (command == "stats") {
            detail::require_path(cfg.paths.gold, "gold");
            detail::require_path(cfg.paths.inventory, "inventory");
            auto inv = io::load_inventory_file(cfg.paths.inventory);
            auto golds = io::load_gold_file(cfg.paths.gold);
            corpus_statistics s = corpus_stats(golds, inv);
            io::write_text_file(detail::out_path(cfg, "stats.json"),
                                stats_to_json(s).dump(2) + "\n");
            io::write_text_file(detail::out_path(cfg, "stats.md"), stats_to_markdown(s));
            outputs = {"stats.json", "stats.md"};
        } else {
            err << "unknown command '" << command << "'\n";
            return exit_code::usage;
        }

        detail::write_manifest(cfg, command, config_json, outputs);
        return exit_code::ok;
    } catch (const std::invalid_argument& e) {
        err << "usage error: " << e.what() << "\n";
        return exit_code::usage;
    } catch (const service_error& e) {
        err << "service error: " << e.what() << "\n";
        return exit_code::service;
    } catch (const data_error& e) {
        err << "data error: " << e.what() << "\n";
        return exit_code::data;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::data;
    }
}

}  // namespace eppc
