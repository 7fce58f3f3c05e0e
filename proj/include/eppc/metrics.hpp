#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "eppc/annotation.hpp"
#include "eppc/recovery.hpp"
#include "eppc/text_match.hpp"

namespace eppc {

enum class match_level { code, sub_code, span, pair, triplet };

struct alignment_result {
    struct match {
        std::size_t pred_index;
        std::size_t gold_index;
        bool code_ok;
        bool sub_code_ok;
        double span_jaccard;
    };
    std::vector<match> matched;
    std::vector<std::size_t> unmatched_pred;
    std::vector<std::size_t> unmatched_gold;
};

namespace detail {

struct candidate {
    std::size_t pred_index, gold_index;
    bool code_ok, sub_ok, pair_ok;
    double jac;
};

// Ranking key: label correctness first (full pair, then code, then
// sub-code), span overlap next, original indices last so equal-key ties are
// deterministic.
inline bool candidate_before(const candidate& a, const candidate& b) {
    if (a.pair_ok != b.pair_ok) return a.pair_ok;
    if (a.code_ok != b.code_ok) return a.code_ok;
    if (a.sub_ok != b.sub_ok) return a.sub_ok;
    if (a.jac != b.jac) return a.jac > b.jac;
    if (a.pred_index != b.pred_index) return a.pred_index < b.pred_index;
    return a.gold_index < b.gold_index;
}

inline std::vector<candidate> build_candidates(const std::vector<annotation>& preds,
                                               const std::vector<annotation>& golds) {
    std::vector<candidate> cands;
    std::vector<token_sequence> pred_toks, gold_toks;
    pred_toks.reserve(preds.size());
    gold_toks.reserve(golds.size());
    for (const auto& p : preds) pred_toks.push_back(tokenize(p.span));
    for (const auto& g : golds) gold_toks.push_back(tokenize(g.span));
    for (std::size_t i = 0; i < preds.size(); ++i) {
        for (std::size_t j = 0; j < golds.size(); ++j) {
            candidate c;
            c.pred_index = i;
            c.gold_index = j;
            c.code_ok = trim(preds[i].code) == trim(golds[j].code);
            c.sub_ok = trim(preds[i].sub_code) == trim(golds[j].sub_code);
            c.pair_ok = c.code_ok && c.sub_ok;
            c.jac = jaccard(pred_toks[i], gold_toks[j]);
            cands.push_back(c);
        }
    }
    std::sort(cands.begin(), cands.end(), candidate_before);
    return cands;
}

// Greedy 1:1 consumption of ranked candidates, restricted to those the
// `admissible` predicate accepts. Each side is used at most once.
template <typename Pred>
inline alignment_result greedy_match(const std::vector<annotation>& preds,
                                     const std::vector<annotation>& golds, Pred admissible) {
    alignment_result res;
    std::vector<bool> pred_used(preds.size(), false), gold_used(golds.size(), false);
    for (const auto& c : build_candidates(preds, golds)) {
        if (!admissible(c)) continue;
        if (pred_used[c.pred_index] || gold_used[c.gold_index]) continue;
        pred_used[c.pred_index] = true;
        gold_used[c.gold_index] = true;
        res.matched.push_back({c.pred_index, c.gold_index, c.code_ok, c.sub_ok, c.jac});
    }
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (!pred_used[i]) res.unmatched_pred.push_back(i);
    for (std::size_t j = 0; j < golds.size(); ++j)
        if (!gold_used[j]) res.unmatched_gold.push_back(j);
    return res;
}

inline bool level_admits(match_level level, bool code_ok, bool sub_ok, double jac,
                         double span_threshold) {
    switch (level) {
        case match_level::code: return code_ok;
        case match_level::sub_code: return sub_ok;
        case match_level::span: return jac >= span_threshold;
        case match_level::pair: return code_ok && sub_ok;
        case match_level::triplet: return code_ok && sub_ok && jac >= span_threshold;
    }
    return false;
}

}  // namespace detail

/// Greedy 1:1 alignment of a deduplicated prediction against gold
/// annotations, ranked by label correctness then maximum span overlap. A
/// candidate with no label agreement and zero span overlap is never matched.
inline alignment_result greedy_align(const prediction_set& pred,
                                     const std::vector<annotation>& gold) {
    return detail::greedy_match(pred.annotations, gold, [](const detail::candidate& c) {
        return c.code_ok || c.sub_ok || c.jac > 0.0;
    });
}

struct level_counts {
    std::size_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;  // percentages

    void finalize() {
        precision = tp + fp == 0 ? 0.0 : 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp);
        recall = tp + fn == 0 ? 0.0 : 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn);
        f1 = precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
    }
};

struct metrics_report {
    level_counts code, sub_code, span, pair, triplet;
    std::size_t examples = 0;
    std::size_t predictions = 0;       // post-dedup annotations over valid parses
    std::size_t gold_annotations = 0;  // post-dedup
    std::size_t invalid_parse_examples = 0;
    double span_threshold = 0.6;

    const level_counts& at(match_level level) const {
        switch (level) {
            case match_level::code: return code;
            case match_level::sub_code: return sub_code;
            case match_level::span: return span;
            case match_level::pair: return pair;
            case match_level::triplet: return triplet;
        }
        return code;
    }
    level_counts& at(match_level level) {
        return const_cast<level_counts&>(static_cast<const metrics_report&>(*this).at(level));
    }
};

namespace detail {

inline std::map<std::string, const gold_example*> index_golds(
    const std::vector<gold_example>& golds) {
    std::map<std::string, const gold_example*> by_id;
    for (const auto& g : golds) {
        if (!by_id.emplace(g.example_id, &g).second)
            throw data_error("duplicate gold example_id '" + g.example_id + "'");
    }
    return by_id;
}

inline std::vector<annotation> dedup_annotations(const std::vector<annotation>& anns) {
    prediction_set tmp;
    tmp.annotations = anns;
    return dedup(tmp).annotations;
}

inline void check_gold_labels(const gold_example& g, const label_inventory& inv) {
    for (const auto& ann : g.annotations) {
        if (!inv.has_pair(ann.code, ann.sub_code))
            throw data_error("gold example '" + g.example_id + "' uses label pair (" +
                             trim(ann.code) + ", " + trim(ann.sub_code) +
                             ") outside the inventory");
    }
}

}  // namespace detail

/// Micro-averaged precision/recall/F1 for the five match families. Every
/// prediction is deduplicated before scoring; invalid parses contribute no
/// matches; gold sides are deduplicated symmetrically.
inline metrics_report evaluate(const std::vector<prediction_set>& corpus_preds,
                               const std::vector<gold_example>& corpus_golds,
                               const label_inventory& inv, double span_threshold = 0.6) {
    auto golds_by_id = detail::index_golds(corpus_golds);
    if (corpus_preds.size() != corpus_golds.size())
        throw data_error("evaluate: prediction and gold corpora differ in size (" +
                         std::to_string(corpus_preds.size()) + " vs " +
                         std::to_string(corpus_golds.size()) + ")");
    {
        std::set<std::string> seen;
        for (const auto& p : corpus_preds)
            if (!seen.insert(p.example_id).second)
                throw data_error("evaluate: duplicate prediction example_id '" + p.example_id +
                                 "'");
    }

    metrics_report rep;
    rep.span_threshold = span_threshold;
    const match_level levels[] = {match_level::code, match_level::sub_code, match_level::span,
                                  match_level::pair, match_level::triplet};

    for (const auto& raw_pred : corpus_preds) {
        auto it = golds_by_id.find(raw_pred.example_id);
        if (it == golds_by_id.end())
            throw data_error("evaluate: no gold example for prediction '" + raw_pred.example_id +
                             "'");
        const gold_example& gold = *it->second;
        detail::check_gold_labels(gold, inv);

        prediction_set pred = dedup(raw_pred);
        std::vector<annotation> gold_anns = detail::dedup_annotations(gold.annotations);

        rep.examples += 1;
        rep.gold_annotations += gold_anns.size();
        if (pred.status == parse_status::invalid) {
            rep.invalid_parse_examples += 1;
        } else {
            rep.predictions += pred.annotations.size();
        }

        for (match_level level : levels) {
            auto aligned = detail::greedy_match(
                pred.annotations, gold_anns, [&](const detail::candidate& c) {
                    return detail::level_admits(level, c.code_ok, c.sub_ok, c.jac, span_threshold);
                });
            std::size_t tp = aligned.matched.size();
            level_counts& lc = rep.at(level);
            lc.tp += tp;
            lc.fp += pred.annotations.size() - tp;
            lc.fn += gold_anns.size() - tp;
        }
    }
    for (match_level level : levels) rep.at(level).finalize();
    return rep;
}

struct taxonomy_options {
    std::size_t rare_cutoff = 10;
    // Pair-frequency source for the rarity cutoff; the scored gold corpus is
    // used when no separate (training) corpus is supplied.
    const std::vector<gold_example>* frequency_source = nullptr;
};

/// Error-category occurrence rates. The first block is percentages of test
/// examples exhibiting the category at least once; label-validity rates are
/// percentages of total predictions; rare-label omission is a percentage of
/// rare gold instances; grounding rates are percentages of correctly matched
/// (Code, Sub-code) pairs. Categories are independent and do not sum to 100.
struct error_taxonomy_report {
    double code_confusion = 0.0;
    double sub_code_confusion = 0.0;
    double missing_annotation = 0.0;
    double over_extraction = 0.0;
    double evidence_boundary_error = 0.0;
    double malformed_json = 0.0;
    double adjacent_label_confusion = 0.0;

    double invalid_ontology_label = 0.0;
    double invalid_code_sub_pair = 0.0;
    double parent_sub_code_mismatch = 0.0;

    double rare_label_omission = 0.0;

    double boundary_drift = 0.0;
    double wrong_evidence_phrase = 0.0;
    double no_evidence_span = 0.0;

    // Per-code F1 from the code-level greedy alignment, in inventory order.
    std::vector<std::pair<std::string, level_counts>> per_code;

    std::size_t examples = 0;
    std::size_t total_predictions = 0;
    std::size_t matched_pairs = 0;
    std::size_t rare_gold_instances = 0;
};

inline error_taxonomy_report error_taxonomy(const std::vector<prediction_set>& corpus_preds,
                                            const std::vector<gold_example>& corpus_golds,
                                            const label_inventory& inv,
                                            const taxonomy_options& opts = {}) {
    auto golds_by_id = detail::index_golds(corpus_golds);

    std::map<std::pair<std::string, std::string>, std::size_t> pair_freq;
    const std::vector<gold_example>& freq_source =
        opts.frequency_source ? *opts.frequency_source : corpus_golds;
    for (const auto& g : freq_source)
        for (const auto& ann : g.annotations) pair_freq[ann.pair()] += 1;

    error_taxonomy_report rep;
    std::size_t ex_code_conf = 0, ex_sub_conf = 0, ex_missing = 0, ex_over = 0, ex_boundary = 0,
                ex_malformed = 0, ex_adjacent = 0;
    std::size_t pred_invalid_label = 0, pred_invalid_pair = 0, pred_parent_mismatch = 0;
    std::size_t rare_total = 0, rare_missed = 0;
    std::size_t drift = 0, wrong_phrase = 0, no_span = 0;
    std::map<std::string, level_counts> per_code;

    for (const auto& raw_pred : corpus_preds) {
        auto it = golds_by_id.find(raw_pred.example_id);
        if (it == golds_by_id.end())
            throw data_error("error_taxonomy: no gold example for prediction '" +
                             raw_pred.example_id + "'");
        const gold_example& gold = *it->second;

        prediction_set pred = dedup(raw_pred);
        std::vector<annotation> gold_anns = detail::dedup_annotations(gold.annotations);
        rep.examples += 1;
        rep.total_predictions += pred.annotations.size();
        if (pred.status == parse_status::invalid) ex_malformed += 1;

        // Label-validity categories, per prediction.
        for (const auto& ann : pred.annotations) {
            bool code_known = inv.has_code(ann.code);
            auto parents = inv.parents_of_sub_name(ann.sub_code);
            bool sub_known = !parents.empty();
            bool pair_valid = inv.has_pair(ann.code, ann.sub_code);
            if (!code_known || !sub_known) pred_invalid_label += 1;
            if (code_known && sub_known && !pair_valid) {
                pred_invalid_pair += 1;
                if (parents.size() == 1 && parents[0] != trim(ann.code))
                    pred_parent_mismatch += 1;
            }
        }

        // Per-code counts from the code-level alignment; false positives with
        // out-of-inventory codes are excluded here and surface in the
        // invalid-label rate instead.
        auto code_aligned =
            detail::greedy_match(pred.annotations, gold_anns,
                                 [](const detail::candidate& c) { return c.code_ok; });
        for (const auto& m : code_aligned.matched)
            per_code[trim(gold_anns[m.gold_index].code)].tp += 1;
        for (std::size_t pi : code_aligned.unmatched_pred) {
            std::string code = trim(pred.annotations[pi].code);
            if (inv.has_code(code)) per_code[code].fp += 1;
        }
        for (std::size_t gi : code_aligned.unmatched_gold)
            per_code[trim(gold_anns[gi].code)].fn += 1;

        // Alignment restricted to correct (Code, Sub-code) pairs.
        auto aligned =
            detail::greedy_match(pred.annotations, gold_anns,
                                 [](const detail::candidate& c) { return c.pair_ok; });
        rep.matched_pairs += aligned.matched.size();

        bool any_boundary = false;
        for (const auto& m : aligned.matched) {
            if (m.span_jaccard < 0.6) any_boundary = true;
            const std::string span = trim(pred.annotations[m.pred_index].span);
            if (span.empty())
                no_span += 1;
            else if (m.span_jaccard == 0.0)
                wrong_phrase += 1;
            else if (m.span_jaccard < 0.6)
                drift += 1;
        }
        if (any_boundary) ex_boundary += 1;
        if (!aligned.unmatched_gold.empty()) ex_missing += 1;
        if (!aligned.unmatched_pred.empty()) ex_over += 1;

        // Confusions: judge each unmatched prediction against its best gold
        // counterpart under the full ranking key.
        bool code_conf = false, sub_conf = false;
        for (std::size_t pi : aligned.unmatched_pred) {
            const annotation& p = pred.annotations[pi];
            auto best = detail::greedy_match(
                {p}, gold_anns, [](const detail::candidate& c) {
                    return c.code_ok || c.sub_ok || c.jac > 0.0;
                });
            if (best.matched.empty()) continue;
            const auto& m = best.matched.front();
            if (!m.code_ok)
                code_conf = true;
            else if (!m.sub_code_ok)
                sub_conf = true;
        }
        if (code_conf) ex_code_conf += 1;
        if (sub_conf) ex_sub_conf += 1;

        // Adjacent-label confusion: an unmatched prediction and an unmatched
        // gold share the parent code but disagree on the sub-code.
        bool adjacent = false;
        for (std::size_t pi : aligned.unmatched_pred) {
            for (std::size_t gi : aligned.unmatched_gold) {
                const annotation& p = pred.annotations[pi];
                const annotation& g = gold_anns[gi];
                if (trim(p.code) == trim(g.code) && trim(p.sub_code) != trim(g.sub_code))
                    adjacent = true;
            }
        }
        if (adjacent) ex_adjacent += 1;

        for (std::size_t gi = 0; gi < gold_anns.size(); ++gi) {
            auto freq_it = pair_freq.find(gold_anns[gi].pair());
            std::size_t freq = freq_it == pair_freq.end() ? 0 : freq_it->second;
            if (freq > opts.rare_cutoff) continue;
            rare_total += 1;
            bool matched = false;
            for (const auto& m : aligned.matched)
                if (m.gold_index == gi) matched = true;
            if (!matched) rare_missed += 1;
        }
    }

    auto pct = [](std::size_t num, std::size_t den) {
        return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
    };
    rep.code_confusion = pct(ex_code_conf, rep.examples);
    rep.sub_code_confusion = pct(ex_sub_conf, rep.examples);
    rep.missing_annotation = pct(ex_missing, rep.examples);
    rep.over_extraction = pct(ex_over, rep.examples);
    rep.evidence_boundary_error = pct(ex_boundary, rep.examples);
    rep.malformed_json = pct(ex_malformed, rep.examples);
    rep.adjacent_label_confusion = pct(ex_adjacent, rep.examples);
    rep.invalid_ontology_label = pct(pred_invalid_label, rep.total_predictions);
    rep.invalid_code_sub_pair = pct(pred_invalid_pair, rep.total_predictions);
    rep.parent_sub_code_mismatch = pct(pred_parent_mismatch, rep.total_predictions);
    rep.rare_gold_instances = rare_total;
    rep.rare_label_omission = pct(rare_missed, rare_total);
    rep.boundary_drift = pct(drift, rep.matched_pairs);
    rep.wrong_evidence_phrase = pct(wrong_phrase, rep.matched_pairs);
    rep.no_evidence_span = pct(no_span, rep.matched_pairs);
    for (const auto& code : inv.codes()) {
        level_counts lc = per_code.count(code) ? per_code[code] : level_counts{};
        lc.finalize();
        rep.per_code.emplace_back(code, lc);
    }
    return rep;
}

struct schema_diagnostics {
    double invalid_json_rate = 0.0;   // % of outputs that failed recovery
    double invalid_label_rate = 0.0;  // % of annotations with out-of-inventory labels
    double empty_output_rate = 0.0;   // % of outputs parsing to an empty results list
    std::size_t outputs = 0;
    std::size_t annotations = 0;
};

/// Schema-adherence diagnostics over raw (example_id, text) model outputs.
inline schema_diagnostics diagnose_schema(
    const std::vector<std::pair<std::string, std::string>>& raw_outputs,
    const label_inventory& inv) {
    schema_diagnostics d;
    d.outputs = raw_outputs.size();
    std::size_t failed = 0, empty = 0, bad_labels = 0;
    for (const auto& [id, text] : raw_outputs) {
        recovery_outcome out = recover(text, id);
        if (out.route == recovery_route::failed) {
            failed += 1;
            continue;
        }
        if (out.prediction.annotations.empty()) empty += 1;
        for (const auto& ann : out.prediction.annotations) {
            d.annotations += 1;
            if (!inv.has_code(ann.code) || inv.parents_of_sub_name(ann.sub_code).empty())
                bad_labels += 1;
        }
    }
    auto pct = [](std::size_t num, std::size_t den) {
        return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
    };
    d.invalid_json_rate = pct(failed, d.outputs);
    d.invalid_label_rate = pct(bad_labels, d.annotations);
    d.empty_output_rate = pct(empty, d.outputs);
    return d;
}

}  // namespace eppc
