#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "eppc/annotation.hpp"
#include "eppc/gateway.hpp"
#include "eppc/ontology.hpp"
#include "eppc/recovery.hpp"
#include "eppc/text_match.hpp"

namespace eppc {

/// One complete prediction entering an ensemble or reranking stage, tagged
/// with the inference stage that produced it.
struct candidate_set {
    std::string source;  // greedy, cot_sr, self_consistency, seed_k, refined_sample_k, ...
    prediction_set prediction;
};

/// Example under refinement: message context and the segment to code. Gold
/// labels are never part of this input.
struct refine_input {
    std::string example_id;
    std::string context;
    std::string sentence;
};

struct refinement_config {
    std::size_t sc_samples = 5;
    double sc_temperature = 0.7;
    std::size_t refine_samples = 3;
    double refine_temperature = 0.7;
    double span_check_threshold = 0.8;
    double hybrid_threshold = 0.5;
    std::size_t cgra_min_triplets = 4;
    std::size_t cgra_samples = 3;
    double cgra_temperature = 0.7;
    double snap_threshold = 0.72;
    double snap_margin = 0.08;
    double merge_threshold = 0.5;
    std::size_t merge_min_support = 2;
    double w_agree = 1.0;
    double w_verbatim = 0.5;
    double w_snap = 0.25;
    double accept_threshold = 1.0;
    double fuzzy_label_threshold = 0.85;
    std::size_t max_tokens = 1024;

    std::string system_prompt =
        "You extract structured communication annotations from patient-provider messages "
        "and reply with a single JSON object only.";
    std::string generate_template =
        "Annotate the sentence below using the label inventory. Reply with a JSON object "
        "holding a \"results\" list; every entry needs a \"Code\", a \"Sub-code\", and a "
        "\"Span\" copied verbatim from the message.\n\nContext:\n{context}\n\nSentence to "
        "code:\n{sentence}\n\nJSON:";
    std::string verify_template =
        "Review the annotations below. Remove triplets whose span is not supported by the "
        "message, fix minor span errors, and keep Code/Sub-code assignments consistent with "
        "the label inventory. Reply with the corrected JSON object only.\n\nContext:\n"
        "{context}\n\nSentence to code:\n{sentence}\n\nCurrent annotations:\n{previous_json}"
        "\n\nCorrected JSON:";
    std::string refine_template =
        "Improve the annotations below if needed: add missed behaviors, drop unsupported "
        "ones, and keep spans verbatim. Reply with the full JSON object only.\n\nContext:\n"
        "{context}\n\nSentence to code:\n{sentence}\n\nCurrent annotations:\n{previous_json}"
        "\n\nImproved JSON:";
};

namespace detail {

inline void replace_all(std::string& text, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
}

inline std::vector<chat_message> build_messages(const refinement_config& cfg,
                                                const std::string& templ,
                                                const refine_input& input,
                                                const std::string& previous_json) {
    std::string user = templ;
    replace_all(user, "{context}", input.context);
    replace_all(user, "{sentence}", input.sentence);
    replace_all(user, "{previous_json}", previous_json);
    std::vector<chat_message> messages;
    if (!cfg.system_prompt.empty()) messages.push_back({"system", cfg.system_prompt});
    messages.push_back({"user", user});
    return messages;
}

inline bool span_supported(const std::string& span, const std::string& reference,
                           double threshold) {
    return is_verbatim(span, reference) || jaccard(span, reference) >= threshold;
}

inline std::size_t count_supported_spans(const prediction_set& pred, const std::string& reference,
                                         double threshold) {
    std::size_t n = 0;
    for (const auto& ann : pred.annotations)
        if (span_supported(ann.span, reference, threshold)) ++n;
    return n;
}

inline std::set<std::pair<std::string, std::string>> distinct_pairs(const prediction_set& pred) {
    std::set<std::pair<std::string, std::string>> pairs;
    for (const auto& ann : pred.annotations) pairs.insert(ann.pair());
    return pairs;
}

inline void tag_all(std::vector<std::string>* provenance, std::size_t n, const std::string& tag) {
    if (provenance) provenance->assign(n, tag);
}

// Recovers one sampled text into a deduplicated prediction; unparseable
// samples become empty sets so a bad sample never aborts a vote.
inline prediction_set recover_sample(const std::string& text, const std::string& example_id) {
    recovery_outcome out = recover(text, example_id);
    return dedup(out.prediction);
}

}  // namespace detail

/// Greedy generation followed by span verification, sampled self-refinement
/// with strict-majority triplet voting, and a final pick between the
/// verified and refined outputs by supported-span count (tie: verified).
inline prediction_set cot_sr(const refine_input& input, generation_client& client,
                             const refinement_config& cfg,
                             std::vector<std::string>* provenance = nullptr) {
    // Stage 1: greedy structured generation.
    prediction_set greedy;
    try {
        auto texts = client.complete(
            detail::build_messages(cfg, cfg.generate_template, input, ""), 0.0, 1, cfg.max_tokens);
        if (texts.empty()) throw service_error("cot_sr: empty generation result");
        greedy = detail::recover_sample(texts[0], input.example_id);
    } catch (const std::exception&) {
        prediction_set failed;
        failed.example_id = input.example_id;
        failed.status = parse_status::invalid;
        detail::tag_all(provenance, 0, "");
        return failed;
    }

    // Stage 2: local span check against the sentence; one greedy
    // verification pass when any span is unsupported.
    bool all_supported = true;
    for (const auto& ann : greedy.annotations)
        if (!detail::span_supported(ann.span, input.sentence, cfg.span_check_threshold))
            all_supported = false;

    prediction_set verified = greedy;
    if (!all_supported && greedy.status != parse_status::invalid) {
        try {
            auto texts = client.complete(
                detail::build_messages(cfg, cfg.verify_template, input, serialize(greedy)), 0.0, 1,
                cfg.max_tokens);
            if (!texts.empty()) {
                prediction_set v = detail::recover_sample(texts[0], input.example_id);
                if (v.status != parse_status::invalid) verified = std::move(v);
            }
        } catch (const std::exception&) {
            // keep the stage-1 output
        }
    }

    // Stage 3: sampled self-refinement with strict-majority voting over
    // exact triplets.
    prediction_set refined = verified;
    if (verified.status != parse_status::invalid) {
        std::vector<prediction_set> samples;
        try {
            auto texts = client.complete(
                detail::build_messages(cfg, cfg.refine_template, input, serialize(verified)),
                cfg.refine_temperature, cfg.refine_samples, cfg.max_tokens);
            for (const auto& t : texts) samples.push_back(detail::recover_sample(t, input.example_id));
        } catch (const std::exception&) {
            samples.clear();
        }
        if (!samples.empty()) {
            struct vote_entry {
                annotation ann;
                std::size_t count = 0;
                std::size_t first_sample = 0, first_pos = 0;
            };
            std::map<std::string, vote_entry> votes;  // keyed by trimmed triplet
            auto triplet_key = [](const annotation& a) {
                annotation t = a.trimmed();
                return t.code + "\x1f" + t.sub_code + "\x1f" + t.span;
            };
            for (std::size_t s = 0; s < samples.size(); ++s) {
                for (std::size_t k = 0; k < samples[s].annotations.size(); ++k) {
                    const annotation& ann = samples[s].annotations[k];
                    auto [it, fresh] = votes.try_emplace(triplet_key(ann));
                    if (fresh) {
                        it->second.ann = ann;
                        it->second.first_sample = s;
                        it->second.first_pos = k;
                    }
                    it->second.count += 1;
                }
            }
            std::vector<vote_entry> survivors;
            for (auto& [key, v] : votes)
                if (v.count * 2 > samples.size()) survivors.push_back(v);

            // One span per surviving pair: more votes first, then
            // context-supported spans, then the lexicographically smallest.
            std::map<std::pair<std::string, std::string>, vote_entry> winners;
            for (const auto& v : survivors) {
                auto pair_key = v.ann.pair();
                auto it = winners.find(pair_key);
                if (it == winners.end()) {
                    winners.emplace(pair_key, v);
                    continue;
                }
                const vote_entry& cur = it->second;
                bool v_verbatim = is_verbatim(v.ann.span, input.context);
                bool c_verbatim = is_verbatim(cur.ann.span, input.context);
                bool better = false;
                if (v.count != cur.count)
                    better = v.count > cur.count;
                else if (v_verbatim != c_verbatim)
                    better = v_verbatim;
                else
                    better = trim(v.ann.span) < trim(cur.ann.span);
                if (better) it->second = v;
            }
            std::vector<vote_entry> ordered;
            for (auto& [pair_key, v] : winners) ordered.push_back(v);
            std::sort(ordered.begin(), ordered.end(), [](const vote_entry& a, const vote_entry& b) {
                if (a.first_sample != b.first_sample) return a.first_sample < b.first_sample;
                return a.first_pos < b.first_pos;
            });
            refined = prediction_set{};
            refined.example_id = input.example_id;
            refined.status = parse_status::valid;
            for (const auto& v : ordered) refined.annotations.push_back(v.ann);
            refined = dedup(refined);
        }
    }

    // Stage 4: keep whichever output has more supported spans; ties go to
    // the verified set.
    std::size_t verified_ok =
        detail::count_supported_spans(verified, input.sentence, cfg.span_check_threshold);
    std::size_t refined_ok =
        detail::count_supported_spans(refined, input.sentence, cfg.span_check_threshold);
    const prediction_set& chosen = refined_ok > verified_ok ? refined : verified;
    detail::tag_all(provenance, chosen.annotations.size(),
                    refined_ok > verified_ok ? "cot_sr:refined" : "cot_sr:verified");
    return chosen;
}

/// Majority vote over (Code, Sub-code) pairs across N sampled predictions; a
/// pair survives when it appears in at least half of the samples, and its
/// span is the sampled variant with the highest mean token Jaccard to all
/// sampled spans of that pair.
inline prediction_set self_consistency(const std::vector<prediction_set>& raw_samples,
                                       std::vector<std::string>* provenance = nullptr) {
    if (raw_samples.empty()) throw std::invalid_argument("self_consistency: no samples");
    const std::size_t n = raw_samples.size();
    std::vector<prediction_set> samples;
    samples.reserve(n);
    for (const auto& s : raw_samples) samples.push_back(dedup(s));

    struct occurrence {
        std::size_t sample, pos;
        std::string span;
        token_sequence toks;
    };
    struct pair_info {
        annotation first_ann;
        std::set<std::size_t> in_samples;
        std::vector<occurrence> occurrences;
        std::size_t first_sample = 0, first_pos = 0;
    };
    std::map<std::pair<std::string, std::string>, pair_info> pairs;
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t k = 0; k < samples[s].annotations.size(); ++k) {
            const annotation& ann = samples[s].annotations[k];
            auto [it, fresh] = pairs.try_emplace(ann.pair());
            if (fresh) {
                it->second.first_ann = ann;
                it->second.first_sample = s;
                it->second.first_pos = k;
            }
            it->second.in_samples.insert(s);
            it->second.occurrences.push_back({s, k, ann.span, tokenize(ann.span)});
        }
    }

    std::vector<const std::pair<const std::pair<std::string, std::string>, pair_info>*> kept;
    for (const auto& entry : pairs)
        if (entry.second.in_samples.size() * 2 >= n) kept.push_back(&entry);
    std::sort(kept.begin(), kept.end(), [](const auto* a, const auto* b) {
        if (a->second.first_sample != b->second.first_sample)
            return a->second.first_sample < b->second.first_sample;
        return a->second.first_pos < b->second.first_pos;
    });

    prediction_set out;
    out.example_id = raw_samples.front().example_id;
    out.status = parse_status::valid;
    for (const auto* entry : kept) {
        const pair_info& info = entry->second;
        // Candidate spans in first-occurrence order; the mean runs over all
        // occurrences, each span including its own occurrence at 1.
        double best_mean = -1.0;
        const occurrence* best = nullptr;
        std::set<std::string> seen_spans;
        for (const auto& cand : info.occurrences) {
            if (!seen_spans.insert(trim(cand.span)).second) continue;
            double total = 0.0;
            for (const auto& other : info.occurrences) total += jaccard(cand.toks, other.toks);
            double mean = total / static_cast<double>(info.occurrences.size());
            if (mean > best_mean) {
                best_mean = mean;
                best = &cand;
            }
        }
        annotation ann = info.first_ann;
        ann.span = best->span;
        out.annotations.push_back(ann);
    }
    out = dedup(out);
    detail::tag_all(provenance, out.annotations.size(), "self_consistency");
    return out;
}

/// Label-corrected hybrid, mild variant: each greedy triplet keeps its span;
/// when some self-consistency span overlaps it at the threshold or better,
/// the labels are replaced by that triplet's labels. Self-consistency pairs
/// not yet represented are appended with their original spans.
inline prediction_set hybrid_mild(const prediction_set& greedy, const prediction_set& sc,
                                  double threshold = 0.5,
                                  std::vector<std::string>* provenance = nullptr) {
    prediction_set out;
    out.example_id = greedy.example_id;
    out.status = greedy.status;
    std::vector<std::string> tags;

    std::vector<token_sequence> sc_toks;
    sc_toks.reserve(sc.annotations.size());
    for (const auto& ann : sc.annotations) sc_toks.push_back(tokenize(ann.span));

    for (const auto& g : greedy.annotations) {
        token_sequence g_toks = tokenize(g.span);
        double best = -1.0;
        std::size_t best_idx = 0;
        for (std::size_t i = 0; i < sc.annotations.size(); ++i) {
            double j = jaccard(g_toks, sc_toks[i]);
            if (j > best) {
                best = j;
                best_idx = i;
            }
        }
        if (best >= threshold && !sc.annotations.empty()) {
            const annotation& donor = sc.annotations[best_idx];
            out.annotations.push_back({donor.code, donor.sub_code, g.span});
            tags.push_back("hybrid:label_corrected");
        } else {
            out.annotations.push_back(g);
            tags.push_back("hybrid:greedy");
        }
    }

    std::set<std::pair<std::string, std::string>> present;
    for (const auto& ann : out.annotations) present.insert(ann.pair());
    for (const auto& ann : sc.annotations) {
        if (present.count(ann.pair())) continue;
        present.insert(ann.pair());
        out.annotations.push_back(ann);
        tags.push_back("hybrid:sc_appended");
    }

    prediction_set deduped;
    deduped.example_id = out.example_id;
    deduped.status = out.status;
    std::vector<std::string> kept_tags;
    std::vector<annotation> seen;
    for (std::size_t i = 0; i < out.annotations.size(); ++i) {
        annotation key = out.annotations[i].trimmed();
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
        seen.push_back(key);
        deduped.annotations.push_back(out.annotations[i]);
        kept_tags.push_back(tags[i]);
    }
    if (provenance) *provenance = std::move(kept_tags);
    return deduped;
}

/// Picks the candidate with more verbatim context-supported spans; ties go
/// to the one with more distinct (Code, Sub-code) pairs, then to the first
/// input. The output is exactly one of the two inputs.
inline prediction_set selector(const prediction_set& cot, const prediction_set& sc,
                               const std::string& context,
                               std::vector<std::string>* provenance = nullptr) {
    std::size_t cot_verbatim = 0, sc_verbatim = 0;
    for (const auto& ann : cot.annotations)
        if (is_verbatim(ann.span, context)) ++cot_verbatim;
    for (const auto& ann : sc.annotations)
        if (is_verbatim(ann.span, context)) ++sc_verbatim;

    bool pick_cot;
    if (cot_verbatim != sc_verbatim) {
        pick_cot = cot_verbatim > sc_verbatim;
    } else {
        std::size_t cot_pairs = detail::distinct_pairs(cot).size();
        std::size_t sc_pairs = detail::distinct_pairs(sc).size();
        pick_cot = cot_pairs >= sc_pairs;
    }
    const prediction_set& chosen = pick_cot ? cot : sc;
    detail::tag_all(provenance, chosen.annotations.size(),
                    pick_cot ? "selector:cot_sr" : "selector:self_consistency");
    return chosen;
}

/// Coverage-guided resampling: examples with enough predicted triplets pass
/// through untouched (and unsampled); sparse ones gain new triplets whose
/// spans appear verbatim in the source context. Baseline triplets are never
/// removed or altered.
inline prediction_set cgra(const prediction_set& greedy, const std::string& context,
                           generation_client& client, const refinement_config& cfg,
                           std::vector<std::string>* provenance = nullptr) {
    prediction_set base = dedup(greedy);
    if (base.annotations.size() >= cfg.cgra_min_triplets) {
        detail::tag_all(provenance, greedy.annotations.size(), "cgra:baseline");
        return greedy;
    }

    refine_input input;
    input.example_id = greedy.example_id;
    input.context = context;
    std::vector<std::string> texts;
    try {
        texts = client.complete(detail::build_messages(cfg, cfg.generate_template, input, ""),
                                cfg.cgra_temperature, cfg.cgra_samples, cfg.max_tokens);
    } catch (const std::exception&) {
        detail::tag_all(provenance, greedy.annotations.size(), "cgra:baseline");
        return greedy;
    }

    prediction_set out = base;
    std::vector<std::string> tags(base.annotations.size(), "cgra:baseline");
    std::vector<annotation> seen;
    for (const auto& ann : base.annotations) seen.push_back(ann.trimmed());
    for (const auto& text : texts) {
        prediction_set sample = detail::recover_sample(text, greedy.example_id);
        for (const auto& ann : sample.annotations) {
            annotation key = ann.trimmed();
            if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
            if (!is_verbatim(ann.span, context)) continue;
            seen.push_back(key);
            out.annotations.push_back(ann);
            tags.push_back("cgra:added");
        }
    }
    if (out.status == parse_status::invalid && !out.annotations.empty())
        out.status = parse_status::valid;
    if (provenance) *provenance = std::move(tags);
    return out;
}

/// Soft-majority merge across per-seed greedy predictions: triplets sharing
/// a pair are clustered by span overlap (single link at the threshold);
/// clusters supported by enough distinct seeds keep their longest span.
inline prediction_set seed_merge(const std::vector<prediction_set>& seed_preds,
                                 const refinement_config& cfg,
                                 std::vector<std::string>* provenance = nullptr) {
    if (seed_preds.size() < 2)
        throw std::invalid_argument("seed_merge: need at least two seed predictions");

    struct occurrence {
        std::size_t seed, pos;
        annotation ann;
        token_sequence toks;
    };
    std::map<std::pair<std::string, std::string>, std::vector<occurrence>> by_pair;
    for (std::size_t s = 0; s < seed_preds.size(); ++s) {
        prediction_set p = dedup(seed_preds[s]);
        for (std::size_t k = 0; k < p.annotations.size(); ++k) {
            const annotation& ann = p.annotations[k];
            by_pair[ann.pair()].push_back({s, k, ann, tokenize(ann.span)});
        }
    }

    struct cluster {
        std::vector<const occurrence*> members;
        std::size_t min_seed, min_pos;
    };
    std::vector<cluster> kept;
    for (auto& [pair_key, occs] : by_pair) {
        std::vector<std::size_t> parent(occs.size());
        std::iota(parent.begin(), parent.end(), 0);
        std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
            while (parent[x] != x) x = parent[x] = parent[parent[x]];
            return x;
        };
        for (std::size_t i = 0; i < occs.size(); ++i)
            for (std::size_t j = i + 1; j < occs.size(); ++j)
                if (jaccard(occs[i].toks, occs[j].toks) >= cfg.merge_threshold)
                    parent[find(i)] = find(j);

        std::map<std::size_t, cluster> groups;
        for (std::size_t i = 0; i < occs.size(); ++i) {
            cluster& c = groups[find(i)];
            if (c.members.empty()) {
                c.min_seed = occs[i].seed;
                c.min_pos = occs[i].pos;
            } else if (occs[i].seed < c.min_seed ||
                       (occs[i].seed == c.min_seed && occs[i].pos < c.min_pos)) {
                c.min_seed = occs[i].seed;
                c.min_pos = occs[i].pos;
            }
            c.members.push_back(&occs[i]);
        }
        for (auto& [root, c] : groups) {
            std::set<std::size_t> seeds;
            for (const auto* m : c.members) seeds.insert(m->seed);
            if (seeds.size() >= cfg.merge_min_support) kept.push_back(std::move(c));
        }
    }

    std::sort(kept.begin(), kept.end(), [](const cluster& a, const cluster& b) {
        if (a.min_seed != b.min_seed) return a.min_seed < b.min_seed;
        return a.min_pos < b.min_pos;
    });

    prediction_set out;
    out.example_id = seed_preds.front().example_id;
    out.status = parse_status::valid;
    std::vector<std::string> tags;
    for (const auto& c : kept) {
        const occurrence* rep = nullptr;
        for (const auto* m : c.members) {
            if (rep == nullptr || m->ann.span.size() > rep->ann.span.size() ||
                (m->ann.span.size() == rep->ann.span.size() &&
                 (m->seed < rep->seed || (m->seed == rep->seed && m->pos < rep->pos))))
                rep = m;
        }
        out.annotations.push_back(rep->ann);
        tags.push_back("seed_merge:seed" + std::to_string(rep->seed));
    }
    out = dedup(out);
    tags.resize(out.annotations.size());
    if (provenance) *provenance = std::move(tags);
    return out;
}

namespace detail {

inline std::optional<std::string> normalize_label(const std::string& raw,
                                                  const std::vector<std::string>& inventory,
                                                  double threshold) {
    std::string t = trim(raw);
    std::string folded = t;
    std::transform(folded.begin(), folded.end(), folded.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (const auto& label : inventory) {
        std::string lf = label;
        std::transform(lf.begin(), lf.end(), lf.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (lf == folded) return label;
    }
    double best = -1.0;
    const std::string* best_label = nullptr;
    for (const auto& label : inventory) {
        double s = edit_similarity(t, label);
        if (s > best) {
            best = s;
            best_label = &label;
        }
    }
    if (best_label != nullptr && best >= threshold) return *best_label;
    return std::nullopt;
}

}  // namespace detail

/// Pools triplets from several inference stages, normalizes near-miss labels
/// onto the ontology, grounds spans (verbatim, else a unique snap), and
/// keeps triplets whose weighted source agreement clears the acceptance
/// threshold. Snapped spans pay a score penalty.
inline prediction_set span_anchored_rerank(const std::vector<candidate_set>& candidates,
                                           const label_inventory& inv, const std::string& context,
                                           const refinement_config& cfg,
                                           std::vector<std::string>* provenance = nullptr) {
    if (candidates.empty())
        throw std::invalid_argument("span_anchored_rerank: no candidate sets");

    struct pooled {
        std::size_t source, pos;
        std::string code, sub;
        std::string original_span;
        std::string final_span;
        token_sequence original_toks;
        bool grounded = false;
        bool verbatim = false;
        bool snapped = false;
    };
    std::vector<pooled> pool;
    for (std::size_t s = 0; s < candidates.size(); ++s) {
        prediction_set pred = dedup(candidates[s].prediction);
        for (std::size_t k = 0; k < pred.annotations.size(); ++k) {
            const annotation& ann = pred.annotations[k];
            auto code = detail::normalize_label(ann.code, inv.codes(), cfg.fuzzy_label_threshold);
            if (!code) continue;
            auto sub = detail::normalize_label(ann.sub_code, inv.sub_names_under(*code),
                                               cfg.fuzzy_label_threshold);
            if (!sub) continue;
            pooled entry;
            entry.source = s;
            entry.pos = k;
            entry.code = *code;
            entry.sub = *sub;
            entry.original_span = ann.span;
            entry.original_toks = tokenize(ann.span);
            if (is_verbatim(ann.span, context)) {
                entry.final_span = ann.span;
                entry.grounded = true;
                entry.verbatim = true;
            } else {
                snap_result snap = snap_span(ann.span, context, cfg.snap_threshold, cfg.snap_margin);
                if (snap.accepted) {
                    entry.final_span = snap.snapped_span;
                    entry.grounded = true;
                    entry.snapped = true;
                }
            }
            pool.push_back(std::move(entry));
        }
    }

    struct scored_triplet {
        annotation ann;
        std::size_t first_source, first_pos;
        bool any_verbatim = false;
        bool all_snapped = true;
    };
    std::map<std::string, scored_triplet> distinct;
    auto key_of = [](const pooled& e) {
        return trim(e.code) + "\x1f" + trim(e.sub) + "\x1f" + trim(e.final_span);
    };
    for (const auto& e : pool) {
        if (!e.grounded) continue;
        auto [it, fresh] = distinct.try_emplace(key_of(e));
        if (fresh) {
            it->second.ann = annotation{e.code, e.sub, e.final_span};
            it->second.first_source = e.source;
            it->second.first_pos = e.pos;
        }
        it->second.any_verbatim = it->second.any_verbatim || e.verbatim;
        it->second.all_snapped = it->second.all_snapped && e.snapped;
    }

    std::vector<std::pair<scored_triplet, double>> retained;
    for (auto& [key, t] : distinct) {
        token_sequence final_toks = tokenize(t.ann.span);
        std::set<std::size_t> agreeing_sources;
        for (const auto& e : pool) {
            if (trim(e.code) != trim(t.ann.code) || trim(e.sub) != trim(t.ann.sub_code)) continue;
            if (jaccard(e.original_toks, final_toks) >= 0.5) agreeing_sources.insert(e.source);
        }
        double score = cfg.w_agree * static_cast<double>(agreeing_sources.size()) +
                       (t.any_verbatim ? cfg.w_verbatim : 0.0) -
                       (t.all_snapped ? cfg.w_snap : 0.0);
        if (score >= cfg.accept_threshold) retained.emplace_back(t, score);
    }
    std::sort(retained.begin(), retained.end(), [](const auto& a, const auto& b) {
        if (a.first.first_source != b.first.first_source)
            return a.first.first_source < b.first.first_source;
        return a.first.first_pos < b.first.first_pos;
    });

    prediction_set out;
    out.example_id = candidates.front().prediction.example_id;
    out.status = parse_status::valid;
    std::vector<std::string> tags;
    for (const auto& [t, score] : retained) {
        out.annotations.push_back(t.ann);
        tags.push_back("rerank:" + candidates[t.first_source].source);
    }
    out = dedup(out);
    tags.resize(out.annotations.size());
    if (provenance) *provenance = std::move(tags);
    return out;
}

}  // namespace eppc
