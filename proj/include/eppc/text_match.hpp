#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include "eppc/core.hpp"

namespace eppc {

/// Tokenized view of a text: normalized tokens plus the character range each
/// token occupies in the original string, so matched token windows can be
/// mapped back to verbatim source substrings.
struct token_sequence {
    std::vector<std::string> tokens;
    std::vector<std::size_t> begin_offsets;
    std::vector<std::size_t> end_offsets;  // past-the-end, aligned with begin_offsets

    std::size_t size() const { return tokens.size(); }
    bool empty() const { return tokens.empty(); }
};

namespace detail {

// ASCII whitespace plus UTF-8 NBSP (0xC2 0xA0). Returns the byte length of
// the whitespace run starting at i, or 0 if text[i] is not whitespace.
inline std::size_t space_len_at(const std::string& s, std::size_t i) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    if (std::isspace(c)) return 1;
    if (c == 0xC2 && i + 1 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0xA0) return 2;
    return 0;
}

inline bool is_strippable_punct(unsigned char c) { return std::ispunct(c) != 0; }

}  // namespace detail

/// Case-folds, splits on whitespace, and strips leading/trailing punctuation
/// from each token; tokens that become empty are dropped. Internal
/// punctuation (hyphens, apostrophes) is preserved.
inline token_sequence tokenize(const std::string& text) {
    token_sequence out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        std::size_t sl = detail::space_len_at(text, i);
        if (sl > 0) {
            i += sl;
            continue;
        }
        std::size_t begin = i;
        while (i < n && detail::space_len_at(text, i) == 0) ++i;
        std::size_t end = i;
        while (begin < end && detail::is_strippable_punct(static_cast<unsigned char>(text[begin])))
            ++begin;
        while (end > begin && detail::is_strippable_punct(static_cast<unsigned char>(text[end - 1])))
            --end;
        if (begin == end) continue;
        std::string tok = text.substr(begin, end - begin);
        std::transform(tok.begin(), tok.end(), tok.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        out.tokens.push_back(std::move(tok));
        out.begin_offsets.push_back(begin);
        out.end_offsets.push_back(end);
    }
    return out;
}

/// Set-level token Jaccard. Two empty sequences score 0, not 1: an empty
/// span must never count as grounded.
inline double jaccard(const token_sequence& a, const token_sequence& b) {
    std::set<std::string> sa(a.tokens.begin(), a.tokens.end());
    std::set<std::string> sb(b.tokens.begin(), b.tokens.end());
    if (sa.empty() && sb.empty()) return 0.0;
    std::size_t inter = 0;
    for (const auto& t : sa) inter += sb.count(t);
    std::size_t uni = sa.size() + sb.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double jaccard(const std::string& a, const std::string& b) {
    return jaccard(tokenize(a), tokenize(b));
}

/// Collapses every whitespace run to a single space and trims the ends.
inline std::string normalize_whitespace(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    std::size_t i = 0;
    bool pending_space = false;
    while (i < s.size()) {
        std::size_t sl = detail::space_len_at(s, i);
        if (sl > 0) {
            pending_space = !out.empty();
            i += sl;
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(s[i]);
        ++i;
    }
    return out;
}

/// True iff the whitespace-normalized span occurs contiguously in the
/// whitespace-normalized context. Empty spans are never verbatim.
inline bool is_verbatim(const std::string& span, const std::string& context) {
    std::string ns = normalize_whitespace(span);
    if (ns.empty()) return false;
    std::string nc = normalize_whitespace(context);
    return nc.find(ns) != std::string::npos;
}

struct snap_result {
    std::string snapped_span;
    double jaccard = 0.0;
    double margin = 0.0;
    bool accepted = false;
};

/// Searches contiguous token windows of the context, with window lengths
/// within two tokens of the span's own length, for a unique high-confidence
/// alignment. Accepts only when the best window clears the Jaccard threshold
/// and beats the runner-up by the margin. The snapped span is the original
/// context substring covered by the winning window.
inline snap_result snap_span(const std::string& span, const std::string& context,
                             double threshold = 0.72, double margin_threshold = 0.08) {
    snap_result result;
    token_sequence span_toks = tokenize(span);
    token_sequence ctx = tokenize(context);
    if (ctx.empty()) return result;

    const std::size_t span_len = span_toks.size();
    const std::size_t lo = span_len > 2 ? span_len - 2 : 1;
    const std::size_t hi = span_len + 2;

    double best = -1.0, second = 0.0;
    std::size_t best_start = 0, best_len = 0;
    for (std::size_t start = 0; start < ctx.size(); ++start) {
        for (std::size_t len = lo; len <= hi && start + len <= ctx.size(); ++len) {
            token_sequence window;
            window.tokens.assign(ctx.tokens.begin() + start, ctx.tokens.begin() + start + len);
            double j = jaccard(span_toks, window);
            if (j > best) {
                second = best < 0.0 ? 0.0 : best;
                best = j;
                best_start = start;
                best_len = len;
            } else if (j > second) {
                second = j;
            }
        }
    }
    if (best < 0.0) return result;

    result.jaccard = best;
    result.margin = best - second;
    result.accepted = best >= threshold && result.margin >= margin_threshold;
    std::size_t b = ctx.begin_offsets[best_start];
    std::size_t e = ctx.end_offsets[best_start + best_len - 1];
    result.snapped_span = context.substr(b, e - b);
    return result;
}

/// Levenshtein distance; used for fuzzy label normalization.
inline std::size_t edit_distance(const std::string& a, const std::string& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

/// 1 - dist/max_len on case-folded inputs; 1.0 for two empty strings.
inline double edit_similarity(const std::string& a, const std::string& b) {
    std::string fa = a, fb = b;
    auto fold = [](std::string& s) {
        std::transform(s.begin(), s.end(), s.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    };
    fold(fa);
    fold(fb);
    std::size_t longest = std::max(fa.size(), fb.size());
    if (longest == 0) return 1.0;
    return 1.0 - static_cast<double>(edit_distance(fa, fb)) / static_cast<double>(longest);
}

}  // namespace eppc
