#pragma once

#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "eppc/core.hpp"

namespace eppc {

/// The hierarchical label inventory: high-level codes and their sub-codes,
/// each with a short textual description. Load order is frozen and defines
/// the indexing used by every vector and matrix built from the inventory.
///
/// Sub-codes are identified by (parent code, name): the same sub-code name
/// under two different parents occupies two distinct slots.
class label_inventory {
public:
    struct sub_code_entry {
        std::string code;  // parent
        std::string name;
    };

    label_inventory(std::vector<std::string> codes, std::vector<sub_code_entry> sub_codes,
                    std::map<std::string, std::string> descriptions)
        : codes_(std::move(codes)), sub_codes_(std::move(sub_codes)),
          descriptions_(std::move(descriptions)) {
        if (codes_.empty()) throw data_error("inventory: no codes defined");
        for (std::size_t i = 0; i < codes_.size(); ++i) {
            if (!code_index_.emplace(codes_[i], i).second)
                throw data_error("inventory: duplicate code '" + codes_[i] + "'");
        }
        for (std::size_t i = 0; i < sub_codes_.size(); ++i) {
            const auto& sc = sub_codes_[i];
            if (!code_index_.count(sc.code))
                throw data_error("inventory: sub-code '" + sc.name +
                                 "' references unknown parent '" + sc.code + "'");
            if (!sub_index_.emplace(std::make_pair(sc.code, sc.name), codes_.size() + i).second)
                throw data_error("inventory: duplicate sub-code '" + sc.name + "' under '" +
                                 sc.code + "'");
            subs_by_name_[sc.name].push_back(sc.code);
        }
    }

    std::size_t dimension() const { return codes_.size() + sub_codes_.size(); }
    const std::vector<std::string>& codes() const { return codes_; }
    const std::vector<sub_code_entry>& sub_codes() const { return sub_codes_; }

    bool has_code(const std::string& code) const { return code_index_.count(trim(code)) > 0; }

    std::optional<std::size_t> code_index(const std::string& code) const {
        auto it = code_index_.find(trim(code));
        if (it == code_index_.end()) return std::nullopt;
        return it->second;
    }

    /// Index of (code, sub) in the combined inventory, or nullopt when the
    /// pair is not part of the ontology.
    std::optional<std::size_t> sub_index(const std::string& code, const std::string& sub) const {
        auto it = sub_index_.find(std::make_pair(trim(code), trim(sub)));
        if (it == sub_index_.end()) return std::nullopt;
        return it->second;
    }

    bool has_pair(const std::string& code, const std::string& sub) const {
        return sub_index(code, sub).has_value();
    }

    /// Parents under which a sub-code name exists (may be several).
    std::vector<std::string> parents_of_sub_name(const std::string& sub) const {
        auto it = subs_by_name_.find(trim(sub));
        if (it == subs_by_name_.end()) return {};
        return it->second;
    }

    /// Sub-code names under one parent, in inventory order.
    std::vector<std::string> sub_names_under(const std::string& code) const {
        std::vector<std::string> out;
        for (const auto& sc : sub_codes_)
            if (sc.code == code) out.push_back(sc.name);
        return out;
    }

    /// Canonical textual key for a combined-inventory slot: the code name for
    /// code slots, "parent::name" for sub-code slots. This is the identifier
    /// expected in embedding files.
    std::string label_key(std::size_t index) const {
        if (index < codes_.size()) return codes_[index];
        const auto& sc = sub_codes_[index - codes_.size()];
        return sc.code + "::" + sc.name;
    }

    std::string description(const std::string& label_key) const {
        auto it = descriptions_.find(label_key);
        return it == descriptions_.end() ? "" : it->second;
    }

private:
    std::vector<std::string> codes_;
    std::vector<sub_code_entry> sub_codes_;
    std::map<std::string, std::string> descriptions_;
    std::map<std::string, std::size_t> code_index_;
    std::map<std::pair<std::string, std::string>, std::size_t> sub_index_;
    std::map<std::string, std::vector<std::string>> subs_by_name_;
};

/// Multi-hot indicator over the combined code + sub-code inventory.
struct ontology_vector {
    std::vector<double> bits;

    std::size_t dimension() const { return bits.size(); }
    bool all_zero() const {
        for (double b : bits)
            if (b != 0.0) return false;
        return true;
    }
};

using prior_matrix = matrix;

/// Parses the line-delimited inventory file. Each non-blank, non-comment
/// line holds four tab-separated fields:
///   kind (code|sub_code) <TAB> identifier <TAB> parent <TAB> description
/// Parent is empty for codes. Document order defines vector indexing.
inline label_inventory load_inventory(std::istream& in) {
    std::vector<std::string> codes;
    std::vector<label_inventory::sub_code_entry> subs;
    std::map<std::string, std::string> descriptions;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, '\t')) fields.push_back(trim(field));
        while (fields.size() < 4) fields.emplace_back();
        if (fields.size() > 4)
            throw data_error("inventory line " + std::to_string(lineno) + ": too many fields");
        const std::string& kind = fields[0];
        const std::string& ident = fields[1];
        const std::string& parent = fields[2];
        const std::string& desc = fields[3];
        if (ident.empty())
            throw data_error("inventory line " + std::to_string(lineno) + ": empty identifier");
        if (kind == "code") {
            codes.push_back(ident);
            descriptions[ident] = desc;
        } else if (kind == "sub_code") {
            if (parent.empty())
                throw data_error("inventory line " + std::to_string(lineno) +
                                 ": sub-code without parent");
            subs.push_back({parent, ident});
            descriptions[parent + "::" + ident] = desc;
        } else {
            throw data_error("inventory line " + std::to_string(lineno) + ": unknown kind '" +
                             kind + "'");
        }
    }
    return label_inventory(std::move(codes), std::move(subs), std::move(descriptions));
}

inline label_inventory load_inventory(const std::string& text) {
    std::istringstream in(text);
    return load_inventory(in);
}

/// Builds the multi-hot vector for one example: the union of the code bit and
/// (code, sub-code) bit of every annotation. Duplicate annotations are
/// idempotent; an empty list yields the all-zero vector.
inline ontology_vector build_ontology_vector(
    const label_inventory& inv,
    const std::vector<std::pair<std::string, std::string>>& annotations) {
    ontology_vector v;
    v.bits.assign(inv.dimension(), 0.0);
    for (const auto& [code, sub] : annotations) {
        auto ci = inv.code_index(code);
        if (!ci)
            throw data_error("unknown code '" + trim(code) + "'");
        auto si = inv.sub_index(code, sub);
        if (!si) {
            if (!inv.parents_of_sub_name(sub).empty())
                throw data_error("sub-code '" + trim(sub) + "' does not belong to code '" +
                                 trim(code) + "'");
            throw data_error("unknown sub-code '" + trim(sub) + "'");
        }
        v.bits[*ci] = 1.0;
        v.bits[*si] = 1.0;
    }
    return v;
}

/// Prior-smoothed cosine-style similarity between two ontology vectors,
/// clipped to [0, 1]. A zero vector has no active labels and is treated as
/// maximally dissimilar to everything: the result is 0.
inline double target_similarity(const ontology_vector& a, const ontology_vector& b,
                                const prior_matrix& prior) {
    if (a.dimension() != b.dimension() || prior.rows() != a.dimension() ||
        prior.cols() != a.dimension())
        throw std::invalid_argument("target_similarity: dimension mismatch");
    double na2 = dot(a.bits, a.bits);
    double nb2 = dot(b.bits, b.bits);
    if (na2 == 0.0 || nb2 == 0.0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        if (a.bits[i] == 0.0) continue;
        double row = 0.0;
        for (std::size_t j = 0; j < b.bits.size(); ++j) {
            if (b.bits[j] == 0.0) continue;
            row += prior(i, j) * b.bits[j];
        }
        s += a.bits[i] * row;
    }
    s /= std::sqrt(na2 * nb2);
    if (s < 0.0) return 0.0;
    if (s > 1.0) return 1.0;
    return s;
}

inline prior_matrix identity_prior(const label_inventory& inv) {
    return matrix::identity(inv.dimension());
}

/// Builds the semantic prior from per-label description embeddings: pairwise
/// cosine similarity with negatives clamped to 0 and the diagonal forced to
/// 1, so self-similarity of single-label examples stays exactly 1.
inline prior_matrix build_prior(const label_inventory& inv,
                                const std::map<std::string, std::vector<double>>& embeddings) {
    const std::size_t n = inv.dimension();
    std::vector<const std::vector<double>*> vecs(n, nullptr);
    std::size_t dim = 0;
    for (std::size_t i = 0; i < n; ++i) {
        auto it = embeddings.find(inv.label_key(i));
        if (it == embeddings.end())
            throw data_error("missing embedding for label '" + inv.label_key(i) + "'");
        if (i == 0)
            dim = it->second.size();
        else if (it->second.size() != dim)
            throw data_error("embedding dimension mismatch for label '" + inv.label_key(i) + "'");
        vecs[i] = &it->second;
    }
    prior_matrix p(n, n, 0.0);
    std::vector<double> norms(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        norms[i] = l2_norm(*vecs[i]);
        if (norms[i] == 0.0)
            throw data_error("zero-norm embedding for label '" + inv.label_key(i) + "'");
    }
    for (std::size_t i = 0; i < n; ++i) {
        p(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            double c = dot(*vecs[i], *vecs[j]) / (norms[i] * norms[j]);
            if (c < 0.0) c = 0.0;
            if (c > 1.0) c = 1.0;
            p(i, j) = c;
            p(j, i) = c;
        }
    }
    return p;
}

}  // namespace eppc
