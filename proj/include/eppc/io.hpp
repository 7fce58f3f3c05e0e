#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eppc/annotation.hpp"
#include "eppc/ontology.hpp"
#include "eppc/ot.hpp"
#include "eppc/text_match.hpp"

namespace eppc {

struct raw_output {
    std::string example_id;
    std::string text;
};

namespace io {

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open input file '" + path + "'");
    return in;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot open output file '" + path + "'");
    return out;
}

template <typename Fn>
inline void for_each_jsonl(const std::string& path, Fn&& fn) {
    std::ifstream in = open_input(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty()) continue;
        json doc;
        try {
            doc = json::parse(t);
        } catch (const json::exception& e) {
            throw data_error(path + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
        }
        fn(doc, lineno);
    }
}

inline std::string require_string(const json& doc, const char* key, const std::string& where) {
    auto it = doc.find(key);
    if (it == doc.end() || !it->is_string())
        throw data_error(where + ": missing string field '" + key + "'");
    return it->get<std::string>();
}

inline std::vector<annotation> read_results_field(const json& doc, const std::string& where) {
    auto it = doc.find("results");
    if (it == doc.end() || !it->is_array())
        throw data_error(where + ": missing 'results' array");
    std::vector<annotation> anns;
    for (const auto& entry : *it) anns.push_back(detail::annotation_from_json(entry));
    return anns;
}

inline label_inventory load_inventory_file(const std::string& path) {
    std::ifstream in = open_input(path);
    return load_inventory(in);
}

/// Gold corpus: one JSON document per line with example_id, context,
/// sentence, and the results array. Every gold span must occur in its
/// context up to whitespace normalization.
inline std::vector<gold_example> load_gold_file(const std::string& path) {
    std::vector<gold_example> out;
    for_each_jsonl(path, [&](const json& doc, std::size_t lineno) {
        std::string where = path + ":" + std::to_string(lineno);
        gold_example g;
        g.example_id = require_string(doc, "example_id", where);
        g.context = require_string(doc, "context", where);
        g.sentence = doc.contains("sentence") ? require_string(doc, "sentence", where) : g.context;
        g.annotations = read_results_field(doc, where);
        for (const auto& ann : g.annotations) {
            if (!is_verbatim(ann.span, g.context))
                throw data_error(where + ": gold span '" + ann.span +
                                 "' does not occur in the context");
        }
        out.push_back(std::move(g));
    });
    return out;
}

inline std::vector<prediction_set> load_predictions_file(const std::string& path) {
    std::vector<prediction_set> out;
    for_each_jsonl(path, [&](const json& doc, std::size_t lineno) {
        std::string where = path + ":" + std::to_string(lineno);
        prediction_set p;
        p.example_id = require_string(doc, "example_id", where);
        p.status = doc.contains("parse_status")
                       ? parse_status_from_string(require_string(doc, "parse_status", where))
                       : parse_status::valid;
        p.annotations = read_results_field(doc, where);
        if (p.status == parse_status::invalid && !p.annotations.empty())
            throw data_error(where + ": invalid parse status with nonempty results");
        out.push_back(std::move(p));
    });
    return out;
}

inline void write_predictions_file(const std::string& path,
                                   const std::vector<prediction_set>& preds) {
    std::ofstream out = open_output(path);
    for (const auto& p : preds) {
        json j;
        j["example_id"] = p.example_id;
        j["parse_status"] = to_string(p.status);
        j["results"] = json::array();
        for (const auto& ann : p.annotations) j["results"].push_back(detail::annotation_to_json(ann));
        out << j.dump() << "\n";
    }
}

inline std::vector<raw_output> load_raw_outputs_file(const std::string& path) {
    std::vector<raw_output> out;
    for_each_jsonl(path, [&](const json& doc, std::size_t lineno) {
        std::string where = path + ":" + std::to_string(lineno);
        out.push_back({require_string(doc, "example_id", where),
                       require_string(doc, "text", where)});
    });
    return out;
}

/// Representation export: {"example_id": ..., "values": [d floats]} per line.
inline std::vector<representation_vector> load_representations_file(const std::string& path) {
    std::vector<representation_vector> out;
    for_each_jsonl(path, [&](const json& doc, std::size_t lineno) {
        std::string where = path + ":" + std::to_string(lineno);
        representation_vector r;
        r.example_id = require_string(doc, "example_id", where);
        auto it = doc.find("values");
        if (it == doc.end() || !it->is_array())
            throw data_error(where + ": missing 'values' array");
        for (const auto& v : *it) {
            if (!v.is_number()) throw data_error(where + ": non-numeric value entry");
            r.values.push_back(v.get<double>());
        }
        if (r.values.empty()) throw data_error(where + ": empty representation vector");
        out.push_back(std::move(r));
    });
    return out;
}

/// Embedding file: one record per line, label identifier then the vector:
///   identifier <TAB> v1 v2 v3 ...
/// Sub-code identifiers use the "parent::name" form.
inline std::map<std::string, std::vector<double>> load_embeddings_file(const std::string& path) {
    std::map<std::string, std::vector<double>> out;
    std::ifstream in = open_input(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw data_error(path + ":" + std::to_string(lineno) + ": expected TAB separator");
        std::string key = trim(line.substr(0, tab));
        std::vector<double> values;
        std::istringstream rest(line.substr(tab + 1));
        double v;
        while (rest >> v) values.push_back(v);
        if (key.empty() || values.empty())
            throw data_error(path + ":" + std::to_string(lineno) + ": malformed embedding record");
        if (!out.emplace(key, std::move(values)).second)
            throw data_error(path + ":" + std::to_string(lineno) + ": duplicate label '" + key + "'");
    }
    return out;
}

/// Named vector map on disk: a text header (magic, entry count, one
/// "name dim" line per entry) followed by row-major little-endian float64
/// payloads in header order.
struct named_vector_map {
    std::map<std::string, std::vector<double>> entries;
};

inline void write_vector_map(const std::string& path, const named_vector_map& vm) {
    std::ofstream out = open_output(path);
    out << "EPPCVEC1\n" << vm.entries.size() << "\n";
    for (const auto& [name, values] : vm.entries) out << name << " " << values.size() << "\n";
    for (const auto& [name, values] : vm.entries) {
        for (double v : values) {
            std::uint64_t bits;
            static_assert(sizeof(bits) == sizeof(v));
            std::memcpy(&bits, &v, sizeof(bits));
            unsigned char bytes[8];
            for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFF);
            out.write(reinterpret_cast<const char*>(bytes), 8);
        }
    }
}

inline named_vector_map load_vector_map(const std::string& path) {
    std::ifstream in = open_input(path);
    std::string magic;
    std::getline(in, magic);
    if (trim(magic) != "EPPCVEC1") throw data_error(path + ": bad magic '" + magic + "'");
    std::string count_line;
    std::getline(in, count_line);
    std::size_t n = 0;
    try {
        n = std::stoul(trim(count_line));
    } catch (const std::exception&) {
        throw data_error(path + ": bad entry count");
    }
    std::vector<std::pair<std::string, std::size_t>> header;
    for (std::size_t i = 0; i < n; ++i) {
        std::string line;
        if (!std::getline(in, line)) throw data_error(path + ": truncated header");
        std::size_t sp = line.find_last_of(' ');
        if (sp == std::string::npos) throw data_error(path + ": malformed header line '" + line + "'");
        std::string name = trim(line.substr(0, sp));
        std::size_t dim = std::stoul(trim(line.substr(sp + 1)));
        header.emplace_back(name, dim);
    }
    named_vector_map vm;
    for (const auto& [name, dim] : header) {
        std::vector<double> values(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            unsigned char bytes[8];
            if (!in.read(reinterpret_cast<char*>(bytes), 8))
                throw data_error(path + ": truncated payload for '" + name + "'");
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
            double v;
            std::memcpy(&v, &bits, sizeof(v));
            values[i] = v;
        }
        if (!vm.entries.emplace(name, std::move(values)).second)
            throw data_error(path + ": duplicate entry '" + name + "'");
    }
    return vm;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out = open_output(path);
    out << content;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in = open_input(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace io
}  // namespace eppc
