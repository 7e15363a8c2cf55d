#pragma once

// Dataset file, version 1. Line-oriented text:
//
//   line 1      JSON header object, keys in this order:
//               format_version, n_patients, d_x, d_c, T, tau, y_mean, y_std,
//               provenance ("synthetic" | "semi" | "real"), gamma_h (number or null), seed
//   line 2..n+1 one patient per line, tab-separated:
//               id  X  C  A  y_factual  y_counterfactual  treated
//               X (T·d_x values, row-major) and C are comma-separated,
//               A is comma-separated 0/1, y_counterfactual is "NA" when absent.
//
// Doubles are written with 17 significant digits so values round-trip exactly.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dsw/errors.hpp"
#include "dsw/record.hpp"
#include "dsw/serialize.hpp"
#include "json.hpp"

namespace dsw {

inline constexpr int kDatasetVersion = 1;

enum class Provenance { synthetic, semi, real };

inline const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::synthetic: return "synthetic";
        case Provenance::semi: return "semi";
        case Provenance::real: return "real";
    }
    return "real";
}

inline Provenance parse_provenance(const std::string& s) {
    if (s == "synthetic") return Provenance::synthetic;
    if (s == "semi") return Provenance::semi;
    if (s == "real") return Provenance::real;
    throw ValidationError("unknown provenance '" + s + "'");
}

struct DatasetHeader {
    std::size_t d_x = 0;
    std::size_t d_c = 0;
    std::size_t T = 0;
    std::size_t tau = 1;
    double y_mean = 0.0;
    double y_std = 1.0;
    Provenance provenance = Provenance::real;
    std::optional<double> gamma_h;
    std::uint64_t seed = 0;
};

struct Dataset {
    DatasetHeader header;
    std::vector<PatientRecord> records;
};

/// Every record problem, prefixed by its line number when known.
inline std::vector<std::string> dataset_violations(const Dataset& ds) {
    std::vector<std::string> out;
    const auto& h = ds.header;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const auto& r = ds.records[i];
        for (auto& e : record_violations(r, h.T, h.d_x, h.d_c)) out.push_back("record " + std::to_string(i + 1) + " " + e);
        const bool want_cf = h.provenance != Provenance::real;
        if (r.y_counterfactual.has_value() != want_cf) {
            out.push_back("record " + std::to_string(i + 1) + " " + r.id + ": y_counterfactual must be " +
                          (want_cf ? "present" : "absent") + " for provenance " + to_string(h.provenance));
        }
    }
    return out;
}

inline void validate_dataset(const Dataset& ds) {
    auto errs = dataset_violations(ds);
    if (errs.empty()) return;
    std::string msg = "dataset has " + std::to_string(errs.size()) + " invalid field(s):";
    for (std::size_t i = 0; i < errs.size() && i < 20; ++i) msg += "\n  " + errs[i];
    if (errs.size() > 20) msg += "\n  ...";
    throw ValidationError(msg);
}

inline std::string header_line(const DatasetHeader& h, std::size_t n) {
    nlohmann::ordered_json j;
    j["format_version"] = kDatasetVersion;
    j["n_patients"] = n;
    j["d_x"] = h.d_x;
    j["d_c"] = h.d_c;
    j["T"] = h.T;
    j["tau"] = h.tau;
    j["y_mean"] = h.y_mean;
    j["y_std"] = h.y_std;
    j["provenance"] = to_string(h.provenance);
    j["gamma_h"] = h.gamma_h ? nlohmann::ordered_json(*h.gamma_h) : nlohmann::ordered_json(nullptr);
    j["seed"] = h.seed;
    return j.dump();
}

namespace detail {

inline void append_list(std::string& out, const std::vector<double>& xs, bool integral = false) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += integral ? std::to_string(static_cast<int>(xs[i])) : format_double(xs[i]);
    }
}

inline std::vector<double> parse_list(std::string_view s, const char* what) {
    std::vector<double> out;
    if (s.empty()) return out;
    for (auto f : split_fields(s, ',')) out.push_back(parse_double(f, what));
    return out;
}

}  // namespace detail

inline std::string record_line(const PatientRecord& r) {
    std::string out = r.id;
    out += '\t';
    detail::append_list(out, r.X);
    out += '\t';
    detail::append_list(out, r.C);
    out += '\t';
    detail::append_list(out, r.A, true);
    out += '\t';
    out += format_double(r.y_factual);
    out += '\t';
    out += r.y_counterfactual ? format_double(*r.y_counterfactual) : std::string("NA");
    out += '\t';
    out += r.treated ? '1' : '0';
    return out;
}

inline std::string dataset_to_string(const Dataset& ds) {
    std::string out = header_line(ds.header, ds.records.size()) + "\n";
    for (const auto& r : ds.records) out += record_line(r) + "\n";
    return out;
}

/// Parses and validates a dataset. Schema problems raise ValidationError listing
/// the offending fields; syntax problems raise CorruptFileError.
inline Dataset dataset_from_string(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw CorruptFileError("dataset: empty file");
    Dataset ds;
    std::size_t n = 0;
    try {
        auto j = nlohmann::json::parse(line);
        const int version = j.at("format_version").get<int>();
        if (version != kDatasetVersion) {
            throw VersionMismatchError("dataset: unsupported format_version " + std::to_string(version));
        }
        n = j.at("n_patients").get<std::size_t>();
        auto& h = ds.header;
        h.d_x = j.at("d_x").get<std::size_t>();
        h.d_c = j.at("d_c").get<std::size_t>();
        h.T = j.at("T").get<std::size_t>();
        h.tau = j.at("tau").get<std::size_t>();
        h.y_mean = j.at("y_mean").get<double>();
        h.y_std = j.at("y_std").get<double>();
        h.provenance = parse_provenance(j.at("provenance").get<std::string>());
        if (!j.at("gamma_h").is_null()) h.gamma_h = j.at("gamma_h").get<double>();
        h.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFileError(std::string("dataset header: ") + e.what());
    }
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = split_fields(line, '\t');
        if (f.size() != 7) {
            throw CorruptFileError("dataset line " + std::to_string(lineno) + ": expected 7 fields, got " +
                                   std::to_string(f.size()));
        }
        PatientRecord r;
        r.id = std::string(f[0]);
        r.T = ds.header.T;
        r.d_x = ds.header.d_x;
        r.X = detail::parse_list(f[1], "X");
        r.C = detail::parse_list(f[2], "C");
        r.A = detail::parse_list(f[3], "A");
        r.y_factual = parse_double(f[4], "y_factual");
        if (f[5] != "NA") r.y_counterfactual = parse_double(f[5], "y_counterfactual");
        if (f[6] != "0" && f[6] != "1") throw CorruptFileError("dataset line " + std::to_string(lineno) + ": treated must be 0/1");
        r.treated = f[6] == "1";
        ds.records.push_back(std::move(r));
    }
    if (ds.records.size() != n) {
        throw CorruptFileError("dataset: header declares " + std::to_string(n) + " patients, found " +
                               std::to_string(ds.records.size()));
    }
    validate_dataset(ds);
    return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << dataset_to_string(ds);
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return dataset_from_string(ss.str());
}

}  // namespace dsw
