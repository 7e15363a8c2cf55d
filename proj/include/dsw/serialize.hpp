#pragma once

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <string_view>
#include <vector>

#include "dsw/errors.hpp"
#include "dsw/model.hpp"
#include "json.hpp"

namespace dsw {

/// 17 significant digits: enough for an exact double round trip.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(std::string_view s, const char* what) {
    std::string tmp(s);
    if (tmp.empty()) throw CorruptFileError(std::string("empty number in ") + what);
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(tmp.c_str(), &end);
    if (end != tmp.c_str() + tmp.size()) throw CorruptFileError(std::string("bad number '") + tmp + "' in " + what);
    return v;
}

/// Splits on a single-character delimiter, keeping empty fields.
inline std::vector<std::string_view> split_fields(std::string_view s, char delim) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(delim, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"d_x", c.d_x},
            {"d_c", c.d_c},
            {"d_u", c.d_u},
            {"d_q", c.d_q},
            {"d_h", c.d_h},
            {"d_z", c.d_z},
            {"T", c.T},
            {"outcome_hidden", c.outcome_hidden},
            {"gamma", c.gamma},
            {"lambda", c.lambda},
            {"treatment_head_input", to_string(c.treatment_head_input)},
            {"gru_candidate_matrix", to_string(c.gru_candidate_matrix)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig c;
        c.d_x = j.at("d_x").get<std::size_t>();
        c.d_c = j.at("d_c").get<std::size_t>();
        c.d_u = j.at("d_u").get<std::size_t>();
        c.d_q = j.at("d_q").get<std::size_t>();
        c.d_h = j.at("d_h").get<std::size_t>();
        c.d_z = j.at("d_z").get<std::size_t>();
        c.T = j.at("T").get<std::size_t>();
        c.outcome_hidden = j.at("outcome_hidden").get<std::vector<std::size_t>>();
        c.gamma = j.at("gamma").get<double>();
        c.lambda = j.at("lambda").get<double>();
        c.treatment_head_input = parse_treatment_head_input(j.at("treatment_head_input").get<std::string>());
        c.gru_candidate_matrix = parse_gru_candidate_matrix(j.at("gru_candidate_matrix").get<std::string>());
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFileError(std::string("model config: ") + e.what());
    }
}

}  // namespace dsw
