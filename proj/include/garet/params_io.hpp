#ifndef GARET_PARAMS_IO_HPP
#define GARET_PARAMS_IO_HPP

#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "garet/core.hpp"
#include "garet/dataset.hpp"
#include "garet/encoder.hpp"

namespace garet {

inline constexpr int kParamsFormatVersion = 1;

/// Params file: a single JSON object
///   {"format":"garet-params","version":1,"C":..,"hidden":..,"pe_base":..,
///    "tensors":[{"name":"ts.weight","shape":[C,C],"data":[...row-major...]},...],
///    "provenance":{...}}
inline void save_params(const EncoderParams& p, std::ostream& os, const std::optional<Provenance>& prov = std::nullopt) {
    using nlohmann::json;
    json tensors = json::array();
    std::size_t k = 0;
    for (const Linear* l : p.layers()) {
        tensors.push_back({{"name", kTensorNames[k++]}, {"shape", {l->out, l->in}}, {"data", l->weight}});
        tensors.push_back({{"name", kTensorNames[k++]}, {"shape", {l->out}}, {"data", l->bias}});
    }
    json j = {{"format", "garet-params"}, {"version", kParamsFormatVersion}, {"C", p.channels}, {"hidden", p.hidden},
              {"pe_base", p.pe_base}, {"tensors", std::move(tensors)}};
    if (prov) j["provenance"] = detail::provenance_json(*prov);
    os << j.dump() << '\n';
}

inline void save_params(const EncoderParams& p, const std::string& path, const std::optional<Provenance>& prov = std::nullopt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    save_params(p, os, prov);
    if (!os) throw Error("write to '" + path + "' failed");
}

inline EncoderParams load_params(std::istream& is, const std::string& source = "<stream>",
                                 std::optional<Provenance>* prov = nullptr) {
    using nlohmann::json;
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ParseError(source + ": malformed params file (" + e.what() + ")");
    }
    try {
        if (j.value("format", "") != "garet-params") throw ParseError(source + ": not a garet params file");
        const int version = j.at("version").get<int>();
        if (version != kParamsFormatVersion)
            throw ParseError(source + ": unsupported params version " + std::to_string(version));
        EncoderParams p = EncoderParams::zeros(j.at("C").get<std::size_t>(), j.at("hidden").get<std::size_t>());
        p.pe_base = j.at("pe_base").get<double>();
        const auto& ts = j.at("tensors");
        auto views = p.tensors();
        if (ts.size() != views.size()) throw ParseError(source + ": expected " + std::to_string(views.size()) + " tensors");
        for (std::size_t k = 0; k < views.size(); ++k) {
            const auto& t = ts[k];
            if (t.at("name").get<std::string>() != kTensorNames[k])
                throw ParseError(source + ": tensor " + std::to_string(k) + " should be '" + kTensorNames[k] + "'");
            auto data = t.at("data").get<std::vector<double>>();
            if (data.size() != views[k].size())
                throw ParseError(source + ": tensor '" + kTensorNames[k] + "' has " + std::to_string(data.size()) +
                                 " values, expected " + std::to_string(views[k].size()));
            if (!all_finite(data)) throw ParseError(source + ": tensor '" + kTensorNames[k] + "' has non-finite values");
            std::copy(data.begin(), data.end(), views[k].begin());
        }
        if (prov) *prov = j.contains("provenance") ? std::optional(detail::provenance_from(j["provenance"])) : std::nullopt;
        return p;
    } catch (const json::exception& e) {
        throw ParseError(source + ": invalid params file (" + e.what() + ")");
    } catch (const ConfigError& e) {
        throw ParseError(source + ": " + e.what());
    }
}

inline EncoderParams load_params(const std::string& path, std::optional<Provenance>* prov = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NotFoundError("cannot open params file '" + path + "'");
    return load_params(is, path, prov);
}

}  // namespace garet

#endif  // GARET_PARAMS_IO_HPP
