#ifndef GARET_DATASET_HPP
#define GARET_DATASET_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "garet/core.hpp"
#include "garet/finetune.hpp"
#include "garet/video.hpp"

namespace garet {

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw ParseError("unknown split '" + s + "' (expected train or test)");
}

struct ClassEntry {
    std::string name;
    std::size_t count = 0;
    bool operator==(const ClassEntry&) const = default;
};

/// Reproducibility stamp carried by generated artifacts.
struct Provenance {
    std::string tool_version;
    std::uint64_t seed = 0;
    std::string config_hash;
    bool operator==(const Provenance&) const = default;
};

struct Dataset {
    std::string id;
    std::size_t channels = 0;
    std::vector<VideoFeatures> videos;
    std::vector<Split> splits;  // parallel to videos
    std::vector<ClassEntry> class_catalog;
    std::optional<Provenance> provenance;

    /// Rebuilds the id index and class catalog counts; checks invariants.
    void finalize() {
        if (splits.size() != videos.size()) throw ShapeError("dataset '" + id + "': split list does not match videos");
        index_.clear();
        for (std::size_t k = 0; k < videos.size(); ++k) {
            const auto& v = videos[k];
            if (v.channels != channels)
                throw ShapeError("dataset '" + id + "': video '" + v.id + "' has C=" + std::to_string(v.channels) +
                                 ", dataset C=" + std::to_string(channels));
            if (!index_.emplace(v.id, k).second) throw PreconditionError("dataset '" + id + "': duplicate video id '" + v.id + "'");
        }
        // Catalog order: existing entries first, then unseen classes in order
        // of first appearance.
        std::map<std::string, std::size_t> counts;
        std::vector<std::string> seen;
        for (const auto& v : videos) {
            if (!v.class_label) continue;
            if (counts[*v.class_label]++ == 0) seen.push_back(*v.class_label);
        }
        std::vector<ClassEntry> catalog;
        for (const auto& e : class_catalog)
            if (counts.count(e.name)) catalog.push_back({e.name, counts[e.name]});
        for (const auto& name : seen) {
            bool known = std::any_of(catalog.begin(), catalog.end(), [&](const ClassEntry& e) { return e.name == name; });
            if (!known) catalog.push_back({name, counts[name]});
        }
        class_catalog = std::move(catalog);
    }

    std::optional<std::size_t> find(const std::string& video_id) const {
        auto it = index_.find(video_id);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }
    const VideoFeatures& at(const std::string& video_id) const {
        auto k = find(video_id);
        if (!k) throw NotFoundError("unknown video id '" + video_id + "'");
        return videos[*k];
    }

    std::vector<std::size_t> indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k < videos.size(); ++k)
            if (splits[k] == s) out.push_back(k);
        return out;
    }
    std::vector<std::size_t> indices(Split s, const std::string& cls) const {
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k < videos.size(); ++k)
            if (splits[k] == s && videos[k].class_label == cls) out.push_back(k);
        return out;
    }

    bool operator==(const Dataset& o) const {
        return id == o.id && channels == o.channels && videos == o.videos && splits == o.splits &&
               class_catalog == o.class_catalog && provenance == o.provenance;
    }

  private:
    std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticConfig {
    std::size_t class_count = 8;
    std::size_t videos_per_class = 100;
    double train_fraction = 0.75;
    std::size_t persons = 12;
    std::size_t frames = 8;
    std::size_t channels = 16;
    double noise_scale = 0.9;
    std::uint64_t seed = 0;

    void validate() const {
        if (class_count == 0 || videos_per_class == 0 || persons == 0 || frames == 0 || channels == 0)
            throw ConfigError("synthetic config: all counts must be positive");
        if (channels % 4 != 0) throw ConfigError("synthetic config: channels must be divisible by 4");
        if (!(noise_scale >= 0.0)) throw ConfigError("synthetic config: noise_scale must be >= 0");
        if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("synthetic config: train_fraction must lie in (0,1)");
    }

    std::string canonical() const {
        std::ostringstream os;
        os.precision(17);
        os << "classes=" << class_count << ";per_class=" << videos_per_class << ";train_fraction=" << train_fraction
           << ";persons=" << persons << ";frames=" << frames << ";channels=" << channels << ";noise=" << noise_scale
           << ";seed=" << seed;
        return os.str();
    }
};

inline std::vector<std::string> synthetic_class_names(std::size_t count) {
    static const char* const kActs[] = {"spike", "pass", "set", "winpoint"};
    const std::size_t acts = (count + 1) / 2;
    std::vector<std::string> names;
    for (std::size_t c = 0; c < count; ++c) {
        const std::size_t a = c % acts;
        const std::string side = c < acts ? "l-" : "r-";
        std::string act = a < 4 ? kActs[a] : "act" + std::to_string(a);
        names.push_back(side + act);
    }
    return names;
}

/// Team-sport-like synthetic clips. Classes come in left/right mirrored
/// pairs that share appearance prototypes and differ by formation side.
/// Each activity has a formation (anchor per role) derived from a common base
/// plus an activity-specific offset, a per-role drift, and a per-role
/// appearance prototype. Videos add Gaussian jitter scaled by noise_scale.
inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    Rng rng = derive_rng(cfg.seed, {0xda7a});
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const std::size_t n = cfg.persons, t_len = cfg.frames, c = cfg.channels;
    const std::size_t acts = (cfg.class_count + 1) / 2;
    const auto names = synthetic_class_names(cfg.class_count);

    // Shared base formation and role appearance.
    std::vector<Position> base(n);
    for (auto& p : base) p = {0.1 + 0.3 * unit(rng), 0.1 + 0.8 * unit(rng)};
    std::vector<Vec> role_app(n, Vec(c));
    for (auto& r : role_app)
        for (double& x : r) x = gauss(rng);

    struct Activity {
        std::vector<Position> anchor;
        std::vector<Position> drift;
        std::vector<Vec> app;
    };
    std::vector<Activity> activity(acts);
    for (auto& a : activity) {
        a.anchor.resize(n);
        a.drift.resize(n);
        a.app.assign(n, Vec(c));
        for (std::size_t r = 0; r < n; ++r) {
            a.anchor[r] = {std::clamp(base[r].x + 0.1 * gauss(rng), 0.02, 0.48),
                           std::clamp(base[r].y + 0.15 * gauss(rng), 0.02, 0.98)};
            a.drift[r] = {0.01 * gauss(rng), 0.01 * gauss(rng)};
            for (std::size_t k = 0; k < c; ++k) a.app[r][k] = role_app[r][k] + 0.6 * gauss(rng);
        }
    }

    const double pos_sigma = 0.15 * cfg.noise_scale;
    const double app_sigma = cfg.noise_scale;
    const std::size_t n_train = std::max<std::size_t>(
        1, std::min<std::size_t>(cfg.videos_per_class - 1,
                                 static_cast<std::size_t>(std::lround(cfg.train_fraction * cfg.videos_per_class))));

    Dataset ds;
    ds.id = "synthetic-" + std::to_string(cfg.seed);
    ds.channels = c;
    for (const auto& name : names) ds.class_catalog.push_back({name, 0});
    for (std::size_t cls = 0; cls < cfg.class_count; ++cls) {
        const Activity& a = activity[cls % acts];
        const bool mirrored = cls >= acts;
        for (std::size_t vi = 0; vi < cfg.videos_per_class; ++vi) {
            char idbuf[64];
            std::snprintf(idbuf, sizeof idbuf, "c%02zu-v%03zu", cls, vi);
            VideoFeatures v(idbuf, t_len, n, c);
            v.class_label = names[cls];
            for (std::size_t r = 0; r < n; ++r) {
                const Position off{pos_sigma * gauss(rng), pos_sigma * gauss(rng)};
                const Position vel{a.drift[r].x + 0.1 * pos_sigma * gauss(rng), a.drift[r].y + 0.1 * pos_sigma * gauss(rng)};
                Vec app_off(c);
                for (double& x : app_off) x = app_sigma * gauss(rng);
                for (std::size_t t = 0; t < t_len; ++t) {
                    const double tt = static_cast<double>(t);
                    double x = a.anchor[r].x + off.x + tt * vel.x;
                    const double y = a.anchor[r].y + off.y + tt * vel.y;
                    if (mirrored) x = 1.0 - x;
                    v.pos(t, r) = {std::clamp(x, 0.0, 1.0), std::clamp(y, 0.0, 1.0)};
                    auto dst = v.app(t, r);
                    for (std::size_t k = 0; k < c; ++k) dst[k] = a.app[r][k] + app_off[k] + 0.2 * app_sigma * gauss(rng);
                }
            }
            ds.videos.push_back(std::move(v));
            ds.splits.push_back(vi < n_train ? Split::train : Split::test);
        }
    }
    ds.provenance = Provenance{std::string(kToolVersion), cfg.seed, hex64(fnv1a64(cfg.canonical()))};
    ds.finalize();
    return ds;
}

/// Simulated annotator: positive iff the video's ground-truth class equals
/// the target class.
inline std::vector<Annotation> oracle_annotate(std::span<const std::string> selected_ids, const std::string& target_class,
                                               const Dataset& ds) {
    std::vector<Annotation> out;
    for (const auto& vid : selected_ids) {
        const VideoFeatures& v = ds.at(vid);
        if (!v.class_label) throw PreconditionError("oracle_annotate: video '" + vid + "' has no ground-truth class");
        out.push_back({vid, *v.class_label == target_class ? Label::positive : Label::negative, "oracle", 0});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset file (JSON lines). Line 1 is the header, each following line one
// video record; see docs/formats.md.

inline constexpr int kDatasetFormatVersion = 1;

namespace detail {

inline nlohmann::json provenance_json(const Provenance& p) {
    return {{"tool_version", p.tool_version}, {"seed", p.seed}, {"config_hash", p.config_hash}};
}

inline Provenance provenance_from(const nlohmann::json& j) {
    return {j.at("tool_version").get<std::string>(), j.at("seed").get<std::uint64_t>(), j.at("config_hash").get<std::string>()};
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, std::ostream& os) {
    using nlohmann::json;
    std::size_t t_min = SIZE_MAX, t_max = 0, n_min = SIZE_MAX, n_max = 0;
    for (const auto& v : ds.videos) {
        t_min = std::min(t_min, v.frames), t_max = std::max(t_max, v.frames);
        n_min = std::min(n_min, v.persons), n_max = std::max(n_max, v.persons);
    }
    if (ds.videos.empty()) t_min = n_min = 0;
    json catalog = json::array();
    for (const auto& e : ds.class_catalog) catalog.push_back({{"name", e.name}, {"count", e.count}});
    json header = {{"format", "garet-dataset"}, {"version", kDatasetFormatVersion}, {"id", ds.id}, {"C", ds.channels},
                   {"T", {{"min", t_min}, {"max", t_max}}}, {"N", {{"min", n_min}, {"max", n_max}}},
                   {"class_catalog", catalog}, {"videos", ds.videos.size()}};
    if (ds.provenance) header["provenance"] = detail::provenance_json(*ds.provenance);
    os << header.dump() << '\n';
    for (std::size_t k = 0; k < ds.videos.size(); ++k) {
        const auto& v = ds.videos[k];
        json pos = json::array();
        for (const auto& p : v.positions) {
            pos.push_back(p.x);
            pos.push_back(p.y);
        }
        json rec = {{"id", v.id},
                    {"split", to_string(ds.splits[k])},
                    {"class", v.class_label ? json(*v.class_label) : json(nullptr)},
                    {"T", v.frames},
                    {"N", v.persons},
                    {"positions", std::move(pos)},
                    {"appearance", v.appearance}};
        os << rec.dump() << '\n';
    }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    save_dataset(ds, os);
    if (!os) throw Error("write to '" + path + "' failed");
}

inline Dataset load_dataset(std::istream& is, const std::string& source = "<stream>") {
    using nlohmann::json;
    std::string line;
    std::size_t line_no = 0;
    std::size_t offset = 0;  // byte offset of the current line
    auto where = [&]() {
        return source + ": record " + std::to_string(line_no) + " (line " + std::to_string(line_no) + ", byte offset " +
               std::to_string(offset) + ")";
    };
    auto next = [&]() -> bool {
        if (line_no > 0) offset += line.size() + 1;
        if (!std::getline(is, line)) return false;
        ++line_no;
        return true;
    };
    auto parse = [&]() {
        try {
            return json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(where() + ": malformed JSON (" + e.what() + ")");
        }
    };

    if (!next()) throw ParseError(source + ": empty file, missing header record");
    json header = parse();
    Dataset ds;
    std::size_t expected = 0;
    try {
        if (header.value("format", "") != "garet-dataset") throw ParseError(where() + ": not a garet dataset header");
        const int version = header.at("version").get<int>();
        if (version != kDatasetFormatVersion)
            throw ParseError(where() + ": unsupported dataset version " + std::to_string(version) + " (expected " +
                             std::to_string(kDatasetFormatVersion) + ")");
        ds.id = header.at("id").get<std::string>();
        ds.channels = header.at("C").get<std::size_t>();
        for (const auto& e : header.at("class_catalog"))
            ds.class_catalog.push_back({e.at("name").get<std::string>(), e.at("count").get<std::size_t>()});
        expected = header.at("videos").get<std::size_t>();
        if (header.contains("provenance")) ds.provenance = detail::provenance_from(header["provenance"]);
    } catch (const json::exception& e) {
        throw ParseError(where() + ": invalid header (" + e.what() + ")");
    }
    const auto header_catalog = ds.class_catalog;

    while (next()) {
        if (line.empty()) continue;
        json rec = parse();
        VideoFeatures v;
        Split split = Split::train;
        try {
            v.id = rec.at("id").get<std::string>();
            split = parse_split(rec.at("split").get<std::string>());
            if (!rec.at("class").is_null()) v.class_label = rec["class"].get<std::string>();
            v.frames = rec.at("T").get<std::size_t>();
            v.persons = rec.at("N").get<std::size_t>();
            v.channels = ds.channels;
            const auto& pos = rec.at("positions");
            if (pos.size() != 2 * v.frames * v.persons)
                throw ParseError(where() + ": video '" + v.id + "': positions has " + std::to_string(pos.size()) +
                                 " floats, expected T*N*2 = " + std::to_string(2 * v.frames * v.persons));
            v.positions.resize(v.frames * v.persons);
            for (std::size_t i = 0; i < v.positions.size(); ++i)
                v.positions[i] = {pos[2 * i].get<double>(), pos[2 * i + 1].get<double>()};
            v.appearance = rec.at("appearance").get<std::vector<double>>();
        } catch (const json::exception& e) {
            throw ParseError(where() + ": invalid video record (" + e.what() + ")");
        }
        if (v.appearance.size() != v.frames * v.persons * ds.channels) {
            const std::size_t tn = v.frames * v.persons;
            std::string implied = tn && v.appearance.size() % tn == 0 ? std::to_string(v.appearance.size() / tn) : "non-integral";
            throw ParseError(where() + ": video '" + v.id + "' has C=" + implied + " but the header declares C=" +
                             std::to_string(ds.channels));
        }
        try {
            validate(v);
        } catch (const Error& e) {
            throw ParseError(where() + ": " + e.what());
        }
        ds.videos.push_back(std::move(v));
        ds.splits.push_back(split);
    }
    if (ds.videos.size() != expected)
        throw ParseError(source + ": truncated or padded file, header declares " + std::to_string(expected) +
                         " videos but " + std::to_string(ds.videos.size()) + " records were read (ends at byte offset " +
                         std::to_string(offset + line.size()) + ")");
    try {
        ds.finalize();
    } catch (const Error& e) {
        throw ParseError(source + ": " + e.what());
    }
    if (ds.class_catalog != header_catalog)
        throw ParseError(source + ": class_catalog in header does not match the video records");
    return ds;
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NotFoundError("cannot open dataset file '" + path + "'");
    return load_dataset(is, path);
}

// ---------------------------------------------------------------------------
// External feature import: JSON lines with nested arrays, no header.
//   appearance: T x N x C, positions: T x N x 2

struct FeatureSchema {
    std::string id_field = "id";
    std::string class_field = "class";
    std::string split_field = "split";
    std::string appearance_field = "appearance";
    std::string positions_field = "positions";
    Split default_split = Split::train;
    bool strict = true;  // reject out-of-court positions instead of clamping
    std::string dataset_id = "imported";
};

inline void export_features(const Dataset& ds, std::ostream& os, const FeatureSchema& schema = {}) {
    using nlohmann::json;
    for (std::size_t k = 0; k < ds.videos.size(); ++k) {
        const auto& v = ds.videos[k];
        json app = json::array(), pos = json::array();
        for (std::size_t t = 0; t < v.frames; ++t) {
            json at = json::array(), pt = json::array();
            for (std::size_t i = 0; i < v.persons; ++i) {
                auto a = v.app(t, i);
                at.push_back(std::vector<double>(a.begin(), a.end()));
                pt.push_back({v.pos(t, i).x, v.pos(t, i).y});
            }
            app.push_back(std::move(at));
            pos.push_back(std::move(pt));
        }
        json rec = {{schema.id_field, v.id}, {schema.split_field, to_string(ds.splits[k])}};
        if (v.class_label) rec[schema.class_field] = *v.class_label;
        rec[schema.appearance_field] = std::move(app);
        rec[schema.positions_field] = std::move(pos);
        os << rec.dump() << '\n';
    }
}

inline Dataset import_features(std::istream& is, const FeatureSchema& schema, std::vector<std::string>* warnings = nullptr,
                               const std::string& source = "<stream>") {
    using nlohmann::json;
    Dataset ds;
    ds.id = schema.dataset_id;
    std::vector<std::string> errors;
    std::string line;
    std::size_t rec_no = 0;
    std::optional<std::size_t> channels;
    while (std::getline(is, line)) {
        ++rec_no;
        if (line.empty()) continue;
        const std::string at = source + ": record " + std::to_string(rec_no);
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            errors.push_back(at + ": malformed JSON");
            continue;
        }
        VideoFeatures v;
        std::string problem;
        auto need = [&](const std::string& field) -> const json* {
            if (!rec.contains(field)) {
                problem = "missing field '" + field + "'";
                return nullptr;
            }
            return &rec[field];
        };
        const json* jid = need(schema.id_field);
        const json* japp = jid ? need(schema.appearance_field) : nullptr;
        const json* jpos = japp ? need(schema.positions_field) : nullptr;
        if (!jpos) {
            errors.push_back(at + ": " + problem);
            continue;
        }
        try {
            v.id = jid->get<std::string>();
            const std::string tag = at + " ('" + v.id + "')";
            if (rec.contains(schema.class_field) && !rec[schema.class_field].is_null())
                v.class_label = rec[schema.class_field].get<std::string>();
            Split split = rec.contains(schema.split_field) ? parse_split(rec[schema.split_field].get<std::string>())
                                                            : schema.default_split;
            v.frames = japp->size();
            v.persons = v.frames ? (*japp)[0].size() : 0;
            v.channels = v.persons ? (*japp)[0][0].size() : 0;
            if (v.frames == 0 || v.persons == 0 || v.channels == 0) {
                errors.push_back(tag + ": empty appearance array");
                continue;
            }
            if (channels && *channels != v.channels) {
                errors.push_back(tag + ": C=" + std::to_string(v.channels) + " differs from earlier records (C=" +
                                 std::to_string(*channels) + ")");
                continue;
            }
            bool ragged = jpos->size() != v.frames;
            v.appearance.reserve(v.frames * v.persons * v.channels);
            v.positions.reserve(v.frames * v.persons);
            for (std::size_t t = 0; t < v.frames && !ragged; ++t) {
                const auto& af = (*japp)[t];
                const auto& pf = (*jpos)[t];
                if (af.size() != v.persons || pf.size() != v.persons) {
                    ragged = true;
                    break;
                }
                for (std::size_t i = 0; i < v.persons; ++i) {
                    if (af[i].size() != v.channels || pf[i].size() != 2) {
                        ragged = true;
                        break;
                    }
                    for (const auto& x : af[i]) v.appearance.push_back(x.get<double>());
                    Position p{pf[i][0].get<double>(), pf[i][1].get<double>()};
                    const bool outside = !(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0);
                    if (outside) {
                        if (schema.strict || !std::isfinite(p.x) || !std::isfinite(p.y)) {
                            problem = "position outside [0,1]^2 at frame " + std::to_string(t) + ", person " + std::to_string(i);
                        } else {
                            p.x = std::clamp(p.x, 0.0, 1.0);
                            p.y = std::clamp(p.y, 0.0, 1.0);
                            if (warnings)
                                warnings->push_back(tag + ": clamped position at frame " + std::to_string(t) + ", person " +
                                                    std::to_string(i));
                        }
                    }
                    v.positions.push_back(p);
                }
            }
            if (ragged) {
                errors.push_back(tag + ": ragged dimensions (expected T x N x C appearance and T x N x 2 positions)");
                continue;
            }
            if (!problem.empty()) {
                errors.push_back(tag + ": " + problem);
                continue;
            }
            channels = v.channels;
            ds.videos.push_back(std::move(v));
            ds.splits.push_back(split);
        } catch (const json::exception& e) {
            errors.push_back(at + ": wrong value type (" + e.what() + ")");
        } catch (const ParseError& e) {
            errors.push_back(at + ": " + e.what());
        }
    }
    if (!errors.empty()) {
        std::string msg = "feature import failed for " + std::to_string(errors.size()) + " record(s):";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ParseError(msg);
    }
    if (ds.videos.empty()) throw ParseError(source + ": no records");
    ds.channels = *channels;
    ds.finalize();
    return ds;
}

inline Dataset import_features(const std::string& path, const FeatureSchema& schema,
                               std::vector<std::string>* warnings = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NotFoundError("cannot open feature file '" + path + "'");
    return import_features(is, schema, warnings, path);
}

}  // namespace garet

#endif  // GARET_DATASET_HPP
