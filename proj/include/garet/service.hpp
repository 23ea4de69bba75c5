#ifndef GARET_SERVICE_HPP
#define GARET_SERVICE_HPP

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "garet/dataset.hpp"
#include "garet/encoder.hpp"
#include "garet/eval.hpp"
#include "garet/finetune.hpp"
#include "garet/params_io.hpp"
#include "garet/selection.hpp"

namespace garet {

namespace fs = std::filesystem;
using nlohmann::json;

/// Error surfaced to HTTP clients as {"error":{"code":..,"message":..}}.
struct ApiError : Error {
    int status;
    std::string code;
    ApiError(int status_, std::string code_, const std::string& msg)
        : Error(msg), status(status_), code(std::move(code_)) {}
};

enum class SessionState { created, awaiting_annotations, finetuning, ready, failed };

inline const char* to_string(SessionState s) {
    switch (s) {
        case SessionState::created: return "created";
        case SessionState::awaiting_annotations: return "awaiting_annotations";
        case SessionState::finetuning: return "finetuning";
        case SessionState::ready: return "ready";
        case SessionState::failed: return "failed";
    }
    return "?";
}

inline SessionState parse_session_state(const std::string& s) {
    for (auto st : {SessionState::created, SessionState::awaiting_annotations, SessionState::finetuning,
                    SessionState::ready, SessionState::failed})
        if (s == to_string(st)) return st;
    throw ParseError("unknown session state '" + s + "'");
}

/// Allowed edges of the session lifecycle.
inline bool valid_transition(SessionState from, SessionState to) {
    using S = SessionState;
    return (from == S::created && to == S::awaiting_annotations) ||
           (from == S::awaiting_annotations && to == S::finetuning) || (from == S::finetuning && to == S::ready) ||
           (from == S::finetuning && to == S::failed);
}

/// Majority vote per video over each annotator's latest label; ties and
/// unlabeled videos resolve to negative / absent respectively.
inline std::map<std::string, Label> merge_annotations(std::span<const Annotation> events) {
    std::map<std::string, std::map<std::string, Label>> latest;  // video -> annotator -> label
    for (const auto& a : events) latest[a.video_id][a.annotator.value_or("")] = a.label;
    std::map<std::string, Label> out;
    for (const auto& [vid, by] : latest) {
        int pos = 0, neg = 0;
        for (const auto& [who, l] : by) (l == Label::positive ? pos : neg)++;
        out[vid] = pos > neg ? Label::positive : Label::negative;
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON codecs for configs

inline json to_json(const SelectionConfig& c) {
    return {{"lambda", c.lambda},
            {"patterns", c.patterns},
            {"masked_persons", c.masked_persons},
            {"extra_factor", c.extra_factor},
            {"n_select", c.n_select},
            {"coreset_metric", to_string(c.coreset_metric)},
            {"ranking", to_string(c.ranking)},
            {"use_similarity", c.use_similarity},
            {"use_dissimilarity", c.use_dissimilarity},
            {"seed", c.seed}};
}

inline SelectionConfig selection_config_from(const json& j) {
    SelectionConfig c;
    if (j.is_null()) return c;
    if (!j.is_object()) throw ConfigError("selection config must be an object");
    try {
        c.lambda = j.value("lambda", c.lambda);
        c.patterns = j.value("patterns", c.patterns);
        c.masked_persons = j.value("masked_persons", c.masked_persons);
        c.extra_factor = j.value("extra_factor", c.extra_factor);
        c.n_select = j.value("n_select", c.n_select);
        const std::string metric = j.value("coreset_metric", std::string(to_string(c.coreset_metric)));
        if (metric == "cosine-distance") c.coreset_metric = CoresetMetric::cosine_distance;
        else if (metric == "cosine-similarity") c.coreset_metric = CoresetMetric::cosine_similarity;
        else throw ConfigError("selection.coreset_metric: expected cosine-distance or cosine-similarity, got '" + metric + "'");
        const std::string ranking = j.value("ranking", std::string("desc"));
        if (ranking == "desc") c.ranking = Ranking::desc;
        else if (ranking == "asc") c.ranking = Ranking::asc;
        else throw ConfigError("selection.ranking: expected desc or asc, got '" + ranking + "'");
        c.use_similarity = j.value("use_similarity", c.use_similarity);
        c.use_dissimilarity = j.value("use_dissimilarity", c.use_dissimilarity);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("selection config: ") + e.what());
    }
    return c;
}

inline json to_json(const FinetuneConfig& c) {
    return {{"margin", c.margin},   {"lr", c.adam.lr},         {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2}, {"eps", c.adam.eps},       {"epochs", c.epochs},
            {"use_reg", c.use_reg}, {"reg_weight", c.reg_weight}, {"early_stop_patience", c.early_stop_patience}};
}

inline FinetuneConfig finetune_config_from(const json& j) {
    FinetuneConfig c;
    if (j.is_null()) return c;
    if (!j.is_object()) throw ConfigError("finetune config must be an object");
    try {
        c.margin = j.value("margin", c.margin);
        c.adam.lr = j.value("lr", c.adam.lr);
        c.adam.beta1 = j.value("beta1", c.adam.beta1);
        c.adam.beta2 = j.value("beta2", c.adam.beta2);
        c.adam.eps = j.value("eps", c.adam.eps);
        c.epochs = j.value("epochs", c.epochs);
        c.use_reg = j.value("use_reg", c.use_reg);
        c.reg_weight = j.value("reg_weight", c.reg_weight);
        c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("finetune config: ") + e.what());
    }
    c.validate();
    return c;
}

inline json to_json(const LossReport& r) {
    json epochs = json::array();
    for (const auto& e : r.epochs) epochs.push_back({{"epoch", e.epoch}, {"L", e.total}, {"L_ctr", e.ctr}, {"L_reg", e.reg}});
    return {{"epochs", epochs}, {"stop_reason", to_string(r.stop)}, {"warnings", r.warnings},
            {"contrastive_active", r.contrastive_active}};
}

inline LossReport loss_report_from(const json& j) {
    LossReport r;
    for (const auto& e : j.at("epochs"))
        r.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("L").get<double>(), e.at("L_ctr").get<double>(),
                            e.at("L_reg").get<double>()});
    const std::string stop = j.at("stop_reason").get<std::string>();
    r.stop = stop == "early_stop" ? StopReason::early_stop : stop == "completed" ? StopReason::completed : StopReason::no_epochs;
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    r.contrastive_active = j.at("contrastive_active").get<bool>();
    return r;
}

inline json to_json(const Annotation& a) {
    return {{"video_id", a.video_id},
            {"label", to_string(a.label)},
            {"annotator", a.annotator ? json(*a.annotator) : json(nullptr)},
            {"timestamp", a.timestamp}};
}

inline Annotation annotation_from(const json& j) {
    Annotation a;
    a.video_id = j.at("video_id").get<std::string>();
    const std::string l = j.at("label").get<std::string>();
    if (l == "positive") a.label = Label::positive;
    else if (l == "negative") a.label = Label::negative;
    else throw ConfigError("annotation label must be 'positive' or 'negative', got '" + l + "'");
    if (j.contains("annotator") && !j["annotator"].is_null()) a.annotator = j["annotator"].get<std::string>();
    a.timestamp = j.value("timestamp", std::int64_t{0});
    return a;
}

// ---------------------------------------------------------------------------
// Session

struct CandidateScore {
    std::string id;
    std::string query;  // query that extracted it
    double s = 0.0, v = 0.0, i = 0.0;
    std::size_t rank = 0;  // 1-based rank within its query's extraction
    bool chosen = false;
};

struct Session {
    std::string id;
    std::string dataset_id;
    std::vector<std::string> query_ids;
    SelectionConfig selection;
    std::vector<std::string> extracted_ids;
    std::vector<std::string> selected_ids;
    std::vector<CandidateScore> candidates;
    std::vector<Annotation> annotations;  // append-only event log
    SessionState state = SessionState::created;
    std::optional<FinetuneConfig> finetune;
    std::string job_id;
    std::optional<LossReport> loss_report;
    std::string error;
    std::string cloned_from;

    std::vector<std::string> unlabeled() const {
        auto merged = merge_annotations(annotations);
        std::vector<std::string> out;
        for (const auto& s : selected_ids)
            if (!merged.count(s)) out.push_back(s);
        return out;
    }
};

inline json to_json(const Session& s) {
    json cands = json::array();
    for (const auto& c : s.candidates)
        cands.push_back({{"id", c.id}, {"query", c.query}, {"S", c.s}, {"V", c.v}, {"I", c.i}, {"rank", c.rank},
                         {"chosen", c.chosen}});
    json anns = json::array();
    for (const auto& a : s.annotations) anns.push_back(to_json(a));
    json labels = json::object();
    for (const auto& [vid, l] : merge_annotations(s.annotations)) labels[vid] = to_string(l);
    return {{"id", s.id},
            {"dataset_id", s.dataset_id},
            {"query_ids", s.query_ids},
            {"selection_config", to_json(s.selection)},
            {"extracted_ids", s.extracted_ids},
            {"selected_ids", s.selected_ids},
            {"candidates", cands},
            {"annotations", anns},
            {"labels", labels},
            {"unlabeled", s.unlabeled()},
            {"state", to_string(s.state)},
            {"finetune_config", s.finetune ? to_json(*s.finetune) : json(nullptr)},
            {"job_id", s.job_id},
            {"loss_report", s.loss_report ? to_json(*s.loss_report) : json(nullptr)},
            {"error", s.error},
            {"cloned_from", s.cloned_from}};
}

inline Session session_from(const json& j) {
    Session s;
    s.id = j.at("id").get<std::string>();
    s.dataset_id = j.at("dataset_id").get<std::string>();
    s.query_ids = j.at("query_ids").get<std::vector<std::string>>();
    s.selection = selection_config_from(j.at("selection_config"));
    s.extracted_ids = j.at("extracted_ids").get<std::vector<std::string>>();
    s.selected_ids = j.at("selected_ids").get<std::vector<std::string>>();
    for (const auto& c : j.at("candidates"))
        s.candidates.push_back({c.at("id").get<std::string>(), c.at("query").get<std::string>(), c.at("S").get<double>(),
                                c.at("V").get<double>(), c.at("I").get<double>(), c.at("rank").get<std::size_t>(),
                                c.at("chosen").get<bool>()});
    for (const auto& a : j.at("annotations")) s.annotations.push_back(annotation_from(a));
    s.state = parse_session_state(j.at("state").get<std::string>());
    if (!j.at("finetune_config").is_null()) s.finetune = finetune_config_from(j["finetune_config"]);
    s.job_id = j.at("job_id").get<std::string>();
    if (!j.at("loss_report").is_null()) s.loss_report = loss_report_from(j["loss_report"]);
    s.error = j.at("error").get<std::string>();
    s.cloned_from = j.value("cloned_from", std::string());
    return s;
}

// ---------------------------------------------------------------------------
// Service

/// Human-in-the-loop session service. All state lives under `data_dir`:
///   datasets/<id>.jsonl      uploaded dataset files
///   sessions/<id>.json       one file per session, rewritten on each mutation
///   sessions/<id>.params.json fine-tuned encoder params
///   jobs/<id>.json           fine-tune job status
/// A restarted service over the same directory serves the same sessions.
class Service {
  public:
    Service(fs::path data_dir, EncoderParams pretrained)
        : root_(std::move(data_dir)), pretrained_(std::move(pretrained)) {
        fs::create_directories(root_ / "datasets");
        fs::create_directories(root_ / "sessions");
        fs::create_directories(root_ / "jobs");
        recover();
    }

    ~Service() { wait_for_jobs(); }

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    const EncoderParams& pretrained() const { return pretrained_; }
    const fs::path& root() const { return root_; }

    // -- datasets -----------------------------------------------------------

    json upload_dataset(const std::string& body) {
        std::istringstream is(body);
        Dataset ds;
        try {
            ds = load_dataset(is, "upload");
        } catch (const ParseError& e) {
            throw ApiError(422, "invalid_dataset", e.what());
        }
        if (ds.channels != pretrained_.channels)
            throw ApiError(422, "invalid_dataset",
                           "dataset C=" + std::to_string(ds.channels) + " does not match the encoder C=" +
                               std::to_string(pretrained_.channels));
        std::string id;
        {
            std::unique_lock lock(mu_);
            id = "ds-" + std::to_string(++dataset_counter_);
            write_file(root_ / "datasets" / (id + ".jsonl"), body);
            datasets_[id] = std::make_shared<DatasetEntry>(std::move(ds), pretrained_);
        }
        return dataset_summary(id, false);
    }

    json get_dataset(const std::string& id) { return dataset_summary(id, true); }

    json video_schematic(const std::string& video_id, const std::string& dataset_id = "") {
        std::vector<std::string> ids;
        if (!dataset_id.empty()) {
            ids.push_back(dataset_id);
        } else {
            ids = dataset_ids();
        }
        std::vector<std::pair<std::string, std::shared_ptr<DatasetEntry>>> found;
        for (const auto& d : ids) {
            auto e = dataset(d);
            if (e->ds.find(video_id)) found.emplace_back(d, e);
        }
        if (found.empty()) throw ApiError(404, "not_found", "unknown video id '" + video_id + "'");
        if (found.size() > 1)
            throw ApiError(422, "ambiguous_video", "video id '" + video_id + "' exists in several datasets; pass ?dataset=");
        const auto& v = found[0].second->ds.at(video_id);
        json frames = json::array();
        for (std::size_t t = 0; t < v.frames; ++t) {
            json f = json::array();
            for (std::size_t i = 0; i < v.persons; ++i) f.push_back({v.pos(t, i).x, v.pos(t, i).y});
            frames.push_back(std::move(f));
        }
        return {{"id", v.id},
                {"dataset_id", found[0].first},
                {"T", v.frames},
                {"N", v.persons},
                {"class", v.class_label ? json(*v.class_label) : json(nullptr)},
                {"frames", frames}};
    }

    // -- sessions -----------------------------------------------------------

    json create_session(const json& body) {
        if (!body.is_object()) throw ApiError(422, "invalid_request", "body must be a JSON object");
        const std::string dataset_id = body.value("dataset_id", std::string());
        if (!body.contains("query_ids") || !body["query_ids"].is_array())
            throw ApiError(422, "invalid_request", "query_ids: expected an array of video ids");
        std::vector<std::string> query_ids;
        for (const auto& q : body["query_ids"]) {
            if (!q.is_string()) throw ApiError(422, "invalid_request", "query_ids: every entry must be a string");
            query_ids.push_back(q.get<std::string>());
        }
        if (query_ids.empty()) throw ApiError(422, "invalid_request", "query_ids: at least one query video is required");
        SelectionConfig cfg;
        try {
            cfg = selection_config_from(body.contains("selection") ? body["selection"] : json(nullptr));
            cfg.validate();
        } catch (const ConfigError& e) {
            throw ApiError(422, "invalid_config", e.what());
        }
        auto entry = dataset(dataset_id);
        for (const auto& q : query_ids)
            if (!entry->ds.find(q)) throw ApiError(404, "not_found", "query video '" + q + "' is not in dataset '" + dataset_id + "'");

        Session s;
        s.dataset_id = dataset_id;
        s.query_ids = query_ids;
        s.selection = cfg;
        run_selection(*entry, s);

        auto slot = std::make_shared<SessionSlot>();
        {
            std::unique_lock lock(mu_);
            s.id = "s-" + std::to_string(++session_counter_);
            slot->session = std::move(s);
            persist(slot->session);
            sessions_[slot->session.id] = slot;
        }
        return to_json(slot->session);
    }

    json get_session(const std::string& id) {
        auto slot = session(id);
        std::shared_lock lock(slot->mu);
        return to_json(slot->session);
    }

    json get_selection(const std::string& id) {
        auto slot = session(id);
        std::shared_lock lock(slot->mu);
        const Session& s = slot->session;
        json cands = json::array();
        for (const auto& c : s.candidates)
            cands.push_back({{"id", c.id}, {"query", c.query}, {"S", c.s}, {"V", c.v}, {"I", c.i}, {"rank", c.rank},
                             {"chosen", c.chosen}});
        json selected = json::array();
        for (const auto& sid : s.selected_ids) {
            json entry = {{"id", sid}};
            for (const auto& c : s.candidates)
                if (c.id == sid) entry["scores"] = {{"query", c.query}, {"S", c.s}, {"V", c.v}, {"I", c.i}, {"rank", c.rank}};
            selected.push_back(std::move(entry));
        }
        return {{"session_id", s.id}, {"selected", selected}, {"candidates", cands}, {"state", to_string(s.state)}};
    }

    json submit_annotations(const std::string& id, const json& body) {
        auto slot = session(id);
        std::vector<Annotation> incoming;
        try {
            const json& list = body.is_array() ? body : body.at("annotations");
            for (const auto& a : list) incoming.push_back(annotation_from(a));
        } catch (const json::exception& e) {
            throw ApiError(422, "invalid_request", std::string("annotations: ") + e.what());
        } catch (const ConfigError& e) {
            throw ApiError(422, "invalid_request", e.what());
        }
        std::unique_lock lock(slot->mu);
        Session& s = slot->session;
        if (s.state != SessionState::awaiting_annotations)
            throw ApiError(409, "invalid_state",
                           std::string("annotations are accepted only while awaiting_annotations (state is ") +
                               to_string(s.state) + ")");
        for (const auto& a : incoming)
            if (std::find(s.selected_ids.begin(), s.selected_ids.end(), a.video_id) == s.selected_ids.end())
                throw ApiError(422, "unknown_video", "video '" + a.video_id + "' is not among the session's selected videos");
        const auto now = now_ms();
        for (auto a : incoming) {
            if (a.timestamp == 0) a.timestamp = now;
            s.annotations.push_back(std::move(a));
        }
        persist(s);
        return to_json(s);
    }

    json start_finetune(const std::string& id, const json& body) {
        FinetuneConfig cfg;
        try {
            cfg = finetune_config_from(body.is_object() && body.contains("config") ? body["config"]
                                       : body.is_object()                          ? body
                                                                                   : json(nullptr));
        } catch (const ConfigError& e) {
            throw ApiError(422, "invalid_config", e.what());
        }
        auto slot = session(id);
        std::string job_id;
        {
            std::unique_lock lock(slot->mu);
            Session& s = slot->session;
            if (s.state != SessionState::awaiting_annotations)
                throw ApiError(409, "invalid_state",
                               std::string("fine-tuning can start only from awaiting_annotations (state is ") +
                                   to_string(s.state) + "); clone the session to label again");
            const auto missing = s.unlabeled();
            if (!missing.empty()) {
                std::string list;
                for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
                throw ApiError(409, "unlabeled_videos", "label every selected video first; missing: " + list);
            }
            {
                std::unique_lock glock(mu_);
                job_id = "j-" + std::to_string(++job_counter_);
            }
            s.state = SessionState::finetuning;
            s.finetune = cfg;
            s.job_id = job_id;
            s.error.clear();
            persist(s);
            write_job(job_id, s.id, "running", nullptr, "");
        }
        std::lock_guard jl(jobs_mu_);
        jobs_.emplace_back([this, slot, cfg, job_id]() { run_finetune_job(slot, cfg, job_id); });
        return {{"job_id", job_id}, {"session_id", id}, {"state", "running"}};
    }

    json get_job(const std::string& job_id) {
        const fs::path p = root_ / "jobs" / (job_id + ".json");
        std::shared_lock lock(mu_);
        if (!fs::exists(p)) throw ApiError(404, "not_found", "unknown job '" + job_id + "'");
        return json::parse(read_file(p));
    }

    json clone_session(const std::string& id) {
        auto src = session(id);
        Session s;
        {
            std::shared_lock lock(src->mu);
            s = src->session;
        }
        if (s.state == SessionState::created) throw ApiError(409, "invalid_state", "session has no selection to clone yet");
        s.cloned_from = s.id;
        s.state = SessionState::awaiting_annotations;
        s.finetune.reset();
        s.job_id.clear();
        s.loss_report.reset();
        s.error.clear();
        auto slot = std::make_shared<SessionSlot>();
        std::unique_lock lock(mu_);
        s.id = "s-" + std::to_string(++session_counter_);
        slot->session = std::move(s);
        persist(slot->session);
        sessions_[slot->session.id] = slot;
        return to_json(slot->session);
    }

    json get_retrieval(const std::string& id, const std::string& query_id, long k, const std::string& space) {
        if (space != "pretrained" && space != "finetuned")
            throw ApiError(422, "invalid_request", "space must be 'pretrained' or 'finetuned'");
        auto slot = session(id);
        std::shared_ptr<const std::vector<Gaf>> pool;
        std::shared_ptr<const EncoderParams> params;
        std::string dataset_id;
        {
            std::shared_lock lock(slot->mu);
            dataset_id = slot->session.dataset_id;
            if (space == "finetuned") {
                if (slot->session.state != SessionState::ready)
                    throw ApiError(409, "not_ready", std::string("finetuned space needs a ready session (state is ") +
                                                         to_string(slot->session.state) + ")");
            }
        }
        auto entry = dataset(dataset_id);
        if (!entry->ds.find(query_id)) throw ApiError(404, "not_found", "query video '" + query_id + "' is not in the dataset");
        if (k < 0) throw ApiError(422, "invalid_request", "k must be >= 0");
        if (space == "finetuned") {
            std::tie(params, pool) = finetuned_space(*slot, *entry);
        } else {
            params = std::shared_ptr<const EncoderParams>(&pretrained_, [](const EncoderParams*) {});
            pool = std::shared_ptr<const std::vector<Gaf>>(&entry->pool_gafs, [](const std::vector<Gaf>*) {});
        }
        const auto ranked = retrieve_excluding(*entry, *pool, encode_gaf(entry->ds.at(query_id), *params), query_id,
                                               static_cast<std::size_t>(k));
        json results = json::array();
        for (const auto& [vid, score] : ranked) {
            const auto& v = entry->ds.at(vid);
            results.push_back({{"id", vid}, {"score", score}, {"class", v.class_label ? json(*v.class_label) : json(nullptr)}});
        }
        return {{"session_id", id}, {"query", query_id}, {"k", k}, {"space", space}, {"results", results}};
    }

    /// Fine-tuned params of a ready session (as persisted).
    EncoderParams finetuned_params(const std::string& id) {
        const fs::path p = root_ / "sessions" / (id + ".params.json");
        if (!fs::exists(p)) throw ApiError(404, "not_found", "session '" + id + "' has no fine-tuned params");
        return load_params(p.string());
    }

    void wait_for_jobs() {
        std::vector<std::thread> done;
        {
            std::lock_guard jl(jobs_mu_);
            done.swap(jobs_);
        }
        for (auto& t : done)
            if (t.joinable()) t.join();
    }

    /// Registers every endpoint on `srv`.
    void bind(httplib::Server& srv);

  private:
    struct DatasetEntry {
        Dataset ds;
        std::vector<std::size_t> pool_index;  // train split
        std::vector<Gaf> pool_gafs;           // pre-trained
        DatasetEntry(Dataset d, const EncoderParams& params) : ds(std::move(d)) {
            pool_index = ds.indices(Split::train);
            for (auto k : pool_index) pool_gafs.push_back(encode_gaf(ds.videos[k], params));
        }
    };

    struct SessionSlot {
        std::shared_mutex mu;
        Session session;
        std::shared_ptr<const EncoderParams> finetuned;
        std::shared_ptr<const std::vector<Gaf>> finetuned_pool;
        std::mutex cache_mu;
    };

    static std::int64_t now_ms() {
        using namespace std::chrono;
        return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
    }

    static void write_file(const fs::path& p, const std::string& content) {
        const fs::path tmp = p.string() + ".tmp";
        {
            std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
            if (!os) throw Error("cannot write '" + tmp.string() + "'");
            os << content;
            if (!os) throw Error("write to '" + tmp.string() + "' failed");
        }
        fs::rename(tmp, p);
    }

    static std::string read_file(const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        std::ostringstream ss;
        ss << is.rdbuf();
        return ss.str();
    }

    static std::size_t counter_of(const std::string& id) {
        auto dash = id.find('-');
        if (dash == std::string::npos) return 0;
        try {
            return std::stoul(id.substr(dash + 1));
        } catch (...) {
            return 0;
        }
    }

    void persist(const Session& s) { write_file(root_ / "sessions" / (s.id + ".json"), to_json(s).dump(2) + "\n"); }

    void write_job(const std::string& job_id, const std::string& session_id, const std::string& state,
                   const json& report, const std::string& error) {
        write_file(root_ / "jobs" / (job_id + ".json"),
                   json{{"id", job_id}, {"session_id", session_id}, {"state", state}, {"loss_report", report}, {"error", error}}
                           .dump(2) +
                       "\n");
    }

    void recover() {
        for (const auto& e : fs::directory_iterator(root_ / "datasets"))
            if (e.path().extension() == ".jsonl")
                dataset_counter_ = std::max(dataset_counter_, counter_of(e.path().stem().string()));
        for (const auto& e : fs::directory_iterator(root_ / "jobs"))
            if (e.path().extension() == ".json") job_counter_ = std::max(job_counter_, counter_of(e.path().stem().string()));
        for (const auto& e : fs::directory_iterator(root_ / "sessions")) {
            const std::string name = e.path().filename().string();
            if (e.path().extension() != ".json" || name.find(".params.") != std::string::npos) continue;
            auto slot = std::make_shared<SessionSlot>();
            slot->session = session_from(json::parse(read_file(e.path())));
            session_counter_ = std::max(session_counter_, counter_of(slot->session.id));
            if (slot->session.state == SessionState::finetuning) {
                // The job died with the previous process.
                slot->session.state = SessionState::failed;
                slot->session.error = "fine-tune job interrupted by a service restart";
                persist(slot->session);
                write_job(slot->session.job_id, slot->session.id, "failed", nullptr, slot->session.error);
            }
            sessions_[slot->session.id] = slot;
        }
    }

    std::vector<std::string> dataset_ids() {
        std::vector<std::string> out;
        for (const auto& e : fs::directory_iterator(root_ / "datasets"))
            if (e.path().extension() == ".jsonl") out.push_back(e.path().stem().string());
        std::sort(out.begin(), out.end());
        return out;
    }

    std::shared_ptr<DatasetEntry> dataset(const std::string& id) {
        {
            std::shared_lock lock(mu_);
            auto it = datasets_.find(id);
            if (it != datasets_.end()) return it->second;
        }
        const fs::path p = root_ / "datasets" / (id + ".jsonl");
        if (id.empty() || id.find('/') != std::string::npos || !fs::exists(p))
            throw ApiError(404, "not_found", "unknown dataset '" + id + "'");
        auto entry = std::make_shared<DatasetEntry>(load_dataset(p.string()), pretrained_);
        std::unique_lock lock(mu_);
        return datasets_.emplace(id, std::move(entry)).first->second;
    }

    std::shared_ptr<SessionSlot> session(const std::string& id) {
        std::shared_lock lock(mu_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw ApiError(404, "not_found", "unknown session '" + id + "'");
        return it->second;
    }

    json dataset_summary(const std::string& id, bool with_videos) {
        auto e = dataset(id);
        json catalog = json::array();
        for (const auto& c : e->ds.class_catalog) catalog.push_back({{"name", c.name}, {"count", c.count}});
        json out = {{"id", id},
                    {"name", e->ds.id},
                    {"C", e->ds.channels},
                    {"video_count", e->ds.videos.size()},
                    {"class_catalog", catalog}};
        if (with_videos) {
            json vids = json::array();
            for (std::size_t k = 0; k < e->ds.videos.size(); ++k) {
                const auto& v = e->ds.videos[k];
                vids.push_back({{"id", v.id},
                                {"split", to_string(e->ds.splits[k])},
                                {"class", v.class_label ? json(*v.class_label) : json(nullptr)},
                                {"T", v.frames},
                                {"N", v.persons}});
            }
            out["videos"] = std::move(vids);
        }
        return out;
    }

  public:
    /// Retrieval pool of a session: the train split minus the given video.
    struct PoolView {
        std::vector<std::size_t> positions;  // into DatasetEntry::pool_index
        std::vector<std::string> ids;
    };

  private:
    static PoolView pool_without(const DatasetEntry& e, std::span<const std::string> excluded) {
        PoolView pv;
        for (std::size_t j = 0; j < e.pool_index.size(); ++j) {
            const std::string& vid = e.ds.videos[e.pool_index[j]].id;
            if (std::find(excluded.begin(), excluded.end(), vid) != excluded.end()) continue;
            pv.positions.push_back(j);
            pv.ids.push_back(vid);
        }
        return pv;
    }

    void run_selection(const DatasetEntry& e, Session& s) {
        std::vector<VideoFeatures> queries;
        for (const auto& q : s.query_ids) queries.push_back(e.ds.at(q));
        const PoolView pv = pool_without(e, s.query_ids);
        std::vector<Gaf> pool;
        for (auto j : pv.positions) pool.push_back(e.pool_gafs[j]);
        SelectionResult sel;
        try {
            sel = select_for_annotation(queries, pool, pretrained_, s.selection);
        } catch (const PreconditionError& ex) {
            throw ApiError(422, "invalid_config", ex.what());
        } catch (const ConfigError& ex) {
            throw ApiError(422, "invalid_config", ex.what());
        }
        const std::size_t per_query = s.selection.n_select * s.selection.extra_factor;
        for (std::size_t r = 0; r < sel.extracted.size(); ++r) {
            const std::size_t j = sel.extracted[r];
            const std::size_t q = r / per_query;
            CandidateScore c{pv.ids[j], s.query_ids[q], sel.scores.s[q][j], sel.scores.v[q][j], sel.scores.i[q][j],
                             r % per_query + 1, false};
            c.chosen = std::find(sel.selected.begin(), sel.selected.end(), j) != sel.selected.end();
            s.extracted_ids.push_back(c.id);
            s.candidates.push_back(std::move(c));
        }
        for (auto j : sel.selected) s.selected_ids.push_back(pv.ids[j]);
        s.state = SessionState::awaiting_annotations;
    }

    std::vector<std::pair<std::string, double>> retrieve_excluding(const DatasetEntry& e, const std::vector<Gaf>& pool_all,
                                                                    const Gaf& query, const std::string& query_id,
                                                                    std::size_t k) {
        const std::string excluded[] = {query_id};
        const PoolView pv = pool_without(e, excluded);
        std::vector<Gaf> pool;
        for (auto j : pv.positions) pool.push_back(pool_all[j]);
        if (k > pool.size())
            throw ApiError(422, "invalid_request", "k=" + std::to_string(k) + " exceeds the pool size " + std::to_string(pool.size()));
        std::vector<std::pair<std::string, double>> out;
        for (const auto& h : retrieve_topk(query, pool, pv.ids, k)) out.emplace_back(pv.ids[h.index], h.score);
        return out;
    }

    std::pair<std::shared_ptr<const EncoderParams>, std::shared_ptr<const std::vector<Gaf>>> finetuned_space(
        SessionSlot& slot, const DatasetEntry& e) {
        std::lock_guard lock(slot.cache_mu);
        if (!slot.finetuned) slot.finetuned = std::make_shared<const EncoderParams>(finetuned_params(slot.session.id));
        if (!slot.finetuned_pool) {
            auto pool = std::make_shared<std::vector<Gaf>>();
            for (auto k : e.pool_index) pool->push_back(encode_gaf(e.ds.videos[k], *slot.finetuned));
            slot.finetuned_pool = std::move(pool);
        }
        return {slot.finetuned, slot.finetuned_pool};
    }

    void run_finetune_job(std::shared_ptr<SessionSlot> slot, FinetuneConfig cfg, std::string job_id) {
        Session snapshot;
        {
            std::shared_lock lock(slot->mu);
            snapshot = slot->session;
        }
        json report_json = nullptr;
        std::string error;
        try {
            auto entry = dataset(snapshot.dataset_id);
            FinetuneBatch batch;
            const auto merged = merge_annotations(snapshot.annotations);
            for (const auto& q : snapshot.query_ids) batch.queries.push_back(&entry->ds.at(q));
            for (const auto& s : snapshot.selected_ids) {
                batch.selected.push_back(&entry->ds.at(s));
                batch.labels.push_back(merged.at(s));
            }
            LossReport report;
            EncoderParams tuned = finetune(batch, pretrained_, cfg, &report);
            save_params(tuned, (root_ / "sessions" / (snapshot.id + ".params.json")).string());
            report_json = to_json(report);
            std::unique_lock lock(slot->mu);
            {
                std::lock_guard cl(slot->cache_mu);
                slot->finetuned = std::make_shared<const EncoderParams>(std::move(tuned));
                auto pool = std::make_shared<std::vector<Gaf>>();
                for (auto k : entry->pool_index) pool->push_back(encode_gaf(entry->ds.videos[k], *slot->finetuned));
                slot->finetuned_pool = std::move(pool);
            }
            slot->session.loss_report = std::move(report);
            slot->session.state = SessionState::ready;
            persist(slot->session);
            write_job(job_id, snapshot.id, "succeeded", report_json, "");
            return;
        } catch (const std::exception& e) {
            error = e.what();
        }
        std::unique_lock lock(slot->mu);
        slot->session.state = SessionState::failed;
        slot->session.error = error;
        persist(slot->session);
        write_job(job_id, snapshot.id, "failed", nullptr, error);
    }

    fs::path root_;
    EncoderParams pretrained_;
    std::shared_mutex mu_;
    std::map<std::string, std::shared_ptr<DatasetEntry>> datasets_;
    std::map<std::string, std::shared_ptr<SessionSlot>> sessions_;
    std::size_t dataset_counter_ = 0;
    std::size_t session_counter_ = 0;
    std::size_t job_counter_ = 0;
    std::mutex jobs_mu_;
    std::vector<std::thread> jobs_;
};

namespace detail {

inline void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& code, const std::string& msg) {
    send_json(res, status, {{"error", {{"code", code}, {"message", msg}}}});
}

template <class F>
void guarded(httplib::Response& res, int ok_status, F&& f) {
    try {
        send_json(res, ok_status, f());
    } catch (const ApiError& e) {
        send_error(res, e.status, e.code, e.what());
    } catch (const NotFoundError& e) {
        send_error(res, 404, "not_found", e.what());
    } catch (const json::exception& e) {
        send_error(res, 400, "bad_json", e.what());
    } catch (const ConfigError& e) {
        send_error(res, 422, "invalid_config", e.what());
    } catch (const Error& e) {
        send_error(res, 422, "invalid_request", e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
    }
}

inline json body_json(const httplib::Request& req) {
    if (req.body.empty()) return nullptr;
    return json::parse(req.body);
}

}  // namespace detail

inline void Service::bind(httplib::Server& srv) {
    using detail::guarded;
    using httplib::Request;
    using httplib::Response;
    srv.set_payload_max_length(512u * 1024u * 1024u);
    srv.Post("/datasets", [this](const Request& req, Response& res) {
        guarded(res, 201, [&] { return upload_dataset(req.body); });
    });
    srv.Get(R"(/datasets/([^/]+))", [this](const Request& req, Response& res) {
        guarded(res, 200, [&] { return get_dataset(req.matches[1]); });
    });
    srv.Post("/sessions", [this](const Request& req, Response& res) {
        guarded(res, 201, [&] { return create_session(detail::body_json(req)); });
    });
    srv.Get(R"(/sessions/([^/]+))", [this](const Request& req, Response& res) {
        guarded(res, 200, [&] { return get_session(req.matches[1]); });
    });
    srv.Get(R"(/sessions/([^/]+)/selection)", [this](const Request& req, Response& res) {
        guarded(res, 200, [&] { return get_selection(req.matches[1]); });
    });
    srv.Post(R"(/sessions/([^/]+)/annotations)", [this](const Request& req, Response& res) {
        guarded(res, 200, [&] { return submit_annotations(req.matches[1], detail::body_json(req)); });
    });
    srv.Post(R"(/sessions/([^/]+)/finetune)", [this](const Request& req, Response& res) {
        guarded(res, 202, [&] { return start_finetune(req.matches[1], detail::body_json(req)); });
    });
    srv.Post(R"(/sessions/([^/]+)/clone)", [this](const Request& req, Response& res) {
        guarded(res, 201, [&] { return clone_session(req.matches[1]); });
    });
    srv.Get(R"(/sessions/([^/]+)/retrieval)", [this](const Request& req, Response& res) {
        guarded(res, 200, [&] {
            if (!req.has_param("query")) throw ApiError(422, "invalid_request", "missing query parameter 'query'");
            long k = 10;
            if (req.has_param("k")) {
                try {
                    std::size_t used = 0;
                    const std::string raw = req.get_param_value("k");
                    k = std::stol(raw, &used);
                    if (used != raw.size()) throw std::invalid_argument("trailing");
                } catch (const std::exception&) {
                    throw ApiError(422, "invalid_request", "k must be an integer");
                }
            }
            const std::string space = req.has_param("space") ? req.get_param_value("space") : "finetuned";
            return get_retrieval(req.matches[1], req.get_param_value("query"), k, space);
        });
    });
    srv.Get(R"(/jobs/([^/]+))", [this](const Request& req, Response& res) {
        guarded(res, 200, [&] { return get_job(req.matches[1]); });
    });
    srv.Get(R"(/videos/([^/]+)/schematic)", [this](const Request& req, Response& res) {
        guarded(res, 200, [&] {
            return video_schematic(req.matches[1], req.has_param("dataset") ? req.get_param_value("dataset") : "");
        });
    });
}

}  // namespace garet

#endif  // GARET_SERVICE_HPP
