#ifndef GARET_EVAL_HPP
#define GARET_EVAL_HPP

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <iomanip>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "garet/core.hpp"
#include "garet/dataset.hpp"
#include "garet/encoder.hpp"
#include "garet/finetune.hpp"
#include "garet/selection.hpp"

namespace garet {

// ---------------------------------------------------------------------------
// Retrieval and metrics

struct RankedHit {
    std::size_t index = 0;  // into the pool
    double score = 0.0;     // cosine similarity to the query
};

/// Top-K pool entries by descending cosine similarity; ties by ascending id.
inline std::vector<RankedHit> retrieve_topk(const Gaf& query, std::span<const Gaf> pool, std::span<const std::string> ids,
                                            std::size_t k) {
    if (ids.size() != pool.size()) throw ShapeError("retrieve_topk: ids and pool differ in length");
    if (k > pool.size())
        throw PreconditionError("retrieve_topk: K=" + std::to_string(k) + " exceeds pool size " + std::to_string(pool.size()));
    std::vector<RankedHit> all(pool.size());
    for (std::size_t j = 0; j < pool.size(); ++j) all[j] = {j, cosine_similarity(query, pool[j])};
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                      [&](const RankedHit& a, const RankedHit& b) {
                          if (a.score != b.score) return a.score > b.score;
                          return ids[a.index] < ids[b.index];
                      });
    all.resize(k);
    return all;
}

using LabelMap = std::unordered_map<std::string, std::string>;

inline LabelMap label_map(const Dataset& ds) {
    LabelMap m;
    for (const auto& v : ds.videos)
        if (v.class_label) m.emplace(v.id, *v.class_label);
    return m;
}

inline std::size_t count_matches(std::span<const std::string> retrieved, const std::string& target, const LabelMap& labels) {
    std::size_t hits = 0;
    for (const auto& id : retrieved) {
        auto it = labels.find(id);
        if (it == labels.end()) throw PreconditionError("no class label for retrieved video '" + id + "'");
        if (it->second == target) ++hits;
    }
    return hits;
}

/// N_P / K over the retrieved list.
inline double precision_at_k(std::span<const std::string> retrieved, const std::string& target, const LabelMap& labels) {
    if (retrieved.empty()) throw PreconditionError("precision_at_k: empty retrieval list");
    return static_cast<double>(count_matches(retrieved, target, labels)) / static_cast<double>(retrieved.size());
}

/// 1 iff at least one retrieved video belongs to the target class.
inline int hit_at_k(std::span<const std::string> retrieved, const std::string& target, const LabelMap& labels) {
    return count_matches(retrieved, target, labels) > 0 ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Protocol

enum class Variant { pretrained, ours, random, coreset, kmeans, ours_wo_s, ours_wo_v };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::pretrained: return "pretrained";
        case Variant::ours: return "ours";
        case Variant::random: return "random";
        case Variant::coreset: return "coreset";
        case Variant::kmeans: return "kmeans";
        case Variant::ours_wo_s: return "ours-wo-s";
        case Variant::ours_wo_v: return "ours-wo-v";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    for (Variant v : {Variant::pretrained, Variant::ours, Variant::random, Variant::coreset, Variant::kmeans,
                      Variant::ours_wo_s, Variant::ours_wo_v})
        if (s == to_string(v)) return v;
    throw ConfigError("unknown variant '" + s +
                      "' (expected pretrained, ours, random, coreset, kmeans, ours-wo-s or ours-wo-v)");
}

struct EvalConfig {
    std::vector<std::size_t> ks{5, 10};
    std::size_t trials_per_class = 10;
    std::size_t n_query = 3;
    bool evaluate_others = true;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    SelectionConfig selection{};
    FinetuneConfig finetune{};

    void validate() const {
        if (ks.empty()) throw ConfigError("at least one K is required");
        for (auto k : ks)
            if (k == 0) throw ConfigError("K must be positive");
        if (trials_per_class < 1) throw ConfigError("trials_per_class must be >= 1");
        if (n_query < 1) throw ConfigError("n_query must be >= 1");
        if (workers < 1) throw ConfigError("workers must be >= 1");
        selection.validate();
        finetune.validate();
    }

    /// Ks not larger than N_select leave little room for unseen videos.
    std::vector<std::string> warnings() const {
        std::vector<std::string> w;
        for (auto k : ks)
            if (k <= selection.n_select)
                w.push_back("K=" + std::to_string(k) + " is not larger than N_select=" + std::to_string(selection.n_select));
        return w;
    }

    std::string canonical() const {
        std::ostringstream os;
        os.precision(17);
        os << "ks=";
        for (auto k : ks) os << k << ' ';
        os << ";trials=" << trials_per_class << ";n_query=" << n_query << ";others=" << evaluate_others
           << ";seed=" << seed << ";lambda=" << selection.lambda << ";P=" << selection.patterns
           << ";N_V=" << selection.masked_persons << ";N_E=" << selection.extra_factor
           << ";N_select=" << selection.n_select << ";metric=" << to_string(selection.coreset_metric)
           << ";ranking=" << to_string(selection.ranking) << ";margin=" << finetune.margin
           << ";lr=" << finetune.adam.lr << ";b1=" << finetune.adam.beta1 << ";b2=" << finetune.adam.beta2
           << ";eps=" << finetune.adam.eps << ";epochs=" << finetune.epochs << ";use_reg=" << finetune.use_reg
           << ";reg_weight=" << finetune.reg_weight << ";patience=" << finetune.early_stop_patience;
        return os.str();
    }
};

struct KMetrics {
    std::size_t k = 0;
    double precision_original = 0.0;
    double hit_original = 0.0;
    double precision_others = 0.0;
    double hit_others = 0.0;
    bool operator==(const KMetrics&) const = default;
};

struct TrialResult {
    Variant variant = Variant::ours;
    std::string target_class;
    std::size_t trial = 0;
    std::uint64_t seed = 0;
    bool skipped = false;
    std::string skip_reason;
    std::vector<std::string> query_ids;
    std::vector<std::string> selected_ids;
    std::vector<Label> labels;
    std::vector<KMetrics> metrics;
    std::size_t others_count = 0;
    std::size_t finetune_epochs = 0;
    double final_loss = 0.0;
    double final_ctr = 0.0;
    double final_reg = 0.0;
    std::string stop_reason;
};

/// Pre-trained snapshot plus the embedded retrieval pool (train split).
struct ProtocolContext {
    const Dataset* dataset = nullptr;
    EncoderParams pretrained;
    std::vector<std::size_t> pool_index;  // dataset indices of the train split
    std::vector<std::string> pool_ids;
    std::vector<Gaf> pool_gafs;           // under the pre-trained params
    LabelMap labels;

    ProtocolContext(const Dataset& ds, EncoderParams params) : dataset(&ds), pretrained(std::move(params)) {
        pool_index = ds.indices(Split::train);
        for (auto k : pool_index) {
            pool_ids.push_back(ds.videos[k].id);
            pool_gafs.push_back(encode_gaf(ds.videos[k], pretrained));
        }
        labels = label_map(ds);
    }
};

inline std::uint64_t trial_seed(std::uint64_t base, std::size_t class_idx, std::size_t trial) {
    Rng r = derive_rng(base, {0x7121a1, class_idx, trial});
    return r();
}

namespace detail {

/// Lloyd's k-means on L2-normalized GAFs; returns, per centroid, the index of
/// the nearest not-yet-taken pool video.
inline std::vector<std::size_t> kmeans_select(std::span<const Gaf> pool, std::size_t k, Rng& rng, std::size_t iters = 25) {
    require(k >= 1 && k <= pool.size(), "kmeans_select: need 1 <= k <= pool size");
    const std::size_t dim = pool[0].size();
    std::vector<Vec> pts;
    for (const auto& g : pool) {
        Vec p = g.values;
        const double n = norm(p);
        if (n > 0)
            for (double& x : p) x /= n;
        pts.push_back(std::move(p));
    }
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Vec> cent;
    for (std::size_t c = 0; c < k; ++c) cent.push_back(pts[order[c]]);
    std::vector<std::size_t> assign(pts.size(), 0);
    for (std::size_t it = 0; it < iters; ++it) {
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double best = euclidean_distance(pts[i], cent[0]);
            assign[i] = 0;
            for (std::size_t c = 1; c < k; ++c) {
                const double d = euclidean_distance(pts[i], cent[c]);
                if (d < best) best = d, assign[i] = c;
            }
        }
        std::vector<Vec> sum(k, Vec(dim, 0.0));
        std::vector<std::size_t> cnt(k, 0);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            ++cnt[assign[i]];
            for (std::size_t d = 0; d < dim; ++d) sum[assign[i]][d] += pts[i][d];
        }
        for (std::size_t c = 0; c < k; ++c)
            if (cnt[c])
                for (std::size_t d = 0; d < dim; ++d) cent[c][d] = sum[c][d] / static_cast<double>(cnt[c]);
    }
    std::vector<std::size_t> out;
    std::vector<char> taken(pts.size(), 0);
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t best = pts.size();
        double bd = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (taken[i]) continue;
            const double d = euclidean_distance(pts[i], cent[c]);
            if (best == pts.size() || d < bd) best = i, bd = d;
        }
        taken[best] = 1;
        out.push_back(best);
    }
    return out;
}

inline void add_metrics(std::vector<KMetrics>& acc, const Gaf& q, const ProtocolContext& ctx, std::span<const Gaf> pool,
                        const std::vector<std::size_t>& ks, const std::string& target, bool others) {
    const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
    auto hits = retrieve_topk(q, pool, ctx.pool_ids, kmax);
    std::vector<std::string> ids;
    for (const auto& h : hits) ids.push_back(ctx.pool_ids[h.index]);
    for (std::size_t i = 0; i < ks.size(); ++i) {
        std::span<const std::string> top(ids.data(), ks[i]);
        const double p = precision_at_k(top, target, ctx.labels);
        const double h = hit_at_k(top, target, ctx.labels);
        if (others) {
            acc[i].precision_others += p;
            acc[i].hit_others += h;
        } else {
            acc[i].precision_original += p;
            acc[i].hit_original += h;
        }
    }
}

}  // namespace detail

/// Single evaluation trial: sample queries of the target class from the test
/// split, select and oracle-annotate pool videos, fine-tune from the
/// pre-trained snapshot, and score retrieval from the train pool.
inline TrialResult run_trial(const ProtocolContext& ctx, const std::string& target_class, Variant variant,
                             const EvalConfig& cfg, std::uint64_t seed, std::size_t trial_no = 0) {
    const Dataset& ds = *ctx.dataset;
    TrialResult res;
    res.variant = variant;
    res.target_class = target_class;
    res.trial = trial_no;
    res.seed = seed;
    for (auto k : cfg.ks) res.metrics.push_back({k, 0, 0, 0, 0});

    auto test_idx = ds.indices(Split::test, target_class);
    const std::size_t kmax = *std::max_element(cfg.ks.begin(), cfg.ks.end());
    if (test_idx.size() < cfg.n_query) {
        res.skipped = true;
        res.skip_reason = "class '" + target_class + "' has " + std::to_string(test_idx.size()) +
                          " test videos, fewer than N_query=" + std::to_string(cfg.n_query);
        return res;
    }
    if (ctx.pool_gafs.size() < kmax) {
        res.skipped = true;
        res.skip_reason = "train pool smaller than K";
        return res;
    }

    Rng qrng = derive_rng(seed, {0x9e});
    std::shuffle(test_idx.begin(), test_idx.end(), qrng);
    std::vector<std::size_t> query_idx(test_idx.begin(), test_idx.begin() + static_cast<std::ptrdiff_t>(cfg.n_query));
    std::vector<std::size_t> others_idx(test_idx.begin() + static_cast<std::ptrdiff_t>(cfg.n_query), test_idx.end());
    std::sort(others_idx.begin(), others_idx.end());
    std::vector<VideoFeatures> queries;
    for (auto k : query_idx) {
        queries.push_back(ds.videos[k]);
        res.query_ids.push_back(ds.videos[k].id);
    }

    // Selection
    std::vector<std::size_t> sel;  // pool positions
    SelectionConfig scfg = cfg.selection;
    scfg.seed = seed;
    Rng srng = derive_rng(seed, {0x5e1});
    switch (variant) {
        case Variant::pretrained: break;
        case Variant::ours: sel = select_for_annotation(queries, ctx.pool_gafs, ctx.pretrained, scfg).selected; break;
        case Variant::ours_wo_s:
            scfg.use_similarity = false;
            sel = select_for_annotation(queries, ctx.pool_gafs, ctx.pretrained, scfg).selected;
            break;
        case Variant::ours_wo_v:
            scfg.use_dissimilarity = false;
            sel = select_for_annotation(queries, ctx.pool_gafs, ctx.pretrained, scfg).selected;
            break;
        case Variant::random: {
            std::vector<std::size_t> all(ctx.pool_gafs.size());
            std::iota(all.begin(), all.end(), 0);
            std::shuffle(all.begin(), all.end(), srng);
            sel.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(scfg.n_select));
            break;
        }
        case Variant::coreset: sel = coreset_select(ctx.pool_gafs, scfg.n_select, scfg.coreset_metric, srng); break;
        case Variant::kmeans: sel = detail::kmeans_select(ctx.pool_gafs, scfg.n_select, srng); break;
    }
    for (auto j : sel) res.selected_ids.push_back(ctx.pool_ids[j]);

    // Annotation and fine-tuning from the pristine snapshot
    EncoderParams params = ctx.pretrained;
    if (variant != Variant::pretrained) {
        const auto ann = oracle_annotate(res.selected_ids, target_class, ds);
        FinetuneBatch batch;
        for (const auto& q : queries) batch.queries.push_back(&q);
        for (std::size_t s = 0; s < sel.size(); ++s) {
            batch.selected.push_back(&ds.videos[ctx.pool_index[sel[s]]]);
            batch.labels.push_back(ann[s].label);
            res.labels.push_back(ann[s].label);
        }
        LossReport report;
        params = finetune(batch, std::move(params), cfg.finetune, &report);
        res.finetune_epochs = report.epochs.size();
        res.stop_reason = to_string(report.stop);
        if (!report.epochs.empty()) {
            res.final_loss = report.epochs.back().total;
            res.final_ctr = report.epochs.back().ctr;
            res.final_reg = report.epochs.back().reg;
        }
    } else {
        res.stop_reason = to_string(StopReason::no_epochs);
    }

    // Retrieval in the (possibly) fine-tuned space
    std::vector<Gaf> pool;
    const std::vector<Gaf>* pool_ptr = &ctx.pool_gafs;
    if (!(params == ctx.pretrained)) {
        pool.reserve(ctx.pool_index.size());
        for (auto k : ctx.pool_index) pool.push_back(encode_gaf(ds.videos[k], params));
        pool_ptr = &pool;
    }
    for (const auto& q : queries)
        detail::add_metrics(res.metrics, encode_gaf(q, params), ctx, *pool_ptr, cfg.ks, target_class, false);
    for (auto& m : res.metrics) {
        m.precision_original /= static_cast<double>(queries.size());
        m.hit_original /= static_cast<double>(queries.size());
    }
    if (cfg.evaluate_others && !others_idx.empty()) {
        for (auto k : others_idx)
            detail::add_metrics(res.metrics, encode_gaf(ds.videos[k], params), ctx, *pool_ptr, cfg.ks, target_class, true);
        for (auto& m : res.metrics) {
            m.precision_others /= static_cast<double>(others_idx.size());
            m.hit_others /= static_cast<double>(others_idx.size());
        }
        res.others_count = others_idx.size();
    }
    return res;
}

struct AggregateRow {
    Variant variant = Variant::ours;
    std::string target_class;  // empty for the weighted overall row
    std::size_t trials = 0;
    double weight = 0.0;
    std::vector<KMetrics> metrics;  // means
};

struct ProtocolReport {
    std::vector<std::size_t> ks;
    std::vector<TrialResult> trials;
    std::vector<AggregateRow> per_class;
    std::vector<AggregateRow> overall;  // one per variant

    const AggregateRow& overall_for(Variant v) const {
        for (const auto& r : overall)
            if (r.variant == v) return r;
        throw NotFoundError(std::string("no overall row for variant ") + to_string(v));
    }
    double overall_metric(Variant v, std::size_t k, bool others = false, bool hit = false) const {
        for (const auto& m : overall_for(v).metrics)
            if (m.k == k) return others ? (hit ? m.hit_others : m.precision_others) : (hit ? m.hit_original : m.precision_original);
        throw NotFoundError("K=" + std::to_string(k) + " not evaluated");
    }
};

/// Per-class means and class-size-weighted overall means of every metric.
/// Class weights are catalog counts; skipped trials are excluded.
inline void aggregate(ProtocolReport& rep, std::span<const Variant> variants, const std::vector<ClassEntry>& catalog) {
    rep.per_class.clear();
    rep.overall.clear();
    for (Variant v : variants) {
        AggregateRow total{v, "", 0, 0.0, {}};
        for (auto k : rep.ks) total.metrics.push_back({k, 0, 0, 0, 0});
        for (const auto& cls : catalog) {
            AggregateRow row{v, cls.name, 0, static_cast<double>(cls.count), {}};
            for (auto k : rep.ks) row.metrics.push_back({k, 0, 0, 0, 0});
            for (const auto& t : rep.trials) {
                if (t.variant != v || t.target_class != cls.name || t.skipped) continue;
                ++row.trials;
                for (std::size_t i = 0; i < rep.ks.size(); ++i) {
                    row.metrics[i].precision_original += t.metrics[i].precision_original;
                    row.metrics[i].hit_original += t.metrics[i].hit_original;
                    row.metrics[i].precision_others += t.metrics[i].precision_others;
                    row.metrics[i].hit_others += t.metrics[i].hit_others;
                }
            }
            if (row.trials == 0) continue;
            for (auto& m : row.metrics) {
                const double n = static_cast<double>(row.trials);
                m.precision_original /= n, m.hit_original /= n, m.precision_others /= n, m.hit_others /= n;
            }
            total.trials += row.trials;
            total.weight += row.weight;
            for (std::size_t i = 0; i < rep.ks.size(); ++i) {
                total.metrics[i].precision_original += row.weight * row.metrics[i].precision_original;
                total.metrics[i].hit_original += row.weight * row.metrics[i].hit_original;
                total.metrics[i].precision_others += row.weight * row.metrics[i].precision_others;
                total.metrics[i].hit_others += row.weight * row.metrics[i].hit_others;
            }
            rep.per_class.push_back(std::move(row));
        }
        if (total.weight > 0)
            for (auto& m : total.metrics) {
                m.precision_original /= total.weight, m.hit_original /= total.weight;
                m.precision_others /= total.weight, m.hit_others /= total.weight;
            }
        rep.overall.push_back(std::move(total));
    }
}

/// Repeated-trial protocol: trials_per_class trials per class and variant,
/// each starting from the pre-trained snapshot. Trial seeds depend only on
/// (cfg.seed, class, trial), so every variant sees the same queries.
/// Results are ordered (variant, class, trial) regardless of worker count.
inline ProtocolReport run_protocol(const Dataset& ds, const EncoderParams& pretrained, std::span<const Variant> variants,
                                   const EvalConfig& cfg) {
    cfg.validate();
    ProtocolContext ctx(ds, pretrained);
    struct Job {
        Variant v;
        std::size_t cls;
        std::size_t trial;
    };
    std::vector<Job> jobs;
    for (Variant v : variants)
        for (std::size_t c = 0; c < ds.class_catalog.size(); ++c)
            for (std::size_t t = 0; t < cfg.trials_per_class; ++t) jobs.push_back({v, c, t});

    ProtocolReport rep;
    rep.ks = cfg.ks;
    rep.trials.resize(jobs.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&]() {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            try {
                const Job& job = jobs[j];
                rep.trials[j] = run_trial(ctx, ds.class_catalog[job.cls].name, job.v, cfg,
                                          trial_seed(cfg.seed, job.cls, job.trial), job.trial);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const std::size_t n_workers = std::min(cfg.workers, std::max<std::size_t>(1, jobs.size()));
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    aggregate(rep, variants, ds.class_catalog);
    return rep;
}

// ---------------------------------------------------------------------------
// Report output

inline nlohmann::json trial_record(const TrialResult& t) {
    using nlohmann::json;
    json metrics = json::array();
    for (const auto& m : t.metrics)
        metrics.push_back({{"k", m.k},
                           {"precision_original", m.precision_original},
                           {"hit_original", m.hit_original},
                           {"precision_others", m.precision_others},
                           {"hit_others", m.hit_others}});
    json labels = json::array();
    for (auto l : t.labels) labels.push_back(to_string(l));
    return {{"variant", to_string(t.variant)},
            {"class", t.target_class},
            {"trial", t.trial},
            {"seed", t.seed},
            {"skipped", t.skipped},
            {"skip_reason", t.skip_reason},
            {"queries", t.query_ids},
            {"selected", t.selected_ids},
            {"labels", labels},
            {"others_count", t.others_count},
            {"finetune_epochs", t.finetune_epochs},
            {"final_loss", t.final_loss},
            {"final_ctr", t.final_ctr},
            {"final_reg", t.final_reg},
            {"stop_reason", t.stop_reason},
            {"metrics", metrics}};
}

/// One JSON object per trial, in report order. Contains no timestamps, so
/// identical inputs give byte-identical output.
inline void write_records(std::ostream& os, const ProtocolReport& rep, const nlohmann::json& extra = nullptr) {
    for (const auto& t : rep.trials) {
        auto j = trial_record(t);
        if (!extra.is_null())
            for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
        os << j.dump() << '\n';
    }
}

inline void write_table(std::ostream& os, const ProtocolReport& rep, bool with_classes = true) {
    auto header = [&]() {
        os << std::left << std::setw(12) << "variant" << std::setw(14) << "class" << std::right << std::setw(7) << "trials";
        for (auto k : rep.ks) {
            os << std::setw(10) << ("P@" + std::to_string(k) + "o") << std::setw(10) << ("H@" + std::to_string(k) + "o")
               << std::setw(10) << ("P@" + std::to_string(k) + "x") << std::setw(10) << ("H@" + std::to_string(k) + "x");
        }
        os << '\n';
    };
    auto row = [&](const AggregateRow& r) {
        os << std::left << std::setw(12) << to_string(r.variant) << std::setw(14)
           << (r.target_class.empty() ? "(weighted)" : r.target_class) << std::right << std::setw(7) << r.trials;
        os << std::fixed << std::setprecision(3);
        for (const auto& m : r.metrics)
            os << std::setw(10) << m.precision_original << std::setw(10) << m.hit_original << std::setw(10)
               << m.precision_others << std::setw(10) << m.hit_others;
        os << std::defaultfloat << '\n';
    };
    header();
    for (const auto& r : rep.overall) row(r);
    if (with_classes) {
        os << '\n';
        header();
        for (const auto& r : rep.per_class) row(r);
    }
    os << "(o = original queries, x = other test videos of the class)\n";
}

// ---------------------------------------------------------------------------
// Hyperparameter sweeps (N_V and N_E)

enum class SweepParam { masked_persons, extra_factor };

inline const char* to_string(SweepParam p) { return p == SweepParam::masked_persons ? "N_V" : "N_E"; }

struct SweepPoint {
    SweepParam param;
    std::size_t value = 0;
    ProtocolReport report;
};

inline std::vector<SweepPoint> run_sweep(const Dataset& ds, const EncoderParams& pretrained, const EvalConfig& base,
                                         std::span<const std::size_t> nv_values, std::span<const std::size_t> ne_values) {
    std::vector<SweepPoint> out;
    const Variant ours[] = {Variant::ours};
    for (auto nv : nv_values) {
        EvalConfig cfg = base;
        cfg.selection.masked_persons = nv;
        out.push_back({SweepParam::masked_persons, nv, run_protocol(ds, pretrained, ours, cfg)});
    }
    for (auto ne : ne_values) {
        EvalConfig cfg = base;
        cfg.selection.extra_factor = ne;
        out.push_back({SweepParam::extra_factor, ne, run_protocol(ds, pretrained, ours, cfg)});
    }
    return out;
}

inline void write_sweep_table(std::ostream& os, std::span<const SweepPoint> points) {
    if (points.empty()) return;
    const auto& ks = points.front().report.ks;
    os << std::left << std::setw(6) << "param" << std::right << std::setw(7) << "value";
    for (auto k : ks) os << std::setw(10) << ("P@" + std::to_string(k) + "o") << std::setw(10) << ("H@" + std::to_string(k) + "o");
    os << '\n';
    for (const auto& p : points) {
        os << std::left << std::setw(6) << to_string(p.param) << std::right << std::setw(7) << p.value << std::fixed
           << std::setprecision(3);
        for (const auto& m : p.report.overall.front().metrics)
            os << std::setw(10) << m.precision_original << std::setw(10) << m.hit_original;
        os << std::defaultfloat << '\n';
    }
}

inline void write_sweep_records(std::ostream& os, std::span<const SweepPoint> points) {
    for (const auto& p : points)
        write_records(os, p.report, {{"sweep", {{"param", to_string(p.param)}, {"value", p.value}}}});
}

}  // namespace garet

#endif  // GARET_EVAL_HPP
