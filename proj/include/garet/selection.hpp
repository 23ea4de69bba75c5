#ifndef GARET_SELECTION_HPP
#define GARET_SELECTION_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "garet/core.hpp"
#include "garet/encoder.hpp"
#include "garet/video.hpp"

namespace garet {

using Matrix = std::vector<Vec>;  // row-major, one Vec per row

enum class CoresetMetric { cosine_distance, cosine_similarity };
enum class Ranking { desc, asc };

inline const char* to_string(CoresetMetric m) {
    return m == CoresetMetric::cosine_distance ? "cosine-distance" : "cosine-similarity";
}
inline const char* to_string(Ranking r) { return r == Ranking::desc ? "desc" : "asc"; }

struct SelectionConfig {
    double lambda = 1.0;     // weight of local dissimilarity in I = S + lambda * V
    std::size_t patterns = 10;  // P, masking patterns per query
    std::size_t masked_persons = 2;  // N_V
    std::size_t extra_factor = 4;    // N_E
    std::size_t n_select = 5;
    CoresetMetric coreset_metric = CoresetMetric::cosine_distance;
    Ranking ranking = Ranking::desc;
    // Ablation switches: drop S or V from the informative score.
    bool use_similarity = true;
    bool use_dissimilarity = true;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value >= 0");
        if (patterns < 1) throw ConfigError("patterns (P) must be >= 1");
        if (extra_factor < 1) throw ConfigError("extra_factor (N_E) must be >= 1");
        if (n_select < 1) throw ConfigError("n_select must be >= 1");
    }
};

struct SelectionScores {
    Matrix s;      // query similarity
    Matrix s_bar;  // mean of masked similarities
    Matrix v;      // local dissimilarity (population variance over patterns)
    Matrix i;      // informative score
};

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("cosine_similarity: dimension mismatch");
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine_similarity: zero-norm vector");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

inline Matrix query_similarity(std::span<const Gaf> queries, std::span<const Gaf> pool) {
    if (queries.empty() || pool.empty()) throw PreconditionError("query_similarity: empty query or pool list");
    Matrix s(queries.size(), Vec(pool.size()));
    for (std::size_t k = 0; k < queries.size(); ++k)
        for (std::size_t j = 0; j < pool.size(); ++j) s[k][j] = cosine_similarity(queries[k], pool[j]);
    return s;
}

struct LocalDissimilarity {
    Vec v;
    Vec s_bar;
};

/// Variance over masking patterns of the similarity between the masked query
/// GAFs and each pool GAF, for explicitly given patterns.
inline LocalDissimilarity local_dissimilarity(const VideoFeatures& query, std::span<const Gaf> pool,
                                              const EncoderParams& params, std::span<const MaskPattern> patterns) {
    if (patterns.empty()) throw PreconditionError("local_dissimilarity: need at least one masking pattern");
    std::vector<Gaf> masked;
    masked.reserve(patterns.size());
    for (const auto& m : patterns) masked.push_back(encode_gaf(query, params, m));

    const double inv_p = 1.0 / static_cast<double>(patterns.size());
    LocalDissimilarity out{Vec(pool.size(), 0.0), Vec(pool.size(), 0.0)};
    Vec sims(patterns.size());
    for (std::size_t j = 0; j < pool.size(); ++j) {
        double mean = 0.0;
        for (std::size_t p = 0; p < masked.size(); ++p) {
            sims[p] = cosine_similarity(masked[p], pool[j]);
            mean += sims[p];
        }
        mean *= inv_p;
        // deviations taken about sims[0] so identical masked scores give exactly 0
        double shift = 0.0;
        for (double s : sims) shift += s - sims[0];
        shift *= inv_p;
        double var = 0.0;
        for (double s : sims) var += (s - sims[0] - shift) * (s - sims[0] - shift);
        out.s_bar[j] = mean;
        out.v[j] = var * inv_p;
    }
    return out;
}

/// Draws cfg.patterns random N_V-person masks of the query and delegates.
inline LocalDissimilarity local_dissimilarity(const VideoFeatures& query, std::span<const Gaf> pool,
                                              const EncoderParams& params, const SelectionConfig& cfg, Rng& rng) {
    if (cfg.masked_persons >= query.persons)
        throw PreconditionError("local_dissimilarity: N_V=" + std::to_string(cfg.masked_persons) +
                                " must be smaller than the query's person count " + std::to_string(query.persons));
    if (cfg.patterns < 1) throw PreconditionError("local_dissimilarity: P must be >= 1");
    std::vector<MaskPattern> patterns;
    for (std::size_t p = 0; p < cfg.patterns; ++p) patterns.push_back(random_mask(query.persons, cfg.masked_persons, rng));
    return local_dissimilarity(query, pool, params, patterns);
}

inline Matrix informative_score(const Matrix& s, const Matrix& v, double lambda) {
    if (s.size() != v.size()) throw ShapeError("informative_score: S and V row counts differ");
    Matrix out(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) {
        if (s[k].size() != v[k].size()) throw ShapeError("informative_score: S and V column counts differ");
        out[k].resize(s[k].size());
        for (std::size_t j = 0; j < s[k].size(); ++j) out[k][j] = s[k][j] + lambda * v[k][j];
    }
    return out;
}

struct QueryAwareResult {
    std::vector<std::size_t> extracted;  // pool indices, in selection order
    SelectionScores scores;
};

/// Query-aware selection: for each query in turn, score the pool by
/// I = S + lambda * V and move the top N_select * N_E still-available videos
/// into the extracted set.
inline QueryAwareResult query_aware_select(std::span<const VideoFeatures> queries, std::span<const Gaf> pool,
                                           const EncoderParams& params, const SelectionConfig& cfg, Rng& rng) {
    cfg.validate();
    if (queries.empty()) throw PreconditionError("query_aware_select: no query videos");
    const std::size_t per_query = cfg.n_select * cfg.extra_factor;
    if (per_query * queries.size() > pool.size())
        throw PreconditionError("query_aware_select: pool of " + std::to_string(pool.size()) +
                                " videos cannot supply N_select*N_E*N_query = " +
                                std::to_string(per_query * queries.size()));

    QueryAwareResult res;
    std::vector<char> available(pool.size(), 1);
    for (std::size_t k = 0; k < queries.size(); ++k) {
        const Gaf g = encode_gaf(queries[k], params);
        Vec s_row(pool.size());
        for (std::size_t j = 0; j < pool.size(); ++j) s_row[j] = cosine_similarity(g, pool[j]);
        LocalDissimilarity ld = local_dissimilarity(queries[k], pool, params, cfg, rng);

        Vec i_row(pool.size());
        for (std::size_t j = 0; j < pool.size(); ++j)
            i_row[j] = (cfg.use_similarity ? s_row[j] : 0.0) + (cfg.use_dissimilarity ? cfg.lambda * ld.v[j] : 0.0);

        std::vector<std::size_t> cand;
        for (std::size_t j = 0; j < pool.size(); ++j)
            if (available[j]) cand.push_back(j);
        auto better = [&](std::size_t a, std::size_t b) {
            if (i_row[a] != i_row[b]) return cfg.ranking == Ranking::desc ? i_row[a] > i_row[b] : i_row[a] < i_row[b];
            return a < b;
        };
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(per_query), cand.end(), better);
        for (std::size_t r = 0; r < per_query; ++r) {
            available[cand[r]] = 0;
            res.extracted.push_back(cand[r]);
        }
        res.scores.s.push_back(std::move(s_row));
        res.scores.s_bar.push_back(std::move(ld.s_bar));
        res.scores.v.push_back(std::move(ld.v));
        res.scores.i.push_back(std::move(i_row));
    }
    return res;
}

/// Greedy k-center selection over candidate GAFs. The first pick is uniform;
/// each later pick maximizes its minimum score to the already-chosen set,
/// where the score is 1 - cos (default) or cos itself.
/// Returns candidate indices in pick order.
inline std::vector<std::size_t> coreset_select(std::span<const Gaf> candidates, std::size_t n_select,
                                               CoresetMetric metric, Rng& rng) {
    if (n_select < 1) throw PreconditionError("coreset_select: n_select must be >= 1");
    if (n_select > candidates.size())
        throw PreconditionError("coreset_select: n_select=" + std::to_string(n_select) + " exceeds " +
                                std::to_string(candidates.size()) + " candidates");
    auto score = [&](std::size_t a, std::size_t b) {
        const double c = cosine_similarity(candidates[a], candidates[b]);
        return metric == CoresetMetric::cosine_distance ? 1.0 - c : c;
    };

    std::uniform_int_distribution<std::size_t> first(0, candidates.size() - 1);
    std::vector<std::size_t> picked{first(rng)};
    std::vector<char> taken(candidates.size(), 0);
    taken[picked[0]] = 1;
    Vec min_score(candidates.size(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (!taken[i]) min_score[i] = score(i, picked[0]);

    while (picked.size() < n_select) {
        std::size_t best = candidates.size();
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            if (taken[i]) continue;
            if (best == candidates.size() || min_score[i] > min_score[best]) best = i;
        }
        picked.push_back(best);
        taken[best] = 1;
        for (std::size_t i = 0; i < candidates.size(); ++i)
            if (!taken[i]) min_score[i] = std::min(min_score[i], score(i, best));
    }
    return picked;
}

struct SelectionResult {
    std::vector<std::size_t> extracted;  // pool indices (D_ex)
    std::vector<std::size_t> selected;   // pool indices (D_select), pick order
    SelectionScores scores;
};

/// Full two-stage selection with a generator derived from cfg.seed. This is
/// the single entry point shared by the protocol runner and the service.
inline SelectionResult select_for_annotation(std::span<const VideoFeatures> queries, std::span<const Gaf> pool,
                                             const EncoderParams& params, const SelectionConfig& cfg) {
    Rng rng = derive_rng(cfg.seed, {0x5e1ec7});
    QueryAwareResult qa = query_aware_select(queries, pool, params, cfg, rng);
    std::vector<Gaf> ex;
    ex.reserve(qa.extracted.size());
    for (auto j : qa.extracted) ex.push_back(pool[j]);
    std::vector<std::size_t> local = coreset_select(ex, cfg.n_select, cfg.coreset_metric, rng);
    SelectionResult out;
    out.extracted = std::move(qa.extracted);
    for (auto l : local) out.selected.push_back(out.extracted[l]);
    out.scores = std::move(qa.scores);
    return out;
}

/// CSV selection report: one row per (query, candidate) with its scores, its
/// 1-based rank by I under the configured ranking, and whether it was
/// extracted by the query-aware stage and chosen by the core-set stage.
inline void write_selection_report(std::ostream& os, std::span<const std::string> query_ids,
                                   std::span<const std::string> pool_ids, const SelectionResult& sel,
                                   Ranking ranking = Ranking::desc) {
    os << "query,candidate,S,S_bar,V,I,rank,extracted,selected\n";
    std::vector<char> ex(pool_ids.size(), 0), chosen(pool_ids.size(), 0);
    for (auto j : sel.extracted) ex[j] = 1;
    for (auto j : sel.selected) chosen[j] = 1;
    char buf[64];
    auto num = [&buf](double x) {
        std::snprintf(buf, sizeof buf, "%.17g", x);
        return std::string(buf);
    };
    for (std::size_t k = 0; k < sel.scores.i.size(); ++k) {
        const Vec& irow = sel.scores.i[k];
        std::vector<std::size_t> order(irow.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return ranking == Ranking::desc ? irow[a] > irow[b] : irow[a] < irow[b];
        });
        std::vector<std::size_t> rank(irow.size());
        for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
        for (std::size_t j = 0; j < irow.size(); ++j) {
            os << query_ids[k] << ',' << pool_ids[j] << ',' << num(sel.scores.s[k][j]) << ','
               << num(sel.scores.s_bar[k][j]) << ',' << num(sel.scores.v[k][j]) << ',' << num(irow[j]) << ','
               << rank[j] << ',' << int(ex[j]) << ',' << int(chosen[j]) << '\n';
        }
    }
}

}  // namespace garet

#endif  // GARET_SELECTION_HPP
