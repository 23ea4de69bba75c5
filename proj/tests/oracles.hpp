// Straight-line reference implementations used as test oracles. Written
// from the definitions with plain loops and no library helpers
// beyond data types, so disagreements point at the library.
#ifndef GARET_TESTS_ORACLES_HPP
#define GARET_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <vector>

#include "garet/garet.hpp"

namespace oracle {

using garet::EncoderParams;
using garet::Gaf;
using garet::MaskPattern;
using garet::Position;
using garet::Vec;
using garet::VideoFeatures;

constexpr double kPi = 3.14159265358979323846;

inline Vec pe(double x, double y, std::size_t c, double base = 10000.0) {
    Vec out(c);
    const std::size_t half = c / 2;
    for (std::size_t d = 0; d < c; ++d) {
        const double v = d < half ? x : y;
        const std::size_t i = d % half;
        const double freq = std::pow(base, double(2 * (i / 2)) / double(half));
        out[d] = (i % 2 == 0) ? std::sin(2 * kPi * v / freq) : std::cos(2 * kPi * v / freq);
    }
    return out;
}

inline Vec matvec(const garet::Linear& l, const Vec& x) {
    Vec y(l.out);
    for (std::size_t o = 0; o < l.out; ++o) {
        double s = 0;
        for (std::size_t i = 0; i < l.in; ++i) s += l.weight[o * l.in + i] * x[i];
        y[o] = s + l.bias[o];
    }
    return y;
}

inline Vec encode(const VideoFeatures& v, const EncoderParams& p, const std::set<std::size_t>& masked = {}) {
    const std::size_t C = p.channels, T = v.frames, N = v.persons;
    const double NEG = -std::numeric_limits<double>::infinity();
    auto feat = [&](std::size_t t, std::size_t n) {
        Vec f = pe(v.positions[t * N + n].x, v.positions[t * N + n].y, C, p.pe_base);
        for (std::size_t c = 0; c < C; ++c) f[c] += v.appearance[(t * N + n) * C + c];
        return f;
    };
    Vec g_ts(C, NEG), g_st(C, NEG);
    for (std::size_t n = 0; n < N; ++n) {
        if (masked.count(n)) continue;
        Vec m(C, NEG);
        for (std::size_t t = 0; t < T; ++t) {
            Vec f = feat(t, n);
            for (std::size_t c = 0; c < C; ++c) m[c] = std::max(m[c], f[c]);
        }
        Vec z = matvec(p.ts, m);
        for (std::size_t c = 0; c < C; ++c) g_ts[c] = std::max(g_ts[c], z[c]);
    }
    for (std::size_t t = 0; t < T; ++t) {
        Vec m(C, NEG);
        for (std::size_t n = 0; n < N; ++n) {
            if (masked.count(n)) continue;
            Vec f = feat(t, n);
            for (std::size_t c = 0; c < C; ++c) m[c] = std::max(m[c], f[c]);
        }
        Vec z = matvec(p.st, m);
        for (std::size_t c = 0; c < C; ++c) g_st[c] = std::max(g_st[c], z[c]);
    }
    Vec g = g_ts;
    g.insert(g.end(), g_st.begin(), g_st.end());
    return g;
}

inline Vec head(const EncoderParams& p, const Vec& gaf, double x, double y) {
    Vec in = gaf;
    Vec e = pe(x, y, p.channels, p.pe_base);
    in.insert(in.end(), e.begin(), e.end());
    Vec h1 = matvec(p.afh1, in);
    for (double& a : h1) a = a < 0 ? 0 : a;
    Vec h2 = matvec(p.afh2, h1);
    for (double& a : h2) a = a < 0 ? 0 : a;
    return matvec(p.afh3, h2);
}

/// Pre-training loss: mean over videos, then over all persons, of the MSE
/// over T x C entries between predicted and true appearance.
inline double paf_loss(const std::vector<const VideoFeatures*>& batch, const std::vector<MaskPattern>& masks,
                       const EncoderParams& p) {
    double total = 0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const VideoFeatures& v = *batch[b];
        Vec g = encode(v, p, masks[b].masked);
        double per_video = 0;
        for (std::size_t n = 0; n < v.persons; ++n) {
            double se = 0;
            for (std::size_t t = 0; t < v.frames; ++t) {
                const Position& q = v.positions[t * v.persons + n];
                Vec a = head(p, g, q.x, q.y);
                for (std::size_t c = 0; c < p.channels; ++c) {
                    const double d = a[c] - v.appearance[(t * v.persons + n) * p.channels + c];
                    se += d * d;
                }
            }
            per_video += se / double(v.frames * p.channels);
        }
        total += per_video / double(v.persons);
    }
    return total / double(batch.size());
}

inline double cosine(const Vec& a, const Vec& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ab += a[i] * b[i], aa += a[i] * a[i], bb += b[i] * b[i];
    return ab / std::sqrt(aa * bb);
}

inline double dist(const Vec& a, const Vec& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

/// Triple loop over queries, positives, negatives.
inline double triplet(const std::vector<Vec>& q, const std::vector<Vec>& pos, const std::vector<Vec>& neg, double margin) {
    double total = 0;
    for (const auto& a : q) {
        double s = 0;
        for (const auto& p : pos)
            for (const auto& n : neg) s += std::max(0.0, dist(a, p) - dist(a, n) + margin);
        total += s / double(pos.size() * neg.size());
    }
    return total / double(q.size());
}

inline double reg(const std::vector<Vec>& cur, const std::vector<Vec>& pre) {
    double total = 0;
    for (std::size_t k = 0; k < cur.size(); ++k) {
        double s = 0;
        for (std::size_t i = 0; i < cur[k].size(); ++i) s += (cur[k][i] - pre[k][i]) * (cur[k][i] - pre[k][i]);
        total += s / double(cur[k].size());
    }
    return total / double(cur.size());
}

/// Population variance of the masked-query similarities for each pool item.
inline Vec variance(const VideoFeatures& query, const std::vector<Vec>& pool, const EncoderParams& p,
                    const std::vector<MaskPattern>& masks) {
    Vec out;
    for (const auto& g : pool) {
        std::vector<double> sims;
        for (const auto& m : masks) sims.push_back(cosine(encode(query, p, m.masked), g));
        // pairwise form: sum_{i,k} (s_i - s_k)^2 / (2 P^2)
        double acc = 0;
        for (double a : sims)
            for (double b : sims) acc += (a - b) * (a - b);
        const double n = double(sims.size());
        out.push_back(acc / (2 * n * n));
    }
    return out;
}

/// Query-aware selection. Masks are drawn from `rng` in the same order the
/// description prescribes: for each query, P patterns of N_V persons.
inline std::vector<std::size_t> query_aware(const std::vector<VideoFeatures>& queries, const std::vector<Vec>& pool,
                                           const EncoderParams& p, const garet::SelectionConfig& cfg, garet::Rng& rng) {
    const std::size_t take = cfg.n_select * cfg.extra_factor;
    std::vector<bool> removed(pool.size(), false);
    std::vector<std::size_t> d_ex;
    for (const auto& q : queries) {
        std::vector<MaskPattern> masks;
        for (std::size_t i = 0; i < cfg.patterns; ++i) masks.push_back(garet::random_mask(q.persons, cfg.masked_persons, rng));
        Vec gq = encode(q, p);
        Vec v = variance(q, pool, p, masks);
        std::vector<std::pair<double, std::size_t>> scored;
        for (std::size_t j = 0; j < pool.size(); ++j) {
            if (removed[j]) continue;
            const double s = cfg.use_similarity ? cosine(gq, pool[j]) : 0.0;
            const double i = s + (cfg.use_dissimilarity ? cfg.lambda * v[j] : 0.0);
            scored.push_back({i, j});
        }
        std::sort(scored.begin(), scored.end(), [](auto a, auto b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (std::size_t r = 0; r < take; ++r) {
            d_ex.push_back(scored[r].second);
            removed[scored[r].second] = true;
        }
    }
    return d_ex;
}

/// Greedy k-center: uniform first pick, then recompute every candidate's
/// minimum distance to the chosen set from scratch at each step.
inline std::vector<std::size_t> k_center(const std::vector<Vec>& cand, std::size_t n_select, bool literal, garet::Rng& rng) {
    std::uniform_int_distribution<std::size_t> first(0, cand.size() - 1);
    std::vector<std::size_t> chosen{first(rng)};
    while (chosen.size() < n_select) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t arg = cand.size();
        for (std::size_t u = 0; u < cand.size(); ++u) {
            if (std::find(chosen.begin(), chosen.end(), u) != chosen.end()) continue;
            double mn = std::numeric_limits<double>::infinity();
            for (std::size_t s : chosen) {
                const double c = cosine(cand[u], cand[s]);
                mn = std::min(mn, literal ? c : 1.0 - c);
            }
            if (mn > best) best = mn, arg = u;
        }
        chosen.push_back(arg);
    }
    return chosen;
}

/// Largest cosine distance from any candidate to its nearest chosen one.
inline double covering_radius(const std::vector<Vec>& cand, const std::vector<std::size_t>& chosen) {
    double r = 0;
    for (const auto& u : cand) {
        double mn = std::numeric_limits<double>::infinity();
        for (std::size_t s : chosen) mn = std::min(mn, 1.0 - cosine(u, cand[s]));
        r = std::max(r, mn);
    }
    return r;
}

/// One bias-corrected Adam update on a scalar, written out term by term.
struct ScalarAdam {
    double m = 0, v = 0;
    int t = 0;
    double step(double theta, double g, double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        return theta - lr * mh / (std::sqrt(vh) + eps);
    }
};

}  // namespace oracle

// ---------------------------------------------------------------------------
// Random instance helpers shared by the suites.

namespace testutil {

using garet::Rng;
using garet::Vec;
using garet::VideoFeatures;

inline VideoFeatures random_video(Rng& rng, std::size_t t, std::size_t n, std::size_t c, const std::string& id = "v") {
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    VideoFeatures v;
    v.id = id;
    v.frames = t;
    v.persons = n;
    v.channels = c;
    v.appearance.resize(t * n * c);
    for (double& a : v.appearance) a = g(rng);
    v.positions.resize(t * n);
    for (auto& p : v.positions) p = {u(rng), u(rng)};
    return v;
}

inline garet::Gaf random_gaf(Rng& rng, std::size_t dim) {
    std::normal_distribution<double> g(0.0, 1.0);
    garet::Gaf out;
    out.values.resize(dim);
    for (double& x : out.values) x = g(rng);
    return out;
}

inline std::vector<Vec> values(std::span<const garet::Gaf> gafs) {
    std::vector<Vec> out;
    for (const auto& g : gafs) out.push_back(g.values);
    return out;
}

/// Relative error used by the gradient checks: |a - n| / max(|a|, |n|),
/// with an absolute floor for gradients that are zero on both sides.
inline bool grad_close(double analytic, double numeric, double rel_tol, double abs_floor = 1e-9) {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale < abs_floor) return true;
    return std::abs(analytic - numeric) / scale <= rel_tol;
}

}  // namespace testutil

#endif  // GARET_TESTS_ORACLES_HPP
