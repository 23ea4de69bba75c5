#ifndef GARET_ENCODER_HPP
#define GARET_ENCODER_HPP

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "garet/core.hpp"
#include "garet/video.hpp"

namespace garet {

/// Fully-connected layer, weight stored row-major as out x in.
struct Linear {
    std::size_t in = 0;
    std::size_t out = 0;
    Vec weight;
    Vec bias;

    Linear() = default;
    Linear(std::size_t in_, std::size_t out_) : in(in_), out(out_), weight(in_ * out_, 0.0), bias(out_, 0.0) {}

    void apply(std::span<const double> x, std::span<double> y) const {
        for (std::size_t o = 0; o < out; ++o) {
            double s = bias[o];
            const double* w = weight.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) s += w[i] * x[i];
            y[o] = s;
        }
    }
    Vec apply(std::span<const double> x) const {
        Vec y(out);
        apply(x, y);
        return y;
    }

    bool operator==(const Linear&) const = default;
};

/// Learnable weights of the group-activity encoder and its appearance head.
///
/// The TS branch pools each person over time, projects, then pools over
/// persons; the ST branch pools each frame over persons, projects, then pools
/// over time. The appearance feature head (AFH) is a three-layer MLP from
/// [GAF | PE(position)] (3C wide) to a C-dimensional appearance prediction.
struct EncoderParams {
    std::size_t channels = 0;
    std::size_t hidden = 0;
    double pe_base = 10000.0;  // fixed, not trained
    Linear ts;
    Linear st;
    Linear afh1;
    Linear afh2;
    Linear afh3;

    static EncoderParams zeros(std::size_t c, std::size_t hidden_width = 0) {
        if (c == 0 || c % 4 != 0) throw ConfigError("channels must be a positive multiple of 4, got " + std::to_string(c));
        EncoderParams p;
        p.channels = c;
        p.hidden = hidden_width == 0 ? 2 * c : hidden_width;
        p.ts = Linear(c, c);
        p.st = Linear(c, c);
        p.afh1 = Linear(3 * c, p.hidden);
        p.afh2 = Linear(p.hidden, p.hidden);
        p.afh3 = Linear(p.hidden, c);
        return p;
    }

    /// Xavier-uniform weights, zero biases.
    static EncoderParams init(std::size_t c, std::uint64_t seed, std::size_t hidden_width = 0) {
        EncoderParams p = zeros(c, hidden_width);
        Rng rng = derive_rng(seed, {0x1417});
        auto fill = [&rng](Linear& l) {
            const double a = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
            std::uniform_real_distribution<double> u(-a, a);
            for (double& w : l.weight) w = u(rng);
        };
        for (Linear* l : p.layers()) fill(*l);
        return p;
    }

    std::array<Linear*, 5> layers() { return {&ts, &st, &afh1, &afh2, &afh3}; }
    std::array<const Linear*, 5> layers() const { return {&ts, &st, &afh1, &afh2, &afh3}; }

    /// Flat views over every tensor, in serialization order.
    std::vector<std::span<double>> tensors() {
        std::vector<std::span<double>> out;
        for (Linear* l : layers()) {
            out.emplace_back(l->weight);
            out.emplace_back(l->bias);
        }
        return out;
    }
    std::vector<std::span<const double>> tensors() const {
        std::vector<std::span<const double>> out;
        for (const Linear* l : layers()) {
            out.emplace_back(l->weight);
            out.emplace_back(l->bias);
        }
        return out;
    }

    /// Tensors touched by fine-tuning (encoder branches only).
    std::vector<std::span<double>> encoder_tensors() {
        return {ts.weight, ts.bias, st.weight, st.bias};
    }

    EncoderParams zeros_like() const { return zeros(channels, hidden); }

    bool operator==(const EncoderParams&) const = default;
};

inline const char* const kTensorNames[] = {"ts.weight",   "ts.bias",   "st.weight",   "st.bias",   "afh1.weight",
                                           "afh1.bias",   "afh2.weight", "afh2.bias", "afh3.weight", "afh3.bias"};

/// Sinusoidal encoding of a court position. The first C/2 entries encode x,
/// the last C/2 encode y; within each half, entry 2j is sin(2*pi*v / base^(2j/(C/2)))
/// and entry 2j+1 the matching cosine.
inline void spatial_positional_encoding(Position pos, std::span<double> out, double base = 10000.0) {
    const std::size_t c = out.size();
    if (c == 0 || c % 4 != 0) throw ConfigError("positional encoding needs C divisible by 4, got " + std::to_string(c));
    const std::size_t half = c / 2;
    const double coords[2] = {pos.x, pos.y};
    for (std::size_t axis = 0; axis < 2; ++axis) {
        const double v = 2.0 * std::numbers::pi * coords[axis];
        for (std::size_t j = 0; j < half / 2; ++j) {
            const double div = std::pow(base, static_cast<double>(2 * j) / static_cast<double>(half));
            out[axis * half + 2 * j] = std::sin(v / div);
            out[axis * half + 2 * j + 1] = std::cos(v / div);
        }
    }
}

inline Vec spatial_positional_encoding(Position pos, std::size_t c, double base = 10000.0) {
    Vec out(c);
    spatial_positional_encoding(pos, out, base);
    return out;
}

/// F_ind = appearance + PE(position).
inline Vec compose_person_feature(std::span<const double> appearance, Position pos, std::size_t c,
                                  double base = 10000.0) {
    if (appearance.size() != c)
        throw ShapeError("compose_person_feature: appearance has " + std::to_string(appearance.size()) +
                         " channels, expected " + std::to_string(c));
    Vec f = spatial_positional_encoding(pos, c, base);
    for (std::size_t k = 0; k < c; ++k) f[k] += appearance[k];
    return f;
}

/// 2C-dimensional group activity feature: [G_TS | G_ST].
struct Gaf {
    Vec values;

    std::size_t size() const { return values.size(); }
    operator std::span<const double>() const { return values; }
    bool operator==(const Gaf&) const = default;
};

/// Forward intermediates of one encode pass, kept for backpropagation.
struct EncodeTrace {
    std::vector<std::size_t> active;     // unmasked person indices, ascending
    std::vector<Vec> ts_pooled;          // per active person: max over frames of F_ind
    std::vector<Vec> ts_proj;            // per active person: W_ts * pooled + b
    std::vector<std::size_t> ts_arg;     // per channel: winning slot in `active`
    std::vector<Vec> st_pooled;          // per frame: max over active persons of F_ind
    std::vector<Vec> st_proj;            // per frame
    std::vector<std::size_t> st_arg;     // per channel: winning frame
    Gaf gaf;
};

namespace detail {

// Elementwise running max; ties keep the earlier (lower-index) entry.
inline void max_into(std::span<double> acc, std::span<const double> x) {
    for (std::size_t k = 0; k < acc.size(); ++k)
        if (x[k] > acc[k]) acc[k] = x[k];
}

inline void argmax_over(const std::vector<Vec>& rows, std::span<double> out, std::vector<std::size_t>& arg) {
    const std::size_t c = out.size();
    arg.assign(c, 0);
    for (std::size_t k = 0; k < c; ++k) {
        double best = rows[0][k];
        std::size_t who = 0;
        for (std::size_t r = 1; r < rows.size(); ++r) {
            if (rows[r][k] > best) {
                best = rows[r][k];
                who = r;
            }
        }
        out[k] = best;
        arg[k] = who;
    }
}

}  // namespace detail

inline EncodeTrace encode_gaf_traced(const VideoFeatures& video, const EncoderParams& params,
                                     const MaskPattern& mask = {}) {
    const std::size_t c = params.channels;
    if (video.channels != c)
        throw ShapeError("video '" + video.id + "' has C=" + std::to_string(video.channels) + ", encoder expects C=" +
                         std::to_string(c));
    EncodeTrace tr;
    for (std::size_t i = 0; i < video.persons; ++i)
        if (!mask.contains(i)) tr.active.push_back(i);
    if (tr.active.empty()) throw PreconditionError("encode_gaf: every person of video '" + video.id + "' is masked");

    const std::size_t n_act = tr.active.size();
    const std::size_t t_len = video.frames;

    // F_ind for active persons, [frame][slot]
    std::vector<std::vector<Vec>> f(t_len, std::vector<Vec>(n_act));
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t s = 0; s < n_act; ++s)
            f[t][s] = compose_person_feature(video.app(t, tr.active[s]), video.pos(t, tr.active[s]), c, params.pe_base);

    // TS: time pool -> project -> person pool
    tr.ts_pooled.resize(n_act);
    tr.ts_proj.resize(n_act);
    for (std::size_t s = 0; s < n_act; ++s) {
        Vec m = f[0][s];
        for (std::size_t t = 1; t < t_len; ++t) detail::max_into(m, f[t][s]);
        tr.ts_proj[s] = params.ts.apply(m);
        tr.ts_pooled[s] = std::move(m);
    }
    // ST: person pool -> project -> time pool
    tr.st_pooled.resize(t_len);
    tr.st_proj.resize(t_len);
    for (std::size_t t = 0; t < t_len; ++t) {
        Vec m = f[t][0];
        for (std::size_t s = 1; s < n_act; ++s) detail::max_into(m, f[t][s]);
        tr.st_proj[t] = params.st.apply(m);
        tr.st_pooled[t] = std::move(m);
    }

    tr.gaf.values.assign(2 * c, 0.0);
    std::span<double> g(tr.gaf.values);
    detail::argmax_over(tr.ts_proj, g.first(c), tr.ts_arg);
    detail::argmax_over(tr.st_proj, g.last(c), tr.st_arg);
    return tr;
}

inline Gaf encode_gaf(const VideoFeatures& video, const EncoderParams& params, const MaskPattern& mask = {}) {
    return std::move(encode_gaf_traced(video, params, mask).gaf);
}

/// Accumulates dL/d(ts, st) into `grads` given dL/dG. Subgradients of the
/// outer max-pools go to the recorded (lowest-index) maximizer.
inline void backprop_gaf(const EncodeTrace& tr, std::span<const double> d_gaf, EncoderParams& grads) {
    const std::size_t c = grads.channels;
    if (d_gaf.size() != 2 * c) throw ShapeError("backprop_gaf: gradient has wrong size");
    for (std::size_t o = 0; o < c; ++o) {
        const double g_ts = d_gaf[o];
        if (g_ts != 0.0) {
            const Vec& x = tr.ts_pooled[tr.ts_arg[o]];
            for (std::size_t i = 0; i < c; ++i) grads.ts.weight[o * c + i] += g_ts * x[i];
            grads.ts.bias[o] += g_ts;
        }
        const double g_st = d_gaf[c + o];
        if (g_st != 0.0) {
            const Vec& x = tr.st_pooled[tr.st_arg[o]];
            for (std::size_t i = 0; i < c; ++i) grads.st.weight[o * c + i] += g_st * x[i];
            grads.st.bias[o] += g_st;
        }
    }
}

/// Forward intermediates of the appearance head for one input row.
struct HeadTrace {
    Vec input;  // [G | PE(pos)]
    Vec z1, a1, z2, a2;
    Vec out;
};

inline HeadTrace head_forward(const EncoderParams& p, std::span<const double> gaf, Position pos) {
    const std::size_t c = p.channels;
    if (gaf.size() != 2 * c) throw ShapeError("appearance head: GAF must have 2C entries");
    HeadTrace h;
    h.input.resize(3 * c);
    std::copy(gaf.begin(), gaf.end(), h.input.begin());
    spatial_positional_encoding(pos, std::span<double>(h.input).subspan(2 * c), p.pe_base);
    h.z1 = p.afh1.apply(h.input);
    h.a1 = h.z1;
    for (double& v : h.a1) v = v > 0.0 ? v : 0.0;
    h.z2 = p.afh2.apply(h.a1);
    h.a2 = h.z2;
    for (double& v : h.a2) v = v > 0.0 ? v : 0.0;
    h.out = p.afh3.apply(h.a2);
    return h;
}

namespace detail {

// y = W x + b backward: accumulates dW, db and returns dx.
inline Vec linear_backward(const Linear& l, std::span<const double> x, std::span<const double> dy, Linear& grad) {
    Vec dx(l.in, 0.0);
    for (std::size_t o = 0; o < l.out; ++o) {
        const double g = dy[o];
        if (g == 0.0) continue;
        grad.bias[o] += g;
        const double* w = l.weight.data() + o * l.in;
        double* gw = grad.weight.data() + o * l.in;
        for (std::size_t i = 0; i < l.in; ++i) {
            gw[i] += g * x[i];
            dx[i] += g * w[i];
        }
    }
    return dx;
}

}  // namespace detail

/// Backprop of the head; returns dL/dG (first 2C entries of the input gradient).
inline Vec head_backward(const EncoderParams& p, const HeadTrace& h, std::span<const double> d_out, EncoderParams& grads) {
    Vec d_a2 = detail::linear_backward(p.afh3, h.a2, d_out, grads.afh3);
    for (std::size_t k = 0; k < d_a2.size(); ++k)
        if (h.z2[k] <= 0.0) d_a2[k] = 0.0;
    Vec d_a1 = detail::linear_backward(p.afh2, h.a1, d_a2, grads.afh2);
    for (std::size_t k = 0; k < d_a1.size(); ++k)
        if (h.z1[k] <= 0.0) d_a1[k] = 0.0;
    Vec d_in = detail::linear_backward(p.afh1, h.input, d_a1, grads.afh1);
    d_in.resize(2 * p.channels);
    return d_in;
}

/// Appearance prediction for one person track: row t is AFH([G | PE(pos_t)]).
inline std::vector<Vec> predict_appearance(const Gaf& gaf, std::span<const Position> person_positions,
                                           const EncoderParams& params) {
    if (gaf.size() != 2 * params.channels)
        throw ShapeError("predict_appearance: GAF has " + std::to_string(gaf.size()) + " entries, expected " +
                         std::to_string(2 * params.channels));
    std::vector<Vec> rows;
    rows.reserve(person_positions.size());
    for (const Position& pos : person_positions) rows.push_back(head_forward(params, gaf.values, pos).out);
    return rows;
}

}  // namespace garet

#endif  // GARET_ENCODER_HPP
