#ifndef GARET_FINETUNE_HPP
#define GARET_FINETUNE_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "garet/core.hpp"
#include "garet/encoder.hpp"
#include "garet/optimizer.hpp"
#include "garet/video.hpp"

namespace garet {

enum class Label { positive, negative };

inline const char* to_string(Label l) { return l == Label::positive ? "positive" : "negative"; }

struct Annotation {
    std::string video_id;
    Label label = Label::negative;
    std::optional<std::string> annotator;
    std::int64_t timestamp = 0;  // unix milliseconds

    bool operator==(const Annotation&) const = default;
};

struct FinetuneConfig {
    double margin = 10.0;
    AdamHyper adam{};
    std::size_t epochs = 30;
    bool use_reg = true;
    double reg_weight = 1.0;
    std::size_t early_stop_patience = 3;

    void validate() const {
        if (!(margin > 0.0)) throw ConfigError("margin must be > 0");
        if (!(reg_weight >= 0.0)) throw ConfigError("reg_weight must be >= 0");
        adam.validate();
    }
};

enum class StopReason { no_epochs, completed, early_stop };

inline const char* to_string(StopReason r) {
    switch (r) {
        case StopReason::no_epochs: return "no_epochs";
        case StopReason::completed: return "completed";
        case StopReason::early_stop: return "early_stop";
    }
    return "?";
}

struct EpochLoss {
    std::size_t epoch = 0;
    double total = 0.0;
    double ctr = 0.0;
    double reg = 0.0;
    bool operator==(const EpochLoss&) const = default;
};

struct LossReport {
    std::vector<EpochLoss> epochs;
    StopReason stop = StopReason::no_epochs;
    std::vector<std::string> warnings;
    bool contrastive_active = false;

    bool operator==(const LossReport&) const = default;
};

inline void write_loss_csv(std::ostream& os, const LossReport& r) {
    os << "epoch,L,L_ctr,L_reg\n";
    char buf[160];
    for (const auto& e : r.epochs) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.total, e.ctr, e.reg);
        os << buf;
    }
}

/// Per-query triplet sets over a bank of GAFs (indices into the bank).
struct TripletPlan {
    std::vector<std::size_t> queries;
    std::vector<std::vector<std::size_t>> positives;  // one list per query
    std::vector<std::vector<std::size_t>> negatives;  // one list per query
};

/// Hinge triplet loss: for each query, mean over its (pos, neg) pairs of
/// max(0, d(q,pos) - d(q,neg) + margin); then mean over queries. With one
/// positive and one negative this is exactly the single-triplet form.
/// Accumulates dL/dG into `d_bank` (same shape as `bank`) when given.
inline double contrastive_loss(std::span<const Gaf> bank, const TripletPlan& plan, double margin,
                               std::vector<Vec>* d_bank = nullptr) {
    if (plan.queries.empty()) throw DegenerateInputError("triplet loss: no queries");
    const double inv_q = 1.0 / static_cast<double>(plan.queries.size());
    auto add_dist_grad = [&](std::size_t a, std::size_t b, double d, double w) {
        if (!d_bank || d == 0.0) return;
        const Vec& ga = bank[a].values;
        const Vec& gb = bank[b].values;
        for (std::size_t k = 0; k < ga.size(); ++k) {
            const double g = w * (ga[k] - gb[k]) / d;
            (*d_bank)[a][k] += g;
            (*d_bank)[b][k] -= g;
        }
    };
    double total = 0.0;
    for (std::size_t qi = 0; qi < plan.queries.size(); ++qi) {
        const auto& pos = plan.positives[qi];
        const auto& neg = plan.negatives[qi];
        if (pos.empty() || neg.empty()) throw DegenerateInputError("triplet loss: query without positives or negatives");
        const std::size_t q = plan.queries[qi];
        const double w = inv_q / static_cast<double>(pos.size() * neg.size());
        Vec d_neg(neg.size());
        for (std::size_t n = 0; n < neg.size(); ++n) d_neg[n] = euclidean_distance(bank[q], bank[neg[n]]);
        for (std::size_t p : pos) {
            const double dp = euclidean_distance(bank[q], bank[p]);
            for (std::size_t n = 0; n < neg.size(); ++n) {
                const double h = dp - d_neg[n] + margin;
                if (h <= 0.0) continue;
                total += w * h;
                add_dist_grad(q, p, dp, w);
                add_dist_grad(q, neg[n], d_neg[n], -w);
            }
        }
    }
    return total;
}

/// Triplet loss with one positive and one negative set shared by all queries.
inline double triplet_loss(std::span<const Gaf> queries, std::span<const Gaf> positives,
                           std::span<const Gaf> negatives, double margin) {
    if (queries.empty() || positives.empty() || negatives.empty())
        throw DegenerateInputError("triplet loss needs at least one query, positive and negative");
    std::vector<Gaf> bank(queries.begin(), queries.end());
    bank.insert(bank.end(), positives.begin(), positives.end());
    bank.insert(bank.end(), negatives.begin(), negatives.end());
    TripletPlan plan;
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < positives.size(); ++i) pos.push_back(queries.size() + i);
    for (std::size_t i = 0; i < negatives.size(); ++i) neg.push_back(queries.size() + positives.size() + i);
    for (std::size_t q = 0; q < queries.size(); ++q) {
        plan.queries.push_back(q);
        plan.positives.push_back(pos);
        plan.negatives.push_back(neg);
    }
    return contrastive_loss(bank, plan, margin);
}

/// Mean over selected videos of the per-entry MSE between current and
/// pre-trained GAFs. Accumulates dL/dG into `d_current` when given.
inline double reg_loss(std::span<const Gaf> current, std::span<const Gaf> pretrained, std::vector<Vec>* d_current = nullptr) {
    if (current.size() != pretrained.size())
        throw ShapeError("reg_loss: " + std::to_string(current.size()) + " current vs " +
                         std::to_string(pretrained.size()) + " pre-trained GAFs");
    if (current.empty()) return 0.0;
    const double inv_n = 1.0 / static_cast<double>(current.size());
    double total = 0.0;
    for (std::size_t k = 0; k < current.size(); ++k) {
        const Vec& a = current[k].values;
        const Vec& b = pretrained[k].values;
        if (a.size() != b.size()) throw ShapeError("reg_loss: GAF dimension mismatch");
        const double inv_d = 1.0 / static_cast<double>(a.size());
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double e = a[i] - b[i];
            s += e * e;
            if (d_current) (*d_current)[k][i] += 2.0 * e * inv_d * inv_n;
        }
        total += s * inv_d * inv_n;
    }
    return total;
}

/// Query videos plus annotated selected videos. `labels[i]` belongs to
/// `selected[i]`.
struct FinetuneBatch {
    std::vector<const VideoFeatures*> queries;
    std::vector<const VideoFeatures*> selected;
    std::vector<Label> labels;
};

/// Builds the triplet plan over a bank laid out as [queries..., selected...].
/// Degenerate annotation sets: without positives, the other query videos
/// stand in as positives; a lone query without positives, or no negatives at
/// all, disables the contrastive term (reported as a warning).
inline std::optional<TripletPlan> plan_triplets(const FinetuneBatch& batch, std::vector<std::string>* warnings = nullptr) {
    const std::size_t nq = batch.queries.size();
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < batch.labels.size(); ++i)
        (batch.labels[i] == Label::positive ? pos : neg).push_back(nq + i);
    auto warn = [&](std::string w) {
        if (warnings) warnings->push_back(std::move(w));
    };
    if (nq == 0) {
        warn("no query videos; contrastive term skipped");
        return std::nullopt;
    }
    if (neg.empty()) {
        warn("no negative annotations; contrastive term skipped");
        return std::nullopt;
    }
    TripletPlan plan;
    if (pos.empty()) {
        if (nq < 2) {
            warn("no positive annotations and a single query; contrastive term skipped");
            return std::nullopt;
        }
        warn("no positive annotations; other query videos used as positives");
        for (std::size_t q = 0; q < nq; ++q) {
            std::vector<std::size_t> others;
            for (std::size_t o = 0; o < nq; ++o)
                if (o != q) others.push_back(o);
            plan.queries.push_back(q);
            plan.positives.push_back(std::move(others));
            plan.negatives.push_back(neg);
        }
        return plan;
    }
    for (std::size_t q = 0; q < nq; ++q) {
        plan.queries.push_back(q);
        plan.positives.push_back(pos);
        plan.negatives.push_back(neg);
    }
    return plan;
}

struct ObjectiveTerms {
    double ctr = 0.0;
    double reg = 0.0;  // unweighted
};

/// Evaluates both fine-tuning loss terms at `params`; gradients of each term
/// (reg unweighted) are accumulated into the given buffers when non-null.
inline ObjectiveTerms finetune_objective(const EncoderParams& params, const FinetuneBatch& batch,
                                         const std::optional<TripletPlan>& plan, std::span<const Gaf> pretrained_selected,
                                         double margin, EncoderParams* grad_ctr = nullptr,
                                         EncoderParams* grad_reg = nullptr, std::vector<EncodeTrace>* traces_out = nullptr) {
    std::vector<EncodeTrace> traces;
    for (const auto* v : batch.queries) traces.push_back(encode_gaf_traced(*v, params));
    for (const auto* v : batch.selected) traces.push_back(encode_gaf_traced(*v, params));
    std::vector<Gaf> bank;
    for (const auto& t : traces) bank.push_back(t.gaf);
    const std::size_t nq = batch.queries.size();
    const std::size_t dim = 2 * params.channels;

    ObjectiveTerms out;
    if (plan) {
        std::vector<Vec> d_bank(bank.size(), Vec(dim, 0.0));
        out.ctr = contrastive_loss(bank, *plan, margin, grad_ctr ? &d_bank : nullptr);
        if (grad_ctr)
            for (std::size_t b = 0; b < bank.size(); ++b) backprop_gaf(traces[b], d_bank[b], *grad_ctr);
    }
    std::span<const Gaf> current(bank.data() + nq, batch.selected.size());
    std::vector<Vec> d_sel(batch.selected.size(), Vec(dim, 0.0));
    out.reg = reg_loss(current, pretrained_selected, grad_reg ? &d_sel : nullptr);
    if (grad_reg)
        for (std::size_t s = 0; s < batch.selected.size(); ++s) backprop_gaf(traces[nq + s], d_sel[s], *grad_reg);
    if (traces_out) *traces_out = std::move(traces);
    return out;
}

/// Fine-tunes the encoder branches on one annotated session. Only the TS/ST
/// projections are updated; the appearance head is left untouched.
inline EncoderParams finetune(const FinetuneBatch& batch, EncoderParams params, const FinetuneConfig& cfg,
                              LossReport* report_out = nullptr) {
    cfg.validate();
    if (batch.labels.size() != batch.selected.size())
        throw PreconditionError("finetune: every selected video needs exactly one label");
    if (batch.selected.empty())
        throw PreconditionError(
            "finetune: no annotated videos; label at least one selected video positive or negative before fine-tuning");

    LossReport report;
    const auto plan = plan_triplets(batch, &report.warnings);
    report.contrastive_active = plan.has_value();

    std::vector<Gaf> pretrained;
    for (const auto* v : batch.selected) pretrained.push_back(encode_gaf(*v, params));

    AdamState state;
    std::size_t zero_streak = 0;
    report.stop = cfg.epochs == 0 ? StopReason::no_epochs : StopReason::completed;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        EncoderParams g_ctr = params.zeros_like();
        EncoderParams g_reg = params.zeros_like();
        const ObjectiveTerms terms = finetune_objective(params, batch, plan, pretrained, cfg.margin, &g_ctr,
                                                        cfg.use_reg ? &g_reg : nullptr);
        EpochLoss e;
        e.epoch = epoch;
        e.ctr = terms.ctr;
        e.reg = cfg.use_reg ? terms.reg : 0.0;
        e.total = e.ctr + cfg.reg_weight * e.reg;
        if (!std::isfinite(e.total)) throw NumericError("finetune: non-finite loss at epoch " + std::to_string(epoch));
        report.epochs.push_back(e);

        if (plan) {
            zero_streak = e.ctr == 0.0 ? zero_streak + 1 : 0;
            if (cfg.early_stop_patience > 0 && zero_streak >= cfg.early_stop_patience) {
                report.stop = StopReason::early_stop;
                break;
            }
        }

        EncoderParams grads = params.zeros_like();
        auto gt = grads.encoder_tensors();
        auto gc = g_ctr.encoder_tensors();
        auto gr = g_reg.encoder_tensors();
        for (std::size_t k = 0; k < gt.size(); ++k)
            for (std::size_t i = 0; i < gt[k].size(); ++i) gt[k][i] = gc[k][i] + cfg.reg_weight * gr[k][i];
        adam_step(params.encoder_tensors(), gt, state, cfg.adam);
    }
    if (report_out) *report_out = std::move(report);
    return params;
}

}  // namespace garet

#endif  // GARET_FINETUNE_HPP
