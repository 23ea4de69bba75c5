#ifndef GARET_PRETRAIN_HPP
#define GARET_PRETRAIN_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "garet/core.hpp"
#include "garet/encoder.hpp"
#include "garet/optimizer.hpp"
#include "garet/video.hpp"

namespace garet {

struct PretrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    AdamHyper adam{};
    // Masked-person count per video and epoch is drawn uniformly from
    // [0, floor(N / mask_divisor)], which keeps most persons visible to the
    // pooling.
    std::size_t mask_divisor = 3;
    std::uint64_t seed = 0;

    void validate() const {
        adam.validate();
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (mask_divisor == 0) throw ConfigError("mask_divisor must be positive");
    }
};

struct PretrainHistory {
    double initial_loss = 0.0;  // unmasked, before the first update
    double final_loss = 0.0;    // unmasked, after the last update
    Vec epoch_loss;             // mean masked minibatch loss per epoch
};

/// Mean squared error of one person's predicted track against its
/// appearance features, averaged over frames and channels.
inline double person_appearance_mse(std::span<const Vec> predicted, const VideoFeatures& video, std::size_t person) {
    if (predicted.size() != video.frames) throw ShapeError("person_appearance_mse: frame count mismatch");
    double s = 0.0;
    for (std::size_t t = 0; t < video.frames; ++t) {
        auto target = video.app(t, person);
        if (predicted[t].size() != target.size()) throw ShapeError("person_appearance_mse: channel mismatch");
        for (std::size_t k = 0; k < target.size(); ++k) {
            const double d = predicted[t][k] - target[k];
            s += d * d;
        }
    }
    return s / static_cast<double>(video.frames * video.channels);
}

/// Location-guided appearance prediction loss over a batch. Each video is
/// encoded under its mask; every person (masked or not) is then predicted
/// from the GAF and its own positions. When `grads` is non-null, dL/dparams is
/// accumulated into it.
inline double pretrain_loss(std::span<const VideoFeatures* const> batch, std::span<const MaskPattern> masks,
                            const EncoderParams& params, EncoderParams* grads = nullptr) {
    if (batch.empty()) throw PreconditionError("pretrain_loss: empty batch");
    if (masks.size() != batch.size()) throw ShapeError("pretrain_loss: need one mask per video");
    const std::size_t c = params.channels;
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const VideoFeatures& v = *batch[b];
        EncodeTrace tr = encode_gaf_traced(v, params, masks[b]);
        const double w = inv_batch / static_cast<double>(v.persons);
        const double scale = w / static_cast<double>(v.frames * c);
        Vec d_gaf(2 * c, 0.0);
        for (std::size_t i = 0; i < v.persons; ++i) {
            for (std::size_t t = 0; t < v.frames; ++t) {
                HeadTrace h = head_forward(params, tr.gaf.values, v.pos(t, i));
                auto target = v.app(t, i);
                Vec d_out(c);
                double s = 0.0;
                for (std::size_t k = 0; k < c; ++k) {
                    const double e = h.out[k] - target[k];
                    s += e * e;
                    d_out[k] = 2.0 * e * scale;
                }
                total += s * scale;
                if (grads) {
                    Vec dg = head_backward(params, h, d_out, *grads);
                    for (std::size_t k = 0; k < dg.size(); ++k) d_gaf[k] += dg[k];
                }
            }
        }
        if (grads) backprop_gaf(tr, d_gaf, *grads);
    }
    return total;
}

inline double pretrain_loss(std::span<const VideoFeatures> videos, const EncoderParams& params) {
    std::vector<const VideoFeatures*> ptrs;
    for (const auto& v : videos) ptrs.push_back(&v);
    std::vector<MaskPattern> none(videos.size());
    return pretrain_loss(ptrs, none, params);
}

/// Self-supervised pre-training with masked-person modeling and Adam.
/// Deterministic for a given (videos, initial params, cfg).
inline EncoderParams pretrain(std::span<const VideoFeatures> videos, EncoderParams params, const PretrainConfig& cfg,
                              PretrainHistory* history = nullptr) {
    if (videos.empty()) throw PreconditionError("pretrain: dataset is empty");
    cfg.validate();
    PretrainHistory hist;
    hist.initial_loss = pretrain_loss(videos, params);

    Rng rng = derive_rng(cfg.seed, {0x9e7a});
    AdamState state;
    std::vector<std::size_t> order(videos.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<MaskPattern> masks(videos.size());
        for (std::size_t k = 0; k < videos.size(); ++k) {
            const std::size_t n = videos[k].persons;
            std::uniform_int_distribution<std::size_t> count(0, n / cfg.mask_divisor);
            std::size_t m = std::min(count(rng), n - 1);
            masks[k] = random_mask(n, m, rng);
        }
        double epoch_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<const VideoFeatures*> batch;
            std::vector<MaskPattern> batch_masks;
            for (std::size_t j = start; j < end; ++j) {
                batch.push_back(&videos[order[j]]);
                batch_masks.push_back(masks[order[j]]);
            }
            EncoderParams grads = params.zeros_like();
            const double loss = pretrain_loss(batch, batch_masks, params, &grads);
            if (!std::isfinite(loss))
                throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches));
            adam_step(params.tensors(), grads.tensors(), state, cfg.adam);
            epoch_sum += loss;
            ++batches;
        }
        hist.epoch_loss.push_back(epoch_sum / static_cast<double>(batches));
    }
    hist.final_loss = cfg.epochs == 0 ? hist.initial_loss : pretrain_loss(videos, params);
    if (history) *history = std::move(hist);
    return params;
}

}  // namespace garet

#endif  // GARET_PRETRAIN_HPP
