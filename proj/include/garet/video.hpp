#ifndef GARET_VIDEO_HPP
#define GARET_VIDEO_HPP

#include <algorithm>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "garet/core.hpp"

namespace garet {

struct Position {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Position&) const = default;
};

/// Per-person feature tracks of one clip: T frames by N persons, each with a
/// C-dimensional appearance vector and a court position in [0,1]^2.
/// Storage is row-major (frame, person, channel).
struct VideoFeatures {
    std::string id;
    std::optional<std::string> class_label;
    std::size_t frames = 0;
    std::size_t persons = 0;
    std::size_t channels = 0;
    std::vector<double> appearance;  // frames * persons * channels
    std::vector<Position> positions;  // frames * persons

    VideoFeatures() = default;
    VideoFeatures(std::string id_, std::size_t t, std::size_t n, std::size_t c)
        : id(std::move(id_)), frames(t), persons(n), channels(c), appearance(t * n * c, 0.0),
          positions(t * n) {}

    std::span<double> app(std::size_t t, std::size_t i) {
        return {appearance.data() + (t * persons + i) * channels, channels};
    }
    std::span<const double> app(std::size_t t, std::size_t i) const {
        return {appearance.data() + (t * persons + i) * channels, channels};
    }
    Position& pos(std::size_t t, std::size_t i) { return positions[t * persons + i]; }
    const Position& pos(std::size_t t, std::size_t i) const { return positions[t * persons + i]; }

    bool operator==(const VideoFeatures&) const = default;
};

/// Throws ShapeError / PreconditionError naming the video id when the
/// invariants do not hold.
inline void validate(const VideoFeatures& v) {
    if (v.frames < 1 || v.persons < 1 || v.channels < 1)
        throw ShapeError("video '" + v.id + "': frames, persons and channels must be positive");
    if (v.appearance.size() != v.frames * v.persons * v.channels)
        throw ShapeError("video '" + v.id + "': appearance has " + std::to_string(v.appearance.size()) +
                         " values, expected T*N*C = " + std::to_string(v.frames * v.persons * v.channels));
    if (v.positions.size() != v.frames * v.persons)
        throw ShapeError("video '" + v.id + "': positions has " + std::to_string(v.positions.size()) +
                         " entries, expected T*N = " + std::to_string(v.frames * v.persons));
    if (!all_finite(v.appearance)) throw PreconditionError("video '" + v.id + "': non-finite appearance value");
    for (const auto& p : v.positions) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || p.x < 0.0 || p.x > 1.0 || p.y < 0.0 || p.y > 1.0)
            throw PreconditionError("video '" + v.id + "': position outside [0,1]^2");
    }
}

/// Set of person indices hidden from the encoder.
struct MaskPattern {
    std::set<std::size_t> masked;

    bool contains(std::size_t i) const { return masked.count(i) != 0; }
    bool operator==(const MaskPattern&) const = default;
};

/// Draws `count` distinct person indices out of `persons`.
inline MaskPattern random_mask(std::size_t persons, std::size_t count, Rng& rng) {
    require(count < persons, "random_mask: must leave at least one person unmasked");
    std::vector<std::size_t> idx(persons);
    for (std::size_t i = 0; i < persons; ++i) idx[i] = i;
    // partial Fisher-Yates
    MaskPattern m;
    for (std::size_t k = 0; k < count; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, persons - 1);
        std::swap(idx[k], idx[pick(rng)]);
        m.masked.insert(idx[k]);
    }
    return m;
}

}  // namespace garet

#endif  // GARET_VIDEO_HPP
