#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hybres/grid.hpp"

namespace hybres::contour {

/// A grid edge between node (i, j) and its +x (horizontal) or +y neighbour.
struct EdgeKey {
    std::size_t i = 0;
    std::size_t j = 0;
    bool vertical = false;

    [[nodiscard]] std::uint64_t packed() const {
        return (static_cast<std::uint64_t>(j) << 33) | (static_cast<std::uint64_t>(i) << 1) |
               static_cast<std::uint64_t>(vertical);
    }
    friend bool operator==(const EdgeKey&, const EdgeKey&) = default;
};

struct Segment {
    EdgeKey a;
    EdgeKey b;
};

/// Zero-level marching squares. Nodes holding NaN exclude their squares.
/// Values equal to zero count as positive. Saddles are resolved by the
/// mean of the four corners.
std::vector<Segment> marching_squares(const GridSpec& grid, std::span<const double> values);

/// Chains segments sharing an edge into ordered edge sequences. Paths come
/// first (starting from their lowest segment index), then closed loops, which
/// repeat their first edge at the end.
std::vector<std::vector<EdgeKey>> chain(const std::vector<Segment>& segments);

/// Linear-interpolation estimate of the crossing on an edge.
Point2 interpolate(const GridSpec& grid, std::span<const double> values, const EdgeKey& edge);

}  // namespace hybres::contour
