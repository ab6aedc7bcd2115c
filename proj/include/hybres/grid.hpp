#pragma once

#include <cstddef>
#include <functional>
#include <numbers>
#include <vector>

namespace hybres {

/// Uniform node grid over the delta12 (x) x delta13 (y) plane.
struct GridSpec {
    double x_min = -std::numbers::pi;
    double x_max = std::numbers::pi;
    std::size_t nx = 401;
    double y_min = -std::numbers::pi;
    double y_max = std::numbers::pi;
    std::size_t ny = 401;

    void validate() const;

    [[nodiscard]] double dx() const { return (x_max - x_min) / static_cast<double>(nx - 1); }
    [[nodiscard]] double dy() const { return (y_max - y_min) / static_cast<double>(ny - 1); }
    [[nodiscard]] double x(std::size_t i) const { return x_min + dx() * static_cast<double>(i); }
    [[nodiscard]] double y(std::size_t j) const { return y_min + dy() * static_cast<double>(j); }
    [[nodiscard]] std::size_t index(std::size_t i, std::size_t j) const { return j * nx + i; }
    [[nodiscard]] std::size_t size() const { return nx * ny; }

    /// True when both axes span a full 2*pi period, so angles may be wrapped into the grid.
    [[nodiscard]] bool periodic() const;
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

using Polyline = std::vector<Point2>;

/// Wraps an angle into [lo, lo + 2*pi).
double wrap_angle(double angle, double lo = -std::numbers::pi);

/// Worker count from HYBRES_THREADS, defaulting to the hardware concurrency.
int thread_count_from_env();

/// Runs fn(k) for k in [0, count) on up to `threads` workers. Each index is
/// processed exactly once; callers write results by index, so output does not
/// depend on the thread count.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace hybres
