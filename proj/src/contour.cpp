#include "hybres/contour.hpp"

#include <cmath>
#include <unordered_map>

namespace hybres::contour {

std::vector<Segment> marching_squares(const GridSpec& grid, std::span<const double> values) {
    std::vector<Segment> out;
    if (grid.nx < 2 || grid.ny < 2) {
        return out;
    }
    for (std::size_t j = 0; j + 1 < grid.ny; ++j) {
        for (std::size_t i = 0; i + 1 < grid.nx; ++i) {
            const double c0 = values[grid.index(i, j)];
            const double c1 = values[grid.index(i + 1, j)];
            const double c2 = values[grid.index(i + 1, j + 1)];
            const double c3 = values[grid.index(i, j + 1)];
            if (std::isnan(c0) || std::isnan(c1) || std::isnan(c2) || std::isnan(c3)) {
                continue;
            }
            const bool p0 = c0 >= 0.0;
            const bool p1 = c1 >= 0.0;
            const bool p2 = c2 >= 0.0;
            const bool p3 = c3 >= 0.0;
            const EdgeKey bottom{i, j, false};
            const EdgeKey right{i + 1, j, true};
            const EdgeKey top{i, j + 1, false};
            const EdgeKey left{i, j, true};

            std::vector<EdgeKey> crossed;
            if (p0 != p1) crossed.push_back(bottom);
            if (p1 != p2) crossed.push_back(right);
            if (p2 != p3) crossed.push_back(top);
            if (p3 != p0) crossed.push_back(left);

            if (crossed.size() == 2) {
                out.push_back({crossed[0], crossed[1]});
            } else if (crossed.size() == 4) {
                const bool centre = 0.25 * (c0 + c1 + c2 + c3) >= 0.0;
                if (centre == p0) {
                    out.push_back({bottom, right});
                    out.push_back({top, left});
                } else {
                    out.push_back({left, bottom});
                    out.push_back({right, top});
                }
            }
        }
    }
    return out;
}

std::vector<std::vector<EdgeKey>> chain(const std::vector<Segment>& segments) {
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> incident;
    for (std::size_t s = 0; s < segments.size(); ++s) {
        incident[segments[s].a.packed()].push_back(s);
        incident[segments[s].b.packed()].push_back(s);
    }
    std::vector<bool> visited(segments.size(), false);
    std::vector<std::vector<EdgeKey>> lines;

    auto walk = [&](std::size_t s, EdgeKey start) {
        std::vector<EdgeKey> line{start};
        EdgeKey at = start;
        for (;;) {
            visited[s] = true;
            const EdgeKey other = segments[s].a == at ? segments[s].b : segments[s].a;
            line.push_back(other);
            std::size_t next = segments.size();
            for (std::size_t cand : incident[other.packed()]) {
                if (!visited[cand]) {
                    next = cand;
                    break;
                }
            }
            if (next == segments.size()) {
                break;
            }
            at = other;
            s = next;
        }
        lines.push_back(std::move(line));
    };

    for (std::size_t s = 0; s < segments.size(); ++s) {
        if (visited[s]) continue;
        if (incident[segments[s].a.packed()].size() == 1) {
            walk(s, segments[s].a);
        } else if (incident[segments[s].b.packed()].size() == 1) {
            walk(s, segments[s].b);
        }
    }
    for (std::size_t s = 0; s < segments.size(); ++s) {
        if (!visited[s]) {
            walk(s, segments[s].a);
        }
    }
    return lines;
}

Point2 interpolate(const GridSpec& grid, std::span<const double> values, const EdgeKey& edge) {
    const std::size_t i2 = edge.vertical ? edge.i : edge.i + 1;
    const std::size_t j2 = edge.vertical ? edge.j + 1 : edge.j;
    const double v1 = values[grid.index(edge.i, edge.j)];
    const double v2 = values[grid.index(i2, j2)];
    const double t = v1 == v2 ? 0.5 : v1 / (v1 - v2);
    return {grid.x(edge.i) + t * (grid.x(i2) - grid.x(edge.i)), grid.y(edge.j) + t * (grid.y(j2) - grid.y(edge.j))};
}

}  // namespace hybres::contour
