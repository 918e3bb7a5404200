#pragma once

// Sample-quality metrics: composed-membership accuracy, symmetric Chamfer
// distance through a uniform grid index, and membership-split histograms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "complift/distributions.hpp"
#include "complift/error.hpp"

namespace complift::eval {

// Fraction of columns satisfying the scenario's composed membership rule;
// empty when there are no samples.
template <class Derived>
std::optional<double> accuracy(const Eigen::MatrixBase<Derived>& samples, const scenario_spec& sc) {
    if (samples.cols() == 0) return std::nullopt;
    std::size_t hits = 0;
    for (Eigen::Index j = 0; j < samples.cols(); ++j)
        hits += sc.member(samples.col(j).template cast<double>()) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(samples.cols());
}

// Uniform-grid nearest-neighbor index over 2D points.
class grid_index {
public:
    explicit grid_index(const Eigen::MatrixXd& pts) : pts_(pts) {
        if (pts.rows() != 2) throw config_error("grid index expects 2 x n points");
        if (pts.cols() == 0) throw config_error("grid index needs at least one point");
        if (!pts.allFinite()) throw numerical_error("points contain non-finite values");
        lo_ = pts.rowwise().minCoeff();
        const Eigen::Vector2d hi = pts.rowwise().maxCoeff();
        const Eigen::Vector2d ext = (hi - lo_).cwiseMax(1e-12);
        // About two points per cell.
        const double area = ext.x() * ext.y();
        cell_ = std::sqrt(std::max(area, 1e-24) * 2.0 / static_cast<double>(pts.cols()));
        cell_ = std::max(cell_, std::max(ext.x(), ext.y()) / 4096.0);
        nx_ = static_cast<std::int64_t>(ext.x() / cell_) + 1;
        ny_ = static_cast<std::int64_t>(ext.y() / cell_) + 1;
        cells_.reserve(static_cast<std::size_t>(pts.cols()));
        for (Eigen::Index j = 0; j < pts.cols(); ++j) cells_[key(cx(pts(0, j)), cy(pts(1, j)))].push_back(j);
    }

    // Euclidean distance to the nearest indexed point.
    double nearest(const Eigen::Vector2d& q) const {
        const std::int64_t qx = std::clamp<std::int64_t>(cx(q.x()), 0, nx_ - 1);
        const std::int64_t qy = std::clamp<std::int64_t>(cy(q.y()), 0, ny_ - 1);
        double best = std::numeric_limits<double>::infinity();
        const std::int64_t max_ring = std::max(nx_, ny_);
        const auto visit = [&](std::int64_t ix, std::int64_t iy) {
            if (ix < 0 || iy < 0 || ix >= nx_ || iy >= ny_) return;
            const auto it = cells_.find(key(ix, iy));
            if (it == cells_.end()) return;
            for (auto j : it->second) best = std::min(best, (pts_.col(j) - q).norm());
        };
        for (std::int64_t r = 0; r <= max_ring; ++r) {
            // Any point in ring r is at least (r - 1) * cell_ away, and never
            // closer than the grid itself.
            const double ring_min = std::max(std::max<double>(0.0, static_cast<double>(r - 1)) * cell_, outside(q));
            if (ring_min > best) break;
            if (r == 0) {
                visit(qx, qy);
                continue;
            }
            // Walk only the ring's border, clipped to the grid.
            const std::int64_t x0 = std::max<std::int64_t>(qx - r, 0), x1 = std::min<std::int64_t>(qx + r, nx_ - 1);
            const std::int64_t y0 = std::max<std::int64_t>(qy - r + 1, 0), y1 = std::min<std::int64_t>(qy + r - 1, ny_ - 1);
            for (std::int64_t ix = x0; ix <= x1; ++ix) {
                visit(ix, qy - r);
                visit(ix, qy + r);
            }
            for (std::int64_t iy = y0; iy <= y1; ++iy) {
                visit(qx - r, iy);
                visit(qx + r, iy);
            }
        }
        return best;
    }

private:
    std::int64_t cx(double x) const { return static_cast<std::int64_t>(std::floor((x - lo_.x()) / cell_)); }
    std::int64_t cy(double y) const { return static_cast<std::int64_t>(std::floor((y - lo_.y()) / cell_)); }
    std::int64_t key(std::int64_t ix, std::int64_t iy) const { return ix * ny_ + iy; }
    double outside(const Eigen::Vector2d& q) const {
        const double hx = lo_.x() + static_cast<double>(nx_) * cell_, hy = lo_.y() + static_cast<double>(ny_) * cell_;
        const double dx = std::max({lo_.x() - q.x(), 0.0, q.x() - hx});
        const double dy = std::max({lo_.y() - q.y(), 0.0, q.y() - hy});
        return std::max(dx, dy);
    }

    Eigen::MatrixXd pts_;
    Eigen::Vector2d lo_;
    double cell_ = 1.0;
    std::int64_t nx_ = 1, ny_ = 1;
    std::unordered_map<std::int64_t, std::vector<Eigen::Index>> cells_;
};

// 0.5 * mean_a min_b |a - b| + 0.5 * mean_b min_a |a - b|
inline double chamfer(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.cols() == 0 || b.cols() == 0) throw config_error("chamfer distance needs two nonempty point sets");
    const grid_index ia(a), ib(b);
    double sa = 0.0, sb = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) sa += ib.nearest(a.col(j));
    for (Eigen::Index j = 0; j < b.cols(); ++j) sb += ia.nearest(b.col(j));
    return 0.5 * sa / static_cast<double>(a.cols()) + 0.5 * sb / static_cast<double>(b.cols());
}

struct histogram {
    std::vector<double> edges;  // bins + 1, increasing
    std::vector<std::size_t> members;
    std::vector<std::size_t> non_members;
};

// Equal-width bins over [min, max] of all values; the last bin is closed.
inline histogram split_histogram(std::span<const double> values, const std::vector<bool>& is_member, int bins = 50) {
    if (values.size() != is_member.size()) throw config_error("values and membership flags differ in length");
    if (bins < 1) throw config_error("histogram needs at least one bin");
    histogram h;
    h.members.assign(static_cast<std::size_t>(bins), 0);
    h.non_members.assign(static_cast<std::size_t>(bins), 0);
    double lo = 0.0, hi = 1.0;
    if (!values.empty()) {
        const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
        lo = *mn;
        hi = *mx;
        if (!(hi > lo)) hi = lo + 1.0;
    }
    for (int i = 0; i <= bins; ++i) h.edges.push_back(lo + (hi - lo) * i / bins);
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto b = static_cast<std::int64_t>((values[i] - lo) / (hi - lo) * bins);
        b = std::clamp<std::int64_t>(b, 0, bins - 1);
        (is_member[i] ? h.members : h.non_members)[static_cast<std::size_t>(b)]++;
    }
    return h;
}

}  // namespace complift::eval
