#include "layerav/spatial_hash.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace layerav {

double PointGrid::median_spacing(std::span<const Vec3> points, std::size_t max_samples) {
    if (points.size() < 2) return 1.0;
    const std::size_t samples = std::min(points.size(), max_samples);
    const std::size_t stride = points.size() / samples;
    std::vector<double> nn;
    nn.reserve(samples);
    for (std::size_t s = 0; s < samples; ++s) {
        const std::size_t i = s * stride;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < points.size(); ++j) {
            if (j == i) continue;
            const double d = (points[j] - points[i]).squaredNorm();
            if (d > 0.0) best = std::min(best, d);
        }
        if (std::isfinite(best)) nn.push_back(std::sqrt(best));
    }
    if (nn.empty()) return 1.0;
    std::nth_element(nn.begin(), nn.begin() + nn.size() / 2, nn.end());
    return nn[nn.size() / 2];
}

std::uint64_t PointGrid::key(std::int64_t x, std::int64_t y, std::int64_t z) {
    constexpr std::int64_t bias = 1 << 20;
    return (static_cast<std::uint64_t>(x + bias) << 42) | (static_cast<std::uint64_t>(y + bias) << 21) |
           static_cast<std::uint64_t>(z + bias);
}

std::array<std::int64_t, 3> PointGrid::cell_of(const Vec3& p) const {
    std::array<std::int64_t, 3> c{};
    for (int a = 0; a < 3; ++a) {
        const double u = std::floor((p[a] - lo_[a]) / cell_);
        c[a] = static_cast<std::int64_t>(std::clamp(u, -1.0e6, 1.0e6));
    }
    return c;
}

PointGrid::PointGrid(std::span<const Vec3> points, double cell_size) : points_(points.begin(), points.end()) {
    if (points_.empty()) return;
    cell_ = cell_size > 0.0 ? cell_size : 2.0 * median_spacing(points);
    if (!(cell_ > 0.0)) cell_ = 1.0;
    lo_ = hi_ = points_.front();
    for (const Vec3& p : points_) {
        lo_ = lo_.cwiseMin(p);
        hi_ = hi_.cwiseMax(p);
    }
    // Keep the integer cell coordinates within the key range.
    const double extent = (hi_ - lo_).maxCoeff();
    cell_ = std::max(cell_, extent / 1.0e5);

    std::vector<std::uint64_t> keys(points_.size());
    order_.resize(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
        const auto c = cell_of(points_[i]);
        keys[i] = key(c[0], c[1], c[2]);
        order_[i] = static_cast<std::uint32_t>(i);
    }
    std::stable_sort(order_.begin(), order_.end(), [&](std::uint32_t a, std::uint32_t b) { return keys[a] < keys[b]; });
    for (std::uint32_t k = 0; k < order_.size();) {
        std::uint32_t e = k;
        while (e < order_.size() && keys[order_[e]] == keys[order_[k]]) ++e;
        cells_[keys[order_[k]]] = {k, e};
        k = e;
    }
}

std::int64_t PointGrid::nearest(const Vec3& query) const {
    if (points_.empty()) return -1;
    const auto c = cell_of(query);
    double best = std::numeric_limits<double>::infinity();
    std::int64_t best_index = -1;

    auto visit = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
        auto it = cells_.find(key(x, y, z));
        if (it == cells_.end()) return;
        for (std::uint32_t k = it->second.begin; k < it->second.end; ++k) {
            const std::uint32_t i = order_[k];
            const double d = (points_[i] - query).squaredNorm();
            if (d < best || (d == best && static_cast<std::int64_t>(i) < best_index)) {
                best = d;
                best_index = i;
            }
        }
    };

    // Rings of growing Chebyshev radius. Points in ring r+1 or beyond are at
    // least r * cell away, which bounds the search.
    const double outside = (query - query.cwiseMax(lo_).cwiseMin(hi_)).norm();
    const auto r_max =
        static_cast<std::int64_t>(std::ceil((outside + (hi_ - lo_).norm()) / cell_)) + 2;
    for (std::int64_t r = 0; r <= r_max; ++r) {
        for (std::int64_t dz = -r; dz <= r; ++dz) {
            for (std::int64_t dy = -r; dy <= r; ++dy) {
                const bool face = std::abs(dz) == r || std::abs(dy) == r;
                if (face) {
                    for (std::int64_t dx = -r; dx <= r; ++dx) visit(c[0] + dx, c[1] + dy, c[2] + dz);
                } else {
                    visit(c[0] - r, c[1] + dy, c[2] + dz);
                    if (r != 0) visit(c[0] + r, c[1] + dy, c[2] + dz);
                }
            }
        }
        const double bound = static_cast<double>(r) * cell_;
        if (best_index >= 0 && best <= bound * bound) break;
    }
    return best_index;
}

}  // namespace layerav
