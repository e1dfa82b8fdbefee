#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "layerav/core.hpp"

namespace layerav {

/// Uniform hash grid over a fixed point set with exact nearest-neighbor queries.
class PointGrid {
public:
    /// cell_size <= 0 selects 2x the median nearest-neighbor spacing.
    explicit PointGrid(std::span<const Vec3> points, double cell_size = 0.0);

    /// Index of the nearest point (Euclidean; lowest index on ties), -1 if empty.
    std::int64_t nearest(const Vec3& query) const;
    double cell_size() const { return cell_; }

    static double median_spacing(std::span<const Vec3> points, std::size_t max_samples = 256);

private:
    struct Range {
        std::uint32_t begin = 0, end = 0;
    };
    static std::uint64_t key(std::int64_t x, std::int64_t y, std::int64_t z);
    std::array<std::int64_t, 3> cell_of(const Vec3& p) const;

    std::vector<Vec3> points_;
    std::vector<std::uint32_t> order_;
    std::unordered_map<std::uint64_t, Range> cells_;
    double cell_ = 1.0;
    Vec3 lo_ = Vec3::Zero();
    Vec3 hi_ = Vec3::Zero();
};

}  // namespace layerav
