#include "layerav/losses.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "layerav/spatial_hash.hpp"

namespace layerav {

namespace {

// Ordered pairwise summation: deterministic and with O(log n) error growth.
double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 16) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

double mean_of(std::span<const double> v) { return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<double>(v.size()); }

void require_same_shape(const ImageBuffer& a, const ImageBuffer& b, const char* what) {
    if (!a.same_shape(b) || a.data.size() != b.data.size())
        throw std::invalid_argument(std::string(what) + ": image shapes differ");
}

}  // namespace

ImageBuffer ImageBuffer::constant(int width, int height, int channels, double value) {
    ImageBuffer b;
    b.width = width;
    b.height = height;
    b.channels = channels;
    b.data.assign(static_cast<std::size_t>(width) * height * channels, value);
    return b;
}

double l1_loss(const ImageBuffer& a, const ImageBuffer& b) {
    require_same_shape(a, b, "l1_loss");
    std::vector<double> d(a.data.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(a.data[i] - b.data[i]);
    return mean_of(d);
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
    require_same_shape(a, b, "psnr");
    std::vector<double> d(a.data.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    const double mse = mean_of(d);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

std::array<double, kSsimWindow> ssim_kernel() {
    std::array<double, kSsimWindow> k{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double x = i - kSsimWindow / 2;
        k[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable valid-region filtering of one channel.
std::vector<double> filter_valid(const std::vector<double>& src, int w, int h) {
    static const auto k = ssim_kernel();
    const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
            tmp[static_cast<std::size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

}  // namespace

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
    require_same_shape(a, b, "ssim");
    if (a.width < kSsimWindow || a.height < kSsimWindow)
        throw std::invalid_argument("ssim: images must be at least 11x11");
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const std::size_t n = static_cast<std::size_t>(a.width) * a.height;

    std::vector<double> per_channel;
    for (int c = 0; c < a.channels; ++c) {
        std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = a.data[i * a.channels + c];
            y[i] = b.data[i * b.channels + c];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter_valid(x, a.width, a.height);
        const auto my = filter_valid(y, a.width, a.height);
        const auto mxx = filter_valid(xx, a.width, a.height);
        const auto myy = filter_valid(yy, a.width, a.height);
        const auto mxy = filter_valid(xy, a.width, a.height);
        std::vector<double> s(mx.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double vx = mxx[i] - mx[i] * mx[i];
            const double vy = myy[i] - my[i] * my[i];
            const double cxy = mxy[i] - mx[i] * my[i];
            // Written so that swapping a and b yields bit-identical terms.
            const double num = (mx[i] * my[i] + mx[i] * my[i] + c1) * (cxy + cxy + c2);
            const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
            s[i] = num / den;
        }
        per_channel.push_back(mean_of(s));
    }
    return mean_of(per_channel);
}

SegmentationTerms segmentation_terms(const ImageBuffer& pred, const ImageBuffer& gt, const ImageBuffer& pred_body,
                                     const ImageBuffer& gt_body) {
    require_same_shape(pred, gt, "segmentation_loss");
    require_same_shape(pred_body, gt_body, "segmentation_loss (body)");
    std::vector<double> sq(pred.data.size());
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = (pred.data[i] - gt.data[i]) * (pred.data[i] - gt.data[i]);
    std::vector<double> ab(pred_body.data.size());
    for (std::size_t i = 0; i < ab.size(); ++i) ab[i] = std::abs(pred_body.data[i] - gt_body.data[i]);
    return {std::sqrt(mean_of(sq)), mean_of(ab)};
}

double segmentation_loss(const ImageBuffer& pred, const ImageBuffer& gt, const ImageBuffer& pred_body,
                         const ImageBuffer& gt_body, double lambda_sg, double lambda_bs) {
    const SegmentationTerms t = segmentation_terms(pred, gt, pred_body, gt_body);
    return lambda_sg * t.multiclass + lambda_bs * t.body;
}

NormalEstimate estimate_normal(const Vec3& position, std::span<const Vec3> ring) {
    NormalEstimate out;
    if (ring.size() < 3) return out;
    Vec3 n = Vec3::Zero();
    for (std::size_t c = 0; c < ring.size(); ++c) {
        const Vec3& a = ring[c];
        const Vec3& b = ring[(c + 1) % ring.size()];
        n += (a - position).cross(b - position);
    }
    const double len = n.norm();
    if (!(len >= 1e-12)) return out;
    out.normal = n / len;
    out.degenerate = false;
    return out;
}

std::vector<NormalEstimate> estimate_layer_normals(std::span<const Vec3> positions,
                                                   std::span<const NeighborRing> neighbors) {
    std::vector<NormalEstimate> out(positions.size());
    std::array<Vec3, 4> ring;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const NeighborRing& nb = neighbors[i];
        for (std::uint8_t k = 0; k < nb.count; ++k) ring[k] = positions[nb.index[k]];
        out[i] = estimate_normal(positions[i], std::span<const Vec3>(ring.data(), nb.count));
    }
    return out;
}

PenetrationResult penetration_loss(std::span<const Vec3> outer, std::span<const Vec3> inner,
                                   std::span<const Vec3> inner_normals, double epsilon) {
    if (inner.empty()) throw std::invalid_argument("penetration_loss: inner set is empty");
    if (inner_normals.size() != inner.size())
        throw std::invalid_argument("penetration_loss: normal count differs from inner point count");

    PenetrationResult r;
    r.grad_outer.assign(outer.size(), Vec3::Zero());
    r.grad_inner.assign(inner.size(), Vec3::Zero());
    r.nearest.assign(outer.size(), -1);

    const PointGrid grid(inner);
    std::vector<double> hinge(outer.size(), 0.0);
    std::vector<std::uint8_t> used(outer.size(), 0);
    for (std::size_t i = 0; i < outer.size(); ++i) {
        const std::int64_t b = grid.nearest(outer[i]);
        r.nearest[i] = b;
        const Vec3& n = inner_normals[b];
        if (!(n.norm() > 0.5)) {
            ++r.skipped_degenerate;
            continue;
        }
        used[i] = 1;
        ++r.evaluated;
        const double h = std::max(epsilon - (outer[i] - inner[b]).dot(n), 0.0);
        hinge[i] = h * h;
    }
    std::vector<double> terms;
    terms.reserve(r.evaluated);
    for (std::size_t i = 0; i < outer.size(); ++i) {
        if (used[i]) terms.push_back(hinge[i]);
    }
    r.loss = mean_of(terms);
    if (r.evaluated == 0) return r;

    const double scale = 2.0 / static_cast<double>(r.evaluated);
    for (std::size_t i = 0; i < outer.size(); ++i) {
        if (!used[i]) continue;
        const std::int64_t b = r.nearest[i];
        const Vec3& n = inner_normals[b];
        const double h = std::max(epsilon - (outer[i] - inner[b]).dot(n), 0.0);
        if (h == 0.0) continue;
        r.grad_outer[i] -= scale * h * n;
        r.grad_inner[b] += scale * h * n;
    }
    return r;
}

RegularizerResult geometric_regularizers(std::span<const Vec3> offsets, std::span<const NeighborRing> neighbors,
                                         std::span<const double> body_opacities) {
    if (neighbors.size() != offsets.size())
        throw std::invalid_argument("geometric_regularizers: topology size differs from offsets");
    RegularizerResult r;
    const std::size_t n = offsets.size();
    r.grad_offset.assign(n, Vec3::Zero());
    r.grad_smooth.assign(n, Vec3::Zero());
    r.grad_body_opacity.assign(body_opacities.size(), 0.0);

    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) {
        sq[i] = offsets[i].squaredNorm();
        r.grad_offset[i] = (2.0 / static_cast<double>(n)) * offsets[i];
    }
    r.offset = mean_of(sq);

    // Smoothness over primitives that have at least one neighbor.
    std::vector<double> residual_sq;
    std::vector<Vec3> residual(n, Vec3::Zero());
    for (std::size_t i = 0; i < n; ++i) {
        const NeighborRing& nb = neighbors[i];
        if (nb.count == 0) continue;
        Vec3 mean = Vec3::Zero();
        for (std::int32_t j : nb.view()) mean += offsets[j];
        mean /= nb.count;
        residual[i] = offsets[i] - mean;
        residual_sq.push_back(residual[i].squaredNorm());
    }
    r.smooth = mean_of(residual_sq);
    if (!residual_sq.empty()) {
        const double scale = 2.0 / static_cast<double>(residual_sq.size());
        for (std::size_t i = 0; i < n; ++i) {
            const NeighborRing& nb = neighbors[i];
            if (nb.count == 0) continue;
            r.grad_smooth[i] += scale * residual[i];
            for (std::int32_t j : nb.view()) r.grad_smooth[j] -= (scale / nb.count) * residual[i];
        }
    }

    std::vector<double> nll(body_opacities.size());
    for (std::size_t i = 0; i < body_opacities.size(); ++i) {
        const double a = body_opacities[i];
        const double clamped = std::clamp(a, 1e-6, 1.0);
        nll[i] = -std::log(clamped);
        if (a > 1e-6 && a < 1.0) r.grad_body_opacity[i] = -1.0 / (a * static_cast<double>(body_opacities.size()));
    }
    r.body_opacity = mean_of(nll);
    return r;
}

std::string format_number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string LossReport::to_text() const {
    std::ostringstream s;
    const LossComponents& c = components;
    s << "l1=" << format_number(c.l1) << "\n"
      << "ssim_loss=" << format_number(c.ssim_loss) << "\n"
      << "seg_multiclass=" << format_number(c.seg_multiclass) << "\n"
      << "seg_body=" << format_number(c.seg_body) << "\n"
      << "pen=" << format_number(c.pen) << "\n"
      << "offset_reg=" << format_number(c.offset_reg) << "\n"
      << "smooth_reg=" << format_number(c.smooth_reg) << "\n"
      << "opacity_reg=" << format_number(c.opacity_reg) << "\n"
      << "total=" << format_number(total) << "\n"
      << "perceptual=" << (perceptual_evaluated ? "evaluated" : "absent") << "\n";
    return s.str();
}

LossReport full_objective(const LossComponents& c, const LossWeights& w) {
    for (double v : {c.l1, c.ssim_loss, c.seg_multiclass, c.seg_body, c.pen, c.offset_reg, c.smooth_reg,
                     c.opacity_reg}) {
        if (!std::isfinite(v)) throw std::invalid_argument("full_objective: non-finite loss component");
    }
    if (auto why = w.invalid_reason()) throw std::invalid_argument("full_objective: " + *why);
    LossReport r;
    r.components = c;
    r.total = c.l1 + w.ssim * c.ssim_loss + w.seg_multiclass * c.seg_multiclass + w.seg_body * c.seg_body +
              w.penetration * c.pen + w.offset * c.offset_reg + w.smooth * c.smooth_reg +
              w.body_opacity * c.opacity_reg;
    return r;
}

SegmentationMetrics segmentation_metrics(const LabelMap& pred, const LabelMap& gt) {
    if (pred.width != gt.width || pred.height != gt.height || pred.labels.size() != gt.labels.size())
        throw std::invalid_argument("segmentation_metrics: label map shapes differ");
    std::array<std::array<std::uint64_t, 256>, 256> confusion{};
    for (std::size_t i = 0; i < gt.labels.size(); ++i) ++confusion[gt.labels[i]][pred.labels[i]];

    SegmentationMetrics m;
    bool pred_has_class = false;
    for (std::size_t i = 0; i < pred.labels.size() && !pred_has_class; ++i)
        pred_has_class = pred.labels[i] != kBackgroundLabel;

    std::vector<double> iou, recall, f1;
    for (int c = 0; c < 256; ++c) {
        if (c == kBackgroundLabel) continue;
        std::uint64_t gt_count = 0, pred_count = 0;
        for (int k = 0; k < 256; ++k) {
            gt_count += confusion[c][k];
            pred_count += confusion[k][c];
        }
        if (gt_count == 0) continue;
        const double tp = static_cast<double>(confusion[c][c]);
        const double fn = static_cast<double>(gt_count) - tp;
        const double fp = static_cast<double>(pred_count) - tp;
        iou.push_back(tp / (tp + fp + fn));
        recall.push_back(tp / (tp + fn));
        f1.push_back(2.0 * tp / (2.0 * tp + fp + fn));
    }
    m.classes = static_cast<int>(iou.size());
    if (iou.empty()) {
        const double v = pred_has_class ? 0.0 : 1.0;
        m.miou = m.recall = m.f1 = v;
        return m;
    }
    m.miou = mean_of(iou);
    m.recall = mean_of(recall);
    m.f1 = mean_of(f1);
    return m;
}

}  // namespace layerav
