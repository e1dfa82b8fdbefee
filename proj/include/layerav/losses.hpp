#pragma once

// Training-objective terms: photometric L1/SSIM, segmentation losses, the
// penetration hinge with Gaussian normal estimation, geometric regularizers,
// objective aggregation, and segmentation quality metrics.
//
// All losses reduce by mean, so weights stay comparable across image sizes
// and primitive counts.

#include <span>
#include <string>
#include <vector>

#include "layerav/core.hpp"

namespace layerav {

struct ImageBuffer {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> data;  // H x W x C

    static ImageBuffer constant(int width, int height, int channels, double value);
    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    bool same_shape(const ImageBuffer& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

struct LabelMap {
    int width = 0;
    int height = 0;
    std::vector<Label> labels;

    Label at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

/// Mean absolute difference. Throws std::invalid_argument on shape mismatch.
double l1_loss(const ImageBuffer& a, const ImageBuffer& b);

/// Mean local SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// dynamic range 1, valid windows only, averaged over channels.
double ssim(const ImageBuffer& a, const ImageBuffer& b);
inline double ssim_loss(const ImageBuffer& a, const ImageBuffer& b) { return 1.0 - ssim(a, b); }

/// Peak signal-to-noise ratio over [0,1]; +inf for identical images.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

struct SegmentationTerms {
    double multiclass = 0.0;  // RMS over palette channels
    double body = 0.0;        // mean absolute body-mask difference
};

SegmentationTerms segmentation_terms(const ImageBuffer& pred, const ImageBuffer& gt, const ImageBuffer& pred_body,
                                     const ImageBuffer& gt_body);
/// lambda_sg * RMS(pred - gt) + lambda_bs * mean|pred_body - gt_body|
double segmentation_loss(const ImageBuffer& pred, const ImageBuffer& gt, const ImageBuffer& pred_body,
                         const ImageBuffer& gt_body, double lambda_sg, double lambda_bs);

struct NormalEstimate {
    Vec3 normal = Vec3::Zero();
    bool degenerate = true;
};

/// Normalized sum of the fan cross products (n_c - p) x (n_{c+1} - p) over a
/// counter-clockwise ring with cyclic closure. Degenerate when |N| < 1e-12 or
/// fewer than three neighbors are given.
NormalEstimate estimate_normal(const Vec3& position, std::span<const Vec3> ring);

/// estimate_normal for every primitive using the layer's grid topology.
std::vector<NormalEstimate> estimate_layer_normals(std::span<const Vec3> positions,
                                                   std::span<const NeighborRing> neighbors);

struct PenetrationResult {
    double loss = 0.0;
    std::vector<Vec3> grad_outer;
    std::vector<Vec3> grad_inner;
    std::vector<std::int64_t> nearest;  // inner index per outer point
    std::size_t evaluated = 0;
    std::size_t skipped_degenerate = 0;  // outer points whose nearest inner normal is degenerate
};

/// Mean over outer points of max(eps - (p_u - p_b) . n_b, 0)^2 with p_b the
/// nearest inner point. Inner normals of (near) zero length mark degenerate
/// neighborhoods; those terms are skipped and counted. The gradient holds the
/// nearest-neighbor assignment and the normals fixed. Throws
/// std::invalid_argument if the inner set is empty.
PenetrationResult penetration_loss(std::span<const Vec3> outer, std::span<const Vec3> inner,
                                   std::span<const Vec3> inner_normals, double epsilon);

struct RegularizerResult {
    double offset = 0.0;        // mean |dp|^2
    double smooth = 0.0;        // mean |dp - mean_neighbors(dp)|^2
    double body_opacity = 0.0;  // mean -log(clamp(alpha, 1e-6, 1))
    std::vector<Vec3> grad_offset;
    std::vector<Vec3> grad_smooth;
    std::vector<double> grad_body_opacity;
};

RegularizerResult geometric_regularizers(std::span<const Vec3> offsets, std::span<const NeighborRing> neighbors,
                                         std::span<const double> body_opacities);

struct LossComponents {
    double l1 = 0.0;
    double ssim_loss = 0.0;
    double seg_multiclass = 0.0;
    double seg_body = 0.0;
    double pen = 0.0;
    double offset_reg = 0.0;
    double smooth_reg = 0.0;
    double opacity_reg = 0.0;
};

struct LossReport {
    LossComponents components;
    double total = 0.0;
    bool perceptual_evaluated = false;  // LPIPS-style terms are never evaluated

    std::string to_text() const;  // one name=value per line
};

/// total = l1 + w.ssim*ssim_loss + w.seg_multiclass*seg_multiclass + w.seg_body*seg_body
///       + w.penetration*pen + w.offset*offset_reg + w.smooth*smooth_reg + w.body_opacity*opacity_reg
/// Throws std::invalid_argument on any non-finite component.
LossReport full_objective(const LossComponents& components, const LossWeights& weights);

struct SegmentationMetrics {
    double miou = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    int classes = 0;  // non-background classes present in gt
};

/// Per-class IoU / recall / F1 averaged over the non-background classes
/// present in gt. With no such class the result is 1 when pred has none
/// either and 0 otherwise.
SegmentationMetrics segmentation_metrics(const LabelMap& pred, const LabelMap& gt);

std::string format_number(double v);

}  // namespace layerav
