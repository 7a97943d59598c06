#pragma once

#include "adaptsfm/autodiff.hpp"
#include "adaptsfm/tensor.hpp"
#include "adaptsfm/warp.hpp"

namespace adaptsfm::losses {

using warp::DepthMap;
using warp::Image;
using warp::ValidityMask;

struct LossConfig {
    double alpha = 0.85; // structural dissimilarity weight
    double beta = 0.15;  // L1 weight
    int msssim_scales = 0; // 0 = auto: 3 below 160 px, 5 at or above
    double smoothness_weight = 1e-3;

    enum class Window { Gaussian, Box };
    Window window = Window::Gaussian;
    int window_size = 7;
    double window_sigma = 1.5;

    void check_valid() const; // alpha,beta >= 0 and alpha+beta > 0
};

struct LossBreakdown {
    double reproj = 0.0;
    double tikhonov = 0.0;
    double total = 0.0;
};

/// Pyramid scale count for a given resolution when the config says auto.
int resolve_scales(const LossConfig& cfg, int h, int w);

/// The filter window as a normalized kernel.
Tensor make_window(const LossConfig& cfg);

/// Per-pixel SSIM map (valid-window footprint, so output shrinks by
/// window-1). C1=0.01^2, C2=0.03^2 on the [0,1] range; ssim(I,I) == 1.
Tensor ssim_map(const Image& a, const Image& b, const LossConfig& cfg);

/// Multi-scale SSIM: contrast/structure means at the finer scales, the full
/// SSIM mean at the coarsest, combined as a weighted geometric mean with the
/// standard 5-scale exponents renormalized to the first `scales`. Per-scale
/// means are floored at 1e-6 before the logarithm, so the result lies in
/// (0, 1]; scales == 1 reduces to the mean single-scale SSIM.
double ms_ssim(const Image& a, const Image& b, int scales, const LossConfig& cfg);

/// alpha * (1 - MS_SSIM) + beta * masked mean |a - b|. Invalid pixels are
/// neutralized by substituting the reference values into `synth`, so both
/// terms see valid pixels only; gradients to invalid pixels vanish.
double reprojection_loss(const Image& ref, const Image& synth, const ValidityMask& mask,
                         const LossConfig& cfg);

/// Edge-aware first-order smoothness on mean-normalized inverse depth:
/// weight * ( mean |dx d*| e^-|dx I| + mean |dy d*| e^-|dy I| ).
/// Invariant to uniform positive scaling of the depth map.
double tikhonov_regulariser(const DepthMap& depth, const Image& image, double weight);

/// Sums the parts; throws NonFiniteLossError when either is not finite.
LossBreakdown total_loss(double reproj, double tikhonov);

// Differentiable routes; each matches its plain counterpart bit-for-bit on
// the forward value (the plain functions are the oracles in the tests).
ad::Var ms_ssim_node(const ad::Var& a, const ad::Var& b, int scales, const LossConfig& cfg);
ad::Var reprojection_loss_node(const ad::Var& ref, const ad::Var& synth, const ValidityMask& mask,
                               const LossConfig& cfg);
ad::Var tikhonov_node(const ad::Var& depth, const Image& image, double weight);

} // namespace adaptsfm::losses
