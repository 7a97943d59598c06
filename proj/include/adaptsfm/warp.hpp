#pragma once

#include "adaptsfm/autodiff.hpp"
#include "adaptsfm/geometry.hpp"
#include "adaptsfm/tensor.hpp"

namespace adaptsfm::warp {

/// Pinhole intrinsics in pixels. Pixel centers sit on integer coordinates,
/// origin at the top-left.
struct Intrinsics {
    double fx = 1.0, fy = 1.0;
    double cx = 0.0, cy = 0.0;

    void check_valid(int width, int height) const;
};

using Image = Tensor;        // {H,W,C}, values in [0,1]
using DepthMap = Tensor;     // {H,W}, strictly positive where valid
using ValidityMask = Tensor; // {H,W}, entries 0 or 1

/// Points at or behind this camera-space depth are masked invalid.
inline constexpr double kZMin = 1e-4;
/// Reprojected coordinates this close to an integer are snapped onto it, so
/// identity warps and border masks are exact despite round-trip rounding.
inline constexpr double kCoordSnapEps = 1e-9;

/// (u,v) with depth z maps to z * ((u-cx)/fx, (v-cy)/fy, 1). Output {H,W,3}.
Tensor backproject(const DepthMap& depth, const Intrinsics& k);

/// p -> R p + t applied to a {H,W,3} point grid.
Tensor transform_points(const Tensor& points, const geometry::PoseSE3& pose);

struct Projection {
    Tensor u, v;       // {H,W} pixel coordinates
    ValidityMask mask; // false where z <= z_min or the point leaves the image
};

/// (x,y,z) -> (fx x/z + cx, fy y/z + cy). The divide uses max(z, z_min) so
/// coordinates stay finite; validity is reported through the mask.
Projection project(const Tensor& points, const Intrinsics& k, double z_min = kZMin);

/// Four-neighbor interpolation, border clamp, exact at integer coordinates.
Image bilinear_sample(const Image& image, const Tensor& u, const Tensor& v);

struct SynthesizedView {
    Image image;
    ValidityMask mask;
};

/**
 * Inverse-warp view synthesis.
 *
 * The output lives on the grid of `depth`; `pose` maps that grid's camera
 * coordinates into the camera of `source`, whose pixels are sampled at the
 * reprojections. With the identity pose the output equals `source` exactly
 * on all valid pixels.
 */
SynthesizedView synthesize_view(const Image& source, const DepthMap& depth, const Intrinsics& k,
                                const geometry::PoseSE3& pose);

/// Differentiable route of synthesize_view. `rotation` is a {3,3} node,
/// `translation` a {3} node; gradients flow into depth, pose and source.
/// The mask is a forward-value byproduct and carries no gradient.
struct WarpNodes {
    ad::Var image;
    ValidityMask mask;
};
WarpNodes synthesize_view_nodes(const ad::Var& source, const ad::Var& depth, const Intrinsics& k,
                                const ad::Var& rotation, const ad::Var& translation);

} // namespace adaptsfm::warp
