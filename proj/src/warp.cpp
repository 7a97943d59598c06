#include "adaptsfm/warp.hpp"

#include <cmath>

#include "adaptsfm/errors.hpp"

namespace adaptsfm::warp {

namespace {

void check_depth(const DepthMap& depth) {
    if (depth.ndim() != 2) throw InvalidInputError("depth map must be {H,W}");
}

// Normalized camera-ray grids; shared by both routes so values agree bitwise.
Tensor grid_xn(int h, int w, const Intrinsics& k) {
    Tensor g({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) g.at(y, x) = (static_cast<double>(x) - k.cx) / k.fx;
    return g;
}

Tensor grid_yn(int h, int w, const Intrinsics& k) {
    Tensor g({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) g.at(y, x) = (static_cast<double>(y) - k.cy) / k.fy;
    return g;
}

double snap(double x) {
    const double r = std::nearbyint(x);
    return std::abs(x - r) < kCoordSnapEps ? r : x;
}

} // namespace

void Intrinsics::check_valid(int width, int height) const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidInputError("intrinsics: focal lengths must be positive");
    if (cx < 0.0 || cx > width - 1 || cy < 0.0 || cy > height - 1)
        throw InvalidInputError("intrinsics: principal point outside image bounds");
}

Tensor backproject(const DepthMap& depth, const Intrinsics& k) {
    check_depth(depth);
    const int h = depth.dim(0), w = depth.dim(1);
    k.check_valid(w, h);
    Tensor xn = grid_xn(h, w, k), yn = grid_yn(h, w, k);
    Tensor points({h, w, 3});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double d = depth.at(y, x);
            points.at(y, x, 0) = d * xn.at(y, x);
            points.at(y, x, 1) = d * yn.at(y, x);
            points.at(y, x, 2) = d;
        }
    return points;
}

Tensor transform_points(const Tensor& points, const geometry::PoseSE3& pose) {
    if (points.ndim() != 3 || points.dim(2) != 3) throw InvalidInputError("point grid must be {H,W,3}");
    const int h = points.dim(0), w = points.dim(1);
    const Tensor& r = pose.rotation.R;
    Tensor out({h, w, 3});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double px = points.at(y, x, 0), py = points.at(y, x, 1), pz = points.at(y, x, 2);
            for (int i = 0; i < 3; ++i)
                out.at(y, x, i) =
                    (px * r.at(i, 0) + py * r.at(i, 1)) + pz * r.at(i, 2) + pose.translation[i];
        }
    return out;
}

Projection project(const Tensor& points, const Intrinsics& k, double z_min) {
    if (points.ndim() != 3 || points.dim(2) != 3) throw InvalidInputError("point grid must be {H,W,3}");
    const int h = points.dim(0), w = points.dim(1);
    k.check_valid(w, h);
    Projection out{Tensor({h, w}), Tensor({h, w}), Tensor({h, w})};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double z = points.at(y, x, 2);
            const double zc = std::max(z, z_min);
            const double u = snap(points.at(y, x, 0) / zc * k.fx + k.cx);
            const double v = snap(points.at(y, x, 1) / zc * k.fy + k.cy);
            out.u.at(y, x) = u;
            out.v.at(y, x) = v;
            const bool ok = z > z_min && u >= 0.0 && u <= w - 1 && v >= 0.0 && v <= h - 1;
            out.mask.at(y, x) = ok ? 1.0 : 0.0;
        }
    return out;
}

Image bilinear_sample(const Image& image, const Tensor& u, const Tensor& v) {
    if (image.ndim() != 3 || u.ndim() != 2 || !u.same_shape(v))
        throw InvalidInputError("bilinear_sample: bad shapes");
    const int hs = image.dim(0), ws = image.dim(1), c = image.dim(2);
    const int h = u.dim(0), w = u.dim(1);
    auto cl = [](int a, int lo, int hi) { return std::min(std::max(a, lo), hi); };
    Image out({h, w, c});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double uu = u.at(y, x), vv = v.at(y, x);
            const int x0 = static_cast<int>(std::floor(uu)), y0 = static_cast<int>(std::floor(vv));
            const double fx = uu - x0, fy = vv - y0;
            const int cx0 = cl(x0, 0, ws - 1), cx1 = cl(x0 + 1, 0, ws - 1);
            const int cy0 = cl(y0, 0, hs - 1), cy1 = cl(y0 + 1, 0, hs - 1);
            for (int ch = 0; ch < c; ++ch) {
                const double i00 = image.at(cy0, cx0, ch), i01 = image.at(cy0, cx1, ch);
                const double i10 = image.at(cy1, cx0, ch), i11 = image.at(cy1, cx1, ch);
                out.at(y, x, ch) = (1 - fy) * ((1 - fx) * i00 + fx * i01) + fy * ((1 - fx) * i10 + fx * i11);
            }
        }
    return out;
}

SynthesizedView synthesize_view(const Image& source, const DepthMap& depth, const Intrinsics& k,
                                const geometry::PoseSE3& pose) {
    check_depth(depth);
    if (source.ndim() != 3 || source.dim(0) != depth.dim(0) || source.dim(1) != depth.dim(1))
        throw InvalidInputError("synthesize_view: image/depth dimensions disagree");
    Tensor points = transform_points(backproject(depth, k), pose);
    Projection proj = project(points, k);
    return {bilinear_sample(source, proj.u, proj.v), proj.mask};
}

WarpNodes synthesize_view_nodes(const ad::Var& source, const ad::Var& depth, const Intrinsics& k,
                                const ad::Var& rotation, const ad::Var& translation) {
    const Tensor& d = depth->value;
    check_depth(d);
    const int h = d.dim(0), w = d.dim(1);
    if (source->value.ndim() != 3 || source->value.dim(0) != h || source->value.dim(1) != w)
        throw InvalidInputError("synthesize_view_nodes: image/depth dimensions disagree");
    k.check_valid(w, h);

    ad::Var xn = ad::constant(grid_xn(h, w, k));
    ad::Var yn = ad::constant(grid_yn(h, w, k));
    ad::Var px = ad::mul(depth, xn);
    ad::Var py = ad::mul(depth, yn);
    const ad::Var& pz = depth;

    auto rot_row = [&](int i, const ad::Var& tx) {
        ad::Var acc = ad::add(ad::mul_scalar_node(ad::get_scalar(rotation, 3 * i + 0), px),
                              ad::mul_scalar_node(ad::get_scalar(rotation, 3 * i + 1), py));
        acc = ad::add(acc, ad::mul_scalar_node(ad::get_scalar(rotation, 3 * i + 2), pz));
        return ad::add_scalar_node(acc, tx);
    };
    ad::Var qx = rot_row(0, ad::get_scalar(translation, 0));
    ad::Var qy = rot_row(1, ad::get_scalar(translation, 1));
    ad::Var qz = rot_row(2, ad::get_scalar(translation, 2));

    ad::Var zc = ad::clamp_min(qz, kZMin);
    ad::Var u = ad::snap_to_integers(ad::add_const(ad::mul_const(ad::vdiv(qx, zc), k.fx), k.cx), kCoordSnapEps);
    ad::Var v = ad::snap_to_integers(ad::add_const(ad::mul_const(ad::vdiv(qy, zc), k.fy), k.cy), kCoordSnapEps);

    ValidityMask mask({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const bool ok = qz->value.at(y, x) > kZMin && u->value.at(y, x) >= 0.0 &&
                            u->value.at(y, x) <= w - 1 && v->value.at(y, x) >= 0.0 &&
                            v->value.at(y, x) <= h - 1;
            mask.at(y, x) = ok ? 1.0 : 0.0;
        }

    return {ad::bilinear_sample(source, u, v), std::move(mask)};
}

} // namespace adaptsfm::warp
