#include "adaptsfm/losses.hpp"

#include <array>
#include <cmath>

#include "adaptsfm/errors.hpp"

namespace adaptsfm::losses {

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr double kTermFloor = 1e-6;
constexpr std::array<double, 5> kScaleExponents{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

std::vector<double> scale_weights(int scales) {
    std::vector<double> w(kScaleExponents.begin(), kScaleExponents.begin() + scales);
    double sum = 0.0;
    for (double x : w) sum += x;
    for (double& x : w) x /= sum;
    return w;
}

// Plain mirrors of the tape ops. Loop order matches autodiff.cpp exactly so
// the two routes agree bitwise on forward values.
Tensor filter_valid(const Tensor& x, const Tensor& kernel) {
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const int kh = kernel.dim(0), kw = kernel.dim(1);
    if (h < kh || w < kw) throw InvalidInputError("window filter: image smaller than window");
    Tensor out({h - kh + 1, w - kw + 1, c});
    for (int oy = 0; oy < out.dim(0); ++oy)
        for (int ox = 0; ox < out.dim(1); ++ox)
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) acc += kernel.at(ky, kx) * x.at(oy + ky, ox + kx, ch);
                out.at(oy, ox, ch) = acc;
            }
    return out;
}

Tensor pool2(const Tensor& x) {
    const int h = x.dim(0) / 2, w = x.dim(1) / 2, c = x.dim(2);
    Tensor out({h, w, c});
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
            for (int ch = 0; ch < c; ++ch)
                out.at(y, xx, ch) = 0.25 * (x.at(2 * y, 2 * xx, ch) + x.at(2 * y, 2 * xx + 1, ch) +
                                            x.at(2 * y + 1, 2 * xx, ch) + x.at(2 * y + 1, 2 * xx + 1, ch));
    return out;
}

double mean_flat(const Tensor& x) {
    double s = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) s += x[i];
    return s * (1.0 / static_cast<double>(x.numel()));
}

struct SsimStats {
    Tensor luminance; // l map
    Tensor contrast;  // cs map
};

SsimStats ssim_stats(const Image& a, const Image& b, const Tensor& kernel) {
    Tensor mu_a = filter_valid(a, kernel);
    Tensor mu_b = filter_valid(b, kernel);
    Tensor aa = a, bb = b, ab = a;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    Tensor faa = filter_valid(aa, kernel);
    Tensor fbb = filter_valid(bb, kernel);
    Tensor fab = filter_valid(ab, kernel);

    SsimStats st{Tensor(mu_a.shape()), Tensor(mu_a.shape())};
    for (std::int64_t i = 0; i < mu_a.numel(); ++i) {
        const double va = faa[i] - mu_a[i] * mu_a[i];
        const double vb = fbb[i] - mu_b[i] * mu_b[i];
        const double cov = fab[i] - mu_a[i] * mu_b[i];
        st.contrast[i] = (cov * 2.0 + kC2) / ((va + vb) + kC2);
        st.luminance[i] = ((mu_a[i] * mu_b[i]) * 2.0 + kC1) / ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i]) + kC1);
    }
    return st;
}

void check_pair(const Image& a, const Image& b) {
    if (a.ndim() != 3 || !a.same_shape(b))
        throw InvalidInputError("loss inputs must be {H,W,C} images of equal shape");
}

Tensor mask_to_channels(const ValidityMask& mask, int channels) {
    Tensor m3({mask.dim(0), mask.dim(1), channels});
    for (int y = 0; y < mask.dim(0); ++y)
        for (int x = 0; x < mask.dim(1); ++x)
            for (int c = 0; c < channels; ++c) m3.at(y, x, c) = mask.at(y, x);
    return m3;
}

std::int64_t count_valid(const ValidityMask& mask) {
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < mask.numel(); ++i)
        if (mask[i] > 0.5) ++n;
    return n;
}

// exp(-mean_c |forward difference of image|), the edge weights of the
// smoothness term. Data-only, so shared verbatim by both routes.
Tensor edge_weights_x(const Image& img) {
    const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
    Tensor out({h, w - 1});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x + 1 < w; ++x) {
            double s = 0.0;
            for (int ch = 0; ch < c; ++ch) s += std::abs(img.at(y, x + 1, ch) - img.at(y, x, ch));
            out.at(y, x) = std::exp(-(s * (1.0 / c)));
        }
    return out;
}

Tensor edge_weights_y(const Image& img) {
    const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
    Tensor out({h - 1, w});
    for (int y = 0; y + 1 < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int ch = 0; ch < c; ++ch) s += std::abs(img.at(y + 1, x, ch) - img.at(y, x, ch));
            out.at(y, x) = std::exp(-(s * (1.0 / c)));
        }
    return out;
}

void check_scales(int scales, int h, int w, int window) {
    if (scales < 1) throw InvalidInputError("ms_ssim: scales must be >= 1");
    int ch = h, cw = w;
    for (int s = 1; s < scales; ++s) {
        ch /= 2;
        cw /= 2;
    }
    if (ch < window || cw < window)
        throw InvalidInputError("ms_ssim: image too small for " + std::to_string(scales) + " scales");
}

} // namespace

void LossConfig::check_valid() const {
    if (alpha < 0.0 || beta < 0.0 || alpha + beta <= 0.0)
        throw ConfigError("loss config: alpha, beta must be >= 0 with alpha + beta > 0");
    if (msssim_scales < 0 || msssim_scales > 5) throw ConfigError("loss config: msssim_scales out of range");
    if (window_size < 3 || window_size % 2 == 0) throw ConfigError("loss config: window size must be odd >= 3");
    if (smoothness_weight < 0.0) throw ConfigError("loss config: smoothness weight must be >= 0");
}

int resolve_scales(const LossConfig& cfg, int h, int w) {
    if (cfg.msssim_scales > 0) return cfg.msssim_scales;
    return std::min(h, w) >= 160 ? 5 : 3;
}

Tensor make_window(const LossConfig& cfg) {
    const int k = cfg.window_size;
    Tensor win({k, k});
    if (cfg.window == LossConfig::Window::Box) {
        win.fill(1.0 / (k * k));
        return win;
    }
    const double c = (k - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            const double d2 = (i - c) * (i - c) + (j - c) * (j - c);
            win.at(i, j) = std::exp(-d2 / (2.0 * cfg.window_sigma * cfg.window_sigma));
            sum += win.at(i, j);
        }
    for (int i = 0; i < k * k; ++i) win[i] /= sum;
    return win;
}

Tensor ssim_map(const Image& a, const Image& b, const LossConfig& cfg) {
    check_pair(a, b);
    SsimStats st = ssim_stats(a, b, make_window(cfg));
    Tensor map(st.contrast.shape());
    for (std::int64_t i = 0; i < map.numel(); ++i) map[i] = st.luminance[i] * st.contrast[i];
    return map;
}

double ms_ssim(const Image& a, const Image& b, int scales, const LossConfig& cfg) {
    check_pair(a, b);
    check_scales(scales, a.dim(0), a.dim(1), cfg.window_size);
    const Tensor kernel = make_window(cfg);
    const std::vector<double> w = scale_weights(scales);

    Image ca = a, cb = b;
    double log_acc = 0.0;
    for (int s = 0; s < scales; ++s) {
        SsimStats st = ssim_stats(ca, cb, kernel);
        double term;
        if (s + 1 < scales) {
            term = mean_flat(st.contrast);
            ca = pool2(ca);
            cb = pool2(cb);
        } else {
            Tensor full(st.contrast.shape());
            for (std::int64_t i = 0; i < full.numel(); ++i) full[i] = st.luminance[i] * st.contrast[i];
            term = mean_flat(full);
        }
        log_acc += std::log(std::max(term, kTermFloor)) * w[static_cast<std::size_t>(s)];
    }
    return std::exp(log_acc);
}

double reprojection_loss(const Image& ref, const Image& synth, const ValidityMask& mask,
                         const LossConfig& cfg) {
    check_pair(ref, synth);
    cfg.check_valid();
    if (mask.ndim() != 2 || mask.dim(0) != ref.dim(0) || mask.dim(1) != ref.dim(1))
        throw InvalidInputError("reprojection_loss: mask shape mismatch");
    const std::int64_t valid = count_valid(mask);
    if (valid == 0) throw NoValidPixelsError("reprojection_loss: empty validity mask");

    const int c = ref.dim(2);
    Tensor m3 = mask_to_channels(mask, c);
    Image blended(synth.shape());
    for (std::int64_t i = 0; i < synth.numel(); ++i)
        blended[i] = synth[i] * m3[i] + ref[i] * (1.0 - m3[i]);

    const int scales = resolve_scales(cfg, ref.dim(0), ref.dim(1));
    const double ms = ms_ssim(ref, blended, scales, cfg);

    double l1 = 0.0;
    for (std::int64_t i = 0; i < ref.numel(); ++i) l1 += std::abs(ref[i] - blended[i]);
    l1 *= 1.0 / static_cast<double>(valid * c);

    return (1.0 - ms) * cfg.alpha + l1 * cfg.beta;
}

double tikhonov_regulariser(const DepthMap& depth, const Image& image, double weight) {
    if (depth.ndim() != 2 || image.ndim() != 3 || image.dim(0) != depth.dim(0) ||
        image.dim(1) != depth.dim(1))
        throw InvalidInputError("tikhonov_regulariser: shape mismatch");
    if (weight == 0.0) return 0.0;
    const int h = depth.dim(0), w = depth.dim(1);

    Tensor inv({h, w});
    for (std::int64_t i = 0; i < depth.numel(); ++i) inv[i] = 1.0 / depth[i];
    const double mean_inv = mean_flat(inv);
    for (std::int64_t i = 0; i < inv.numel(); ++i) inv[i] /= mean_inv;

    const Tensor wx = edge_weights_x(image);
    const Tensor wy = edge_weights_y(image);

    double sx = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x + 1 < w; ++x) sx += std::abs(inv.at(y, x + 1) - inv.at(y, x)) * wx.at(y, x);
    double sy = 0.0;
    for (int y = 0; y + 1 < h; ++y)
        for (int x = 0; x < w; ++x) sy += std::abs(inv.at(y + 1, x) - inv.at(y, x)) * wy.at(y, x);

    const double mx = sx * (1.0 / static_cast<double>(h * (w - 1)));
    const double my = sy * (1.0 / static_cast<double>((h - 1) * w));
    return (mx + my) * weight;
}

LossBreakdown total_loss(double reproj, double tikhonov) {
    if (!std::isfinite(reproj) || !std::isfinite(tikhonov))
        throw NonFiniteLossError("total_loss: non-finite component (reproj=" + std::to_string(reproj) +
                                 ", tikhonov=" + std::to_string(tikhonov) + ")");
    return LossBreakdown{reproj, tikhonov, reproj + tikhonov};
}

// ------------------------------------------------------------- tape routes

namespace {

struct SsimStatNodes {
    ad::Var luminance;
    ad::Var contrast;
};

SsimStatNodes ssim_stats_node(const ad::Var& a, const ad::Var& b, const Tensor& kernel) {
    ad::Var mu_a = ad::window_filter(a, kernel);
    ad::Var mu_b = ad::window_filter(b, kernel);
    ad::Var faa = ad::window_filter(ad::mul(a, a), kernel);
    ad::Var fbb = ad::window_filter(ad::mul(b, b), kernel);
    ad::Var fab = ad::window_filter(ad::mul(a, b), kernel);

    ad::Var va = ad::sub(faa, ad::mul(mu_a, mu_a));
    ad::Var vb = ad::sub(fbb, ad::mul(mu_b, mu_b));
    ad::Var cov = ad::sub(fab, ad::mul(mu_a, mu_b));

    SsimStatNodes st;
    st.contrast = ad::vdiv(ad::add_const(ad::mul_const(cov, 2.0), kC2), ad::add_const(ad::add(va, vb), kC2));
    st.luminance = ad::vdiv(ad::add_const(ad::mul_const(ad::mul(mu_a, mu_b), 2.0), kC1),
                            ad::add_const(ad::add(ad::mul(mu_a, mu_a), ad::mul(mu_b, mu_b)), kC1));
    return st;
}

} // namespace

ad::Var ms_ssim_node(const ad::Var& a, const ad::Var& b, int scales, const LossConfig& cfg) {
    check_pair(a->value, b->value);
    check_scales(scales, a->value.dim(0), a->value.dim(1), cfg.window_size);
    const Tensor kernel = make_window(cfg);
    const std::vector<double> w = scale_weights(scales);

    ad::Var ca = a, cb = b;
    ad::Var log_acc;
    for (int s = 0; s < scales; ++s) {
        SsimStatNodes st = ssim_stats_node(ca, cb, kernel);
        ad::Var term;
        if (s + 1 < scales) {
            term = ad::mean_all(st.contrast);
            ca = ad::avg_pool2(ca);
            cb = ad::avg_pool2(cb);
        } else {
            term = ad::mean_all(ad::mul(st.luminance, st.contrast));
        }
        ad::Var piece = ad::mul_const(ad::vlog(ad::clamp_min(term, kTermFloor)), w[static_cast<std::size_t>(s)]);
        log_acc = log_acc ? ad::add(log_acc, piece) : piece;
    }
    return ad::vexp(log_acc);
}

ad::Var reprojection_loss_node(const ad::Var& ref, const ad::Var& synth, const ValidityMask& mask,
                               const LossConfig& cfg) {
    check_pair(ref->value, synth->value);
    cfg.check_valid();
    const std::int64_t valid = count_valid(mask);
    if (valid == 0) throw NoValidPixelsError("reprojection_loss: empty validity mask");
    const int c = ref->value.dim(2);

    Tensor m3 = mask_to_channels(mask, c);
    Tensor im3(m3.shape());
    for (std::int64_t i = 0; i < m3.numel(); ++i) im3[i] = 1.0 - m3[i];
    ad::Var blended = ad::add(ad::mul(synth, ad::constant(m3)), ad::mul(ref, ad::constant(im3)));

    const int scales = resolve_scales(cfg, ref->value.dim(0), ref->value.dim(1));
    ad::Var ms = ms_ssim_node(ref, blended, scales, cfg);

    ad::Var l1 = ad::mul_const(ad::sum_all(ad::vabs(ad::sub(ref, blended))),
                               1.0 / static_cast<double>(valid * c));

    return ad::add(ad::mul_const(ad::add_const(ad::mul_const(ms, -1.0), 1.0), cfg.alpha),
                   ad::mul_const(l1, cfg.beta));
}

ad::Var tikhonov_node(const ad::Var& depth, const Image& image, double weight) {
    const Tensor& d = depth->value;
    if (d.ndim() != 2 || image.ndim() != 3 || image.dim(0) != d.dim(0) || image.dim(1) != d.dim(1))
        throw InvalidInputError("tikhonov_regulariser: shape mismatch");
    const int h = d.dim(0), w = d.dim(1);

    ad::Var inv = ad::vdiv(ad::constant(Tensor::full({h, w}, 1.0)), depth);
    ad::Var dstar = ad::div_by_scalar_node(inv, ad::mean_all(inv));

    ad::Var gx = ad::mul(ad::vabs(ad::diff_x(dstar)), ad::constant(edge_weights_x(image)));
    ad::Var gy = ad::mul(ad::vabs(ad::diff_y(dstar)), ad::constant(edge_weights_y(image)));

    ad::Var mx = ad::mul_const(ad::sum_all(gx), 1.0 / static_cast<double>(h * (w - 1)));
    ad::Var my = ad::mul_const(ad::sum_all(gy), 1.0 / static_cast<double>((h - 1) * w));
    return ad::mul_const(ad::add(mx, my), weight);
}

} // namespace adaptsfm::losses
