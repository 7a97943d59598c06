#include "adaptsfm/adapters.hpp"

#include <cmath>

#include "adaptsfm/errors.hpp"
#include "adaptsfm/rng.hpp"

namespace adaptsfm::adapters {

CompressionScheme CompressionScheme::from_name(const std::string& name) {
    if (name == "truncation-sum") return truncation();
    if (name == "rotation") return rotation();
    throw ConfigError("unknown compression scheme '" + name + "'");
}

RankPolicy rank_policy_from_name(const std::string& name) {
    if (name == "linear") return RankPolicy::Linear;
    if (name == "constant") return RankPolicy::Constant;
    throw ConfigError("unknown rank policy '" + name + "'");
}

std::string rank_policy_name(RankPolicy policy) {
    return policy == RankPolicy::Linear ? "linear" : "constant";
}

Tensor column_norms(const Tensor& w) {
    if (w.ndim() != 2) throw InvalidInputError("column_norms expects a matrix");
    const int d = w.dim(0), k = w.dim(1);
    Tensor n({k});
    for (int j = 0; j < k; ++j) {
        double s = 0.0;
        for (int i = 0; i < d; ++i) s += w.at(i, j) * w.at(i, j);
        n[j] = std::sqrt(s);
    }
    return n;
}

Tensor lora_forward(const FrozenLinear& layer, const Tensor& B, const Tensor& A, const Tensor& x) {
    const int d = layer.out_dim(), k = layer.in_dim();
    if (B.ndim() != 2 || A.ndim() != 2 || B.dim(0) != d || B.dim(1) != A.dim(0) || A.dim(1) != k ||
        x.ndim() != 1 || x.dim(0) != k)
        throw InvalidInputError("lora_forward: inconsistent shapes");
    Tensor y = matvec(layer.W0, x);
    Tensor up = matvec(B, matvec(A, x));
    for (int i = 0; i < d; ++i) y[i] += up[i];
    return y;
}

namespace {

// Planar rotation of one segment. theta_{j,i} = j * base^(-2i/r) applied to
// coordinate pair (2i, 2i+1); a trailing odd coordinate is left alone.
void rotate_segment(std::vector<double>& seg, int segment_index, double base, bool inverse) {
    const int r = static_cast<int>(seg.size());
    for (int i = 0; 2 * i + 1 < r; ++i) {
        double theta = segment_index * std::pow(base, -2.0 * i / r);
        if (inverse) theta = -theta;
        const double c = std::cos(theta), s = std::sin(theta);
        const double a = seg[2 * i], b = seg[2 * i + 1];
        seg[2 * i] = c * a - s * b;
        seg[2 * i + 1] = s * a + c * b;
    }
}

} // namespace

Tensor compress(const Tensor& x, int r, const CompressionScheme& scheme) {
    if (x.ndim() != 1) throw InvalidInputError("compress expects a vector");
    const int k = x.dim(0);
    if (r < 1 || r > k) throw InvalidInputError("compress: rank must satisfy 1 <= r <= k");
    const int segments = (k + r - 1) / r;
    Tensor z({r});
    for (int j = 0; j < segments; ++j) {
        std::vector<double> seg(r, 0.0);
        for (int i = 0; i < r && j * r + i < k; ++i) seg[i] = x[j * r + i];
        if (scheme.mode == CompressionScheme::Mode::Rotation)
            rotate_segment(seg, j, scheme.rotation_base, /*inverse=*/false);
        for (int i = 0; i < r; ++i) z[i] += seg[i];
    }
    return z;
}

Tensor decompress(const Tensor& z, int d, const CompressionScheme& scheme) {
    if (z.ndim() != 1) throw InvalidInputError("decompress expects a vector");
    const int r = z.dim(0);
    if (r < 1 || r > d) throw InvalidInputError("decompress: rank must satisfy 1 <= r <= d");
    const int tiles = (d + r - 1) / r;
    Tensor y({d});
    for (int j = 0; j < tiles; ++j) {
        std::vector<double> seg(z.data(), z.data() + r);
        if (scheme.mode == CompressionScheme::Mode::Rotation)
            rotate_segment(seg, j, scheme.rotation_base, /*inverse=*/true);
        for (int i = 0; i < r && j * r + i < d; ++i) y[j * r + i] = seg[i];
    }
    return y;
}

Tensor compress_matrix(int k, int r, const CompressionScheme& scheme) {
    Tensor c({r, k});
    Tensor basis({k});
    for (int j = 0; j < k; ++j) {
        basis.fill(0.0);
        basis[j] = 1.0;
        Tensor col = compress(basis, r, scheme);
        for (int i = 0; i < r; ++i) c.at(i, j) = col[i];
    }
    return c;
}

Tensor decompress_matrix(int d, int r, const CompressionScheme& scheme) {
    Tensor m({d, r});
    Tensor basis({r});
    for (int j = 0; j < r; ++j) {
        basis.fill(0.0);
        basis[j] = 1.0;
        Tensor col = decompress(basis, d, scheme);
        for (int i = 0; i < d; ++i) m.at(i, j) = col[i];
    }
    return m;
}

Tensor mora_forward(const FrozenLinear& layer, const Tensor& M, const Tensor& x,
                    const CompressionScheme& scheme) {
    const int d = layer.out_dim(), k = layer.in_dim();
    if (M.ndim() != 2 || M.dim(0) != M.dim(1) || x.ndim() != 1 || x.dim(0) != k)
        throw InvalidInputError("mora_forward: inconsistent shapes");
    const int r = M.dim(0);
    Tensor y = matvec(layer.W0, x);
    Tensor up = decompress(matvec(M, compress(x, r, scheme)), d, scheme);
    for (int i = 0; i < d; ++i) y[i] += up[i];
    return y;
}

Tensor dora_effective_weight(const FrozenLinear& layer, const Tensor& m, const Tensor& B, const Tensor& A) {
    const int d = layer.out_dim(), k = layer.in_dim();
    if (m.ndim() != 1 || m.dim(0) != k || B.dim(0) != d || B.dim(1) != A.dim(0) || A.dim(1) != k)
        throw InvalidInputError("dora_effective_weight: inconsistent shapes");
    Tensor v = layer.W0 + matmul(B, A);
    Tensor norms = column_norms(v);
    for (int j = 0; j < k; ++j) {
        if (norms[j] == 0.0)
            throw DegenerateDirectionError("dora_effective_weight: zero direction column " + std::to_string(j));
        const double scale = m[j] / norms[j];
        for (int i = 0; i < d; ++i) v.at(i, j) *= scale;
    }
    return v;
}

Tensor domora_forward(const FrozenLinear& layer, const AdapterParams& params, const Tensor& x,
                      const CompressionScheme& scheme) {
    const int d = layer.out_dim();
    Tensor w = dora_effective_weight(layer, params.m, params.B, params.A);
    Tensor y = matvec(w, x);
    Tensor up = decompress(matvec(params.M, compress(x, params.rank, scheme)), d, scheme);
    for (int i = 0; i < d; ++i) y[i] += up[i];
    return y;
}

Tensor AdaptedLinear::forward(const Tensor& x) const { return domora_forward(base, params, x, scheme); }

AdapterParams init_adapter(const FrozenLinear& layer, int r, std::uint64_t seed) {
    const int d = layer.out_dim(), k = layer.in_dim();
    if (r < 1 || r > std::min(d, k)) throw InvalidInputError("init_adapter: rank out of range");
    AdapterParams p;
    p.rank = r;
    p.m = column_norms(layer.W0);
    p.B = Tensor({d, r});
    Rng rng = substream(seed, "init_adapter.A");
    const double bound = 1.0 / std::sqrt(static_cast<double>(k));
    p.A = random_uniform({r, k}, rng, -bound, bound);
    p.M = Tensor({r, r});
    return p;
}

std::int64_t adapter_param_count(int d, int k, int r) {
    return static_cast<std::int64_t>(k) + static_cast<std::int64_t>(r) * (d + k) +
           static_cast<std::int64_t>(r) * r;
}

ad::Var domora_apply_rows(const AdapterVars& vars, const ad::Var& x_rows) {
    ad::Var direction = ad::add(vars.W0, ad::matmul(vars.B, vars.A));
    ad::Var norms = ad::column_l2_norms(direction);
    ad::Var effective = ad::scale_columns(direction, ad::vdiv(vars.m, norms));
    ad::Var y = ad::matmul(x_rows, ad::transpose(effective));
    ad::Var z = ad::matmul(x_rows, ad::constant(transpose(vars.comp)));
    z = ad::matmul(z, ad::transpose(vars.M));
    z = ad::matmul(z, ad::constant(transpose(vars.decomp)));
    return ad::add(y, z);
}

RankVector rank_vector(int num_layers, int base_rank, RankPolicy policy) {
    if (num_layers < 1 || base_rank < 1) throw InvalidInputError("rank_vector: positive sizes required");
    RankVector ranks(static_cast<std::size_t>(num_layers), base_rank);
    if (policy == RankPolicy::Constant || num_layers == 1) return ranks;
    const double lo = std::max(1.0, base_rank / 2.0);
    for (int l = 0; l < num_layers; ++l) {
        double t = static_cast<double>(l) / (num_layers - 1);
        ranks[static_cast<std::size_t>(l)] =
            static_cast<int>(std::lround(base_rank + t * (lo - base_rank)));
    }
    return ranks;
}

} // namespace adaptsfm::adapters
