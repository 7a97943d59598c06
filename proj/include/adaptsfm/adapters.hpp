#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adaptsfm/autodiff.hpp"
#include "adaptsfm/tensor.hpp"

namespace adaptsfm::adapters {

/// Frozen pre-trained weight W0 (d rows = output dim, k cols = input dim).
struct FrozenLinear {
    Tensor W0;

    int out_dim() const { return W0.dim(0); }
    int in_dim() const { return W0.dim(1); }
};

/// Input compression / output decompression used by the square-matrix branch.
///
/// truncation-sum: compress splits x into ceil(k/r) contiguous length-r
/// segments (last zero-padded) and sums them; decompress tiles z and
/// truncates. rotation: segment j is first rotated pairwise by fixed angles
/// theta_{j,i} = j * base^(-2i/r) (tile j of decompress carries the inverse
/// rotation). Both maps are linear; with r = k = d both are the identity.
struct CompressionScheme {
    enum class Mode { TruncationSum, Rotation };
    Mode mode = Mode::TruncationSum;
    double rotation_base = 10000.0;

    static CompressionScheme truncation() { return {}; }
    static CompressionScheme rotation(double base = 10000.0) { return {Mode::Rotation, base}; }

    std::string mode_name() const { return mode == Mode::TruncationSum ? "truncation-sum" : "rotation"; }
    static CompressionScheme from_name(const std::string& name);
};

/// Trainable adapter state for one adapted linear layer.
struct AdapterParams {
    Tensor m; // per-column magnitude, length k
    Tensor B; // d x r
    Tensor A; // r x k
    Tensor M; // r x r square branch
    int rank = 0;
};

/// Frozen base weight plus its adapter. forward() is domora_forward.
struct AdaptedLinear {
    FrozenLinear base;
    AdapterParams params;
    CompressionScheme scheme;

    Tensor forward(const Tensor& x) const;
};

enum class RankPolicy { Linear, Constant };
RankPolicy rank_policy_from_name(const std::string& name);
std::string rank_policy_name(RankPolicy policy);

using RankVector = std::vector<int>;

/// Euclidean norm of every column of W.
Tensor column_norms(const Tensor& w);

/// W0 x + B (A x).
Tensor lora_forward(const FrozenLinear& layer, const Tensor& B, const Tensor& A, const Tensor& x);

Tensor compress(const Tensor& x, int r, const CompressionScheme& scheme);
Tensor decompress(const Tensor& z, int d, const CompressionScheme& scheme);

/// Materialized compression map C (r x k) such that compress(x) == C x.
Tensor compress_matrix(int k, int r, const CompressionScheme& scheme);
/// Materialized decompression map D (d x r) such that decompress(z) == D z.
Tensor decompress_matrix(int d, int r, const CompressionScheme& scheme);

/// W0 x + decompress(M compress(x)).
Tensor mora_forward(const FrozenLinear& layer, const Tensor& M, const Tensor& x,
                    const CompressionScheme& scheme);

/// Column j of the result is m_j * (W0+BA)_j / |(W0+BA)_j|. Throws
/// DegenerateDirectionError when a direction column is zero.
Tensor dora_effective_weight(const FrozenLinear& layer, const Tensor& m, const Tensor& B, const Tensor& A);

/// dora_effective_weight(...) x + decompress(M compress(x)); the square-matrix
/// branch sits outside the normalization.
Tensor domora_forward(const FrozenLinear& layer, const AdapterParams& params, const Tensor& x,
                      const CompressionScheme& scheme);

/// m = |W0|_columns, B = 0, A ~ U[-1/sqrt(k), 1/sqrt(k)) seeded, M = 0, so the
/// adapted layer reproduces W0 x exactly at initialization.
AdapterParams init_adapter(const FrozenLinear& layer, int r, std::uint64_t seed);

/// Trainable scalars per adapted layer: k + r(d+k) + r^2.
std::int64_t adapter_param_count(int d, int k, int r);

/// Per-layer ranks. "linear" interpolates base_rank down to max(1, base/2)
/// across depth (rounded to nearest); "constant" repeats base_rank.
RankVector rank_vector(int num_layers, int base_rank, RankPolicy policy);

/// Tape-node view of one adapted layer. W0 is a frozen leaf, m/A/B/M are
/// trainable leaves; comp/decomp are the materialized scheme maps.
struct AdapterVars {
    ad::Var W0;
    ad::Var m, A, B, M;
    Tensor comp;   // r x k
    Tensor decomp; // d x r
};

/// Differentiable row-wise DoMoRA application: x {T,k} -> {T,d}. The plain
/// domora_forward is the independent oracle for this route.
ad::Var domora_apply_rows(const AdapterVars& vars, const ad::Var& x_rows);

} // namespace adaptsfm::adapters
