#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "adaptsfm/tensor.hpp"

namespace adaptsfm::ad {

/**
 * Reverse-mode autodiff over Tensor.
 *
 * A Node owns its forward value and (after backward()) its gradient. Ops
 * build a DAG of shared_ptr<Node>; backward() topologically sorts the
 * reachable subgraph, seeds the scalar root with 1 and runs each node's
 * backprop closure in reverse order. Parameters are leaves that persist
 * across steps; everything else is transient and its edges are released
 * at the end of backward so teardown never recurses deeply.
 */
struct Node {
    Tensor value;
    Tensor grad; // allocated during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var param(Tensor value);

/// Runs reverse-mode accumulation from a scalar (numel==1) root.
/// Zeroes the gradients of every reachable node first.
void backward(const Var& root, bool release_graph = true);

// ---- elementwise (same shape) ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var vdiv(const Var& a, const Var& b);

// ---- with a compile-time constant ----
Var add_const(const Var& a, double c);
Var mul_const(const Var& a, double c);

// ---- unary ----
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var vexp(const Var& a);
Var vlog(const Var& a);
Var vsqrt(const Var& a);
Var vabs(const Var& a);
Var clamp_min(const Var& a, double lo);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var softmax_rows(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);
Var add_rowvec(const Var& x, const Var& bias);
Var col_mean(const Var& x);                       // {M,N} -> {1,N}
Var column_l2_norms(const Var& w);                // {d,k} -> {k}
Var scale_columns(const Var& w, const Var& s);    // w.col(j) * s[j]

// ---- shape ----
Var reshape(const Var& x, std::vector<int> shape);
Var slice_cols(const Var& x, int offset, int len);
Var concat_cols(const std::vector<Var>& xs);
Var get_scalar(const Var& x, std::int64_t index); // -> {1}

// ---- reductions / scalar broadcasting (scalar = {1} node) ----
Var sum_all(const Var& x);
Var mean_all(const Var& x);
Var mul_scalar_node(const Var& s, const Var& x);
Var div_by_scalar_node(const Var& x, const Var& s);
Var add_scalar_node(const Var& x, const Var& s);

// ---- image ops; images are {H,W,C}, maps {H,W} ----
Var conv2d(const Var& x, const Var& w, const Var& b); // same padding, odd kernel
Var upsample2_nearest(const Var& x);
Var avg_pool2(const Var& x);                          // floor dims, trailing row/col dropped
Var window_filter(const Var& x, const Tensor& kernel); // depthwise, valid
Var extract_patches(const Var& img, int patch);        // -> {T, P*P*C}
Var bilinear_sample(const Var& img, const Var& u, const Var& v); // border clamp
Var diff_x(const Var& x); // {H,W} -> {H,W-1}
Var diff_y(const Var& x); // {H,W} -> {H-1,W}
/// Snaps entries within eps of an integer onto it; gradient passes through.
/// Keeps reprojected grids exact against 1-ulp round-trip noise.
Var snap_to_integers(const Var& x, double eps);

// ---- rotation helpers ----
Var cross_matrix(const Var& phi);  // {3} -> {3,3} skew-symmetric
Var rot_coeff_a(const Var& s);     // sin(sqrt(s))/sqrt(s), series near 0
Var rot_coeff_b(const Var& s);     // (1-cos(sqrt(s)))/s, series near 0

} // namespace adaptsfm::ad
