#include "adaptsfm/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "adaptsfm/errors.hpp"

namespace adaptsfm::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw InvalidInputError(std::string(op) + ": shape mismatch " + a->value.shape_str() + " vs " +
                                b->value.shape_str());
}

void accum(Tensor& dst, const Tensor& src) {
    for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

} // namespace

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = false;
    return n;
}

Var param(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return n;
}

void backward(const Var& root, bool release_graph) {
    if (root->value.numel() != 1) throw InvalidInputError("backward: root must be scalar");

    // Iterative post-order DFS.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) n->grad = Tensor(n->value.shape());
    root->grad[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backprop) n->backprop(*n);
    }

    if (release_graph) {
        for (Node* n : order) {
            if (!n->parents.empty()) {
                n->parents.clear();
                n->backprop = nullptr;
            }
        }
    }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] += b->value[i];
    return make_node(std::move(v), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) accum(n.parents[0]->grad, n.grad);
        if (n.parents[1]->requires_grad) accum(n.parents[1]->grad, n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] -= b->value[i];
    return make_node(std::move(v), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) accum(n.parents[0]->grad, n.grad);
        if (n.parents[1]->requires_grad)
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) n.parents[1]->grad[i] -= n.grad[i];
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] *= b->value[i];
    return make_node(std::move(v), {a, b}, [](Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad)
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
        if (pb.requires_grad)
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
    });
}

Var vdiv(const Var& a, const Var& b) {
    check_same_shape(a, b, "div");
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] /= b->value[i];
    return make_node(std::move(v), {a, b}, [](Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad)
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) pa.grad[i] += n.grad[i] / pb.value[i];
        if (pb.requires_grad)
            for (std::int64_t i = 0; i < n.grad.numel(); ++i)
                pb.grad[i] -= n.grad[i] * pa.value[i] / (pb.value[i] * pb.value[i]);
    });
}

Var add_const(const Var& a, double c) {
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] += c;
    return make_node(std::move(v), {a}, [](Node& n) { accum(n.parents[0]->grad, n.grad); });
}

Var mul_const(const Var& a, double c) {
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] *= c;
    return make_node(std::move(v), {a}, [c](Node& n) {
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) n.parents[0]->grad[i] += c * n.grad[i];
    });
}

// -------------------------------------------------------------------- unary

Var gelu(const Var& a) {
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) {
        double x = v[i];
        v[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
    }
    return make_node(std::move(v), {a}, [](Node& n) {
        const Tensor& x = n.parents[0]->value;
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
            double cdf = 0.5 * (1.0 + std::erf(x[i] * M_SQRT1_2));
            double pdf = std::exp(-0.5 * x[i] * x[i]) / std::sqrt(2.0 * M_PI);
            n.parents[0]->grad[i] += n.grad[i] * (cdf + x[i] * pdf);
        }
    });
}

Var sigmoid(const Var& a) {
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = 1.0 / (1.0 + std::exp(-v[i]));
    return make_node(std::move(v), {a}, [](Node& n) {
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
            double s = n.value[i];
            n.parents[0]->grad[i] += n.grad[i] * s * (1.0 - s);
        }
    });
}

Var vexp(const Var& a) {
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = std::exp(v[i]);
    return make_node(std::move(v), {a}, [](Node& n) {
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) n.parents[0]->grad[i] += n.grad[i] * n.value[i];
    });
}

Var vlog(const Var& a) {
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = std::log(v[i]);
    return make_node(std::move(v), {a}, [](Node& n) {
        for (std::int64_t i = 0; i < n.grad.numel(); ++i)
            n.parents[0]->grad[i] += n.grad[i] / n.parents[0]->value[i];
    });
}

Var vsqrt(const Var& a) {
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = std::sqrt(v[i]);
    return make_node(std::move(v), {a}, [](Node& n) {
        for (std::int64_t i = 0; i < n.grad.numel(); ++i)
            n.parents[0]->grad[i] += n.grad[i] * 0.5 / n.value[i];
    });
}

Var vabs(const Var& a) {
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = std::abs(v[i]);
    return make_node(std::move(v), {a}, [](Node& n) {
        const Tensor& x = n.parents[0]->value;
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
            double s = (x[i] > 0.0) ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
            n.parents[0]->grad[i] += n.grad[i] * s;
        }
    });
}

Var clamp_min(const Var& a, double lo) {
    Tensor v = a->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = std::max(v[i], lo);
    return make_node(std::move(v), {a}, [lo](Node& n) {
        const Tensor& x = n.parents[0]->value;
        for (std::int64_t i = 0; i < n.grad.numel(); ++i)
            if (x[i] > lo) n.parents[0]->grad[i] += n.grad[i];
    });
}

// ----------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
    Tensor v = adaptsfm::matmul(a->value, b->value);
    return make_node(std::move(v), {a, b}, [](Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        const int m = pa.value.dim(0), k = pa.value.dim(1), c = pb.value.dim(1);
        CMapMat g(n.grad.data(), m, c);
        if (pa.requires_grad) {
            CMapMat bm(pb.value.data(), k, c);
            MapMat ga(pa.grad.data(), m, k);
            ga.noalias() += g * bm.transpose();
        }
        if (pb.requires_grad) {
            CMapMat am(pa.value.data(), m, k);
            MapMat gb(pb.grad.data(), k, c);
            gb.noalias() += am.transpose() * g;
        }
    });
}

Var transpose(const Var& a) {
    Tensor v = adaptsfm::transpose(a->value);
    return make_node(std::move(v), {a}, [](Node& n) {
        auto& p = *n.parents[0];
        for (int i = 0; i < p.value.dim(0); ++i)
            for (int j = 0; j < p.value.dim(1); ++j) p.grad.at(i, j) += n.grad.at(j, i);
    });
}

Var softmax_rows(const Var& a) {
    if (a->value.ndim() != 2) throw InvalidInputError("softmax_rows expects 2-D");
    Tensor v = a->value;
    const int rows = v.dim(0), cols = v.dim(1);
    for (int i = 0; i < rows; ++i) {
        double mx = -1e300;
        for (int j = 0; j < cols; ++j) mx = std::max(mx, v.at(i, j));
        double z = 0.0;
        for (int j = 0; j < cols; ++j) {
            v.at(i, j) = std::exp(v.at(i, j) - mx);
            z += v.at(i, j);
        }
        for (int j = 0; j < cols; ++j) v.at(i, j) /= z;
    }
    return make_node(std::move(v), {a}, [rows, cols](Node& n) {
        for (int i = 0; i < rows; ++i) {
            double dot = 0.0;
            for (int j = 0; j < cols; ++j) dot += n.grad.at(i, j) * n.value.at(i, j);
            for (int j = 0; j < cols; ++j)
                n.parents[0]->grad.at(i, j) += n.value.at(i, j) * (n.grad.at(i, j) - dot);
        }
    });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    if (x->value.ndim() != 2) throw InvalidInputError("layer_norm_rows expects 2-D");
    const int rows = x->value.dim(0), cols = x->value.dim(1);
    if (gamma->value.numel() != cols || beta->value.numel() != cols)
        throw InvalidInputError("layer_norm_rows: gamma/beta size mismatch");

    Tensor v({rows, cols});
    Tensor xhat({rows, cols});
    Tensor inv_sigma({rows});
    for (int i = 0; i < rows; ++i) {
        double mu = 0.0;
        for (int j = 0; j < cols; ++j) mu += x->value.at(i, j);
        mu /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) {
            double d = x->value.at(i, j) - mu;
            var += d * d;
        }
        var /= cols;
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[i] = is;
        for (int j = 0; j < cols; ++j) {
            double h = (x->value.at(i, j) - mu) * is;
            xhat.at(i, j) = h;
            v.at(i, j) = h * gamma->value[j] + beta->value[j];
        }
    }
    return make_node(std::move(v), {x, gamma, beta},
                     [rows, cols, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Node& n) {
                         auto& px = *n.parents[0];
                         auto& pg = *n.parents[1];
                         auto& pb = *n.parents[2];
                         for (int i = 0; i < rows; ++i) {
                             double m_dxhat = 0.0, m_dxhat_xhat = 0.0;
                             for (int j = 0; j < cols; ++j) {
                                 double dxh = n.grad.at(i, j) * pg.value[j];
                                 m_dxhat += dxh;
                                 m_dxhat_xhat += dxh * xhat.at(i, j);
                             }
                             m_dxhat /= cols;
                             m_dxhat_xhat /= cols;
                             if (px.requires_grad) {
                                 for (int j = 0; j < cols; ++j) {
                                     double dxh = n.grad.at(i, j) * pg.value[j];
                                     px.grad.at(i, j) +=
                                         inv_sigma[i] * (dxh - m_dxhat - xhat.at(i, j) * m_dxhat_xhat);
                                 }
                             }
                             if (pg.requires_grad)
                                 for (int j = 0; j < cols; ++j) pg.grad[j] += n.grad.at(i, j) * xhat.at(i, j);
                             if (pb.requires_grad)
                                 for (int j = 0; j < cols; ++j) pb.grad[j] += n.grad.at(i, j);
                         }
                     });
}

Var add_rowvec(const Var& x, const Var& bias) {
    if (x->value.ndim() != 2 || bias->value.numel() != x->value.dim(1))
        throw InvalidInputError("add_rowvec: shape mismatch");
    Tensor v = x->value;
    const int rows = v.dim(0), cols = v.dim(1);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) v.at(i, j) += bias->value[j];
    return make_node(std::move(v), {x, bias}, [rows, cols](Node& n) {
        if (n.parents[0]->requires_grad) accum(n.parents[0]->grad, n.grad);
        if (n.parents[1]->requires_grad)
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) n.parents[1]->grad[j] += n.grad.at(i, j);
    });
}

Var col_mean(const Var& x) {
    if (x->value.ndim() != 2) throw InvalidInputError("col_mean expects 2-D");
    const int rows = x->value.dim(0), cols = x->value.dim(1);
    Tensor v({1, cols});
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) v.at(0, j) += x->value.at(i, j) / rows;
    return make_node(std::move(v), {x}, [rows, cols](Node& n) {
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) n.parents[0]->grad.at(i, j) += n.grad.at(0, j) / rows;
    });
}

Var column_l2_norms(const Var& w) {
    if (w->value.ndim() != 2) throw InvalidInputError("column_l2_norms expects 2-D");
    const int d = w->value.dim(0), k = w->value.dim(1);
    Tensor v({k});
    for (int j = 0; j < k; ++j) {
        double s = 0.0;
        for (int i = 0; i < d; ++i) s += w->value.at(i, j) * w->value.at(i, j);
        v[j] = std::sqrt(s);
    }
    return make_node(std::move(v), {w}, [d, k](Node& n) {
        for (int j = 0; j < k; ++j) {
            if (n.value[j] == 0.0) continue;
            double g = n.grad[j] / n.value[j];
            for (int i = 0; i < d; ++i)
                n.parents[0]->grad.at(i, j) += g * n.parents[0]->value.at(i, j);
        }
    });
}

Var scale_columns(const Var& w, const Var& s) {
    if (w->value.ndim() != 2 || s->value.numel() != w->value.dim(1))
        throw InvalidInputError("scale_columns: shape mismatch");
    const int d = w->value.dim(0), k = w->value.dim(1);
    Tensor v = w->value;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < k; ++j) v.at(i, j) *= s->value[j];
    return make_node(std::move(v), {w, s}, [d, k](Node& n) {
        auto& pw = *n.parents[0];
        auto& ps = *n.parents[1];
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < k; ++j) {
                if (pw.requires_grad) pw.grad.at(i, j) += n.grad.at(i, j) * ps.value[j];
                if (ps.requires_grad) ps.grad[j] += n.grad.at(i, j) * pw.value.at(i, j);
            }
    });
}

// -------------------------------------------------------------------- shape

Var reshape(const Var& x, std::vector<int> shape) {
    Tensor v = x->value.reshaped(std::move(shape));
    return make_node(std::move(v), {x}, [](Node& n) {
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) n.parents[0]->grad[i] += n.grad[i];
    });
}

Var slice_cols(const Var& x, int offset, int len) {
    if (x->value.ndim() != 2 || offset < 0 || offset + len > x->value.dim(1))
        throw InvalidInputError("slice_cols: range out of bounds");
    const int rows = x->value.dim(0);
    Tensor v({rows, len});
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < len; ++j) v.at(i, j) = x->value.at(i, offset + j);
    return make_node(std::move(v), {x}, [rows, offset, len](Node& n) {
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < len; ++j) n.parents[0]->grad.at(i, offset + j) += n.grad.at(i, j);
    });
}

Var concat_cols(const std::vector<Var>& xs) {
    if (xs.empty()) throw InvalidInputError("concat_cols: empty input");
    const int rows = xs[0]->value.dim(0);
    int cols = 0;
    for (const auto& x : xs) {
        if (x->value.ndim() != 2 || x->value.dim(0) != rows)
            throw InvalidInputError("concat_cols: row mismatch");
        cols += x->value.dim(1);
    }
    Tensor v({rows, cols});
    int off = 0;
    for (const auto& x : xs) {
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < x->value.dim(1); ++j) v.at(i, off + j) = x->value.at(i, j);
        off += x->value.dim(1);
    }
    std::vector<Var> parents(xs.begin(), xs.end());
    return make_node(std::move(v), std::move(parents), [rows](Node& n) {
        int off = 0;
        for (auto& p : n.parents) {
            const int w = p->value.dim(1);
            if (p->requires_grad)
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < w; ++j) p->grad.at(i, j) += n.grad.at(i, off + j);
            off += w;
        }
    });
}

Var get_scalar(const Var& x, std::int64_t index) {
    if (index < 0 || index >= x->value.numel()) throw InvalidInputError("get_scalar: index out of range");
    Tensor v({1});
    v[0] = x->value[index];
    return make_node(std::move(v), {x}, [index](Node& n) { n.parents[0]->grad[index] += n.grad[0]; });
}

// --------------------------------------------------- reductions / broadcasts

Var sum_all(const Var& x) {
    Tensor v({1});
    for (std::int64_t i = 0; i < x->value.numel(); ++i) v[0] += x->value[i];
    return make_node(std::move(v), {x}, [](Node& n) {
        for (std::int64_t i = 0; i < n.parents[0]->grad.numel(); ++i) n.parents[0]->grad[i] += n.grad[0];
    });
}

Var mean_all(const Var& x) { return mul_const(sum_all(x), 1.0 / static_cast<double>(x->value.numel())); }

Var mul_scalar_node(const Var& s, const Var& x) {
    if (s->value.numel() != 1) throw InvalidInputError("mul_scalar_node: s must be scalar");
    Tensor v = x->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] *= s->value[0];
    return make_node(std::move(v), {s, x}, [](Node& n) {
        auto& ps = *n.parents[0];
        auto& px = *n.parents[1];
        if (ps.requires_grad)
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) ps.grad[0] += n.grad[i] * px.value[i];
        if (px.requires_grad)
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) px.grad[i] += n.grad[i] * ps.value[0];
    });
}

Var div_by_scalar_node(const Var& x, const Var& s) {
    if (s->value.numel() != 1) throw InvalidInputError("div_by_scalar_node: s must be scalar");
    Tensor v = x->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] /= s->value[0];
    return make_node(std::move(v), {x, s}, [](Node& n) {
        auto& px = *n.parents[0];
        auto& ps = *n.parents[1];
        double sv = ps.value[0];
        if (px.requires_grad)
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) px.grad[i] += n.grad[i] / sv;
        if (ps.requires_grad)
            for (std::int64_t i = 0; i < n.grad.numel(); ++i)
                ps.grad[0] -= n.grad[i] * px.value[i] / (sv * sv);
    });
}

Var add_scalar_node(const Var& x, const Var& s) {
    if (s->value.numel() != 1) throw InvalidInputError("add_scalar_node: s must be scalar");
    Tensor v = x->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] += s->value[0];
    return make_node(std::move(v), {x, s}, [](Node& n) {
        if (n.parents[0]->requires_grad) accum(n.parents[0]->grad, n.grad);
        if (n.parents[1]->requires_grad)
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) n.parents[1]->grad[0] += n.grad[i];
    });
}

// ---------------------------------------------------------------- image ops

Var conv2d(const Var& x, const Var& w, const Var& b) {
    if (x->value.ndim() != 3 || w->value.ndim() != 4)
        throw InvalidInputError("conv2d: expects x {H,W,C}, w {Co,Ci,kh,kw}");
    const int H = x->value.dim(0), W = x->value.dim(1), Ci = x->value.dim(2);
    const int Co = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
    if (w->value.dim(1) != Ci || b->value.numel() != Co || kh % 2 == 0 || kw % 2 == 0)
        throw InvalidInputError("conv2d: channel/kernel mismatch");
    const int ph = kh / 2, pw = kw / 2;

    auto widx = [Ci, kh, kw](int co, int ci, int ky, int kx) {
        return ((static_cast<std::int64_t>(co) * Ci + ci) * kh + ky) * kw + kx;
    };

    Tensor v({H, W, Co});
    for (int oy = 0; oy < H; ++oy)
        for (int ox = 0; ox < W; ++ox)
            for (int co = 0; co < Co; ++co) {
                double acc = b->value[co];
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy + ky - ph;
                    if (iy < 0 || iy >= H) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ox + kx - pw;
                        if (ix < 0 || ix >= W) continue;
                        for (int ci = 0; ci < Ci; ++ci)
                            acc += w->value[widx(co, ci, ky, kx)] * x->value.at(iy, ix, ci);
                    }
                }
                v.at(oy, ox, co) = acc;
            }

    return make_node(std::move(v), {x, w, b}, [H, W, Ci, Co, kh, kw, ph, pw, widx](Node& n) {
        auto& px = *n.parents[0];
        auto& pw_ = *n.parents[1];
        auto& pb = *n.parents[2];
        for (int oy = 0; oy < H; ++oy)
            for (int ox = 0; ox < W; ++ox)
                for (int co = 0; co < Co; ++co) {
                    const double g = n.grad.at(oy, ox, co);
                    if (g == 0.0) continue;
                    if (pb.requires_grad) pb.grad[co] += g;
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy + ky - ph;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox + kx - pw;
                            if (ix < 0 || ix >= W) continue;
                            for (int ci = 0; ci < Ci; ++ci) {
                                if (px.requires_grad)
                                    px.grad.at(iy, ix, ci) += g * pw_.value[widx(co, ci, ky, kx)];
                                if (pw_.requires_grad)
                                    pw_.grad[widx(co, ci, ky, kx)] += g * px.value.at(iy, ix, ci);
                            }
                        }
                    }
                }
    });
}

Var upsample2_nearest(const Var& x) {
    if (x->value.ndim() != 3) throw InvalidInputError("upsample2_nearest expects {H,W,C}");
    const int H = x->value.dim(0), W = x->value.dim(1), C = x->value.dim(2);
    Tensor v({2 * H, 2 * W, C});
    for (int y = 0; y < 2 * H; ++y)
        for (int xx = 0; xx < 2 * W; ++xx)
            for (int c = 0; c < C; ++c) v.at(y, xx, c) = x->value.at(y / 2, xx / 2, c);
    return make_node(std::move(v), {x}, [H, W, C](Node& n) {
        for (int y = 0; y < 2 * H; ++y)
            for (int xx = 0; xx < 2 * W; ++xx)
                for (int c = 0; c < C; ++c) n.parents[0]->grad.at(y / 2, xx / 2, c) += n.grad.at(y, xx, c);
    });
}

Var avg_pool2(const Var& x) {
    if (x->value.ndim() != 3) throw InvalidInputError("avg_pool2 expects {H,W,C}");
    const int H = x->value.dim(0) / 2, W = x->value.dim(1) / 2, C = x->value.dim(2);
    if (H < 1 || W < 1) throw InvalidInputError("avg_pool2: input too small");
    Tensor v({H, W, C});
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
            for (int c = 0; c < C; ++c)
                v.at(y, xx, c) = 0.25 * (x->value.at(2 * y, 2 * xx, c) + x->value.at(2 * y, 2 * xx + 1, c) +
                                         x->value.at(2 * y + 1, 2 * xx, c) + x->value.at(2 * y + 1, 2 * xx + 1, c));
    return make_node(std::move(v), {x}, [H, W, C](Node& n) {
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
                for (int c = 0; c < C; ++c) {
                    const double g = 0.25 * n.grad.at(y, xx, c);
                    n.parents[0]->grad.at(2 * y, 2 * xx, c) += g;
                    n.parents[0]->grad.at(2 * y, 2 * xx + 1, c) += g;
                    n.parents[0]->grad.at(2 * y + 1, 2 * xx, c) += g;
                    n.parents[0]->grad.at(2 * y + 1, 2 * xx + 1, c) += g;
                }
    });
}

Var window_filter(const Var& x, const Tensor& kernel) {
    if (x->value.ndim() != 3 || kernel.ndim() != 2) throw InvalidInputError("window_filter: bad shapes");
    const int H = x->value.dim(0), W = x->value.dim(1), C = x->value.dim(2);
    const int kh = kernel.dim(0), kw = kernel.dim(1);
    if (H < kh || W < kw) throw InvalidInputError("window_filter: image smaller than window");
    const int Ho = H - kh + 1, Wo = W - kw + 1;
    Tensor v({Ho, Wo, C});
    for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox)
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) acc += kernel.at(ky, kx) * x->value.at(oy + ky, ox + kx, c);
                v.at(oy, ox, c) = acc;
            }
    return make_node(std::move(v), {x}, [Ho, Wo, C, kh, kw, kernel](Node& n) {
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox)
                for (int c = 0; c < C; ++c) {
                    const double g = n.grad.at(oy, ox, c);
                    if (g == 0.0) continue;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx)
                            n.parents[0]->grad.at(oy + ky, ox + kx, c) += g * kernel.at(ky, kx);
                }
    });
}

Var extract_patches(const Var& img, int patch) {
    if (img->value.ndim() != 3) throw InvalidInputError("extract_patches expects {H,W,C}");
    const int H = img->value.dim(0), W = img->value.dim(1), C = img->value.dim(2);
    if (H % patch != 0 || W % patch != 0) throw InvalidInputError("extract_patches: dims not divisible by patch");
    const int gh = H / patch, gw = W / patch;
    const int T = gh * gw, F = patch * patch * C;
    Tensor v({T, F});
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx)
            for (int py = 0; py < patch; ++py)
                for (int px = 0; px < patch; ++px)
                    for (int c = 0; c < C; ++c)
                        v.at(gy * gw + gx, (py * patch + px) * C + c) =
                            img->value.at(gy * patch + py, gx * patch + px, c);
    return make_node(std::move(v), {img}, [gh, gw, patch, C](Node& n) {
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx)
                for (int py = 0; py < patch; ++py)
                    for (int px = 0; px < patch; ++px)
                        for (int c = 0; c < C; ++c)
                            n.parents[0]->grad.at(gy * patch + py, gx * patch + px, c) +=
                                n.grad.at(gy * gw + gx, (py * patch + px) * C + c);
    });
}

Var bilinear_sample(const Var& img, const Var& u, const Var& v) {
    if (img->value.ndim() != 3 || u->value.ndim() != 2 || !u->value.same_shape(v->value))
        throw InvalidInputError("bilinear_sample: bad shapes");
    const int Hs = img->value.dim(0), Ws = img->value.dim(1), C = img->value.dim(2);
    const int H = u->value.dim(0), W = u->value.dim(1);
    auto cl = [](int a, int lo, int hi) { return std::min(std::max(a, lo), hi); };

    Tensor out({H, W, C});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double uu = u->value.at(y, x), vv = v->value.at(y, x);
            const int x0 = static_cast<int>(std::floor(uu)), y0 = static_cast<int>(std::floor(vv));
            const double fx = uu - x0, fy = vv - y0;
            const int cx0 = cl(x0, 0, Ws - 1), cx1 = cl(x0 + 1, 0, Ws - 1);
            const int cy0 = cl(y0, 0, Hs - 1), cy1 = cl(y0 + 1, 0, Hs - 1);
            for (int c = 0; c < C; ++c) {
                const double i00 = img->value.at(cy0, cx0, c), i01 = img->value.at(cy0, cx1, c);
                const double i10 = img->value.at(cy1, cx0, c), i11 = img->value.at(cy1, cx1, c);
                out.at(y, x, c) = (1 - fy) * ((1 - fx) * i00 + fx * i01) + fy * ((1 - fx) * i10 + fx * i11);
            }
        }

    return make_node(std::move(out), {img, u, v}, [Hs, Ws, C, H, W, cl](Node& n) {
        auto& pi = *n.parents[0];
        auto& pu = *n.parents[1];
        auto& pv = *n.parents[2];
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double uu = pu.value.at(y, x), vv = pv.value.at(y, x);
                const int x0 = static_cast<int>(std::floor(uu)), y0 = static_cast<int>(std::floor(vv));
                const double fx = uu - x0, fy = vv - y0;
                const int cx0 = cl(x0, 0, Ws - 1), cx1 = cl(x0 + 1, 0, Ws - 1);
                const int cy0 = cl(y0, 0, Hs - 1), cy1 = cl(y0 + 1, 0, Hs - 1);
                for (int c = 0; c < C; ++c) {
                    const double g = n.grad.at(y, x, c);
                    if (g == 0.0) continue;
                    const double i00 = pi.value.at(cy0, cx0, c), i01 = pi.value.at(cy0, cx1, c);
                    const double i10 = pi.value.at(cy1, cx0, c), i11 = pi.value.at(cy1, cx1, c);
                    if (pi.requires_grad) {
                        pi.grad.at(cy0, cx0, c) += g * (1 - fy) * (1 - fx);
                        pi.grad.at(cy0, cx1, c) += g * (1 - fy) * fx;
                        pi.grad.at(cy1, cx0, c) += g * fy * (1 - fx);
                        pi.grad.at(cy1, cx1, c) += g * fy * fx;
                    }
                    if (pu.requires_grad)
                        pu.grad.at(y, x) += g * ((1 - fy) * (i01 - i00) + fy * (i11 - i10));
                    if (pv.requires_grad)
                        pv.grad.at(y, x) += g * ((1 - fx) * (i10 - i00) + fx * (i11 - i01));
                }
            }
    });
}

Var diff_x(const Var& x) {
    if (x->value.ndim() != 2) throw InvalidInputError("diff_x expects {H,W}");
    const int H = x->value.dim(0), W = x->value.dim(1);
    Tensor v({H, W - 1});
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx + 1 < W; ++xx) v.at(y, xx) = x->value.at(y, xx + 1) - x->value.at(y, xx);
    return make_node(std::move(v), {x}, [H, W](Node& n) {
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx + 1 < W; ++xx) {
                n.parents[0]->grad.at(y, xx + 1) += n.grad.at(y, xx);
                n.parents[0]->grad.at(y, xx) -= n.grad.at(y, xx);
            }
    });
}

Var diff_y(const Var& x) {
    if (x->value.ndim() != 2) throw InvalidInputError("diff_y expects {H,W}");
    const int H = x->value.dim(0), W = x->value.dim(1);
    Tensor v({H - 1, W});
    for (int y = 0; y + 1 < H; ++y)
        for (int xx = 0; xx < W; ++xx) v.at(y, xx) = x->value.at(y + 1, xx) - x->value.at(y, xx);
    return make_node(std::move(v), {x}, [H, W](Node& n) {
        for (int y = 0; y + 1 < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                n.parents[0]->grad.at(y + 1, xx) += n.grad.at(y, xx);
                n.parents[0]->grad.at(y, xx) -= n.grad.at(y, xx);
            }
    });
}

Var snap_to_integers(const Var& x, double eps) {
    Tensor v = x->value;
    for (std::int64_t i = 0; i < v.numel(); ++i) {
        const double r = std::nearbyint(v[i]);
        if (std::abs(v[i] - r) < eps) v[i] = r;
    }
    return make_node(std::move(v), {x}, [](Node& n) { accum(n.parents[0]->grad, n.grad); });
}

// ---------------------------------------------------------- rotation helpers

Var cross_matrix(const Var& phi) {
    if (phi->value.numel() != 3) throw InvalidInputError("cross_matrix expects 3-vector");
    const double x = phi->value[0], y = phi->value[1], z = phi->value[2];
    Tensor v({3, 3});
    v.at(0, 1) = -z;
    v.at(0, 2) = y;
    v.at(1, 0) = z;
    v.at(1, 2) = -x;
    v.at(2, 0) = -y;
    v.at(2, 1) = x;
    return make_node(std::move(v), {phi}, [](Node& n) {
        auto& p = *n.parents[0];
        p.grad[0] += n.grad.at(2, 1) - n.grad.at(1, 2);
        p.grad[1] += n.grad.at(0, 2) - n.grad.at(2, 0);
        p.grad[2] += n.grad.at(1, 0) - n.grad.at(0, 1);
    });
}

namespace {
// a(s) = sin(sqrt(s))/sqrt(s); b(s) = (1 - cos(sqrt(s)))/s. Both analytic in s.
constexpr double kSeriesThreshold = 1e-8;

double coeff_a(double s) {
    if (s < kSeriesThreshold) return 1.0 - s / 6.0 + s * s / 120.0;
    const double th = std::sqrt(s);
    return std::sin(th) / th;
}
double coeff_a_ds(double s) {
    if (s < kSeriesThreshold) return -1.0 / 6.0 + s / 60.0;
    const double th = std::sqrt(s);
    return (std::cos(th) * th - std::sin(th)) / (2.0 * th * th * th);
}
double coeff_b(double s) {
    if (s < kSeriesThreshold) return 0.5 - s / 24.0 + s * s / 720.0;
    return (1.0 - std::cos(std::sqrt(s))) / s;
}
double coeff_b_ds(double s) {
    if (s < kSeriesThreshold) return -1.0 / 24.0 + s / 360.0;
    const double th = std::sqrt(s);
    return (th * std::sin(th) / 2.0 - (1.0 - std::cos(th))) / (s * s);
}
} // namespace

Var rot_coeff_a(const Var& s) {
    if (s->value.numel() != 1) throw InvalidInputError("rot_coeff_a expects scalar");
    Tensor v({1});
    v[0] = coeff_a(s->value[0]);
    return make_node(std::move(v), {s}, [](Node& n) {
        n.parents[0]->grad[0] += n.grad[0] * coeff_a_ds(n.parents[0]->value[0]);
    });
}

Var rot_coeff_b(const Var& s) {
    if (s->value.numel() != 1) throw InvalidInputError("rot_coeff_b expects scalar");
    Tensor v({1});
    v[0] = coeff_b(s->value[0]);
    return make_node(std::move(v), {s}, [](Node& n) {
        n.parents[0]->grad[0] += n.grad[0] * coeff_b_ds(n.parents[0]->value[0]);
    });
}

} // namespace adaptsfm::ad
