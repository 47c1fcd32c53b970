#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <unordered_set>
#include <vector>

#include "parallel.hpp"
#include "tensor.hpp"

// Minimal tape-free reverse-mode autodiff over dense f64 tensors. Each op
// records its parents and a backward closure; backward() walks the graph in
// reverse topological order.
namespace instadrive::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;
    bool requires_grad = false;

    Tensor& g() {
        if (grad.size() != value.size()) grad = Tensor(value.shape());
        return grad;
    }
};

inline Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return n;
}

inline Var parameter(Tensor t) {
    auto n = constant(std::move(t));
    n->requires_grad = true;
    return n;
}

inline Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p && p->requires_grad; });
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(fn);
    }
    return n;
}

inline bool needs(const Var& v) { return v && v->requires_grad; }

// Seeds d(root)/d(root) = 1 for a scalar root. Gradients of every node in
// the graph are reset first, so leaves hold exactly this pass's gradient.
inline void backward(const Var& root) {
    if (root->value.size() != 1) throw ShapeError("backward() needs a scalar root");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p && p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) n->grad = Tensor(n->value.shape());
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

namespace detail {
inline void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(t.shape()));
}
}  // namespace detail

// Y = X W (+ b). X: (n, k), W: (k, m), b: (m) or null.
inline Var linear(const Var& x, const Var& w, const Var& b = nullptr) {
    detail::require_rank2(x->value, "linear");
    detail::require_rank2(w->value, "linear");
    const std::size_t n = x->value.rows(), k = x->value.cols(), m = w->value.cols();
    if (w->value.rows() != k)
        throw ShapeError("linear: input " + shape_str(x->value.shape()) + " vs weight " + shape_str(w->value.shape()));
    if (b && b->value.size() != m) throw ShapeError("linear: bias size mismatch");
    Tensor y({n, m});
    const double* X = x->value.ptr();
    const double* W = w->value.ptr();
    double* Y = y.ptr();
    const double* B = b ? b->value.ptr() : nullptr;
    const unsigned threads = n * k * m < (1u << 16) ? 1u : thread_budget();
    // Rows are independent, so any thread count gives identical results.
    parallel_for(n, [=](std::size_t i) {
        double* yr = Y + i * m;
        if (B) std::copy_n(B, m, yr);
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double a = X[i * k + kk];
            const double* wr = W + kk * m;
            for (std::size_t j = 0; j < m; ++j) yr[j] += a * wr[j];
        }
    }, threads);
    return make_node(std::move(y), {x, w, b}, [n, k, m](Node& self) {
        const Var &x = self.parents[0], &w = self.parents[1], &b = self.parents[2];
        const double* dY = self.grad.ptr();
        if (needs(x)) {
            double* dX = x->g().ptr();
            const double* W = w->value.ptr();
            parallel_for(n, [=](std::size_t i) {
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double s = 0;
                    const double* wr = W + kk * m;
                    const double* dy = dY + i * m;
                    for (std::size_t j = 0; j < m; ++j) s += dy[j] * wr[j];
                    dX[i * k + kk] += s;
                }
            }, n * k * m < (1u << 16) ? 1u : thread_budget());
        }
        if (needs(w)) {
            double* dW = w->g().ptr();
            const double* X = x->value.ptr();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const double a = X[i * k + kk];
                    double* dw = dW + kk * m;
                    const double* dy = dY + i * m;
                    for (std::size_t j = 0; j < m; ++j) dw[j] += a * dy[j];
                }
        }
        if (needs(b)) {
            double* dB = b->g().ptr();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) dB[j] += dY[i * m + j];
        }
    });
}

inline Var add(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value))
        throw ShapeError("add: " + shape_str(a->value.shape()) + " vs " + shape_str(b->value.shape()));
    Tensor y = a->value;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b->value[i];
    return make_node(std::move(y), {a, b}, [](Node& self) {
        for (int p = 0; p < 2; ++p) {
            const Var& v = self.parents[p];
            if (!needs(v)) continue;
            Tensor& g = v->g();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

inline Var scale(const Var& a, double s) {
    Tensor y = a->value;
    for (double& v : y.data()) v *= s;
    return make_node(std::move(y), {a}, [s](Node& self) {
        Tensor& g = self.parents[0]->g();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

// Y[r] = X[r] + E[group[r]]. X: (n, d), E: (g, d).
inline Var add_grouped_rows(const Var& x, const Var& e, std::vector<std::size_t> group) {
    detail::require_rank2(x->value, "add_grouped_rows");
    const std::size_t n = x->value.rows(), d = x->value.cols();
    if (group.size() != n || e->value.cols() != d) throw ShapeError("add_grouped_rows: shape mismatch");
    Tensor y = x->value;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) y(r, j) += e->value(group[r], j);
    return make_node(std::move(y), {x, e}, [group = std::move(group), n, d](Node& self) {
        if (needs(self.parents[0])) {
            Tensor& g = self.parents[0]->g();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (needs(self.parents[1])) {
            Tensor& g = self.parents[1]->g();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < d; ++j) g(group[r], j) += self.grad(r, j);
        }
    });
}

// Y[r] = X[r] * (1 + scale[group[r]]) + shift[group[r]].
inline Var modulate(const Var& x, const Var& shift, const Var& scl, std::vector<std::size_t> group) {
    detail::require_rank2(x->value, "modulate");
    const std::size_t n = x->value.rows(), d = x->value.cols();
    if (group.size() != n || shift->value.cols() != d || scl->value.cols() != d)
        throw ShapeError("modulate: shape mismatch");
    Tensor y({n, d});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j)
            y(r, j) = x->value(r, j) * (1.0 + scl->value(group[r], j)) + shift->value(group[r], j);
    return make_node(std::move(y), {x, shift, scl}, [group = std::move(group), n, d](Node& self) {
        const Var &x = self.parents[0], &sh = self.parents[1], &sc = self.parents[2];
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < d; ++j) {
                const double gy = self.grad(r, j);
                const std::size_t gi = group[r];
                if (needs(x)) x->g()(r, j) += gy * (1.0 + sc->value(gi, j));
                if (needs(sh)) sh->g()(gi, j) += gy;
                if (needs(sc)) sc->g()(gi, j) += gy * x->value(r, j);
            }
    });
}

// tanh approximation of GELU.
inline Var gelu(const Var& x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    Tensor y = x->value;
    for (double& v : y.data()) {
        const double u = c * (v + 0.044715 * v * v * v);
        v = 0.5 * v * (1.0 + std::tanh(u));
    }
    return make_node(std::move(y), {x}, [](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        Tensor& g = self.parents[0]->g();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xv[i];
            const double u = c * (v + 0.044715 * v * v * v);
            const double t = std::tanh(u);
            const double du = c * (1.0 + 3.0 * 0.044715 * v * v);
            g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
        }
    });
}

inline Var silu(const Var& x) {
    Tensor y = x->value;
    for (double& v : y.data()) v = v / (1.0 + std::exp(-v));
    return make_node(std::move(y), {x}, [](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        Tensor& g = self.parents[0]->g();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-xv[i]));
            g[i] += self.grad[i] * (s + xv[i] * s * (1.0 - s));
        }
    });
}

// Row-wise layer norm over the last axis with optional affine gamma/beta.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6) {
    detail::require_rank2(x->value, "layer_norm");
    const std::size_t n = x->value.rows(), d = x->value.cols();
    if ((gamma && gamma->value.size() != d) || (beta && beta->value.size() != d))
        throw ShapeError("layer_norm: affine parameter size mismatch");
    Tensor xhat({n, d});
    std::vector<double> inv_std(n);
    for (std::size_t r = 0; r < n; ++r) {
        double mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += x->value(r, j);
        mean /= double(d);
        double var = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x->value(r, j) - mean;
            var += c * c;
        }
        var /= double(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) xhat(r, j) = (x->value(r, j) - mean) * inv_std[r];
    }
    Tensor y = xhat;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) {
            if (gamma) y(r, j) *= gamma->value[j];
            if (beta) y(r, j) += beta->value[j];
        }
    return make_node(std::move(y), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), n, d](Node& self) {
        const Var &x = self.parents[0], &gamma = self.parents[1], &beta = self.parents[2];
        std::vector<double> gx(d);
        for (std::size_t r = 0; r < n; ++r) {
            double sum_g = 0, sum_gx = 0;
            for (std::size_t j = 0; j < d; ++j) {
                const double gy = self.grad(r, j);
                if (needs(gamma)) gamma->g()[j] += gy * xhat(r, j);
                if (needs(beta)) beta->g()[j] += gy;
                gx[j] = gamma ? gy * gamma->value[j] : gy;
                sum_g += gx[j];
                sum_gx += gx[j] * xhat(r, j);
            }
            if (!needs(x)) continue;
            Tensor& dx = x->g();
            for (std::size_t j = 0; j < d; ++j)
                dx(r, j) += inv_std[r] / double(d) * (double(d) * gx[j] - sum_g - xhat(r, j) * sum_gx);
        }
    });
}

// One attention group: these query rows attend over these key rows.
struct AttentionGroup {
    std::vector<std::size_t> queries;
    std::vector<std::size_t> keys;
};
using AttentionLayout = std::vector<AttentionGroup>;

// softmax(Q K^T / sqrt(d)) V within each group. Query rows with an empty key
// set, or not covered by any group, produce zero rows.
inline Var attention(const Var& q, const Var& k, const Var& v, std::shared_ptr<const AttentionLayout> layout,
                     std::vector<Tensor>* weights_out = nullptr) {
    detail::require_rank2(q->value, "attention");
    detail::require_rank2(k->value, "attention");
    detail::require_rank2(v->value, "attention");
    const std::size_t d = q->value.cols(), dv = v->value.cols();
    if (k->value.cols() != d || k->value.rows() != v->value.rows())
        throw ShapeError("attention: Q " + shape_str(q->value.shape()) + ", K " + shape_str(k->value.shape()) +
                         ", V " + shape_str(v->value.shape()));
    const double sc = 1.0 / std::sqrt(double(d));
    Tensor out({q->value.rows(), dv});
    std::vector<Tensor> probs;
    probs.reserve(layout->size());
    for (const AttentionGroup& grp : *layout) {
        const std::size_t nq = grp.queries.size(), nk = grp.keys.size();
        Tensor p({nq, nk});
        for (std::size_t a = 0; a < nq && nk > 0; ++a) {
            const double* qr = q->value.ptr() + grp.queries[a] * d;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t b = 0; b < nk; ++b) {
                const double* kr = k->value.ptr() + grp.keys[b] * d;
                double s = 0;
                for (std::size_t j = 0; j < d; ++j) s += qr[j] * kr[j];
                p(a, b) = s * sc;
                mx = std::max(mx, p(a, b));
            }
            double z = 0;
            for (std::size_t b = 0; b < nk; ++b) z += (p(a, b) = std::exp(p(a, b) - mx));
            double* orow = out.ptr() + grp.queries[a] * dv;
            for (std::size_t b = 0; b < nk; ++b) {
                p(a, b) /= z;
                const double* vr = v->value.ptr() + grp.keys[b] * dv;
                for (std::size_t j = 0; j < dv; ++j) orow[j] += p(a, b) * vr[j];
            }
        }
        probs.push_back(std::move(p));
    }
    if (weights_out) *weights_out = probs;
    return make_node(std::move(out), {q, k, v}, [layout, probs = std::move(probs), d, dv, sc](Node& self) {
        const Var &q = self.parents[0], &k = self.parents[1], &v = self.parents[2];
        std::vector<double> dp;
        for (std::size_t gi = 0; gi < layout->size(); ++gi) {
            const AttentionGroup& grp = (*layout)[gi];
            const Tensor& p = probs[gi];
            const std::size_t nq = grp.queries.size(), nk = grp.keys.size();
            if (nk == 0) continue;
            dp.assign(nk, 0.0);
            for (std::size_t a = 0; a < nq; ++a) {
                const double* go = self.grad.ptr() + grp.queries[a] * dv;
                double dot_pp = 0;
                for (std::size_t b = 0; b < nk; ++b) {
                    const double* vr = v->value.ptr() + grp.keys[b] * dv;
                    double s = 0;
                    for (std::size_t j = 0; j < dv; ++j) s += go[j] * vr[j];
                    dp[b] = s;
                    dot_pp += s * p(a, b);
                    if (needs(v)) {
                        double* gv = v->g().ptr() + grp.keys[b] * dv;
                        for (std::size_t j = 0; j < dv; ++j) gv[j] += p(a, b) * go[j];
                    }
                }
                const double* qr = q->value.ptr() + grp.queries[a] * d;
                for (std::size_t b = 0; b < nk; ++b) {
                    const double ds = p(a, b) * (dp[b] - dot_pp) * sc;
                    if (ds == 0.0) continue;
                    const double* kr = k->value.ptr() + grp.keys[b] * d;
                    if (needs(q)) {
                        double* gq = q->g().ptr() + grp.queries[a] * d;
                        for (std::size_t j = 0; j < d; ++j) gq[j] += ds * kr[j];
                    }
                    if (needs(k)) {
                        double* gk = k->g().ptr() + grp.keys[b] * d;
                        for (std::size_t j = 0; j < d; ++j) gk[j] += ds * qr[j];
                    }
                }
            }
        }
    });
}

// out[i] = x[index[i]] with the given output shape.
inline Var gather(const Var& x, std::shared_ptr<const std::vector<std::size_t>> index, std::vector<std::size_t> shape) {
    Tensor y(std::move(shape));
    if (index->size() != y.size()) throw ShapeError("gather: index size does not match output shape");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x->value[(*index)[i]];
    return make_node(std::move(y), {x}, [index](Node& self) {
        Tensor& g = self.parents[0]->g();
        for (std::size_t i = 0; i < index->size(); ++i) g[(*index)[i]] += self.grad[i];
    });
}

// sum(w * (pred - target)^2) / sum(w) with per-row weights.
inline Var weighted_mse(const Var& pred, const Tensor& target, std::vector<double> row_weight) {
    detail::require_rank2(pred->value, "weighted_mse");
    if (!pred->value.same_shape(target) || row_weight.size() != target.rows())
        throw ShapeError("weighted_mse: prediction " + shape_str(pred->value.shape()) + " vs target " +
                         shape_str(target.shape()));
    const std::size_t n = target.rows(), d = target.cols();
    double total_w = 0, s = 0;
    for (std::size_t r = 0; r < n; ++r) {
        total_w += row_weight[r] * double(d);
        for (std::size_t j = 0; j < d; ++j) {
            const double e = pred->value(r, j) - target(r, j);
            s += row_weight[r] * e * e;
        }
    }
    const double norm = total_w > 0 ? 1.0 / total_w : 0.0;
    Tensor y({1}, s * norm);
    return make_node(std::move(y), {pred}, [target, row_weight = std::move(row_weight), norm, n, d](Node& self) {
        Tensor& g = self.parents[0]->g();
        const double up = self.grad[0];
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < d; ++j)
                g(r, j) += up * 2.0 * row_weight[r] * norm * (self.parents[0]->value(r, j) - target(r, j));
    });
}

// sum(x * w) for a constant weight tensor; used to build scalar probes.
inline Var dot_const(const Var& x, const Tensor& w) {
    if (x->value.size() != w.size()) throw ShapeError("dot_const: size mismatch");
    double s = 0;
    for (std::size_t i = 0; i < w.size(); ++i) s += x->value[i] * w[i];
    return make_node(Tensor({1}, s), {x}, [w](Node& self) {
        Tensor& g = self.parents[0]->g();
        for (std::size_t i = 0; i < w.size(); ++i) g[i] += self.grad[0] * w[i];
    });
}

inline Var sum_squares(const Var& x) {
    double s = 0;
    for (double v : x->value.data()) s += v * v;
    return make_node(Tensor({1}, s), {x}, [](Node& self) {
        Tensor& g = self.parents[0]->g();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * 2.0 * self.parents[0]->value[i];
    });
}


}  // namespace instadrive::ad
