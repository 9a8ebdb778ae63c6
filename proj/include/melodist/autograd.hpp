#pragma once

// Tape-based reverse-mode autodiff over Eigen double matrices. The graph is
// rebuilt every step; parameters are long-lived nodes reused across graphs.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "melodist/common.hpp"

namespace melodist::ag {

using Mat = Eigen::MatrixXd;

struct Node {
    Mat value;
    Mat grad;  // allocated lazily on backward
    bool requires_grad = false;
    std::string name;  // set for parameters; empty for intermediates
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.rows() != value.rows() || grad.cols() != value.cols())
            grad = Mat::Zero(value.rows(), value.cols());
    }
};

using Var = std::shared_ptr<Node>;

inline Var constant(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

inline Var scalar(double v) { return constant(Mat::Constant(1, 1, v)); }

inline Var param(Mat v, std::string name = {}) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->name = std::move(name);
    n->ensure_grad();
    return n;
}

inline Var make_op(Mat value, std::vector<Var> parents, std::function<void(Node&)> bwd) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    bool any = false;
    for (const auto& p : n->parents) any = any || p->requires_grad;
    n->requires_grad = any;
    if (any) n->backward_fn = std::move(bwd);
    return n;
}

// ---- arithmetic ----

inline Var add(const Var& a, const Var& b) {
    return make_op(a->value + b->value, {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) { n.parents[0]->ensure_grad(); n.parents[0]->grad += n.grad; }
        if (n.parents[1]->requires_grad) { n.parents[1]->ensure_grad(); n.parents[1]->grad += n.grad; }
    });
}

inline Var sub(const Var& a, const Var& b) {
    return make_op(a->value - b->value, {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) { n.parents[0]->ensure_grad(); n.parents[0]->grad += n.grad; }
        if (n.parents[1]->requires_grad) { n.parents[1]->ensure_grad(); n.parents[1]->grad -= n.grad; }
    });
}

inline Var scale(const Var& a, double s) {
    return make_op(a->value * s, {a}, [s](Node& n) {
        if (n.parents[0]->requires_grad) { n.parents[0]->ensure_grad(); n.parents[0]->grad += s * n.grad; }
    });
}

inline Var cmul(const Var& a, const Var& b) {
    return make_op(a->value.cwiseProduct(b->value), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad += n.grad.cwiseProduct(n.parents[1]->value);
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad += n.grad.cwiseProduct(n.parents[0]->value);
        }
    });
}

inline Var square(const Var& a) { return cmul(a, a); }

inline Var matmul(const Var& a, const Var& b) {
    return make_op(a->value * b->value, {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad += n.grad * n.parents[1]->value.transpose();
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad += n.parents[0]->value.transpose() * n.grad;
        }
    });
}

// a * b^T, for attention scores.
inline Var matmul_nt(const Var& a, const Var& b) {
    return make_op(a->value * b->value.transpose(), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad += n.grad * n.parents[1]->value;
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad += n.grad.transpose() * n.parents[0]->value;
        }
    });
}

// x (N x d) + b (1 x d)
inline Var add_rowvec(const Var& x, const Var& b) {
    Mat v = x->value;
    v.rowwise() += Eigen::RowVectorXd(b->value.row(0));
    return make_op(std::move(v), {x, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) { n.parents[0]->ensure_grad(); n.parents[0]->grad += n.grad; }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad.row(0) += n.grad.colwise().sum();
        }
    });
}

// ---- nonlinearities ----

inline Var relu(const Var& a) {
    return make_op(a->value.cwiseMax(0.0), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad += n.grad.cwiseProduct(
            (n.parents[0]->value.array() > 0.0).cast<double>().matrix());
    });
}

inline Var gelu(const Var& a) {
    // tanh approximation
    const double c = std::sqrt(2.0 / M_PI);
    Mat x = a->value;
    Mat inner = (c * (x.array() + 0.044715 * x.array().cube())).matrix();
    Mat t = inner.array().tanh().matrix();
    Mat out = (0.5 * x.array() * (1.0 + t.array())).matrix();
    return make_op(out, {a}, [c, t](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        auto x = n.parents[0]->value.array();
        auto th = t.array();
        auto dinner = c * (1.0 + 3.0 * 0.044715 * x.square());
        auto d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th.square()) * dinner;
        n.parents[0]->grad += n.grad.cwiseProduct(d.matrix());
    });
}

inline Var tanh_op(const Var& a) {
    Mat t = a->value.array().tanh().matrix();
    return make_op(t, {a}, [t](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad += n.grad.cwiseProduct((1.0 - t.array().square()).matrix());
    });
}

inline Var abs_op(const Var& a) {
    return make_op(a->value.cwiseAbs(), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad += n.grad.cwiseProduct(
            n.parents[0]->value.array().sign().matrix());
    });
}

// log(x + eps)
inline Var log_eps(const Var& a, double eps = 1e-5) {
    return make_op((a->value.array() + eps).log().matrix(), {a}, [eps](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad += n.grad.cwiseQuotient((n.parents[0]->value.array() + eps).matrix());
    });
}

// sqrt(re^2 + im^2 + eps), fused magnitude for spectral losses.
inline Var spectral_magnitude(const Var& re, const Var& im, double eps = 1e-9) {
    Mat mag = (re->value.array().square() + im->value.array().square() + eps).sqrt().matrix();
    return make_op(mag, {re, im}, [mag](Node& n) {
        Mat g = n.grad.cwiseQuotient(mag);
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad += g.cwiseProduct(n.parents[0]->value);
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad += g.cwiseProduct(n.parents[1]->value);
        }
    });
}

// ---- reductions ----

inline Var mean_all(const Var& a) {
    double m = a->value.mean();
    double inv = 1.0 / double(a->value.size());
    return make_op(Mat::Constant(1, 1, m), {a}, [inv](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad.array() += n.grad(0, 0) * inv;
    });
}

inline Var sum_all(const Var& a) {
    return make_op(Mat::Constant(1, 1, a->value.sum()), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad.array() += n.grad(0, 0);
    });
}

// ---- shape ops ----

inline Var cols(const Var& a, int start, int n) {
    return make_op(a->value.middleCols(start, n), {a}, [start, n](Node& nn) {
        if (!nn.parents[0]->requires_grad) return;
        nn.parents[0]->ensure_grad();
        nn.parents[0]->grad.middleCols(start, n) += nn.grad;
    });
}

inline Var rows(const Var& a, int start, int n) {
    return make_op(a->value.middleRows(start, n), {a}, [start, n](Node& nn) {
        if (!nn.parents[0]->requires_grad) return;
        nn.parents[0]->ensure_grad();
        nn.parents[0]->grad.middleRows(start, n) += nn.grad;
    });
}

inline Var concat_cols(const std::vector<Var>& xs) {
    int rows_n = int(xs.front()->value.rows());
    int total = 0;
    for (const auto& x : xs) total += int(x->value.cols());
    Mat v(rows_n, total);
    int off = 0;
    for (const auto& x : xs) {
        v.middleCols(off, int(x->value.cols())) = x->value;
        off += int(x->value.cols());
    }
    return make_op(std::move(v), xs, [](Node& n) {
        int off = 0;
        for (auto& p : n.parents) {
            int c = int(p->value.cols());
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad += n.grad.middleCols(off, c);
            }
            off += c;
        }
    });
}

inline Var concat_rows(const std::vector<Var>& xs) {
    int cols_n = int(xs.front()->value.cols());
    int total = 0;
    for (const auto& x : xs) total += int(x->value.rows());
    Mat v(total, cols_n);
    int off = 0;
    for (const auto& x : xs) {
        v.middleRows(off, int(x->value.rows())) = x->value;
        off += int(x->value.rows());
    }
    return make_op(std::move(v), xs, [](Node& n) {
        int off = 0;
        for (auto& p : n.parents) {
            int r = int(p->value.rows());
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad += n.grad.middleRows(off, r);
            }
            off += r;
        }
    });
}

// Groups consecutive runs of `group` rows into single rows:
// (G*group x d) -> (G x group*d), run-major.
inline Var group_rows(const Var& a, int group) {
    int d = int(a->value.cols());
    int g = int(a->value.rows()) / group;
    Mat v(g, group * d);
    for (int i = 0; i < g; ++i)
        for (int j = 0; j < group; ++j)
            v.block(i, j * d, 1, d) = a->value.row(i * group + j);
    return make_op(std::move(v), {a}, [group, d, g](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        for (int i = 0; i < g; ++i)
            for (int j = 0; j < group; ++j)
                n.parents[0]->grad.row(i * group + j) += n.grad.block(i, j * d, 1, d);
    });
}

// Repeats every row `times` times: (N x d) -> (N*times x d).
inline Var repeat_rows(const Var& a, int times) {
    int N = int(a->value.rows()), d = int(a->value.cols());
    Mat v(N * times, d);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < times; ++j) v.row(i * times + j) = a->value.row(i);
    return make_op(std::move(v), {a}, [times, N](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < times; ++j)
                n.parents[0]->grad.row(i) += n.grad.row(i * times + j);
    });
}

// Within each consecutive group of `group` rows, shifts rows down by one and
// places `start` (1 x d) in the first slot. Used for previous-token inputs.
inline Var shift_rows_in_groups(const Var& x, const Var& start, int group) {
    int N = int(x->value.rows()), d = int(x->value.cols());
    int G = N / group;
    Mat v(N, d);
    for (int g = 0; g < G; ++g) {
        v.row(g * group) = start->value.row(0);
        for (int k = 1; k < group; ++k) v.row(g * group + k) = x->value.row(g * group + k - 1);
    }
    return make_op(std::move(v), {x, start}, [group, G](Node& n) {
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            for (int g = 0; g < G; ++g) n.parents[1]->grad.row(0) += n.grad.row(g * group);
        }
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            for (int g = 0; g < G; ++g)
                for (int k = 1; k < group; ++k)
                    n.parents[0]->grad.row(g * group + k - 1) += n.grad.row(g * group + k);
        }
    });
}

// Row-wise selector: out row i = a row i when mapping[i] < 0, else b row mapping[i].
inline Var select_rows(const Var& a, const Var& b, const std::vector<int>& mapping) {
    Mat v(mapping.size(), a->value.cols());
    for (std::size_t i = 0; i < mapping.size(); ++i)
        v.row(Eigen::Index(i)) =
            mapping[i] < 0 ? a->value.row(Eigen::Index(i)) : b->value.row(mapping[i]);
    return make_op(std::move(v), {a, b}, [mapping](Node& n) {
        for (std::size_t i = 0; i < mapping.size(); ++i) {
            if (mapping[i] < 0) {
                if (n.parents[0]->requires_grad) {
                    n.parents[0]->ensure_grad();
                    n.parents[0]->grad.row(Eigen::Index(i)) += n.grad.row(Eigen::Index(i));
                }
            } else if (n.parents[1]->requires_grad) {
                n.parents[1]->ensure_grad();
                n.parents[1]->grad.row(mapping[i]) += n.grad.row(Eigen::Index(i));
            }
        }
    });
}

// Row gather (embedding lookup). Backward is scatter-add into the table.
inline Var gather_rows(const Var& table, const std::vector<int>& ids) {
    Mat v(ids.size(), table->value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) v.row(Eigen::Index(i)) = table->value.row(ids[i]);
    return make_op(std::move(v), {table}, [ids](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i)
            n.parents[0]->grad.row(ids[i]) += n.grad.row(Eigen::Index(i));
    });
}

// ---- fused NN ops ----

// Row-wise softmax with an additive mask (0 for allowed, -inf-ish for blocked).
inline Var softmax_rows(const Var& logits, const Mat& add_mask) {
    Mat z = logits->value + add_mask;
    Mat p(z.rows(), z.cols());
    for (int i = 0; i < z.rows(); ++i) {
        double m = z.row(i).maxCoeff();
        Eigen::ArrayXd e = (z.row(i).array() - m).exp();
        p.row(i) = (e / e.sum()).matrix();
    }
    return make_op(p, {logits}, [p](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        for (int i = 0; i < p.rows(); ++i) {
            double dot = n.grad.row(i).dot(p.row(i));
            n.parents[0]->grad.row(i) +=
                (p.row(i).array() * (n.grad.row(i).array() - dot)).matrix();
        }
    });
}

inline Var softmax_rows(const Var& logits) {
    return softmax_rows(logits, Mat::Zero(logits->value.rows(), logits->value.cols()));
}

// Row-wise layer norm with gain/bias (1 x d).
inline Var layernorm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
    int N = int(x->value.rows()), d = int(x->value.cols());
    Mat xhat(N, d);
    Eigen::VectorXd inv_std(N);
    for (int i = 0; i < N; ++i) {
        double mu = x->value.row(i).mean();
        double var = (x->value.row(i).array() - mu).square().mean();
        double is = 1.0 / std::sqrt(var + eps);
        inv_std(i) = is;
        xhat.row(i) = ((x->value.row(i).array() - mu) * is).matrix();
    }
    Mat out = xhat;
    for (int i = 0; i < N; ++i)
        out.row(i) = (xhat.row(i).array() * gain->value.row(0).array() + bias->value.row(0).array()).matrix();
    return make_op(out, {x, gain, bias}, [xhat, inv_std, d](Node& n) {
        const Var& x = n.parents[0];
        const Var& gain = n.parents[1];
        const Var& bias = n.parents[2];
        if (gain->requires_grad) {
            gain->ensure_grad();
            gain->grad.row(0) += (n.grad.array() * xhat.array()).colwise().sum().matrix();
        }
        if (bias->requires_grad) {
            bias->ensure_grad();
            bias->grad.row(0) += n.grad.colwise().sum();
        }
        if (x->requires_grad) {
            x->ensure_grad();
            for (int i = 0; i < xhat.rows(); ++i) {
                Eigen::Array<double, 1, Eigen::Dynamic> dxhat =
                    n.grad.row(i).array() * gain->value.row(0).array();
                double m1 = dxhat.mean();
                double m2 = (dxhat * xhat.row(i).array()).mean();
                x->grad.row(i) +=
                    (inv_std(i) * (dxhat - m1 - xhat.row(i).array() * m2)).matrix();
            }
        }
    });
}

// Row-wise L2 normalization: y_i = x_i / max(||x_i||, eps).
inline Var l2_normalize_rows(const Var& x, double eps = 1e-12) {
    Mat out = x->value;
    Eigen::VectorXd inv_norm(out.rows());
    for (int i = 0; i < out.rows(); ++i) {
        double nrm = std::max(out.row(i).norm(), eps);
        inv_norm(i) = 1.0 / nrm;
        out.row(i) *= inv_norm(i);
    }
    Mat y = out;
    return make_op(std::move(out), {x}, [y, inv_norm](Node& n) {
        Var x_ = n.parents[0];
        if (!x_->requires_grad) return;
        x_->ensure_grad();
        for (int i = 0; i < y.rows(); ++i) {
            double dot = n.grad.row(i).dot(y.row(i));
            x_->grad.row(i) += inv_norm(i) * (n.grad.row(i) - dot * y.row(i));
        }
    });
}

// Mean cross-entropy over rows where weight > 0; targets index columns of logits.
inline Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets,
                              const std::vector<double>& weights) {
    int N = int(logits->value.rows());
    if (int(targets.size()) != N || int(weights.size()) != N)
        throw ValidationError("cross_entropy_rows: size mismatch");
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    if (wsum <= 0.0) throw ValidationError("cross_entropy_rows: all rows masked out");
    Mat p(N, logits->value.cols());
    double loss = 0.0;
    for (int i = 0; i < N; ++i) {
        double m = logits->value.row(i).maxCoeff();
        Eigen::ArrayXd e = (logits->value.row(i).array() - m).exp();
        double Z = e.sum();
        p.row(i) = (e / Z).matrix();
        if (weights[size_t(i)] > 0.0)
            loss -= weights[size_t(i)] * (logits->value(i, targets[size_t(i)]) - m - std::log(Z));
    }
    loss /= wsum;
    return make_op(Mat::Constant(1, 1, loss), {logits}, [p, targets, weights, wsum](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        double g = n.grad(0, 0) / wsum;
        for (int i = 0; i < p.rows(); ++i) {
            if (weights[size_t(i)] <= 0.0) continue;
            n.parents[0]->grad.row(i) += g * weights[size_t(i)] * p.row(i);
            n.parents[0]->grad(i, targets[size_t(i)]) -= g * weights[size_t(i)];
        }
    });
}

// ---- conv support ----

// im2col for 1D conv over a (L x C) signal: output row t covers input rows
// [t*stride - pad_left, t*stride - pad_left + k), zero outside. Shape (out_len x k*C).
inline Var im2col(const Var& x, int k, int stride, int pad_left, int out_len) {
    int C = int(x->value.cols());
    int L = int(x->value.rows());
    Mat v = Mat::Zero(out_len, k * C);
    for (int t = 0; t < out_len; ++t) {
        int base = t * stride - pad_left;
        for (int j = 0; j < k; ++j) {
            int src = base + j;
            if (src >= 0 && src < L) v.block(t, j * C, 1, C) = x->value.row(src);
        }
    }
    return make_op(std::move(v), {x}, [k, stride, pad_left, out_len, C, L](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        for (int t = 0; t < out_len; ++t) {
            int base = t * stride - pad_left;
            for (int j = 0; j < k; ++j) {
                int src = base + j;
                if (src >= 0 && src < L)
                    n.parents[0]->grad.row(src) += n.grad.block(t, j * C, 1, C);
            }
        }
    });
}

// Inserts (factor-1) zero rows after each row: (N x d) -> ((N-1)*factor+1 x d).
inline Var upsample_zeros(const Var& x, int factor) {
    int N = int(x->value.rows()), d = int(x->value.cols());
    int M = N == 0 ? 0 : (N - 1) * factor + 1;
    Mat v = Mat::Zero(M, d);
    for (int i = 0; i < N; ++i) v.row(i * factor) = x->value.row(i);
    return make_op(std::move(v), {x}, [factor, N](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        for (int i = 0; i < N; ++i) n.parents[0]->grad.row(i) += n.grad.row(i * factor);
    });
}

// ---- backward driver ----

inline void backward(const Var& loss) {
    if (loss->value.size() != 1) throw ValidationError("backward: loss must be scalar");
    // topo order via iterative DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    seen.insert(loss.get());
    while (!stack.empty()) {
        Node* node = stack.back().first;
        std::size_t idx = stack.back().second;
        if (idx < node->parents.size()) {
            stack.back().second = idx + 1;
            Node* p = node->parents[idx].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->ensure_grad();
    loss->grad(0, 0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---- optimizer ----

struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    double clip_norm = 1.0;  // global grad-norm clip; <= 0 disables
    std::int64_t step_count = 0;
    std::vector<Var> params;
    std::vector<Mat> m, v;

    explicit Adam(std::vector<Var> ps, double lr_ = 1e-3) : lr(lr_), params(std::move(ps)) {
        for (const auto& p : params) {
            m.emplace_back(Mat::Zero(p->value.rows(), p->value.cols()));
            v.emplace_back(Mat::Zero(p->value.rows(), p->value.cols()));
        }
    }

    void zero_grad() {
        for (auto& p : params) {
            p->ensure_grad();
            p->grad.setZero();
        }
    }

    void step() {
        ++step_count;
        if (clip_norm > 0.0) {
            double sq = 0.0;
            for (auto& p : params) { p->ensure_grad(); sq += p->grad.squaredNorm(); }
            double norm = std::sqrt(sq);
            if (norm > clip_norm) {
                double s = clip_norm / norm;
                for (auto& p : params) p->grad *= s;
            }
        }
        double bc1 = 1.0 - std::pow(beta1, double(step_count));
        double bc2 = 1.0 - std::pow(beta2, double(step_count));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            p->ensure_grad();
            m[i] = beta1 * m[i] + (1.0 - beta1) * p->grad;
            v[i] = beta2 * v[i] + (1.0 - beta2) * p->grad.cwiseProduct(p->grad);
            Mat mhat = m[i] / bc1;
            Mat vhat = v[i] / bc2;
            p->value -= lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps).matrix());
        }
    }
};

// ---- init helpers ----

inline Mat randn(int rows, int cols, Rng& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat m(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) m(i, j) = dist(rng);
    return m;
}

}  // namespace melodist::ag
