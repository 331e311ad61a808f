// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "loradrop/core/error.hpp"
#include "loradrop/core/tape.hpp"

namespace loradrop::core::ops {

namespace {

bool recording(std::initializer_list<const Tensor*> inputs) {
    if (!active_tape()) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

Tensor finish(const char* op, Shape shape, std::vector<double> values, bool record) {
    auto out = Tensor::from_vector(std::move(shape), std::move(values), record);
    check_finite(out, op);
    return out;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(t.shape()));
    }
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

inline double dot(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

// Applies fn(in_value, out_grad) -> in_grad contribution for elementwise unary ops.
template <class Grad>
void unary_backward(Tensor in, const Tensor& out, Grad grad_fn) {
    if (!out.has_grad() || !in.requires_grad()) return;
    auto g = out.grad();
    auto x = in.data();
    auto y = out.data();
    auto dx = in.mutable_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += grad_fn(x[i], y[i], g[i]);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    std::vector<double> c(m * n, 0.0);
    auto A = a.data();
    auto B = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) axpy(A[i * k + p], &B[p * n], &c[i * n], n);
    }
    const bool rec = recording({&a, &b});
    auto out = finish("matmul", {m, n}, std::move(c), rec);
    if (rec) {
        active_tape()->record("matmul", [a, b, out, m, k, n]() mutable {
            if (!out.has_grad()) return;
            auto dC = out.grad();
            auto A = a.data();
            auto B = b.data();
            if (a.requires_grad()) {
                auto dA = a.mutable_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) dA[i * k + p] += dot(&dC[i * n], &B[p * n], n);
            }
            if (b.requires_grad()) {
                auto dB = b.mutable_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) axpy(A[i * k + p], &dC[i * n], &dB[p * n], n);
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_rank("linear", w, 2);
    const std::size_t in = w.dim(1), outf = w.dim(0);
    if (x.cols() != in) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                             shape_str(w.shape()));
    }
    if (bias.defined() && (bias.size() != outf)) {
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                             shape_str(w.shape()));
    }
    const std::size_t rows = x.rows();
    std::vector<double> y(rows * outf);
    auto X = x.data();
    auto W = w.data();
    // Row-times-transposed-weight keeps the inner loop contiguous in the output.
    std::vector<double> wt(in * outf);
    for (std::size_t o = 0; o < outf; ++o)
        for (std::size_t p = 0; p < in; ++p) wt[p * outf + o] = W[o * in + p];
    for (std::size_t i = 0; i < rows; ++i) {
        double* yi = &y[i * outf];
        if (bias.defined()) std::copy_n(bias.data().data(), outf, yi);
        for (std::size_t p = 0; p < in; ++p) axpy(X[i * in + p], &wt[p * outf], yi, outf);
    }
    Shape shape = x.shape();
    shape.back() = outf;
    const bool rec = recording({&x, &w, &bias});
    auto out = finish("linear", std::move(shape), std::move(y), rec);
    if (rec) {
        active_tape()->record("linear", [x, w, bias, out, rows, in, outf]() mutable {
            if (!out.has_grad()) return;
            auto dY = out.grad();
            auto X = x.data();
            auto W = w.data();
            if (x.requires_grad()) {
                auto dX = x.mutable_grad();
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t o = 0; o < outf; ++o) axpy(dY[i * outf + o], &W[o * in], &dX[i * in], in);
            }
            if (w.requires_grad()) {
                auto dW = w.mutable_grad();
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t o = 0; o < outf; ++o) axpy(dY[i * outf + o], &X[i * in], &dW[o * in], in);
            }
            if (bias.defined() && bias.requires_grad()) {
                auto dB = bias.mutable_grad();
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t o = 0; o < outf; ++o) dB[o] += dY[i * outf + o];
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> c(a.size());
    auto A = a.data();
    auto B = b.data();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = A[i] + B[i];
    const bool rec = recording({&a, &b});
    auto out = finish("add", a.shape(), std::move(c), rec);
    if (rec) {
        active_tape()->record("add", [a, b, out]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            if (a.requires_grad()) axpy(1.0, g.data(), a.mutable_grad().data(), g.size());
            if (b.requires_grad()) axpy(1.0, g.data(), b.mutable_grad().data(), g.size());
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> c(a.size());
    auto A = a.data();
    auto B = b.data();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = A[i] - B[i];
    const bool rec = recording({&a, &b});
    auto out = finish("sub", a.shape(), std::move(c), rec);
    if (rec) {
        active_tape()->record("sub", [a, b, out]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            if (a.requires_grad()) axpy(1.0, g.data(), a.mutable_grad().data(), g.size());
            if (b.requires_grad()) axpy(-1.0, g.data(), b.mutable_grad().data(), g.size());
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> c(a.size());
    auto A = a.data();
    auto B = b.data();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = A[i] * B[i];
    const bool rec = recording({&a, &b});
    auto out = finish("mul", a.shape(), std::move(c), rec);
    if (rec) {
        active_tape()->record("mul", [a, b, out]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto A = a.data();
            auto B = b.data();
            if (a.requires_grad()) {
                auto dA = a.mutable_grad();
                for (std::size_t i = 0; i < g.size(); ++i) dA[i] += g[i] * B[i];
            }
            if (b.requires_grad()) {
                auto dB = b.mutable_grad();
                for (std::size_t i = 0; i < g.size(); ++i) dB[i] += g[i] * A[i];
            }
        });
    }
    return out;
}

Tensor mul_scalar(const Tensor& a, double s) {
    std::vector<double> c(a.size());
    auto A = a.data();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = A[i] * s;
    const bool rec = recording({&a});
    auto out = finish("mul_scalar", a.shape(), std::move(c), rec);
    if (rec) {
        active_tape()->record("mul_scalar", [a, out, s]() mutable {
            if (!out.has_grad() || !a.requires_grad()) return;
            auto g = out.grad();
            axpy(s, g.data(), a.mutable_grad().data(), g.size());
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    std::vector<double> y(x.size());
    auto X = x.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = X[i] > 0.0 ? X[i] : 0.0;
    const bool rec = recording({&x});
    auto out = finish("relu", x.shape(), std::move(y), rec);
    if (rec) {
        active_tape()->record("relu", [x, out]() {
            unary_backward(x, out, [](double xi, double, double g) { return xi > 0.0 ? g : 0.0; });
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    std::vector<double> y(x.size());
    auto X = x.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.5 * X[i] * (1.0 + std::erf(X[i] * inv_sqrt2));
    const bool rec = recording({&x});
    auto out = finish("gelu", x.shape(), std::move(y), rec);
    if (rec) {
        active_tape()->record("gelu", [x, out]() {
            unary_backward(x, out, [](double xi, double, double g) {
                const double cdf = 0.5 * (1.0 + std::erf(xi * inv_sqrt2));
                const double pdf = std::exp(-0.5 * xi * xi) * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
                return g * (cdf + xi * pdf);
            });
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    const int rank = static_cast<int>(x.rank());
    if (axis < -rank || axis >= rank) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(x.shape()));
    }
    if (axis != -1 && axis != rank - 1) {
        throw DimensionError("softmax: only the last axis is supported, got axis " + std::to_string(axis));
    }
    const std::size_t rows = x.rows(), n = x.cols();
    std::vector<double> y(x.size());
    auto X = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = &X[r * n];
        double* o = &y[r * n];
        const double mx = *std::max_element(in, in + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < n; ++j) o[j] /= z;
    }
    const bool rec = recording({&x});
    auto out = finish("softmax", x.shape(), std::move(y), rec);
    if (rec) {
        active_tape()->record("softmax", [x, out, rows, n]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            auto g = out.grad();
            auto Y = out.data();
            auto dX = x.mutable_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double s = dot(&g[r * n], &Y[r * n], n);
                for (std::size_t j = 0; j < n; ++j) dX[r * n + j] += Y[r * n + j] * (g[r * n + j] - s);
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t rows = x.rows(), n = x.cols();
    if (gamma.size() != n || beta.size() != n) {
        throw DimensionError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" +
                             shape_str(beta.shape()) + " do not match input " + shape_str(x.shape()));
    }
    std::vector<double> y(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> rstd(rows);
    auto X = x.data();
    auto G = gamma.data();
    auto Bt = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = &X[r * n];
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += in[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(n);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[r * n + j] = (in[j] - mu) * rstd[r];
            y[r * n + j] = G[j] * xhat[r * n + j] + Bt[j];
        }
    }
    const bool rec = recording({&x, &gamma, &beta});
    auto out = finish("layer_norm", x.shape(), std::move(y), rec);
    if (rec) {
        active_tape()->record("layer_norm", [x, gamma, beta, out, xhat = std::move(xhat),
                                             rstd = std::move(rstd), rows, n]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto G = gamma.data();
            if (gamma.requires_grad()) {
                auto dG = gamma.mutable_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) dG[j] += g[r * n + j] * xhat[r * n + j];
            }
            if (beta.requires_grad()) {
                auto dB = beta.mutable_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) dB[j] += g[r * n + j];
            }
            if (x.requires_grad()) {
                auto dX = x.mutable_grad();
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double d = g[r * n + j] * G[j];
                        mean_d += d;
                        mean_dx += d * xhat[r * n + j];
                    }
                    mean_d *= inv_n;
                    mean_dx *= inv_n;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double d = g[r * n + j] * G[j];
                        dX[r * n + j] += rstd[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
                    }
                }
            }
        });
    }
    return out;
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
    require_rank("embedding_lookup", table, 2);
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw DimensionError("embedding_lookup: no ids");
    std::vector<double> y(ids.size() * d);
    auto T = table.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw ValidationError("embedding_lookup: id " + std::to_string(ids[i]) + " out of range for vocabulary of " +
                                  std::to_string(vocab));
        }
        std::copy_n(&T[static_cast<std::size_t>(ids[i]) * d], d, &y[i * d]);
    }
    const bool rec = recording({&table});
    auto out = finish("embedding_lookup", {ids.size(), d}, std::move(y), rec);
    if (rec) {
        std::vector<int> saved(ids.begin(), ids.end());
        active_tape()->record("embedding_lookup", [table, out, saved = std::move(saved), d]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto dT = table.mutable_grad();
            for (std::size_t i = 0; i < saved.size(); ++i)
                axpy(1.0, &g[i * d], &dT[static_cast<std::size_t>(saved[i]) * d], d);
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require_rank("cross_entropy", logits, 2);
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    if (labels.size() != batch) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                             shape_str(logits.shape()));
    }
    std::vector<double> probs(logits.size());
    auto L = logits.data();
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
            throw ValidationError("cross_entropy: label " + std::to_string(labels[b]) + " out of range for " +
                                  std::to_string(classes) + " classes");
        }
        const double* row = &L[b * classes];
        const double mx = *std::max_element(row, row + classes);
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) z += (probs[b * classes + c] = std::exp(row[c] - mx));
        for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= z;
        loss += std::log(z) + mx - row[labels[b]];
    }
    loss /= static_cast<double>(batch);
    const bool rec = recording({&logits});
    auto out = finish("cross_entropy", {1}, {loss}, rec);
    if (rec) {
        std::vector<int> saved(labels.begin(), labels.end());
        active_tape()->record("cross_entropy", [logits, out, probs = std::move(probs), saved = std::move(saved),
                                                batch, classes]() mutable {
            if (!out.has_grad() || !logits.requires_grad()) return;
            const double g = out.grad()[0] / static_cast<double>(batch);
            auto dL = logits.mutable_grad();
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t c = 0; c < classes; ++c) {
                    const double onehot = static_cast<int>(c) == saved[b] ? 1.0 : 0.0;
                    dL[b * classes + c] += g * (probs[b * classes + c] - onehot);
                }
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    const bool rec = recording({&x});
    auto out = finish("sum", {1}, {s}, rec);
    if (rec) {
        active_tape()->record("sum", [x, out]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            const double g = out.grad()[0];
            for (double& d : x.mutable_grad()) d += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor mean_pool(const Tensor& x, std::size_t batch, std::size_t seq) {
    const std::size_t d = x.cols();
    if (x.rows() != batch * seq) {
        throw DimensionError("mean_pool: " + shape_str(x.shape()) + " is not " + std::to_string(batch) + "x" +
                             std::to_string(seq) + " tokens");
    }
    std::vector<double> y(batch * d, 0.0);
    auto X = x.data();
    const double inv = 1.0 / static_cast<double>(seq);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t s = 0; s < seq; ++s) axpy(1.0, &X[(b * seq + s) * d], &y[b * d], d);
        for (std::size_t j = 0; j < d; ++j) y[b * d + j] *= inv;
    }
    const bool rec = recording({&x});
    auto out = finish("mean_pool", {batch, d}, std::move(y), rec);
    if (rec) {
        active_tape()->record("mean_pool", [x, out, batch, seq, d, inv]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            auto g = out.grad();
            auto dX = x.mutable_grad();
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t s = 0; s < seq; ++s) axpy(inv, &g[b * d], &dX[(b * seq + s) * d], d);
        });
    }
    return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch, std::size_t seq,
                 std::size_t heads) {
    require_same_shape("attention", q, k);
    require_same_shape("attention", q, v);
    const std::size_t d = q.cols();
    if (q.rows() != batch * seq) {
        throw DimensionError("attention: " + shape_str(q.shape()) + " is not " + std::to_string(batch) + "x" +
                             std::to_string(seq) + " tokens");
    }
    if (heads == 0 || d % heads != 0) {
        throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                             " heads");
    }
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> probs(batch * heads * seq * seq);
    std::vector<double> y(q.size(), 0.0);
    auto Q = q.data();
    auto K = k.data();
    auto V = v.data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            double* P = &probs[((b * heads) + h) * seq * seq];
            for (std::size_t i = 0; i < seq; ++i) {
                const double* qi = &Q[(b * seq + i) * d + h * dh];
                double* row = &P[i * seq];
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < seq; ++j) {
                    row[j] = scale * dot(qi, &K[(b * seq + j) * d + h * dh], dh);
                    mx = std::max(mx, row[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < seq; ++j) z += (row[j] = std::exp(row[j] - mx));
                for (std::size_t j = 0; j < seq; ++j) row[j] /= z;
                double* yi = &y[(b * seq + i) * d + h * dh];
                for (std::size_t j = 0; j < seq; ++j) axpy(row[j], &V[(b * seq + j) * d + h * dh], yi, dh);
            }
        }
    }
    const bool rec = recording({&q, &k, &v});
    auto out = finish("attention", q.shape(), std::move(y), rec);
    if (rec) {
        active_tape()->record("attention", [q, k, v, out, probs = std::move(probs), batch, seq, heads, d, dh,
                                            scale]() mutable {
            if (!out.has_grad()) return;
            auto G = out.grad();
            auto Q = q.data();
            auto K = k.data();
            auto V = v.data();
            std::span<double> dQ, dK, dV;
            if (q.requires_grad()) dQ = q.mutable_grad();
            if (k.requires_grad()) dK = k.mutable_grad();
            if (v.requires_grad()) dV = v.mutable_grad();
            std::vector<double> dP(seq);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const double* P = &probs[((b * heads) + h) * seq * seq];
                    for (std::size_t i = 0; i < seq; ++i) {
                        const double* gi = &G[(b * seq + i) * d + h * dh];
                        const double* row = &P[i * seq];
                        double s = 0.0;
                        for (std::size_t j = 0; j < seq; ++j) {
                            dP[j] = dot(gi, &V[(b * seq + j) * d + h * dh], dh);
                            s += dP[j] * row[j];
                            if (!dV.empty()) axpy(row[j], gi, &dV[(b * seq + j) * d + h * dh], dh);
                        }
                        for (std::size_t j = 0; j < seq; ++j) {
                            const double ds = row[j] * (dP[j] - s) * scale;
                            if (!dQ.empty()) axpy(ds, &K[(b * seq + j) * d + h * dh], &dQ[(b * seq + i) * d + h * dh], dh);
                            if (!dK.empty()) axpy(ds, &Q[(b * seq + i) * d + h * dh], &dK[(b * seq + j) * d + h * dh], dh);
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace loradrop::core::ops
