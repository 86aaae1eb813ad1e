#include "archtune/numkernel/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace archtune::nk::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const NdArray& a, const NdArray& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    }
}

void require_rank(const NdArray& a, std::size_t rank, const char* op, const char* what) {
    if (a.rank() != rank) {
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_to_string(a.shape()));
    }
}

void require_dim(std::size_t got, std::size_t want, const char* op, const std::string& which) {
    if (got != want) {
        throw ShapeError(std::string(op) + ": dimension " + which + " is " + std::to_string(got) + ", expected " +
                         std::to_string(want));
    }
}

template <class F>
Var unary(Tape& t, Var a, F&& f, BackwardFn bw) {
    const NdArray& x = t.value(a);
    NdArray out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return t.record(std::move(out), {a}, std::move(bw));
}

struct ConvGeom {
    std::size_t n, c, h, w, co, k, ho, wo;
    int stride, pad;
    std::size_t rows() const { return c * k * k; }
    std::size_t cols() const { return n * ho * wo; }
};

void im2col(const double* x, const ConvGeom& g, double* col) {
    const std::size_t hw_out = g.ho * g.wo;
    const std::size_t ncols = g.cols();
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                double* row = col + ((c * g.k + ky) * g.k + kx) * ncols;
                for (std::size_t n = 0; n < g.n; ++n) {
                    const double* xin = x + (n * g.c + c) * g.h * g.w;
                    double* dst = row + n * hw_out;
                    for (std::size_t oy = 0; oy < g.ho; ++oy) {
                        const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
                        double* drow = dst + oy * g.wo;
                        if (iy < 0 || iy >= static_cast<long>(g.h)) {
                            std::fill(drow, drow + g.wo, 0.0);
                            continue;
                        }
                        const double* srow = xin + static_cast<std::size_t>(iy) * g.w;
                        for (std::size_t ox = 0; ox < g.wo; ++ox) {
                            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
                            drow[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : srow[ix];
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvGeom& g, double* dx) {
    const std::size_t hw_out = g.ho * g.wo;
    const std::size_t ncols = g.cols();
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const double* row = col + ((c * g.k + ky) * g.k + kx) * ncols;
                for (std::size_t n = 0; n < g.n; ++n) {
                    double* xin = dx + (n * g.c + c) * g.h * g.w;
                    const double* src = row + n * hw_out;
                    for (std::size_t oy = 0; oy < g.ho; ++oy) {
                        const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
                        if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                        double* xrow = xin + static_cast<std::size_t>(iy) * g.w;
                        const double* srow = src + oy * g.wo;
                        for (std::size_t ox = 0; ox < g.wo; ++ox) {
                            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
                            if (ix >= 0 && ix < static_cast<long>(g.w)) xrow[ix] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}

// Moves between [N, Co, HW] and [Co, N*HW].
void nchw_to_cn(const double* src, std::size_t n, std::size_t c, std::size_t hw, double* dst) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            std::copy_n(src + (i * c + j) * hw, hw, dst + (j * n + i) * hw);
        }
    }
}

void cn_to_nchw(const double* src, std::size_t n, std::size_t c, std::size_t hw, double* dst) {
    for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(src + (j * n + i) * hw, hw, dst + (i * c + j) * hw);
        }
    }
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
    const NdArray& x = t.value(a);
    const NdArray& y = t.value(b);
    require_same_shape(x, y, "add");
    NdArray out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return t.record(std::move(out), {a, b}, [](const GradContext& g) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (!g.in_grads[k]) continue;
            NdArray& d = *g.in_grads[k];
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g.out_grad[i];
        }
    });
}

Var sub(Tape& t, Var a, Var b) {
    const NdArray& x = t.value(a);
    const NdArray& y = t.value(b);
    require_same_shape(x, y, "sub");
    NdArray out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
    return t.record(std::move(out), {a, b}, [](const GradContext& g) {
        if (g.in_grads[0]) {
            for (std::size_t i = 0; i < g.out_grad.size(); ++i) (*g.in_grads[0])[i] += g.out_grad[i];
        }
        if (g.in_grads[1]) {
            for (std::size_t i = 0; i < g.out_grad.size(); ++i) (*g.in_grads[1])[i] -= g.out_grad[i];
        }
    });
}

Var mul(Tape& t, Var a, Var b) {
    const NdArray& x = t.value(a);
    const NdArray& y = t.value(b);
    require_same_shape(x, y, "mul");
    NdArray out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    return t.record(std::move(out), {a, b}, [](const GradContext& g) {
        const NdArray& x = *g.in_values[0];
        const NdArray& y = *g.in_values[1];
        if (g.in_grads[0]) {
            for (std::size_t i = 0; i < x.size(); ++i) (*g.in_grads[0])[i] += g.out_grad[i] * y[i];
        }
        if (g.in_grads[1]) {
            for (std::size_t i = 0; i < x.size(); ++i) (*g.in_grads[1])[i] += g.out_grad[i] * x[i];
        }
    });
}

Var scale(Tape& t, Var a, double c) {
    return unary(t, a, [c](double v) { return c * v; }, [c](const GradContext& g) {
        NdArray& d = *g.in_grads[0];
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += c * g.out_grad[i];
    });
}

Var sum(Tape& t, Var a) {
    const NdArray& x = t.value(a);
    double s = 0.0;
    for (double v : x.data()) s += v;
    return t.record(NdArray::scalar(s), {a}, [](const GradContext& g) {
        NdArray& d = *g.in_grads[0];
        const double go = g.out_grad[0];
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += go;
    });
}

Var mean(Tape& t, Var a) {
    const double n = static_cast<double>(t.value(a).size());
    return scale(t, sum(t, a), 1.0 / n);
}

Var weighted_sum(Tape& t, std::span<const Var> scalars, std::span<const double> weights) {
    if (scalars.size() != weights.size()) throw ShapeError("weighted_sum: scalar/weight count mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        const NdArray& v = t.value(scalars[i]);
        if (v.size() != 1) throw ShapeError("weighted_sum: operand " + std::to_string(i) + " is not a scalar");
        s += weights[i] * v[0];
    }
    std::vector<double> w(weights.begin(), weights.end());
    return t.record(NdArray::scalar(s), scalars, [w = std::move(w)](const GradContext& g) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (g.in_grads[i]) (*g.in_grads[i])[0] += w[i] * g.out_grad[0];
        }
    });
}

Var relu(Tape& t, Var a) {
    return unary(t, a, [](double v) { return v > 0.0 ? v : 0.0; }, [](const GradContext& g) {
        const NdArray& x = *g.in_values[0];
        NdArray& d = *g.in_grads[0];
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (x[i] > 0.0) d[i] += g.out_grad[i];
        }
    });
}

Var sigmoid(Tape& t, Var a) {
    return unary(t, a, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](const GradContext& g) {
        NdArray& d = *g.in_grads[0];
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double s = g.out_value[i];
            d[i] += g.out_grad[i] * s * (1.0 - s);
        }
    });
}

Var tanh(Tape& t, Var a) {
    return unary(t, a, [](double v) { return std::tanh(v); }, [](const GradContext& g) {
        NdArray& d = *g.in_grads[0];
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double y = g.out_value[i];
            d[i] += g.out_grad[i] * (1.0 - y * y);
        }
    });
}

namespace {

Var linear_impl(Tape& t, Var input, Var weight, const Var* bias) {
    const NdArray& x = t.value(input);
    const NdArray& w = t.value(weight);
    require_rank(x, 2, "linear", "input");
    require_rank(w, 2, "linear", "weight");
    const std::size_t n = x.dim(0), din = x.dim(1), dout = w.dim(0);
    require_dim(w.dim(1), din, "linear", "weight[1]");
    if (bias) {
        const NdArray& b = t.value(*bias);
        require_rank(b, 1, "linear", "bias");
        require_dim(b.dim(0), dout, "linear", "bias[0]");
    }
    NdArray out(Shape{n, dout});
    MapMat(out.raw(), n, dout).noalias() = ConstMapMat(x.raw(), n, din) * ConstMapMat(w.raw(), dout, din).transpose();
    if (bias) {
        const NdArray& b = t.value(*bias);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < dout; ++j) out[i * dout + j] += b[j];
        }
    }
    BackwardFn bw = [n, din, dout](const GradContext& g) {
        ConstMapMat gy(g.out_grad.raw(), n, dout);
        if (g.in_grads[0]) {
            MapMat(g.in_grads[0]->raw(), n, din).noalias() += gy * ConstMapMat(g.in_values[1]->raw(), dout, din);
        }
        if (g.in_grads[1]) {
            MapMat(g.in_grads[1]->raw(), dout, din).noalias() +=
                gy.transpose() * ConstMapMat(g.in_values[0]->raw(), n, din);
        }
        if (g.in_grads.size() > 2 && g.in_grads[2]) {
            NdArray& db = *g.in_grads[2];
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < dout; ++j) db[j] += g.out_grad[i * dout + j];
            }
        }
    };
    if (bias) return t.record(std::move(out), {input, weight, *bias}, std::move(bw));
    return t.record(std::move(out), {input, weight}, std::move(bw));
}

}  // namespace

Var linear(Tape& t, Var input, Var weight, Var bias) { return linear_impl(t, input, weight, &bias); }

Var linear(Tape& t, Var input, Var weight) { return linear_impl(t, input, weight, nullptr); }

Var conv2d(Tape& t, Var input, Var kernel, int stride, int padding) {
    const NdArray& x = t.value(input);
    const NdArray& w = t.value(kernel);
    require_rank(x, 4, "conv2d", "input");
    require_rank(w, 4, "conv2d", "kernel");
    if (stride < 1) throw ShapeError("conv2d: stride must be positive");
    if (padding < 0) throw ShapeError("conv2d: padding must be non-negative");
    require_dim(w.dim(1), x.dim(1), "conv2d", "kernel[1] (input channels)");
    require_dim(w.dim(3), w.dim(2), "conv2d", "kernel[3] (kernel width)");
    const std::size_t k = w.dim(2);
    if (k != 1 && k != 3 && k != 5 && k != 7) {
        throw ShapeError("conv2d: kernel size " + std::to_string(k) + " not in {1,3,5,7}");
    }
    const long h_span = static_cast<long>(x.dim(2)) + 2 * padding - static_cast<long>(k);
    const long w_span = static_cast<long>(x.dim(3)) + 2 * padding - static_cast<long>(k);
    if (h_span < 0) throw ShapeError("conv2d: dimension 2 (height) smaller than kernel");
    if (w_span < 0) throw ShapeError("conv2d: dimension 3 (width) smaller than kernel");

    ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), k,
               static_cast<std::size_t>(h_span / stride + 1), static_cast<std::size_t>(w_span / stride + 1),
               stride, padding};

    std::vector<double> col(g.rows() * g.cols());
    im2col(x.raw(), g, col.data());
    std::vector<double> ymat(g.co * g.cols());
    MapMat(ymat.data(), g.co, g.cols()).noalias() =
        ConstMapMat(w.raw(), g.co, g.rows()) * ConstMapMat(col.data(), g.rows(), g.cols());
    NdArray out(Shape{g.n, g.co, g.ho, g.wo});
    cn_to_nchw(ymat.data(), g.n, g.co, g.ho * g.wo, out.raw());

    return t.record(std::move(out), {input, kernel}, [g](const GradContext& ctx) {
        std::vector<double> gy(g.co * g.cols());
        nchw_to_cn(ctx.out_grad.raw(), g.n, g.co, g.ho * g.wo, gy.data());
        ConstMapMat gym(gy.data(), g.co, g.cols());
        std::vector<double> col(g.rows() * g.cols());
        if (ctx.in_grads[1]) {
            im2col(ctx.in_values[0]->raw(), g, col.data());
            MapMat(ctx.in_grads[1]->raw(), g.co, g.rows()).noalias() +=
                gym * ConstMapMat(col.data(), g.rows(), g.cols()).transpose();
        }
        if (ctx.in_grads[0]) {
            MapMat(col.data(), g.rows(), g.cols()).noalias() =
                ConstMapMat(ctx.in_values[1]->raw(), g.co, g.rows()).transpose() * gym;
            col2im_add(col.data(), g, ctx.in_grads[0]->raw());
        }
    });
}

Var batch_norm_train(Tape& t, Var input, Var gamma, Var beta, double eps, NdArray* batch_mean,
                     NdArray* batch_var) {
    const NdArray& x = t.value(input);
    require_rank(x, 4, "batch_norm", "input");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    require_dim(t.value(gamma).size(), c, "batch_norm", "gamma[0]");
    require_dim(t.value(beta).size(), c, "batch_norm", "beta[0]");
    const NdArray& gm = t.value(gamma);
    const NdArray& bt = t.value(beta);
    const double m = static_cast<double>(n * hw);

    std::vector<double> mu(c, 0.0), inv_std(c, 0.0), var(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* p = x.raw() + (i * c + ch) * hw;
            for (std::size_t j = 0; j < hw; ++j) s += p[j];
        }
        mu[ch] = s / m;
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* p = x.raw() + (i * c + ch) * hw;
            for (std::size_t j = 0; j < hw; ++j) v += (p[j] - mu[ch]) * (p[j] - mu[ch]);
        }
        var[ch] = v / m;
        inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);
    }
    NdArray out(x.shape());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* p = x.raw() + (i * c + ch) * hw;
            double* o = out.raw() + (i * c + ch) * hw;
            for (std::size_t j = 0; j < hw; ++j) o[j] = gm[ch] * (p[j] - mu[ch]) * inv_std[ch] + bt[ch];
        }
    }
    if (batch_mean) *batch_mean = NdArray(Shape{c}, mu);
    if (batch_var) *batch_var = NdArray(Shape{c}, var);

    return t.record(std::move(out), {input, gamma, beta},
                    [n, c, hw, m, mu = std::move(mu), inv_std = std::move(inv_std)](const GradContext& g) {
                        const NdArray& x = *g.in_values[0];
                        const NdArray& gm = *g.in_values[1];
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            double sum_dy = 0.0, sum_dy_xhat = 0.0;
                            for (std::size_t i = 0; i < n; ++i) {
                                const double* p = x.raw() + (i * c + ch) * hw;
                                const double* dy = g.out_grad.raw() + (i * c + ch) * hw;
                                for (std::size_t j = 0; j < hw; ++j) {
                                    sum_dy += dy[j];
                                    sum_dy_xhat += dy[j] * (p[j] - mu[ch]) * inv_std[ch];
                                }
                            }
                            if (g.in_grads[1]) (*g.in_grads[1])[ch] += sum_dy_xhat;
                            if (g.in_grads[2]) (*g.in_grads[2])[ch] += sum_dy;
                            if (!g.in_grads[0]) continue;
                            const double k = gm[ch] * inv_std[ch] / m;
                            for (std::size_t i = 0; i < n; ++i) {
                                const double* p = x.raw() + (i * c + ch) * hw;
                                const double* dy = g.out_grad.raw() + (i * c + ch) * hw;
                                double* dx = g.in_grads[0]->raw() + (i * c + ch) * hw;
                                for (std::size_t j = 0; j < hw; ++j) {
                                    const double xhat = (p[j] - mu[ch]) * inv_std[ch];
                                    dx[j] += k * (m * dy[j] - sum_dy - xhat * sum_dy_xhat);
                                }
                            }
                        }
                    });
}

Var batch_norm_eval(Tape& t, Var input, Var gamma, Var beta, const NdArray& mean, const NdArray& var, double eps) {
    const NdArray& x = t.value(input);
    require_rank(x, 4, "batch_norm", "input");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    require_dim(t.value(gamma).size(), c, "batch_norm", "gamma[0]");
    require_dim(t.value(beta).size(), c, "batch_norm", "beta[0]");
    require_dim(mean.size(), c, "batch_norm", "running_mean[0]");
    require_dim(var.size(), c, "batch_norm", "running_var[0]");
    const NdArray& gm = t.value(gamma);
    const NdArray& bt = t.value(beta);
    std::vector<double> mu(mean.data().begin(), mean.data().end());
    std::vector<double> inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);
    NdArray out(x.shape());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* p = x.raw() + (i * c + ch) * hw;
            double* o = out.raw() + (i * c + ch) * hw;
            for (std::size_t j = 0; j < hw; ++j) o[j] = gm[ch] * (p[j] - mu[ch]) * inv_std[ch] + bt[ch];
        }
    }
    return t.record(std::move(out), {input, gamma, beta},
                    [n, c, hw, mu = std::move(mu), inv_std = std::move(inv_std)](const GradContext& g) {
                        const NdArray& x = *g.in_values[0];
                        const NdArray& gm = *g.in_values[1];
                        for (std::size_t i = 0; i < n; ++i) {
                            for (std::size_t ch = 0; ch < c; ++ch) {
                                const double* p = x.raw() + (i * c + ch) * hw;
                                const double* dy = g.out_grad.raw() + (i * c + ch) * hw;
                                for (std::size_t j = 0; j < hw; ++j) {
                                    if (g.in_grads[1]) (*g.in_grads[1])[ch] += dy[j] * (p[j] - mu[ch]) * inv_std[ch];
                                    if (g.in_grads[2]) (*g.in_grads[2])[ch] += dy[j];
                                    if (g.in_grads[0]) {
                                        g.in_grads[0]->raw()[(i * c + ch) * hw + j] += dy[j] * gm[ch] * inv_std[ch];
                                    }
                                }
                            }
                        }
                    });
}

Var global_avg_pool(Tape& t, Var input) {
    const NdArray& x = t.value(input);
    require_rank(x, 4, "global_avg_pool", "input");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    NdArray out(Shape{n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < hw; ++j) s += x[i * hw + j];
        out[i] = s / static_cast<double>(hw);
    }
    return t.record(std::move(out), {input}, [n, c, hw](const GradContext& g) {
        NdArray& d = *g.in_grads[0];
        const double inv = 1.0 / static_cast<double>(hw);
        for (std::size_t i = 0; i < n * c; ++i) {
            for (std::size_t j = 0; j < hw; ++j) d[i * hw + j] += g.out_grad[i] * inv;
        }
    });
}

NdArray softmax_rows(const NdArray& logits) {
    require_rank(logits, 2, "softmax", "logits");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    NdArray out(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = logits.raw() + i * k;
        double* p = out.raw() + i * k;
        const double mx = *std::max_element(z, z + k);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            p[j] = std::exp(z[j] - mx);
            s += p[j];
        }
        for (std::size_t j = 0; j < k; ++j) p[j] /= s;
    }
    return out;
}

Var softmax(Tape& t, Var logits) {
    NdArray out = softmax_rows(t.value(logits));
    const std::size_t n = out.dim(0), k = out.dim(1);
    return t.record(std::move(out), {logits}, [n, k](const GradContext& g) {
        NdArray& d = *g.in_grads[0];
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < k; ++j) dot += g.out_grad[i * k + j] * g.out_value[i * k + j];
            for (std::size_t j = 0; j < k; ++j) {
                d[i * k + j] += g.out_value[i * k + j] * (g.out_grad[i * k + j] - dot);
            }
        }
    });
}

Var log_softmax(Tape& t, Var logits) {
    const NdArray& z = t.value(logits);
    require_rank(z, 2, "log_softmax", "logits");
    const std::size_t n = z.dim(0), k = z.dim(1);
    NdArray out(z.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* zi = z.raw() + i * k;
        const double mx = *std::max_element(zi, zi + k);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(zi[j] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = zi[j] - lse;
    }
    return t.record(std::move(out), {logits}, [n, k](const GradContext& g) {
        NdArray& d = *g.in_grads[0];
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += g.out_grad[i * k + j];
            for (std::size_t j = 0; j < k; ++j) {
                d[i * k + j] += g.out_grad[i * k + j] - std::exp(g.out_value[i * k + j]) * s;
            }
        }
    });
}

Var cross_entropy(Tape& t, Var logits, std::span<const int> labels) {
    const NdArray& z = t.value(logits);
    require_rank(z, 2, "cross_entropy", "logits");
    const std::size_t n = z.dim(0), k = z.dim(1);
    require_dim(labels.size(), n, "cross_entropy", "labels[0]");
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
            throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                                    std::to_string(i) + " outside [0," + std::to_string(k) + ")");
        }
    }
    NdArray probs = softmax_rows(z);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* zi = z.raw() + i * k;
        const double mx = *std::max_element(zi, zi + k);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(zi[j] - mx);
        loss += mx + std::log(s) - zi[labels[i]];
    }
    loss /= static_cast<double>(n);
    std::vector<int> y(labels.begin(), labels.end());
    return t.record(NdArray::scalar(loss), {logits},
                    [n, k, probs = std::move(probs), y = std::move(y)](const GradContext& g) {
                        NdArray& d = *g.in_grads[0];
                        const double s = g.out_grad[0] / static_cast<double>(n);
                        for (std::size_t i = 0; i < n; ++i) {
                            for (std::size_t j = 0; j < k; ++j) {
                                const double target = (static_cast<int>(j) == y[i]) ? 1.0 : 0.0;
                                d[i * k + j] += s * (probs[i * k + j] - target);
                            }
                        }
                    });
}

Var slice_cols(Tape& t, Var a, std::size_t start, std::size_t len) {
    const NdArray& x = t.value(a);
    require_rank(x, 2, "slice_cols", "input");
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (start + len > d || len == 0) {
        throw ShapeError("slice_cols: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") exceeds dimension 1 of size " + std::to_string(d));
    }
    NdArray out(Shape{n, len});
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(x.raw() + i * d + start, len, out.raw() + i * len);
    }
    return t.record(std::move(out), {a}, [n, d, start, len](const GradContext& g) {
        NdArray& dx = *g.in_grads[0];
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < len; ++j) dx[i * d + start + j] += g.out_grad[i * len + j];
        }
    });
}

Var gather_row(Tape& t, Var table, std::size_t row) {
    const NdArray& x = t.value(table);
    require_rank(x, 2, "gather_row", "table");
    if (row >= x.dim(0)) {
        throw std::out_of_range("gather_row: row " + std::to_string(row) + " outside table of " +
                                std::to_string(x.dim(0)) + " rows");
    }
    const std::size_t e = x.dim(1);
    NdArray out(Shape{1, e});
    std::copy_n(x.raw() + row * e, e, out.raw());
    return t.record(std::move(out), {table}, [row, e](const GradContext& g) {
        NdArray& d = *g.in_grads[0];
        for (std::size_t j = 0; j < e; ++j) d[row * e + j] += g.out_grad[j];
    });
}

Var pick(Tape& t, Var a, std::size_t r, std::size_t c) {
    const NdArray& x = t.value(a);
    require_rank(x, 2, "pick", "input");
    if (r >= x.dim(0) || c >= x.dim(1)) throw std::out_of_range("pick: index outside array");
    const std::size_t cols = x.dim(1);
    return t.record(NdArray::scalar(x[r * cols + c]), {a}, [r, c, cols](const GradContext& g) {
        (*g.in_grads[0])[r * cols + c] += g.out_grad[0];
    });
}

std::pair<Var, Var> lstm_cell(Tape& t, Var x, Var h, Var c, const LstmWeights& w) {
    const NdArray& hv = t.value(h);
    const NdArray& cv = t.value(c);
    const NdArray& whh = t.value(w.w_hh);
    require_rank(hv, 2, "lstm_cell", "h");
    require_rank(whh, 2, "lstm_cell", "w_hh");
    const std::size_t hidden = hv.dim(1);
    require_dim(whh.dim(0), 4 * hidden, "lstm_cell", "w_hh[0]");
    require_dim(whh.dim(1), hidden, "lstm_cell", "w_hh[1]");
    if (cv.shape() != hv.shape()) throw ShapeError("lstm_cell: c shape " + shape_to_string(cv.shape()) +
                                                   " differs from h shape " + shape_to_string(hv.shape()));

    Var gates = add(t, linear(t, x, w.w_ih, w.bias), linear(t, h, w.w_hh));
    Var i = sigmoid(t, slice_cols(t, gates, 0, hidden));
    Var f = sigmoid(t, slice_cols(t, gates, hidden, hidden));
    Var g = tanh(t, slice_cols(t, gates, 2 * hidden, hidden));
    Var o = sigmoid(t, slice_cols(t, gates, 3 * hidden, hidden));
    Var c_next = add(t, mul(t, f, c), mul(t, i, g));
    Var h_next = mul(t, o, tanh(t, c_next));
    return {h_next, c_next};
}

}  // namespace archtune::nk::ops
