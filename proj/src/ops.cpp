#include "vidguide/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "vidguide/errors.hpp"

namespace vidguide::testing {
namespace {
std::atomic<bool> g_gradient_fault{false};
}
void set_gradient_fault(bool enabled) { g_gradient_fault = enabled; }
bool gradient_fault_enabled() { return g_gradient_fault; }
}  // namespace vidguide::testing

namespace vidguide::ops {
namespace {

using Buffer = std::vector<double>;

bool is_suffix(const Shape& full, const Shape& tail) {
    if (tail.size() > full.size()) return false;
    return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

void check_binary(const Var& a, const Var& b, const char* op) {
    if (!is_suffix(a.shape(), b.shape())) {
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " are not trailing-compatible");
    }
}

// Sum a full-size gradient down onto a trailing-suffix shape.
Tensor reduce_to(const Tensor& g, const Shape& shape) {
    if (g.shape() == shape) return g;
    const std::size_t n = shape_numel(shape);
    Buffer out(n, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) out[i % n] += g[i];
    return Tensor(shape, std::move(out));
}

template <typename F>
Tensor map(const Tensor& a, F&& f) {
    Buffer out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return Tensor(a.shape(), std::move(out));
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F&& f) {
    const std::size_t nb = b.size();
    Buffer out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i % nb]);
    return Tensor(a.shape(), std::move(out));
}

void require_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
}

std::size_t last_dim(const Var& a, const char* op) {
    if (a.shape().empty() || a.shape().back() == 0) {
        throw DimensionError(std::string(op) + ": empty last dimension in " + shape_str(a.shape()));
    }
    return a.shape().back();
}

}  // namespace

Var add(const Var& a, const Var& b) {
    check_binary(a, b, "add");
    Tensor out = zip(a.value(), b.value(), [](double x, double y) { return x + y; });
    const Shape bs = b.shape();
    return record(std::move(out), {a, b}, "add", [bs](const Tensor& g) {
        return std::vector<Tensor>{g, reduce_to(g, bs)};
    });
}

Var sub(const Var& a, const Var& b) {
    check_binary(a, b, "sub");
    Tensor out = zip(a.value(), b.value(), [](double x, double y) { return x - y; });
    const Shape bs = b.shape();
    return record(std::move(out), {a, b}, "sub", [bs](const Tensor& g) {
        return std::vector<Tensor>{g, reduce_to(map(g, [](double v) { return -v; }), bs)};
    });
}

Var mul(const Var& a, const Var& b) {
    check_binary(a, b, "mul");
    Tensor out = zip(a.value(), b.value(), [](double x, double y) { return x * y; });
    Tensor av = a.value(), bv = b.value();
    return record(std::move(out), {a, b}, "mul", [av, bv](const Tensor& g) {
        Tensor ga = zip(g, bv, [](double gi, double y) { return gi * y; });
        Buffer gb(av.size());
        for (std::size_t i = 0; i < av.size(); ++i) gb[i] = g[i] * av[i];
        return std::vector<Tensor>{ga, reduce_to(Tensor(av.shape(), std::move(gb)), bv.shape())};
    });
}

Var div(const Var& a, const Var& b) {
    check_binary(a, b, "div");
    Tensor out = zip(a.value(), b.value(), [](double x, double y) { return x / y; });
    require_finite(out, "div");
    Tensor av = a.value(), bv = b.value();
    return record(std::move(out), {a, b}, "div", [av, bv](const Tensor& g) {
        Tensor ga = zip(g, bv, [](double gi, double y) { return gi / y; });
        const std::size_t nb = bv.size();
        Buffer gb(av.size());
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double y = bv[i % nb];
            gb[i] = -g[i] * av[i] / (y * y);
        }
        return std::vector<Tensor>{ga, reduce_to(Tensor(av.shape(), std::move(gb)), bv.shape())};
    });
}

Var scale(const Var& a, double factor) {
    Tensor out = map(a.value(), [factor](double x) { return x * factor; });
    return record(std::move(out), {a}, "scale", [factor](const Tensor& g) {
        return std::vector<Tensor>{map(g, [factor](double v) { return v * factor; })};
    });
}

Var add_scalar(const Var& a, double offset) {
    Tensor out = map(a.value(), [offset](double x) { return x + offset; });
    return record(std::move(out), {a}, "add_scalar", [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var square(const Var& a) {
    Tensor av = a.value();
    Tensor out = map(av, [](double x) { return x * x; });
    return record(std::move(out), {a}, "square", [av](const Tensor& g) {
        return std::vector<Tensor>{zip(g, av, [](double gi, double x) { return 2.0 * x * gi; })};
    });
}

Var sqrt(const Var& a) {
    for (double v : a.value().data()) {
        if (!(v >= 0.0)) throw NumericError("sqrt of negative value");
    }
    Tensor out = map(a.value(), [](double x) { return std::sqrt(x); });
    Tensor ov = out;
    return record(std::move(out), {a}, "sqrt", [ov](const Tensor& g) {
        Tensor ga = zip(g, ov, [](double gi, double y) { return gi / (2.0 * y); });
        require_finite(ga, "sqrt backward");
        return std::vector<Tensor>{ga};
    });
}

Var log(const Var& a) {
    for (double v : a.value().data()) {
        if (!(v > 0.0)) throw NumericError("log of non-positive value");
    }
    Tensor av = a.value();
    Tensor out = map(av, [](double x) { return std::log(x); });
    return record(std::move(out), {a}, "log", [av](const Tensor& g) {
        return std::vector<Tensor>{zip(g, av, [](double gi, double x) { return gi / x; })};
    });
}

Var exp(const Var& a) {
    Tensor out = map(a.value(), [](double x) { return std::exp(x); });
    require_finite(out, "exp");
    Tensor ov = out;
    return record(std::move(out), {a}, "exp", [ov](const Tensor& g) {
        return std::vector<Tensor>{zip(g, ov, [](double gi, double y) { return gi * y; })};
    });
}

Var silu(const Var& a) {
    Tensor av = a.value();
    Tensor out = map(av, [](double x) { return x / (1.0 + std::exp(-x)); });
    return record(std::move(out), {a}, "silu", [av](const Tensor& g) {
        return std::vector<Tensor>{zip(g, av, [](double gi, double x) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return gi * s * (1.0 + x * (1.0 - s));
        })};
    });
}

Var tanh(const Var& a) {
    Tensor out = map(a.value(), [](double x) { return std::tanh(x); });
    Tensor ov = out;
    return record(std::move(out), {a}, "tanh", [ov](const Tensor& g) {
        return std::vector<Tensor>{zip(g, ov, [](double gi, double y) { return gi * (1.0 - y * y); })};
    });
}

Var clamp(const Var& a, double lo, double hi) {
    Tensor av = a.value();
    Tensor out = map(av, [lo, hi](double x) { return std::clamp(x, lo, hi); });
    return record(std::move(out), {a}, "clamp", [av, lo, hi](const Tensor& g) {
        return std::vector<Tensor>{zip(g, av, [lo, hi](double gi, double x) {
            return (x > lo && x < hi) ? gi : 0.0;
        })};
    });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    const Shape shape = a.shape();
    return record(Tensor::scalar(s), {a}, "sum", [shape](const Tensor& g) {
        return std::vector<Tensor>{Tensor::filled(shape, g.item())};
    });
}

Var mean(const Var& a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw DimensionError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_lastdim(const Var& a) {
    const std::size_t k = last_dim(a, "sum_lastdim");
    const Tensor& av = a.value();
    const std::size_t rows = av.size() / k;
    Buffer out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c) s += av[r * k + c];
        out[r] = s;
    }
    Shape os(a.shape().begin(), a.shape().end() - 1);
    const Shape in_shape = a.shape();
    return record(Tensor(os, std::move(out)), {a}, "sum_lastdim", [in_shape, k](const Tensor& g) {
        Buffer ga(g.size() * k);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i / k];
        return std::vector<Tensor>{Tensor(in_shape, std::move(ga))};
    });
}

Var expand_last(const Var& a, std::size_t k) {
    if (k == 0) throw DimensionError("expand_last with k = 0");
    const Tensor& av = a.value();
    Buffer out(av.size() * k);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i / k];
    Shape os = a.shape();
    os.push_back(k);
    const Shape in_shape = a.shape();
    return record(Tensor(os, std::move(out)), {a}, "expand_last", [in_shape, k](const Tensor& g) {
        Buffer ga(g.size() / k, 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i / k] += g[i];
        return std::vector<Tensor>{Tensor(in_shape, std::move(ga))};
    });
}

Var select_last(const Var& a, std::size_t index) {
    const std::size_t k = last_dim(a, "select_last");
    if (index >= k) {
        throw DimensionError("select_last: index " + std::to_string(index) + " out of range for " +
                             shape_str(a.shape()));
    }
    const Tensor& av = a.value();
    const std::size_t rows = av.size() / k;
    Buffer out(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r] = av[r * k + index];
    Shape os(a.shape().begin(), a.shape().end() - 1);
    const Shape in_shape = a.shape();
    return record(Tensor(os, std::move(out)), {a}, "select_last", [in_shape, k, index](const Tensor& g) {
        Buffer ga(shape_numel(in_shape), 0.0);
        for (std::size_t r = 0; r < g.size(); ++r) ga[r * k + index] = g[r];
        return std::vector<Tensor>{Tensor(in_shape, std::move(ga))};
    });
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    const Shape in_shape = a.shape();
    return record(std::move(out), {a}, "reshape", [in_shape](const Tensor& g) {
        return std::vector<Tensor>{g.reshaped(in_shape)};
    });
}

namespace {

// c[M, N] += a[M, K] * b[K, N] for raw row-major blocks.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

Buffer transpose_block(const double* x, std::size_t rows, std::size_t cols) {
    Buffer t(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
    return t;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    auto mismatch = [&] {
        return DimensionError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
    };
    if (as.size() < 2 || (bs.size() != 2 && bs.size() != 3)) throw mismatch();
    const bool batched = bs.size() == 3;
    if (batched && (as.size() != 3 || as[0] != bs[0])) throw mismatch();
    const std::size_t k = as.back();
    if (bs[bs.size() - 2] != k) throw mismatch();
    const std::size_t n = bs.back();
    const std::size_t batch = batched ? bs[0] : 1;
    const std::size_t m = batched ? as[1] : a.value().size() / k;

    Buffer out(batch * m * n, 0.0);
    const double* ad = a.value().data().data();
    const double* bd = b.value().data().data();
    for (std::size_t bi = 0; bi < batch; ++bi) {
        gemm_acc(ad + bi * m * k, bd + bi * k * n, out.data() + bi * m * n, m, k, n);
    }
    Shape os(as.begin(), as.end() - 1);
    os.push_back(n);

    Tensor av = a.value(), bv = b.value();
    return record(Tensor(os, std::move(out)), {a, b}, "matmul",
                  [av, bv, batch, m, k, n, batched](const Tensor& g) {
                      Buffer ga(av.size(), 0.0);
                      Buffer gb(bv.size(), 0.0);
                      const double* gd = g.data().data();
                      for (std::size_t bi = 0; bi < batch; ++bi) {
                          const double* ab = av.data().data() + bi * m * k;
                          const double* bb = bv.data().data() + (batched ? bi * k * n : 0);
                          const double* gbk = gd + bi * m * n;
                          Buffer bt = transpose_block(bb, k, n);  // [n, k]
                          gemm_acc(gbk, bt.data(), ga.data() + bi * m * k, m, n, k);
                          Buffer at = transpose_block(ab, m, k);  // [k, m]
                          gemm_acc(at.data(), gbk, gb.data() + (batched ? bi * k * n : 0), k, m, n);
                      }
                      return std::vector<Tensor>{Tensor(av.shape(), std::move(ga)),
                                                 Tensor(bv.shape(), std::move(gb))};
                  });
}

namespace {

Tensor transpose_last2_value(const Tensor& x) {
    const Shape& s = x.shape();
    const std::size_t r = s[s.size() - 2], c = s.back();
    const std::size_t batch = x.size() / (r * c);
    Buffer out(x.size());
    for (std::size_t bi = 0; bi < batch; ++bi) {
        Buffer t = transpose_block(x.data().data() + bi * r * c, r, c);
        std::copy(t.begin(), t.end(), out.begin() + bi * r * c);
    }
    Shape os = s;
    std::swap(os[os.size() - 1], os[os.size() - 2]);
    return Tensor(os, std::move(out));
}

Tensor swap_leading_value(const Tensor& x) {
    const Shape& s = x.shape();
    const std::size_t d0 = s[0], d1 = s[1];
    const std::size_t inner = x.size() / (d0 * d1);
    Buffer out(x.size());
    for (std::size_t i = 0; i < d0; ++i)
        for (std::size_t j = 0; j < d1; ++j)
            std::copy_n(x.data().data() + (i * d1 + j) * inner, inner, out.data() + (j * d0 + i) * inner);
    Shape os = s;
    std::swap(os[0], os[1]);
    return Tensor(os, std::move(out));
}

}  // namespace

Var transpose_last2(const Var& a) {
    if (a.shape().size() < 2) throw DimensionError("transpose_last2 on " + shape_str(a.shape()));
    return record(transpose_last2_value(a.value()), {a}, "transpose_last2", [](const Tensor& g) {
        return std::vector<Tensor>{transpose_last2_value(g)};
    });
}

Var swap_leading(const Var& a) {
    if (a.shape().size() < 2) throw DimensionError("swap_leading on " + shape_str(a.shape()));
    return record(swap_leading_value(a.value()), {a}, "swap_leading", [](const Tensor& g) {
        return std::vector<Tensor>{swap_leading_value(g)};
    });
}

Var softmax_lastdim(const Var& a) {
    const std::size_t k = last_dim(a, "softmax_lastdim");
    const Tensor& av = a.value();
    const std::size_t rows = av.size() / k;
    Buffer out(av.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.data().data() + r * k;
        double* y = out.data() + r * k;
        const double mx = *std::max_element(x, x + k);
        double total = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            y[c] = std::exp(x[c] - mx);
            total += y[c];
        }
        for (std::size_t c = 0; c < k; ++c) y[c] /= total;
    }
    Tensor yv(a.shape(), out);
    return record(Tensor(a.shape(), std::move(out)), {a}, "softmax_lastdim", [yv, k, rows](const Tensor& g) {
        const double fault = testing::gradient_fault_enabled() ? 1.5 : 1.0;
        Buffer ga(yv.size());
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < k; ++c) dot += g[r * k + c] * yv[r * k + c];
            for (std::size_t c = 0; c < k; ++c) {
                ga[r * k + c] = fault * yv[r * k + c] * (g[r * k + c] - dot);
            }
        }
        return std::vector<Tensor>{Tensor(yv.shape(), std::move(ga))};
    });
}

namespace {

void check_pixels(const Var& x, std::size_t height, std::size_t width, const char* op) {
    const Shape& s = x.shape();
    if (s.size() != 3 || s[1] != height * width) {
        throw DimensionError(std::string(op) + ": expected [B, " + std::to_string(height * width) +
                             ", C], got " + shape_str(s));
    }
}

}  // namespace

Var avgpool2(const Var& x, std::size_t height, std::size_t width) {
    check_pixels(x, height, width, "avgpool2");
    if (height % 2 || width % 2) throw DimensionError("avgpool2 needs even grid sizes");
    const std::size_t batch = x.shape()[0], ch = x.shape()[2];
    const std::size_t oh = height / 2, ow = width / 2;
    const Tensor& xv = x.value();
    Buffer out(batch * oh * ow * ch, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t r = 0; r < height; ++r)
            for (std::size_t c = 0; c < width; ++c) {
                const double* src = xv.data().data() + ((b * height + r) * width + c) * ch;
                double* dst = out.data() + ((b * oh + r / 2) * ow + c / 2) * ch;
                for (std::size_t k = 0; k < ch; ++k) dst[k] += 0.25 * src[k];
            }
    const Shape in_shape = x.shape();
    return record(Tensor({batch, oh * ow, ch}, std::move(out)), {x}, "avgpool2",
                  [in_shape, height, width, oh, ow, batch, ch](const Tensor& g) {
                      Buffer gx(shape_numel(in_shape));
                      for (std::size_t b = 0; b < batch; ++b)
                          for (std::size_t r = 0; r < height; ++r)
                              for (std::size_t c = 0; c < width; ++c)
                                  for (std::size_t k = 0; k < ch; ++k)
                                      gx[((b * height + r) * width + c) * ch + k] =
                                          0.25 * g[((b * oh + r / 2) * ow + c / 2) * ch + k];
                      return std::vector<Tensor>{Tensor(in_shape, std::move(gx))};
                  });
}

namespace {

// Mean over the in-grid 3x3 neighbourhood; transposed when `adjoint` is set.
Buffer box3(std::span<const double> src, std::size_t batch, std::size_t height, std::size_t width, std::size_t ch,
            bool adjoint) {
    Buffer out(src.size(), 0.0);
    auto span_of = [](std::size_t i, std::size_t n) {
        return std::pair{i == 0 ? 0 : i - 1, std::min(i + 1, n - 1)};
    };
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t r = 0; r < height; ++r)
            for (std::size_t c = 0; c < width; ++c) {
                const auto [r0, r1] = span_of(r, height);
                const auto [c0, c1] = span_of(c, width);
                const double w = 1.0 / static_cast<double>((r1 - r0 + 1) * (c1 - c0 + 1));
                const std::size_t self = ((b * height + r) * width + c) * ch;
                for (std::size_t rr = r0; rr <= r1; ++rr)
                    for (std::size_t cc = c0; cc <= c1; ++cc) {
                        const std::size_t other = ((b * height + rr) * width + cc) * ch;
                        for (std::size_t k = 0; k < ch; ++k) {
                            if (adjoint)
                                out[other + k] += w * src[self + k];
                            else
                                out[self + k] += w * src[other + k];
                        }
                    }
            }
    return out;
}

}  // namespace

Var smooth3(const Var& x, std::size_t height, std::size_t width) {
    check_pixels(x, height, width, "smooth3");
    const std::size_t batch = x.shape()[0], ch = x.shape()[2];
    const Shape shape = x.shape();
    return record(Tensor(shape, box3(x.value().data(), batch, height, width, ch, false)), {x}, "smooth3",
                  [shape, batch, height, width, ch](const Tensor& g) {
                      return std::vector<Tensor>{Tensor(shape, box3(g.data(), batch, height, width, ch, true))};
                  });
}

Var upsample2(const Var& x, std::size_t height, std::size_t width) {
    check_pixels(x, height, width, "upsample2");
    const std::size_t batch = x.shape()[0], ch = x.shape()[2];
    const std::size_t uh = height * 2, uw = width * 2;
    const Tensor& xv = x.value();
    Buffer out(batch * uh * uw * ch);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t r = 0; r < uh; ++r)
            for (std::size_t c = 0; c < uw; ++c)
                std::copy_n(xv.data().data() + ((b * height + r / 2) * width + c / 2) * ch, ch,
                            out.data() + ((b * uh + r) * uw + c) * ch);
    const Shape in_shape = x.shape();
    return record(Tensor({batch, uh * uw, ch}, std::move(out)), {x}, "upsample2",
                  [in_shape, height, width, uh, uw, batch, ch](const Tensor& g) {
                      Buffer gx(shape_numel(in_shape), 0.0);
                      for (std::size_t b = 0; b < batch; ++b)
                          for (std::size_t r = 0; r < uh; ++r)
                              for (std::size_t c = 0; c < uw; ++c)
                                  for (std::size_t k = 0; k < ch; ++k)
                                      gx[((b * height + r / 2) * width + c / 2) * ch + k] +=
                                          g[((b * uh + r) * uw + c) * ch + k];
                      return std::vector<Tensor>{Tensor(in_shape, std::move(gx))};
                  });
}

namespace {

// [F, C, P] <-> [F, P, C]
Tensor swap_inner(const Tensor& x, std::size_t frames, std::size_t rows, std::size_t cols) {
    Buffer out(x.size());
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
                out[(f * cols + c) * rows + r] = x[(f * rows + r) * cols + c];
    return Tensor({frames, cols, rows}, std::move(out));
}

}  // namespace

Var to_pixels(const Var& z) {
    const Shape s = z.shape();
    if (s.size() != 4) throw DimensionError("to_pixels expects [F, C, H, W], got " + shape_str(s));
    const std::size_t f = s[0], c = s[1], p = s[2] * s[3];
    return record(swap_inner(z.value(), f, c, p), {z}, "to_pixels", [s, f, c, p](const Tensor& g) {
        return std::vector<Tensor>{swap_inner(g, f, p, c).reshaped(s)};
    });
}

Var from_pixels(const Var& x, std::size_t height, std::size_t width) {
    check_pixels(x, height, width, "from_pixels");
    const std::size_t f = x.shape()[0], p = height * width, c = x.shape()[2];
    const Shape in_shape = x.shape();
    Tensor out = swap_inner(x.value(), f, p, c).reshaped({f, c, height, width});
    return record(std::move(out), {x}, "from_pixels", [in_shape, f, p, c](const Tensor& g) {
        return std::vector<Tensor>{swap_inner(g.reshaped({f, c, p}), f, c, p)};
    });
}

}  // namespace vidguide::ops
