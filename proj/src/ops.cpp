#include "omnirestore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace omnirestore {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

template <class S>
Tensor<S> make_result(const char* op, Shape shape, std::vector<S> value,
                      std::vector<std::shared_ptr<Node<S>>> inputs,
                      std::function<void(Node<S>&)> backprop) {
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = op;
    for (auto& in : inputs)
        if (in->needs_grad) n->needs_grad = true;
    if (n->needs_grad) {
        n->parents = std::move(inputs);
        n->backprop = std::move(backprop);
    }
    return Tensor<S>(std::move(n));
}

void split_axis(const Shape& sh, int axis, long& outer, long& d, long& inner) {
    if (axis < 0 || axis >= static_cast<int>(sh.size()))
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(sh));
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= sh[static_cast<size_t>(i)];
    d = sh[static_cast<size_t>(axis)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < sh.size(); ++i) inner *= sh[i];
}

template <class S>
void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.numel() == 1 && b.numel() != 1) return add_scalar(b, a.item());
    if (b.numel() == 1 && a.numel() != 1) return add_scalar(a, b.item());
    require_same_shape("add", a, b);
    const long n = a.numel();
    std::vector<S> out(a.data());
    const S* pb = b.data().data();
    for (long i = 0; i < n; ++i) out[static_cast<size_t>(i)] += pb[i];
    auto an = a.node(), bn = b.node();
    return make_result<S>("add", a.shape(), std::move(out), {an, bn}, [an, bn, n](Node<S>& self) {
        if (an->needs_grad) an->accumulate(self.grad.data(), n);
        if (bn->needs_grad) bn->accumulate(self.grad.data(), n);
    });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape("sub", a, b);
    const long n = a.numel();
    std::vector<S> out(a.data());
    const S* pb = b.data().data();
    for (long i = 0; i < n; ++i) out[static_cast<size_t>(i)] -= pb[i];
    auto an = a.node(), bn = b.node();
    return make_result<S>("sub", a.shape(), std::move(out), {an, bn}, [an, bn, n](Node<S>& self) {
        if (an->needs_grad) an->accumulate(self.grad.data(), n);
        if (bn->needs_grad) {
            if (bn->grad.empty()) bn->grad.assign(bn->value.size(), S(0));
            for (long i = 0; i < n; ++i) bn->grad[static_cast<size_t>(i)] -= self.grad[static_cast<size_t>(i)];
        }
    });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.numel() == 1 && b.numel() != 1) return scale(b, a.item());
    if (b.numel() == 1 && a.numel() != 1) return scale(a, b.item());
    require_same_shape("mul", a, b);
    const long n = a.numel();
    std::vector<S> out(a.data());
    const S* pb = b.data().data();
    for (long i = 0; i < n; ++i) out[static_cast<size_t>(i)] *= pb[i];
    auto an = a.node(), bn = b.node();
    return make_result<S>("mul", a.shape(), std::move(out), {an, bn}, [an, bn, n](Node<S>& self) {
        const S* g = self.grad.data();
        if (an->needs_grad) {
            if (an->grad.empty()) an->grad.assign(an->value.size(), S(0));
            for (long i = 0; i < n; ++i)
                an->grad[static_cast<size_t>(i)] += g[i] * bn->value[static_cast<size_t>(i)];
        }
        if (bn->needs_grad) {
            if (bn->grad.empty()) bn->grad.assign(bn->value.size(), S(0));
            for (long i = 0; i < n; ++i)
                bn->grad[static_cast<size_t>(i)] += g[i] * an->value[static_cast<size_t>(i)];
        }
    });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S s) {
    const long n = a.numel();
    std::vector<S> out(a.data());
    for (auto& v : out) v *= s;
    auto an = a.node();
    return make_result<S>("scale", a.shape(), std::move(out), {an}, [an, s, n](Node<S>& self) {
        if (!an->needs_grad) return;
        if (an->grad.empty()) an->grad.assign(an->value.size(), S(0));
        for (long i = 0; i < n; ++i) an->grad[static_cast<size_t>(i)] += s * self.grad[static_cast<size_t>(i)];
    });
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S s) {
    const long n = a.numel();
    std::vector<S> out(a.data());
    for (auto& v : out) v += s;
    auto an = a.node();
    return make_result<S>("add_scalar", a.shape(), std::move(out), {an}, [an, n](Node<S>& self) {
        if (an->needs_grad) an->accumulate(self.grad.data(), n);
    });
}

template <class S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& b) {
    if (b.ndim() != 1 || x.ndim() < 1 || x.shape().back() != b.dim(0))
        throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match trailing axis of " +
                         shape_str(x.shape()));
    const long d = b.dim(0);
    const long rows = x.numel() / d;
    std::vector<S> out(x.data());
    const S* pb = b.data().data();
    for (long r = 0; r < rows; ++r)
        for (long j = 0; j < d; ++j) out[static_cast<size_t>(r * d + j)] += pb[j];
    auto xn = x.node(), bn = b.node();
    return make_result<S>("add_bias", x.shape(), std::move(out), {xn, bn},
                          [xn, bn, rows, d](Node<S>& self) {
                              const S* g = self.grad.data();
                              if (xn->needs_grad) xn->accumulate(g, rows * d);
                              if (bn->needs_grad) {
                                  if (bn->grad.empty()) bn->grad.assign(bn->value.size(), S(0));
                                  for (long r = 0; r < rows; ++r)
                                      for (long j = 0; j < d; ++j)
                                          bn->grad[static_cast<size_t>(j)] += g[r * d + j];
                              }
                          });
}

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const long m = a.dim(0), p = a.dim(1), q = b.dim(1);
    std::vector<S> out(static_cast<size_t>(m * q), S(0));
    {
        const S* pa = a.data().data();
        const S* pb = b.data().data();
        S* po = out.data();
        for (long i = 0; i < m; ++i) {
            S* orow = po + i * q;
            const S* arow = pa + i * p;
            for (long k = 0; k < p; ++k) {
                const S av = arow[k];
                if (av == S(0)) continue;
                const S* brow = pb + k * q;
                for (long j = 0; j < q; ++j) orow[j] += av * brow[j];
            }
        }
    }
    auto an = a.node(), bn = b.node();
    return make_result<S>("matmul", {static_cast<int>(m), static_cast<int>(q)}, std::move(out),
                          {an, bn}, [an, bn, m, p, q](Node<S>& self) {
                              const S* g = self.grad.data();
                              if (an->needs_grad) {
                                  if (an->grad.empty()) an->grad.assign(an->value.size(), S(0));
                                  // ga = g . b^T
                                  for (long i = 0; i < m; ++i)
                                      for (long k = 0; k < p; ++k) {
                                          const S* grow = g + i * q;
                                          const S* brow = bn->value.data() + k * q;
                                          S acc = 0;
                                          for (long j = 0; j < q; ++j) acc += grow[j] * brow[j];
                                          an->grad[static_cast<size_t>(i * p + k)] += acc;
                                      }
                              }
                              if (bn->needs_grad) {
                                  if (bn->grad.empty()) bn->grad.assign(bn->value.size(), S(0));
                                  // gb = a^T . g
                                  for (long i = 0; i < m; ++i) {
                                      const S* arow = an->value.data() + i * p;
                                      const S* grow = g + i * q;
                                      for (long k = 0; k < p; ++k) {
                                          const S av = arow[k];
                                          if (av == S(0)) continue;
                                          S* brow = bn->grad.data() + k * q;
                                          for (long j = 0; j < q; ++j) brow[j] += av * grow[j];
                                      }
                                  }
                              }
                          });
}

template <class S>
Tensor<S> transpose2d(const Tensor<S>& x) {
    if (x.ndim() != 2) throw ShapeError("transpose2d: expected rank 2, got " + shape_str(x.shape()));
    const long r = x.dim(0), c = x.dim(1);
    std::vector<S> out(static_cast<size_t>(r * c));
    const S* px = x.data().data();
    for (long i = 0; i < r; ++i)
        for (long j = 0; j < c; ++j) out[static_cast<size_t>(j * r + i)] = px[i * c + j];
    auto xn = x.node();
    return make_result<S>("transpose2d", {static_cast<int>(c), static_cast<int>(r)}, std::move(out),
                          {xn}, [xn, r, c](Node<S>& self) {
                              if (!xn->needs_grad) return;
                              if (xn->grad.empty()) xn->grad.assign(xn->value.size(), S(0));
                              const S* g = self.grad.data();
                              for (long j = 0; j < c; ++j)
                                  for (long i = 0; i < r; ++i)
                                      xn->grad[static_cast<size_t>(i * c + j)] += g[j * r + i];
                          });
}

template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    std::vector<S> out(x.data());
    auto xn = x.node();
    const long n = x.numel();
    return make_result<S>("reshape", std::move(shape), std::move(out), {xn}, [xn, n](Node<S>& self) {
        if (xn->needs_grad) xn->accumulate(self.grad.data(), n);
    });
}

template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: empty input list");
    const Shape& s0 = xs[0].shape();
    long outer, d0, inner;
    split_axis(s0, axis, outer, d0, inner);
    long total_d = 0;
    for (const auto& x : xs) {
        if (x.ndim() != static_cast<int>(s0.size()))
            throw ShapeError("concat: rank mismatch " + shape_str(x.shape()) + " vs " + shape_str(s0));
        for (int i = 0; i < x.ndim(); ++i)
            if (i != axis && x.dim(i) != s0[static_cast<size_t>(i)])
                throw ShapeError("concat: extent mismatch off axis: " + shape_str(x.shape()) + " vs " +
                                 shape_str(s0));
        total_d += x.dim(axis);
    }
    Shape oshape = s0;
    oshape[static_cast<size_t>(axis)] = static_cast<int>(total_d);
    std::vector<S> out(static_cast<size_t>(outer * total_d * inner));
    std::vector<long> offsets;
    long off = 0;
    for (const auto& x : xs) {
        const long d = x.dim(axis);
        const S* px = x.data().data();
        for (long o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * total_d + off) * inner, px + o * d * inner,
                        static_cast<size_t>(d * inner) * sizeof(S));
        offsets.push_back(off);
        off += d;
    }
    std::vector<std::shared_ptr<Node<S>>> inputs;
    for (const auto& x : xs) inputs.push_back(x.node());
    return make_result<S>("concat", std::move(oshape), std::move(out), inputs,
                          [inputs, offsets, outer, total_d, inner](Node<S>& self) {
                              const S* g = self.grad.data();
                              for (size_t t = 0; t < inputs.size(); ++t) {
                                  auto& in = inputs[t];
                                  if (!in->needs_grad) continue;
                                  const long d = static_cast<long>(in->value.size()) / (outer * inner);
                                  if (in->grad.empty()) in->grad.assign(in->value.size(), S(0));
                                  for (long o = 0; o < outer; ++o) {
                                      const S* src = g + (o * total_d + offsets[t]) * inner;
                                      S* dst = in->grad.data() + o * d * inner;
                                      for (long i = 0; i < d * inner; ++i) dst[i] += src[i];
                                  }
                              }
                          });
}

template <class S>
Tensor<S> slice(const Tensor<S>& x, int axis, int start, int len) {
    long outer, d, inner;
    split_axis(x.shape(), axis, outer, d, inner);
    if (start < 0 || len <= 0 || start + len > d)
        throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") outside axis extent " + std::to_string(d));
    Shape oshape = x.shape();
    oshape[static_cast<size_t>(axis)] = len;
    std::vector<S> out(static_cast<size_t>(outer * len * inner));
    const S* px = x.data().data();
    for (long o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * len * inner, px + (o * d + start) * inner,
                    static_cast<size_t>(len * inner) * sizeof(S));
    auto xn = x.node();
    return make_result<S>("slice", std::move(oshape), std::move(out), {xn},
                          [xn, outer, d, inner, start, len](Node<S>& self) {
                              if (!xn->needs_grad) return;
                              if (xn->grad.empty()) xn->grad.assign(xn->value.size(), S(0));
                              const S* g = self.grad.data();
                              for (long o = 0; o < outer; ++o) {
                                  S* dst = xn->grad.data() + (o * d + start) * inner;
                                  const S* src = g + o * len * inner;
                                  for (long i = 0; i < len * inner; ++i) dst[i] += src[i];
                              }
                          });
}

template <class S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
    long outer, d, inner;
    split_axis(x.shape(), axis, outer, d, inner);
    for (S v : x.data())
        if (!std::isfinite(static_cast<double>(v))) throw NumericError("softmax: non-finite input");
    std::vector<S> out(x.data().size());
    const S* px = x.data().data();
    for (long o = 0; o < outer; ++o)
        for (long in = 0; in < inner; ++in) {
            const long base = o * d * inner + in;
            S mx = px[base];
            for (long j = 1; j < d; ++j) mx = std::max(mx, px[base + j * inner]);
            S sum = 0;
            for (long j = 0; j < d; ++j) {
                const S e = std::exp(px[base + j * inner] - mx);
                out[static_cast<size_t>(base + j * inner)] = e;
                sum += e;
            }
            const S isum = S(1) / sum;
            for (long j = 0; j < d; ++j) out[static_cast<size_t>(base + j * inner)] *= isum;
        }
    auto xn = x.node();
    return make_result<S>("softmax", x.shape(), std::move(out), {xn},
                          [xn, outer, d, inner](Node<S>& self) {
                              if (!xn->needs_grad) return;
                              if (xn->grad.empty()) xn->grad.assign(xn->value.size(), S(0));
                              const S* y = self.value.data();
                              const S* g = self.grad.data();
                              for (long o = 0; o < outer; ++o)
                                  for (long in = 0; in < inner; ++in) {
                                      const long base = o * d * inner + in;
                                      S dot = 0;
                                      for (long j = 0; j < d; ++j)
                                          dot += g[base + j * inner] * y[base + j * inner];
                                      for (long j = 0; j < d; ++j) {
                                          const long at = base + j * inner;
                                          xn->grad[static_cast<size_t>(at)] += y[at] * (g[at] - dot);
                                      }
                                  }
                          });
}

template <class S>
Tensor<S> log(const Tensor<S>& x) {
    std::vector<S> out(x.data());
    for (auto& v : out) v = std::log(v);
    auto xn = x.node();
    const long n = x.numel();
    return make_result<S>("log", x.shape(), std::move(out), {xn}, [xn, n](Node<S>& self) {
        if (!xn->needs_grad) return;
        if (xn->grad.empty()) xn->grad.assign(xn->value.size(), S(0));
        for (long i = 0; i < n; ++i)
            xn->grad[static_cast<size_t>(i)] +=
                self.grad[static_cast<size_t>(i)] / xn->value[static_cast<size_t>(i)];
    });
}

template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    std::vector<S> out(x.data());
    for (auto& v : out) v = static_cast<S>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
    auto xn = x.node();
    const long n = x.numel();
    return make_result<S>("gelu", x.shape(), std::move(out), {xn}, [xn, n](Node<S>& self) {
        if (!xn->needs_grad) return;
        if (xn->grad.empty()) xn->grad.assign(xn->value.size(), S(0));
        constexpr double kInvSqrt2pi = 0.39894228040143267794;
        for (long i = 0; i < n; ++i) {
            const double v = static_cast<double>(xn->value[static_cast<size_t>(i)]);
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2pi * std::exp(-0.5 * v * v);
            xn->grad[static_cast<size_t>(i)] +=
                self.grad[static_cast<size_t>(i)] * static_cast<S>(cdf + v * pdf);
        }
    });
}

template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
    const int d = x.shape().back();
    if (gamma.ndim() != 1 || gamma.dim(0) != d || beta.ndim() != 1 || beta.dim(0) != d)
        throw ShapeError("layer_norm: affine params must be [" + std::to_string(d) + "]");
    const long rows = x.numel() / d;
    std::vector<S> out(x.data().size());
    auto xhat = std::make_shared<std::vector<S>>(x.data().size());
    auto inv = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
    const S* px = x.data().data();
    const S* pg = gamma.data().data();
    const S* pb = beta.data().data();
    for (long r = 0; r < rows; ++r) {
        const S* row = px + r * d;
        S mu = 0;
        for (int j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<S>(d);
        S var = 0;
        for (int j = 0; j < d; ++j) {
            const S c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<S>(d);
        const S iv = S(1) / std::sqrt(var + eps);
        (*inv)[static_cast<size_t>(r)] = iv;
        for (int j = 0; j < d; ++j) {
            const S xh = (row[j] - mu) * iv;
            (*xhat)[static_cast<size_t>(r * d + j)] = xh;
            out[static_cast<size_t>(r * d + j)] = pg[j] * xh + pb[j];
        }
    }
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    return make_result<S>("layer_norm", x.shape(), std::move(out), {xn, gn, bn},
                          [xn, gn, bn, xhat, inv, rows, d](Node<S>& self) {
                              const S* g = self.grad.data();
                              if (gn->needs_grad && gn->grad.empty()) gn->grad.assign(gn->value.size(), S(0));
                              if (bn->needs_grad && bn->grad.empty()) bn->grad.assign(bn->value.size(), S(0));
                              if (xn->needs_grad && xn->grad.empty()) xn->grad.assign(xn->value.size(), S(0));
                              for (long r = 0; r < rows; ++r) {
                                  const S* grow = g + r * d;
                                  const S* xh = xhat->data() + r * d;
                                  if (gn->needs_grad || bn->needs_grad) {
                                      for (int j = 0; j < d; ++j) {
                                          if (gn->needs_grad)
                                              gn->grad[static_cast<size_t>(j)] += grow[j] * xh[j];
                                          if (bn->needs_grad) bn->grad[static_cast<size_t>(j)] += grow[j];
                                      }
                                  }
                                  if (xn->needs_grad) {
                                      S sum_gx = 0, sum_gxx = 0;
                                      for (int j = 0; j < d; ++j) {
                                          const S gx = grow[j] * gn->value[static_cast<size_t>(j)];
                                          sum_gx += gx;
                                          sum_gxx += gx * xh[j];
                                      }
                                      const S iv = (*inv)[static_cast<size_t>(r)];
                                      const S invd = S(1) / static_cast<S>(d);
                                      for (int j = 0; j < d; ++j) {
                                          const S gx = grow[j] * gn->value[static_cast<size_t>(j)];
                                          xn->grad[static_cast<size_t>(r * d + j)] +=
                                              iv * (gx - invd * sum_gx - xh[j] * invd * sum_gxx);
                                      }
                                  }
                              }
                          });
}

template <class S>
Tensor<S> l2_normalize(const Tensor<S>& x, S eps) {
    const int d = x.shape().back();
    const long rows = x.numel() / d;
    std::vector<S> out(x.data().size());
    auto norms = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
    const S* px = x.data().data();
    for (long r = 0; r < rows; ++r) {
        S s = 0;
        for (int j = 0; j < d; ++j) s += px[r * d + j] * px[r * d + j];
        S nrm = std::sqrt(s);
        if (nrm < eps) nrm = eps;
        (*norms)[static_cast<size_t>(r)] = nrm;
        for (int j = 0; j < d; ++j) out[static_cast<size_t>(r * d + j)] = px[r * d + j] / nrm;
    }
    auto xn = x.node();
    return make_result<S>("l2_normalize", x.shape(), std::move(out), {xn},
                          [xn, norms, rows, d](Node<S>& self) {
                              if (!xn->needs_grad) return;
                              if (xn->grad.empty()) xn->grad.assign(xn->value.size(), S(0));
                              const S* y = self.value.data();
                              const S* g = self.grad.data();
                              for (long r = 0; r < rows; ++r) {
                                  S dot = 0;
                                  for (int j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
                                  const S inrm = S(1) / (*norms)[static_cast<size_t>(r)];
                                  for (int j = 0; j < d; ++j)
                                      xn->grad[static_cast<size_t>(r * d + j)] +=
                                          (g[r * d + j] - y[r * d + j] * dot) * inrm;
                              }
                          });
}

namespace {

struct ConvDims {
    long h, w, cin, cout, kh, kw, cg, oh, ow, pt, pl;
    int stride, groups;
};

template <class S>
ConvDims conv_dims(const Tensor<S>& x, const Tensor<S>& wt, const Tensor<S>& b, int stride,
                   int groups) {
    if (x.ndim() != 3) throw ShapeError("conv2d: input must be [H,W,C], got " + shape_str(x.shape()));
    if (wt.ndim() != 4)
        throw ShapeError("conv2d: weight must be [Cout,kh,kw,Cin/groups], got " + shape_str(wt.shape()));
    ConvDims cd{};
    cd.h = x.dim(0);
    cd.w = x.dim(1);
    cd.cin = x.dim(2);
    cd.cout = wt.dim(0);
    cd.kh = wt.dim(1);
    cd.kw = wt.dim(2);
    cd.cg = wt.dim(3);
    cd.stride = stride;
    cd.groups = groups;
    if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
    if (cd.kh % 2 == 0 || cd.kw % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
    if (groups < 1 || cd.cin % groups || cd.cout % groups)
        throw ShapeError("conv2d: groups must divide channel counts");
    if (cd.cg != cd.cin / groups)
        throw ShapeError("conv2d: weight channels " + std::to_string(cd.cg) + " != Cin/groups " +
                         std::to_string(cd.cin / groups));
    if (b.defined() && (b.ndim() != 1 || b.dim(0) != cd.cout))
        throw ShapeError("conv2d: bias must be [Cout]");
    cd.oh = (cd.h + stride - 1) / stride;
    cd.ow = (cd.w + stride - 1) / stride;
    const long pad_h = std::max<long>(0, (cd.oh - 1) * stride + cd.kh - cd.h);
    const long pad_w = std::max<long>(0, (cd.ow - 1) * stride + cd.kw - cd.w);
    cd.pt = pad_h / 2;
    cd.pl = pad_w / 2;
    return cd;
}

}  // namespace

template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& wt, const Tensor<S>& b, int stride,
                 int groups) {
    const ConvDims cd = conv_dims(x, wt, b, stride, groups);
    std::vector<S> out(static_cast<size_t>(cd.oh * cd.ow * cd.cout), S(0));
    const S* px = x.data().data();
    const S* pw = wt.data().data();
    const long coutg = cd.cout / cd.groups;
    for (long oy = 0; oy < cd.oh; ++oy)
        for (long ox = 0; ox < cd.ow; ++ox) {
            S* optr = out.data() + (oy * cd.ow + ox) * cd.cout;
            for (long ky = 0; ky < cd.kh; ++ky) {
                const long iy = oy * cd.stride - cd.pt + ky;
                if (iy < 0 || iy >= cd.h) continue;
                for (long kx = 0; kx < cd.kw; ++kx) {
                    const long ix = ox * cd.stride - cd.pl + kx;
                    if (ix < 0 || ix >= cd.w) continue;
                    const S* xptr = px + (iy * cd.w + ix) * cd.cin;
                    for (long g = 0; g < cd.groups; ++g) {
                        const S* xg = xptr + g * cd.cg;
                        for (long ocl = 0; ocl < coutg; ++ocl) {
                            const long oc = g * coutg + ocl;
                            const S* wptr = pw + ((oc * cd.kh + ky) * cd.kw + kx) * cd.cg;
                            S acc = 0;
                            for (long ic = 0; ic < cd.cg; ++ic) acc += xg[ic] * wptr[ic];
                            optr[oc] += acc;
                        }
                    }
                }
            }
            if (b.defined()) {
                const S* pb = b.data().data();
                for (long oc = 0; oc < cd.cout; ++oc) optr[oc] += pb[oc];
            }
        }
    auto xn = x.node(), wn = wt.node();
    auto bn = b.defined() ? b.node() : nullptr;
    std::vector<std::shared_ptr<Node<S>>> inputs{xn, wn};
    if (bn) inputs.push_back(bn);
    return make_result<S>(
        "conv2d", {static_cast<int>(cd.oh), static_cast<int>(cd.ow), static_cast<int>(cd.cout)},
        std::move(out), inputs, [xn, wn, bn, cd, coutg](Node<S>& self) {
            const S* g = self.grad.data();
            const bool need_x = xn->needs_grad, need_w = wn->needs_grad;
            const bool need_b = bn && bn->needs_grad;
            if (need_x && xn->grad.empty()) xn->grad.assign(xn->value.size(), S(0));
            if (need_w && wn->grad.empty()) wn->grad.assign(wn->value.size(), S(0));
            if (need_b && bn->grad.empty()) bn->grad.assign(bn->value.size(), S(0));
            for (long oy = 0; oy < cd.oh; ++oy)
                for (long ox = 0; ox < cd.ow; ++ox) {
                    const S* gptr = g + (oy * cd.ow + ox) * cd.cout;
                    if (need_b)
                        for (long oc = 0; oc < cd.cout; ++oc) bn->grad[static_cast<size_t>(oc)] += gptr[oc];
                    if (!need_x && !need_w) continue;
                    for (long ky = 0; ky < cd.kh; ++ky) {
                        const long iy = oy * cd.stride - cd.pt + ky;
                        if (iy < 0 || iy >= cd.h) continue;
                        for (long kx = 0; kx < cd.kw; ++kx) {
                            const long ix = ox * cd.stride - cd.pl + kx;
                            if (ix < 0 || ix >= cd.w) continue;
                            const long xoff = (iy * cd.w + ix) * cd.cin;
                            for (long gr = 0; gr < cd.groups; ++gr) {
                                for (long ocl = 0; ocl < coutg; ++ocl) {
                                    const long oc = gr * coutg + ocl;
                                    const S gv = gptr[oc];
                                    if (gv == S(0)) continue;
                                    const long woff = ((oc * cd.kh + ky) * cd.kw + kx) * cd.cg;
                                    for (long ic = 0; ic < cd.cg; ++ic) {
                                        const long xi = xoff + gr * cd.cg + ic;
                                        if (need_x)
                                            xn->grad[static_cast<size_t>(xi)] +=
                                                gv * wn->value[static_cast<size_t>(woff + ic)];
                                        if (need_w)
                                            wn->grad[static_cast<size_t>(woff + ic)] +=
                                                gv * xn->value[static_cast<size_t>(xi)];
                                    }
                                }
                            }
                        }
                    }
                }
        });
}

template <class S>
Tensor<S> upsample_nearest2(const Tensor<S>& x) {
    if (x.ndim() != 3) throw ShapeError("upsample_nearest2: input must be [H,W,C]");
    const long h = x.dim(0), w = x.dim(1), c = x.dim(2);
    std::vector<S> out(static_cast<size_t>(4 * h * w * c));
    const S* px = x.data().data();
    for (long y = 0; y < 2 * h; ++y)
        for (long xx = 0; xx < 2 * w; ++xx)
            std::memcpy(out.data() + (y * 2 * w + xx) * c, px + ((y / 2) * w + (xx / 2)) * c,
                        static_cast<size_t>(c) * sizeof(S));
    auto xn = x.node();
    return make_result<S>("upsample_nearest2",
                          {static_cast<int>(2 * h), static_cast<int>(2 * w), static_cast<int>(c)},
                          std::move(out), {xn}, [xn, h, w, c](Node<S>& self) {
                              if (!xn->needs_grad) return;
                              if (xn->grad.empty()) xn->grad.assign(xn->value.size(), S(0));
                              const S* g = self.grad.data();
                              for (long y = 0; y < 2 * h; ++y)
                                  for (long xx = 0; xx < 2 * w; ++xx) {
                                      S* dst = xn->grad.data() + ((y / 2) * w + (xx / 2)) * c;
                                      const S* src = g + (y * 2 * w + xx) * c;
                                      for (long ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                                  }
                          });
}

template <class S>
Tensor<S> space_to_depth(const Tensor<S>& x, int p) {
    if (x.ndim() != 3) throw ShapeError("space_to_depth: input must be [H,W,C]");
    const long h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (p < 1 || h % p || w % p)
        throw ShapeError("space_to_depth: extents " + shape_str(x.shape()) + " not divisible by " +
                         std::to_string(p));
    const long oh = h / p, ow = w / p, oc = p * p * c;
    std::vector<S> out(x.data().size());
    const S* px = x.data().data();
    for (long oy = 0; oy < oh; ++oy)
        for (long ox = 0; ox < ow; ++ox)
            for (long dy = 0; dy < p; ++dy)
                for (long dx = 0; dx < p; ++dx)
                    std::memcpy(out.data() + ((oy * ow + ox) * oc + (dy * p + dx) * c),
                                px + (((oy * p + dy) * w) + ox * p + dx) * c,
                                static_cast<size_t>(c) * sizeof(S));
    auto xn = x.node();
    return make_result<S>("space_to_depth",
                          {static_cast<int>(oh), static_cast<int>(ow), static_cast<int>(oc)},
                          std::move(out), {xn}, [xn, oh, ow, oc, p, w, c](Node<S>& self) {
                              if (!xn->needs_grad) return;
                              if (xn->grad.empty()) xn->grad.assign(xn->value.size(), S(0));
                              const S* g = self.grad.data();
                              for (long oy = 0; oy < oh; ++oy)
                                  for (long ox = 0; ox < ow; ++ox)
                                      for (long dy = 0; dy < p; ++dy)
                                          for (long dx = 0; dx < p; ++dx) {
                                              S* dst = xn->grad.data() +
                                                       (((oy * p + dy) * w) + ox * p + dx) * c;
                                              const S* src =
                                                  g + ((oy * ow + ox) * oc + (dy * p + dx) * c);
                                              for (long ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                                          }
                          });
}

template <class S>
Tensor<S> depth_to_space(const Tensor<S>& x, int p) {
    if (x.ndim() != 3) throw ShapeError("depth_to_space: input must be [H,W,C]");
    const long h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (p < 1 || c % (p * p))
        throw ShapeError("depth_to_space: channels " + std::to_string(c) + " not divisible by " +
                         std::to_string(p * p));
    const long oc = c / (p * p), oh = h * p, ow = w * p;
    std::vector<S> out(x.data().size());
    const S* px = x.data().data();
    for (long y = 0; y < h; ++y)
        for (long xx = 0; xx < w; ++xx)
            for (long dy = 0; dy < p; ++dy)
                for (long dx = 0; dx < p; ++dx)
                    std::memcpy(out.data() + (((y * p + dy) * ow) + xx * p + dx) * oc,
                                px + ((y * w + xx) * c + (dy * p + dx) * oc),
                                static_cast<size_t>(oc) * sizeof(S));
    auto xn = x.node();
    return make_result<S>("depth_to_space",
                          {static_cast<int>(oh), static_cast<int>(ow), static_cast<int>(oc)},
                          std::move(out), {xn}, [xn, h, w, c, oc, ow, p](Node<S>& self) {
                              if (!xn->needs_grad) return;
                              if (xn->grad.empty()) xn->grad.assign(xn->value.size(), S(0));
                              const S* g = self.grad.data();
                              for (long y = 0; y < h; ++y)
                                  for (long xx = 0; xx < w; ++xx)
                                      for (long dy = 0; dy < p; ++dy)
                                          for (long dx = 0; dx < p; ++dx) {
                                              S* dst = xn->grad.data() +
                                                       ((y * w + xx) * c + (dy * p + dx) * oc);
                                              const S* src =
                                                  g + (((y * p + dy) * ow) + xx * p + dx) * oc;
                                              for (long ch = 0; ch < oc; ++ch) dst[ch] += src[ch];
                                          }
                          });
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& x) {
    S acc = 0;
    for (S v : x.data()) acc += v;
    auto xn = x.node();
    const long n = x.numel();
    return make_result<S>("sum_all", {1}, {acc}, {xn}, [xn, n](Node<S>& self) {
        if (!xn->needs_grad) return;
        if (xn->grad.empty()) xn->grad.assign(xn->value.size(), S(0));
        const S g = self.grad[0];
        for (long i = 0; i < n; ++i) xn->grad[static_cast<size_t>(i)] += g;
    });
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& x) {
    S acc = 0;
    for (S v : x.data()) acc += v;
    const long n = x.numel();
    acc /= static_cast<S>(n);
    auto xn = x.node();
    return make_result<S>("mean_all", {1}, {acc}, {xn}, [xn, n](Node<S>& self) {
        if (!xn->needs_grad) return;
        if (xn->grad.empty()) xn->grad.assign(xn->value.size(), S(0));
        const S g = self.grad[0] / static_cast<S>(n);
        for (long i = 0; i < n; ++i) xn->grad[static_cast<size_t>(i)] += g;
    });
}

template <class S>
Tensor<S> smooth_l1(const Tensor<S>& pred, const Tensor<S>& target, S beta) {
    require_same_shape("smooth_l1", pred, target);
    if (!(beta > S(0))) throw ValueError("smooth_l1: beta must be positive");
    const long n = pred.numel();
    const S* pp = pred.data().data();
    const S* pt = target.data().data();
    S acc = 0;
    for (long i = 0; i < n; ++i) {
        const S d = pp[i] - pt[i];
        const S a = std::abs(d);
        acc += a < beta ? S(0.5) * d * d / beta : a - S(0.5) * beta;
    }
    acc /= static_cast<S>(n);
    auto pn = pred.node(), tn = target.node();
    return make_result<S>("smooth_l1", {1}, {acc}, {pn, tn}, [pn, tn, beta, n](Node<S>& self) {
        const S g = self.grad[0] / static_cast<S>(n);
        if (pn->needs_grad && pn->grad.empty()) pn->grad.assign(pn->value.size(), S(0));
        if (tn->needs_grad && tn->grad.empty()) tn->grad.assign(tn->value.size(), S(0));
        for (long i = 0; i < n; ++i) {
            const S d = pn->value[static_cast<size_t>(i)] - tn->value[static_cast<size_t>(i)];
            const S dd = std::abs(d) < beta ? d / beta : (d > S(0) ? S(1) : S(-1));
            if (pn->needs_grad) pn->grad[static_cast<size_t>(i)] += g * dd;
            if (tn->needs_grad) tn->grad[static_cast<size_t>(i)] -= g * dd;
        }
    });
}

template <class S>
Tensor<S> clamp01(const Tensor<S>& x) {
    std::vector<S> out(x.data());
    for (auto& v : out) v = std::min(S(1), std::max(S(0), v));
    auto xn = x.node();
    const long n = x.numel();
    // Subgradient 1 on the closed interval, 0 outside.
    return make_result<S>("clamp01", x.shape(), std::move(out), {xn}, [xn, n](Node<S>& self) {
        if (!xn->needs_grad) return;
        if (xn->grad.empty()) xn->grad.assign(xn->value.size(), S(0));
        for (long i = 0; i < n; ++i) {
            const S v = xn->value[static_cast<size_t>(i)];
            if (v >= S(0) && v <= S(1))
                xn->grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(i)];
        }
    });
}

#define OMNIRESTORE_INSTANTIATE(S)                                                               \
    template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);                               \
    template Tensor<S> sub<S>(const Tensor<S>&, const Tensor<S>&);                               \
    template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);                               \
    template Tensor<S> scale<S>(const Tensor<S>&, S);                                            \
    template Tensor<S> add_scalar<S>(const Tensor<S>&, S);                                       \
    template Tensor<S> add_bias<S>(const Tensor<S>&, const Tensor<S>&);                          \
    template Tensor<S> matmul<S>(const Tensor<S>&, const Tensor<S>&);                            \
    template Tensor<S> transpose2d<S>(const Tensor<S>&);                                         \
    template Tensor<S> reshape<S>(const Tensor<S>&, Shape);                                      \
    template Tensor<S> concat<S>(const std::vector<Tensor<S>>&, int);                            \
    template Tensor<S> slice<S>(const Tensor<S>&, int, int, int);                                \
    template Tensor<S> softmax<S>(const Tensor<S>&, int);                                        \
    template Tensor<S> log<S>(const Tensor<S>&);                                                 \
    template Tensor<S> gelu<S>(const Tensor<S>&);                                                \
    template Tensor<S> layer_norm<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);   \
    template Tensor<S> l2_normalize<S>(const Tensor<S>&, S);                                     \
    template Tensor<S> conv2d<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int);\
    template Tensor<S> upsample_nearest2<S>(const Tensor<S>&);                                   \
    template Tensor<S> space_to_depth<S>(const Tensor<S>&, int);                                 \
    template Tensor<S> depth_to_space<S>(const Tensor<S>&, int);                                 \
    template Tensor<S> sum_all<S>(const Tensor<S>&);                                             \
    template Tensor<S> mean_all<S>(const Tensor<S>&);                                            \
    template Tensor<S> smooth_l1<S>(const Tensor<S>&, const Tensor<S>&, S);                      \
    template Tensor<S> clamp01<S>(const Tensor<S>&);

OMNIRESTORE_INSTANTIATE(float)
OMNIRESTORE_INSTANTIATE(double)

#undef OMNIRESTORE_INSTANTIATE

}  // namespace omnirestore
