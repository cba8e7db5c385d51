#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "conv_kernels.hpp"
#include "msfa/autodiff.hpp"
#include "msfa/errors.hpp"

namespace msfa::ad {
namespace {

void require_same_graph(Var a, Var b, const char* op) {
  if (&a.graph() != &b.graph()) throw ValueError(std::string(op) + ": operands from different graphs");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Accumulate into the gradient of input `k` of node `self` if that input needs it.
template <typename F>
void feed(Graph& g, std::uint32_t self, std::size_t k, F&& fn) {
  const auto in = g.inputs(self)[k];
  if (!g.requires_grad(in)) return;
  fn(g.grad(in), g.value(in));
}

// Row-major decomposition around one axis: [outer, extent, inner].
struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) throw ShapeError(std::string(op) + ": axis out of range for " + shape_str(s));
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename Fwd, typename Deriv>
Var unary(const char* op, Var x, Fwd fwd, Deriv deriv) {
  Tensor out = Tensor::like(x.value());
  const auto& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return x.graph().record(op, std::move(out), {x.id()}, [deriv](Graph& g, std::uint32_t self) {
    const auto& gy = g.grad(self);
    const auto& y = g.value(self);
    feed(g, self, 0, [&](Tensor& gx, const Tensor& xv) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * deriv(xv[i], y[i]);
    });
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Var add(Var a, Var b) {
  require_same_graph(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.graph().record("add", std::move(out), {a.id(), b.id()}, [](Graph& g, std::uint32_t self) {
    const auto& gy = g.grad(self);
    for (std::size_t k = 0; k < 2; ++k) {
      feed(g, self, k, [&](Tensor& gx, const Tensor&) {
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
      });
    }
  });
}

Var sub(Var a, Var b) {
  require_same_graph(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.graph().record("sub", std::move(out), {a.id(), b.id()}, [](Graph& g, std::uint32_t self) {
    const auto& gy = g.grad(self);
    feed(g, self, 0, [&](Tensor& gx, const Tensor&) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    });
    feed(g, self, 1, [&](Tensor& gx, const Tensor&) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] -= gy[i];
    });
  });
}

Var mul(Var a, Var b) {
  require_same_graph(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.graph().record("mul", std::move(out), {a.id(), b.id()}, [](Graph& g, std::uint32_t self) {
    const auto& gy = g.grad(self);
    const auto& av = g.value(g.inputs(self)[0]);
    const auto& bv = g.value(g.inputs(self)[1]);
    feed(g, self, 0, [&](Tensor& gx, const Tensor&) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * bv[i];
    });
    feed(g, self, 1, [&](Tensor& gx, const Tensor&) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * av[i];
    });
  });
}

Var div(Var a, Var b) {
  require_same_graph(a, b, "div");
  require_same_shape(a.value(), b.value(), "div");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  return a.graph().record("div", std::move(out), {a.id(), b.id()}, [](Graph& g, std::uint32_t self) {
    const auto& gy = g.grad(self);
    const auto& y = g.value(self);
    const auto& bv = g.value(g.inputs(self)[1]);
    feed(g, self, 0, [&](Tensor& gx, const Tensor&) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] / bv[i];
    });
    feed(g, self, 1, [&](Tensor& gx, const Tensor&) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] -= gy[i] * y[i] / bv[i];
    });
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= c;
  return a.graph().record("scale", std::move(out), {a.id()}, [c](Graph& g, std::uint32_t self) {
    const auto& gy = g.grad(self);
    feed(g, self, 0, [&](Tensor& gx, const Tensor&) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c * gy[i];
    });
  });
}

Var shift(Var a, double c) {
  Tensor out = a.value();
  for (auto& v : out.data()) v += c;
  return a.graph().record("shift", std::move(out), {a.id()}, [](Graph& g, std::uint32_t self) {
    const auto& gy = g.grad(self);
    feed(g, self, 0, [&](Tensor& gx, const Tensor&) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    });
  });
}

Var matmul(Var a, Var b) {
  require_same_graph(a, b, "matmul");
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || (bv.rank() != 1 && bv.rank() != 2)) {
    throw ShapeError("matmul: expected [m,k] x [k] or [m,k] x [k,n], got " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1);
  const bool vec = bv.rank() == 1;
  const std::size_t n = vec ? 1 : bv.dim(1);
  if (bv.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  Tensor out(vec ? Shape{m} : Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data().data() + p * n;
      double* orow = out.data().data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return a.graph().record("matmul", std::move(out), {a.id(), b.id()}, [m, k, n](Graph& g, std::uint32_t self) {
    const auto& gy = g.grad(self);
    const auto& av = g.value(g.inputs(self)[0]);
    const auto& bv = g.value(g.inputs(self)[1]);
    // dA = dY B^T
    feed(g, self, 0, [&](Tensor& ga, const Tensor&) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += gy[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    });
    // dB = A^T dY
    feed(g, self, 1, [&](Tensor& gb, const Tensor&) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * gy[i * n + j];
        }
      }
    });
  });
}

namespace {

template <typename T>
std::vector<T> to_precision(const Tensor& t) {
  return std::vector<T>(t.data().begin(), t.data().end());
}

}  // namespace

Var conv3d(Var x, Var w, Var b) {
  require_same_graph(x, w, "conv3d");
  require_same_graph(x, b, "conv3d");
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = b.value();
  if (xv.rank() != 4 || wv.rank() != 5 || bv.rank() != 1) {
    throw ShapeError("conv3d: expected x [Ci,D,H,W], w [Co,Ci,kd,kh,kw], b [Co]; got " + shape_str(xv.shape()) +
                     ", " + shape_str(wv.shape()) + ", " + shape_str(bv.shape()));
  }
  detail::ConvDims s{xv.dim(0), wv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(2), wv.dim(3), wv.dim(4)};
  if (wv.dim(1) != s.ci || bv.dim(0) != s.co) throw ShapeError("conv3d: channel mismatch");
  if (s.kd % 2 == 0 || s.kh % 2 == 0 || s.kw % 2 == 0) throw ShapeError("conv3d: kernel extents must be odd");
  if (s.d == 0 || s.h == 0 || s.w == 0) throw ShapeError("conv3d: empty spatial extent");

  Tensor out(Shape{s.co, s.d, s.h, s.w});
  const Precision prec = x.graph().precision();
  if (prec == Precision::f32) {
    auto xf = to_precision<float>(xv), wf = to_precision<float>(wv), bf = to_precision<float>(bv);
    std::vector<float> yf(out.size());
    detail::conv3d_forward<float>(s, xf.data(), wf.data(), bf.data(), yf.data());
    std::copy(yf.begin(), yf.end(), out.data().begin());
  } else {
    detail::conv3d_forward<double>(s, xv.data().data(), wv.data().data(), bv.data().data(), out.data().data());
  }

  return x.graph().record(
      "conv3d", std::move(out), {x.id(), w.id(), b.id()}, [s, prec](Graph& g, std::uint32_t self) {
        const auto& gy = g.grad(self);
        const auto ins = g.inputs(self);
        const auto& xv = g.value(ins[0]);
        const auto& wv = g.value(ins[1]);
        const bool need_x = g.requires_grad(ins[0]);
        const bool need_w = g.requires_grad(ins[1]) || g.requires_grad(ins[2]);
        if (prec == Precision::f32) {
          auto gyf = to_precision<float>(gy);
          if (need_x) {
            auto wf = to_precision<float>(wv);
            std::vector<float> gxf(xv.size(), 0.0f);
            detail::conv3d_backward_input<float>(s, gyf.data(), wf.data(), gxf.data());
            auto& gx = g.grad(ins[0]);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gxf[i];
          }
          if (need_w) {
            auto xf = to_precision<float>(xv);
            std::vector<float> gwf(wv.size(), 0.0f), gbf(s.co, 0.0f);
            detail::conv3d_backward_weight<float>(s, gyf.data(), xf.data(), gwf.data(), gbf.data());
            if (g.requires_grad(ins[1])) {
              auto& gw = g.grad(ins[1]);
              for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += gwf[i];
            }
            if (g.requires_grad(ins[2])) {
              auto& gb = g.grad(ins[2]);
              for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gbf[i];
            }
          }
          return;
        }
        if (need_x) {
          detail::conv3d_backward_input<double>(s, gy.data().data(), wv.data().data(),
                                                g.grad(ins[0]).data().data());
        }
        if (need_w) {
          Tensor gw = Tensor::like(wv);
          Tensor gb(Shape{s.co});
          detail::conv3d_backward_weight<double>(s, gy.data().data(), xv.data().data(), gw.data().data(),
                                                 gb.data().data());
          if (g.requires_grad(ins[1])) {
            auto& dst = g.grad(ins[1]);
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gw[i];
          }
          if (g.requires_grad(ins[2])) {
            auto& dst = g.grad(ins[2]);
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gb[i];
          }
        }
      });
}

Var softmax(Var x, std::size_t axis) {
  const auto& xv = x.value();
  const auto sp = split_axis(xv.shape(), axis, "softmax");
  if (sp.extent == 0) throw ShapeError("softmax: empty axis");
  Tensor out = Tensor::like(xv);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.extent * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < sp.extent; ++e) mx = std::max(mx, xv[base + e * sp.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < sp.extent; ++e) {
        const double v = std::exp(xv[base + e * sp.inner] - mx);
        out[base + e * sp.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] /= z;
    }
  }
  return x.graph().record("softmax", std::move(out), {x.id()}, [sp](Graph& g, std::uint32_t self) {
    const auto& gy = g.grad(self);
    const auto& y = g.value(self);
    feed(g, self, 0, [&](Tensor& gx, const Tensor&) {
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
          const std::size_t base = o * sp.extent * sp.inner + in;
          double dot = 0.0;
          for (std::size_t e = 0; e < sp.extent; ++e) dot += gy[base + e * sp.inner] * y[base + e * sp.inner];
          for (std::size_t e = 0; e < sp.extent; ++e) {
            const std::size_t i = base + e * sp.inner;
            gx[i] += y[i] * (gy[i] - dot);
          }
        }
      }
    });
  });
}

Var sigmoid(Var x) {
  return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var log(Var x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var clamp(Var x, double lo, double hi) {
  if (!(lo <= hi)) throw ValueError("clamp: lo > hi");
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var sum(Var x) {
  const auto& xv = x.value();
  double acc = 0.0;
  for (double v : xv.data()) acc += v;
  return x.graph().record("sum", Tensor::scalar(acc), {x.id()}, [](Graph& g, std::uint32_t self) {
    const double gy = g.grad(self)[0];
    feed(g, self, 0, [&](Tensor& gx, const Tensor&) {
      for (auto& v : gx.data()) v += gy;
    });
  });
}

Var mean(Var x) {
  const std::size_t n = x.size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var sum_axis(Var x, std::size_t axis) {
  const auto& xv = x.value();
  const auto sp = split_axis(xv.shape(), axis, "sum_axis");
  Shape os = xv.shape();
  os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(os);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t e = 0; e < sp.extent; ++e) {
      const double* src = xv.data().data() + (o * sp.extent + e) * sp.inner;
      double* dst = out.data().data() + o * sp.inner;
      for (std::size_t in = 0; in < sp.inner; ++in) dst[in] += src[in];
    }
  }
  return x.graph().record("sum_axis", std::move(out), {x.id()}, [sp](Graph& g, std::uint32_t self) {
    const auto& gy = g.grad(self);
    feed(g, self, 0, [&](Tensor& gx, const Tensor&) {
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t e = 0; e < sp.extent; ++e) {
          double* dst = gx.data().data() + (o * sp.extent + e) * sp.inner;
          const double* src = gy.data().data() + o * sp.inner;
          for (std::size_t in = 0; in < sp.inner; ++in) dst[in] += src[in];
        }
      }
    });
  });
}

Var mean_axis(Var x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "mean_axis");
  if (sp.extent == 0) throw ShapeError("mean_axis: empty axis");
  return scale(sum_axis(x, axis), 1.0 / static_cast<double>(sp.extent));
}

Var max_axis(Var x, std::size_t axis) {
  const auto& xv = x.value();
  const auto sp = split_axis(xv.shape(), axis, "max_axis");
  if (sp.extent == 0) throw ShapeError("max_axis: empty axis");
  Shape os = xv.shape();
  os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(os);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      std::size_t best = o * sp.extent * sp.inner + in;
      for (std::size_t e = 1; e < sp.extent; ++e) {
        const std::size_t i = (o * sp.extent + e) * sp.inner + in;
        if (xv[i] > xv[best]) best = i;
      }
      out[o * sp.inner + in] = xv[best];
      argmax[o * sp.inner + in] = best;
    }
  }
  std::vector<std::uint32_t> choices(argmax.begin(), argmax.end());
  auto y = x.graph().record("max_axis", std::move(out), {x.id()},
                            [argmax = std::move(argmax)](Graph& g, std::uint32_t self) {
                              const auto& gy = g.grad(self);
                              feed(g, self, 0, [&](Tensor& gx, const Tensor&) {
                                for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += gy[i];
                              });
                            });
  x.graph().set_branch(y.id(), std::move(choices));
  return y;
}

namespace {

struct Bin {
  std::size_t begin, end;
};

std::vector<Bin> adaptive_bins(std::size_t extent, std::size_t n) {
  std::vector<Bin> bins(n);
  for (std::size_t i = 0; i < n; ++i) {
    bins[i].begin = (i * extent) / n;
    bins[i].end = ((i + 1) * extent + n - 1) / n;
  }
  return bins;
}

}  // namespace

Var adaptive_avg_pool3d(Var x, std::size_t od, std::size_t oh, std::size_t ow) {
  const auto& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("adaptive_avg_pool3d: expected [C,D,H,W], got " + shape_str(xv.shape()));
  if (od == 0 || oh == 0 || ow == 0) throw ShapeError("adaptive_avg_pool3d: empty output grid");
  const std::size_t C = xv.dim(0), D = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (D == 0 || H == 0 || W == 0) throw ShapeError("adaptive_avg_pool3d: empty input grid");
  auto bz = adaptive_bins(D, od), by = adaptive_bins(H, oh), bx = adaptive_bins(W, ow);
  Tensor out(Shape{C, od, oh, ow});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < od; ++i) {
      for (std::size_t j = 0; j < oh; ++j) {
        for (std::size_t k = 0; k < ow; ++k) {
          double acc = 0.0;
          for (std::size_t z = bz[i].begin; z < bz[i].end; ++z)
            for (std::size_t y = by[j].begin; y < by[j].end; ++y)
              for (std::size_t xx = bx[k].begin; xx < bx[k].end; ++xx) acc += xv[((c * D + z) * H + y) * W + xx];
          const double cnt = static_cast<double>((bz[i].end - bz[i].begin) * (by[j].end - by[j].begin) *
                                                 (bx[k].end - bx[k].begin));
          out[((c * od + i) * oh + j) * ow + k] = acc / cnt;
        }
      }
    }
  }
  return x.graph().record(
      "adaptive_avg_pool3d", std::move(out), {x.id()},
      [=](Graph& g, std::uint32_t self) {
        const auto& gy = g.grad(self);
        feed(g, self, 0, [&](Tensor& gx, const Tensor&) {
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < od; ++i)
              for (std::size_t j = 0; j < oh; ++j)
                for (std::size_t k = 0; k < ow; ++k) {
                  const double cnt = static_cast<double>((bz[i].end - bz[i].begin) * (by[j].end - by[j].begin) *
                                                         (bx[k].end - bx[k].begin));
                  const double v = gy[((c * od + i) * oh + j) * ow + k] / cnt;
                  for (std::size_t z = bz[i].begin; z < bz[i].end; ++z)
                    for (std::size_t y = by[j].begin; y < by[j].end; ++y)
                      for (std::size_t xx = bx[k].begin; xx < bx[k].end; ++xx) gx[((c * D + z) * H + y) * W + xx] += v;
                }
        });
      });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Graph& graph = parts[0].graph();
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  Shape os = first;
  os[axis] = 0;
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    require_same_graph(parts[0], p, "concat");
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) throw ShapeError("concat: extent mismatch off the concat axis");
    }
    os[axis] += s[axis];
    ids.push_back(p.id());
    extents.push_back(s[axis]);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Tensor out(os);
  const std::size_t total = os[axis];
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.data().data() + o * extents[p] * inner, extents[p] * inner,
                  out.data().data() + (o * total + offset) * inner);
    }
    offset += extents[p];
  }
  return graph.record("concat", std::move(out), std::move(ids),
                      [extents, outer, inner, total](Graph& g, std::uint32_t self) {
                        const auto& gy = g.grad(self);
                        std::size_t offset = 0;
                        for (std::size_t p = 0; p < extents.size(); ++p) {
                          feed(g, self, p, [&](Tensor& gx, const Tensor&) {
                            for (std::size_t o = 0; o < outer; ++o) {
                              const double* src = gy.data().data() + (o * total + offset) * inner;
                              double* dst = gx.data().data() + o * extents[p] * inner;
                              for (std::size_t i = 0; i < extents[p] * inner; ++i) dst[i] += src[i];
                            }
                          });
                          offset += extents[p];
                        }
                      });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var broadcast_to(Var x, const Shape& shape) {
  const auto& xv = x.value();
  const Shape& src = xv.shape();
  if (src.size() != shape.size()) {
    throw ShapeError("broadcast_to: rank mismatch " + shape_str(src) + " -> " + shape_str(shape));
  }
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] != 1 && src[i] != shape[i]) {
      throw ShapeError("broadcast_to: cannot expand " + shape_str(src) + " to " + shape_str(shape));
    }
  }
  // Source offset for every output element.
  const std::size_t n = shape_size(shape);
  std::vector<std::size_t> src_index(n);
  const std::size_t rank = shape.size();
  std::vector<std::size_t> src_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) src_stride[i - 1] = src_stride[i] * src[i];
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t off = 0;
    for (std::size_t a = 0; a < rank; ++a) off += (src[a] == 1 ? 0 : idx[a]) * src_stride[a];
    src_index[flat] = off;
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  Tensor out(shape);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[src_index[i]];
  return x.graph().record("broadcast", std::move(out), {x.id()},
                          [src_index = std::move(src_index)](Graph& g, std::uint32_t self) {
                            const auto& gy = g.grad(self);
                            feed(g, self, 0, [&](Tensor& gx, const Tensor&) {
                              for (std::size_t i = 0; i < src_index.size(); ++i) gx[src_index[i]] += gy[i];
                            });
                          });
}

Var reshape(Var x, const Shape& shape) {
  Tensor out = x.value().reshaped(shape);
  return x.graph().record("reshape", std::move(out), {x.id()}, [](Graph& g, std::uint32_t self) {
    const auto& gy = g.grad(self);
    feed(g, self, 0, [&](Tensor& gx, const Tensor&) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    });
  });
}

Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& xv = x.value();
  const auto sp = split_axis(xv.shape(), axis, "slice");
  if (start + length > sp.extent) throw ShapeError("slice: range exceeds extent on axis " + std::to_string(axis));
  Shape os = xv.shape();
  os[axis] = length;
  Tensor out(os);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xv.data().data() + (o * sp.extent + start) * sp.inner, length * sp.inner,
                out.data().data() + o * length * sp.inner);
  }
  return x.graph().record("slice", std::move(out), {x.id()}, [sp, start, length](Graph& g, std::uint32_t self) {
    const auto& gy = g.grad(self);
    feed(g, self, 0, [&](Tensor& gx, const Tensor&) {
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const double* src = gy.data().data() + o * length * sp.inner;
        double* dst = gx.data().data() + (o * sp.extent + start) * sp.inner;
        for (std::size_t i = 0; i < length * sp.inner; ++i) dst[i] += src[i];
      }
    });
  });
}

}  // namespace msfa::ad
