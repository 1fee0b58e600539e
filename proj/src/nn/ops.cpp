#include "dimshrink/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dimshrink::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

thread_local NormObserver g_norm_observer;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                                      " vs " + to_string(b.shape()));
}

void require_feature_map(const Tensor& x, const char* op) {
  require(x.rank() == 4, std::string(op) + ": expected (C, D, H, W), got " + to_string(x.shape()));
}

template <typename F>
Tensor unary(const Tensor& x, F&& f, std::function<double(double x, double y)> dfdx) {
  auto in = x.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn, dfdx](detail::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * dfdx(xn->value[i], self.value[i]);
    }
  });
}

struct ConvGeometry {
  int64_t cin, d, h, w;
  int64_t cout, cin_g, cout_g, kd, kh, kw;
  int64_t od, oh, ow;
  ConvSpec spec;

  int64_t k() const { return cin_g * kd * kh * kw; }
  int64_t plane() const { return oh * ow; }
  int64_t out_volume() const { return od * oh * ow; }
  int64_t in_volume() const { return d * h * w; }
  bool pointwise() const {
    return kd == 1 && kh == 1 && kw == 1 && spec.stride == Triple{1, 1, 1} &&
           spec.padding == Triple{0, 0, 0};
  }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, const ConvSpec& spec) {
  require_feature_map(x, "conv");
  require(w.rank() == 5, "conv: weight must be (Cout, Cin/g, kd, kh, kw), got " + to_string(w.shape()));
  ConvGeometry g{};
  g.spec = spec;
  g.cin = x.dim(0);
  g.d = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = w.dim(0);
  g.cin_g = w.dim(1);
  g.kd = w.dim(2);
  g.kh = w.dim(3);
  g.kw = w.dim(4);
  require(spec.groups >= 1 && g.cin == g.cin_g * spec.groups && g.cout % spec.groups == 0,
          "conv: channel/group mismatch, input " + to_string(x.shape()) + " weight " +
              to_string(w.shape()) + " groups " + std::to_string(spec.groups));
  g.cout_g = g.cout / spec.groups;
  auto out_len = [](int64_t n, int64_t k, int64_t s, int64_t p) {
    int64_t span = n + 2 * p - k;
    return span < 0 ? int64_t{0} : span / s + 1;
  };
  g.od = out_len(g.d, g.kd, spec.stride[0], spec.padding[0]);
  g.oh = out_len(g.h, g.kh, spec.stride[1], spec.padding[1]);
  g.ow = out_len(g.w, g.kw, spec.stride[2], spec.padding[2]);
  require(g.od > 0 && g.oh > 0 && g.ow > 0,
          "conv: kernel larger than padded input " + to_string(x.shape()));
  return g;
}

// Gathers the receptive fields of one output depth plane into a K x (oh*ow) matrix.
void im2col_plane(const ConvGeometry& g, const double* x, int64_t group, int64_t z,
                  std::vector<double>& col) {
  const int64_t n = g.plane();
  col.assign(static_cast<std::size_t>(g.k() * n), 0.0);
  const auto [sd, sh, sw] = g.spec.stride;
  const auto [pd, ph, pw] = g.spec.padding;
  int64_t row = 0;
  for (int64_t ci = 0; ci < g.cin_g; ++ci) {
    const double* xc = x + (group * g.cin_g + ci) * g.in_volume();
    for (int64_t a = 0; a < g.kd; ++a) {
      const int64_t iz = z * sd - pd + a;
      for (int64_t b = 0; b < g.kh; ++b) {
        for (int64_t c = 0; c < g.kw; ++c, ++row) {
          if (iz < 0 || iz >= g.d) continue;
          double* dst = col.data() + row * n;
          for (int64_t oy = 0; oy < g.oh; ++oy) {
            const int64_t iy = oy * sh - ph + b;
            if (iy < 0 || iy >= g.h) continue;
            const double* src = xc + (iz * g.h + iy) * g.w;
            double* drow = dst + oy * g.ow;
            for (int64_t ox = 0; ox < g.ow; ++ox) {
              const int64_t ix = ox * sw - pw + c;
              if (ix >= 0 && ix < g.w) drow[ox] = src[ix];
            }
          }
        }
      }
    }
  }
}

void col2im_plane(const ConvGeometry& g, const std::vector<double>& col, int64_t group, int64_t z,
                  double* dx) {
  const int64_t n = g.plane();
  const auto [sd, sh, sw] = g.spec.stride;
  const auto [pd, ph, pw] = g.spec.padding;
  int64_t row = 0;
  for (int64_t ci = 0; ci < g.cin_g; ++ci) {
    double* xc = dx + (group * g.cin_g + ci) * g.in_volume();
    for (int64_t a = 0; a < g.kd; ++a) {
      const int64_t iz = z * sd - pd + a;
      for (int64_t b = 0; b < g.kh; ++b) {
        for (int64_t c = 0; c < g.kw; ++c, ++row) {
          if (iz < 0 || iz >= g.d) continue;
          const double* src = col.data() + row * n;
          for (int64_t oy = 0; oy < g.oh; ++oy) {
            const int64_t iy = oy * sh - ph + b;
            if (iy < 0 || iy >= g.h) continue;
            double* drow = xc + (iz * g.h + iy) * g.w;
            const double* srow = src + oy * g.ow;
            for (int64_t ox = 0; ox < g.ow; ++ox) {
              const int64_t ix = ox * sw - pw + c;
              if (ix >= 0 && ix < g.w) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
}

// Linear upsampling along one axis of a (C, D, H, W) tensor.
struct AxisInterp {
  std::vector<int64_t> lo, hi;
  std::vector<double> w_hi;
};

AxisInterp linear_weights(int64_t n, int64_t factor) {
  AxisInterp t;
  const int64_t m = n * factor;
  t.lo.resize(m);
  t.hi.resize(m);
  t.w_hi.resize(m);
  for (int64_t i = 0; i < m; ++i) {
    double src = (static_cast<double>(i) + 0.5) / static_cast<double>(factor) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n - 1));
    const auto lo = static_cast<int64_t>(std::floor(src));
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, n - 1);
    t.w_hi[i] = src - static_cast<double>(lo);
  }
  return t;
}

Tensor upsample_linear_axis(const Tensor& x, int axis, int64_t factor) {
  const Shape in_shape = x.shape();
  Shape out_shape = in_shape;
  out_shape[axis] *= factor;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= in_shape[i];
  for (std::size_t i = axis + 1; i < in_shape.size(); ++i) inner *= in_shape[i];
  const int64_t n = in_shape[axis], m = out_shape[axis];
  auto table = std::make_shared<AxisInterp>(linear_weights(n, factor));
  auto in = x.values();
  std::vector<double> out(static_cast<std::size_t>(outer * m * inner));
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < m; ++i) {
      const double wh = table->w_hi[i], wl = 1.0 - wh;
      const double* lo = in.data() + (o * n + table->lo[i]) * inner;
      const double* hi = in.data() + (o * n + table->hi[i]) * inner;
      double* dst = out.data() + (o * m + i) * inner;
      for (int64_t k = 0; k < inner; ++k) dst[k] = wl * lo[k] + wh * hi[k];
    }
  }
  auto xn = x.node();
  return make_op(out_shape, std::move(out), {x}, [xn, table, outer, inner, n, m](detail::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t i = 0; i < m; ++i) {
        const double wh = table->w_hi[i], wl = 1.0 - wh;
        double* lo = g.data() + (o * n + table->lo[i]) * inner;
        double* hi = g.data() + (o * n + table->hi[i]) * inner;
        const double* src = self.grad.data() + (o * m + i) * inner;
        for (int64_t k = 0; k < inner; ++k) {
          lo[k] += wl * src[k];
          hi[k] += wh * src[k];
        }
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& self) {
    for (auto* in : {an.get(), bn.get()}) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  auto an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  auto xn = x.node();
  return make_op({1}, {total}, {x}, [xn](detail::Node& self) {
    if (!xn->requires_grad) return;
    for (auto& g : xn->ensure_grad()) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  require(x.numel() > 0, "mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor conv(const Tensor& x, const Tensor& w, const Tensor& bias, const ConvSpec& spec) {
  const ConvGeometry g = conv_geometry(x, w, spec);
  if (bias.defined()) {
    require(bias.numel() == g.cout, "conv: bias size " + std::to_string(bias.numel()) +
                                        " != output channels " + std::to_string(g.cout));
  }
  std::vector<double> out(static_cast<std::size_t>(g.cout * g.out_volume()), 0.0);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  const int64_t k = g.k();

  if (g.pointwise()) {
    const int64_t n = g.in_volume();
    for (int64_t grp = 0; grp < spec.groups; ++grp) {
      ConstStridedMap wm(wv + grp * g.cout_g * k, g.cout_g, k, Eigen::OuterStride<>(k));
      ConstStridedMap xm(xv + grp * g.cin_g * n, k, n, Eigen::OuterStride<>(n));
      StridedMap om(out.data() + grp * g.cout_g * n, g.cout_g, n, Eigen::OuterStride<>(n));
      om.noalias() = wm * xm;
    }
  } else {
    std::vector<double> col;
    const int64_t n = g.plane(), ov = g.out_volume();
    for (int64_t grp = 0; grp < spec.groups; ++grp) {
      ConstStridedMap wm(wv + grp * g.cout_g * k, g.cout_g, k, Eigen::OuterStride<>(k));
      for (int64_t z = 0; z < g.od; ++z) {
        im2col_plane(g, xv, grp, z, col);
        Eigen::Map<const RowMat> cm(col.data(), k, n);
        StridedMap om(out.data() + grp * g.cout_g * ov + z * n, g.cout_g, n, Eigen::OuterStride<>(ov));
        om.noalias() = wm * cm;
      }
    }
  }
  if (bias.defined()) {
    auto bv = bias.values();
    const int64_t ov = g.out_volume();
    for (int64_t c = 0; c < g.cout; ++c) {
      double* o = out.data() + c * ov;
      for (int64_t i = 0; i < ov; ++i) o[i] += bv[c];
    }
  }

  auto xn = x.node(), wn = w.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return make_op({g.cout, g.od, g.oh, g.ow}, std::move(out), {x, w, bias},
                 [g, xn, wn, bn](detail::Node& self) {
    const int64_t k = g.k(), ov = g.out_volume();
    const double* gy = self.grad.data();
    if (bn && bn->requires_grad) {
      auto& gb = bn->ensure_grad();
      for (int64_t c = 0; c < g.cout; ++c) {
        double s = 0.0;
        for (int64_t i = 0; i < ov; ++i) s += gy[c * ov + i];
        gb[c] += s;
      }
    }
    const bool need_x = xn->requires_grad, need_w = wn->requires_grad;
    if (!need_x && !need_w) return;
    double* gx = need_x ? xn->ensure_grad().data() : nullptr;
    double* gw = need_w ? wn->ensure_grad().data() : nullptr;
    const double* xv = xn->value.data();
    const double* wv = wn->value.data();

    if (g.pointwise()) {
      const int64_t n = g.in_volume();
      for (int64_t grp = 0; grp < g.spec.groups; ++grp) {
        ConstStridedMap gym(gy + grp * g.cout_g * n, g.cout_g, n, Eigen::OuterStride<>(n));
        if (need_w) {
          ConstStridedMap xm(xv + grp * g.cin_g * n, k, n, Eigen::OuterStride<>(n));
          StridedMap gwm(gw + grp * g.cout_g * k, g.cout_g, k, Eigen::OuterStride<>(k));
          gwm.noalias() += gym * xm.transpose();
        }
        if (need_x) {
          ConstStridedMap wm(wv + grp * g.cout_g * k, g.cout_g, k, Eigen::OuterStride<>(k));
          StridedMap gxm(gx + grp * g.cin_g * n, k, n, Eigen::OuterStride<>(n));
          gxm.noalias() += wm.transpose() * gym;
        }
      }
      return;
    }

    std::vector<double> col, dcol;
    const int64_t n = g.plane();
    for (int64_t grp = 0; grp < g.spec.groups; ++grp) {
      ConstStridedMap wm(wv + grp * g.cout_g * k, g.cout_g, k, Eigen::OuterStride<>(k));
      for (int64_t z = 0; z < g.od; ++z) {
        ConstStridedMap gym(gy + grp * g.cout_g * ov + z * n, g.cout_g, n, Eigen::OuterStride<>(ov));
        if (need_w) {
          im2col_plane(g, xv, grp, z, col);
          Eigen::Map<const RowMat> cm(col.data(), k, n);
          StridedMap gwm(gw + grp * g.cout_g * k, g.cout_g, k, Eigen::OuterStride<>(k));
          gwm.noalias() += gym * cm.transpose();
        }
        if (need_x) {
          dcol.resize(static_cast<std::size_t>(k * n));
          Eigen::Map<RowMat> dm(dcol.data(), k, n);
          dm.noalias() = wm.transpose() * gym;
          col2im_plane(g, dcol, grp, z, gx);
        }
      }
    }
  });
}

Tensor max_pool(const Tensor& x, const Triple& kernel) {
  require_feature_map(x, "max_pool");
  const int64_t c = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto [kd, kh, kw] = kernel;
  require(kd > 0 && kh > 0 && kw > 0 && d % kd == 0 && h % kh == 0 && w % kw == 0,
          "max_pool: input " + to_string(x.shape()) + " not divisible by kernel");
  const int64_t od = d / kd, oh = h / kh, ow = w / kw;
  std::vector<double> out(static_cast<std::size_t>(c * od * oh * ow));
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  auto in = x.values();
  std::size_t o = 0;
  for (int64_t ci = 0; ci < c; ++ci) {
    for (int64_t z = 0; z < od; ++z) {
      for (int64_t y = 0; y < oh; ++y) {
        for (int64_t xx = 0; xx < ow; ++xx, ++o) {
          int64_t best = -1;
          double best_v = 0.0;
          for (int64_t a = 0; a < kd; ++a) {
            for (int64_t b = 0; b < kh; ++b) {
              for (int64_t e = 0; e < kw; ++e) {
                const int64_t idx = ((ci * d + z * kd + a) * h + y * kh + b) * w + xx * kw + e;
                if (best < 0 || in[idx] > best_v) {
                  best = idx;
                  best_v = in[idx];
                }
              }
            }
          }
          out[o] = best_v;
          (*argmax)[o] = best;
        }
      }
    }
  }
  auto xn = x.node();
  return make_op({c, od, oh, ow}, std::move(out), {x}, [xn, argmax](detail::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < argmax->size(); ++i) g[(*argmax)[i]] += self.grad[i];
  });
}

Tensor upsample(const Tensor& x, const Triple& factors, UpsampleMode mode) {
  require_feature_map(x, "upsample");
  for (auto f : factors) require(f >= 1, "upsample: factors must be >= 1");
  if (factors == Triple{1, 1, 1}) return x;
  if (mode == UpsampleMode::kLinear) {
    Tensor y = x;
    for (int axis = 0; axis < 3; ++axis) {
      if (factors[axis] > 1) y = upsample_linear_axis(y, axis + 1, factors[axis]);
    }
    return y;
  }
  const int64_t c = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto [fd, fh, fw] = factors;
  const int64_t od = d * fd, oh = h * fh, ow = w * fw;
  std::vector<double> out(static_cast<std::size_t>(c * od * oh * ow));
  auto in = x.values();
  std::size_t o = 0;
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t z = 0; z < od; ++z)
      for (int64_t y = 0; y < oh; ++y) {
        const double* row = in.data() + ((ci * d + z / fd) * h + y / fh) * w;
        for (int64_t xx = 0; xx < ow; ++xx) out[o++] = row[xx / fw];
      }
  auto xn = x.node();
  return make_op({c, od, oh, ow}, std::move(out), {x},
                 [xn, c, d, h, w, fd, fh, fw](detail::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    const int64_t od = d * fd, oh = h * fh, ow = w * fw;
    std::size_t o = 0;
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t z = 0; z < od; ++z)
        for (int64_t y = 0; y < oh; ++y) {
          double* row = g.data() + ((ci * d + z / fd) * h + y / fh) * w;
          for (int64_t xx = 0; xx < ow; ++xx) row[xx / fw] += self.grad[o++];
        }
  });
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int64_t groups,
                  double eps) {
  require_feature_map(x, "group_norm");
  const int64_t c = x.dim(0);
  require(groups > 0 && c % groups == 0,
          "group_norm: " + std::to_string(c) + " channels not divisible by " +
              std::to_string(groups) + " groups");
  require(gamma.numel() == c && beta.numel() == c, "group_norm: affine size mismatch");
  const int64_t spatial = x.dim(1) * x.dim(2) * x.dim(3);
  const int64_t cg = c / groups, m = cg * spatial;
  auto in = x.values();
  auto xhat = std::make_shared<std::vector<double>>(in.size());
  auto inv_std = std::make_shared<std::vector<double>>(groups);
  for (int64_t grp = 0; grp < groups; ++grp) {
    const double* src = in.data() + grp * m;
    double mu = 0.0;
    for (int64_t i = 0; i < m; ++i) mu += src[i];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (int64_t i = 0; i < m; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[grp] = is;
    double* dst = xhat->data() + grp * m;
    for (int64_t i = 0; i < m; ++i) dst[i] = (src[i] - mu) * is;
  }
  if (g_norm_observer) g_norm_observer(*xhat, c, groups);

  auto gv = gamma.values(), bv = beta.values();
  std::vector<double> out(in.size());
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* s = xhat->data() + ch * spatial;
    double* o = out.data() + ch * spatial;
    for (int64_t i = 0; i < spatial; ++i) o[i] = s[i] * gv[ch] + bv[ch];
  }

  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_op(x.shape(), std::move(out), {x, gamma, beta},
                 [xn, gn, bn, xhat, inv_std, c, groups, spatial, cg, m](detail::Node& self) {
    const double* dy = self.grad.data();
    if (gn->requires_grad || bn->requires_grad) {
      auto& gg = gn->ensure_grad();
      auto& gb = bn->ensure_grad();
      for (int64_t ch = 0; ch < c; ++ch) {
        double sg = 0.0, sb = 0.0;
        for (int64_t i = 0; i < spatial; ++i) {
          sg += dy[ch * spatial + i] * (*xhat)[ch * spatial + i];
          sb += dy[ch * spatial + i];
        }
        gg[ch] += sg;
        gb[ch] += sb;
      }
    }
    if (!xn->requires_grad) return;
    auto& gx = xn->ensure_grad();
    std::vector<double> dxhat(static_cast<std::size_t>(m));
    for (int64_t grp = 0; grp < groups; ++grp) {
      double s1 = 0.0, s2 = 0.0;
      for (int64_t i = 0; i < m; ++i) {
        const int64_t idx = grp * m + i;
        const int64_t ch = grp * cg + i / spatial;
        dxhat[i] = dy[idx] * gn->value[ch];
        s1 += dxhat[i];
        s2 += dxhat[i] * (*xhat)[idx];
      }
      const double is = (*inv_std)[grp], md = static_cast<double>(m);
      for (int64_t i = 0; i < m; ++i) {
        const int64_t idx = grp * m + i;
        gx[idx] += is / md * (md * dxhat[i] - s1 - (*xhat)[idx] * s2);
      }
    }
  });
}

Tensor frozen_batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         std::span<const double> running_mean,
                         std::span<const double> running_var, double eps) {
  require_feature_map(x, "frozen_batch_norm");
  const int64_t c = x.dim(0), spatial = x.dim(1) * x.dim(2) * x.dim(3);
  require(gamma.numel() == c && beta.numel() == c &&
              static_cast<int64_t>(running_mean.size()) == c &&
              static_cast<int64_t>(running_var.size()) == c,
          "frozen_batch_norm: parameter size mismatch");
  auto inv = std::make_shared<std::vector<double>>(c);
  auto shift = std::make_shared<std::vector<double>>(c);
  for (int64_t ch = 0; ch < c; ++ch) {
    (*inv)[ch] = 1.0 / std::sqrt(running_var[ch] + eps);
    (*shift)[ch] = running_mean[ch];
  }
  auto in = x.values();
  auto gv = gamma.values(), bv = beta.values();
  std::vector<double> out(in.size());
  for (int64_t ch = 0; ch < c; ++ch) {
    const double a = (*inv)[ch] * gv[ch], m = (*shift)[ch];
    for (int64_t i = 0; i < spatial; ++i) {
      out[ch * spatial + i] = (in[ch * spatial + i] - m) * a + bv[ch];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_op(x.shape(), std::move(out), {x, gamma, beta},
                 [xn, gn, bn, inv, shift, c, spatial](detail::Node& self) {
    const double* dy = self.grad.data();
    for (int64_t ch = 0; ch < c; ++ch) {
      const double is = (*inv)[ch], m = (*shift)[ch];
      double sg = 0.0, sb = 0.0;
      for (int64_t i = 0; i < spatial; ++i) {
        const int64_t idx = ch * spatial + i;
        sg += dy[idx] * (xn->value[idx] - m) * is;
        sb += dy[idx];
      }
      if (gn->requires_grad) gn->ensure_grad()[ch] += sg;
      if (bn->requires_grad) bn->ensure_grad()[ch] += sb;
      if (xn->requires_grad) {
        auto& gx = xn->ensure_grad();
        const double a = is * gn->value[ch];
        for (int64_t i = 0; i < spatial; ++i) gx[ch * spatial + i] += dy[ch * spatial + i] * a;
      }
    }
  });
}

Tensor channel_affine(const Tensor& x, std::span<const double> scale_in,
                      std::span<const double> shift_in) {
  require_feature_map(x, "channel_affine");
  const int64_t c = x.dim(0), spatial = x.dim(1) * x.dim(2) * x.dim(3);
  require(static_cast<int64_t>(scale_in.size()) == c && static_cast<int64_t>(shift_in.size()) == c,
          "channel_affine: coefficient count mismatch");
  auto scales = std::make_shared<std::vector<double>>(scale_in.begin(), scale_in.end());
  auto in = x.values();
  std::vector<double> out(in.size());
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < spatial; ++i)
      out[ch * spatial + i] = in[ch * spatial + i] * scale_in[ch] + shift_in[ch];
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn, scales, c, spatial](detail::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < spatial; ++i)
        g[ch * spatial + i] += self.grad[ch * spatial + i] * (*scales)[ch];
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat: no inputs");
  Shape shape = parts.front().shape();
  require_feature_map(parts.front(), "concat");
  int64_t channels = 0;
  for (const auto& p : parts) {
    require_feature_map(p, "concat");
    require(std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1),
            "concat: spatial mismatch " + to_string(shape) + " vs " + to_string(p.shape()));
    channels += p.dim(0);
  }
  shape[0] = channels;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(numel(shape)));
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
    nodes.push_back(p.node());
  }
  return make_op(shape, std::move(out), parts, [nodes](detail::Node& self) {
    std::size_t offset = 0;
    for (const auto& n : nodes) {
      if (n->requires_grad) {
        auto& g = n->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
      }
      offset += n->value.size();
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.numel(),
          "reshape: " + to_string(x.shape()) + " -> " + to_string(shape) + " changes element count");
  std::vector<double> out(x.values().begin(), x.values().end());
  auto xn = x.node();
  return make_op(std::move(shape), std::move(out), {x}, [xn](detail::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_feature_map(x, "global_avg_pool");
  const int64_t c = x.dim(0), spatial = x.dim(1) * x.dim(2) * x.dim(3);
  auto in = x.values();
  std::vector<double> out(static_cast<std::size_t>(c));
  for (int64_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (int64_t i = 0; i < spatial; ++i) s += in[ch * spatial + i];
    out[ch] = s / static_cast<double>(spatial);
  }
  auto xn = x.node();
  return make_op({c, 1, 1, 1}, std::move(out), {x}, [xn, c, spatial](detail::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    for (int64_t ch = 0; ch < c; ++ch) {
      const double v = self.grad[ch] / static_cast<double>(spatial);
      for (int64_t i = 0; i < spatial; ++i) g[ch * spatial + i] += v;
    }
  });
}

Tensor channel_mul(const Tensor& x, const Tensor& s) {
  require_feature_map(x, "channel_mul");
  const int64_t c = x.dim(0), spatial = x.dim(1) * x.dim(2) * x.dim(3);
  require(s.numel() == c, "channel_mul: gate size mismatch");
  auto in = x.values();
  auto sv = s.values();
  std::vector<double> out(in.size());
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < spatial; ++i) out[ch * spatial + i] = in[ch * spatial + i] * sv[ch];
  auto xn = x.node(), sn = s.node();
  return make_op(x.shape(), std::move(out), {x, s}, [xn, sn, c, spatial](detail::Node& self) {
    for (int64_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (int64_t i = 0; i < spatial; ++i) {
        const int64_t idx = ch * spatial + i;
        acc += self.grad[idx] * xn->value[idx];
      }
      if (sn->requires_grad) sn->ensure_grad()[ch] += acc;
      if (xn->requires_grad) {
        auto& g = xn->ensure_grad();
        for (int64_t i = 0; i < spatial; ++i) g[ch * spatial + i] += self.grad[ch * spatial + i] * sn->value[ch];
      }
    }
  });
}

void set_norm_observer(NormObserver observer) { g_norm_observer = std::move(observer); }

}  // namespace dimshrink::nn
