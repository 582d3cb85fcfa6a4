#include "chnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "chnet/errors.hpp"

CHNET_NS_BEGIN

namespace {

void require_same_shape(const Variable& x, const Variable& y, const char* op) {
  if (!(x.shape() == y.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + x.shape().str() +
                     " vs " + y.shape().str());
  }
}

void check_conv_common(const ConvSpec& spec, const Variable& bias,
                       const char* op) {
  if (spec.stride < 1 || spec.padding < 0 || spec.kh < 1 || spec.kw < 1) {
    throw ShapeError(std::string(op) + ": invalid kernel/stride/padding");
  }
  if (spec.has_bias != bias.defined()) {
    throw ShapeError(std::string(op) + ": bias presence does not match spec");
  }
  if (bias.defined() && !(bias.shape() == Shape{1, spec.out_channels, 1, 1})) {
    throw ShapeError(std::string(op) + ": bias must be (1," +
                     std::to_string(spec.out_channels) + ",1,1), got " +
                     bias.shape().str());
  }
}

void accumulate_bias_grad(const Tensor4& gout, Tensor4& gbias) {
  const Shape s = gout.shape();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const Real* p = gout.plane(n, c);
      Real acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      gbias[static_cast<std::size_t>(c)] += acc;
    }
  }
}

}  // namespace

BatchNormState BatchNormState::init(int channels) {
  return {Tensor4({1, channels, 1, 1}, Real(0)),
          Tensor4({1, channels, 1, 1}, Real(1))};
}

Variable conv2d(const Variable& x, const Variable& weight, const Variable& bias,
                const ConvSpec& spec) {
  check_conv_common(spec, bias, "conv2d");
  const Shape xs = x.shape();
  if (xs.c != spec.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) +
                     " channels, spec expects " +
                     std::to_string(spec.in_channels));
  }
  const Shape ws{spec.out_channels, spec.in_channels, spec.kh, spec.kw};
  if (!(weight.shape() == ws)) {
    throw ShapeError("conv2d: weight shape " + weight.shape().str() +
                     " expected " + ws.str());
  }
  const int oh = spec.out_h(xs.h), ow = spec.out_w(xs.w);
  if (xs.h + 2 * spec.padding < spec.kh || xs.w + 2 * spec.padding < spec.kw ||
      oh < 1 || ow < 1) {
    throw ShapeError("conv2d: output size < 1 for input " + xs.str());
  }

  Tensor4 out = kernels::conv2d_im2col(x.value(), weight.value(),
                                       bias.defined() ? &bias.value() : nullptr,
                                       spec);
  std::vector<Variable> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return Variable::make(
      std::move(out), parents, [x, weight, bias, spec](detail::Node& self) {
        const Tensor4& gout = self.grad;
        const Shape xs = x.shape();
        const int oh = gout.shape().h, ow = gout.shape().w;
        const int kdim = spec.in_channels * spec.kh * spec.kw;
        const int cols = oh * ow;
        const bool pointwise = spec.kh == 1 && spec.kw == 1 &&
                               spec.stride == 1 && spec.padding == 0;
        std::vector<Real> col(static_cast<std::size_t>(kdim) * cols);
        const bool need_x = x.requires_grad();
        const bool need_w = weight.requires_grad();
        Tensor4* gx = need_x ? &x.node().grad_buffer() : nullptr;
        Tensor4* gw = need_w ? &weight.node().grad_buffer() : nullptr;
        for (int n = 0; n < xs.n; ++n) {
          const Real* g = gout.plane(n, 0);
          if (need_w) {
            const Real* patches = x.value().plane(n, 0);
            if (!pointwise) {
              kernels::im2col(x.value().plane(n, 0), spec.in_channels, xs.h,
                              xs.w, spec.kh, spec.kw, spec.stride, spec.padding,
                              col.data());
              patches = col.data();
            }
            kernels::gemm_nt(spec.out_channels, kdim, cols, g, patches,
                             gw->data(), true);
          }
          if (need_x) {
            if (pointwise) {
              kernels::gemm_tn(kdim, cols, spec.out_channels,
                               weight.value().data(), g, gx->plane(n, 0), true);
            } else {
              kernels::gemm_tn(kdim, cols, spec.out_channels,
                               weight.value().data(), g, col.data(), false);
              kernels::col2im(col.data(), spec.in_channels, xs.h, xs.w, spec.kh,
                              spec.kw, spec.stride, spec.padding,
                              gx->plane(n, 0));
            }
          }
        }
        if (bias.defined() && bias.requires_grad()) {
          accumulate_bias_grad(gout, bias.node().grad_buffer());
        }
      });
}

Variable transposed_conv2d(const Variable& x, const Variable& weight,
                           const Variable& bias, const ConvSpec& spec) {
  check_conv_common(spec, bias, "transposed_conv2d");
  const Shape xs = x.shape();
  if (xs.c != spec.in_channels) {
    throw ShapeError("transposed_conv2d: input has " + std::to_string(xs.c) +
                     " channels, spec expects " +
                     std::to_string(spec.in_channels));
  }
  const Shape ws{spec.in_channels, spec.out_channels, spec.kh, spec.kw};
  if (!(weight.shape() == ws)) {
    throw ShapeError("transposed_conv2d: weight shape " + weight.shape().str() +
                     " expected " + ws.str());
  }
  const int oh = spec.tout_h(xs.h), ow = spec.tout_w(xs.w);
  if (oh < 1 || ow < 1 || xs.h < 1 || xs.w < 1) {
    throw ShapeError("transposed_conv2d: output size < 1 for input " +
                     xs.str());
  }
  const int kdim = spec.out_channels * spec.kh * spec.kw;
  const int in_cols = xs.h * xs.w;
  Tensor4 out({xs.n, spec.out_channels, oh, ow});
  std::vector<Real> col(static_cast<std::size_t>(kdim) * in_cols);
  for (int n = 0; n < xs.n; ++n) {
    kernels::gemm_tn(kdim, in_cols, spec.in_channels, weight.value().data(),
                     x.value().plane(n, 0), col.data(), false);
    kernels::col2im(col.data(), spec.out_channels, oh, ow, spec.kh, spec.kw,
                    spec.stride, spec.padding, out.plane(n, 0));
    if (bias.defined()) {
      for (int o = 0; o < spec.out_channels; ++o) {
        Real* p = out.plane(n, o);
        const Real b = bias.value()[static_cast<std::size_t>(o)];
        for (int i = 0; i < oh * ow; ++i) p[i] += b;
      }
    }
  }
  kernels::add_conv_macs(static_cast<std::uint64_t>(spec.weight_count()) *
                         in_cols * xs.n);

  std::vector<Variable> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return Variable::make(
      std::move(out), parents, [x, weight, bias, spec](detail::Node& self) {
        const Tensor4& gout = self.grad;
        const Shape xs = x.shape();
        const int oh = gout.shape().h, ow = gout.shape().w;
        const int kdim = spec.out_channels * spec.kh * spec.kw;
        const int in_cols = xs.h * xs.w;
        std::vector<Real> col(static_cast<std::size_t>(kdim) * in_cols);
        const bool need_x = x.requires_grad();
        const bool need_w = weight.requires_grad();
        for (int n = 0; n < xs.n; ++n) {
          kernels::im2col(gout.plane(n, 0), spec.out_channels, oh, ow, spec.kh,
                          spec.kw, spec.stride, spec.padding, col.data());
          if (need_x) {
            kernels::gemm_nn(spec.in_channels, in_cols, kdim,
                             weight.value().data(), col.data(),
                             x.node().grad_buffer().plane(n, 0), true);
          }
          if (need_w) {
            kernels::gemm_nt(spec.in_channels, kdim, in_cols,
                             x.value().plane(n, 0), col.data(),
                             weight.node().grad_buffer().data(), true);
          }
        }
        if (bias.defined() && bias.requires_grad()) {
          accumulate_bias_grad(gout, bias.node().grad_buffer());
        }
      });
}

Variable batchnorm2d(const Variable& x, const Variable& gamma,
                     const Variable& beta, BatchNormState& state, Mode mode,
                     Real eps, Real momentum) {
  const Shape s = x.shape();
  const Shape ps{1, s.c, 1, 1};
  if (!(gamma.shape() == ps) || !(beta.shape() == ps)) {
    throw ShapeError("batchnorm2d: gamma/beta must be " + ps.str());
  }
  if (!(state.running_mean.shape() == ps) || !(state.running_var.shape() == ps)) {
    throw ShapeError("batchnorm2d: running statistics must be " + ps.str());
  }
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  std::vector<Real> mean(static_cast<std::size_t>(s.c));
  std::vector<Real> inv_std(static_cast<std::size_t>(s.c));
  for (int c = 0; c < s.c; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (mode == Mode::train) {
      double acc = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const Real* p = x.value().plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      const double mu = count > 0 ? acc / count : 0.0;
      double var_acc = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const Real* p = x.value().plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          var_acc += d * d;
        }
      }
      const double var = count > 0 ? var_acc / count : 0.0;
      mean[ci] = static_cast<Real>(mu);
      inv_std[ci] = static_cast<Real>(1.0 / std::sqrt(var + eps));
      state.running_mean[ci] =
          (1 - momentum) * state.running_mean[ci] + momentum * static_cast<Real>(mu);
      state.running_var[ci] =
          (1 - momentum) * state.running_var[ci] + momentum * static_cast<Real>(var);
    } else {
      mean[ci] = state.running_mean[ci];
      inv_std[ci] =
          static_cast<Real>(1.0 / std::sqrt(static_cast<double>(state.running_var[ci]) + eps));
    }
  }

  Tensor4 xhat(s);
  Tensor4 out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      const Real g = gamma.value()[ci], b = beta.value()[ci];
      const Real* p = x.value().plane(n, c);
      Real* xh = xhat.plane(n, c);
      Real* o = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - mean[ci]) * inv_std[ci];
        o[i] = g * xh[i] + b;
      }
    }
  }

  const bool batch_stats = mode == Mode::train;
  return Variable::make(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std, batch_stats,
       count](detail::Node& self) {
        const Tensor4& gout = self.grad;
        const Shape s = gout.shape();
        const std::size_t plane = s.plane();
        for (int c = 0; c < s.c; ++c) {
          const auto ci = static_cast<std::size_t>(c);
          double sum_g = 0.0, sum_gx = 0.0;
          for (int n = 0; n < s.n; ++n) {
            const Real* g = gout.plane(n, c);
            const Real* xh = xhat.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g += g[i];
              sum_gx += static_cast<double>(g[i]) * xh[i];
            }
          }
          if (gamma.requires_grad()) {
            gamma.node().grad_buffer()[ci] += static_cast<Real>(sum_gx);
          }
          if (beta.requires_grad()) {
            beta.node().grad_buffer()[ci] += static_cast<Real>(sum_g);
          }
          if (!x.requires_grad()) continue;
          const Real gm = gamma.value()[ci];
          Tensor4& gx = x.node().grad_buffer();
          if (batch_stats) {
            const Real mean_g = static_cast<Real>(sum_g / count);
            const Real mean_gx = static_cast<Real>(sum_gx / count);
            for (int n = 0; n < s.n; ++n) {
              const Real* g = gout.plane(n, c);
              const Real* xh = xhat.plane(n, c);
              Real* dx = gx.plane(n, c);
              for (std::size_t i = 0; i < plane; ++i) {
                dx[i] += gm * inv_std[ci] * (g[i] - mean_g - xh[i] * mean_gx);
              }
            }
          } else {
            for (int n = 0; n < s.n; ++n) {
              const Real* g = gout.plane(n, c);
              Real* dx = gx.plane(n, c);
              for (std::size_t i = 0; i < plane; ++i) {
                dx[i] += gm * inv_std[ci] * g[i];
              }
            }
          }
        }
      });
}

Variable relu(const Variable& x) {
  Tensor4 out = x.value();
  for (auto& v : out.vec()) v = v < 0 ? Real(0) : v;  // NaN passes through
  return Variable::make(std::move(out), {x}, [x](detail::Node& self) {
    Tensor4& gx = x.node().grad_buffer();
    const Tensor4& xv = x.value();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > 0) gx[i] += self.grad[i];
    }
  });
}

Variable add(const Variable& x, const Variable& y) {
  require_same_shape(x, y, "add");
  Tensor4 out = x.value();
  out.add_(y.value());
  return Variable::make(std::move(out), {x, y}, [x, y](detail::Node& self) {
    x.node().accumulate(self.grad);
    y.node().accumulate(self.grad);
  });
}

Variable sub(const Variable& x, const Variable& y) {
  require_same_shape(x, y, "sub");
  Tensor4 out = x.value();
  out.axpy_(Real(-1), y.value());
  return Variable::make(std::move(out), {x, y}, [x, y](detail::Node& self) {
    x.node().accumulate(self.grad);
    if (y.requires_grad()) y.node().grad_buffer().axpy_(Real(-1), self.grad);
  });
}

Variable mul(const Variable& x, const Variable& y) {
  require_same_shape(x, y, "mul");
  Tensor4 out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y.value()[i];
  return Variable::make(std::move(out), {x, y}, [x, y](detail::Node& self) {
    const Tensor4& g = self.grad;
    if (x.requires_grad()) {
      Tensor4& gx = x.node().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y.value()[i];
    }
    if (y.requires_grad()) {
      Tensor4& gy = y.node().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * x.value()[i];
    }
  });
}

Variable div(const Variable& x, const Variable& y) {
  require_same_shape(x, y, "div");
  Tensor4 out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= y.value()[i];
  return Variable::make(std::move(out), {x, y}, [x, y](detail::Node& self) {
    const Tensor4& g = self.grad;
    if (x.requires_grad()) {
      Tensor4& gx = x.node().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / y.value()[i];
    }
    if (y.requires_grad()) {
      Tensor4& gy = y.node().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const Real yv = y.value()[i];
        gy[i] -= g[i] * x.value()[i] / (yv * yv);
      }
    }
  });
}

Variable scale(const Variable& x, Real factor) {
  Tensor4 out = x.value();
  for (auto& v : out.vec()) v *= factor;
  return Variable::make(std::move(out), {x}, [x, factor](detail::Node& self) {
    x.node().grad_buffer().axpy_(factor, self.grad);
  });
}

Variable add_scalar(const Variable& x, Real value) {
  Tensor4 out = x.value();
  for (auto& v : out.vec()) v += value;
  return Variable::make(std::move(out), {x}, [x](detail::Node& self) {
    x.node().accumulate(self.grad);
  });
}

Variable concat_channels(const std::vector<Variable>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  Shape s = xs.front().shape();
  int channels = 0;
  for (const auto& v : xs) {
    const Shape vs = v.shape();
    if (vs.n != s.n || vs.h != s.h || vs.w != s.w) {
      throw ShapeError("concat_channels: incompatible shapes " + s.str() +
                       " and " + vs.str());
    }
    channels += vs.c;
  }
  Shape os{s.n, channels, s.h, s.w};
  Tensor4 out(os);
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    int c0 = 0;
    for (const auto& v : xs) {
      const std::size_t len = static_cast<std::size_t>(v.shape().c) * plane;
      std::copy(v.value().plane(n, 0), v.value().plane(n, 0) + len,
                out.plane(n, c0));
      c0 += v.shape().c;
    }
  }
  return Variable::make(std::move(out), xs, [xs](detail::Node& self) {
    const Shape s = self.grad.shape();
    const std::size_t plane = s.plane();
    int c0 = 0;
    for (const auto& v : xs) {
      const int vc = v.shape().c;
      if (v.requires_grad()) {
        Tensor4& gv = v.node().grad_buffer();
        for (int n = 0; n < s.n; ++n) {
          const Real* src = self.grad.plane(n, c0);
          Real* dst = gv.plane(n, 0);
          for (std::size_t i = 0; i < static_cast<std::size_t>(vc) * plane; ++i) {
            dst[i] += src[i];
          }
        }
      }
      c0 += vc;
    }
  });
}

std::vector<Variable> chunk_channels(const Variable& x, int parts) {
  const Shape s = x.shape();
  if (parts < 1 || s.c % parts != 0) {
    throw ShapeError("chunk_channels: " + std::to_string(s.c) +
                     " channels not divisible into " + std::to_string(parts) +
                     " parts");
  }
  const int pc = s.c / parts;
  const std::size_t plane = s.plane();
  const std::size_t len = static_cast<std::size_t>(pc) * plane;
  std::vector<Variable> outs;
  outs.reserve(static_cast<std::size_t>(parts));
  for (int p = 0; p < parts; ++p) {
    Tensor4 out({s.n, pc, s.h, s.w});
    for (int n = 0; n < s.n; ++n) {
      const Real* src = x.value().plane(n, p * pc);
      std::copy(src, src + len, out.plane(n, 0));
    }
    outs.push_back(Variable::make(
        std::move(out), {x}, [x, p, pc, len](detail::Node& self) {
          Tensor4& gx = x.node().grad_buffer();
          for (int n = 0; n < gx.shape().n; ++n) {
            const Real* src = self.grad.plane(n, 0);
            Real* dst = gx.plane(n, p * pc);
            for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
          }
        }));
  }
  return outs;
}

Variable mean_over_channels(const Variable& x) {
  const Shape s = x.shape();
  if (s.c < 1) throw ShapeError("mean_over_channels: no channels");
  const std::size_t plane = s.plane();
  Tensor4 out({s.n, 1, s.h, s.w});
  const Real inv = Real(1) / static_cast<Real>(s.c);
  for (int n = 0; n < s.n; ++n) {
    Real* o = out.plane(n, 0);
    for (int c = 0; c < s.c; ++c) {
      const Real* p = x.value().plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) o[i] += p[i];
    }
    for (std::size_t i = 0; i < plane; ++i) o[i] *= inv;
  }
  return Variable::make(std::move(out), {x}, [x, inv](detail::Node& self) {
    Tensor4& gx = x.node().grad_buffer();
    const Shape s = gx.shape();
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n) {
      const Real* g = self.grad.plane(n, 0);
      for (int c = 0; c < s.c; ++c) {
        Real* d = gx.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) d[i] += g[i] * inv;
      }
    }
  });
}

Variable max_over_channels(const Variable& x) {
  const Shape s = x.shape();
  if (s.c < 1) throw ShapeError("max_over_channels: no channels");
  const std::size_t plane = s.plane();
  Tensor4 out({s.n, 1, s.h, s.w});
  std::vector<int> arg(static_cast<std::size_t>(s.n) * plane, 0);
  for (int n = 0; n < s.n; ++n) {
    Real* o = out.plane(n, 0);
    const Real* first = x.value().plane(n, 0);
    std::copy(first, first + plane, o);
    for (int c = 1; c < s.c; ++c) {
      const Real* p = x.value().plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        if (p[i] > o[i]) {
          o[i] = p[i];
          arg[static_cast<std::size_t>(n) * plane + i] = c;
        }
      }
    }
  }
  return Variable::make(std::move(out), {x},
                        [x, arg = std::move(arg)](detail::Node& self) {
                          Tensor4& gx = x.node().grad_buffer();
                          const Shape s = gx.shape();
                          const std::size_t plane = s.plane();
                          for (int n = 0; n < s.n; ++n) {
                            const Real* g = self.grad.plane(n, 0);
                            for (std::size_t i = 0; i < plane; ++i) {
                              const int c =
                                  arg[static_cast<std::size_t>(n) * plane + i];
                              gx.plane(n, c)[i] += g[i];
                            }
                          }
                        });
}

Variable broadcast_mul_channelwise(const Variable& x, const Variable& s) {
  const Shape xs = x.shape(), ss = s.shape();
  if (ss.c != 1 || ss.n != xs.n || ss.h != xs.h || ss.w != xs.w) {
    throw ShapeError("broadcast_mul_channelwise: scale " + ss.str() +
                     " incompatible with " + xs.str());
  }
  const std::size_t plane = xs.plane();
  Tensor4 out = x.value();
  for (int n = 0; n < xs.n; ++n) {
    const Real* sp = s.value().plane(n, 0);
    for (int c = 0; c < xs.c; ++c) {
      Real* o = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) o[i] *= sp[i];
    }
  }
  return Variable::make(std::move(out), {x, s}, [x, s](detail::Node& self) {
    const Shape xs = x.shape();
    const std::size_t plane = xs.plane();
    for (int n = 0; n < xs.n; ++n) {
      const Real* sp = s.value().plane(n, 0);
      for (int c = 0; c < xs.c; ++c) {
        const Real* g = self.grad.plane(n, c);
        if (x.requires_grad()) {
          Real* gx = x.node().grad_buffer().plane(n, c);
          for (std::size_t i = 0; i < plane; ++i) gx[i] += g[i] * sp[i];
        }
        if (s.requires_grad()) {
          const Real* xv = x.value().plane(n, c);
          Real* gs = s.node().grad_buffer().plane(n, 0);
          for (std::size_t i = 0; i < plane; ++i) gs[i] += g[i] * xv[i];
        }
      }
    }
  });
}

Variable sum(const Variable& x) {
  double acc = 0.0;
  for (Real v : x.value().vec()) acc += v;
  return Variable::make(Tensor4::scalar(static_cast<Real>(acc)), {x},
                        [x](detail::Node& self) {
                          Tensor4& gx = x.node().grad_buffer();
                          const Real g = self.grad[0];
                          for (auto& v : gx.vec()) v += g;
                        });
}

Variable mean(const Variable& x) {
  const std::size_t count = x.value().size();
  if (count == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), Real(1) / static_cast<Real>(count));
}

Variable box_mean(const Variable& x, int window) {
  const Shape s = x.shape();
  if (window < 1 || window > s.h || window > s.w) {
    throw ShapeError("box_mean: window " + std::to_string(window) +
                     " does not fit plane " + s.str());
  }
  const int oh = s.h - window + 1, ow = s.w - window + 1;
  const Real inv = Real(1) / static_cast<Real>(window * window);
  Tensor4 out({s.n, s.c, oh, ow});
  std::vector<Real> rows(static_cast<std::size_t>(s.h) * ow);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const Real* p = x.value().plane(n, c);
      for (int y = 0; y < s.h; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
          Real acc = 0;
          for (int k = 0; k < window; ++k) acc += p[y * s.w + xx + k];
          rows[static_cast<std::size_t>(y) * ow + xx] = acc;
        }
      }
      Real* o = out.plane(n, c);
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
          Real acc = 0;
          for (int k = 0; k < window; ++k) {
            acc += rows[static_cast<std::size_t>(y + k) * ow + xx];
          }
          o[y * ow + xx] = acc * inv;
        }
      }
    }
  }
  return Variable::make(std::move(out), {x}, [x, window](detail::Node& self) {
    const Shape s = x.shape();
    Variable g(self.grad);
    NoGradGuard guard;
    x.node().accumulate(box_mean_adjoint(g, window, s.h, s.w).value());
  });
}

Variable box_mean_adjoint(const Variable& x, int window, int h, int w) {
  const Shape s = x.shape();
  if (window < 1 || s.h != h - window + 1 || s.w != w - window + 1) {
    throw ShapeError("box_mean_adjoint: input " + s.str() +
                     " inconsistent with window " + std::to_string(window));
  }
  const Real inv = Real(1) / static_cast<Real>(window * window);
  Tensor4 out({s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const Real* p = x.value().plane(n, c);
      Real* o = out.plane(n, c);
      for (int y = 0; y < s.h; ++y) {
        for (int xx = 0; xx < s.w; ++xx) {
          const Real v = p[y * s.w + xx] * inv;
          for (int ky = 0; ky < window; ++ky) {
            Real* orow = o + static_cast<std::size_t>(y + ky) * w + xx;
            for (int kx = 0; kx < window; ++kx) orow[kx] += v;
          }
        }
      }
    }
  }
  return Variable::make(std::move(out), {x}, [x, window](detail::Node& self) {
    Variable g(self.grad);
    NoGradGuard guard;
    x.node().accumulate(box_mean(g, window).value());
  });
}

CHNET_NS_END
