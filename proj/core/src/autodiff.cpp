#include "seis/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "seis/errors.hpp"

namespace seis {

// ---------------------------------------------------------------------------
// ParamStore

Parameter& ParamStore::add(std::string name, Tensor value, bool trainable) {
  if (index_.count(name))
    throw std::logic_error("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{std::move(name), std::move(value), Tensor{}, trainable});
  return params_.back();
}

Parameter* ParamStore::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParamStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second];
}

std::size_t ParamStore::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += p.value.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p.grad = Tensor{};
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor{}, {}, {}, requires_grad, nullptr});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  Var v = leaf(p.value, p.trainable);
  nodes_[v.idx].bound = &p;
  return v;
}

const Tensor& Tape::value(Var v) const {
  if (!v.valid() || v.idx >= nodes_.size())
    throw std::invalid_argument("tape: invalid node handle");
  return nodes_[v.idx].value;
}

const Tensor& Tape::grad(Var v) const {
  if (!v.valid() || v.idx >= nodes_.size())
    throw std::invalid_argument("tape: invalid node handle");
  return nodes_[v.idx].grad;
}

bool Tape::tracked(Var v) const { return nodes_[v.idx].requires_grad; }

Tensor* Tape::grad_accum(Var v) {
  Node& n = nodes_[v.idx];
  if (!n.requires_grad) return nullptr;
  if (n.grad.absent()) n.grad = Tensor::zeros(n.value.shape());
  return &n.grad;
}

Var Tape::emit(Tensor value, std::vector<Var> inputs, BackFn back) {
#ifndef NDEBUG
  if (!value.all_finite())
    throw NumericalError("operation produced non-finite values");
#endif
  bool req = false;
  for (Var in : inputs) req = req || nodes_[in.idx].requires_grad;
  nodes_.push_back(Node{std::move(value), Tensor{}, std::move(inputs),
                        req ? std::move(back) : BackFn{}, req, nullptr});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::backward(Var loss) {
  if (!loss.valid() || loss.idx >= nodes_.size())
    throw std::invalid_argument("backward: invalid loss handle");
  if (nodes_[loss.idx].value.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                shape_str(nodes_[loss.idx].value.shape()));
  if (ran_backward_) throw std::logic_error("backward: tape already swept");
  ran_backward_ = true;

  if (nodes_[loss.idx].requires_grad || nodes_[loss.idx].bound) {
    // A loss that is itself a leaf parameter is legal but pointless; seed anyway.
  }
  nodes_[loss.idx].requires_grad = true;
  *grad_accum(loss) = Tensor::ones(nodes_[loss.idx].value.shape());

  // Inputs always precede their consumers, so one reverse sweep visits every
  // node after all of its output gradients have arrived.
  for (std::uint32_t i = loss.idx + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.absent() || !n.back) continue;
    n.back(*this, Var{i});
  }

  for (Node& n : nodes_) {
    if (!n.bound || !n.bound->trainable) continue;
    Parameter& p = *n.bound;
    if (p.grad.absent()) p.grad = Tensor::zeros(p.value.shape());
    if (!n.grad.absent()) p.grad += n.grad;
  }
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

void conv2d_fw(const Tensor& x, const Tensor& w, const Tensor& b, int pad, Tensor& y) {
  const int B = static_cast<int>(x.dim(0)), Cin = static_cast<int>(x.dim(1));
  const int H = static_cast<int>(x.dim(2)), W = static_cast<int>(x.dim(3));
  const int Cout = static_cast<int>(w.dim(0)), k = static_cast<int>(w.dim(2));
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  for (int bi = 0; bi < B; ++bi)
    for (int co = 0; co < Cout; ++co) {
      double* yp = y.data() + (static_cast<std::size_t>(bi) * Cout + co) * HW;
      std::fill(yp, yp + HW, b[static_cast<std::size_t>(co)]);
      for (int ci = 0; ci < Cin; ++ci) {
        const double* xp = x.data() + (static_cast<std::size_t>(bi) * Cin + ci) * HW;
        const double* wp = w.data() + (static_cast<std::size_t>(co) * Cin + ci) * k * k;
        for (int kh = 0; kh < k; ++kh) {
          const int oh_lo = std::max(0, pad - kh), oh_hi = std::min(H, H + pad - kh);
          for (int kw = 0; kw < k; ++kw) {
            const double wv = wp[kh * k + kw];
            const int ow_lo = std::max(0, pad - kw), ow_hi = std::min(W, W + pad - kw);
            const int dw = kw - pad;
            for (int oh = oh_lo; oh < oh_hi; ++oh) {
              const double* xrow = xp + static_cast<std::size_t>(oh + kh - pad) * W;
              double* yrow = yp + static_cast<std::size_t>(oh) * W;
              for (int ow = ow_lo; ow < ow_hi; ++ow) yrow[ow] += wv * xrow[ow + dw];
            }
          }
        }
      }
    }
}

void conv2d_bw(const Tensor& x, const Tensor& w, const Tensor& gy, int pad,
               Tensor* gx, Tensor* gw, Tensor* gb) {
  const int B = static_cast<int>(x.dim(0)), Cin = static_cast<int>(x.dim(1));
  const int H = static_cast<int>(x.dim(2)), W = static_cast<int>(x.dim(3));
  const int Cout = static_cast<int>(w.dim(0)), k = static_cast<int>(w.dim(2));
  const std::size_t HW = static_cast<std::size_t>(H) * W;

  if (gb) {
    for (int co = 0; co < Cout; ++co) {
      double acc = 0.0;
      for (int bi = 0; bi < B; ++bi) {
        const double* gyp = gy.data() + (static_cast<std::size_t>(bi) * Cout + co) * HW;
        for (std::size_t i = 0; i < HW; ++i) acc += gyp[i];
      }
      (*gb)[static_cast<std::size_t>(co)] += acc;
    }
  }

  if (gw) {
    for (int co = 0; co < Cout; ++co)
      for (int ci = 0; ci < Cin; ++ci) {
        double* gwp = gw->data() + (static_cast<std::size_t>(co) * Cin + ci) * k * k;
        for (int kh = 0; kh < k; ++kh) {
          const int oh_lo = std::max(0, pad - kh), oh_hi = std::min(H, H + pad - kh);
          for (int kw = 0; kw < k; ++kw) {
            const int ow_lo = std::max(0, pad - kw), ow_hi = std::min(W, W + pad - kw);
            const int dw = kw - pad;
            double acc = 0.0;
            for (int bi = 0; bi < B; ++bi) {
              const double* gyp = gy.data() + (static_cast<std::size_t>(bi) * Cout + co) * HW;
              const double* xp = x.data() + (static_cast<std::size_t>(bi) * Cin + ci) * HW;
              for (int oh = oh_lo; oh < oh_hi; ++oh) {
                const double* gyr = gyp + static_cast<std::size_t>(oh) * W;
                const double* xrow = xp + static_cast<std::size_t>(oh + kh - pad) * W;
                for (int ow = ow_lo; ow < ow_hi; ++ow) acc += gyr[ow] * xrow[ow + dw];
              }
            }
            gwp[kh * k + kw] += acc;
          }
        }
      }
  }

  if (gx) {
    for (int bi = 0; bi < B; ++bi)
      for (int co = 0; co < Cout; ++co) {
        const double* gyp = gy.data() + (static_cast<std::size_t>(bi) * Cout + co) * HW;
        for (int ci = 0; ci < Cin; ++ci) {
          double* gxp = gx->data() + (static_cast<std::size_t>(bi) * Cin + ci) * HW;
          const double* wp = w.data() + (static_cast<std::size_t>(co) * Cin + ci) * k * k;
          for (int kh = 0; kh < k; ++kh) {
            const int oh_lo = std::max(0, pad - kh), oh_hi = std::min(H, H + pad - kh);
            for (int kw = 0; kw < k; ++kw) {
              const double wv = wp[kh * k + kw];
              const int ow_lo = std::max(0, pad - kw), ow_hi = std::min(W, W + pad - kw);
              const int dw = kw - pad;
              for (int oh = oh_lo; oh < oh_hi; ++oh) {
                double* gxrow = gxp + static_cast<std::size_t>(oh + kh - pad) * W;
                const double* gyr = gyp + static_cast<std::size_t>(oh) * W;
                for (int ow = ow_lo; ow < ow_hi; ++ow) gxrow[ow + dw] += wv * gyr[ow];
              }
            }
          }
        }
      }
  }
}

}  // namespace

Var conv2d(Tape& t, Var input, Var weight, Var bias, int padding) {
  const Tensor& x = t.value(input);
  const Tensor& w = t.value(weight);
  const Tensor& b = t.value(bias);
  if (x.ndim() != 4 || w.ndim() != 4 || b.ndim() != 1)
    throw std::invalid_argument("conv2d: expected input [B,Cin,H,W], weight "
                                "[Cout,Cin,k,k], bias [Cout]");
  const int k = static_cast<int>(w.dim(2));
  if (w.dim(3) != w.dim(2) || k % 2 == 0)
    throw std::invalid_argument("conv2d: kernel must be square with odd size");
  if (padding != (k - 1) / 2)
    throw std::invalid_argument("conv2d: padding must be (k-1)/2 to preserve size");
  if (w.dim(1) != x.dim(1))
    throw std::invalid_argument("conv2d: input channels " + std::to_string(x.dim(1)) +
                                " do not match weight channels " +
                                std::to_string(w.dim(1)));
  if (b.dim(0) != w.dim(0))
    throw std::invalid_argument("conv2d: bias length does not match output channels");

  Tensor y({x.dim(0), w.dim(0), x.dim(2), x.dim(3)});
  conv2d_fw(x, w, b, padding, y);

  return t.emit(std::move(y), {input, weight, bias},
                [input, weight, bias, padding](Tape& tp, Var self) {
                  const Tensor& gy = tp.grad(self);
                  conv2d_bw(tp.value(input), tp.value(weight), gy, padding,
                            tp.grad_accum(input), tp.grad_accum(weight),
                            tp.grad_accum(bias));
                });
}

// ---------------------------------------------------------------------------
// batch_norm

Var batch_norm(Tape& t, Var input, Var gamma, Var beta, BatchNormBuffers buffers,
               Mode mode, double eps, double momentum) {
  const Tensor& x = t.value(input);
  const Tensor& g = t.value(gamma);
  const Tensor& be = t.value(beta);
  if (x.ndim() != 4) throw std::invalid_argument("batch_norm: expected [N,C,H,W]");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (g.ndim() != 1 || g.dim(0) != C || be.ndim() != 1 || be.dim(0) != C)
    throw std::invalid_argument("batch_norm: gamma/beta must have shape [C]");
  if (!buffers.running_mean || !buffers.running_var ||
      buffers.running_mean->numel() != C || buffers.running_var->numel() != C)
    throw std::invalid_argument("batch_norm: running buffers must have shape [C]");
  const std::size_t n = N * HW;
  if (mode == Mode::train && n < 2)
    throw std::invalid_argument("batch_norm: need at least 2 values per channel "
                                "in train mode");

  std::vector<double> mu(C), invstd(C);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < N; ++b) {
        const double* xp = x.data() + (b * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) s += xp[i];
      }
      const double m = s / static_cast<double>(n);
      double sq = 0.0;
      for (std::size_t b = 0; b < N; ++b) {
        const double* xp = x.data() + (b * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = xp[i] - m;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(n);
      mu[c] = m;
      invstd[c] = 1.0 / std::sqrt(var + eps);
      (*buffers.running_mean)[c] = (1.0 - momentum) * (*buffers.running_mean)[c] + momentum * m;
      const double var_unbiased = sq / static_cast<double>(n - 1);
      (*buffers.running_var)[c] = (1.0 - momentum) * (*buffers.running_var)[c] + momentum * var_unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = (*buffers.running_mean)[c];
      invstd[c] = 1.0 / std::sqrt((*buffers.running_var)[c] + eps);
    }
  }

  Tensor y(x.shape());
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const double* xp = x.data() + (b * C + c) * HW;
      double* yp = y.data() + (b * C + c) * HW;
      const double m = mu[c], is = invstd[c], ga = g[c], bt = be[c];
      for (std::size_t i = 0; i < HW; ++i) yp[i] = ga * (xp[i] - m) * is + bt;
    }

  return t.emit(
      std::move(y), {input, gamma, beta},
      [input, gamma, beta, mode, mu, invstd, N, C, HW](Tape& tp, Var self) {
        const Tensor& gy = tp.grad(self);
        const Tensor& x = tp.value(input);
        const Tensor& g = tp.value(gamma);
        Tensor* gx = tp.grad_accum(input);
        Tensor* gg = tp.grad_accum(gamma);
        Tensor* gb = tp.grad_accum(beta);
        const double n = static_cast<double>(N * HW);
        for (std::size_t c = 0; c < C; ++c) {
          const double m = mu[c], is = invstd[c], ga = g[c];
          double sum_g = 0.0, sum_gxh = 0.0, sum_xc = 0.0;
          for (std::size_t b = 0; b < N; ++b) {
            const double* xp = x.data() + (b * C + c) * HW;
            const double* gp = gy.data() + (b * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              const double xc = xp[i] - m;
              sum_g += gp[i];
              sum_gxh += gp[i] * xc * is;
              sum_xc += xc;
            }
          }
          if (gg) (*gg)[c] += sum_gxh;
          if (gb) (*gb)[c] += sum_g;
          if (!gx) continue;
          if (mode == Mode::train) {
            // d/dx of the batch statistics themselves, with the exact
            // (floating-point) sum of centered values kept for the mean term.
            const double gvar = -0.5 * is * is * ga * sum_gxh;
            const double gmu = -is * ga * sum_g + gvar * (-2.0 / n) * sum_xc;
            for (std::size_t b = 0; b < N; ++b) {
              const double* xp = x.data() + (b * C + c) * HW;
              const double* gp = gy.data() + (b * C + c) * HW;
              double* gxp = gx->data() + (b * C + c) * HW;
              for (std::size_t i = 0; i < HW; ++i)
                gxp[i] += ga * is * gp[i] + gvar * 2.0 * (xp[i] - m) / n + gmu / n;
            }
          } else {
            for (std::size_t b = 0; b < N; ++b) {
              const double* gp = gy.data() + (b * C + c) * HW;
              double* gxp = gx->data() + (b * C + c) * HW;
              for (std::size_t i = 0; i < HW; ++i) gxp[i] += ga * is * gp[i];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// elementwise and structural ops

Var leaky_relu(Tape& t, Var input, double slope) {
  if (!(slope > 0.0 && slope < 1.0))
    throw std::invalid_argument("leaky_relu: slope must be in (0,1)");
  const Tensor& x = t.value(input);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] >= 0.0 ? x[i] : slope * x[i];
  return t.emit(std::move(y), {input}, [input, slope](Tape& tp, Var self) {
    const Tensor& gy = tp.grad(self);
    const Tensor& x = tp.value(input);
    if (Tensor* gx = tp.grad_accum(input))
      for (std::size_t i = 0; i < x.numel(); ++i)
        (*gx)[i] += gy[i] * (x[i] >= 0.0 ? 1.0 : slope);
  });
}

Var max_pool2(Tape& t, Var input) {
  const Tensor& x = t.value(input);
  if (x.ndim() != 4) throw std::invalid_argument("max_pool2: expected [B,C,H,W]");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw std::invalid_argument("max_pool2: H and W must be even, got " +
                                shape_str(x.shape()));
  const std::size_t oh = H / 2, ow = W / 2;
  Tensor y({B, C, oh, ow});
  std::vector<std::uint32_t> argmax(y.numel());
  std::size_t oi = 0;
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* xp = x.data() + bc * H * W;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j, ++oi) {
        // Scan the 2x2 window in row-major order; strict > keeps the first max.
        std::size_t best = (2 * i) * W + 2 * j;
        double bv = xp[best];
        const std::size_t cand[3] = {(2 * i) * W + 2 * j + 1, (2 * i + 1) * W + 2 * j,
                                     (2 * i + 1) * W + 2 * j + 1};
        for (std::size_t c2 : cand)
          if (xp[c2] > bv) {
            bv = xp[c2];
            best = c2;
          }
        y[oi] = bv;
        argmax[oi] = static_cast<std::uint32_t>(bc * H * W + best);
      }
  }
  return t.emit(std::move(y), {input},
                [input, argmax = std::move(argmax)](Tape& tp, Var self) {
                  const Tensor& gy = tp.grad(self);
                  if (Tensor* gx = tp.grad_accum(input))
                    for (std::size_t i = 0; i < gy.numel(); ++i)
                      (*gx)[argmax[i]] += gy[i];
                });
}

Var upsample_nearest2(Tape& t, Var input) {
  const Tensor& x = t.value(input);
  if (x.ndim() != 4) throw std::invalid_argument("upsample_nearest2: expected [B,C,h,w]");
  const std::size_t BC = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({x.dim(0), x.dim(1), 2 * h, 2 * w});
  for (std::size_t bc = 0; bc < BC; ++bc) {
    const double* xp = x.data() + bc * h * w;
    double* yp = y.data() + bc * 4 * h * w;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double v = xp[i * w + j];
        double* o = yp + (2 * i) * (2 * w) + 2 * j;
        o[0] = v;
        o[1] = v;
        o[2 * w] = v;
        o[2 * w + 1] = v;
      }
  }
  return t.emit(std::move(y), {input}, [input, h, w, BC](Tape& tp, Var self) {
    const Tensor& gy = tp.grad(self);
    if (Tensor* gx = tp.grad_accum(input))
      for (std::size_t bc = 0; bc < BC; ++bc) {
        const double* gp = gy.data() + bc * 4 * h * w;
        double* gxp = gx->data() + bc * h * w;
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const double* o = gp + (2 * i) * (2 * w) + 2 * j;
            gxp[i * w + j] += o[0] + o[1] + o[2 * w] + o[2 * w + 1];
          }
      }
  });
}

Var concat_channels(Tape& t, Var a, Var b) {
  const Tensor& xa = t.value(a);
  const Tensor& xb = t.value(b);
  if (xa.ndim() < 3 || xa.ndim() != xb.ndim())
    throw std::invalid_argument("concat_channels: rank mismatch or rank < 3");
  const std::size_t nd = xa.ndim(), axis = nd - 3;
  for (std::size_t i = 0; i < nd; ++i)
    if (i != axis && xa.dim(i) != xb.dim(i))
      throw std::invalid_argument("concat_channels: shapes " + shape_str(xa.shape()) +
                                  " and " + shape_str(xb.shape()) +
                                  " differ outside the channel axis");
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xa.dim(i);
  const std::size_t hw = xa.dim(nd - 2) * xa.dim(nd - 1);
  const std::size_t ca = xa.dim(axis) * hw, cb = xb.dim(axis) * hw;

  Shape yshape = xa.shape();
  yshape[axis] = xa.dim(axis) + xb.dim(axis);
  Tensor y(yshape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xa.data() + o * ca, ca, y.data() + o * (ca + cb));
    std::copy_n(xb.data() + o * cb, cb, y.data() + o * (ca + cb) + ca);
  }
  return t.emit(std::move(y), {a, b}, [a, b, outer, ca, cb](Tape& tp, Var self) {
    const Tensor& gy = tp.grad(self);
    Tensor* ga = tp.grad_accum(a);
    Tensor* gb = tp.grad_accum(b);
    for (std::size_t o = 0; o < outer; ++o) {
      const double* gp = gy.data() + o * (ca + cb);
      if (ga)
        for (std::size_t i = 0; i < ca; ++i) (*ga)[o * ca + i] += gp[i];
      if (gb)
        for (std::size_t i = 0; i < cb; ++i) (*gb)[o * cb + i] += gp[ca + i];
    }
  });
}

Var mean_over_set(Tape& t, Var stack) {
  const Tensor& x = t.value(stack);
  if (x.ndim() < 1 || x.dim(0) == 0)
    throw std::invalid_argument("mean_over_set: set axis must have size >= 1");
  const std::size_t S = x.dim(0), rest = x.numel() / S;
  Shape yshape(x.shape().begin() + 1, x.shape().end());
  Tensor y(yshape);
  for (std::size_t s = 0; s < S; ++s) {
    const double* xp = x.data() + s * rest;
    for (std::size_t i = 0; i < rest; ++i) y[i] += xp[i];
  }
  const double inv = 1.0 / static_cast<double>(S);
  y *= inv;
  return t.emit(std::move(y), {stack}, [stack, S, rest, inv](Tape& tp, Var self) {
    const Tensor& gy = tp.grad(self);
    if (Tensor* gx = tp.grad_accum(stack))
      for (std::size_t s = 0; s < S; ++s) {
        double* gp = gx->data() + s * rest;
        for (std::size_t i = 0; i < rest; ++i) gp[i] += gy[i] * inv;
      }
  });
}

Var repeat_set(Tape& t, Var input, std::size_t set_size) {
  if (set_size == 0) throw std::invalid_argument("repeat_set: set size must be >= 1");
  const Tensor& x = t.value(input);
  Shape yshape;
  yshape.reserve(x.ndim() + 1);
  yshape.push_back(set_size);
  yshape.insert(yshape.end(), x.shape().begin(), x.shape().end());
  Tensor y(yshape);
  for (std::size_t s = 0; s < set_size; ++s)
    std::copy_n(x.data(), x.numel(), y.data() + s * x.numel());
  return t.emit(std::move(y), {input}, [input, set_size](Tape& tp, Var self) {
    const Tensor& gy = tp.grad(self);
    if (Tensor* gx = tp.grad_accum(input)) {
      const std::size_t n = gx->numel();
      for (std::size_t s = 0; s < set_size; ++s) {
        const double* gp = gy.data() + s * n;
        for (std::size_t i = 0; i < n; ++i) (*gx)[i] += gp[i];
      }
    }
  });
}

Var reshape(Tape& t, Var input, Shape new_shape) {
  const Tensor& x = t.value(input);
  Tensor y = x.reshaped(std::move(new_shape));
  return t.emit(std::move(y), {input}, [input](Tape& tp, Var self) {
    const Tensor& gy = tp.grad(self);
    if (Tensor* gx = tp.grad_accum(input))
      for (std::size_t i = 0; i < gy.numel(); ++i) (*gx)[i] += gy[i];
  });
}

Var l1_loss(Tape& t, Var pred, Var target) {
  const Tensor& p = t.value(pred);
  const Tensor& y = t.value(target);
  if (!p.same_shape(y))
    throw std::invalid_argument("l1_loss: shape mismatch " + shape_str(p.shape()) +
                                " vs " + shape_str(y.shape()));
  if (p.numel() == 0) throw std::invalid_argument("l1_loss: empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) acc += std::fabs(p[i] - y[i]);
  const double n = static_cast<double>(p.numel());
  return t.emit(Tensor::scalar(acc / n), {pred, target},
                [pred, target, n](Tape& tp, Var self) {
                  const double g = tp.grad(self)[0] / n;
                  const Tensor& p = tp.value(pred);
                  const Tensor& y = tp.value(target);
                  Tensor* gp = tp.grad_accum(pred);
                  Tensor* gt = tp.grad_accum(target);
                  for (std::size_t i = 0; i < p.numel(); ++i) {
                    const double d = p[i] - y[i];
                    const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                    if (gp) (*gp)[i] += g * s;
                    if (gt) (*gt)[i] -= g * s;
                  }
                });
}

Var sum_all(Tape& t, Var input) {
  const Tensor& x = t.value(input);
  return t.emit(Tensor::scalar(x.sum()), {input}, [input](Tape& tp, Var self) {
    const double g = tp.grad(self)[0];
    if (Tensor* gx = tp.grad_accum(input))
      for (std::size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += g;
  });
}

Var inner(Tape& t, Var input, const Tensor& weights) {
  const Tensor& x = t.value(input);
  if (!x.same_shape(weights))
    throw std::invalid_argument("inner: weights shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x[i] * weights[i];
  return t.emit(Tensor::scalar(acc), {input},
                [input, weights](Tape& tp, Var self) {
                  const double g = tp.grad(self)[0];
                  if (Tensor* gx = tp.grad_accum(input))
                    for (std::size_t i = 0; i < gx->numel(); ++i)
                      (*gx)[i] += g * weights[i];
                });
}

}  // namespace seis
