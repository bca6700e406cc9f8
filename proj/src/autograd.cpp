#include "crowdcount/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "crowdcount/error.hpp"

namespace crowdcount::ag {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& in : inputs) node->requires_grad = node->requires_grad || in.requires_grad();
  if (node->requires_grad) {
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(fn);
  }
  return Var(std::move(node));
}

void check(bool cond, const std::string& what) { require(cond, ErrorCode::Argument, what); }

void check_rank4(const Var& x, const char* op) {
  check(x.value().rank() == 4, std::string(op) + ": expected N×C×H×W input, got " +
                                   shape_string(x.shape()));
}

// cols is (Ci*k*k) × (Ho*Wo), row-major.
void im2col(const double* x, int64_t ci, int64_t h, int64_t w, int64_t k, int64_t stride,
            int64_t pad, int64_t ho, int64_t wo, double* cols) {
  for (int64_t c = 0; c < ci; ++c) {
    const double* plane = x + c * h * w;
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx) {
        double* row = cols + ((c * k + ky) * k + kx) * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
          const int64_t iy = oy * stride - pad + ky;
          double* out = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + wo, 0.0);
            continue;
          }
          const double* src = plane + iy * w;
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t ix = ox * stride - pad + kx;
            out[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, int64_t ci, int64_t h, int64_t w, int64_t k, int64_t stride,
                int64_t pad, int64_t ho, int64_t wo, double* x) {
  for (int64_t c = 0; c < ci; ++c) {
    double* plane = x + c * h * w;
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx) {
        const double* row = cols + ((c * k + ky) * k + kx) * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
          const int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = plane + iy * w;
          const double* src = row + oy * wo;
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.data.empty() && !value.data.empty()) grad = Tensor(value.shape, 0.0);
  if (grad.shape != value.shape) grad = Tensor(value.shape, 0.0);
  return grad;
}

Tensor Var::grad() const {
  if (!node_) return {};
  if (node_->grad.shape != node_->value.shape) return Tensor(node_->value.shape, 0.0);
  return node_->grad;
}

Var constant(Tensor t) { return leaf(std::move(t), false); }

Var leaf(Tensor t, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(t);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

void backward(const Var& loss) {
  require(loss.defined() && loss.value().numel() == 1, ErrorCode::Internal,
          "backward() expects a scalar loss");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer().data[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.data.empty()) node->backward(*node);
  }
}

Var conv2d(const Var& x, const Var& weight, int64_t stride, int64_t pad) {
  check_rank4(x, "conv2d");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  check(wv.rank() == 4 && wv.dim(1) == xv.c() && wv.dim(2) == wv.dim(3),
        "conv2d: weight " + shape_string(wv.shape) + " incompatible with input " +
            shape_string(xv.shape));
  const int64_t n = xv.n(), ci = xv.c(), h = xv.h(), w = xv.w();
  const int64_t co = wv.dim(0), k = wv.dim(2);
  const int64_t ho = (h + 2 * pad - k) / stride + 1;
  const int64_t wo = (w + 2 * pad - k) / stride + 1;
  check(ho >= 1 && wo >= 1, "conv2d: input too small for kernel");
  const int64_t kk = ci * k * k, p = ho * wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  Tensor out(Shape{n, co, ho, wo});
  ConstMapMat wm(wv.data.data(), co, kk);
  std::vector<double> cols(direct ? 0 : static_cast<size_t>(kk * p));
  for (int64_t b = 0; b < n; ++b) {
    const double* xb = xv.data.data() + b * ci * h * w;
    const double* colptr = xb;
    if (!direct) {
      im2col(xb, ci, h, w, k, stride, pad, ho, wo, cols.data());
      colptr = cols.data();
    }
    MapMat(out.data.data() + b * co * p, co, p).noalias() = wm * ConstMapMat(colptr, kk, p);
  }

  return make_result(std::move(out), {x, weight}, [=](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    const Tensor& xval = xn.value;
    ConstMapMat wmat(wn.value.data.data(), co, kk);
    std::vector<double> colbuf(direct ? 0 : static_cast<size_t>(kk * p));
    std::vector<double> dcols(static_cast<size_t>(kk * p));
    for (int64_t b = 0; b < n; ++b) {
      ConstMapMat gout(self.grad.data.data() + b * co * p, co, p);
      const double* xb = xval.data.data() + b * ci * h * w;
      if (wn.requires_grad) {
        const double* colptr = xb;
        if (!direct) {
          im2col(xb, ci, h, w, k, stride, pad, ho, wo, colbuf.data());
          colptr = colbuf.data();
        }
        MapMat(wn.grad_buffer().data.data(), co, kk).noalias() +=
            gout * ConstMapMat(colptr, kk, p).transpose();
      }
      if (xn.requires_grad) {
        double* gx = xn.grad_buffer().data.data() + b * ci * h * w;
        if (direct) {
          MapMat(gx, ci, p).noalias() += wmat.transpose() * gout;
        } else {
          MapMat(dcols.data(), kk, p).noalias() = wmat.transpose() * gout;
          col2im_add(dcols.data(), ci, h, w, k, stride, pad, ho, wo, gx);
        }
      }
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormBuffers buffers,
               const BatchNormOptions& opts) {
  check_rank4(x, "batch_norm");
  const Tensor& xv = x.value();
  const int64_t n = xv.n(), c = xv.c(), hw = xv.h() * xv.w();
  check(gamma.value().numel() == c && beta.value().numel() == c,
        "batch_norm: affine parameters do not match channel count");
  check(buffers.running_mean && buffers.running_var, "batch_norm: missing running buffers");
  const double count = static_cast<double>(n * hw);

  std::vector<double> mean(static_cast<size_t>(c)), invstd(static_cast<size_t>(c));
  for (int64_t ch = 0; ch < c; ++ch) {
    const auto i = static_cast<size_t>(ch);
    if (opts.training) {
      double s = 0.0;
      for (int64_t b = 0; b < n; ++b) {
        const double* p = xv.data.data() + (b * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) s += p[j];
      }
      const double mu = s / count;
      double ss = 0.0;
      for (int64_t b = 0; b < n; ++b) {
        const double* p = xv.data.data() + (b * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) ss += (p[j] - mu) * (p[j] - mu);
      }
      const double var = ss / count;
      mean[i] = mu;
      invstd[i] = 1.0 / std::sqrt(var + opts.eps);
      if (opts.update_running && buffers.update_mean && buffers.update_var) {
        const double unbiased = count > 1 ? ss / (count - 1) : var;
        const double rm = buffers.running_mean->data[i];
        const double rv = buffers.running_var->data[i];
        buffers.update_mean->data[i] = (1.0 - opts.momentum) * rm + opts.momentum * mu;
        buffers.update_var->data[i] = (1.0 - opts.momentum) * rv + opts.momentum * unbiased;
      }
    } else {
      mean[i] = buffers.running_mean->data[i];
      invstd[i] = 1.0 / std::sqrt(buffers.running_var->data[i] + opts.eps);
    }
  }

  Tensor xhat(xv.shape);
  Tensor out(xv.shape);
  const auto& g = gamma.value().data;
  const auto& bt = beta.value().data;
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const auto i = static_cast<size_t>(ch);
      const int64_t off = (b * c + ch) * hw;
      for (int64_t j = 0; j < hw; ++j) {
        const double xh = (xv.data[static_cast<size_t>(off + j)] - mean[i]) * invstd[i];
        xhat.data[static_cast<size_t>(off + j)] = xh;
        out.data[static_cast<size_t>(off + j)] = g[i] * xh + bt[i];
      }
    }
  }

  const bool training = opts.training;
  return make_result(std::move(out), {x, gamma, beta},
                     [=, xhat = std::move(xhat)](Node& self) {
    Node& xn = *self.parents[0];
    Node& gn = *self.parents[1];
    Node& bn = *self.parents[2];
    const auto& gy = self.grad.data;
    std::vector<double> dgamma(static_cast<size_t>(c), 0.0), dbeta(static_cast<size_t>(c), 0.0);
    for (int64_t b = 0; b < n; ++b) {
      for (int64_t ch = 0; ch < c; ++ch) {
        const int64_t off = (b * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) {
          const auto k = static_cast<size_t>(off + j);
          dgamma[static_cast<size_t>(ch)] += gy[k] * xhat.data[k];
          dbeta[static_cast<size_t>(ch)] += gy[k];
        }
      }
    }
    if (gn.requires_grad) {
      auto& gg = gn.grad_buffer().data;
      for (int64_t ch = 0; ch < c; ++ch) gg[static_cast<size_t>(ch)] += dgamma[static_cast<size_t>(ch)];
    }
    if (bn.requires_grad) {
      auto& gb = bn.grad_buffer().data;
      for (int64_t ch = 0; ch < c; ++ch) gb[static_cast<size_t>(ch)] += dbeta[static_cast<size_t>(ch)];
    }
    if (xn.requires_grad) {
      auto& gx = xn.grad_buffer().data;
      const auto& gam = gn.value.data;
      for (int64_t b = 0; b < n; ++b) {
        for (int64_t ch = 0; ch < c; ++ch) {
          const auto i = static_cast<size_t>(ch);
          const int64_t off = (b * c + ch) * hw;
          const double a = gam[i] * invstd[i];
          for (int64_t j = 0; j < hw; ++j) {
            const auto k = static_cast<size_t>(off + j);
            if (training) {
              gx[k] += a / count * (count * gy[k] - dbeta[i] - xhat.data[k] * dgamma[i]);
            } else {
              gx[k] += a * gy[k];
            }
          }
        }
      }
    }
  });
}

namespace {
thread_local ReluTrace* g_relu_trace = nullptr;
}

void relu_trace_begin(ReluTrace& trace) {
  trace.cursor = 0;
  if (!trace.replay) trace.pattern.clear();
  g_relu_trace = &trace;
}

void relu_trace_end() { g_relu_trace = nullptr; }

Var relu(const Var& x) {
  Tensor out = x.value();
  ReluTrace* t = g_relu_trace;
  if (t && t->replay) {
    check(t->cursor + out.data.size() <= t->pattern.size(), "relu: replayed pattern is too short");
    std::vector<uint8_t> mask(t->pattern.begin() + static_cast<std::ptrdiff_t>(t->cursor),
                              t->pattern.begin() + static_cast<std::ptrdiff_t>(t->cursor + out.data.size()));
    t->cursor += out.data.size();
    for (size_t i = 0; i < out.data.size(); ++i)
      if (!mask[i]) out.data[i] = 0.0;
    return make_result(std::move(out), {x}, [mask = std::move(mask)](Node& self) {
      Node& xn = *self.parents[0];
      auto& gx = xn.grad_buffer().data;
      for (size_t i = 0; i < gx.size(); ++i)
        if (mask[i]) gx[i] += self.grad.data[i];
    });
  }
  if (t)
    for (double v : out.data) t->pattern.push_back(v > 0.0);
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), {x}, [](Node& self) {
    Node& xn = *self.parents[0];
    auto& gx = xn.grad_buffer().data;
    for (size_t i = 0; i < gx.size(); ++i)
      if (xn.value.data[i] > 0.0) gx[i] += self.grad.data[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  return make_result(std::move(out), {x}, [](Node& self) {
    auto& gx = self.parents[0]->grad_buffer().data;
    for (size_t i = 0; i < gx.size(); ++i) {
      const double y = self.value.data[i];
      gx[i] += self.grad.data[i] * y * (1.0 - y);
    }
  });
}

Var add(const Var& a, const Var& b) {
  check(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
  Tensor out = a.value();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.value().data[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer().data;
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
    }
  });
}

Var add_all(std::span<const Var> terms) {
  check(!terms.empty(), "add_all: no terms");
  Tensor out = terms[0].value();
  for (size_t t = 1; t < terms.size(); ++t) {
    check(terms[t].shape() == out.shape, "add_all: shape mismatch");
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += terms[t].value().data[i];
  }
  return make_result(std::move(out), std::vector<Var>(terms.begin(), terms.end()), [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer().data;
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = x.value();
  for (auto& v : out.data) v *= factor;
  return make_result(std::move(out), {x}, [factor](Node& self) {
    auto& g = self.parents[0]->grad_buffer().data;
    for (size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad.data[i];
  });
}

Var mul_channels(const Var& x, const Var& mask) {
  check_rank4(x, "mul_channels");
  const Tensor& xv = x.value();
  const Tensor& mv = mask.value();
  check(mv.rank() == 4 && mv.n() == xv.n() && mv.c() == 1 && mv.h() == xv.h() && mv.w() == xv.w(),
        "mul_channels: mask " + shape_string(mv.shape) + " does not broadcast over " +
            shape_string(xv.shape));
  const int64_t n = xv.n(), c = xv.c(), hw = xv.h() * xv.w();
  Tensor out(xv.shape);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t j = 0; j < hw; ++j)
        out.data[static_cast<size_t>((b * c + ch) * hw + j)] =
            xv.data[static_cast<size_t>((b * c + ch) * hw + j)] * mv.data[static_cast<size_t>(b * hw + j)];
  return make_result(std::move(out), {x, mask}, [=](Node& self) {
    Node& xn = *self.parents[0];
    Node& mn = *self.parents[1];
    for (int64_t b = 0; b < n; ++b)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t j = 0; j < hw; ++j) {
          const auto k = static_cast<size_t>((b * c + ch) * hw + j);
          const auto m = static_cast<size_t>(b * hw + j);
          if (xn.requires_grad) xn.grad_buffer().data[k] += self.grad.data[k] * mn.value.data[m];
          if (mn.requires_grad) mn.grad_buffer().data[m] += self.grad.data[k] * xn.value.data[k];
        }
  });
}

Var concat_channels(std::span<const Var> parts) {
  check(!parts.empty(), "concat_channels: no inputs");
  for (const auto& p : parts) check_rank4(p, "concat_channels");
  const Shape& s0 = parts[0].shape();
  int64_t total_c = 0;
  std::vector<int64_t> offsets;
  for (const auto& p : parts) {
    check(p.shape()[0] == s0[0] && p.shape()[2] == s0[2] && p.shape()[3] == s0[3],
          "concat_channels: batch/spatial mismatch " + shape_string(p.shape()) + " vs " +
              shape_string(s0));
    offsets.push_back(total_c);
    total_c += p.shape()[1];
  }
  const int64_t n = s0[0], hw = s0[2] * s0[3];
  Tensor out(Shape{n, total_c, s0[2], s0[3]});
  for (size_t t = 0; t < parts.size(); ++t) {
    const Tensor& pv = parts[t].value();
    const int64_t c = pv.c();
    for (int64_t b = 0; b < n; ++b)
      std::copy_n(pv.data.begin() + b * c * hw, c * hw,
                  out.data.begin() + (b * total_c + offsets[t]) * hw);
  }
  return make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                     [=](Node& self) {
    for (size_t t = 0; t < self.parents.size(); ++t) {
      Node& pn = *self.parents[t];
      if (!pn.requires_grad) continue;
      const int64_t c = pn.value.c();
      auto& g = pn.grad_buffer().data;
      for (int64_t b = 0; b < n; ++b) {
        const double* src = self.grad.data.data() + (b * total_c + offsets[t]) * hw;
        double* dst = g.data() + b * c * hw;
        for (int64_t j = 0; j < c * hw; ++j) dst[j] += src[j];
      }
    }
  });
}

Var resize_bilinear(const Var& x, int64_t out_h, int64_t out_w) {
  check_rank4(x, "resize_bilinear");
  check(out_h >= 1 && out_w >= 1, "resize_bilinear: output extents must be >= 1");
  const Tensor& xv = x.value();
  const int64_t planes = xv.n() * xv.c(), h = xv.h(), w = xv.w();
  if (h == out_h && w == out_w) {
    return make_result(xv, {x}, [](Node& self) {
      auto& g = self.parents[0]->grad_buffer().data;
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
    });
  }
  const ResizeTaps ty = ResizeTaps::make(h, out_h);
  const ResizeTaps tx = ResizeTaps::make(w, out_w);
  Tensor out(Shape{xv.n(), xv.c(), out_h, out_w});
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = xv.data.data() + p * h * w;
    double* dst = out.data.data() + p * out_h * out_w;
    for (int64_t i = 0; i < out_h; ++i) {
      const auto iy = static_cast<size_t>(i);
      const double fy = ty.frac[iy];
      const double* r0 = src + ty.lo[iy] * w;
      const double* r1 = src + ty.hi[iy] * w;
      for (int64_t j = 0; j < out_w; ++j) {
        const auto jx = static_cast<size_t>(j);
        const double fx = tx.frac[jx];
        const double top = (1.0 - fx) * r0[tx.lo[jx]] + fx * r0[tx.hi[jx]];
        const double bot = (1.0 - fx) * r1[tx.lo[jx]] + fx * r1[tx.hi[jx]];
        dst[i * out_w + j] = (1.0 - fy) * top + fy * bot;
      }
    }
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    auto& g = self.parents[0]->grad_buffer().data;
    for (int64_t p = 0; p < planes; ++p) {
      const double* go = self.grad.data.data() + p * out_h * out_w;
      double* gi = g.data() + p * h * w;
      for (int64_t i = 0; i < out_h; ++i) {
        const auto iy = static_cast<size_t>(i);
        const double fy = ty.frac[iy];
        for (int64_t j = 0; j < out_w; ++j) {
          const auto jx = static_cast<size_t>(j);
          const double fx = tx.frac[jx];
          const double v = go[i * out_w + j];
          gi[ty.lo[iy] * w + tx.lo[jx]] += (1.0 - fy) * (1.0 - fx) * v;
          gi[ty.lo[iy] * w + tx.hi[jx]] += (1.0 - fy) * fx * v;
          gi[ty.hi[iy] * w + tx.lo[jx]] += fy * (1.0 - fx) * v;
          gi[ty.hi[iy] * w + tx.hi[jx]] += fy * fx * v;
        }
      }
    }
  });
}

Var avg_pool2(const Var& x) {
  check_rank4(x, "avg_pool2");
  const Tensor& xv = x.value();
  const int64_t planes = xv.n() * xv.c(), h = xv.h(), w = xv.w();
  const int64_t oh = h / 2, ow = w / 2;
  check(oh >= 1 && ow >= 1, "avg_pool2: input smaller than the 2×2 window");
  Tensor out(Shape{xv.n(), xv.c(), oh, ow});
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = xv.data.data() + p * h * w;
    double* dst = out.data.data() + p * oh * ow;
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j)
        dst[i * ow + j] = 0.25 * (src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1] +
                                  src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1]);
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    auto& g = self.parents[0]->grad_buffer().data;
    for (int64_t p = 0; p < planes; ++p) {
      const double* go = self.grad.data.data() + p * oh * ow;
      double* gi = g.data() + p * h * w;
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          const double v = 0.25 * go[i * ow + j];
          gi[2 * i * w + 2 * j] += v;
          gi[2 * i * w + 2 * j + 1] += v;
          gi[(2 * i + 1) * w + 2 * j] += v;
          gi[(2 * i + 1) * w + 2 * j + 1] += v;
        }
    }
  });
}

Var flatten(const Var& x) {
  const Tensor& xv = x.value();
  check(xv.rank() >= 1, "flatten: scalar input");
  const int64_t n = xv.dim(0);
  Tensor out(Shape{n, n ? xv.numel() / n : 0}, xv.data);
  return make_result(std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer().data;
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  check(xv.rank() == 2 && wv.rank() == 2 && wv.dim(1) == xv.dim(1) &&
            bias.value().numel() == wv.dim(0),
        "linear: input " + shape_string(xv.shape) + " incompatible with weight " +
            shape_string(wv.shape));
  const int64_t n = xv.dim(0), f = xv.dim(1), o = wv.dim(0);
  Tensor out(Shape{n, o});
  MapMat om(out.data.data(), n, o);
  om.noalias() = ConstMapMat(xv.data.data(), n, f) * ConstMapMat(wv.data.data(), o, f).transpose();
  for (int64_t b = 0; b < n; ++b)
    for (int64_t j = 0; j < o; ++j) om(b, j) += bias.value().data[static_cast<size_t>(j)];
  return make_result(std::move(out), {x, weight, bias}, [=](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node& bn = *self.parents[2];
    ConstMapMat gout(self.grad.data.data(), n, o);
    if (xn.requires_grad)
      MapMat(xn.grad_buffer().data.data(), n, f).noalias() +=
          gout * ConstMapMat(wn.value.data.data(), o, f);
    if (wn.requires_grad)
      MapMat(wn.grad_buffer().data.data(), o, f).noalias() +=
          gout.transpose() * ConstMapMat(xn.value.data.data(), n, f);
    if (bn.requires_grad) {
      auto& gb = bn.grad_buffer().data;
      for (int64_t b = 0; b < n; ++b)
        for (int64_t j = 0; j < o; ++j) gb[static_cast<size_t>(j)] += gout(b, j);
    }
  });
}

Var gather_batch(const Var& x, std::span<const int64_t> index) {
  const Tensor& xv = x.value();
  check(xv.rank() >= 1, "gather_batch: scalar input");
  const int64_t n = xv.dim(0);
  const int64_t block = n ? xv.numel() / n : 0;
  Shape shape = xv.shape;
  shape[0] = static_cast<int64_t>(index.size());
  Tensor out(shape);
  for (size_t i = 0; i < index.size(); ++i) {
    check(index[i] >= 0 && index[i] < n, "gather_batch: index out of range");
    std::copy_n(xv.data.begin() + index[i] * block, block,
                out.data.begin() + static_cast<int64_t>(i) * block);
  }
  std::vector<int64_t> idx(index.begin(), index.end());
  return make_result(std::move(out), {x}, [idx = std::move(idx), block](Node& self) {
    auto& g = self.parents[0]->grad_buffer().data;
    for (size_t i = 0; i < idx.size(); ++i) {
      const double* src = self.grad.data.data() + static_cast<int64_t>(i) * block;
      double* dst = g.data() + idx[i] * block;
      for (int64_t j = 0; j < block; ++j) dst[j] += src[j];
    }
  });
}

Var softmax_rows(const Var& logits) {
  const Tensor& lv = logits.value();
  check(lv.rank() == 2, "softmax_rows: expected N×K logits");
  const int64_t n = lv.dim(0), k = lv.dim(1);
  Tensor out(lv.shape);
  for (int64_t b = 0; b < n; ++b) {
    const double* row = lv.data.data() + b * k;
    double* dst = out.data.data() + b * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (int64_t j = 0; j < k; ++j) z += (dst[j] = std::exp(row[j] - mx));
    for (int64_t j = 0; j < k; ++j) dst[j] /= z;
  }
  return make_result(std::move(out), {logits}, [=](Node& self) {
    auto& g = self.parents[0]->grad_buffer().data;
    for (int64_t b = 0; b < n; ++b) {
      const double* y = self.value.data.data() + b * k;
      const double* gy = self.grad.data.data() + b * k;
      double dot = 0.0;
      for (int64_t j = 0; j < k; ++j) dot += gy[j] * y[j];
      for (int64_t j = 0; j < k; ++j) g[static_cast<size_t>(b * k + j)] += y[j] * (gy[j] - dot);
    }
  });
}

Var mse_loss(const Var& pred, std::span<const double> target) {
  const Tensor& pv = pred.value();
  check(static_cast<size_t>(pv.numel()) == target.size() && !target.empty(),
        "mse_loss: prediction/target size mismatch");
  const double m = static_cast<double>(target.size());
  double s = 0.0;
  for (size_t i = 0; i < target.size(); ++i) s += (pv.data[i] - target[i]) * (pv.data[i] - target[i]);
  std::vector<double> tgt(target.begin(), target.end());
  return make_result(Tensor::scalar(s / m), {pred}, [tgt = std::move(tgt), m](Node& self) {
    Node& pn = *self.parents[0];
    auto& g = pn.grad_buffer().data;
    const double gs = self.grad.data[0];
    for (size_t i = 0; i < tgt.size(); ++i) g[i] += gs * 2.0 * (pn.value.data[i] - tgt[i]) / m;
  });
}

Var class_cross_entropy(const Var& probs, std::span<const int> labels, double eps) {
  const Tensor& pv = probs.value();
  check(pv.rank() == 2 && static_cast<size_t>(pv.dim(0)) == labels.size() && !labels.empty(),
        "class_cross_entropy: probability/label size mismatch");
  const int64_t n = pv.dim(0), k = pv.dim(1);
  double s = 0.0;
  for (int64_t b = 0; b < n; ++b) {
    const int y = labels[static_cast<size_t>(b)];
    check(y >= 0 && y < k, "class_cross_entropy: label out of range");
    s -= std::log(std::clamp(pv.data[static_cast<size_t>(b * k + y)], eps, 1.0 - eps));
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result(Tensor::scalar(s / static_cast<double>(n)), {probs},
                     [lab = std::move(lab), n, k, eps](Node& self) {
    Node& pn = *self.parents[0];
    auto& g = pn.grad_buffer().data;
    const double gs = self.grad.data[0];
    for (int64_t b = 0; b < n; ++b) {
      const auto idx = static_cast<size_t>(b * k + lab[static_cast<size_t>(b)]);
      const double p = pn.value.data[idx];
      if (p > eps && p < 1.0 - eps) g[idx] -= gs / (static_cast<double>(n) * p);
    }
  });
}

Var binary_cross_entropy(const Var& probs, const Tensor& target, double eps) {
  const Tensor& pv = probs.value();
  check(pv.numel() == target.numel() && pv.numel() > 0,
        "binary_cross_entropy: probability/target size mismatch");
  const double m = static_cast<double>(pv.numel());
  double s = 0.0;
  for (size_t i = 0; i < pv.data.size(); ++i) {
    const double p = std::clamp(pv.data[i], eps, 1.0 - eps);
    const double t = target.data[i];
    s -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return make_result(Tensor::scalar(s / m), {probs}, [target, m, eps](Node& self) {
    Node& pn = *self.parents[0];
    auto& g = pn.grad_buffer().data;
    const double gs = self.grad.data[0];
    for (size_t i = 0; i < g.size(); ++i) {
      const double p = pn.value.data[i];
      if (p <= eps || p >= 1.0 - eps) continue;
      const double t = target.data[i];
      g[i] += gs * (-t / p + (1.0 - t) / (1.0 - p)) / m;
    }
  });
}

}  // namespace crowdcount::ag
