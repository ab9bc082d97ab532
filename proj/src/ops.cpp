#include "cdseg/ops.hpp"

#include <algorithm>
#include <cmath>

#include "cdseg/error.hpp"

namespace cdseg::ad {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kShapeMismatch, std::string(op) + ": " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()));
  }
}

std::size_t conv_out_extent(std::size_t in, int k, int stride, int padding) {
  return (in + 2 * static_cast<std::size_t>(padding) - k) / stride + 1;
}

// Output columns x in [lo, hi) whose source column x*stride + k - padding
// falls inside [0, in_extent).
void valid_range(std::size_t out_extent, std::size_t in_extent, int k, int stride,
                 int padding, std::size_t& lo, std::size_t& hi) {
  const long off = static_cast<long>(k) - padding;
  long first = 0;
  if (off < 0) first = (-off + stride - 1) / stride;
  long last = (static_cast<long>(in_extent) - 1 - off);
  last = last < 0 ? -1 : last / stride;
  lo = static_cast<std::size_t>(std::max<long>(first, 0));
  hi = static_cast<std::size_t>(std::clamp<long>(last + 1, 0, static_cast<long>(out_extent)));
  if (hi < lo) hi = lo;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int padding) {
  if (input.rank() != 3 || kernel.rank() != 4 || bias.rank() != 1) {
    fail(ErrorKind::kShapeMismatch, "conv2d expects input [C,H,W], kernel [O,C,k,k], bias [O]");
  }
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernel.dim(0);
  const int k = static_cast<int>(kernel.dim(2));
  if (kernel.dim(1) != cin) {
    fail(ErrorKind::kShapeMismatch, "conv2d: input has " + std::to_string(cin) +
                                        " channels, kernel expects " +
                                        std::to_string(kernel.dim(1)));
  }
  if (kernel.dim(3) != kernel.dim(2)) fail(ErrorKind::kShapeMismatch, "conv2d: kernel must be square");
  if (bias.dim(0) != cout) fail(ErrorKind::kShapeMismatch, "conv2d: bias length != output channels");
  if (stride < 1 || padding < 0) fail(ErrorKind::kDomain, "conv2d: stride >= 1 and padding >= 0 required");
  if (h + 2 * padding < static_cast<std::size_t>(k) || w + 2 * padding < static_cast<std::size_t>(k)) {
    fail(ErrorKind::kShapeMismatch, "conv2d: kernel larger than padded input");
  }

  const std::size_t oh = conv_out_extent(h, k, stride, padding);
  const std::size_t ow = conv_out_extent(w, k, stride, padding);
  std::vector<double> out(cout * oh * ow);

  std::vector<std::size_t> xlo(k), xhi(k), ylo(k), yhi(k);
  for (int t = 0; t < k; ++t) {
    valid_range(ow, w, t, stride, padding, xlo[t], xhi[t]);
    valid_range(oh, h, t, stride, padding, ylo[t], yhi[t]);
  }

  const double* in = input.data().data();
  const double* wt = kernel.data().data();
  const double* b = bias.data().data();
  for (std::size_t o = 0; o < cout; ++o) {
    double* out_c = out.data() + o * oh * ow;
    std::fill(out_c, out_c + oh * ow, b[o]);
    for (std::size_t c = 0; c < cin; ++c) {
      const double* in_c = in + c * h * w;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double wv = wt[((o * cin + c) * k + ky) * k + kx];
          for (std::size_t y = ylo[ky]; y < yhi[ky]; ++y) {
            const double* src = in_c + (y * stride + ky - padding) * w + kx - padding;
            double* dst = out_c + y * ow;
            if (stride == 1) {
              for (std::size_t x = xlo[kx]; x < xhi[kx]; ++x) dst[x] += wv * src[x];
            } else {
              for (std::size_t x = xlo[kx]; x < xhi[kx]; ++x) dst[x] += wv * src[x * stride];
            }
          }
        }
      }
    }
  }

  return make_result(
      {cout, oh, ow}, std::move(out), {input, kernel, bias}, "conv2d",
      [=](Node& self) {
        Node& in_n = *self.parents[0];
        Node& k_n = *self.parents[1];
        Node& b_n = *self.parents[2];
        const double* g = self.grad.data();
        if (b_n.requires_grad) {
          for (std::size_t o = 0; o < cout; ++o) {
            double s = 0.0;
            for (std::size_t i = 0; i < oh * ow; ++i) s += g[o * oh * ow + i];
            b_n.grad[o] += s;
          }
        }
        const double* inv = in_n.value.data();
        const double* wv_all = k_n.value.data();
        for (std::size_t o = 0; o < cout; ++o) {
          const double* g_c = g + o * oh * ow;
          for (std::size_t c = 0; c < cin; ++c) {
            const std::size_t in_off = c * h * w;
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const std::size_t widx = ((o * cin + c) * k + ky) * k + kx;
                const double wv = wv_all[widx];
                double gw = 0.0;
                for (std::size_t y = ylo[ky]; y < yhi[ky]; ++y) {
                  const std::size_t row = in_off + (y * stride + ky - padding) * w + kx - padding;
                  const double* gr = g_c + y * ow;
                  const double* src = inv + row;
                  if (k_n.requires_grad) {
                    if (stride == 1) {
                      for (std::size_t x = xlo[kx]; x < xhi[kx]; ++x) gw += gr[x] * src[x];
                    } else {
                      for (std::size_t x = xlo[kx]; x < xhi[kx]; ++x) gw += gr[x] * src[x * stride];
                    }
                  }
                  if (in_n.requires_grad) {
                    double* dst = in_n.grad.data() + row;
                    if (stride == 1) {
                      for (std::size_t x = xlo[kx]; x < xhi[kx]; ++x) dst[x] += wv * gr[x];
                    } else {
                      for (std::size_t x = xlo[kx]; x < xhi[kx]; ++x) dst[x * stride] += wv * gr[x];
                    }
                  }
                }
                if (k_n.requires_grad) k_n.grad[widx] += gw;
              }
            }
          }
        }
      });
}

Tensor upsample_nearest(const Tensor& input, int factor) {
  if (factor < 1) fail(ErrorKind::kDomain, "upsample_nearest: factor must be >= 1");
  if (input.rank() != 3) fail(ErrorKind::kShapeMismatch, "upsample_nearest expects [C,H,W]");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t f = factor, oh = h * f, ow = w * f;
  std::vector<double> out(c * oh * ow);
  const double* in = input.data().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      const double* src = in + (ch * h + y / f) * w;
      double* dst = out.data() + (ch * oh + y) * ow;
      for (std::size_t x = 0; x < ow; ++x) dst[x] = src[x / f];
    }
  }
  return make_result({c, oh, ow}, std::move(out), {input}, "upsample_nearest",
                     [=](Node& self) {
                       Node& in_n = *self.parents[0];
                       const double* g = self.grad.data();
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         for (std::size_t y = 0; y < oh; ++y) {
                           double* dst = in_n.grad.data() + (ch * h + y / f) * w;
                           const double* src = g + (ch * oh + y) * ow;
                           for (std::size_t x = 0; x < ow; ++x) dst[x / f] += src[x];
                         }
                       }
                     });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(x.shape(), std::move(out), {x}, "relu", [](Node& self) {
    Node& in = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (in.value[i] > 0.0) in.grad[i] += self.grad[i];
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), {a, b}, "add", [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), {a, b}, "mul", [](Node& self) {
    Node& an = *self.parents[0];
    Node& bn = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (an.requires_grad) an.grad[i] += self.grad[i] * bn.value[i];
      if (bn.requires_grad) bn.grad[i] += self.grad[i] * an.value[i];
    }
  });
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= s;
  return make_result(x.shape(), std::move(out), {x}, "scale", [s](Node& self) {
    Node& in = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += s * self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s}, {x}, "sum", [](Node& self) {
    Node& in = *self.parents[0];
    for (auto& g : in.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double n = static_cast<double>(x.size());
  return make_result({1}, {s / n}, {x}, "mean", [n](Node& self) {
    Node& in = *self.parents[0];
    for (auto& g : in.grad) g += self.grad[0] / n;
  });
}

Tensor exp(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
  return make_result(x.shape(), std::move(out), {x}, "exp", [](Node& self) {
    Node& in = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i] * self.value[i];
  });
}

Tensor log(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(x[i] > 0.0)) fail(ErrorKind::kDomain, "log of non-positive value");
    out[i] = std::log(x[i]);
  }
  return make_result(x.shape(), std::move(out), {x}, "log", [](Node& self) {
    Node& in = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i] / in.value[i];
  });
}

Tensor softmax_channels(const Tensor& x) {
  if (x.rank() != 3) fail(ErrorKind::kShapeMismatch, "softmax_channels expects [C,H,W]");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<double> out(x.size());
  const double* in = x.data().data();
  for (std::size_t p = 0; p < hw; ++p) {
    double mx = in[p];
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, in[k * hw + p]);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double e = std::exp(in[k * hw + p] - mx);
      out[k * hw + p] = e;
      z += e;
    }
    for (std::size_t k = 0; k < c; ++k) out[k * hw + p] /= z;
  }
  return make_result(x.shape(), std::move(out), {x}, "softmax_channels", [c, hw](Node& self) {
    Node& in = *self.parents[0];
    const double* y = self.value.data();
    const double* g = self.grad.data();
    for (std::size_t p = 0; p < hw; ++p) {
      double dot = 0.0;
      for (std::size_t k = 0; k < c; ++k) dot += g[k * hw + p] * y[k * hw + p];
      for (std::size_t k = 0; k < c; ++k) {
        in.grad[k * hw + p] += y[k * hw + p] * (g[k * hw + p] - dot);
      }
    }
  });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) fail(ErrorKind::kShapeMismatch, "stack_rows: no rows");
  const std::size_t d = rows.front().size();
  std::vector<double> out;
  out.reserve(rows.size() * d);
  for (const auto& r : rows) {
    if (r.size() != d) fail(ErrorKind::kShapeMismatch, "stack_rows: rows differ in size");
    out.insert(out.end(), r.data().begin(), r.data().end());
  }
  return make_result({rows.size(), d}, std::move(out), rows, "stack_rows", [d](Node& self) {
    for (std::size_t r = 0; r < self.parents.size(); ++r) {
      Node& p = *self.parents[r];
      if (!p.requires_grad) continue;
      for (std::size_t i = 0; i < d; ++i) p.grad[i] += self.grad[r * d + i];
    }
  });
}

}  // namespace cdseg::ad
