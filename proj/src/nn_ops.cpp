#include "plroad/nn_ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "plroad/errors.hpp"

namespace plroad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

void require_rank(const char* op, const Shape& shape, std::size_t rank) {
  if (shape.size() != rank) {
    throw ConfigError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                      shape_str(shape));
  }
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, sh, sw, ph, pw, ho, wo;
  std::size_t k() const { return c * kh * kw; }
  std::size_t p() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 && pw == 0; }
};

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t p = g.p();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.sh + ki) - static_cast<long>(g.ph);
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.sw + kj) - static_cast<long>(g.pw);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, T* gx) {
  const std::size_t p = g.p();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.sh + ki) - static_cast<long>(g.ph);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = gx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.sw + kj) - static_cast<long>(g.pw);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (in + 2 * pad < kernel) {
    throw ConfigError("conv2d: kernel extent " + std::to_string(kernel) +
                      " exceeds padded input extent " + std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, Conv2dParams params) {
  require_rank("conv2d input", input.shape(), 4);
  require_rank("conv2d kernel", kernel.shape(), 4);
  if (input.dim(1) != kernel.dim(1)) {
    throw ConfigError("conv2d: input " + shape_str(input.shape()) + " has " +
                      std::to_string(input.dim(1)) + " channels but kernel " +
                      shape_str(kernel.shape()) + " expects " + std::to_string(kernel.dim(1)));
  }
  ConvGeometry g{};
  g.n = input.dim(0); g.c = input.dim(1); g.h = input.dim(2); g.w = input.dim(3);
  g.o = kernel.dim(0); g.kh = kernel.dim(2); g.kw = kernel.dim(3);
  g.sh = params.stride[0]; g.sw = params.stride[1];
  g.ph = params.padding[0]; g.pw = params.padding[1];
  g.ho = conv_out_extent(g.h, g.kh, g.sh, g.ph);
  g.wo = conv_out_extent(g.w, g.kw, g.sw, g.pw);

  const std::size_t K = g.k(), P = g.p();
  const bool keep_cols = grad_enabled() && kernel.requires_grad() && !g.pointwise();
  auto cols_all = std::make_shared<std::vector<T>>();
  if (keep_cols) cols_all->resize(g.n * K * P);
  std::vector<T> scratch(g.pointwise() ? 0 : K * P);
  std::vector<T> out(g.n * g.o * P);

  const ConstMapMat<T> wmat(kernel.data().data(), g.o, K);
  const T* x = input.data().data();
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* col;
    if (g.pointwise()) {
      col = x + n * g.c * g.h * g.w;
    } else {
      T* dst = keep_cols ? cols_all->data() + n * K * P : scratch.data();
      im2col(g, x + n * g.c * g.h * g.w, dst);
      col = dst;
    }
    MapMat<T> omat(out.data() + n * g.o * P, g.o, P);
    omat.noalias() = wmat * ConstMapMat<T>(col, K, P);
  }

  return Tensor<T>::make_result("conv2d", Shape{g.n, g.o, g.ho, g.wo}, std::move(out),
                                {input, kernel}, [g, cols_all](TensorNode<T>& self) {
    const std::size_t K = g.k(), P = g.p();
    const auto& xin = self.inputs[0]->data;
    const auto& wdata = self.inputs[1]->data;
    const bool need_x = self.input_requires_grad(0);
    const bool need_w = self.input_requires_grad(1);
    std::vector<T> scratch;
    if (need_w) {
      auto gw = self.input_grad(1);
      MapMat<T> gwmat(gw.data(), g.o, K);
      if (!g.pointwise() && cols_all->empty()) scratch.resize(K * P);
      for (std::size_t n = 0; n < g.n; ++n) {
        const T* col;
        if (g.pointwise()) {
          col = xin.data() + n * g.c * g.h * g.w;
        } else if (!cols_all->empty()) {
          col = cols_all->data() + n * K * P;
        } else {
          im2col(g, xin.data() + n * g.c * g.h * g.w, scratch.data());
          col = scratch.data();
        }
        const ConstMapMat<T> gout(self.grad.data() + n * g.o * P, g.o, P);
        gwmat.noalias() += gout * ConstMapMat<T>(col, K, P).transpose();
      }
    }
    if (need_x) {
      auto gx = self.input_grad(0);
      const ConstMapMat<T> wmat(wdata.data(), g.o, K);
      RowMat<T> gcol(K, P);
      for (std::size_t n = 0; n < g.n; ++n) {
        const ConstMapMat<T> gout(self.grad.data() + n * g.o * P, g.o, P);
        T* gxn = gx.data() + n * g.c * g.h * g.w;
        if (g.pointwise()) {
          MapMat<T> gxmat(gxn, K, P);
          gxmat.noalias() += wmat.transpose() * gout;
        } else {
          gcol.noalias() = wmat.transpose() * gout;
          col2im_add(g, gcol.data(), gxn);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> bias_add(const Tensor<T>& input, const Tensor<T>& bias) {
  require_rank("bias_add input", input.shape(), 4);
  if (bias.numel() != input.dim(1)) {
    throw ConfigError("bias_add: bias " + shape_str(bias.shape()) + " vs input " +
                      shape_str(input.shape()));
  }
  const std::size_t N = input.dim(0), C = input.dim(1), P = input.dim(2) * input.dim(3);
  std::vector<T> out(input.data().begin(), input.data().end());
  const auto b = bias.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      T* dst = out.data() + (n * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) dst[i] += b[c];
    }
  return Tensor<T>::make_result("bias_add", input.shape(), std::move(out), {input, bias},
                                [N, C, P](TensorNode<T>& self) {
    if (self.input_requires_grad(0)) {
      auto gx = self.input_grad(0);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    }
    if (self.input_requires_grad(1)) {
      auto gb = self.input_grad(1);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const T* src = self.grad.data() + (n * C + c) * P;
          T acc = 0;
          for (std::size_t i = 0; i < P; ++i) acc += src[i];
          gb[c] += acc;
        }
    }
  });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ConfigError("concat_channels: no inputs");
  const auto& s0 = parts.front().shape();
  require_rank("concat_channels", s0, 4);
  std::size_t total_c = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_rank("concat_channels", p.shape(), 4);
    if (p.dim(0) != s0[0] || p.dim(2) != s0[2] || p.dim(3) != s0[3]) {
      throw ConfigError("concat_channels: shape mismatch " + shape_str(s0) + " vs " +
                        shape_str(p.shape()));
    }
    widths.push_back(p.dim(1));
    total_c += p.dim(1);
  }
  const std::size_t N = s0[0], P = s0[2] * s0[3];
  std::vector<T> out(N * total_c * P);
  for (std::size_t n = 0; n < N; ++n) {
    T* dst = out.data() + n * total_c * P;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const T* src = parts[k].data().data() + n * widths[k] * P;
      dst = std::copy(src, src + widths[k] * P, dst);
    }
  }
  return Tensor<T>::make_result("concat_channels", Shape{N, total_c, s0[2], s0[3]}, std::move(out),
                                parts, [N, P, total_c, widths](TensorNode<T>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (self.input_requires_grad(k)) {
        auto g = self.input_grad(k);
        for (std::size_t n = 0; n < N; ++n) {
          const T* src = self.grad.data() + (n * total_c + offset) * P;
          T* dst = g.data() + n * widths[k] * P;
          for (std::size_t i = 0; i < widths[k] * P; ++i) dst[i] += src[i];
        }
      }
      offset += widths[k];
    }
  });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, std::size_t begin, std::size_t count) {
  require_rank("slice_channels", input.shape(), 4);
  const std::size_t N = input.dim(0), C = input.dim(1), P = input.dim(2) * input.dim(3);
  if (count == 0 || begin + count > C) {
    throw ConfigError("slice_channels: range [" + std::to_string(begin) + ", " +
                      std::to_string(begin + count) + ") outside " + shape_str(input.shape()));
  }
  std::vector<T> out(N * count * P);
  for (std::size_t n = 0; n < N; ++n) {
    const T* src = input.data().data() + (n * C + begin) * P;
    std::copy(src, src + count * P, out.data() + n * count * P);
  }
  return Tensor<T>::make_result("slice_channels", Shape{N, count, input.dim(2), input.dim(3)},
                                std::move(out), {input}, [N, C, P, begin, count](TensorNode<T>& self) {
    if (!self.input_requires_grad(0)) return;
    auto g = self.input_grad(0);
    for (std::size_t n = 0; n < N; ++n) {
      const T* src = self.grad.data() + n * count * P;
      T* dst = g.data() + (n * C + begin) * P;
      for (std::size_t i = 0; i < count * P; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ConfigError("stack_batch: no inputs");
  const auto& s0 = parts.front().shape();
  std::size_t total_n = 0;
  for (const auto& p : parts) {
    if (p.rank() != s0.size() || !std::equal(s0.begin() + 1, s0.end(), p.shape().begin() + 1)) {
      throw ConfigError("stack_batch: shape mismatch " + shape_str(s0) + " vs " +
                        shape_str(p.shape()));
    }
    total_n += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(total_n * (shape_numel(s0) / s0[0]));
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    sizes.push_back(p.numel());
  }
  Shape shape = s0;
  shape[0] = total_n;
  return Tensor<T>::make_result("stack_batch", shape, std::move(out), parts,
                                [sizes](TensorNode<T>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (self.input_requires_grad(k)) {
        auto g = self.input_grad(k);
        for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[offset + i];
      }
      offset += sizes[k];
    }
  });
}

template <typename T>
Tensor<T> avg_pool_to_bins(const Tensor<T>& input, std::size_t bins_h, std::size_t bins_w) {
  require_rank("avg_pool_to_bins", input.shape(), 4);
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (bins_h == 0 || bins_w == 0 || bins_h > H || bins_w > W) {
    throw ConfigError("avg_pool_to_bins: bins " + std::to_string(bins_h) + "x" +
                      std::to_string(bins_w) + " invalid for " + shape_str(input.shape()));
  }
  std::vector<std::size_t> r0(bins_h + 1), c0(bins_w + 1);
  for (std::size_t i = 0; i <= bins_h; ++i) r0[i] = i * H / bins_h;
  for (std::size_t j = 0; j <= bins_w; ++j) c0[j] = j * W / bins_w;
  std::vector<T> out(N * C * bins_h * bins_w);
  const T* x = input.data().data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = x + nc * H * W;
    for (std::size_t i = 0; i < bins_h; ++i)
      for (std::size_t j = 0; j < bins_w; ++j) {
        T acc = 0;
        for (std::size_t y = r0[i]; y < r0[i + 1]; ++y)
          for (std::size_t xx = c0[j]; xx < c0[j + 1]; ++xx) acc += plane[y * W + xx];
        const T area = static_cast<T>((r0[i + 1] - r0[i]) * (c0[j + 1] - c0[j]));
        out[(nc * bins_h + i) * bins_w + j] = acc / area;
      }
  }
  return Tensor<T>::make_result("avg_pool_to_bins", Shape{N, C, bins_h, bins_w}, std::move(out),
                                {input}, [=](TensorNode<T>& self) {
    if (!self.input_requires_grad(0)) return;
    auto g = self.input_grad(0);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      T* plane = g.data() + nc * H * W;
      for (std::size_t i = 0; i < bins_h; ++i)
        for (std::size_t j = 0; j < bins_w; ++j) {
          const T area = static_cast<T>((r0[i + 1] - r0[i]) * (c0[j + 1] - c0[j]));
          const T v = self.grad[(nc * bins_h + i) * bins_w + j] / area;
          for (std::size_t y = r0[i]; y < r0[i + 1]; ++y)
            for (std::size_t xx = c0[j]; xx < c0[j + 1]; ++xx) plane[y * W + xx] += v;
        }
    }
  });
}

namespace {

struct LerpTap {
  std::size_t lo, hi;
  double frac;
};

std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    std::size_t lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[d] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
  require_rank("bilinear_resize", input.shape(), 4);
  if (out_h == 0 || out_w == 0) throw ConfigError("bilinear_resize: target extents must be >= 1");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H == out_h && W == out_w) {
    return input.reshape(input.shape());
  }
  const auto ty = lerp_taps(H, out_h);
  const auto tx = lerp_taps(W, out_w);
  std::vector<T> out(N * C * out_h * out_w);
  const T* x = input.data().data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = x + nc * H * W;
    T* dst = out.data() + nc * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const T fy = static_cast<T>(ty[i].frac);
      const T* r0 = plane + ty[i].lo * W;
      const T* r1 = plane + ty[i].hi * W;
      for (std::size_t j = 0; j < out_w; ++j) {
        const T fx = static_cast<T>(tx[j].frac);
        const T top = (T(1) - fx) * r0[tx[j].lo] + fx * r0[tx[j].hi];
        const T bot = (T(1) - fx) * r1[tx[j].lo] + fx * r1[tx[j].hi];
        dst[i * out_w + j] = (T(1) - fy) * top + fy * bot;
      }
    }
  }
  return Tensor<T>::make_result("bilinear_resize", Shape{N, C, out_h, out_w}, std::move(out),
                                {input}, [=](TensorNode<T>& self) {
    if (!self.input_requires_grad(0)) return;
    auto g = self.input_grad(0);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      T* plane = g.data() + nc * H * W;
      const T* src = self.grad.data() + nc * out_h * out_w;
      for (std::size_t i = 0; i < out_h; ++i) {
        const T fy = static_cast<T>(ty[i].frac);
        T* r0 = plane + ty[i].lo * W;
        T* r1 = plane + ty[i].hi * W;
        for (std::size_t j = 0; j < out_w; ++j) {
          const T fx = static_cast<T>(tx[j].frac);
          const T v = src[i * out_w + j];
          r0[tx[j].lo] += (T(1) - fy) * (T(1) - fx) * v;
          r0[tx[j].hi] += (T(1) - fy) * fx * v;
          r1[tx[j].lo] += fy * (T(1) - fx) * v;
          r1[tx[j].hi] += fy * fx * v;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> pool_and_resize(const Tensor<T>& input, PoolResize mode, std::size_t target_h,
                          std::size_t target_w) {
  if (target_h == 0 || target_w == 0) throw ConfigError("pool_and_resize: target extents must be >= 1");
  return mode == PoolResize::kAvgPoolToBins ? avg_pool_to_bins(input, target_h, target_w)
                                            : bilinear_resize(input, target_h, target_w);
}

template <typename T>
Tensor<T> window_mean(const Tensor<T>& input, std::size_t k) {
  require_rank("window_mean", input.shape(), 4);
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (k == 0 || k > H || k > W) {
    throw ConfigError("window_mean: window " + std::to_string(k) + " does not fit " +
                      shape_str(input.shape()));
  }
  const std::size_t Ho = H - k + 1, Wo = W - k + 1;
  const T inv = T(1) / static_cast<T>(k * k);
  std::vector<T> out(N * C * Ho * Wo);
  std::vector<T> rows(H * Wo);
  const T* x = input.data().data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = x + nc * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t j = 0; j < Wo; ++j) {
        T acc = 0;
        for (std::size_t t = 0; t < k; ++t) acc += plane[y * W + j + t];
        rows[y * Wo + j] = acc;
      }
    T* dst = out.data() + nc * Ho * Wo;
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        T acc = 0;
        for (std::size_t t = 0; t < k; ++t) acc += rows[(i + t) * Wo + j];
        dst[i * Wo + j] = acc * inv;
      }
  }
  return Tensor<T>::make_result("window_mean", Shape{N, C, Ho, Wo}, std::move(out), {input},
                                [=](TensorNode<T>& self) {
    if (!self.input_requires_grad(0)) return;
    auto g = self.input_grad(0);
    std::vector<T> cols(H * Wo);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const T* src = self.grad.data() + nc * Ho * Wo;
      std::fill(cols.begin(), cols.end(), T(0));
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          const T v = src[i * Wo + j] * inv;
          for (std::size_t t = 0; t < k; ++t) cols[(i + t) * Wo + j] += v;
        }
      T* plane = g.data() + nc * H * W;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t j = 0; j < Wo; ++j) {
          const T v = cols[y * Wo + j];
          for (std::size_t t = 0; t < k; ++t) plane[y * W + j + t] += v;
        }
    }
  });
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& labels,
                                const Tensor<T>* ignore_mask) {
  require_rank("softmax_cross_entropy logits", logits.shape(), 4);
  const std::size_t N = logits.dim(0), C = logits.dim(1), P = logits.dim(2) * logits.dim(3);
  const Shape label_shape{N, logits.dim(2), logits.dim(3)};
  if (labels.shape() != label_shape) {
    throw ConfigError("softmax_cross_entropy: labels " + shape_str(labels.shape()) +
                      " do not match logits " + shape_str(logits.shape()));
  }
  if (ignore_mask && ignore_mask->shape() != label_shape) {
    throw ConfigError("softmax_cross_entropy: mask " + shape_str(ignore_mask->shape()) +
                      " does not match logits " + shape_str(logits.shape()));
  }
  const T* z = logits.data().data();
  const auto lab = labels.data();
  auto probs = std::make_shared<std::vector<T>>(N * C * P);
  auto weights = std::make_shared<std::vector<T>>(N * P, T(0));
  std::size_t count = 0;
  double total = 0;
  std::vector<T> e(C);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < P; ++i) {
      const T lv = lab[n * P + i];
      const auto y = static_cast<std::size_t>(lv);
      if (lv < 0 || static_cast<T>(y) != lv || y >= C) {
        throw ConfigError("softmax_cross_entropy: label value " + std::to_string(lv) +
                          " outside class range");
      }
      T m = z[(n * C) * P + i];
      for (std::size_t c = 1; c < C; ++c) m = std::max(m, z[(n * C + c) * P + i]);
      T s = 0;
      for (std::size_t c = 0; c < C; ++c) {
        e[c] = std::exp(z[(n * C + c) * P + i] - m);
        s += e[c];
      }
      for (std::size_t c = 0; c < C; ++c) (*probs)[(n * C + c) * P + i] = e[c] / s;
      const bool used = !ignore_mask || ignore_mask->data()[n * P + i] != T(0);
      if (!used) continue;
      (*weights)[n * P + i] = T(1);
      ++count;
      total += static_cast<double>(m + std::log(s) - z[(n * C + y) * P + i]);
    }
  if (count == 0) throw ConfigError("softmax_cross_entropy: every pixel is masked out");
  const T inv = T(1) / static_cast<T>(count);
  std::vector<std::size_t> ids(lab.size());
  for (std::size_t i = 0; i < lab.size(); ++i) ids[i] = static_cast<std::size_t>(lab[i]);
  return Tensor<T>::make_result("softmax_cross_entropy", Shape{1},
                                {static_cast<T>(total / static_cast<double>(count))}, {logits},
                                [=](TensorNode<T>& self) {
    if (!self.input_requires_grad(0)) return;
    auto g = self.input_grad(0);
    const T scale = self.grad[0] * inv;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < P; ++i) {
        const T w = (*weights)[n * P + i];
        if (w == T(0)) continue;
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t at = (n * C + c) * P + i;
          g[at] += scale * ((*probs)[at] - (ids[n * P + i] == c ? T(1) : T(0)));
        }
      }
  });
}

template <typename T>
std::vector<T> channel_softmax(const Tensor<T>& logits) {
  require_rank("channel_softmax", logits.shape(), 4);
  const std::size_t N = logits.dim(0), C = logits.dim(1), P = logits.dim(2) * logits.dim(3);
  const T* z = logits.data().data();
  std::vector<T> out(N * C * P);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < P; ++i) {
      T m = z[n * C * P + i];
      for (std::size_t c = 1; c < C; ++c) m = std::max(m, z[(n * C + c) * P + i]);
      T s = 0;
      for (std::size_t c = 0; c < C; ++c) {
        const T e = std::exp(z[(n * C + c) * P + i] - m);
        out[(n * C + c) * P + i] = e;
        s += e;
      }
      for (std::size_t c = 0; c < C; ++c) out[(n * C + c) * P + i] /= s;
    }
  return out;
}

#define PLROAD_INSTANTIATE(T)                                                                  \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, Conv2dParams);              \
  template Tensor<T> bias_add<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                        \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, std::size_t, std::size_t);            \
  template Tensor<T> stack_batch<T>(const std::vector<Tensor<T>>&);                            \
  template Tensor<T> avg_pool_to_bins<T>(const Tensor<T>&, std::size_t, std::size_t);          \
  template Tensor<T> bilinear_resize<T>(const Tensor<T>&, std::size_t, std::size_t);           \
  template Tensor<T> pool_and_resize<T>(const Tensor<T>&, PoolResize, std::size_t, std::size_t); \
  template Tensor<T> window_mean<T>(const Tensor<T>&, std::size_t);                            \
  template Tensor<T> softmax_cross_entropy<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*); \
  template std::vector<T> channel_softmax<T>(const Tensor<T>&);

PLROAD_INSTANTIATE(float)
PLROAD_INSTANTIATE(double)

#undef PLROAD_INSTANTIATE

}  // namespace plroad
