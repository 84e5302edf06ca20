#pragma once

#include <array>
#include <vector>

#include "plroad/tensor.hpp"

namespace plroad {

struct Conv2dParams {
  std::array<std::size_t, 2> stride{1, 1};   // (vertical, horizontal)
  std::array<std::size_t, 2> padding{0, 0};
};

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

/// NCHW input, OIHW kernel, zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, Conv2dParams params = {});

/// Adds a per-channel bias of shape [C] to an NCHW tensor.
template <typename T>
Tensor<T> bias_add(const Tensor<T>& input, const Tensor<T>& bias);

/// Concatenates NCHW tensors along C.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

/// Channels [begin, begin + count) of an NCHW tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, std::size_t begin, std::size_t count);

/// Concatenates NCHW tensors along N.
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& parts);

enum class PoolResize { kAvgPoolToBins, kBilinearResize };

/// Averages over a partition of the plane into `bins` (rows, cols) cells.
/// Cell r spans rows [floor(r*H/bh), floor((r+1)*H/bh)).
template <typename T>
Tensor<T> avg_pool_to_bins(const Tensor<T>& input, std::size_t bins_h, std::size_t bins_w);

/// Bilinear resampling with half-pixel centers (align_corners = false).
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, std::size_t out_h, std::size_t out_w);

template <typename T>
Tensor<T> pool_and_resize(const Tensor<T>& input, PoolResize mode, std::size_t target_h,
                          std::size_t target_w);

/// Mean over every k x k window (stride 1, no padding): [N,C,H-k+1,W-k+1].
template <typename T>
Tensor<T> window_mean(const Tensor<T>& input, std::size_t k);

/// Mean per-pixel negative log-likelihood of `labels` (NHW, integral class
/// ids stored as reals) under a softmax over the channel axis of `logits`.
/// Pixels where `ignore_mask` is zero are excluded.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& labels,
                                const Tensor<T>* ignore_mask = nullptr);

/// Channel softmax of NCHW logits (no graph).
template <typename T>
std::vector<T> channel_softmax(const Tensor<T>& logits);

}  // namespace plroad
