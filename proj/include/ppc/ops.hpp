#pragma once

#include "ppc/tensor.hpp"

#include <span>
#include <vector>

// Differentiable elementwise and reshaping ops. Layer-level ops (convolution,
// pooling, normalization) live in layers.hpp.
namespace ppc {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// [N, ...] -> [N, prod(...)]
template <typename T> Tensor<T> flatten(const Tensor<T>& x);

/// Concatenates 2-D tensors [N, F_i] along the feature axis.
template <typename T> Tensor<T> concat_features(const std::vector<Tensor<T>>& parts);

/// Stacks 4-D tensors [N, C_i, H, W] along the channel axis.
template <typename T> Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

/// [N, C, H, W] -> [N, C], mean over the spatial positions.
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Row-wise softmax of a [N, C] tensor.
template <typename T> Tensor<T> softmax(const Tensor<T>& logits);

/// out[n, c] = w[n, 0] * a[n, c] + w[n, 1] * b[n, c]
template <typename T> Tensor<T> gate_mix(const Tensor<T>& w, const Tensor<T>& a, const Tensor<T>& b);

/// Mean over the batch of -log(probs[n, label[n]]).
template <typename T> Tensor<T> nll_from_probs(const Tensor<T>& probs, std::span<const int> labels);

/// Sum over the batch of logits[n, column].
template <typename T> Tensor<T> select_column_sum(const Tensor<T>& logits, std::size_t column);

/// Circular shift of the last axis by `shift` (output column j reads input
/// column (j - shift) mod W). Not differentiable; used for inputs.
template <typename T> Tensor<T> roll_columns(const Tensor<T>& x, long shift);

/// Lowest-index argmax of each row of a [N, C] tensor.
template <typename T> std::vector<int> argmax_rows(const Tensor<T>& x);

}  // namespace ppc
