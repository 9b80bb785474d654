#pragma once

#include "ppc/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace ppc {

enum class Padding {
    zero,
    // Columns wrap around (panorama azimuth); rows are zero-padded.
    circular_horizontal,
};

enum class Mode { train, eval };

/// 3x3 cross-correlation, stride 1, one pixel of padding on every side so the
/// output keeps the input's spatial size.
///   input  [N, C, H, W], weight [O, C, 3, 3], bias [O] -> [N, O, H, W]
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Padding padding);

/// 2x2 max pooling with stride 2. Gradient goes to the first maximum in
/// row-major window order.
template <typename T>
Tensor<T> max_pool_2x2(const Tensor<T>& input);

/// Maximum over each row: [N, C, H, W] -> [N, C, H, 1]. Gradient goes to the
/// lowest maximal column.
template <typename T>
Tensor<T> row_wise_max_pool(const Tensor<T>& input);

/// Running statistics and hyper-parameters of a batch-normalization layer.
/// gamma/beta are trainable tensors owned by the caller.
template <typename T>
struct BatchNormState {
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T eps = T(1e-5);
    T momentum = T(0.1);
    bool updated = false;

    BatchNormState() = default;
    explicit BatchNormState(std::size_t channels)
        : running_mean(channels, T(0)), running_var(channels, T(1))
    {
    }
};

/// Per-channel normalization of [N, C, H, W] or [N, F]. Train mode uses batch
/// statistics and updates `state`; eval mode uses the running statistics.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, Mode mode);

/// Inverted dropout. The mask is a pure function of `seed`.
template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double rate, Mode mode, std::uint64_t seed);

/// y = x W^T + b with x [N, F_in], W [F_out, F_in], b [F_out].
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct CrossEntropyResult {
    Tensor<T> loss;           // scalar, mean over the batch
    Tensor<T> probabilities;  // [N, C], constant
};

/// Numerically stable softmax + cross-entropy. `target` must be one-hot [N, C].
template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& target);

template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

template <typename T>
Tensor<T> one_hot(std::span<const int> labels, std::size_t num_classes);

}  // namespace ppc
