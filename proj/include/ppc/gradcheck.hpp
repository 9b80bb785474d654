#pragma once

#include "ppc/tensor.hpp"

#include <cstdint>
#include <functional>

namespace ppc {

template <typename T>
using TensorFn = std::function<Tensor<T>(const Tensor<T>&)>;

/// Compares reverse-mode gradients of `op` against central finite
/// differences at `input`. Non-scalar outputs are reduced with a fixed
/// random projection so the whole Jacobian is exercised. Returns
///   max_i |g_auto - g_fd| / max(1, |g_auto|, |g_fd|).
double grad_check(const TensorFn<double>& op, const Tensor<double>& input, double eps = 1e-5,
                  std::uint64_t projection_seed = 0x5eed);

}  // namespace ppc
