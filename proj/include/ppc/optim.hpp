#pragma once

#include "ppc/tensor.hpp"

#include <span>
#include <vector>

namespace ppc {

struct SgdConfig {
    double lr = 1e-4;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

/// One coupled-L2 momentum update, in place:
///   v <- momentum * v - lr * (g + weight_decay * p);  p <- p + v
template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, const SgdConfig& cfg);

/// Momentum SGD over a fixed parameter list. Velocity buffers start at zero
/// and are matched to parameters by identity.
template <typename T>
class Sgd {
public:
    Sgd(std::vector<Tensor<T>> params, SgdConfig cfg);

    /// Applies the gradients left by the latest backward pass.
    void step();

    const SgdConfig& config() const { return cfg_; }
    std::span<const T> velocity(const Tensor<T>& param) const;

private:
    std::vector<Tensor<T>> params_;
    std::vector<std::vector<T>> velocity_;
    SgdConfig cfg_;
};

extern template class Sgd<float>;
extern template class Sgd<double>;

}  // namespace ppc
