#include "ppc/optim.hpp"

namespace ppc {

template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, const SgdConfig& cfg)
{
    require(param.size() == grad.size() && param.size() == velocity.size(),
            "sgd_step: parameter, gradient and velocity sizes differ");
    const T lr = static_cast<T>(cfg.lr);
    const T mom = static_cast<T>(cfg.momentum);
    const T wd = static_cast<T>(cfg.weight_decay);
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = mom * velocity[i] - lr * (grad[i] + wd * param[i]);
        param[i] += velocity[i];
    }
}

template <typename T>
Sgd<T>::Sgd(std::vector<Tensor<T>> params, SgdConfig cfg) : params_(std::move(params)), cfg_(cfg)
{
    velocity_.reserve(params_.size());
    for (const auto& p : params_) {
        require(p.is_leaf(), "Sgd: parameters must be leaf tensors");
        velocity_.emplace_back(p.numel(), T(0));
    }
}

template <typename T>
void Sgd<T>::step()
{
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.requires_grad()) continue;
        const auto g = p.grad();
        sgd_step<T>(p.mutable_data(), g, velocity_[i], cfg_);
    }
}

template <typename T>
std::span<const T> Sgd<T>::velocity(const Tensor<T>& param) const
{
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].id() == param.id()) return velocity_[i];
    }
    throw ContractViolation("Sgd: tensor is not one of the optimized parameters");
}

template void sgd_step<float>(std::span<float>, std::span<const float>, std::span<float>, const SgdConfig&);
template void sgd_step<double>(std::span<double>, std::span<const double>, std::span<double>, const SgdConfig&);
template class Sgd<float>;
template class Sgd<double>;

}  // namespace ppc
