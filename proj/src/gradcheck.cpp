#include "ppc/gradcheck.hpp"

#include "ppc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ppc {

namespace {

double project(const Tensor<double>& out, const std::vector<double>& weights)
{
    double acc = 0;
    auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) acc += d[i] * weights[i];
    return acc;
}

}  // namespace

double grad_check(const TensorFn<double>& op, const Tensor<double>& input, double eps, std::uint64_t projection_seed)
{
    Tensor<double> x(input.shape(), std::vector<double>(input.data().begin(), input.data().end()), true);
    auto out = op(x);

    std::mt19937_64 gen(projection_seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> weights(out.numel());
    for (auto& w : weights) w = dist(gen);

    auto loss = sum(mul(out, Tensor<double>(out.shape(), weights)));
    backward(loss);
    const auto analytic = x.grad();

    double worst = 0;
    std::vector<double> probe(input.data().begin(), input.data().end());
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + eps;
        const double up = project(op(Tensor<double>(input.shape(), probe)), weights);
        probe[i] = saved - eps;
        const double down = project(op(Tensor<double>(input.shape(), probe)), weights);
        probe[i] = saved;
        const double numeric = (up - down) / (2 * eps);
        const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace ppc
