#include "ppc/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <mutex>
#include <random>

namespace ppc {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatRM<T>>;

// Bound on the im2col buffer (elements) per GEMM chunk of samples.
constexpr std::size_t kColumnBudget = std::size_t{1} << 22;

// Column tile of the forward kernel: four 512-bit vectors.
template <typename T>
constexpr std::size_t kTile = 256 / sizeof(T);
constexpr std::size_t kTileRows = 4;

inline std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

// c[m, ld] = a[m, k] * b[k, ld] with ld a multiple of kTile<T>. Every output
// column accumulates over k in the same order with identical lane-wise
// arithmetic, so a value never depends on the position of its column. This is
// what makes circular convolution exactly shift-equivariant.
template <typename T>
void gemm_columns(const T* a, std::size_t m, std::size_t k, const T* b, std::size_t ld, T* c)
{
    constexpr std::size_t P = kTile<T>;
    for (std::size_t r0 = 0; r0 < m; r0 += kTileRows) {
        const std::size_t rows = std::min(kTileRows, m - r0);
        for (std::size_t p0 = 0; p0 < ld; p0 += P) {
            alignas(64) T acc[kTileRows][P] = {};
            for (std::size_t q = 0; q < k; ++q) {
                const T* brow = b + q * ld + p0;
                for (std::size_t r = 0; r < kTileRows; ++r) {
                    const T w = r < rows ? a[(r0 + r) * k + q] : T(0);
                    for (std::size_t j = 0; j < P; ++j) acc[r][j] += w * brow[j];
                }
            }
            for (std::size_t r = 0; r < rows; ++r) {
                std::copy_n(acc[r], P, c + (r0 + r) * ld + p0);
            }
        }
    }
}

inline std::size_t wrap_column(long j, long w) { return static_cast<std::size_t>((j % w + w) % w); }

// Writes one sample's patches into rows [0, C*9) and columns
// [col_offset, col_offset + H*W) of a row-major matrix with leading dim `ld`.
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w, Padding padding, T* cols,
            std::size_t ld, std::size_t col_offset)
{
    const long wl = static_cast<long>(w);
    for (std::size_t c = 0; c < channels; ++c) {
        for (int ki = 0; ki < 3; ++ki) {
            for (int kj = 0; kj < 3; ++kj) {
                const std::size_t row = (c * 3 + ki) * 3 + kj;
                T* dst = cols + row * ld + col_offset;
                const long dj = kj - 1;
                for (std::size_t i = 0; i < h; ++i) {
                    const long si = static_cast<long>(i) + ki - 1;
                    T* d = dst + i * w;
                    if (si < 0 || si >= static_cast<long>(h)) {
                        std::fill_n(d, w, T(0));
                        continue;
                    }
                    const T* src = x + (c * h + static_cast<std::size_t>(si)) * w;
                    for (long j = 0; j < wl; ++j) {
                        const long sj = j + dj;
                        if (sj >= 0 && sj < wl) {
                            d[j] = src[sj];
                        } else if (padding == Padding::circular_horizontal) {
                            d[j] = src[wrap_column(sj, wl)];
                        } else {
                            d[j] = T(0);
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters patch gradients back onto the input gradient.
template <typename T>
void col2im(const T* cols, std::size_t ld, std::size_t col_offset, std::size_t channels, std::size_t h,
            std::size_t w, Padding padding, T* dx)
{
    const long wl = static_cast<long>(w);
    for (std::size_t c = 0; c < channels; ++c) {
        for (int ki = 0; ki < 3; ++ki) {
            for (int kj = 0; kj < 3; ++kj) {
                const std::size_t row = (c * 3 + ki) * 3 + kj;
                const T* src = cols + row * ld + col_offset;
                const long dj = kj - 1;
                for (std::size_t i = 0; i < h; ++i) {
                    const long si = static_cast<long>(i) + ki - 1;
                    if (si < 0 || si >= static_cast<long>(h)) continue;
                    const T* s = src + i * w;
                    T* d = dx + (c * h + static_cast<std::size_t>(si)) * w;
                    for (long j = 0; j < wl; ++j) {
                        const long sj = j + dj;
                        if (sj >= 0 && sj < wl) {
                            d[sj] += s[j];
                        } else if (padding == Padding::circular_horizontal) {
                            d[wrap_column(sj, wl)] += s[j];
                        }
                    }
                }
            }
        }
    }
}

// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double unit_uniform(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Padding padding)
{
    require(input.rank() == 4, "conv2d input must be [N, C, H, W], got " + shape_str(input.shape()));
    require(weight.rank() == 4 && weight.dim(2) == 3 && weight.dim(3) == 3,
            "conv2d weight must be [O, C, 3, 3], got " + shape_str(weight.shape()));
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t o = weight.dim(0);
    require(weight.dim(1) == c, "conv2d channel mismatch: input has " + std::to_string(c) +
                                    ", weight expects " + std::to_string(weight.dim(1)));
    require(bias.rank() == 1 && bias.dim(0) == o, "conv2d bias must be [O]");
    require(w >= 3, "conv2d needs at least 3 columns");

    const std::size_t k = c * 9;
    const std::size_t plane = h * w;
    const std::size_t chunk = std::clamp<std::size_t>(kColumnBudget / (k * plane), 1, n);

    std::vector<T> out(n * o * plane);
    std::vector<T> cols;
    std::vector<T> result;
    const T* b = bias.data().data();
    for (std::size_t n0 = 0; n0 < n; n0 += chunk) {
        const std::size_t nb = std::min(chunk, n - n0);
        const std::size_t ld = round_up(nb * plane, kTile<T>);
        cols.assign(k * ld, T(0));
        result.resize(o * ld);
        for (std::size_t s = 0; s < nb; ++s) {
            im2col(input.data().data() + (n0 + s) * c * plane, c, h, w, padding, cols.data(), ld, s * plane);
        }
        gemm_columns(weight.data().data(), o, k, cols.data(), ld, result.data());
        for (std::size_t s = 0; s < nb; ++s) {
            for (std::size_t oc = 0; oc < o; ++oc) {
                const T* r = result.data() + oc * ld + s * plane;
                T* dst = out.data() + ((n0 + s) * o + oc) * plane;
                for (std::size_t p = 0; p < plane; ++p) dst[p] = r[p] + b[oc];
            }
        }
    }

    return Tensor<T>::from_op({n, o, h, w}, std::move(out), {input, weight, bias},
                              [=](detail::Node<T>& self) {
        const auto& x = self.inputs[0]->data;
        const auto& wt = self.inputs[1]->data;
        const bool want_x = self.inputs[0]->requires_grad;
        const bool want_w = self.inputs[1]->requires_grad;
        const bool want_b = self.inputs[2]->requires_grad;
        T* dx = want_x ? self.input_grad(0).data() : nullptr;
        T* dw = want_w ? self.input_grad(1).data() : nullptr;
        T* db = want_b ? self.input_grad(2).data() : nullptr;

        std::vector<T> cols;
        std::vector<T> dy;
        std::vector<T> dcols;
        ConstMapRM<T> wm(wt.data(), o, k);
        for (std::size_t n0 = 0; n0 < n; n0 += chunk) {
            const std::size_t nb = std::min(chunk, n - n0);
            const std::size_t ld = nb * plane;
            dy.resize(o * ld);
            for (std::size_t s = 0; s < nb; ++s) {
                for (std::size_t oc = 0; oc < o; ++oc) {
                    std::copy_n(self.grad.data() + ((n0 + s) * o + oc) * plane, plane,
                                dy.data() + oc * ld + s * plane);
                }
            }
            ConstMapRM<T> dym(dy.data(), o, ld);
            if (db) {
                // Plain loop: Eigen's vectorized sum peels by address, which
                // would make the result depend on buffer alignment.
                for (std::size_t oc = 0; oc < o; ++oc) {
                    T acc = 0;
                    for (std::size_t j = 0; j < ld; ++j) acc += dy[oc * ld + j];
                    db[oc] += acc;
                }
            }
            if (dw) {
                cols.resize(k * ld);
                for (std::size_t s = 0; s < nb; ++s) {
                    im2col(x.data() + (n0 + s) * c * plane, c, h, w, padding, cols.data(), ld, s * plane);
                }
                MapRM<T>(dw, o, k).noalias() += dym * ConstMapRM<T>(cols.data(), k, ld).transpose();
            }
            if (dx) {
                dcols.resize(k * ld);
                MapRM<T>(dcols.data(), k, ld).noalias() = wm.transpose() * dym;
                for (std::size_t s = 0; s < nb; ++s) {
                    col2im(dcols.data(), ld, s * plane, c, h, w, padding, dx + (n0 + s) * c * plane);
                }
            }
        }
    });
}

template <typename T>
Tensor<T> max_pool_2x2(const Tensor<T>& input)
{
    require(input.rank() == 4, "max_pool_2x2 input must be [N, C, H, W]");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    require(h % 2 == 0 && w % 2 == 0, "max_pool_2x2 needs even height and width, got " + shape_str(input.shape()));
    const std::size_t ho = h / 2, wo = w / 2;
    std::vector<T> out(n * c * ho * wo);
    std::vector<std::uint32_t> arg(out.size());
    auto x = input.data();
    for (std::size_t m = 0; m < n * c; ++m) {
        const T* src = x.data() + m * h * w;
        for (std::size_t i = 0; i < ho; ++i) {
            for (std::size_t j = 0; j < wo; ++j) {
                std::size_t best = (2 * i) * w + 2 * j;
                const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
                for (auto q : cand) {
                    if (src[q] > src[best]) best = q;
                }
                const std::size_t idx = (m * ho + i) * wo + j;
                out[idx] = src[best];
                arg[idx] = static_cast<std::uint32_t>(m * h * w + best);
            }
        }
    }
    return Tensor<T>::from_op({n, c, ho, wo}, std::move(out), {input},
                              [arg = std::move(arg)](detail::Node<T>& self) {
        auto& g = self.input_grad(0);
        for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
    });
}

template <typename T>
Tensor<T> row_wise_max_pool(const Tensor<T>& input)
{
    require(input.rank() == 4, "row_wise_max_pool input must be [N, C, H, W]");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    std::vector<T> out(n * c * h);
    std::vector<std::uint32_t> arg(out.size());
    auto x = input.data();
    for (std::size_t r = 0; r < n * c * h; ++r) {
        const T* row = x.data() + r * w;
        std::size_t best = 0;
        for (std::size_t j = 1; j < w; ++j) {
            if (row[j] > row[best]) best = j;
        }
        out[r] = row[best];
        arg[r] = static_cast<std::uint32_t>(r * w + best);
    }
    return Tensor<T>::from_op({n, c, h, 1}, std::move(out), {input},
                              [arg = std::move(arg)](detail::Node<T>& self) {
        auto& g = self.input_grad(0);
        for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
    });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, Mode mode)
{
    require(input.rank() == 4 || input.rank() == 2,
            "batch_norm input must be [N, C, H, W] or [N, F], got " + shape_str(input.shape()));
    const std::size_t n = input.dim(0), c = input.dim(1);
    const std::size_t plane = input.rank() == 4 ? input.dim(2) * input.dim(3) : 1;
    require(gamma.numel() == c && beta.numel() == c, "batch_norm gamma/beta must have one entry per channel");
    require(state.running_mean.size() == c && state.running_var.size() == c, "batch_norm state size mismatch");
    require(state.eps > T(0), "batch_norm eps must be positive");
    const std::size_t count = n * plane;

    auto x = input.data();
    auto g = gamma.data();
    auto b = beta.data();
    std::vector<T> out(x.size());
    std::vector<T> xhat(x.size());
    std::vector<T> inv_std(c);

    if (mode == Mode::train) {
        require(count >= 2, "batch_norm in train mode needs at least 2 values per channel");
        for (std::size_t ch = 0; ch < c; ++ch) {
            T mu = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = x.data() + (i * c + ch) * plane;
                for (std::size_t q = 0; q < plane; ++q) mu += p[q];
            }
            mu /= static_cast<T>(count);
            T var = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = x.data() + (i * c + ch) * plane;
                for (std::size_t q = 0; q < plane; ++q) var += (p[q] - mu) * (p[q] - mu);
            }
            var /= static_cast<T>(count);
            inv_std[ch] = T(1) / std::sqrt(var + state.eps);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t base = (i * c + ch) * plane;
                for (std::size_t q = 0; q < plane; ++q) {
                    xhat[base + q] = (x[base + q] - mu) * inv_std[ch];
                    out[base + q] = g[ch] * xhat[base + q] + b[ch];
                }
            }
            const T unbiased = var * static_cast<T>(count) / static_cast<T>(count - 1);
            state.running_mean[ch] = (T(1) - state.momentum) * state.running_mean[ch] + state.momentum * mu;
            state.running_var[ch] = (T(1) - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
        }
        state.updated = true;
    } else {
        if (!state.updated) {
            static std::once_flag warned;
            std::call_once(warned, [] {
                std::clog << "[ppc] batch_norm: eval mode before any running-stat update; "
                             "using initial statistics (mean 0, var 1)\n";
            });
        }
        for (std::size_t ch = 0; ch < c; ++ch) {
            inv_std[ch] = T(1) / std::sqrt(state.running_var[ch] + state.eps);
            const T mu = state.running_mean[ch];
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t base = (i * c + ch) * plane;
                for (std::size_t q = 0; q < plane; ++q) {
                    xhat[base + q] = (x[base + q] - mu) * inv_std[ch];
                    out[base + q] = g[ch] * xhat[base + q] + b[ch];
                }
            }
        }
    }

    const bool batch_stats = mode == Mode::train;
    return Tensor<T>::from_op(input.shape(), std::move(out), {input, gamma, beta},
                              [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
        const auto& gm = self.inputs[1]->data;
        const auto& dy = self.grad;
        std::vector<T> sum_dy(c, T(0));
        std::vector<T> sum_dy_xhat(c, T(0));
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t base = (i * c + ch) * plane;
                for (std::size_t q = 0; q < plane; ++q) {
                    sum_dy[ch] += dy[base + q];
                    sum_dy_xhat[ch] += dy[base + q] * xhat[base + q];
                }
            }
        }
        if (self.inputs[1]->requires_grad) {
            auto& dg = self.input_grad(1);
            for (std::size_t ch = 0; ch < c; ++ch) dg[ch] += sum_dy_xhat[ch];
        }
        if (self.inputs[2]->requires_grad) {
            auto& dbeta = self.input_grad(2);
            for (std::size_t ch = 0; ch < c; ++ch) dbeta[ch] += sum_dy[ch];
        }
        if (!self.inputs[0]->requires_grad) return;
        auto& dx = self.input_grad(0);
        const T m = static_cast<T>(count);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T k = gm[ch] * inv_std[ch];
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t base = (i * c + ch) * plane;
                for (std::size_t q = 0; q < plane; ++q) {
                    if (batch_stats) {
                        dx[base + q] += k * (dy[base + q] - sum_dy[ch] / m - xhat[base + q] * sum_dy_xhat[ch] / m);
                    } else {
                        dx[base + q] += k * dy[base + q];
                    }
                }
            }
        }
    });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double rate, Mode mode, std::uint64_t seed)
{
    require(rate >= 0.0 && rate < 1.0, "dropout rate must be in [0, 1)");
    if (mode == Mode::eval || rate == 0.0) {
        return input;
    }
    std::mt19937_64 gen(seed);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> mask(input.numel());
    for (auto& m : mask) {
        m = unit_uniform(gen) < rate ? T(0) : keep_scale;
    }
    std::vector<T> out(input.numel());
    auto x = input.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
    return Tensor<T>::from_op(input.shape(), std::move(out), {input},
                              [mask = std::move(mask)](detail::Node<T>& self) {
        auto& g = self.input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias)
{
    require(input.rank() == 2, "fully_connected input must be [N, F], got " + shape_str(input.shape()));
    require(weight.rank() == 2 && weight.dim(1) == input.dim(1),
            "fully_connected weight " + shape_str(weight.shape()) + " does not match input " + shape_str(input.shape()));
    const std::size_t n = input.dim(0), fin = input.dim(1), fout = weight.dim(0);
    require(bias.rank() == 1 && bias.dim(0) == fout, "fully_connected bias must be [F_out]");

    std::vector<T> out(n * fout);
    MapRM<T> y(out.data(), n, fout);
    ConstMapRM<T> xm(input.data().data(), n, fin);
    ConstMapRM<T> wm(weight.data().data(), fout, fin);
    y.noalias() = xm * wm.transpose();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < fout; ++j) y(i, j) += bias.data()[j];
    }
    return Tensor<T>::from_op({n, fout}, std::move(out), {input, weight, bias}, [=](detail::Node<T>& self) {
        ConstMapRM<T> dy(self.grad.data(), n, fout);
        if (self.inputs[0]->requires_grad) {
            MapRM<T>(self.input_grad(0).data(), n, fin).noalias() +=
                dy * ConstMapRM<T>(self.inputs[1]->data.data(), fout, fin);
        }
        if (self.inputs[1]->requires_grad) {
            MapRM<T>(self.input_grad(1).data(), fout, fin).noalias() +=
                dy.transpose() * ConstMapRM<T>(self.inputs[0]->data.data(), n, fin);
        }
        if (self.inputs[2]->requires_grad) {
            auto& db = self.input_grad(2);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < fout; ++j) db[j] += dy(i, j);
        }
    });
}

template <typename T>
Tensor<T> one_hot(std::span<const int> labels, std::size_t num_classes)
{
    require(!labels.empty(), "one_hot of an empty label list");
    std::vector<T> data(labels.size() * num_classes, T(0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < num_classes, "label out of range");
        data[i * num_classes + labels[i]] = T(1);
    }
    return Tensor<T>({labels.size(), num_classes}, std::move(data));
}

template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& target)
{
    require(logits.rank() == 2, "softmax_cross_entropy logits must be [N, C]");
    require(target.shape() == logits.shape(), "softmax_cross_entropy target shape mismatch");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    auto t = target.data();
    for (std::size_t i = 0; i < n; ++i) {
        int ones = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const T v = t[i * c + j];
            require(v == T(0) || v == T(1), "softmax_cross_entropy target is not one-hot");
            ones += v == T(1);
        }
        require(ones == 1, "softmax_cross_entropy target row " + std::to_string(i) + " is not one-hot");
    }

    auto z = logits.data();
    std::vector<T> probs(n * c);
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = z.data() + i * c;
        const T m = *std::max_element(row, row + c);
        T denom = 0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - m);
        const T log_denom = std::log(denom);
        for (std::size_t j = 0; j < c; ++j) {
            const T log_p = row[j] - m - log_denom;
            probs[i * c + j] = std::exp(log_p);
            if (t[i * c + j] == T(1)) total -= log_p;
        }
    }
    Tensor<T> probabilities({n, c}, probs);
    std::vector<T> tgt(t.begin(), t.end());
    auto loss = Tensor<T>::from_op({1}, {total / static_cast<T>(n)}, {logits},
                                   [n, c, probs = std::move(probs), tgt = std::move(tgt)](detail::Node<T>& self) {
        auto& g = self.input_grad(0);
        const T k = self.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n * c; ++i) g[i] += k * (probs[i] - tgt[i]);
    });
    return {std::move(loss), std::move(probabilities)};
}

template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels)
{
    require(logits.rank() == 2, "softmax_cross_entropy logits must be [N, C]");
    return softmax_cross_entropy(logits, one_hot<T>(labels, logits.dim(1)));
}

#define PPC_INSTANTIATE_LAYERS(T)                                                                          \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Padding);             \
    template Tensor<T> max_pool_2x2(const Tensor<T>&);                                                     \
    template Tensor<T> row_wise_max_pool(const Tensor<T>&);                                                \
    template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormState<T>&, \
                                  Mode);                                                                   \
    template Tensor<T> dropout(const Tensor<T>&, double, Mode, std::uint64_t);                            \
    template Tensor<T> fully_connected(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
    template Tensor<T> one_hot(std::span<const int>, std::size_t);                                        \
    template CrossEntropyResult<T> softmax_cross_entropy(const Tensor<T>&, const Tensor<T>&);             \
    template CrossEntropyResult<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);

PPC_INSTANTIATE_LAYERS(float)
PPC_INSTANTIATE_LAYERS(double)

}  // namespace ppc
