#include "ppc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ppc {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op)
{
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()));
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] + y[i];
    }
    return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (!self.inputs[k]->requires_grad) continue;
            auto& g = self.input_grad(k);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same_shape(a, b, "sub");
    std::vector<T> out(a.numel());
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] - y[i];
    }
    return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
        if (self.inputs[0]->requires_grad) {
            auto& g = self.input_grad(0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.inputs[1]->requires_grad) {
            auto& g = self.input_grad(1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] * y[i];
    }
    return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
        const auto& x = self.inputs[0]->data;
        const auto& y = self.inputs[1]->data;
        if (self.inputs[0]->requires_grad) {
            auto& g = self.input_grad(0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
        }
        if (self.inputs[1]->requires_grad) {
            auto& g = self.input_grad(1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor)
{
    std::vector<T> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= factor;
    return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [factor](detail::Node<T>& self) {
        auto& g = self.input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x)
{
    std::vector<T> out(x.numel());
    auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = in[i] > T(0) ? in[i] : T(0);
    }
    return Tensor<T>::from_op(x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
        const auto& in = self.inputs[0]->data;
        auto& g = self.input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (in[i] > T(0)) g[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x)
{
    std::vector<T> out(x.numel());
    auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::tanh(in[i]);
    }
    return Tensor<T>::from_op(x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
        auto& g = self.input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T y = self.data[i];
            g[i] += self.grad[i] * (T(1) - y * y);
        }
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x)
{
    T total = 0;
    for (auto v : x.data()) total += v;
    return Tensor<T>::from_op({1}, {total}, {x}, [](detail::Node<T>& self) {
        auto& g = self.input_grad(0);
        for (auto& v : g) v += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x)
{
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape)
{
    require(shape_numel(shape) == x.numel(),
            "reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    std::vector<T> out(x.data().begin(), x.data().end());
    return Tensor<T>::from_op(std::move(shape), std::move(out), {x}, [](detail::Node<T>& self) {
        auto& g = self.input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x)
{
    require(x.rank() >= 1, "flatten of a scalar");
    const auto n = x.dim(0);
    return reshape(x, Shape{n, x.numel() / n});
}

template <typename T>
Tensor<T> concat_features(const std::vector<Tensor<T>>& parts)
{
    require(!parts.empty(), "concat_features: no inputs");
    const auto n = parts[0].dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require(p.rank() == 2 && p.dim(0) == n, "concat_features: inputs must be [N, F] with equal N");
        widths.push_back(p.dim(1));
        total += p.dim(1);
    }
    std::vector<T> out(n * total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto src = parts[k].data();
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(src.begin() + i * widths[k], widths[k], out.begin() + i * total + offset);
        }
        offset += widths[k];
    }
    return Tensor<T>::from_op({n, total}, std::move(out), parts,
                              [n, total, widths](detail::Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (self.inputs[k]->requires_grad) {
                auto& g = self.input_grad(k);
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t f = 0; f < widths[k]; ++f) {
                        g[i * widths[k] + f] += self.grad[i * total + off + f];
                    }
                }
            }
            off += widths[k];
        }
    });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts)
{
    require(!parts.empty(), "concat_channels: no inputs");
    const auto& s0 = parts[0].shape();
    require(s0.size() == 4, "concat_channels: inputs must be [N, C, H, W]");
    const std::size_t n = s0[0];
    const std::size_t plane = s0[2] * s0[3];
    std::vector<std::size_t> chans;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require(p.rank() == 4 && p.dim(0) == n && p.dim(2) == s0[2] && p.dim(3) == s0[3],
                "concat_channels: mismatched input shapes");
        chans.push_back(p.dim(1));
        total += p.dim(1);
    }
    std::vector<T> out(n * total * plane);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto src = parts[k].data();
        const std::size_t block = chans[k] * plane;
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(src.begin() + i * block, block, out.begin() + (i * total + offset) * plane);
        }
        offset += chans[k];
    }
    return Tensor<T>::from_op({n, total, s0[2], s0[3]}, std::move(out), parts,
                              [n, total, plane, chans](detail::Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < chans.size(); ++k) {
            const std::size_t block = chans[k] * plane;
            if (self.inputs[k]->requires_grad) {
                auto& g = self.input_grad(k);
                for (std::size_t i = 0; i < n; ++i) {
                    const T* src = self.grad.data() + (i * total + off) * plane;
                    for (std::size_t e = 0; e < block; ++e) g[i * block + e] += src[e];
                }
            }
            off += chans[k];
        }
    });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x)
{
    require(x.rank() == 4, "global_avg_pool expects [N, C, H, W], got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    std::vector<T> out(n * c);
    auto in = x.data();
    for (std::size_t i = 0; i < n * c; ++i) {
        T acc = 0;
        for (std::size_t p = 0; p < plane; ++p) acc += in[i * plane + p];
        out[i] = acc / static_cast<T>(plane);
    }
    return Tensor<T>::from_op({n, c}, std::move(out), {x}, [plane](detail::Node<T>& self) {
        auto& g = self.input_grad(0);
        const T inv = T(1) / static_cast<T>(plane);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            for (std::size_t p = 0; p < plane; ++p) g[i * plane + p] += self.grad[i] * inv;
        }
    });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits)
{
    require(logits.rank() == 2, "softmax expects [N, C]");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<T> out(n * c);
    auto z = logits.data();
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = z.data() + i * c;
        const T m = *std::max_element(row, row + c);
        T denom = 0;
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = std::exp(row[j] - m);
            denom += out[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= denom;
    }
    return Tensor<T>::from_op({n, c}, std::move(out), {logits}, [n, c](detail::Node<T>& self) {
        auto& g = self.input_grad(0);
        for (std::size_t i = 0; i < n; ++i) {
            const T* p = self.data.data() + i * c;
            const T* gy = self.grad.data() + i * c;
            T dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += p[j] * gy[j];
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += p[j] * (gy[j] - dot);
        }
    });
}

template <typename T>
Tensor<T> gate_mix(const Tensor<T>& w, const Tensor<T>& a, const Tensor<T>& b)
{
    require(a.rank() == 2 && a.shape() == b.shape(), "gate_mix: a and b must be equal [N, C]");
    require(w.rank() == 2 && w.dim(0) == a.dim(0) && w.dim(1) == 2, "gate_mix: weights must be [N, 2]");
    const std::size_t n = a.dim(0), c = a.dim(1);
    std::vector<T> out(n * c);
    auto wd = w.data();
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = wd[2 * i] * ad[i * c + j] + wd[2 * i + 1] * bd[i * c + j];
        }
    }
    return Tensor<T>::from_op({n, c}, std::move(out), {w, a, b}, [n, c](detail::Node<T>& self) {
        const auto& wd = self.inputs[0]->data;
        const auto& ad = self.inputs[1]->data;
        const auto& bd = self.inputs[2]->data;
        if (self.inputs[0]->requires_grad) {
            auto& g = self.input_grad(0);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    g[2 * i] += self.grad[i * c + j] * ad[i * c + j];
                    g[2 * i + 1] += self.grad[i * c + j] * bd[i * c + j];
                }
            }
        }
        for (std::size_t k = 1; k <= 2; ++k) {
            if (!self.inputs[k]->requires_grad) continue;
            auto& g = self.input_grad(k);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * wd[2 * i + k - 1];
            }
        }
    });
}

template <typename T>
Tensor<T> nll_from_probs(const Tensor<T>& probs, std::span<const int> labels)
{
    require(probs.rank() == 2 && probs.dim(0) == labels.size(), "nll_from_probs: label count mismatch");
    const std::size_t n = probs.dim(0), c = probs.dim(1);
    // Keeps log finite when a probability underflows.
    const T floor = std::numeric_limits<T>::min();
    auto p = probs.data();
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < c, "nll_from_probs: label out of range");
        total -= std::log(std::max(p[i * c + labels[i]], floor));
    }
    std::vector<int> lab(labels.begin(), labels.end());
    return Tensor<T>::from_op({1}, {total / static_cast<T>(n)}, {probs},
                              [n, c, floor, lab = std::move(lab)](detail::Node<T>& self) {
        const auto& p = self.inputs[0]->data;
        auto& g = self.input_grad(0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto k = i * c + lab[i];
            g[k] -= self.grad[0] / (static_cast<T>(n) * std::max(p[k], floor));
        }
    });
}

template <typename T>
Tensor<T> select_column_sum(const Tensor<T>& logits, std::size_t column)
{
    require(logits.rank() == 2 && column < logits.dim(1), "select_column_sum: column out of range");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) total += logits.data()[i * c + column];
    return Tensor<T>::from_op({1}, {total}, {logits}, [n, c, column](detail::Node<T>& self) {
        auto& g = self.input_grad(0);
        for (std::size_t i = 0; i < n; ++i) g[i * c + column] += self.grad[0];
    });
}

template <typename T>
Tensor<T> roll_columns(const Tensor<T>& x, long shift)
{
    require(x.rank() >= 1, "roll_columns of a scalar");
    const std::size_t w = x.shape().back();
    const std::size_t rows = x.numel() / w;
    const long wl = static_cast<long>(w);
    const std::size_t s = static_cast<std::size_t>(((shift % wl) + wl) % wl);
    std::vector<T> out(x.numel());
    auto in = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < w; ++j) {
            out[r * w + (j + s) % w] = in[r * w + j];
        }
    }
    return Tensor<T>(x.shape(), std::move(out));
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& x)
{
    require(x.rank() == 2, "argmax_rows expects [N, C]");
    const std::size_t n = x.dim(0), c = x.dim(1);
    std::vector<int> out(n);
    auto d = x.data();
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j) {
            if (d[i * c + j] > d[i * c + best]) best = j;
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

#define PPC_INSTANTIATE_OPS(T)                                                              \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> scale(const Tensor<T>&, T);                                          \
    template Tensor<T> relu(const Tensor<T>&);                                              \
    template Tensor<T> tanh(const Tensor<T>&);                                              \
    template Tensor<T> sum(const Tensor<T>&);                                               \
    template Tensor<T> mean(const Tensor<T>&);                                              \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                    \
    template Tensor<T> flatten(const Tensor<T>&);                                           \
    template Tensor<T> concat_features(const std::vector<Tensor<T>>&);                      \
    template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                      \
    template Tensor<T> global_avg_pool(const Tensor<T>&);                                   \
    template Tensor<T> softmax(const Tensor<T>&);                                           \
    template Tensor<T> gate_mix(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
    template Tensor<T> nll_from_probs(const Tensor<T>&, std::span<const int>);              \
    template Tensor<T> select_column_sum(const Tensor<T>&, std::size_t);                    \
    template Tensor<T> roll_columns(const Tensor<T>&, long);                                \
    template std::vector<int> argmax_rows(const Tensor<T>&);

PPC_INSTANTIATE_OPS(float)
PPC_INSTANTIATE_OPS(double)

}  // namespace ppc
