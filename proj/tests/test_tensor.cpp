#include "doctest.h"

#include "ppc/checkpoint.hpp"
#include <bit>
#include <cstring>
#include "ppc/gradcheck.hpp"
#include "ppc/ops.hpp"
#include "ppc/optim.hpp"
#include "test_util.hpp"

#include <filesystem>

using namespace ppc;
using ppc::testing::random_tensor;

TEST_CASE("sum adjoint is all ones")
{
    TensorD x({3}, {0.5, -2.0, 7.0}, true);
    backward(sum(x));
    CHECK(x.grad() == std::vector<double>{1, 1, 1});
}

TEST_CASE("square adjoint is 2x")
{
    TensorD x({3}, {1, 2, 3}, true);
    backward(sum(mul(x, x)));
    CHECK(x.grad() == std::vector<double>{2, 4, 6});
}

TEST_CASE("backward rejects non-scalar loss")
{
    TensorD x({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(relu(x)), ContractViolation);
}

TEST_CASE("backward twice on one graph is a stale-graph error")
{
    TensorD x({2}, {1, 2}, true);
    auto loss = sum(mul(x, x));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), StaleGraphError);
    // A fresh forward pass is fine.
    backward(sum(mul(x, x)));
    CHECK(x.grad() == std::vector<double>{2, 4});
}

TEST_CASE("unreachable tensors report zero gradient")
{
    TensorD a({2}, {1, 2}, true);
    TensorD b({2}, {3, 4}, true);
    backward(sum(a));
    backward(sum(mul(a, a)));
    CHECK(b.grad() == std::vector<double>{0, 0});
    CHECK_FALSE(b.has_grad());
}

TEST_CASE("gradient accumulation over two consumers is exact")
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto x = random_tensor({4, 6}, seed, true);
        auto w = random_tensor({4, 6}, seed + 50);
        backward(sum(mul(x, w)));
        const auto gf = x.grad();
        backward(sum(tanh(x)));
        const auto gg = x.grad();
        backward(add(sum(mul(x, w)), sum(tanh(x))));
        const auto both = x.grad();
        for (std::size_t i = 0; i < both.size(); ++i) {
            CHECK(both[i] == gf[i] + gg[i]);
        }
    }
}

TEST_CASE("composite op matches finite differences over 20 seeds")
{
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        auto w = random_tensor({4, 6}, seed + 1000);
        auto op = [&](const TensorD& x) {
            auto h = relu(add(mul(x, w), scale(x, 0.5)));
            return softmax(reshape(tanh(h), {4, 6}));
        };
        CHECK(grad_check(op, random_tensor({4, 6}, seed), 1e-5) <= 1e-4);
    }
}

TEST_CASE("grad_check of relu away from the kink")
{
    auto op = [](const TensorD& x) { return relu(x); };
    CHECK(grad_check(op, TensorD({1}, {5.0}), 1e-5) <= 1e-6);
}

TEST_CASE("forward values and gradients are deterministic")
{
    auto run = [] {
        auto x = random_tensor({4, 6}, 7, true);
        auto y = softmax(tanh(x));
        backward(sum(mul(y, y)));
        return std::pair{std::vector<double>(y.data().begin(), y.data().end()), x.grad()};
    };
    CHECK(run() == run());
}

TEST_CASE("no-grad guard records nothing")
{
    TensorD x({2}, {1, 2}, true);
    NoGradGuard guard;
    auto y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.is_leaf());
}

TEST_CASE("sgd_step: decay-only update")
{
    std::vector<double> p{1.0}, g{0.0}, v{0.0};
    sgd_step<double>(p, g, v, {.lr = 0.1, .momentum = 0.0, .weight_decay = 0.5});
    CHECK(v[0] == doctest::Approx(-0.05).epsilon(1e-15));
    CHECK(p[0] == doctest::Approx(0.95).epsilon(1e-15));
}

TEST_CASE("sgd_step: unrolled momentum recurrence")
{
    std::vector<double> p{0.0}, g{1.0}, v{0.0};
    const SgdConfig cfg{.lr = 1e-4, .momentum = 0.9, .weight_decay = 0.0};
    sgd_step<double>(p, g, v, cfg);
    sgd_step<double>(p, g, v, cfg);
    CHECK(p[0] == doctest::Approx(-2.9e-4).epsilon(1e-12));
}

TEST_CASE("sgd_step without momentum or decay is plain gradient descent, exactly")
{
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> dist(-10, 10);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> p(8), g(8), v(8, 0.0);
        for (auto& x : p) x = dist(gen);
        for (auto& x : g) x = dist(gen);
        const double lr = std::abs(dist(gen)) / 10;
        auto expected = p;
        for (std::size_t i = 0; i < p.size(); ++i) expected[i] = p[i] + (0.0 - lr * (g[i] + 0.0 * p[i]));
        std::vector<double> naive = p;
        for (std::size_t i = 0; i < p.size(); ++i) naive[i] = p[i] - lr * g[i];
        sgd_step<double>(p, g, v, {.lr = lr, .momentum = 0.0, .weight_decay = 0.0});
        CHECK(p == naive);
    }
}

TEST_CASE("sgd_step rejects mismatched shapes")
{
    std::vector<double> p(3), g(2), v(3);
    CHECK_THROWS_AS(sgd_step<double>(p, g, v, {}), ContractViolation);
}

TEST_CASE("Sgd optimizer keeps zero-initialised velocity per parameter")
{
    TensorD a({2}, {1, 2}, true);
    TensorD b({1}, {3}, true);
    Sgd<double> opt({a, b}, {.lr = 0.1, .momentum = 0.9, .weight_decay = 0.0});
    CHECK(opt.velocity(b)[0] == 0.0);
    backward(sum(mul(a, a)));
    opt.step();
    CHECK(a.data()[0] == doctest::Approx(1 - 0.1 * 2));
    CHECK(b.data()[0] == 3.0);
    CHECK_THROWS_AS(opt.velocity(TensorD({1}, {0})), ContractViolation);
}

TEST_CASE("checkpoint codec round-trips bit-exactly (random property)")
{
    std::mt19937_64 gen(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<NamedArray> arrays;
        const int count = static_cast<int>(gen() % 5);
        for (int i = 0; i < count; ++i) {
            NamedArray a;
            a.name = "layer" + std::to_string(i) + ".weight";
            const auto rank = 1 + gen() % 4;
            for (std::size_t r = 0; r < rank; ++r) a.shape.push_back(1 + gen() % 4);
            a.data.resize(shape_numel(a.shape));
            for (auto& v : a.data) v = std::bit_cast<float>(static_cast<std::uint32_t>(gen() & 0x7f7fffffu));
            arrays.push_back(std::move(a));
        }
        const auto encoded = encode_checkpoint(arrays);
        const auto decoded = decode_checkpoint(encoded);
        REQUIRE(decoded.size() == arrays.size());
        for (std::size_t i = 0; i < arrays.size(); ++i) {
            CHECK(decoded[i].name == arrays[i].name);
            CHECK(decoded[i].shape == arrays[i].shape);
            CHECK(std::memcmp(decoded[i].data.data(), arrays[i].data.data(), arrays[i].data.size() * 4) == 0);
        }
        CHECK(encode_checkpoint(decoded) == encoded);
    }
}

TEST_CASE("checkpoint header layout")
{
    const auto bytes = encode_checkpoint({{"w", {2}, {1.0f, -2.0f}}});
    const std::vector<std::uint8_t> expected{'P', 'P', 'C', '1', 1, 0, 0, 0, 1, 0, 'w', 1, 2, 0, 0, 0,
                                             0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
    CHECK(bytes == expected);
    CHECK_THROWS(decode_checkpoint({'X', 'P', 'C', '1', 0, 0, 0, 0}));
    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS(decode_checkpoint(truncated));
}

TEST_CASE("checkpoint file round-trip")
{
    const auto path = std::filesystem::temp_directory_path() / "ppc_test_ckpt.bin";
    const std::vector<NamedArray> arrays{{"a", {2, 2}, {1, 2, 3, 4}}, {"b", {1}, {0.5f}}};
    write_checkpoint(path, arrays);
    CHECK(read_checkpoint(path) == arrays);
    std::filesystem::remove(path);
}
