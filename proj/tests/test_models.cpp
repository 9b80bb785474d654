#include "doctest.h"

#include "ppc/models.hpp"
#include "ppc/ops.hpp"
#include "test_util.hpp"

#include <cmath>
#include <filesystem>

using namespace ppc;
using ppc::testing::random_tensor_as;

namespace {

template <typename T>
InputBatch<T> single_modality(const Tensor<T>& x)
{
    return {x, x};
}

ModelSpec small_spec(bool hcc, bool rwmp, int divisor = 16)
{
    ModelSpec s;
    s.use_hcc = hcc;
    s.use_rwmp = rwmp;
    s.width_divisor = divisor;
    return s;
}

template <typename T>
double max_diff(const Tensor<T>& a, const Tensor<T>& b)
{
    return ppc::testing::max_abs_diff<T>(a.data(), b.data());
}

}  // namespace

TEST_CASE("baseline shapes at full width")
{
    ModelSpec spec;
    auto model = build_model<float>(spec, 1);
    auto x = random_tensor_as<float>({1, 1, 32, 384}, 2, 0, 1);
    auto out = model->forward(single_modality(x), Mode::eval);
    REQUIRE(out.pool5.size() == 1);
    CHECK(out.pool5[0].shape() == Shape{1, 512, 1, 12});
    CHECK(out.logits.shape() == Shape{1, 6});
    CHECK(model->fc1_in_features() == 512 * 12);

    spec.use_rwmp = true;
    CHECK(build_model<float>(spec, 1)->fc1_in_features() == 512);
}

TEST_CASE("same seed gives bit-identical parameters")
{
    auto a = build_model<float>(small_spec(true, true), 42);
    auto b = build_model<float>(small_spec(true, true), 42);
    auto c = build_model<float>(small_spec(true, true), 43);
    CHECK(capture_state(*a) == capture_state(*b));
    CHECK(parameter_hash(*a) == parameter_hash(*b));
    CHECK(parameter_hash(*a) != parameter_hash(*c));
}

TEST_CASE("initialization: He-scaled weights, zero biases, unit gamma")
{
    auto model = build_model<double>(ModelSpec{}, 5);
    for (const auto& p : model->parameters()) {
        const auto d = p.tensor.data();
        if (p.name.ends_with(".bias") || p.name.ends_with(".beta")) {
            CHECK(std::all_of(d.begin(), d.end(), [](double v) { return v == 0; }));
        } else if (p.name.ends_with(".gamma")) {
            CHECK(std::all_of(d.begin(), d.end(), [](double v) { return v == 1; }));
        } else {
            double sq = 0;
            for (double v : d) sq += v * v;
            const double fan_in = static_cast<double>(p.tensor.numel() / p.tensor.dim(0));
            const double expected = 2.0 / fan_in;
            CHECK(sq / d.size() == doctest::Approx(expected).epsilon(0.15));
        }
    }
}

TEST_CASE("probabilities are a distribution and eval is deterministic")
{
    auto model = build_model<float>(small_spec(false, false), 3);
    auto x = random_tensor_as<float>({4, 1, 32, 384}, 4, 0, 1);
    auto a = model->forward(single_modality(x), Mode::train, 1);
    for (std::size_t n = 0; n < 4; ++n) {
        double s = 0;
        for (std::size_t c = 0; c < 6; ++c) s += a.probabilities.at({n, c});
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
    auto e1 = model->forward(single_modality(x), Mode::eval);
    auto e2 = model->forward(single_modality(x), Mode::eval);
    CHECK(e1.logits.data().size() == 24);
    CHECK(max_diff(e1.logits, e2.logits) == 0.0);
}

TEST_CASE("wrong input size is a contract violation")
{
    auto model = build_model<float>(small_spec(true, true), 3);
    auto bad = random_tensor_as<float>({1, 1, 32, 256}, 1);
    CHECK_THROWS_AS(model->forward(single_modality(bad), Mode::eval), ContractViolation);
    auto bad_channels = random_tensor_as<float>({1, 2, 32, 384}, 1);
    CHECK_THROWS_AS(model->forward(single_modality(bad_channels), Mode::eval), ContractViolation);
    ModelSpec odd;
    odd.input_width = 100;
    CHECK_THROWS_AS(build_model<float>(odd, 1), ContractViolation);
}

TEST_CASE("HCC+RWMP logits are invariant to shifts by multiples of 32 (float)")
{
    auto model = build_model<float>(small_spec(true, true, 8), 11);
    auto x = random_tensor_as<float>({2, 1, 32, 384}, 12, 0, 1);
    auto base = model->forward(single_modality(x), Mode::eval).logits;
    for (long k = 1; k < 12; ++k) {
        auto shifted = model->forward(single_modality(roll_columns(x, 32 * k)), Mode::eval).logits;
        CHECK(max_diff(base, shifted) <= 1e-5);
    }
}

TEST_CASE("HCC+RWMP logits are invariant to shifts by multiples of 32 (double)")
{
    auto model = build_model<double>(small_spec(true, true, 16), 13);
    auto x = random_tensor_as<double>({1, 1, 32, 384}, 14, 0, 1);
    auto base = model->forward(single_modality(x), Mode::eval).logits;
    for (long k : {1L, 5L, 11L, -3L}) {
        auto shifted = model->forward(single_modality(roll_columns(x, 32 * k)), Mode::eval).logits;
        CHECK(max_diff(base, shifted) <= 1e-10);
    }
}

TEST_CASE("HCC pool5 is exactly equivariant to shifts by multiples of 32")
{
    auto model = build_model<double>(small_spec(true, false, 16), 15);
    auto x = random_tensor_as<double>({1, 1, 32, 384}, 16, 0, 1);
    auto base = model->features(single_modality(x), Mode::eval)[0];
    for (long k : {1L, 4L, 7L}) {
        auto shifted = model->features(single_modality(roll_columns(x, 32 * k)), Mode::eval)[0];
        CHECK(max_diff(shifted, roll_columns(base, k)) == 0.0);
    }
}

TEST_CASE("zero-padded baseline is not shift invariant")
{
    auto model = build_model<float>(small_spec(false, false, 8), 17);
    // A bright object straddling the left border.
    std::vector<float> img(32 * 384, 0.1f);
    for (int r = 8; r < 24; ++r)
        for (int c = 0; c < 20; ++c) img[r * 384 + c] = 1.0f;
    TensorF x({1, 1, 32, 384}, img);
    auto base = model->forward(single_modality(x), Mode::eval).logits;
    auto shifted = model->forward(single_modality(roll_columns(x, 32 * 5)), Mode::eval).logits;
    CHECK(max_diff(base, shifted) > 1e-3);
}

TEST_CASE("early fusion stacks modalities as two channels")
{
    auto early = build_early_fusion<float>(ModelSpec{}, 1);
    auto uni = build_model<float>(ModelSpec{}, 1);
    CHECK(early->spec().input_channels == 2);
    CHECK(early->parameter_count() - uni->parameter_count() == 64 * 1 * 3 * 3);

    auto small = build_early_fusion<float>(small_spec(false, true), 2);
    InputBatch<float> batch{random_tensor_as<float>({1, 1, 32, 384}, 1, 0, 1),
                            random_tensor_as<float>({1, 1, 32, 384}, 2, 0, 1)};
    CHECK(small->forward(batch, Mode::eval).logits.shape() == Shape{1, 6});
}

TEST_CASE("late fusion concatenates two streams before fc1")
{
    auto spec = small_spec(true, true);
    auto late = build_late_fusion<float>(spec, 3);
    CHECK(late->fc1_in_features() == 2 * spec.stream_features());
    InputBatch<float> batch{random_tensor_as<float>({2, 1, 32, 384}, 1, 0, 1),
                            random_tensor_as<float>({2, 1, 32, 384}, 2, 0, 1)};
    auto out = late->forward(batch, Mode::eval);
    CHECK(out.pool5.size() == 2);
    CHECK(out.logits.shape() == Shape{2, 6});
    double s = 0;
    for (std::size_t c = 0; c < 6; ++c) s += out.probabilities.at({1, c});
    CHECK(std::abs(s - 1.0) < 1e-6);

    auto bad = random_tensor_as<float>({2, 512 / 16, 1, 12}, 5);
    auto good = random_tensor_as<float>({2, 512 / 16, 1, 6}, 5);
    CHECK_THROWS_AS(late->head({bad, good}, Mode::eval, 0), ContractViolation);
}

TEST_CASE("frozen models expose no trainable parameters")
{
    auto model = build_model<float>(small_spec(true, true), 1);
    CHECK_FALSE(model->frozen());
    model->set_frozen(true);
    CHECK(model->frozen());
    auto x = random_tensor_as<float>({2, 1, 32, 384}, 1, 0, 1);
    auto out = model->forward(single_modality(x), Mode::eval);
    CHECK_FALSE(out.logits.requires_grad());
    model->set_frozen(false);
    CHECK_FALSE(model->frozen());
}

TEST_CASE("training step moves parameters and running statistics")
{
    auto model = build_model<float>(small_spec(true, true), 1);
    const auto before = parameter_hash(*model);
    auto x = random_tensor_as<float>({4, 1, 32, 384}, 1, 0, 1);
    auto out = model->forward(single_modality(x), Mode::train, 9);
    const std::vector<int> labels{0, 1, 2, 3};
    backward(softmax_cross_entropy(out.logits, std::span<const int>(labels)).loss);
    for (const auto& p : model->parameters()) {
        CHECK_MESSAGE(p.tensor.has_grad(), p.name);
    }
    CHECK(parameter_hash(*model) != before);  // running stats updated in train mode
}

TEST_CASE("state capture, restore and checkpoint round trip")
{
    auto a = build_model<float>(small_spec(true, true), 1);
    auto b = build_model<float>(small_spec(true, true), 2);
    const auto state = capture_state(*a);
    restore_state(*b, state);
    CHECK(parameter_hash(*a) == parameter_hash(*b));

    auto c = build_model<float>(small_spec(true, true), 3);
    load_state_dict(*c, decode_checkpoint(encode_checkpoint(state_dict(*a))));
    CHECK(parameter_hash(*a) == parameter_hash(*c));

    auto other = build_model<float>(small_spec(false, false), 3);
    CHECK_THROWS_AS(load_state_dict(*other, state_dict(*a)), std::runtime_error);
    CHECK_THROWS(restore_state(*build_late_fusion<float>(small_spec(true, true), 1), state));
}

TEST_CASE("manifest round trip")
{
    auto spec = small_spec(true, false, 4);
    spec.input = InputKind::reflectance;
    CHECK(spec_from_manifest(spec_to_manifest(spec)) == spec);

    const auto path = std::filesystem::temp_directory_path() / "ppc_manifest_test.txt";
    write_manifest(path, spec_to_manifest(spec));
    CHECK(spec_from_manifest(read_manifest(path)) == spec);
    std::filesystem::remove(path);

    auto kv = spec_to_manifest(spec);
    kv.erase("use_hcc");
    CHECK_THROWS_AS(spec_from_manifest(kv), std::runtime_error);
    CHECK_THROWS_AS(parse_input_kind("lidar"), std::runtime_error);
}
