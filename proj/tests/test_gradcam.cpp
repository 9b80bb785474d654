#include "doctest.h"

#include "ppc/augment.hpp"
#include "ppc/gradcam.hpp"
#include "ppc/ops.hpp"
#include "test_util.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace ppc;
using ppc::testing::random_tensor_as;

namespace {

// Toy model: a fixed 3-channel circular conv + ReLU + pool to 1x4 (on a 2x8
// input), then a linear head.
class ToyModel final : public Classifier<double> {
public:
    explicit ToyModel(std::uint64_t seed, bool ignore_features = false)
        : conv_w_(random_tensor_as<double>({3, 1, 3, 3}, seed)),
          conv_b_(Tensor<double>::zeros({3})),
          fc_w_(random_tensor_as<double>({6, 3 * 1 * 4}, seed + 1)),
          fc_b_(random_tensor_as<double>({6}, seed + 2)),
          ignore_(ignore_features)
    {
    }

    std::vector<Tensor<double>> features(const InputBatch<double>& batch, Mode) override
    {
        return {max_pool_2x2(relu(conv2d(batch.depth, conv_w_, conv_b_, Padding::circular_horizontal)))};
    }
    Tensor<double> head(const std::vector<Tensor<double>>& pool5, Mode, std::uint64_t) override
    {
        auto logits = fully_connected(flatten(pool5[0]), fc_w_, fc_b_);
        if (!ignore_) return logits;
        // Same values, no dependence on the features.
        std::vector<double> v(logits.data().begin(), logits.data().end());
        return Tensor<double>(logits.shape(), v);
    }
    std::vector<Parameter<double>> parameters() const override
    {
        return {{"conv.w", conv_w_}, {"conv.b", conv_b_}, {"fc.w", fc_w_}, {"fc.b", fc_b_}};
    }
    int num_classes() const override { return 6; }

    const Tensor<double>& fc_weight() const { return fc_w_; }

private:
    Tensor<double> conv_w_, conv_b_, fc_w_, fc_b_;
    bool ignore_;
};

InputBatch<double> batch_of(const Tensor<double>& x) { return {x, x}; }

}  // namespace

TEST_CASE("cam formula collapses for a single channel with unit weight")
{
    const std::vector<double> act{0.0, 1.5, 2.0, 0.25};
    const std::vector<double> grad{1.0, 1.0, 1.0, 1.0};
    auto map = cam_from_gradients(act, grad, 1, 1, 4, 0);
    CHECK(map.values == act);

    const std::vector<double> negative{-1.0, -1.0, -1.0, -1.0};
    auto zero = cam_from_gradients(act, negative, 1, 1, 4, 0);
    for (double v : zero.values) CHECK(v == 0.0);
}

TEST_CASE("grad_cam matches a direct computation from independently derived gradients")
{
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        ToyModel model(seed);
        auto x = random_tensor_as<double>({2, 1, 2, 8}, seed + 100, 0, 1);
        const int cls = static_cast<int>(seed % 6);
        auto maps = grad_cam<double>(model, batch_of(x), cls);
        REQUIRE(maps.size() == 2);

        // For a linear head, d logit_c / d A = row c of the fc weight.
        auto a = model.features(batch_of(x), Mode::eval)[0];
        const auto w = model.fc_weight().data();
        for (std::size_t s = 0; s < 2; ++s) {
            std::vector<double> expected(4, 0.0);
            for (int k = 0; k < 3; ++k) {
                double alpha = 0;
                for (int p = 0; p < 4; ++p) alpha += w[cls * 12 + k * 4 + p];
                alpha /= 4.0;
                for (int p = 0; p < 4; ++p) expected[p] += alpha * a.data()[s * 12 + k * 4 + p];
            }
            for (auto& v : expected) v = std::max(v, 0.0);
            CHECK(maps[s].values == expected);
            CHECK(maps[s].height == 1);
            CHECK(maps[s].width == 4);
            CHECK(maps[s].upsampled.width() == 8);
            CHECK(maps[s].upsampled.height() == 2);
            CHECK(maps[s].upsampled.modality() == Modality::cam);
        }
    }
}

TEST_CASE("grad_cam is zero when the score ignores pool5")
{
    ToyModel model(3, true);
    auto x = random_tensor_as<double>({1, 1, 2, 8}, 5, 0, 1);
    auto maps = grad_cam<double>(model, batch_of(x), 2);
    for (double v : maps[0].values) CHECK(v == 0.0);
}

TEST_CASE("grad_cam rejects an out-of-range class")
{
    ToyModel model(3);
    auto x = random_tensor_as<double>({1, 1, 2, 8}, 5, 0, 1);
    CHECK_THROWS_AS(grad_cam<double>(model, batch_of(x), 6), std::out_of_range);
    CHECK_THROWS_AS(grad_cam<double>(model, batch_of(x), -1), std::out_of_range);
}

TEST_CASE("grad_cam maps are non-negative on random inputs")
{
    ModelSpec spec;
    spec.use_hcc = true;
    spec.use_rwmp = true;
    spec.width_divisor = 32;
    auto model = build_model<double>(spec, 4);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = random_tensor_as<double>({10, 1, 32, 384}, 50 + trial, 0, 1);
        for (const auto& m : grad_cam<double>(*model, batch_of(x), trial % 6)) {
            for (double v : m.values) REQUIRE(v >= 0.0);
            for (double v : m.upsampled.pixels()) REQUIRE(v >= 0.0);
        }
    }
}

TEST_CASE("HCC+RWMP attention follows circular shifts")
{
    ModelSpec spec;
    spec.use_hcc = true;
    spec.use_rwmp = true;
    spec.width_divisor = 16;
    auto model = build_model<double>(spec, 6);
    auto x = random_tensor_as<double>({1, 1, 32, 384}, 7, 0, 1);
    auto base = grad_cam<double>(*model, batch_of(x), 1)[0];
    for (long k : {1L, 5L, 11L}) {
        auto moved = grad_cam<double>(*model, batch_of(roll_columns(x, 32 * k)), 1)[0];
        for (int c = 0; c < 12; ++c) {
            CHECK(std::abs(moved.values[(c + k) % 12] - base.values[c]) <= 1e-5);
        }
        auto expected_up = circular_shift(base.upsampled, 32 * k);
        CHECK(ppc::testing::max_abs_diff<double>(moved.upsampled.pixels(), expected_up.pixels()) <= 1e-5);
    }
}

TEST_CASE("averaging normalized maps")
{
    CamMap a, b;
    a.height = b.height = 1;
    a.width = b.width = 2;
    a.values = {0, 2};
    b.values = {4, 0};
    a.upsampled = PanoramicImage(2, 1, Modality::cam);
    a.upsampled.pixels() = a.values;
    b.upsampled = PanoramicImage(2, 1, Modality::cam);
    b.upsampled.pixels() = b.values;
    const std::vector<CamMap> pair{a, b};
    auto avg = average_maps(pair);
    CHECK(avg.values == std::vector<double>{0.5, 0.5});
    CHECK(avg.upsampled.pixels() == std::vector<double>{0.5, 0.5});

    const std::vector<CamMap> single{a};
    const std::vector<CamMap> doubled{a, a};
    CHECK(average_maps(single).values == std::vector<double>{0, 1});
    CHECK(average_maps(doubled).values == average_maps(single).values);
    CHECK_THROWS(average_maps(std::span<const CamMap>()));
}

TEST_CASE("average_cam uses correctly classified scans only")
{
    ToyModel model(9);
    std::vector<LabeledScan> scans;
    for (int i = 0; i < 8; ++i) {
        LabeledScan s{PanoramicImage(8, 2, Modality::depth), PanoramicImage(8, 2, Modality::reflectance),
                      Category::coast, 0};
        auto x = random_tensor_as<double>({1, 1, 2, 8}, 300 + i, 0, 1);
        for (std::size_t p = 0; p < 16; ++p) s.depth.pixels()[p] = x.data()[p];
        scans.push_back(std::move(s));
    }
    const std::span<const LabeledScan> view(scans);
    std::vector<std::size_t> all{0, 1, 2, 3, 4, 5, 6, 7};
    NoGradGuard no_grad;
    // Label each scan with the model's own prediction, then corrupt one.
    for (auto& s : scans) {
        auto x = image_tensor<double>(std::vector<const PanoramicImage*>{&s.depth});
        s.label = static_cast<Category>(argmax_rows(model.forward(batch_of(x), Mode::eval).logits)[0]);
    }
    const int cls = static_cast<int>(scans[0].label);
    std::vector<CamMap> expected;
    for (const auto& s : scans) {
        if (static_cast<int>(s.label) != cls) continue;
        auto x = image_tensor<double>(std::vector<const PanoramicImage*>{&s.depth});
        expected.push_back(grad_cam<double>(model, batch_of(x), cls)[0]);
    }
    auto avg = average_cam<double>(model, view, all, cls);
    auto ref = average_maps(expected);
    CHECK(ppc::testing::max_abs_diff<double>(avg.values, ref.values) < 1e-12);

    // A class the model never predicts correctly has no map.
    for (auto& s : scans) s.label = static_cast<Category>((static_cast<int>(s.label) + 1) % 6);
    CHECK_THROWS_AS(average_cam<double>(model, view, all, (cls + 1) % 6), std::runtime_error);
}

TEST_CASE("map export")
{
    CamMap m;
    m.height = 1;
    m.width = 3;
    m.values = {0, 1, 2};
    m.upsampled = PanoramicImage(3, 1, Modality::cam);
    m.upsampled.pixels() = {0, 1, 2};
    const auto dir = std::filesystem::temp_directory_path() / "ppc_cam_test";
    std::filesystem::create_directories(dir);
    write_cam_pano(dir / "m.pano", m);
    auto back = read_panorama(dir / "m.pano");
    CHECK(back.modality() == Modality::cam);
    CHECK(back.pixels() == m.upsampled.pixels());

    write_pgm(dir / "m.pgm", m.upsampled);
    std::ifstream in(dir / "m.pgm", std::ios::binary);
    std::string text((std::istreambuf_iterator<char>(in)), {});
    CHECK(text.substr(0, 11) == "P5\n3 1\n255\n");
    CHECK(static_cast<unsigned char>(text[11]) == 0);
    CHECK(static_cast<unsigned char>(text[12]) == 128);
    CHECK(static_cast<unsigned char>(text[13]) == 255);
    std::filesystem::remove_all(dir);
}
