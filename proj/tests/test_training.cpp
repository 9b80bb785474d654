#include "doctest.h"

#include "ppc/training.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <set>

using namespace ppc;

namespace {

ModelSpec toy_spec()
{
    ModelSpec s;
    s.use_hcc = true;
    s.use_rwmp = true;
    s.width_divisor = 64;
    s.fc_hidden = 8;
    s.dropout_rate = 0.0;
    s.input_width = 64;
    return s;
}

// Class 0 (Coast): horizontal stripes. Class 1 (Forest): vertical stripes.
std::vector<LabeledScan> toy_scans(int per_class, int sets, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> noise(-0.1, 0.1);
    std::vector<LabeledScan> scans;
    for (int cls = 0; cls < 2; ++cls) {
        for (int i = 0; i < per_class; ++i) {
            LabeledScan s{PanoramicImage(64, 32, Modality::depth), PanoramicImage(64, 32, Modality::reflectance),
                          static_cast<Category>(cls), i % sets};
            const int phase = static_cast<int>(rng() % 4);
            for (int r = 0; r < 32; ++r) {
                for (int c = 0; c < 64; ++c) {
                    const int k = cls == 0 ? r : c;
                    const double v = ((k + phase) / 2) % 2 ? 0.8 : 0.2;
                    s.depth.at(r, c) = std::clamp(v + noise(rng), 0.0, 1.0);
                    s.reflectance.at(r, c) = std::clamp(1.0 - v + noise(rng), 0.0, 1.0);
                }
            }
            scans.push_back(std::move(s));
        }
    }
    return scans;
}

std::vector<std::size_t> all_indices(std::size_t n)
{
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

}  // namespace

TEST_CASE("make_folds: hand-checked k=2 plan")
{
    const std::vector<Category> labels{Category::coast, Category::coast, Category::urban, Category::urban};
    const std::vector<int> sets{3, 8, 1, 2};
    auto plan = make_folds(labels, sets, 2);
    REQUIRE(plan.folds.size() == 2);
    CHECK(plan.folds[0].test == std::vector<std::size_t>{0, 2});
    CHECK(plan.folds[0].train == std::vector<std::size_t>{1, 3});
    CHECK(plan.folds[0].validation.empty());
    CHECK(plan.folds[1].test == std::vector<std::size_t>{1, 3});
    CHECK(plan.folds[1].train == std::vector<std::size_t>{0, 2});
}

TEST_CASE("make_folds: validation set rotates when enough sets remain")
{
    // One category, 4 sets with 2 scans each, k = 4.
    std::vector<Category> labels(8, Category::forest);
    std::vector<int> sets{0, 0, 1, 1, 2, 2, 3, 3};
    auto plan = make_folds(labels, sets, 4);
    CHECK(plan.folds[0].test == std::vector<std::size_t>{0, 1});
    CHECK(plan.folds[0].validation == std::vector<std::size_t>{2, 3});
    CHECK(plan.folds[0].train == std::vector<std::size_t>{4, 5, 6, 7});
    CHECK(plan.folds[3].test == std::vector<std::size_t>{6, 7});
    CHECK(plan.folds[3].validation == std::vector<std::size_t>{0, 1});
}

TEST_CASE("make_folds: errors")
{
    const std::vector<Category> labels{Category::coast, Category::coast, Category::forest};
    const std::vector<int> sets{0, 1, 0};
    CHECK_THROWS_AS(make_folds(labels, sets, 2), std::invalid_argument);
    CHECK_THROWS_AS(make_folds(labels, sets, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_folds(std::span<const Category>(), std::span<const int>(), 2), std::invalid_argument);
}

TEST_CASE("make_folds: invariants over random dataset shapes")
{
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 1000; ++trial) {
        const int k = 2 + static_cast<int>(rng() % 6);
        std::vector<Category> labels;
        std::vector<int> sets;
        for (int c = 0; c < kNumCategories; ++c) {
            if (rng() % 4 == 0 && c > 0) continue;
            const int m = k + static_cast<int>(rng() % 5);
            std::set<int> ids;
            while (static_cast<int>(ids.size()) < m) ids.insert(static_cast<int>(rng() % 50));
            for (int id : ids) {
                const int count = 1 + static_cast<int>(rng() % 4);
                for (int j = 0; j < count; ++j) {
                    labels.push_back(static_cast<Category>(c));
                    sets.push_back(id);
                }
            }
        }
        // Shuffle scan order.
        std::vector<std::size_t> perm = all_indices(labels.size());
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<Category> l2;
        std::vector<int> s2;
        for (auto p : perm) {
            l2.push_back(labels[p]);
            s2.push_back(sets[p]);
        }
        const auto plan = make_folds(l2, s2, k);
        REQUIRE(static_cast<int>(plan.folds.size()) == k);

        std::vector<int> test_count(l2.size(), 0);
        for (const auto& f : plan.folds) {
            std::vector<int> role(l2.size(), 0);
            for (auto i : f.train) role[i] |= 1;
            for (auto i : f.validation) role[i] |= 2;
            for (auto i : f.test) {
                role[i] |= 4;
                ++test_count[i];
            }
            // Each fold partitions the dataset.
            for (int r : role) REQUIRE((r == 1 || r == 2 || r == 4));
            // Grouping: a (category, set) has one role in a fold.
            std::map<std::pair<int, int>, int> group_role;
            for (std::size_t i = 0; i < l2.size(); ++i) {
                auto [it, inserted] = group_role.emplace(std::make_pair(static_cast<int>(l2[i]), s2[i]), role[i]);
                REQUIRE(it->second == role[i]);
            }
            // Every category keeps training data and at most one validation set.
            std::map<int, std::set<int>> val_sets;
            std::set<int> train_cats;
            for (auto i : f.validation) val_sets[static_cast<int>(l2[i])].insert(s2[i]);
            for (auto i : f.train) train_cats.insert(static_cast<int>(l2[i]));
            for (const auto& [cat, ids] : val_sets) REQUIRE(ids.size() == 1);
            for (const auto& [g, r] : group_role) REQUIRE(train_cats.count(g.first) == 1);
        }
        // Coverage: each scan is tested exactly once.
        for (int c : test_count) REQUIRE(c == 1);
    }
}

TEST_CASE("early stopping on scripted losses")
{
    SUBCASE("strictly increasing losses stop after patience + 1 epochs at epoch 1")
    {
        EarlyStopping es(10);
        int epochs = 0;
        for (double loss = 1.0; !es.should_stop(); loss += 0.1) {
            es.update(loss);
            ++epochs;
        }
        CHECK(epochs == 11);
        CHECK(es.best_epoch() == 1);
        CHECK(es.best_loss() == 1.0);
    }
    SUBCASE("best epoch is the minimum; ties do not count as improvement")
    {
        EarlyStopping es(3);
        const std::vector<double> losses{5, 4, 3, 3.5, 3, 2.5, 2.6, 2.7, 2.5, 9};
        std::vector<bool> improved;
        for (double l : losses) {
            if (es.should_stop()) break;
            improved.push_back(es.update(l));
        }
        CHECK(improved == std::vector<bool>{true, true, true, false, false, true, false, false, false});
        CHECK(es.should_stop());
        CHECK(es.best_epoch() == 6);
        CHECK(es.best_loss() == 2.5);
    }
    CHECK_THROWS_AS(EarlyStopping(0), std::invalid_argument);
}

TEST_CASE("train_model learns a toy problem and keeps the best parameters")
{
    const auto scans = toy_scans(24, 4, 1);
    std::vector<std::size_t> train, val;
    for (std::size_t i = 0; i < scans.size(); ++i) (scans[i].location_set == 0 ? val : train).push_back(i);

    auto model = build_model<float>(toy_spec(), 3);
    TrainConfig cfg;
    cfg.lr = 0.02;
    cfg.batch_size = 8;
    cfg.max_epochs = 12;
    cfg.patience = 4;
    AugmentConfig augment;
    std::vector<ModelState<float>> states;
    auto result = train_model(*model, std::span<const LabeledScan>(scans), train, val, cfg, augment,
                              [&](const EpochRecord&) {
                                  states.push_back(capture_state(*model));
                                  return true;
                              });
    REQUIRE(result.history.size() >= 5);
    CHECK(result.history[4].train_loss < result.history[0].train_loss);

    // Best epoch has the minimum validation loss and its parameters are restored.
    double best = result.history[0].val_loss;
    for (const auto& r : result.history) best = std::min(best, r.val_loss);
    CHECK(result.best_loss == best);
    CHECK(result.history[static_cast<std::size_t>(result.best_epoch - 1)].val_loss == best);
    CHECK(capture_state(*model) == states[static_cast<std::size_t>(result.best_epoch - 1)]);
    CHECK(evaluate(*model, std::span<const LabeledScan>(scans), val).total >= 0.9);
}

TEST_CASE("train_model is deterministic")
{
    const auto scans = toy_scans(10, 2, 2);
    auto idx = all_indices(scans.size());
    TrainConfig cfg;
    cfg.lr = 0.01;
    cfg.batch_size = 7;  // leaves a trailing singleton to merge
    cfg.max_epochs = 3;
    auto run = [&] {
        auto model = build_model<float>(toy_spec(), 5);
        auto r = train_model(*model, std::span<const LabeledScan>(scans), idx, {}, cfg, AugmentConfig{});
        return std::make_pair(r, parameter_hash(*model));
    };
    auto [a, ha] = run();
    auto [b, hb] = run();
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(std::isnan(a.history[i].val_loss));
    }
    CHECK(ha == hb);
}

TEST_CASE("train_model errors")
{
    const auto scans = toy_scans(2, 2, 3);
    auto model = build_model<float>(toy_spec(), 1);
    const std::vector<std::size_t> none;
    const std::vector<std::size_t> some{0, 1};
    CHECK_THROWS_AS(train_model(*model, std::span<const LabeledScan>(scans), none, none, {}, {}),
                    std::invalid_argument);
    CHECK_THROWS_AS(train_model(*model, std::span<const LabeledScan>(scans), some, some, {}, {}),
                    std::invalid_argument);
}

TEST_CASE("evaluate: perfect, constant and hand-built predictors")
{
    std::vector<int> truth;
    for (int c = 0; c < 6; ++c) truth.insert(truth.end(), {c, c});

    auto perfect = evaluate(truth, truth);
    CHECK(perfect.total == 1.0);
    for (int c = 0; c < 6; ++c) {
        CHECK(*perfect.per_category[c] == 1.0);
        CHECK(perfect.confusion.counts[c][c] == 2);
    }

    std::vector<int> coast(12, 0);
    auto constant = evaluate(truth, coast);
    CHECK(*constant.per_category[0] == 1.0);
    for (int c = 1; c < 6; ++c) CHECK(*constant.per_category[c] == 0.0);
    CHECK(constant.total == doctest::Approx(2.0 / 12));

    // Truth pairs per class; predictions hand-chosen.
    const std::vector<int> predicted{0, 1, 1, 1, 2, 5, 3, 3, 0, 4, 5, 5};
    auto e = evaluate(truth, predicted);
    ConfusionMatrix expected;
    expected.counts[0][0] = 1;
    expected.counts[0][1] = 1;
    expected.counts[1][1] = 2;
    expected.counts[2][2] = 1;
    expected.counts[2][5] = 1;
    expected.counts[3][3] = 2;
    expected.counts[4][0] = 1;
    expected.counts[4][4] = 1;
    expected.counts[5][5] = 2;
    CHECK(e.confusion == expected);
    CHECK(e.total == static_cast<double>(e.confusion.trace()) / e.confusion.total());
    CHECK(e.total == 9.0 / 12.0);
    CHECK(*e.per_category[0] == 0.5);
    CHECK(*e.per_category[4] == 0.5);
}

TEST_CASE("evaluate: absent categories are excluded")
{
    const std::vector<int> truth{0, 0, 3};
    const std::vector<int> predicted{0, 1, 3};
    auto e = evaluate(truth, predicted);
    CHECK(e.per_category[0].has_value());
    CHECK_FALSE(e.per_category[1].has_value());
    CHECK_FALSE(e.per_category[5].has_value());

    FoldResult a, b;
    a.evaluation = e;
    b.evaluation = evaluate(std::vector<int>{1, 1, 1, 1}, std::vector<int>{1, 1, 1, 0});
    auto s = summarize({a, b});
    CHECK(s.fold_weighted_accuracy == doctest::Approx((2.0 / 3 + 0.75) / 2));
    CHECK(s.scan_weighted_accuracy == doctest::Approx(5.0 / 7));
    CHECK(*s.per_category[0] == 0.5);
    CHECK(*s.per_category[1] == 0.75);
    CHECK_FALSE(s.per_category[2].has_value());
    CHECK_THROWS_AS(evaluate(std::vector<int>{0}, std::vector<int>{}), std::invalid_argument);
}

TEST_CASE("rotation sweep")
{
    const auto scans = toy_scans(6, 2, 4);
    auto idx = all_indices(scans.size());
    const std::span<const LabeledScan> view(scans);
    auto model = build_model<double>(toy_spec(), 9);
    auto curve = rotation_sweep(*model, view, idx, 45.0);
    REQUIRE(curve.size() == 9);
    CHECK(curve.front().degrees == 0.0);
    CHECK(curve.back().degrees == 360.0);
    CHECK(curve[2].shift == 16);
    CHECK(curve.front().accuracy == evaluate(*model, view, idx).total);
    CHECK(curve.back().accuracy == curve.front().accuracy);

    // Width 64 gives 2 pool5 columns: 180 degrees is a 32-pixel shift.
    const auto p0 = predict_probabilities(*model, view, idx, 64, 0);
    const auto p32 = predict_probabilities(*model, view, idx, 64, 32);
    for (std::size_t i = 0; i < p0.size(); ++i)
        for (std::size_t c = 0; c < 6; ++c) CHECK(std::abs(p0[i][c] - p32[i][c]) < 1e-12);
    CHECK(curve[4].accuracy == curve[0].accuracy);

    CHECK(rotation_sweep(*model, view, idx, 100.0).back().degrees == 360.0);
    CHECK_THROWS_AS(rotation_sweep(*model, view, idx, 0.0), std::invalid_argument);
}

TEST_CASE("cross-validation harness runs every fold")
{
    const auto scans = toy_scans(8, 2, 5);
    ExperimentConfig cfg;
    cfg.model = toy_spec();
    cfg.k = 2;
    cfg.train.lr = 0.01;
    cfg.train.batch_size = 8;
    cfg.train.max_epochs = 2;
    cfg.train.dropout = 0.0;
    cfg.fusion = FusionMode::softmax_average;
    int events = 0;
    auto result = run_cross_validation<float>(std::span<const LabeledScan>(scans), cfg,
                                              [&](const ProgressEvent&) { ++events; });
    REQUIRE(result.folds.size() == 2);
    CHECK(events == 2 * 2 * 2);
    for (const auto& f : result.folds) {
        CHECK(f.depth_only.has_value());
        CHECK(f.reflectance_only.has_value());
        CHECK(f.training.size() == 2);
        CHECK(f.evaluation.count == 8);
    }
    CHECK(result.confusion.total() == 16);

    cfg.fusion.reset();
    cfg.jobs = 2;
    auto parallel = run_cross_validation<float>(std::span<const LabeledScan>(scans), cfg);
    cfg.jobs = 1;
    auto serial = run_cross_validation<float>(std::span<const LabeledScan>(scans), cfg);
    CHECK(parallel.confusion == serial.confusion);
    CHECK(parallel.folds[1].training[0].history.back().train_loss ==
          serial.folds[1].training[0].history.back().train_loss);
}
