#pragma once

#include "ppc/augment.hpp"
#include "ppc/dataset.hpp"
#include "ppc/fusion.hpp"
#include "ppc/models.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ppc {

/// Deterministic child seed (splitmix64 mixing) so every component's
/// randomness derives from one top-level seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

// ---------------------------------------------------------------------------
// Folds

struct FoldSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

struct FoldPlan {
    int k = 0;
    std::vector<FoldSplit> folds;
};

/// Location-grouped k-fold split. Within each category the location sets are
/// sorted by id; fold i tests every set whose position p has p % k == i. The
/// first remaining set after the test sets (cyclically) becomes validation,
/// unless it would leave no training set, in which case validation is empty.
/// Throws std::invalid_argument if a category has fewer than k sets.
FoldPlan make_folds(std::span<const Category> labels, std::span<const int> location_sets, int k);
FoldPlan make_folds(std::span<const LabeledScan> scans, int k);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    double lr = 1e-4;
    double momentum = 0.9;
    std::size_t batch_size = 64;
    double weight_decay = 5e-4;
    double dropout = 0.5;
    int patience = 10;
    int max_epochs = 200;
    std::uint64_t seed = 0;
};

/// Tracks the best monitored loss and how long it has not improved.
class EarlyStopping {
public:
    explicit EarlyStopping(int patience);

    /// Records one epoch's loss; returns true if it is a new best.
    bool update(double loss);
    bool should_stop() const { return since_best_ >= patience_; }
    int best_epoch() const { return best_epoch_; }  // 1-based, 0 before any update
    double best_loss() const { return best_loss_; }
    int epochs_seen() const { return epochs_; }

private:
    int patience_;
    int epochs_ = 0;
    int best_epoch_ = 0;
    int since_best_ = 0;
    double best_loss_ = 0;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0;
    double val_loss = 0;      // NaN when there is no validation set
    double monitored = 0;     // the loss early stopping saw
    bool improved = false;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_loss = 0;
    bool stopped_early = false;
};

/// Per-epoch hook; return false to stop training.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Mini-batch momentum SGD with early stopping on validation loss (training
/// loss when `val` is empty). The model ends holding the best parameters.
template <typename T>
TrainResult train_model(Classifier<T>& model, std::span<const LabeledScan> scans, std::span<const std::size_t> train,
                        std::span<const std::size_t> val, const TrainConfig& cfg, const AugmentConfig& augment,
                        const EpochCallback& on_epoch = {});

/// Mean softmax cross-entropy in eval mode.
template <typename T>
double evaluation_loss(Classifier<T>& model, std::span<const LabeledScan> scans, std::span<const std::size_t> indices,
                       std::size_t batch_size = 64);

// ---------------------------------------------------------------------------
// Metrics

struct ConfusionMatrix {
    std::array<std::array<long, kNumCategories>, kNumCategories> counts{};  // [truth][prediction]

    void add(int truth, int predicted);
    long total() const;
    long trace() const;
    long row_total(int truth) const;
    double accuracy() const;
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;
};

struct Evaluation {
    // Absent categories (no test scans) have no value.
    std::array<std::optional<double>, kNumCategories> per_category{};
    double total = 0;
    long count = 0;
    ConfusionMatrix confusion;
};

Evaluation evaluate(std::span<const int> truth, std::span<const int> predicted);

/// Eval-mode class probabilities, one row per index.
template <typename T>
std::vector<std::vector<double>> predict_probabilities(Classifier<T>& model, std::span<const LabeledScan> scans,
                                                       std::span<const std::size_t> indices,
                                                       std::size_t batch_size = 64, long shift = 0);

std::vector<int> argmax_each(const std::vector<std::vector<double>>& probabilities);

template <typename T>
Evaluation evaluate(Classifier<T>& model, std::span<const LabeledScan> scans, std::span<const std::size_t> indices);

/// Softmax-average fusion of two uni-modal models.
template <typename T>
Evaluation evaluate_softmax_average(Classifier<T>& depth_model, Classifier<T>& refl_model,
                                    std::span<const LabeledScan> scans, std::span<const std::size_t> indices);

struct RotationPoint {
    double degrees = 0;
    long shift = 0;  // pixels
    double accuracy = 0;
};

/// Angles 0, step, 2*step, ... and a final 360, with the column shift
/// round(theta / 360 * width) of each. Accuracy is left at 0.
std::vector<RotationPoint> rotation_grid(double step_degrees, int width);

/// Accuracy with every test image rotated by 0, step, 2*step, ... 360 degrees.
/// The shift is round(theta / 360 * width) columns.
template <typename T>
std::vector<RotationPoint> rotation_sweep(Classifier<T>& model, std::span<const LabeledScan> scans,
                                          std::span<const std::size_t> indices, double step_degrees);

// ---------------------------------------------------------------------------
// Cross-validation

struct ExperimentConfig {
    ModelSpec model;                     // per-stream architecture
    std::optional<FusionMode> fusion;    // none: uni-modal on model.input
    int k = 10;
    std::vector<int> folds;              // subset of folds to run; empty means all
    TrainConfig train;
    AugmentConfig augment;
    GatingConfig gating;
    int jobs = 1;                        // folds trained concurrently
};

struct FoldResult {
    int fold = 0;
    Evaluation evaluation;                 // the configured model or fusion
    std::optional<Evaluation> depth_only;  // uni-modal components of avg/adaptive
    std::optional<Evaluation> reflectance_only;
    std::vector<TrainResult> training;     // one per trained network
};

struct ExperimentResult {
    std::vector<FoldResult> folds;
    double fold_weighted_accuracy = 0;  // mean of per-fold totals
    double scan_weighted_accuracy = 0;  // trace / total of the summed confusion
    std::array<std::optional<double>, kNumCategories> per_category{};  // mean over folds where present
    ConfusionMatrix confusion;
};

struct ProgressEvent {
    int fold = 0;
    std::string network;
    EpochRecord epoch;
};
using ProgressCallback = std::function<void(const ProgressEvent&)>;

template <typename T>
ExperimentResult run_cross_validation(std::span<const LabeledScan> scans, const ExperimentConfig& cfg,
                                      const ProgressCallback& progress = {});

/// Aggregates fold results into the summary fields.
ExperimentResult summarize(std::vector<FoldResult> folds);

/// Model spec for a single uni-modal network reading `input`.
ModelSpec uni_modal_spec(ModelSpec base, InputKind input);

}  // namespace ppc
