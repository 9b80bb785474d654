#include "ppc/training.hpp"

#include "ppc/ops.hpp"
#include "ppc/optim.hpp"
#include "ppc/system.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

namespace ppc {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b)
{
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(base) ^ a) ^ b);
}

// ---------------------------------------------------------------------------
// Folds

FoldPlan make_folds(std::span<const Category> labels, std::span<const int> location_sets, int k)
{
    if (labels.size() != location_sets.size()) throw std::invalid_argument("make_folds: labels and sets differ in length");
    if (k < 2) throw std::invalid_argument("make_folds: k must be at least 2");
    if (labels.empty()) throw std::invalid_argument("make_folds: empty dataset");

    // Sorted distinct set ids per category.
    std::map<Category, std::vector<int>> sets;
    for (std::size_t i = 0; i < labels.size(); ++i) sets[labels[i]].push_back(location_sets[i]);
    for (auto& [cat, ids] : sets) {
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        if (static_cast<int>(ids.size()) < k) {
            throw std::invalid_argument("make_folds: category " + std::string(category_name(cat)) + " has " +
                                        std::to_string(ids.size()) + " location sets, fewer than k = " +
                                        std::to_string(k));
        }
    }

    enum class Role { train, validation, test };
    FoldPlan plan;
    plan.k = k;
    for (int fold = 0; fold < k; ++fold) {
        std::map<std::pair<Category, int>, Role> role;
        for (const auto& [cat, ids] : sets) {
            const int m = static_cast<int>(ids.size());
            int non_test = 0;
            for (int p = 0; p < m; ++p) {
                const bool test = p % k == fold;
                role[{cat, ids[p]}] = test ? Role::test : Role::train;
                non_test += !test;
            }
            if (non_test >= 2) {
                for (int d = 1; d < m; ++d) {
                    const int q = (fold + d) % m;
                    if (q % k != fold) {
                        role[{cat, ids[q]}] = Role::validation;
                        break;
                    }
                }
            }
        }
        FoldSplit split;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            switch (role.at({labels[i], location_sets[i]})) {
            case Role::train: split.train.push_back(i); break;
            case Role::validation: split.validation.push_back(i); break;
            case Role::test: split.test.push_back(i); break;
            }
        }
        plan.folds.push_back(std::move(split));
    }
    return plan;
}

FoldPlan make_folds(std::span<const LabeledScan> scans, int k)
{
    std::vector<Category> labels;
    std::vector<int> sets;
    for (const auto& s : scans) {
        labels.push_back(s.label);
        sets.push_back(s.location_set);
    }
    return make_folds(labels, sets, k);
}

// ---------------------------------------------------------------------------
// Early stopping

EarlyStopping::EarlyStopping(int patience) : patience_(patience)
{
    if (patience < 1) throw std::invalid_argument("patience must be at least 1");
}

bool EarlyStopping::update(double loss)
{
    ++epochs_;
    if (best_epoch_ == 0 || loss < best_loss_) {
        best_loss_ = loss;
        best_epoch_ = epochs_;
        since_best_ = 0;
        return true;
    }
    ++since_best_;
    return false;
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::vector<std::span<const std::size_t>> split_batches(std::span<const std::size_t> order, std::size_t batch_size)
{
    std::vector<std::span<const std::size_t>> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const auto len = std::min(batch_size, order.size() - start);
        out.push_back(order.subspan(start, len));
    }
    // Batch norm needs two samples; fold a trailing singleton into the
    // previous batch.
    if (out.size() >= 2 && out.back().size() == 1) {
        const auto merged = out[out.size() - 2].size() + 1;
        const auto begin = order.size() - merged;
        out.pop_back();
        out.back() = order.subspan(begin, merged);
    }
    return out;
}

template <typename T>
InputBatch<T> augmented_batch(std::span<const LabeledScan> scans, std::span<const std::size_t> indices,
                              const AugmentConfig& augment, std::mt19937_64& rng)
{
    if (!augment.enable_flip && !augment.enable_shift) return make_batch<T>(scans, indices);
    std::vector<PanoramicImage> depth, refl;
    depth.reserve(indices.size());
    refl.reserve(indices.size());
    for (auto i : indices) {
        auto pair = sample_augmentation(ProjectedScan{scans[i].depth, scans[i].reflectance}, augment, rng);
        depth.push_back(std::move(pair.depth));
        refl.push_back(std::move(pair.reflectance));
    }
    std::vector<const PanoramicImage*> dp, rp;
    for (std::size_t j = 0; j < depth.size(); ++j) {
        dp.push_back(&depth[j]);
        rp.push_back(&refl[j]);
    }
    return {image_tensor<T>(dp), image_tensor<T>(rp)};
}

template <typename T>
InputBatch<T> shifted(InputBatch<T> batch, long shift)
{
    if (shift == 0) return batch;
    return {roll_columns(batch.depth, shift), roll_columns(batch.reflectance, shift)};
}

}  // namespace

template <typename T>
double evaluation_loss(Classifier<T>& model, std::span<const LabeledScan> scans, std::span<const std::size_t> indices,
                       std::size_t batch_size)
{
    require(!indices.empty(), "evaluation_loss: no scans");
    NoGradGuard no_grad;
    double total = 0;
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
        const auto labels = labels_of(scans, chunk);
        auto out = model.forward(make_batch<T>(scans, chunk), Mode::eval);
        auto ce = softmax_cross_entropy(out.logits, std::span<const int>(labels));
        total += static_cast<double>(ce.loss.item()) * static_cast<double>(chunk.size());
    }
    return total / static_cast<double>(indices.size());
}

template <typename T>
TrainResult train_model(Classifier<T>& model, std::span<const LabeledScan> scans, std::span<const std::size_t> train,
                        std::span<const std::size_t> val, const TrainConfig& cfg, const AugmentConfig& augment,
                        const EpochCallback& on_epoch)
{
    if (train.empty()) throw std::invalid_argument("train_model: empty training set");
    if (train.size() < 2) throw std::invalid_argument("train_model: batch norm needs at least two training scans");
    if (cfg.batch_size < 2 || cfg.max_epochs < 1) throw std::invalid_argument("train_model: invalid config");
    for (auto v : val) {
        if (std::find(train.begin(), train.end(), v) != train.end()) {
            throw std::invalid_argument("train_model: scan " + std::to_string(v) + " is in both train and validation");
        }
    }

    std::vector<Tensor<T>> params;
    for (const auto& p : model.parameters()) {
        if (p.tensor.requires_grad()) params.push_back(p.tensor);
    }
    require(!params.empty(), "train_model: model has no trainable parameters");
    Sgd<T> opt(params, SgdConfig{cfg.lr, cfg.momentum, cfg.weight_decay});

    EarlyStopping stopper(cfg.patience);
    TrainResult result;
    ModelState<T> best;
    std::vector<std::size_t> order(train.begin(), train.end());
    std::mt19937_64 augment_rng(derive_seed(cfg.seed, augment.rng_seed, 0xa0a0));

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(cfg.seed + static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0;
        std::size_t batch_no = 0;
        for (auto batch_idx : split_batches(order, cfg.batch_size)) {
            const auto labels = labels_of(scans, batch_idx);
            const auto batch = augmented_batch<T>(scans, batch_idx, augment, augment_rng);
            auto out = model.forward(batch, Mode::train, derive_seed(cfg.seed, epoch, batch_no++));
            auto ce = softmax_cross_entropy(out.logits, std::span<const int>(labels));
            backward(ce.loss);
            opt.step();
            loss_sum += static_cast<double>(ce.loss.item()) * static_cast<double>(batch_idx.size());
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.val_loss = val.empty() ? std::numeric_limits<double>::quiet_NaN()
                                   : evaluation_loss(model, scans, val, cfg.batch_size);
        rec.monitored = val.empty() ? rec.train_loss : rec.val_loss;
        rec.improved = std::isfinite(rec.monitored) ? stopper.update(rec.monitored)
                                                    : stopper.update(std::numeric_limits<double>::infinity());
        if (rec.improved) best = capture_state(model);
        result.history.push_back(rec);

        const bool keep_going = !on_epoch || on_epoch(rec);
        if (stopper.should_stop()) {
            result.stopped_early = true;
            break;
        }
        if (!keep_going) break;
    }
    restore_state(model, best);
    result.best_epoch = stopper.best_epoch();
    result.best_loss = stopper.best_loss();
    return result;
}

// ---------------------------------------------------------------------------
// Metrics

void ConfusionMatrix::add(int truth, int predicted)
{
    if (truth < 0 || truth >= kNumCategories || predicted < 0 || predicted >= kNumCategories) {
        throw std::out_of_range("confusion matrix index out of range");
    }
    ++counts[truth][predicted];
}

long ConfusionMatrix::total() const
{
    long t = 0;
    for (const auto& row : counts) t += std::accumulate(row.begin(), row.end(), 0L);
    return t;
}

long ConfusionMatrix::trace() const
{
    long t = 0;
    for (int i = 0; i < kNumCategories; ++i) t += counts[i][i];
    return t;
}

long ConfusionMatrix::row_total(int truth) const
{
    return std::accumulate(counts.at(truth).begin(), counts.at(truth).end(), 0L);
}

double ConfusionMatrix::accuracy() const
{
    const long t = total();
    return t == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(t);
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other)
{
    for (int i = 0; i < kNumCategories; ++i)
        for (int j = 0; j < kNumCategories; ++j) counts[i][j] += other.counts[i][j];
    return *this;
}

Evaluation evaluate(std::span<const int> truth, std::span<const int> predicted)
{
    if (truth.size() != predicted.size()) throw std::invalid_argument("evaluate: truth and predictions differ in length");
    Evaluation e;
    for (std::size_t i = 0; i < truth.size(); ++i) e.confusion.add(truth[i], predicted[i]);
    for (int c = 0; c < kNumCategories; ++c) {
        const long n = e.confusion.row_total(c);
        if (n > 0) e.per_category[c] = static_cast<double>(e.confusion.counts[c][c]) / static_cast<double>(n);
    }
    e.count = e.confusion.total();
    e.total = e.confusion.accuracy();
    return e;
}

template <typename T>
std::vector<std::vector<double>> predict_probabilities(Classifier<T>& model, std::span<const LabeledScan> scans,
                                                       std::span<const std::size_t> indices, std::size_t batch_size,
                                                       long shift)
{
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    if (idx.empty()) {
        idx.resize(scans.size());
        std::iota(idx.begin(), idx.end(), 0);
    }
    NoGradGuard no_grad;
    std::vector<std::vector<double>> out;
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        const std::span<const std::size_t> chunk(idx.data() + start, std::min(batch_size, idx.size() - start));
        auto fwd = model.forward(shifted(make_batch<T>(scans, chunk), shift), Mode::eval);
        const auto p = fwd.probabilities.data();
        const std::size_t c = fwd.probabilities.dim(1);
        for (std::size_t n = 0; n < chunk.size(); ++n) out.emplace_back(p.begin() + n * c, p.begin() + (n + 1) * c);
    }
    return out;
}

std::vector<int> argmax_each(const std::vector<std::vector<double>>& probabilities)
{
    std::vector<int> out;
    out.reserve(probabilities.size());
    for (const auto& row : probabilities) {
        out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
    return out;
}

template <typename T>
Evaluation evaluate(Classifier<T>& model, std::span<const LabeledScan> scans, std::span<const std::size_t> indices)
{
    const auto predicted = argmax_each(predict_probabilities(model, scans, indices));
    return evaluate(labels_of(scans, indices), predicted);
}

template <typename T>
Evaluation evaluate_softmax_average(Classifier<T>& depth_model, Classifier<T>& refl_model,
                                    std::span<const LabeledScan> scans, std::span<const std::size_t> indices)
{
    const auto p_d = predict_probabilities(depth_model, scans, indices);
    const auto p_r = predict_probabilities(refl_model, scans, indices);
    std::vector<int> predicted;
    for (std::size_t i = 0; i < p_d.size(); ++i) predicted.push_back(fuse_softmax_average(p_d[i], p_r[i]).label);
    return evaluate(labels_of(scans, indices), predicted);
}

std::vector<RotationPoint> rotation_grid(double step_degrees, int width)
{
    if (!(step_degrees > 0) || step_degrees > 360) throw std::invalid_argument("rotation step must be in (0, 360]");
    std::vector<RotationPoint> grid;
    const auto steps = static_cast<int>(std::floor(360.0 / step_degrees + 1e-9));
    for (int i = 0; i <= steps; ++i) {
        RotationPoint pt;
        pt.degrees = std::min(360.0, i * step_degrees);
        pt.shift = std::lround(pt.degrees / 360.0 * width);
        grid.push_back(pt);
    }
    if (grid.back().degrees < 360.0) grid.push_back({360.0, width, 0});
    return grid;
}

template <typename T>
std::vector<RotationPoint> rotation_sweep(Classifier<T>& model, std::span<const LabeledScan> scans,
                                          std::span<const std::size_t> indices, double step_degrees)
{
    require(!scans.empty(), "rotation_sweep: no scans");
    const auto truth = labels_of(scans, indices);
    auto curve = rotation_grid(step_degrees, scans[indices.empty() ? 0 : indices[0]].depth.width());
    for (auto& pt : curve) {
        pt.accuracy = evaluate(truth, argmax_each(predict_probabilities(model, scans, indices, 64, pt.shift))).total;
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Cross-validation

ModelSpec uni_modal_spec(ModelSpec base, InputKind input)
{
    base.input = input;
    base.input_channels = input == InputKind::both ? 2 : 1;
    return base;
}

ExperimentResult summarize(std::vector<FoldResult> folds)
{
    ExperimentResult r;
    r.folds = std::move(folds);
    if (r.folds.empty()) return r;
    std::array<double, kNumCategories> sums{};
    std::array<int, kNumCategories> present{};
    double fold_sum = 0;
    for (const auto& f : r.folds) {
        fold_sum += f.evaluation.total;
        r.confusion += f.evaluation.confusion;
        for (int c = 0; c < kNumCategories; ++c) {
            if (f.evaluation.per_category[c]) {
                sums[c] += *f.evaluation.per_category[c];
                ++present[c];
            }
        }
    }
    r.fold_weighted_accuracy = fold_sum / static_cast<double>(r.folds.size());
    r.scan_weighted_accuracy = r.confusion.accuracy();
    for (int c = 0; c < kNumCategories; ++c) {
        if (present[c] > 0) r.per_category[c] = sums[c] / present[c];
    }
    return r;
}

namespace {

template <typename T>
FoldResult run_fold(std::span<const LabeledScan> scans, const FoldSplit& split, int fold, const ExperimentConfig& cfg,
                    const ProgressCallback& progress)
{
    FoldResult out;
    out.fold = fold;
    ModelSpec spec = cfg.model;
    spec.dropout_rate = cfg.train.dropout;
    PlaceModel<T> model(spec, cfg.fusion, derive_seed(cfg.train.seed ^ 0x6d6f64656cull, static_cast<std::uint64_t>(fold)));

    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.train.seed, static_cast<std::uint64_t>(fold));
    typename PlaceModel<T>::Progress cb;
    if (progress) {
        cb = [&](const std::string& name, const EpochRecord& rec) {
            progress({fold, name == "model" ? system_name(model.spec(), cfg.fusion) : name, rec});
        };
    }
    out.training = model.fit(scans, split.train, split.validation, tc, cfg.augment, cfg.gating, cb);
    out.evaluation = model.evaluate(scans, split.test);
    if (cfg.fusion && (*cfg.fusion == FusionMode::softmax_average || *cfg.fusion == FusionMode::adaptive)) {
        out.depth_only = evaluate(model.network("depth"), scans, split.test);
        out.reflectance_only = evaluate(model.network("reflectance"), scans, split.test);
    }
    return out;
}

}  // namespace

template <typename T>
ExperimentResult run_cross_validation(std::span<const LabeledScan> scans, const ExperimentConfig& cfg,
                                      const ProgressCallback& progress)
{
    const auto plan = make_folds(scans, cfg.k);
    std::vector<int> folds = cfg.folds;
    if (folds.empty()) {
        folds.resize(static_cast<std::size_t>(cfg.k));
        std::iota(folds.begin(), folds.end(), 0);
    }
    for (int f : folds) {
        if (f < 0 || f >= cfg.k) throw std::invalid_argument("fold index " + std::to_string(f) + " out of range");
    }

    std::vector<FoldResult> results(folds.size());
    std::mutex progress_mutex;
    ProgressCallback locked;
    if (progress) {
        locked = [&](const ProgressEvent& e) {
            std::lock_guard lock(progress_mutex);
            progress(e);
        };
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < folds.size(); i = next++) {
            try {
                results[i] = run_fold<T>(scans, plan.folds[static_cast<std::size_t>(folds[i])], folds[i], cfg, locked);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const int jobs = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(folds.size())));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return summarize(std::move(results));
}

#define PPC_INSTANTIATE_TRAINING(T)                                                                                  \
    template TrainResult train_model(Classifier<T>&, std::span<const LabeledScan>, std::span<const std::size_t>,    \
                                     std::span<const std::size_t>, const TrainConfig&, const AugmentConfig&,        \
                                     const EpochCallback&);                                                          \
    template double evaluation_loss(Classifier<T>&, std::span<const LabeledScan>, std::span<const std::size_t>,     \
                                    std::size_t);                                                                    \
    template std::vector<std::vector<double>> predict_probabilities(                                                 \
        Classifier<T>&, std::span<const LabeledScan>, std::span<const std::size_t>, std::size_t, long);              \
    template Evaluation evaluate(Classifier<T>&, std::span<const LabeledScan>, std::span<const std::size_t>);        \
    template Evaluation evaluate_softmax_average(Classifier<T>&, Classifier<T>&, std::span<const LabeledScan>,       \
                                                 std::span<const std::size_t>);                                      \
    template std::vector<RotationPoint> rotation_sweep(Classifier<T>&, std::span<const LabeledScan>,                 \
                                                       std::span<const std::size_t>, double);                        \
    template ExperimentResult run_cross_validation<T>(std::span<const LabeledScan>, const ExperimentConfig&,         \
                                                      const ProgressCallback&);

PPC_INSTANTIATE_TRAINING(float)
PPC_INSTANTIATE_TRAINING(double)

}  // namespace ppc
