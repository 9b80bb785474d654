#include "CLI11.hpp"

#include "ppc/gradcam.hpp"
#include "ppc/synthetic.hpp"
#include "ppc/system.hpp"
#include "ppc/training.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#ifndef PPC_VERSION
#define PPC_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace ppc;

namespace {

// Bad flag combinations and unusable inputs.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NoPoints : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string g_command_line;

std::string fmt(double v)
{
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

std::string fmt_acc(double v)
{
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(6) << v;
    return ss.str();
}

std::map<std::string, std::string> base_manifest(const std::string& command)
{
    return {{"command", command}, {"command_line", g_command_line}, {"code_version", PPC_VERSION}};
}

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create directory " + dir.string());
    const auto probe = dir / ".ppc_write_test";
    std::ofstream out(probe);
    if (!out) throw std::runtime_error("directory is not writable: " + dir.string());
    out.close();
    fs::remove(probe, ec);
}

std::ofstream open_out(const fs::path& path)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

fs::path resolve_index(std::string data)
{
    if (data.empty()) {
        const char* env = std::getenv("PPC_DATA_DIR");
        if (!env || !*env) throw UsageError("no dataset given: pass --data or set PPC_DATA_DIR");
        data = env;
    }
    fs::path p(data);
    if (fs::is_directory(p)) p /= "index.csv";
    if (!fs::exists(p)) throw std::runtime_error("dataset index not found: " + p.string());
    return p;
}

// ---------------------------------------------------------------------------
// Shared flag groups

struct DataFlags {
    std::string data;
    int width = 384;
    int height = 32;

    void add(CLI::App& app)
    {
        app.add_option("--data", data, "Dataset index CSV or its directory (default $PPC_DATA_DIR)");
        app.add_option("--width", width, "Panorama width")->check(CLI::PositiveNumber);
        app.add_option("--height", height, "Panorama height")->check(CLI::PositiveNumber);
    }
    fs::path index() const { return resolve_index(data); }
    std::vector<LabeledScan> load() const { return load_dataset(index(), width, height); }
};

struct FoldFlags {
    int k = 10;
    std::optional<int> fold;

    void add(CLI::App& app, const char* what)
    {
        app.add_option("--k", k, "Number of location-grouped folds")->check(CLI::Range(2, 1000));
        app.add_option("--fold", fold, what)->check(CLI::NonNegativeNumber);
    }
    // Validation and test indices of the chosen fold, or everything.
    std::optional<FoldSplit> split(std::span<const LabeledScan> scans) const
    {
        if (!fold) return std::nullopt;
        if (*fold >= k) throw UsageError("--fold must be < --k");
        return make_folds(scans, k).folds[static_cast<std::size_t>(*fold)];
    }
};

struct ModelFlags {
    std::string model = "vgg-rwmp-hcc";
    std::string modality = "depth";
    std::string fusion;
    int width_divisor = 1;

    void add(CLI::App& app)
    {
        app.add_option("--model", model, "Architecture")
            ->check(CLI::IsMember({"vgg", "vgg-rwmp", "vgg-hcc", "vgg-rwmp-hcc"}))
            ->capture_default_str();
        app.add_option("--modality", modality, "Input modality")
            ->check(CLI::IsMember({"depth", "reflectance", "both"}))
            ->capture_default_str();
        app.add_option("--fusion", fusion, "Fusion strategy (needs --modality both)")
            ->check(CLI::IsMember({"avg", "adaptive", "early", "late"}));
        app.add_option("--width-divisor", width_divisor, "Divide every conv width by this")
            ->check(CLI::PositiveNumber);
    }

    ModelSpec spec(const DataFlags& data) const
    {
        ModelSpec s;
        s.use_rwmp = model.find("rwmp") != std::string::npos;
        s.use_hcc = model.find("hcc") != std::string::npos;
        s.width_divisor = width_divisor;
        s.input_width = data.width;
        s.input_height = data.height;
        s.input = parse_input_kind(modality);
        if (s.input == InputKind::both) s.input = InputKind::depth;
        return s;
    }
    std::optional<FusionMode> fusion_mode() const
    {
        if (!fusion.empty() && modality != "both") {
            throw UsageError("--fusion " + fusion + " needs --modality both (got --modality " + modality + ")");
        }
        if (fusion.empty() && modality == "both") throw UsageError("--modality both needs --fusion");
        if (fusion.empty()) return std::nullopt;
        return parse_fusion_mode(fusion);
    }
};

struct TrainFlags {
    TrainConfig train;
    bool no_flip = false;
    bool no_shift = false;
    int gating_epochs = GatingConfig{}.epochs;
    std::uint64_t seed = 0;

    void add(CLI::App& app)
    {
        app.add_option("--lr", train.lr, "Learning rate")->capture_default_str();
        app.add_option("--momentum", train.momentum, "SGD momentum")->capture_default_str();
        app.add_option("--batch", train.batch_size, "Mini-batch size")->capture_default_str();
        app.add_option("--weight-decay", train.weight_decay, "L2 weight decay")->capture_default_str();
        app.add_option("--dropout", train.dropout, "Dropout rate before fc2")->capture_default_str();
        app.add_option("--patience", train.patience, "Early-stopping patience (epochs)")->capture_default_str();
        app.add_option("--max-epochs", train.max_epochs, "Epoch cap")->capture_default_str();
        app.add_option("--gating-epochs", gating_epochs, "Gating network epochs (adaptive fusion)");
        app.add_flag("--no-flip", no_flip, "Disable horizontal-flip augmentation");
        app.add_flag("--no-shift", no_shift, "Disable circular-shift augmentation");
        app.add_option("--seed", seed, "Seed for all randomness")->capture_default_str();
    }

    // Component seeds, all derived from --seed.
    TrainConfig train_config() const
    {
        TrainConfig t = train;
        t.seed = derive_seed(seed, 2);
        return t;
    }
    AugmentConfig augment() const
    {
        AugmentConfig a;
        a.enable_flip = !no_flip;
        a.enable_shift = !no_shift;
        a.rng_seed = derive_seed(seed, 3);
        return a;
    }
    GatingConfig gating() const
    {
        GatingConfig g;
        g.epochs = gating_epochs;
        return g;
    }
    std::uint64_t model_seed() const { return derive_seed(seed, 1); }

    void describe(std::map<std::string, std::string>& kv) const
    {
        kv["seed"] = std::to_string(seed);
        kv["lr"] = fmt(train.lr);
        kv["momentum"] = fmt(train.momentum);
        kv["batch"] = std::to_string(train.batch_size);
        kv["weight_decay"] = fmt(train.weight_decay);
        kv["dropout"] = fmt(train.dropout);
        kv["patience"] = std::to_string(train.patience);
        kv["max_epochs"] = std::to_string(train.max_epochs);
        kv["gating_epochs"] = std::to_string(gating_epochs);
        kv["flip"] = no_flip ? "0" : "1";
        kv["shift"] = no_shift ? "0" : "1";
    }
};

void write_evaluation(const fs::path& dir, const Evaluation& ev)
{
    auto metrics = open_out(dir / "metrics.csv");
    metrics << "category,accuracy,count\n";
    for (int c = 0; c < kNumCategories; ++c) {
        metrics << category_name(static_cast<Category>(c)) << ','
                << (ev.per_category[c] ? fmt_acc(*ev.per_category[c]) : "") << ','
                << ev.confusion.row_total(c) << '\n';
    }
    metrics << "total," << fmt_acc(ev.total) << ',' << ev.count << '\n';
}

void write_confusion(const fs::path& path, const ConfusionMatrix& m)
{
    auto out = open_out(path);
    out << "truth\\predicted";
    for (auto name : kCategoryNames) out << ',' << name;
    out << '\n';
    for (int t = 0; t < kNumCategories; ++t) {
        out << kCategoryNames[static_cast<std::size_t>(t)];
        for (int p = 0; p < kNumCategories; ++p) out << ',' << m.counts[t][p];
        out << '\n';
    }
}

void print_epoch(bool quiet, const std::string& prefix, const EpochRecord& r)
{
    if (quiet) return;
    std::cerr << prefix << "epoch " << r.epoch << " train_loss " << fmt_acc(r.train_loss) << " val_loss "
              << fmt_acc(r.val_loss) << (r.improved ? " *" : "") << '\n';
}

// ---------------------------------------------------------------------------
// Commands

struct ConvertArgs {
    std::vector<std::string> inputs;
    std::string out;
    int width = 384;
    int height = 32;
};

int run_convert(const ConvertArgs& a)
{
    ensure_dir(a.out);
    for (const auto& in : a.inputs) {
        const fs::path path(in);
        if (!fs::exists(path)) throw std::runtime_error("no such file: " + in);
        if (fs::file_size(path) == 0) throw NoPoints(in + ": no points");
        PointCloud cloud;
        try {
            cloud = read_point_cloud_csv(path);
        } catch (const EmptyCloudError&) {
            throw NoPoints(in + ": no points");
        } catch (const std::runtime_error& e) {
            throw std::runtime_error(in + ": " + e.what());
        }
        if (cloud.points.empty()) throw NoPoints(in + ": no points");
        const int width = a.width > 0 ? a.width : cloud.meta.points_per_rev;
        const int height = a.height > 0 ? a.height : cloud.meta.n_channels;
        const auto scan = project_resampled(cloud, width, height);
        const auto stem = fs::path(a.out) / path.stem();
        write_panorama(stem.string() + ".depth.pano", scan.depth);
        write_panorama(stem.string() + ".reflectance.pano", scan.reflectance);
        std::cout << stem.string() << ".{depth,reflectance}.pano\n";
    }
    return 0;
}

struct SynthArgs {
    int per_category = 20;
    int sets = 5;
    std::uint64_t seed = 0;
    std::string out;
    int width = 384;
    int height = 32;
    int jobs = 1;
    bool clouds = false;
};

int run_synth(const SynthArgs& a)
{
    ensure_dir(a.out);
    std::vector<IndexEntry> index;
    const fs::path root(a.out);
    for (auto name : kCategoryNames) ensure_dir(root / std::string(name));
    const int per_category = a.per_category * a.sets;
    const auto scans = generate_dataset(per_category, a.sets, a.seed, a.width, a.height, a.jobs);
    for (std::size_t k = 0; k < scans.size(); ++k) {
        const auto& s = scans[k];
        const auto i = k % static_cast<std::size_t>(per_category);
        std::ostringstream stem;
        stem << category_name(s.label) << "/set" << std::setw(2) << std::setfill('0') << s.location_set << "_"
             << std::setw(4) << i;
        write_scan(root / stem.str(), s);
        index.push_back({stem.str(), s.label, s.location_set});
        if (a.clouds) {
            const auto scene = generate_scene(s.label, scene_seed(a.seed, s.label, static_cast<int>(i)),
                                              location_style(a.seed, s.label, s.location_set));
            write_point_cloud_csv(root / (stem.str() + ".csv"), scene.cloud);
        }
    }
    write_index(root / "index.csv", index);
    auto kv = base_manifest("synth");
    kv["per_category_per_set"] = std::to_string(a.per_category);
    kv["sets"] = std::to_string(a.sets);
    kv["seed"] = std::to_string(a.seed);
    kv["width"] = std::to_string(a.width);
    kv["height"] = std::to_string(a.height);
    kv["recipe_version"] = std::to_string(kRecipeVersion);
    kv["scans"] = std::to_string(scans.size());
    write_manifest(root / "manifest.txt", kv);
    std::cout << scans.size() << " scans indexed in " << (root / "index.csv").string() << '\n';
    return 0;
}

struct TrainArgs {
    DataFlags data;
    ModelFlags model;
    TrainFlags train;
    FoldFlags folds;
    std::string out;
    bool quiet = false;
};

int run_train(const TrainArgs& a)
{
    const auto fusion = a.model.fusion_mode();
    ensure_dir(a.out);
    const auto scans = a.data.load();
    const std::span<const LabeledScan> view(scans);
    std::vector<std::size_t> train_idx, val_idx;
    if (auto split = a.folds.split(view)) {
        train_idx = split->train;
        val_idx = split->validation;
    } else {
        for (std::size_t i = 0; i < scans.size(); ++i) train_idx.push_back(i);
    }
    ModelSpec spec = a.model.spec(a.data);
    spec.dropout_rate = a.train.train.dropout;
    PlaceModel<float> model(spec, fusion, a.train.model_seed());
    auto history = open_out(fs::path(a.out) / "history.csv");
    history << "network,epoch,train_loss,val_loss,monitored,improved\n";
    model.fit(view, train_idx, val_idx, a.train.train_config(), a.train.augment(), a.train.gating(),
              [&](const std::string& net, const EpochRecord& r) {
                  history << net << ',' << r.epoch << ',' << fmt(r.train_loss) << ',' << fmt(r.val_loss) << ','
                          << fmt(r.monitored) << ',' << (r.improved ? 1 : 0) << '\n';
                  print_epoch(a.quiet, net + " ", r);
              });

    auto kv = base_manifest("train");
    a.train.describe(kv);
    kv["data"] = fs::absolute(a.data.index()).string();
    kv["model"] = a.model.model;
    kv["modality"] = a.model.modality;
    kv["train_scans"] = std::to_string(train_idx.size());
    kv["val_scans"] = std::to_string(val_idx.size());
    if (a.folds.fold) {
        kv["k"] = std::to_string(a.folds.k);
        kv["fold"] = std::to_string(*a.folds.fold);
    }
    model.save(a.out, kv);
    const auto ev = model.evaluate(view, train_idx);
    std::cout << "train accuracy " << fmt_acc(ev.total) << " on " << ev.count << " scans\n";
    return 0;
}

struct EvalArgs {
    DataFlags data;
    FoldFlags folds;
    std::string checkpoint;
    std::string out;
};

std::vector<std::size_t> eval_indices(const FoldFlags& folds, std::span<const LabeledScan> scans)
{
    if (auto split = folds.split(scans)) return split->test;
    std::vector<std::size_t> idx(scans.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
}

int run_eval(const EvalArgs& a)
{
    auto model = PlaceModel<float>::load(a.checkpoint);
    const auto scans = a.data.load();
    const auto idx = eval_indices(a.folds, scans);
    const auto ev = model.evaluate(scans, idx);
    ensure_dir(a.out);
    write_evaluation(a.out, ev);
    write_confusion(fs::path(a.out) / "confusion.csv", ev.confusion);
    auto kv = base_manifest("eval");
    kv["checkpoint"] = fs::absolute(a.checkpoint).string();
    kv["data"] = fs::absolute(a.data.index()).string();
    kv["scans"] = std::to_string(idx.size());
    kv["accuracy"] = fmt(ev.total);
    if (a.folds.fold) {
        kv["k"] = std::to_string(a.folds.k);
        kv["fold"] = std::to_string(*a.folds.fold);
    }
    write_manifest(fs::path(a.out) / "manifest.txt", kv);
    std::cout << "accuracy " << fmt_acc(ev.total) << " on " << ev.count << " scans\n";
    return 0;
}

struct CrossvalArgs {
    DataFlags data;
    ModelFlags model;
    TrainFlags train;
    int k = 10;
    std::vector<int> folds;
    int jobs = 1;
    std::string out;
    bool quiet = false;
};

int run_crossval(const CrossvalArgs& a)
{
    ExperimentConfig cfg;
    cfg.fusion = a.model.fusion_mode();
    cfg.model = a.model.spec(a.data);
    cfg.k = a.k;
    cfg.folds = a.folds;
    cfg.train = a.train.train_config();
    cfg.augment = a.train.augment();
    cfg.gating = a.train.gating();
    cfg.jobs = a.jobs;
    for (int f : a.folds) {
        if (f >= a.k) throw UsageError("--folds entries must be < --k");
    }
    ensure_dir(a.out);
    const auto scans = a.data.load();
    const auto result = run_cross_validation<float>(scans, cfg, [&](const ProgressEvent& e) {
        print_epoch(a.quiet, "fold " + std::to_string(e.fold) + " " + e.network + " ", e.epoch);
    });

    const bool components = result.folds.front().depth_only.has_value();
    auto csv = open_out(fs::path(a.out) / "folds.csv");
    csv << "fold,accuracy,count";
    for (auto name : kCategoryNames) csv << ',' << name;
    if (components) csv << ",depth_accuracy,reflectance_accuracy";
    csv << '\n';
    double depth_sum = 0, refl_sum = 0;
    for (const auto& f : result.folds) {
        csv << f.fold << ',' << fmt_acc(f.evaluation.total) << ',' << f.evaluation.count;
        for (const auto& c : f.evaluation.per_category) csv << ',' << (c ? fmt_acc(*c) : "");
        if (components) {
            csv << ',' << fmt_acc(f.depth_only->total) << ',' << fmt_acc(f.reflectance_only->total);
            depth_sum += f.depth_only->total;
            refl_sum += f.reflectance_only->total;
        }
        csv << '\n';
    }
    const auto n = static_cast<double>(result.folds.size());
    csv << "mean," << fmt_acc(result.fold_weighted_accuracy) << ',' << result.confusion.total();
    for (const auto& c : result.per_category) csv << ',' << (c ? fmt_acc(*c) : "");
    if (components) csv << ',' << fmt_acc(depth_sum / n) << ',' << fmt_acc(refl_sum / n);
    csv << '\n';
    write_confusion(fs::path(a.out) / "confusion.csv", result.confusion);

    auto kv = base_manifest("crossval");
    a.train.describe(kv);
    kv["data"] = fs::absolute(a.data.index()).string();
    kv["model"] = a.model.model;
    kv["modality"] = a.model.modality;
    kv["fusion"] = a.model.fusion.empty() ? "none" : a.model.fusion;
    kv["width_divisor"] = std::to_string(a.model.width_divisor);
    kv["k"] = std::to_string(a.k);
    kv["jobs"] = std::to_string(a.jobs);
    kv["fold_weighted_accuracy"] = fmt(result.fold_weighted_accuracy);
    kv["scan_weighted_accuracy"] = fmt(result.scan_weighted_accuracy);
    write_manifest(fs::path(a.out) / "manifest.txt", kv);
    std::cout << "mean accuracy " << fmt_acc(result.fold_weighted_accuracy) << " over " << result.folds.size()
              << " folds (scan-weighted " << fmt_acc(result.scan_weighted_accuracy) << ")\n";
    return 0;
}

struct GradcamArgs {
    DataFlags data;
    FoldFlags folds;
    std::string checkpoint;
    std::string category = "all";
    std::string network;
    int stream = 0;
    std::string out;
};

int run_gradcam(const GradcamArgs& a)
{
    auto model = PlaceModel<float>::load(a.checkpoint);
    std::string net = a.network;
    if (net.empty()) net = model.networks().front().first;
    auto& classifier = model.network(net);
    const auto scans = a.data.load();
    const auto idx = eval_indices(a.folds, scans);
    ensure_dir(a.out);
    std::vector<Category> targets;
    if (a.category == "all") {
        for (int c = 0; c < kNumCategories; ++c) targets.push_back(static_cast<Category>(c));
    } else if (auto c = parse_category(a.category)) {
        targets.push_back(*c);
    } else {
        throw UsageError("unknown category '" + a.category + "'");
    }
    int written = 0;
    for (auto c : targets) {
        try {
            const auto map = average_cam<float>(classifier, scans, idx, static_cast<int>(c), a.stream);
            const auto stem = fs::path(a.out) / std::string(category_name(c));
            write_cam_pano(stem.string() + ".pano", map);
            write_pgm(stem.string() + ".pgm", map.upsampled);
            ++written;
        } catch (const std::runtime_error& e) {
            if (targets.size() == 1) throw;
            std::cerr << "skipping " << category_name(c) << ": " << e.what() << '\n';
        }
    }
    auto kv = base_manifest("gradcam");
    kv["checkpoint"] = fs::absolute(a.checkpoint).string();
    kv["data"] = fs::absolute(a.data.index()).string();
    kv["network"] = net;
    kv["stream"] = std::to_string(a.stream);
    kv["category"] = a.category;
    kv["maps"] = std::to_string(written);
    write_manifest(fs::path(a.out) / "manifest.txt", kv);
    std::cout << written << " maps written to " << a.out << '\n';
    return 0;
}

struct RotsweepArgs {
    DataFlags data;
    FoldFlags folds;
    std::string checkpoint;
    double step = 10;
    std::string out;
};

int run_rotsweep(const RotsweepArgs& a)
{
    auto model = PlaceModel<float>::load(a.checkpoint);
    const auto scans = a.data.load();
    const auto idx = eval_indices(a.folds, scans);
    const auto curve = model.rotation_sweep(scans, idx, a.step);
    const fs::path out(a.out);
    if (out.has_parent_path()) ensure_dir(out.parent_path());
    auto csv = open_out(out);
    csv << "angle,accuracy\n";
    for (const auto& pt : curve) csv << fmt(pt.degrees) << ',' << fmt_acc(pt.accuracy) << '\n';
    auto kv = base_manifest("rotsweep");
    kv["checkpoint"] = fs::absolute(a.checkpoint).string();
    kv["data"] = fs::absolute(a.data.index()).string();
    kv["step"] = fmt(a.step);
    write_manifest(out.string() + ".manifest.txt", kv);
    std::cout << curve.size() << " angles written to " << a.out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    for (int i = 0; i < argc; ++i) g_command_line += (i ? " " : "") + std::string(argv[i]);

    CLI::App app{"LiDAR panoramic place categorization"};
    app.set_version_flag("--version", std::string(PPC_VERSION));
    app.require_subcommand(1);
    std::function<int()> action;

    ConvertArgs convert;
    auto* c = app.add_subcommand("convert", "Project point-cloud CSVs to depth and reflectance panoramas");
    c->add_option("inputs", convert.inputs, "Point-cloud CSV files")->required()->check(CLI::ExistingFile);
    c->add_option("-o,--out", convert.out, "Output directory")->required();
    c->add_option("--width", convert.width, "Output width (0: native)")->capture_default_str();
    c->add_option("--height", convert.height, "Output height (0: native)")->capture_default_str();
    c->callback([&] { action = [&] { return run_convert(convert); }; });

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a labeled synthetic dataset");
    s->add_option("--per-category", synth.per_category, "Scans per category in each location set")->check(CLI::PositiveNumber);
    s->add_option("--sets", synth.sets, "Location sets")->check(CLI::Range(2, 10000));
    s->add_option("--seed", synth.seed, "Seed");
    s->add_option("-o,--out", synth.out, "Output directory")->required();
    s->add_option("--width", synth.width, "Panorama width")->check(CLI::PositiveNumber);
    s->add_option("--height", synth.height, "Panorama height")->check(CLI::PositiveNumber);
    s->add_option("--jobs", synth.jobs, "Generator threads")->check(CLI::PositiveNumber);
    s->add_flag("--clouds", synth.clouds, "Also write each scan's point-cloud CSV");
    s->callback([&] { action = [&] { return run_synth(synth); }; });

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train a model and save a checkpoint directory");
    train.data.add(*t);
    train.model.add(*t);
    train.train.add(*t);
    train.folds.add(*t, "Train on this fold's training sets (validation from the plan); default all scans");
    t->add_option("-o,--out", train.out, "Checkpoint directory")->required();
    t->add_flag("-q,--quiet", train.quiet, "No per-epoch progress");
    t->callback([&] { action = [&] { return run_train(train); }; });

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval.data.add(*e);
    eval.folds.add(*e, "Evaluate on this fold's test sets; default all scans");
    e->add_option("--checkpoint", eval.checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    e->add_option("-o,--out", eval.out, "Output directory")->required();
    e->callback([&] { action = [&] { return run_eval(eval); }; });

    CrossvalArgs cv;
    auto* x = app.add_subcommand("crossval", "Location-grouped k-fold cross-validation");
    cv.data.add(*x);
    cv.model.add(*x);
    cv.train.add(*x);
    x->add_option("--k", cv.k, "Number of folds")->check(CLI::Range(2, 1000))->capture_default_str();
    x->add_option("--folds", cv.folds, "Run only these folds")->check(CLI::NonNegativeNumber)->delimiter(',');
    x->add_option("--jobs", cv.jobs, "Folds trained concurrently")->check(CLI::PositiveNumber)->capture_default_str();
    x->add_option("-o,--out", cv.out, "Output directory")->required();
    x->add_flag("-q,--quiet", cv.quiet, "No per-epoch progress");
    x->callback([&] { action = [&] { return run_crossval(cv); }; });

    GradcamArgs gc;
    auto* g = app.add_subcommand("gradcam", "Per-category averaged Grad-CAM maps");
    gc.data.add(*g);
    gc.folds.add(*g, "Use this fold's test sets; default all scans");
    g->add_option("--checkpoint", gc.checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    g->add_option("--class", gc.category, "Category name or 'all'")->capture_default_str();
    g->add_option("--network", gc.network, "Member network: model, depth or reflectance");
    g->add_option("--stream", gc.stream, "Conv stream of a late-fusion model (0 depth, 1 reflectance)")
        ->check(CLI::Range(0, 1));
    g->add_option("-o,--out", gc.out, "Output directory")->required();
    g->callback([&] { action = [&] { return run_gradcam(gc); }; });

    RotsweepArgs rs;
    auto* r = app.add_subcommand("rotsweep", "Accuracy under horizontal rotation of the test scans");
    rs.data.add(*r);
    rs.folds.add(*r, "Use this fold's test sets; default all scans");
    r->add_option("--checkpoint", rs.checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    r->add_option("--step", rs.step, "Angle step in degrees")->check(CLI::Range(1e-6, 360.0))->capture_default_str();
    r->add_option("-o,--out", rs.out, "Output CSV (angle,accuracy)")->required();
    r->callback([&] { action = [&] { return run_rotsweep(rs); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForVersion& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        app.exit(ex);
        return 2;
    }
    try {
        return action();
    } catch (const UsageError& ex) {
        std::cerr << "usage error: " << ex.what() << '\n';
        return 2;
    } catch (const NoPoints& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 2;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    }
}
