#include "ppc/models.hpp"

#include "ppc/ops.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

namespace ppc {

std::array<int, 8> ModelSpec::conv_widths() const
{
    std::array<int, 8> w{64, 128, 256, 256, 512, 512, 512, 512};
    for (auto& v : w) v = std::max(1, v / width_divisor);
    return w;
}

std::size_t ModelSpec::stream_features() const
{
    const auto c5 = static_cast<std::size_t>(conv_widths()[7]);
    const auto h5 = static_cast<std::size_t>(pool5_height());
    return use_rwmp ? c5 * h5 : c5 * h5 * static_cast<std::size_t>(pool5_width());
}

void ModelSpec::validate() const
{
    require(input_channels == (input == InputKind::both ? 2 : 1),
            "ModelSpec: input_channels must be 2 for stacked input and 1 otherwise");
    require(num_classes >= 2 && fc_hidden >= 1 && width_divisor >= 1, "ModelSpec: invalid sizes");
    require(dropout_rate >= 0 && dropout_rate < 1, "ModelSpec: dropout rate must be in [0, 1)");
    require(input_height >= 32 && input_height % 32 == 0 && input_width >= 32 && input_width % 32 == 0,
            "ModelSpec: input size must be a positive multiple of 32 in both dimensions");
}

namespace {

template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng)
{
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor<T>(std::move(shape), std::move(v), true);
}

}  // namespace

// ---------------------------------------------------------------------------
// Classifier

template <typename T>
typename Classifier<T>::Output Classifier<T>::forward(const InputBatch<T>& batch, Mode mode, std::uint64_t dropout_seed)
{
    Output out;
    out.pool5 = features(batch, mode);
    out.logits = head(out.pool5, mode, dropout_seed);
    NoGradGuard no_grad;
    out.probabilities = softmax(out.logits.detach());
    return out;
}

template <typename T>
void Classifier<T>::set_frozen(bool frozen)
{
    for (auto& p : parameters()) p.tensor.set_requires_grad(!frozen);
}

template <typename T>
bool Classifier<T>::frozen() const
{
    for (const auto& p : parameters()) {
        if (p.tensor.requires_grad()) return false;
    }
    return true;
}

template <typename T>
std::size_t Classifier<T>::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
}

// ---------------------------------------------------------------------------
// ConvStack

template <typename T>
ConvStack<T>::ConvStack(const ModelSpec& spec, int in_channels, std::mt19937_64& rng, std::string prefix)
    : padding_(spec.padding()), input_height_(spec.input_height), input_width_(spec.input_width)
{
    static constexpr const char* kNames[8] = {"conv1",   "conv2",   "conv3_1", "conv3_2",
                                              "conv4_1", "conv4_2", "conv5_1", "conv5_2"};
    static constexpr bool kPoolAfter[8] = {true, true, false, true, false, true, false, true};
    const auto widths = spec.conv_widths();
    std::size_t c_in = static_cast<std::size_t>(in_channels);
    for (int i = 0; i < 8; ++i) {
        const auto c_out = static_cast<std::size_t>(widths[i]);
        Conv conv;
        conv.name = prefix + kNames[i];
        conv.weight = he_normal<T>({c_out, c_in, 3, 3}, c_in * 9, rng);
        conv.bias = Tensor<T>::zeros({c_out}, true);
        conv.gamma = Tensor<T>::full({c_out}, T(1), true);
        conv.beta = Tensor<T>::zeros({c_out}, true);
        conv.bn = BatchNormState<T>(c_out);
        conv.pool_after = kPoolAfter[i];
        convs_.push_back(std::move(conv));
        c_in = c_out;
    }
}

template <typename T>
Tensor<T> ConvStack<T>::forward(const Tensor<T>& x, Mode mode)
{
    require(x.rank() == 4 && x.dim(1) == convs_.front().weight.dim(1),
            "conv stack expects [N, " + std::to_string(convs_.front().weight.dim(1)) + ", H, W], got " +
                shape_str(x.shape()));
    require(x.dim(2) == static_cast<std::size_t>(input_height_) && x.dim(3) == static_cast<std::size_t>(input_width_),
            "conv stack built for " + std::to_string(input_height_) + "x" + std::to_string(input_width_) +
                " input, got " + shape_str(x.shape()));
    Tensor<T> h = x;
    for (auto& conv : convs_) {
        h = conv2d(h, conv.weight, conv.bias, padding_);
        h = batch_norm(h, conv.gamma, conv.beta, conv.bn, mode);
        h = relu(h);
        if (conv.pool_after) h = max_pool_2x2(h);
    }
    return h;
}

template <typename T>
void ConvStack<T>::collect(std::vector<Parameter<T>>& params) const
{
    for (const auto& c : convs_) {
        params.push_back({c.name + ".weight", c.weight});
        params.push_back({c.name + ".bias", c.bias});
        params.push_back({c.name + ".bn.gamma", c.gamma});
        params.push_back({c.name + ".bn.beta", c.beta});
    }
}

template <typename T>
void ConvStack<T>::collect(std::vector<Buffer<T>>& buffers)
{
    for (auto& c : convs_) {
        buffers.push_back({c.name + ".bn.running_mean", &c.bn.running_mean, &c.bn.updated});
        buffers.push_back({c.name + ".bn.running_var", &c.bn.running_var, &c.bn.updated});
    }
}

// ---------------------------------------------------------------------------
// ClassifierHead

template <typename T>
ClassifierHead<T>::ClassifierHead(const ModelSpec& spec, std::size_t in_features, std::mt19937_64& rng)
    : use_rwmp_(spec.use_rwmp), dropout_rate_(spec.dropout_rate), in_features_(in_features)
{
    const auto hidden = static_cast<std::size_t>(spec.fc_hidden);
    const auto classes = static_cast<std::size_t>(spec.num_classes);
    fc1_weight_ = he_normal<T>({hidden, in_features}, in_features, rng);
    fc1_bias_ = Tensor<T>::zeros({hidden}, true);
    bn_gamma_ = Tensor<T>::full({hidden}, T(1), true);
    bn_beta_ = Tensor<T>::zeros({hidden}, true);
    bn_ = BatchNormState<T>(hidden);
    fc2_weight_ = he_normal<T>({classes, hidden}, hidden, rng);
    fc2_bias_ = Tensor<T>::zeros({classes}, true);
}

template <typename T>
Tensor<T> ClassifierHead<T>::forward(const std::vector<Tensor<T>>& pool5, Mode mode, std::uint64_t dropout_seed)
{
    require(!pool5.empty(), "classifier head needs at least one stream");
    std::vector<Tensor<T>> parts;
    for (const auto& p : pool5) {
        parts.push_back(flatten(use_rwmp_ ? row_wise_max_pool(p) : p));
    }
    Tensor<T> f = parts.size() == 1 ? parts.front() : concat_features(parts);
    require(f.dim(1) == in_features_, "fc1 expects " + std::to_string(in_features_) + " features, got " +
                                          std::to_string(f.dim(1)));
    auto h = fully_connected(f, fc1_weight_, fc1_bias_);
    h = batch_norm(h, bn_gamma_, bn_beta_, bn_, mode);
    h = relu(h);
    h = dropout(h, dropout_rate_, mode, dropout_seed);
    return fully_connected(h, fc2_weight_, fc2_bias_);
}

template <typename T>
void ClassifierHead<T>::collect(std::vector<Parameter<T>>& params) const
{
    params.push_back({"fc1.weight", fc1_weight_});
    params.push_back({"fc1.bias", fc1_bias_});
    params.push_back({"fc1.bn.gamma", bn_gamma_});
    params.push_back({"fc1.bn.beta", bn_beta_});
    params.push_back({"fc2.weight", fc2_weight_});
    params.push_back({"fc2.bias", fc2_bias_});
}

template <typename T>
void ClassifierHead<T>::collect(std::vector<Buffer<T>>& buffers)
{
    buffers.push_back({"fc1.bn.running_mean", &bn_.running_mean, &bn_.updated});
    buffers.push_back({"fc1.bn.running_var", &bn_.running_var, &bn_.updated});
}

// ---------------------------------------------------------------------------
// Network

template <typename T>
Network<T>::Network(const ModelSpec& spec, std::uint64_t seed)
    : Network(detail::ModelInit(spec, seed))
{
}

template <typename T>
Network<T>::Network(detail::ModelInit&& init)
    : spec_(init.spec),
      stack_(init.spec, init.spec.input_channels, init.rng, ""),
      head_(init.spec, init.spec.stream_features(), init.rng)
{
}

template <typename T>
std::vector<Tensor<T>> Network<T>::features(const InputBatch<T>& batch, Mode mode)
{
    Tensor<T> x;
    switch (spec_.input) {
    case InputKind::depth:
        require(batch.depth.defined(), "depth model needs a depth batch");
        x = batch.depth;
        break;
    case InputKind::reflectance:
        require(batch.reflectance.defined(), "reflectance model needs a reflectance batch");
        x = batch.reflectance;
        break;
    case InputKind::both:
        require(batch.depth.defined() && batch.reflectance.defined(), "stacked model needs both modalities");
        x = concat_channels<T>({batch.depth, batch.reflectance});
        break;
    }
    return {stack_.forward(x, mode)};
}

template <typename T>
Tensor<T> Network<T>::head(const std::vector<Tensor<T>>& pool5, Mode mode, std::uint64_t dropout_seed)
{
    require(pool5.size() == 1, "single-stream head takes one pool5 tensor");
    return head_.forward(pool5, mode, dropout_seed);
}

template <typename T>
std::vector<Parameter<T>> Network<T>::parameters() const
{
    std::vector<Parameter<T>> p;
    stack_.collect(p);
    head_.collect(p);
    return p;
}

template <typename T>
std::vector<Buffer<T>> Network<T>::buffers()
{
    std::vector<Buffer<T>> b;
    stack_.collect(b);
    head_.collect(b);
    return b;
}

// ---------------------------------------------------------------------------
// LateFusionNetwork

template <typename T>
LateFusionNetwork<T>::LateFusionNetwork(const ModelSpec& stream_spec, std::uint64_t seed)
    : LateFusionNetwork(detail::ModelInit(stream_spec, seed))
{
}

template <typename T>
LateFusionNetwork<T>::LateFusionNetwork(detail::ModelInit&& init)
    : spec_(init.spec),
      depth_stack_(init.spec, 1, init.rng, "depth."),
      refl_stack_(init.spec, 1, init.rng, "reflectance."),
      head_(init.spec, 2 * init.spec.stream_features(), init.rng)
{
    require(init.spec.input_channels == 1, "late fusion streams are single-channel");
}

template <typename T>
std::vector<Tensor<T>> LateFusionNetwork<T>::features(const InputBatch<T>& batch, Mode mode)
{
    require(batch.depth.defined() && batch.reflectance.defined(), "late fusion needs both modalities");
    auto d = depth_stack_.forward(batch.depth, mode);
    auto r = refl_stack_.forward(batch.reflectance, mode);
    require(d.shape() == r.shape(), "late fusion streams produced different pool5 shapes");
    return {d, r};
}

template <typename T>
Tensor<T> LateFusionNetwork<T>::head(const std::vector<Tensor<T>>& pool5, Mode mode, std::uint64_t dropout_seed)
{
    require(pool5.size() == 2, "late fusion head takes two pool5 tensors");
    require(pool5[0].shape() == pool5[1].shape(), "late fusion streams have mismatched output sizes");
    return head_.forward(pool5, mode, dropout_seed);
}

template <typename T>
std::vector<Parameter<T>> LateFusionNetwork<T>::parameters() const
{
    std::vector<Parameter<T>> p;
    depth_stack_.collect(p);
    refl_stack_.collect(p);
    head_.collect(p);
    return p;
}

template <typename T>
std::vector<Buffer<T>> LateFusionNetwork<T>::buffers()
{
    std::vector<Buffer<T>> b;
    depth_stack_.collect(b);
    refl_stack_.collect(b);
    head_.collect(b);
    return b;
}

// ---------------------------------------------------------------------------
// Builders

template <typename T>
std::unique_ptr<Network<T>> build_model(const ModelSpec& spec, std::uint64_t seed)
{
    return std::make_unique<Network<T>>(spec, seed);
}

template <typename T>
std::unique_ptr<Network<T>> build_early_fusion(ModelSpec spec, std::uint64_t seed)
{
    spec.input = InputKind::both;
    spec.input_channels = 2;
    return std::make_unique<Network<T>>(spec, seed);
}

template <typename T>
std::unique_ptr<LateFusionNetwork<T>> build_late_fusion(ModelSpec spec, std::uint64_t seed)
{
    spec.input = InputKind::depth;
    spec.input_channels = 1;
    return std::make_unique<LateFusionNetwork<T>>(spec, seed);
}

// ---------------------------------------------------------------------------
// State

template <typename T>
ModelState<T> capture_state(Classifier<T>& model)
{
    ModelState<T> s;
    for (const auto& p : model.parameters()) s.values.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    for (const auto& b : model.buffers()) s.values.push_back(*b.values);
    return s;
}

template <typename T>
void restore_state(Classifier<T>& model, const ModelState<T>& state)
{
    auto params = model.parameters();
    auto buffers = model.buffers();
    require(state.values.size() == params.size() + buffers.size(), "restore_state: state does not match model");
    std::size_t i = 0;
    for (auto& p : params) {
        auto dst = p.tensor.mutable_data();
        require(dst.size() == state.values[i].size(), "restore_state: size mismatch for " + p.name);
        std::copy(state.values[i].begin(), state.values[i].end(), dst.begin());
        ++i;
    }
    for (auto& b : buffers) {
        require(b.values->size() == state.values[i].size(), "restore_state: size mismatch for " + b.name);
        *b.values = state.values[i];
        if (b.updated) *b.updated = true;
        ++i;
    }
}

template <typename T>
std::uint64_t parameter_hash(Classifier<T>& model)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](T v) {
        using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
        auto bits = std::bit_cast<Bits>(v);
        for (std::size_t b = 0; b < sizeof(T); ++b) {
            h ^= (bits >> (8 * b)) & 0xff;
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& p : model.parameters())
        for (auto v : p.tensor.data()) mix(v);
    for (const auto& b : model.buffers())
        for (auto v : *b.values) mix(v);
    return h;
}

template <typename T>
std::vector<NamedArray> state_dict(Classifier<T>& model)
{
    std::vector<NamedArray> out;
    for (const auto& p : model.parameters()) {
        out.push_back({p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
    }
    for (const auto& b : model.buffers()) {
        out.push_back({b.name, {b.values->size()}, {b.values->begin(), b.values->end()}});
    }
    return out;
}

template <typename T>
void load_state_dict(Classifier<T>& model, const std::vector<NamedArray>& arrays)
{
    std::map<std::string, const NamedArray*> by_name;
    for (const auto& a : arrays) by_name[a.name] = &a;
    auto find = [&](const std::string& name) -> const NamedArray& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint is missing '" + name + "'");
        return *it->second;
    };
    for (auto& p : model.parameters()) {
        const auto& a = find(p.name);
        if (a.shape != p.tensor.shape()) {
            throw std::runtime_error("checkpoint shape " + shape_str(a.shape) + " for '" + p.name +
                                     "' does not match model shape " + shape_str(p.tensor.shape()));
        }
        auto dst = p.tensor.mutable_data();
        std::transform(a.data.begin(), a.data.end(), dst.begin(), [](float v) { return static_cast<T>(v); });
    }
    for (auto& b : model.buffers()) {
        const auto& a = find(b.name);
        if (a.data.size() != b.values->size()) throw std::runtime_error("checkpoint size mismatch for '" + b.name + "'");
        std::transform(a.data.begin(), a.data.end(), b.values->begin(), [](float v) { return static_cast<T>(v); });
        if (b.updated) *b.updated = true;
    }
}

// ---------------------------------------------------------------------------
// Manifest

std::string input_kind_name(InputKind kind)
{
    switch (kind) {
    case InputKind::depth: return "depth";
    case InputKind::reflectance: return "reflectance";
    case InputKind::both: return "both";
    }
    return "depth";
}

InputKind parse_input_kind(const std::string& name)
{
    if (name == "depth") return InputKind::depth;
    if (name == "reflectance") return InputKind::reflectance;
    if (name == "both") return InputKind::both;
    throw std::runtime_error("unknown modality '" + name + "'");
}

std::map<std::string, std::string> spec_to_manifest(const ModelSpec& spec)
{
    return {
        {"input_channels", std::to_string(spec.input_channels)},
        {"input", input_kind_name(spec.input)},
        {"use_hcc", spec.use_hcc ? "1" : "0"},
        {"use_rwmp", spec.use_rwmp ? "1" : "0"},
        {"num_classes", std::to_string(spec.num_classes)},
        {"fc_hidden", std::to_string(spec.fc_hidden)},
        {"dropout_rate", std::to_string(spec.dropout_rate)},
        {"width_divisor", std::to_string(spec.width_divisor)},
        {"input_height", std::to_string(spec.input_height)},
        {"input_width", std::to_string(spec.input_width)},
    };
}

ModelSpec spec_from_manifest(const std::map<std::string, std::string>& kv)
{
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw std::runtime_error("manifest is missing '" + key + "'");
        return it->second;
    };
    ModelSpec s;
    s.input_channels = std::stoi(get("input_channels"));
    s.input = parse_input_kind(get("input"));
    s.use_hcc = get("use_hcc") == "1";
    s.use_rwmp = get("use_rwmp") == "1";
    s.num_classes = std::stoi(get("num_classes"));
    s.fc_hidden = std::stoi(get("fc_hidden"));
    s.dropout_rate = std::stod(get("dropout_rate"));
    s.width_divisor = std::stoi(get("width_divisor"));
    s.input_height = std::stoi(get("input_height"));
    s.input_width = std::stoi(get("input_width"));
    s.validate();
    return s;
}

void write_manifest(const std::filesystem::path& path, const std::map<std::string, std::string>& kv)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
}

std::map<std::string, std::string> read_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("malformed manifest line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

#define PPC_INSTANTIATE_MODELS(T)                                                          \
    template class Classifier<T>;                                                          \
    template class ConvStack<T>;                                                           \
    template class ClassifierHead<T>;                                                      \
    template class Network<T>;                                                             \
    template class LateFusionNetwork<T>;                                                   \
    template std::unique_ptr<Network<T>> build_model(const ModelSpec&, std::uint64_t);     \
    template std::unique_ptr<Network<T>> build_early_fusion(ModelSpec, std::uint64_t);     \
    template std::unique_ptr<LateFusionNetwork<T>> build_late_fusion(ModelSpec, std::uint64_t); \
    template ModelState<T> capture_state(Classifier<T>&);                                  \
    template void restore_state(Classifier<T>&, const ModelState<T>&);                     \
    template std::uint64_t parameter_hash(Classifier<T>&);                                 \
    template std::vector<NamedArray> state_dict(Classifier<T>&);                           \
    template void load_state_dict(Classifier<T>&, const std::vector<NamedArray>&);

PPC_INSTANTIATE_MODELS(float)
PPC_INSTANTIATE_MODELS(double)

}  // namespace ppc
