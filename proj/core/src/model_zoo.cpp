#include "hcl/model_zoo.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "hcl/errors.hpp"
#include "hcl/hash.hpp"
#include "hcl/random.hpp"

namespace hcl {

std::atomic<long> Model::live_{0};
std::atomic<long> Model::peak_{0};

namespace {

void note_created(std::atomic<long>& live, std::atomic<long>& peak) {
  const long now = ++live;
  long prev = peak.load();
  while (now > prev && !peak.compare_exchange_weak(prev, now)) {
  }
}

}  // namespace

// ---------------------------------------------------------------- specs

std::string ArchitectureSpec::to_string() const {
  std::string out = builder_id;
  if (width != 0 || depth != 0) out += ":" + std::to_string(width);
  if (depth != 0) out += ":" + std::to_string(depth);
  return out;
}

ArchitectureSpec parse_architecture(const std::string& text, const InputShape& input) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.empty() || parts.size() > 3 || parts[0].empty()) {
    throw ConfigError("malformed architecture '" + text + "'");
  }
  auto number = [&](const std::string& s) -> std::size_t {
    try {
      std::size_t used = 0;
      const long v = std::stol(s, &used);
      if (used != s.size() || v < 0) throw ConfigError("");
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ConfigError("malformed architecture '" + text + "'");
    }
  };
  const std::size_t width = parts.size() > 1 ? number(parts[1]) : 0;
  const std::size_t depth = parts.size() > 2 ? number(parts[2]) : 0;
  return make_spec(parts[0], input, width, depth);
}

// ---------------------------------------------------------------- registry

namespace {

using LayerList = std::vector<std::unique_ptr<Layer>>;

std::size_t pooled(std::size_t extent, int times) {
  for (int i = 0; i < times; ++i) extent /= 2;
  return extent;
}

// LeNet-like: two 5x5 conv/avg-pool stages and a two-layer classifier, no
// normalization.
LayerList build_small_cnn(const ArchitectureSpec& spec, std::size_t out, Rng& rng) {
  const std::size_t w = spec.width;
  const std::size_t w2 = (8 * w) / 3;
  LayerList l;
  l.push_back(std::make_unique<Conv2d>("conv1", spec.input.channels, w, 5, 1, 2, true, rng));
  l.push_back(std::make_unique<Relu>());
  l.push_back(std::make_unique<AvgPool2d>());
  l.push_back(std::make_unique<Conv2d>("conv2", w, w2, 5, 1, 2, true, rng));
  l.push_back(std::make_unique<Relu>());
  l.push_back(std::make_unique<AvgPool2d>());
  const std::size_t flat = w2 * pooled(spec.input.height, 2) * pooled(spec.input.width, 2);
  const std::size_t hidden = 4 * w;
  l.push_back(std::make_unique<Linear>("fc1", flat, hidden, rng));
  l.push_back(std::make_unique<Relu>());
  l.push_back(std::make_unique<Linear>("fc2", hidden, out, rng));
  return l;
}

// conv-bn-relu stages with pooling and a global-average-pooled linear head.
LayerList build_wide_cnn(const ArchitectureSpec& spec, std::size_t out, Rng& rng) {
  const std::size_t w = spec.width;
  LayerList l;
  l.push_back(std::make_unique<Conv2d>("conv1", spec.input.channels, w, 3, 1, 1, false, rng));
  l.push_back(std::make_unique<BatchNorm2d>("conv1", w));
  l.push_back(std::make_unique<Relu>());
  l.push_back(std::make_unique<AvgPool2d>());
  l.push_back(std::make_unique<Conv2d>("conv2", w, 2 * w, 3, 1, 1, false, rng));
  l.push_back(std::make_unique<BatchNorm2d>("conv2", 2 * w));
  l.push_back(std::make_unique<Relu>());
  l.push_back(std::make_unique<AvgPool2d>());
  for (std::size_t d = 0; d < spec.depth; ++d) {
    const std::string name = "conv" + std::to_string(3 + d);
    l.push_back(std::make_unique<Conv2d>(name, 2 * w, 2 * w, 3, 1, 1, false, rng));
    l.push_back(std::make_unique<BatchNorm2d>(name, 2 * w));
    l.push_back(std::make_unique<Relu>());
  }
  l.push_back(std::make_unique<GlobalAvgPool>());
  l.push_back(std::make_unique<Linear>("fc", 2 * w, out, rng));
  return l;
}

// Stem conv followed by `depth` stride-2 residual stages; every stage after
// the first doubles the channels.
LayerList build_residual_cnn(const ArchitectureSpec& spec, std::size_t out, Rng& rng) {
  const std::size_t w = spec.width;
  LayerList l;
  l.push_back(std::make_unique<Conv2d>("stem", spec.input.channels, w, 3, 1, 1, false, rng));
  l.push_back(std::make_unique<BatchNorm2d>("stem", w));
  l.push_back(std::make_unique<Relu>());
  std::size_t channels = w;
  for (std::size_t d = 0; d < spec.depth; ++d) {
    const std::size_t next = d == 0 ? channels : 2 * channels;
    l.push_back(std::make_unique<ResidualBlock>("block" + std::to_string(d + 1), channels, next,
                                                2, rng));
    channels = next;
  }
  l.push_back(std::make_unique<GlobalAvgPool>());
  l.push_back(std::make_unique<Linear>("fc", channels, out, rng));
  return l;
}

// A single convolution feeding a linear classifier; no nonlinearity.
LayerList build_linear_conv(const ArchitectureSpec& spec, std::size_t out, Rng& rng) {
  LayerList l;
  l.push_back(std::make_unique<Conv2d>("conv1", spec.input.channels, spec.width, 3, 1, 1, true, rng));
  l.push_back(std::make_unique<Linear>(
      "fc", spec.width * spec.input.height * spec.input.width, out, rng));
  return l;
}

const std::map<std::string, BuilderInfo>& registry() {
  static const std::map<std::string, BuilderInfo> r = [] {
    std::map<std::string, BuilderInfo> m;
    m["linear_conv"] = {"linear_conv", false, 2, 0, build_linear_conv};
    m["small_cnn"] = {"small_cnn", false, 6, 0, build_small_cnn};
    m["wide_cnn"] = {"wide_cnn", true, 16, 1, build_wide_cnn};
    m["residual_cnn"] = {"residual_cnn", true, 16, 2, build_residual_cnn};
    return m;
  }();
  return r;
}

}  // namespace

const BuilderInfo& find_builder(const std::string& id) {
  const auto& r = registry();
  const auto it = r.find(id);
  if (it == r.end()) throw ConfigError("unknown architecture builder '" + id + "'");
  return it->second;
}

std::vector<std::string> builder_ids() {
  std::vector<std::string> ids;
  for (const auto& [id, info] : registry()) ids.push_back(id);
  return ids;
}

ArchitectureSpec make_spec(const std::string& builder_id, const InputShape& input,
                           std::size_t width, std::size_t depth) {
  const BuilderInfo& info = find_builder(builder_id);
  ArchitectureSpec spec;
  spec.builder_id = builder_id;
  spec.width = width != 0 ? width : info.default_width;
  spec.depth = depth != 0 ? depth : info.default_depth;
  spec.has_running_stats = info.has_running_stats;
  spec.input = input;
  spec.name = spec.to_string();
  return spec;
}

// ---------------------------------------------------------------- Model

void Gradients::zero() {
  for (auto& g : values) g.fill(0.0);
}

Model::Model(ArchitectureSpec spec, std::size_t output_dim, std::vector<std::unique_ptr<Layer>> layers)
    : spec_(std::move(spec)), output_dim_(output_dim), layers_(std::move(layers)) {
  for (auto& l : layers_) l->bind(param_tensors_, tap_count_);
  note_created(live_, peak_);
}

Model::Model(const Model& other)
    : spec_(other.spec_),
      output_dim_(other.output_dim_),
      param_tensors_(other.param_tensors_),
      tap_count_(other.tap_count_),
      mode_(other.mode_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
  note_created(live_, peak_);
}

Model::~Model() { --live_; }

long Model::live_count() { return live_.load(); }
long Model::peak_live_count() { return peak_.load(); }
void Model::reset_peak_live_count() { peak_.store(live_.load()); }

void Model::check_input(const Tensor& x) const {
  const auto& s = x.shape();
  if (s.c != spec_.input.channels || s.h != spec_.input.height || s.w != spec_.input.width) {
    throw ShapeError(spec_.name + ": input " + s.str() + " does not match expected " +
                     std::to_string(spec_.input.channels) + "x" +
                     std::to_string(spec_.input.height) + "x" + std::to_string(spec_.input.width));
  }
}

Tensor Model::forward_pure(const Tensor& x, Mode mode, ForwardTrace* trace) const {
  check_input(x);
  ForwardTrace local;
  ForwardTrace& t = trace != nullptr ? *trace : local;
  t.mode = mode;
  t.caches.assign(layers_.size(), LayerCache{});
  t.taps.assign(tap_count_, Tensor{});
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, mode, t.caches[i], &t.taps);
  }
  return h;
}

Tensor Model::forward(const Tensor& x, ForwardTrace* trace) {
  ForwardTrace local;
  ForwardTrace& t = trace != nullptr ? *trace : local;
  Tensor out = forward_pure(x, mode_, &t);
  if (mode_ == Mode::train) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->commit_statistics(t.caches[i]);
  }
  return out;
}

Tensor Model::infer(const Tensor& x, ForwardTrace* trace) const {
  if (mode_ != Mode::eval) {
    throw ContractViolation(spec_.name + ": read-only forward requires eval mode");
  }
  return forward_pure(x, Mode::eval, trace);
}

Tensor Model::backward(const ForwardTrace& trace, const Tensor& grad_logits, Gradients* grads,
                       const std::vector<Tensor>* tap_grads) const {
  if (trace.caches.size() != layers_.size()) {
    throw ContractViolation("backward called with a trace from a different model");
  }
  BackwardContext ctx;
  if (grads != nullptr) ctx.param_grads = grads->values;
  ctx.tap_grads = tap_grads;
  Tensor g = grad_logits;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i]->backward(g, trace.caches[i], trace.mode, ctx);
  }
  return g;
}

Gradients Model::make_gradients() const {
  Gradients g;
  for (const Tensor* p : parameters()) g.values.emplace_back(p->shape());
  return g;
}

std::vector<Tensor*> Model::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers_) l->parameters(out);
  return out;
}

std::vector<const Tensor*> Model::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers_) std::as_const(*l).parameters(out);
  return out;
}

std::vector<std::string> Model::parameter_names() const {
  std::vector<std::string> out;
  for (const auto& l : layers_) l->parameter_names(out);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* p : parameters()) n += p->size();
  return n;
}

std::vector<double> Model::flat_parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const Tensor* p : parameters()) out.insert(out.end(), p->values().begin(), p->values().end());
  return out;
}

void Model::set_flat_parameters(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw ShapeError("parameter vector has " + std::to_string(values.size()) + " values, model " +
                     spec_.name + " expects " + std::to_string(parameter_count()));
  }
  std::size_t off = 0;
  for (Tensor* p : parameters()) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), p->size(), p->data());
    off += p->size();
  }
}

std::vector<const BatchNorm2d*> Model::norm_layers() const {
  std::vector<const BatchNorm2d*> out;
  for (const auto& l : layers_) std::as_const(*l).norm_layers(out);
  return out;
}

std::vector<std::string> Model::norm_feature_names() const {
  std::vector<std::string> out;
  for (const auto* bn : norm_layers()) out.push_back(bn->feature_name());
  return out;
}

std::vector<double> Model::flat_norm_state() const {
  std::vector<double> out;
  for (const auto* bn : norm_layers()) {
    out.insert(out.end(), bn->running_mean().begin(), bn->running_mean().end());
    out.insert(out.end(), bn->running_var().begin(), bn->running_var().end());
  }
  return out;
}

void Model::set_flat_norm_state(std::span<const double> values) {
  std::vector<BatchNorm2d*> bns;
  for (auto& l : layers_) l->norm_layers(bns);
  std::size_t need = 0;
  for (auto* bn : bns) need += 2 * bn->running_mean().size();
  if (need != values.size()) throw ShapeError("norm state size mismatch for " + spec_.name);
  std::size_t off = 0;
  for (auto* bn : bns) {
    for (auto& v : bn->running_mean()) v = values[off++];
    for (auto& v : bn->running_var()) v = values[off++];
  }
}

std::vector<std::string> Model::tap_names() const {
  std::vector<std::string> out;
  for (const auto& l : layers_) l->tap_names(out);
  return out;
}

std::uint64_t Model::fingerprint() const {
  Fnv1a h;
  h.update(flat_parameters());
  h.update(flat_norm_state());
  return h.digest();
}

std::size_t Model::head_parameter_index() const {
  if (param_tensors_ < 2) throw InternalError("model has no output layer");
  return param_tensors_ - 2;
}

std::unique_ptr<Model> instantiate(const ArchitectureSpec& spec, std::size_t output_dim,
                                   std::uint64_t seed) {
  if (output_dim < 2) throw ConfigError("output_dim must be at least 2");
  const BuilderInfo& info = find_builder(spec.builder_id);
  ArchitectureSpec resolved = spec;
  resolved.has_running_stats = info.has_running_stats;
  if (resolved.width == 0) resolved.width = info.default_width;
  if (resolved.depth == 0) resolved.depth = info.default_depth;
  if (resolved.name.empty()) resolved.name = resolved.to_string();
  Rng rng = make_rng({seed, fnv1a(spec.builder_id)});
  auto layers = info.build(resolved, output_dim, rng);
  return std::make_unique<Model>(std::move(resolved), output_dim, std::move(layers));
}

Tensor forward_logits(Model& model, const Tensor& inputs) { return model.forward(inputs); }

// ---------------------------------------------------------------- statistics

FeatureStats collect_running_stats(const Model& model) {
  if (!model.spec().has_running_stats) {
    throw UnsupportedArchitecture(model.spec().name + " keeps no normalization running statistics");
  }
  FeatureStats stats;
  for (const auto* bn : model.norm_layers()) {
    stats.layer_ids.push_back(bn->feature_name());
    stats.means.push_back(bn->running_mean());
    stats.variances.push_back(bn->running_var());
  }
  return stats;
}

FeatureStats tap_statistics(const Model& model, const ForwardTrace& trace) {
  FeatureStats stats;
  stats.layer_ids = model.tap_names();
  for (const Tensor& tap : trace.taps) {
    const auto& s = tap.shape();
    const std::size_t plane = s.h * s.w;
    const double m = static_cast<double>(s.n * plane);
    std::vector<double> mean(s.c, 0.0);
    std::vector<double> var(s.c, 0.0);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const double* p = tap.data() + (n * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) mean[c] += p[i];
      }
    }
    for (auto& v : mean) v /= m;
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const double* p = tap.data() + (n * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) var[c] += (p[i] - mean[c]) * (p[i] - mean[c]);
      }
    }
    for (auto& v : var) v /= m;
    stats.means.push_back(std::move(mean));
    stats.variances.push_back(std::move(var));
  }
  return stats;
}

FeatureStats approximate_feature_stats(const Model& model, const Tensor& batch) {
  ForwardTrace trace;
  model.forward_pure(batch, Mode::eval, &trace);
  return tap_statistics(model, trace);
}

// ---------------------------------------------------------------- checkpoints

namespace {
constexpr const char* kCheckpointMagic = "HCL-CHECKPOINT";
constexpr int kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  const auto params = model.flat_parameters();
  const auto norm = model.flat_norm_state();
  const auto& spec = model.spec();
  os << kCheckpointMagic << '\n'
     << "version=" << kCheckpointVersion << '\n'
     << "spec=" << spec.to_string() << '\n'
     << "input=" << spec.input.channels << ' ' << spec.input.height << ' ' << spec.input.width
     << '\n'
     << "output_dim=" << model.output_dim() << '\n'
     << "parameters=" << params.size() << '\n'
     << "norm_values=" << norm.size() << '\n'
     << "data\n";
  os.write(reinterpret_cast<const char*>(params.data()),
           static_cast<std::streamsize>(params.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(norm.data()),
           static_cast<std::streamsize>(norm.size() * sizeof(double)));
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != kCheckpointMagic) throw IoError(path.string() + " is not a checkpoint");
  std::map<std::string, std::string> header;
  while (std::getline(is, line) && line != "data") {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed checkpoint header in " + path.string());
    header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (std::stoi(header.at("version")) != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version in " + path.string());
  }
  InputShape input;
  std::istringstream(header.at("input")) >> input.channels >> input.height >> input.width;
  const ArchitectureSpec spec = parse_architecture(header.at("spec"), input);
  const std::size_t output_dim = std::stoul(header.at("output_dim"));
  std::vector<double> params(std::stoul(header.at("parameters")));
  std::vector<double> norm(std::stoul(header.at("norm_values")));
  is.read(reinterpret_cast<char*>(params.data()),
          static_cast<std::streamsize>(params.size() * sizeof(double)));
  is.read(reinterpret_cast<char*>(norm.data()),
          static_cast<std::streamsize>(norm.size() * sizeof(double)));
  if (!is) throw IoError("truncated checkpoint " + path.string());
  auto model = instantiate(spec, output_dim, 0);
  model->set_flat_parameters(params);
  model->set_flat_norm_state(norm);
  model->set_mode(Mode::eval);
  return model;
}

}  // namespace hcl
