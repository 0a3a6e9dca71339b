#include "hcl/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hcl/distillation.hpp"
#include "hcl/errors.hpp"
#include "hcl/hash.hpp"
#include "hcl/kv_file.hpp"
#include "hcl/optim.hpp"
#include "hcl/random.hpp"

namespace hcl {

InitMode parse_init_mode(const std::string& s) {
  if (s == "gaussian") return InitMode::gaussian;
  if (s == "current_batch") return InitMode::current_batch;
  throw ConfigError("inversion.init_mode: unknown value '" + s + "'");
}

StatsSource parse_stats_source(const std::string& s) {
  if (s == "running") return StatsSource::running;
  if (s == "approximate") return StatsSource::approximate;
  throw ConfigError("inversion.stats_source: unknown value '" + s + "'");
}

std::string to_string(InitMode m) {
  return m == InitMode::gaussian ? "gaussian" : "current_batch";
}

std::string to_string(StatsSource s) {
  return s == StatsSource::running ? "running" : "approximate";
}

void InversionConfig::validate() const {
  if (alpha_tv < 0.0) throw ConfigError("inversion.alpha_tv must be non-negative");
  if (alpha_l2 < 0.0) throw ConfigError("inversion.alpha_l2 must be non-negative");
  if (alpha_feature < 0.0) throw ConfigError("inversion.alpha_feature must be non-negative");
  if (k > 0 && !(lr > 0.0)) throw ConfigError("inversion.lr must be positive when inversion.k > 0");
  if (num_batches == 0) throw ConfigError("inversion.num_batches must be positive");
}

std::uint64_t InversionConfig::hash() const {
  std::ostringstream os;
  os << k << '|' << format_real(lr) << '|' << format_real(alpha_tv) << '|' << format_real(alpha_l2)
     << '|' << format_real(alpha_feature) << '|' << to_string(init_mode) << '|'
     << to_string(stats_source) << '|' << num_batches;
  return fnv1a(os.str());
}

// ---------------------------------------------------------------- priors

double tv_loss(const Tensor& x) {
  const auto& s = x.shape();
  if (s.h < 2 || s.w < 2) throw ShapeError("tv_loss needs spatial extent >= 2");
  double h_sum = 0.0;
  double v_sum = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t i = 0; i < s.h; ++i) {
        for (std::size_t j = 0; j < s.w; ++j) {
          if (j + 1 < s.w) {
            const double d = x.at(n, c, i, j + 1) - x.at(n, c, i, j);
            h_sum += d * d;
          }
          if (i + 1 < s.h) {
            const double d = x.at(n, c, i + 1, j) - x.at(n, c, i, j);
            v_sum += d * d;
          }
        }
      }
    }
  }
  const double h_pairs = static_cast<double>(s.n * s.c * s.h * (s.w - 1));
  const double v_pairs = static_cast<double>(s.n * s.c * (s.h - 1) * s.w);
  return h_sum / h_pairs + v_sum / v_pairs;
}

Tensor tv_loss_grad(const Tensor& x) {
  const auto& s = x.shape();
  if (s.h < 2 || s.w < 2) throw ShapeError("tv_loss needs spatial extent >= 2");
  const double h_pairs = static_cast<double>(s.n * s.c * s.h * (s.w - 1));
  const double v_pairs = static_cast<double>(s.n * s.c * (s.h - 1) * s.w);
  Tensor g(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t i = 0; i < s.h; ++i) {
        for (std::size_t j = 0; j < s.w; ++j) {
          if (j + 1 < s.w) {
            const double d = 2.0 * (x.at(n, c, i, j + 1) - x.at(n, c, i, j)) / h_pairs;
            g.at(n, c, i, j + 1) += d;
            g.at(n, c, i, j) -= d;
          }
          if (i + 1 < s.h) {
            const double d = 2.0 * (x.at(n, c, i + 1, j) - x.at(n, c, i, j)) / v_pairs;
            g.at(n, c, i + 1, j) += d;
            g.at(n, c, i, j) -= d;
          }
        }
      }
    }
  }
  return g;
}

double l2_loss(const Tensor& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x.values()) acc += v * v;
  return acc / static_cast<double>(x.size());
}

Tensor l2_loss_grad(const Tensor& x) {
  Tensor g = x;
  if (!x.empty()) g *= 2.0 / static_cast<double>(x.size());
  return g;
}

// ---------------------------------------------------------------- feature statistics

namespace {

void check_alignment(const Model& teacher, const FeatureStats& target) {
  const auto taps = teacher.tap_names();
  if (target.layer_ids != taps || target.means.size() != taps.size() ||
      target.variances.size() != taps.size()) {
    throw ContractViolation("feature statistics are not layer-aligned with " + teacher.spec().name);
  }
}

// Loss value and per-tap gradients for the recorded trace.
double feature_term(const Model& teacher, const ForwardTrace& trace, const FeatureStats& target,
                    std::vector<Tensor>* tap_grads) {
  const FeatureStats batch = tap_statistics(teacher, trace);
  double loss = 0.0;
  if (tap_grads != nullptr) tap_grads->assign(trace.taps.size(), Tensor{});
  for (std::size_t l = 0; l < trace.taps.size(); ++l) {
    const auto& mu = batch.means[l];
    const auto& var = batch.variances[l];
    const std::size_t channels = mu.size();
    if (target.means[l].size() != channels || target.variances[l].size() != channels) {
      throw ContractViolation("feature statistics channel mismatch at " + target.layer_ids[l]);
    }
    const double c = static_cast<double>(channels);
    double dm = 0.0;
    double dv = 0.0;
    for (std::size_t k = 0; k < channels; ++k) {
      dm += (mu[k] - target.means[l][k]) * (mu[k] - target.means[l][k]);
      dv += (var[k] - target.variances[l][k]) * (var[k] - target.variances[l][k]);
    }
    loss += dm / c + dv / c;
    if (tap_grads == nullptr) continue;

    const Tensor& f = trace.taps[l];
    const auto& s = f.shape();
    const std::size_t plane = s.h * s.w;
    const double m = static_cast<double>(s.n * plane);
    Tensor g(s);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t k = 0; k < channels; ++k) {
        const double gm = 2.0 * (mu[k] - target.means[l][k]) / (c * m);
        const double gv = 4.0 * (var[k] - target.variances[l][k]) / (c * m);
        const std::size_t base = (n * channels + k) * plane;
        for (std::size_t i = 0; i < plane; ++i) g[base + i] = gm + gv * (f[base + i] - mu[k]);
      }
    }
    (*tap_grads)[l] = std::move(g);
  }
  return loss;
}

}  // namespace

double feature_stat_loss(const Model& teacher, const Tensor& images, const FeatureStats& target) {
  check_alignment(teacher, target);
  ForwardTrace trace;
  teacher.infer(images, &trace);
  return feature_term(teacher, trace, target, nullptr);
}

InversionLoss inversion_objective(const Model& teacher, const Tensor& images,
                                  std::span<const int> targets, const FeatureStats* target_stats,
                                  const InversionConfig& cfg) {
  if (targets.size() != images.shape().n) throw ShapeError("one target per synthetic image");
  const bool use_feature = target_stats != nullptr && cfg.alpha_feature > 0.0;
  if (use_feature) check_alignment(teacher, *target_stats);

  ForwardTrace trace;
  const Matrix logits = to_matrix(teacher.infer(images, &trace));
  const LossGrad ce = task_loss_grad(
      logits, smooth_labels(targets, 0.0, static_cast<std::size_t>(logits.cols())));

  InversionLoss out;
  out.classification = ce.value;
  std::vector<Tensor> tap_grads;
  if (use_feature) {
    out.feature = feature_term(teacher, trace, *target_stats, &tap_grads);
    for (auto& g : tap_grads) g *= cfg.alpha_feature;
  }
  out.input_grad = teacher.backward(trace, from_matrix(ce.grad), nullptr,
                                    use_feature ? &tap_grads : nullptr);
  if (cfg.alpha_tv > 0.0) {
    out.tv = tv_loss(images);
    Tensor g = tv_loss_grad(images);
    g *= cfg.alpha_tv;
    out.input_grad += g;
  }
  if (cfg.alpha_l2 > 0.0) {
    out.l2 = l2_loss(images);
    Tensor g = l2_loss_grad(images);
    g *= cfg.alpha_l2;
    out.input_grad += g;
  }
  out.total = out.classification + cfg.alpha_tv * out.tv + cfg.alpha_l2 * out.l2 +
              cfg.alpha_feature * (use_feature ? out.feature : 0.0);
  return out;
}

// ---------------------------------------------------------------- synthesis

std::vector<int> sample_prior_targets(const TaskStream& stream, int t, std::size_t batch_size,
                                      std::uint64_t seed) {
  if (t < 2) throw ContractViolation("prior targets need t >= 2");
  stream.task(t - 1);
  const std::size_t prior = static_cast<std::size_t>(t - 1);
  Rng rng = make_rng({seed, static_cast<std::uint64_t>(t), 0x7a26e75ULL});

  std::vector<std::size_t> counts(prior, batch_size / prior);
  std::vector<std::size_t> order(prior);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t r = 0; r < batch_size % prior; ++r) ++counts[order[r]];

  std::vector<int> targets;
  targets.reserve(batch_size);
  for (std::size_t s = 0; s < prior; ++s) {
    const auto& classes = stream.task(static_cast<int>(s + 1)).class_ids;
    std::uniform_int_distribution<std::size_t> pick(0, classes.size() - 1);
    for (std::size_t i = 0; i < counts[s]; ++i) targets.push_back(classes[pick(rng)]);
  }
  std::shuffle(targets.begin(), targets.end(), rng);
  return targets;
}

PixelRange PixelRange::from(const DatasetDescriptor& d) {
  PixelRange r;
  for (std::size_t c = 0; c < d.channels; ++c) {
    r.lower.push_back(d.lower_bound(c));
    r.upper.push_back(d.upper_bound(c));
  }
  return r;
}

namespace {

void clamp_to(Tensor& x, const PixelRange& range) {
  const auto& s = x.shape();
  const std::size_t plane = s.h * s.w;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      double* p = x.data() + (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] = std::clamp(p[i], range.lower[c], range.upper[c]);
    }
  }
}

}  // namespace

SyntheticBatch synthesize(const Model& teacher, const SynthesisRequest& request,
                          const TaskStream& stream, int t, const InversionConfig& cfg,
                          std::uint64_t seed) {
  cfg.validate();
  if (teacher.mode() != Mode::eval) throw ContractViolation("inversion teacher must be in eval mode");

  SyntheticBatch out;
  if (cfg.init_mode == InitMode::current_batch) {
    if (request.current_batch == nullptr) {
      throw ConfigError("inversion.init_mode=current_batch requires a current-task batch");
    }
    out.inputs = *request.current_batch;
  } else {
    const auto& in = teacher.spec().input;
    out.inputs = Tensor(Shape{request.batch_size, in.channels, in.height, in.width});
    Rng rng = make_rng({seed, static_cast<std::uint64_t>(t), 0x9a055ULL});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : out.inputs.values()) v = normal(rng);
  }
  out.targets = sample_prior_targets(stream, t, out.inputs.shape().n, seed);

  // Statistics are fixed once per synthesis.
  FeatureStats target;
  const FeatureStats* target_ptr = nullptr;
  if (cfg.alpha_feature > 0.0) {
    if (cfg.stats_source == StatsSource::running && teacher.spec().has_running_stats) {
      target = collect_running_stats(teacher);
      target_ptr = &target;
    } else if (request.current_batch != nullptr) {
      target = approximate_feature_stats(teacher, *request.current_batch);
      target_ptr = &target;
    }
  }

  Adam adam(cfg.lr);
  for (std::size_t step = 0; step < cfg.k; ++step) {
    InversionLoss loss = inversion_objective(teacher, out.inputs, out.targets, target_ptr, cfg);
    if (step == 0) {
      const bool any = std::any_of(loss.input_grad.values().begin(), loss.input_grad.values().end(),
                                   [](double g) { return g != 0.0; });
      if (!any) throw InternalError("inversion: no gradient path from the loss to the inputs");
    }
    out.loss_trace.push_back(loss.total);
    adam.step(out.inputs.values(), loss.input_grad.values());
    if (request.clamp != nullptr) clamp_to(out.inputs, *request.clamp);
  }
  out.steps_used = cfg.k;
  out.teacher_logits = to_matrix(teacher.infer(out.inputs));
  return out;
}

// ---------------------------------------------------------------- persistence

std::string synthesis_cache_key(int t, std::uint64_t seed, const InversionConfig& cfg,
                                std::size_t index) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "synth_t%d_s%llu_%016llx_%zu", t,
                static_cast<unsigned long long>(seed),
                static_cast<unsigned long long>(cfg.hash()), index);
  return buf;
}

namespace {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_synthetic(const SyntheticBatch& batch, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write("HCLSYN01", 8);
  const auto& s = batch.inputs.shape();
  for (std::uint64_t v : {std::uint64_t{s.n}, std::uint64_t{s.c}, std::uint64_t{s.h},
                          std::uint64_t{s.w}, std::uint64_t{batch.steps_used},
                          std::uint64_t{batch.loss_trace.size()},
                          static_cast<std::uint64_t>(batch.teacher_logits.cols())}) {
    write_pod(os, v);
  }
  os.write(reinterpret_cast<const char*>(batch.inputs.data()),
           static_cast<std::streamsize>(batch.inputs.size() * sizeof(double)));
  for (int label : batch.targets) write_pod(os, static_cast<std::int32_t>(label));
  os.write(reinterpret_cast<const char*>(batch.loss_trace.data()),
           static_cast<std::streamsize>(batch.loss_trace.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(batch.teacher_logits.data()),
           static_cast<std::streamsize>(batch.teacher_logits.size() * sizeof(double)));
  if (!os) throw IoError("failed writing " + path.string());
}

SyntheticBatch load_synthetic(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != "HCLSYN01") throw IoError(path.string() + ": bad magic");
  Shape s;
  s.n = read_pod<std::uint64_t>(is);
  s.c = read_pod<std::uint64_t>(is);
  s.h = read_pod<std::uint64_t>(is);
  s.w = read_pod<std::uint64_t>(is);
  SyntheticBatch b;
  b.steps_used = read_pod<std::uint64_t>(is);
  const auto trace_len = read_pod<std::uint64_t>(is);
  const auto classes = read_pod<std::uint64_t>(is);
  b.inputs = Tensor(s);
  is.read(reinterpret_cast<char*>(b.inputs.data()),
          static_cast<std::streamsize>(b.inputs.size() * sizeof(double)));
  for (std::size_t i = 0; i < s.n; ++i) b.targets.push_back(read_pod<std::int32_t>(is));
  b.loss_trace.resize(trace_len);
  is.read(reinterpret_cast<char*>(b.loss_trace.data()),
          static_cast<std::streamsize>(trace_len * sizeof(double)));
  b.teacher_logits.resize(static_cast<Eigen::Index>(s.n), static_cast<Eigen::Index>(classes));
  is.read(reinterpret_cast<char*>(b.teacher_logits.data()),
          static_cast<std::streamsize>(b.teacher_logits.size() * sizeof(double)));
  if (!is) throw IoError("truncated synthetic cache " + path.string());
  return b;
}

void write_image_grid(const Tensor& images, const DatasetDescriptor& d,
                      const std::filesystem::path& path) {
  const auto& s = images.shape();
  if (s.n == 0) return;
  const std::size_t cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(s.n))));
  const std::size_t rows = (s.n + cols - 1) / cols;
  const std::size_t gap = 1;
  const std::size_t width = cols * (s.w + gap) + gap;
  const std::size_t height = rows * (s.h + gap) + gap;
  std::vector<unsigned char> rgb(width * height * 3, 255);
  for (std::size_t n = 0; n < s.n; ++n) {
    const std::size_t oy = (n / cols) * (s.h + gap) + gap;
    const std::size_t ox = (n % cols) * (s.w + gap) + gap;
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const std::size_t c = s.c == 3 ? ch : 0;
          const double mean = c < d.mean.size() ? d.mean[c] : 0.0;
          const double sd = c < d.stddev.size() ? d.stddev[c] : 1.0;
          const double v = std::clamp(images.at(n, c, y, x) * sd + mean, 0.0, 1.0);
          rgb[((oy + y) * width + ox + x) * 3 + ch] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
      }
    }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P6\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

}  // namespace hcl
