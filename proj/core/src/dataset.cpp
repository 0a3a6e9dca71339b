#include "hcl/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>

#include "hcl/errors.hpp"
#include "hcl/random.hpp"

namespace hcl {
namespace {

constexpr std::size_t kBlobClasses = 10;
constexpr std::size_t kBlobSide = 16;
constexpr std::uint64_t kBlobSeed = 0x5eedb10b5ULL;

struct Part {
  std::array<double, 3> color;
  double sigma_x;
  double sigma_y;
};

std::vector<Part> blob_vocabulary() {
  const std::array<std::array<double, 3>, 3> colors = {
      {{1.0, 0.15, 0.15}, {0.15, 1.0, 0.15}, {0.15, 0.15, 1.0}}};
  const std::array<std::pair<double, double>, 3> shapes = {{{1.6, 1.6}, {3.0, 0.9}, {0.9, 3.0}}};
  std::vector<Part> parts;
  for (const auto& c : colors) {
    for (const auto& [sx, sy] : shapes) parts.push_back({c, sx, sy});
  }
  return parts;
}

// Ten distinct unordered part pairs, fixed for the dataset.
std::vector<std::pair<std::size_t, std::size_t>> blob_classes(std::size_t vocab) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < vocab; ++a) {
    for (std::size_t b = a + 1; b < vocab; ++b) pairs.emplace_back(a, b);
  }
  Rng rng(kBlobSeed);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  pairs.resize(kBlobClasses);
  return pairs;
}

void render_blob_sample(const std::vector<Part>& vocab, std::pair<std::size_t, std::size_t> cls,
                        Rng& rng, double* out) {
  std::uniform_real_distribution<double> pos(3.0, 12.0);
  std::uniform_real_distribution<double> amp(0.6, 1.0);
  std::uniform_real_distribution<double> weak(0.1, 0.25);
  std::uniform_int_distribution<std::size_t> any_part(0, vocab.size() - 1);
  std::bernoulli_distribution has_distractor(0.5);
  std::normal_distribution<double> noise(0.0, 0.1);

  struct Placed {
    const Part* part;
    double cx, cy, a;
  };
  std::vector<Placed> placed;
  placed.push_back({&vocab[cls.first], pos(rng), pos(rng), amp(rng)});
  placed.push_back({&vocab[cls.second], pos(rng), pos(rng), amp(rng)});
  if (has_distractor(rng)) {
    const std::size_t d = any_part(rng);
    placed.push_back({&vocab[d], pos(rng), pos(rng), weak(rng)});
  }
  constexpr std::size_t plane = kBlobSide * kBlobSide;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < kBlobSide; ++y) {
      for (std::size_t x = 0; x < kBlobSide; ++x) {
        double v = 0.2;
        for (const auto& p : placed) {
          const double dx = (static_cast<double>(x) - p.cx) / p.part->sigma_x;
          const double dy = (static_cast<double>(y) - p.cy) / p.part->sigma_y;
          v += p.a * p.part->color[c] * std::exp(-0.5 * (dx * dx + dy * dy));
        }
        out[c * plane + y * kBlobSide + x] = v;
      }
    }
  }
  for (std::size_t i = 0; i < 3 * plane; ++i) out[i] = std::clamp(out[i] + noise(rng), 0.0, 1.0);
}

void normalize_in_place(Tensor& t, const DatasetDescriptor& d) {
  const auto& s = t.shape();
  const std::size_t plane = s.h * s.w;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      double* p = t.data() + (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - d.mean[c]) / d.stddev[c];
    }
  }
}

void compute_channel_moments(const Tensor& t, DatasetDescriptor& d) {
  const auto& s = t.shape();
  const std::size_t plane = s.h * s.w;
  d.mean.assign(s.c, 0.0);
  d.stddev.assign(s.c, 0.0);
  const double m = static_cast<double>(s.n * plane);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* p = t.data() + (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) d.mean[c] += p[i];
    }
  }
  for (auto& v : d.mean) v /= m;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* p = t.data() + (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) d.stddev[c] += (p[i] - d.mean[c]) * (p[i] - d.mean[c]);
    }
  }
  for (auto& v : d.stddev) v = std::sqrt(v / m);
}

struct CifarRecords {
  std::vector<std::array<unsigned char, 3072>> images;
  std::vector<int> labels;
};

void read_cifar_file(const std::filesystem::path& path, CifarRecords& out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cifar10 file not found: " + path.string());
  while (true) {
    unsigned char label = 0;
    if (!is.read(reinterpret_cast<char*>(&label), 1)) break;
    std::array<unsigned char, 3072> img{};
    if (!is.read(reinterpret_cast<char*>(img.data()), img.size())) {
      throw IoError("truncated cifar10 record in " + path.string());
    }
    if (label >= 10) throw IoError("invalid cifar10 label in " + path.string());
    out.images.push_back(img);
    out.labels.push_back(label);
  }
}

void fill_cifar_split(const CifarRecords& recs, std::size_t per_class, Tensor& inputs,
                      std::vector<int>& labels) {
  std::vector<std::size_t> keep;
  std::array<std::size_t, 10> counts{};
  for (std::size_t i = 0; i < recs.labels.size(); ++i) {
    auto& c = counts[static_cast<std::size_t>(recs.labels[i])];
    if (per_class == 0 || c < per_class) {
      keep.push_back(i);
      ++c;
    }
  }
  inputs = Tensor(Shape{keep.size(), 3, 32, 32});
  labels.clear();
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const auto& img = recs.images[keep[k]];
    double* dst = inputs.sample(k);
    for (std::size_t i = 0; i < img.size(); ++i) dst[i] = img[i] / 255.0;
    labels.push_back(recs.labels[keep[k]]);
  }
}

Dataset load_cifar10(const DataOptions& options) {
  std::filesystem::path dir = options.data_dir / "cifar-10-batches-bin";
  if (!std::filesystem::exists(dir)) dir = options.data_dir;
  CifarRecords train;
  for (int b = 1; b <= 5; ++b) {
    read_cifar_file(dir / ("data_batch_" + std::to_string(b) + ".bin"), train);
  }
  CifarRecords test;
  read_cifar_file(dir / "test_batch.bin", test);

  Dataset ds;
  ds.descriptor = {"cifar10", 10, 3, 32, 32, {0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}};
  fill_cifar_split(train, options.train_per_class, ds.train_inputs, ds.train_labels);
  fill_cifar_split(test, options.test_per_class, ds.test_inputs, ds.test_labels);
  normalize_in_place(ds.train_inputs, ds.descriptor);
  normalize_in_place(ds.test_inputs, ds.descriptor);
  return ds;
}

}  // namespace

Dataset make_blobs(std::size_t train_per_class, std::size_t test_per_class) {
  const auto vocab = blob_vocabulary();
  const auto classes = blob_classes(vocab.size());
  Dataset ds;
  ds.descriptor.id = "blobs";
  ds.descriptor.num_classes = kBlobClasses;
  ds.descriptor.channels = 3;
  ds.descriptor.height = kBlobSide;
  ds.descriptor.width = kBlobSide;

  auto render = [&](std::size_t per_class, std::uint64_t split, Tensor& inputs,
                    std::vector<int>& labels) {
    inputs = Tensor(Shape{per_class * kBlobClasses, 3, kBlobSide, kBlobSide});
    labels.clear();
    std::size_t row = 0;
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t k = 0; k < kBlobClasses; ++k) {
        Rng rng = make_rng({kBlobSeed, split, k, i});
        render_blob_sample(vocab, classes[k], rng, inputs.sample(row++));
        labels.push_back(static_cast<int>(k));
      }
    }
  };
  render(train_per_class, 1, ds.train_inputs, ds.train_labels);
  render(test_per_class, 2, ds.test_inputs, ds.test_labels);

  // Normalization constants come from a fixed reference draw so they do not
  // depend on the requested subset size.
  Tensor reference;
  std::vector<int> unused;
  render(50, 3, reference, unused);
  compute_channel_moments(reference, ds.descriptor);
  normalize_in_place(ds.train_inputs, ds.descriptor);
  normalize_in_place(ds.test_inputs, ds.descriptor);
  return ds;
}

std::vector<std::string> dataset_ids() { return {"blobs", "cifar10"}; }

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("HCL_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return "data";
}

Dataset load_dataset(const std::string& dataset_id, const DataOptions& options) {
  if (dataset_id == "blobs") {
    return make_blobs(options.train_per_class == 0 ? 500 : options.train_per_class,
                      options.test_per_class == 0 ? 100 : options.test_per_class);
  }
  if (dataset_id == "cifar10") return load_cifar10(options);
  throw ConfigError("unknown dataset '" + dataset_id + "'");
}

}  // namespace hcl
