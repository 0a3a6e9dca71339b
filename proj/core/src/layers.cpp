#include "hcl/layers.hpp"

#include <cmath>
#include <utility>

#include "hcl/errors.hpp"

namespace hcl {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMatrix>;
using ConstMapRow = Eigen::Map<const RowMatrix>;

void init_uniform(Tensor& t, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = dist(rng);
}

void init_normal(Tensor& t, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = dist(rng);
}

Tensor& grad_slot(BackwardContext& ctx, std::size_t index) { return ctx.param_grads[index]; }

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, std::size_t stride, std::size_t padding, bool bias, Rng& rng)
    : name_(std::move(name)),
      in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      has_bias_(bias),
      weight_(Shape{out_channels, in_channels, kernel, kernel}),
      bias_(Shape{bias ? out_channels : 0, 1, 1, 1}) {
  const double fan_in = static_cast<double>(in_channels * kernel * kernel);
  init_normal(weight_, std::sqrt(2.0 / fan_in), rng);
  if (has_bias_) init_uniform(bias_, 1.0 / std::sqrt(fan_in), rng);
}

namespace {

// Unrolls receptive fields into a (C*k*k) x (N*Ho*Wo) matrix.
RowMatrix im2col(const Tensor& x, std::size_t k, std::size_t stride, std::size_t pad,
                 std::size_t ho, std::size_t wo) {
  const auto& s = x.shape();
  const std::size_t plane = ho * wo;
  RowMatrix cols(static_cast<Eigen::Index>(s.c * k * k), static_cast<Eigen::Index>(s.n * plane));
  for (std::size_t c = 0; c < s.c; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = cols.row(static_cast<Eigen::Index>((c * k + ki) * k + kj)).data();
        for (std::size_t n = 0; n < s.n; ++n) {
          const double* src = x.data() + (n * s.c + c) * s.h * s.w;
          double* dst = row + n * plane;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(pad);
            if (ih < 0 || ih >= static_cast<long>(s.h)) {
              for (std::size_t ow = 0; ow < wo; ++ow) dst[oh * wo + ow] = 0.0;
              continue;
            }
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(pad);
              dst[oh * wo + ow] = (iw < 0 || iw >= static_cast<long>(s.w))
                                      ? 0.0
                                      : src[static_cast<std::size_t>(ih) * s.w +
                                            static_cast<std::size_t>(iw)];
            }
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const RowMatrix& cols, Tensor& dx, std::size_t k, std::size_t stride, std::size_t pad,
            std::size_t ho, std::size_t wo) {
  const auto& s = dx.shape();
  const std::size_t plane = ho * wo;
  for (std::size_t c = 0; c < s.c; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = cols.row(static_cast<Eigen::Index>((c * k + ki) * k + kj)).data();
        for (std::size_t n = 0; n < s.n; ++n) {
          double* dst = dx.data() + (n * s.c + c) * s.h * s.w;
          const double* src = row + n * plane;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(pad);
            if (ih < 0 || ih >= static_cast<long>(s.h)) continue;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(pad);
              if (iw < 0 || iw >= static_cast<long>(s.w)) continue;
              dst[static_cast<std::size_t>(ih) * s.w + static_cast<std::size_t>(iw)] +=
                  src[oh * wo + ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x, Mode, LayerCache& cache, std::vector<Tensor>* taps) const {
  const auto& s = x.shape();
  if (s.c != in_channels_) {
    throw ShapeError(name_ + ": expected " + std::to_string(in_channels_) + " channels, got " +
                     s.str());
  }
  if (s.h + 2 * padding_ < kernel_ || s.w + 2 * padding_ < kernel_) {
    throw ShapeError(name_ + ": input " + s.str() + " smaller than kernel");
  }
  const std::size_t ho = out_extent(s.h);
  const std::size_t wo = out_extent(s.w);
  const std::size_t plane = ho * wo;
  const RowMatrix cols = im2col(x, kernel_, stride_, padding_, ho, wo);
  const ConstMapRow w(weight_.data(), static_cast<Eigen::Index>(out_channels_),
                      static_cast<Eigen::Index>(in_channels_ * kernel_ * kernel_));
  const RowMatrix res = w * cols;

  Tensor out(Shape{s.n, out_channels_, ho, wo});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t co = 0; co < out_channels_; ++co) {
      const double b = has_bias_ ? bias_[co] : 0.0;
      const double* src = res.row(static_cast<Eigen::Index>(co)).data() + n * plane;
      double* dst = out.data() + (n * out_channels_ + co) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b;
    }
  }
  cache.input = x;
  if (taps != nullptr) (*taps)[tap_index_] = out;
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_out, const LayerCache& cache, Mode,
                        BackwardContext& ctx) const {
  const Tensor& x = cache.input;
  const auto& s = x.shape();
  const std::size_t ho = out_extent(s.h);
  const std::size_t wo = out_extent(s.w);
  const std::size_t plane = ho * wo;

  const Tensor* extra = nullptr;
  if (ctx.tap_grads != nullptr && tap_index_ < ctx.tap_grads->size() &&
      !(*ctx.tap_grads)[tap_index_].empty()) {
    extra = &(*ctx.tap_grads)[tap_index_];
  }

  RowMatrix dres(static_cast<Eigen::Index>(out_channels_), static_cast<Eigen::Index>(s.n * plane));
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t co = 0; co < out_channels_; ++co) {
      const std::size_t base = (n * out_channels_ + co) * plane;
      double* dst = dres.row(static_cast<Eigen::Index>(co)).data() + n * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        dst[p] = grad_out[base + p] + (extra ? (*extra)[base + p] : 0.0);
      }
    }
  }

  const Eigen::Index kdim = static_cast<Eigen::Index>(in_channels_ * kernel_ * kernel_);
  const ConstMapRow w(weight_.data(), static_cast<Eigen::Index>(out_channels_), kdim);
  if (!ctx.param_grads.empty()) {
    const RowMatrix cols = im2col(x, kernel_, stride_, padding_, ho, wo);
    MapRow dw(grad_slot(ctx, param_offset_).data(), static_cast<Eigen::Index>(out_channels_), kdim);
    dw.noalias() += dres * cols.transpose();
    if (has_bias_) {
      Tensor& db = grad_slot(ctx, param_offset_ + 1);
      for (std::size_t co = 0; co < out_channels_; ++co) {
        db[co] += dres.row(static_cast<Eigen::Index>(co)).sum();
      }
    }
  }
  const RowMatrix dcols = w.transpose() * dres;
  Tensor dx(s);
  col2im(dcols, dx, kernel_, stride_, padding_, ho, wo);
  return dx;
}

void Conv2d::bind(std::size_t& next_param, std::size_t& next_tap) {
  param_offset_ = next_param;
  next_param += has_bias_ ? 2 : 1;
  tap_index_ = next_tap++;
}

void Conv2d::parameters(std::vector<Tensor*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

void Conv2d::parameters(std::vector<const Tensor*>& out) const {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

void Conv2d::parameter_names(std::vector<std::string>& out) const {
  out.push_back(name_ + ".weight");
  if (has_bias_) out.push_back(name_ + ".bias");
}

// ---------------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string feature_name, std::size_t channels)
    : feature_name_(std::move(feature_name)),
      channels_(channels),
      gamma_(Shape{channels, 1, 1, 1}, 1.0),
      beta_(Shape{channels, 1, 1, 1}, 0.0),
      running_mean_(channels, 0.0),
      running_var_(channels, 1.0) {}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode, LayerCache& cache,
                            std::vector<Tensor>*) const {
  const auto& s = x.shape();
  if (s.c != channels_) throw ShapeError("bn(" + feature_name_ + "): channel mismatch " + s.str());
  const std::size_t plane = s.h * s.w;
  const double m = static_cast<double>(s.n * plane);
  std::vector<double> mean(channels_, 0.0);
  std::vector<double> var(channels_, 0.0);
  if (mode == Mode::train) {
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < channels_; ++c) {
        const double* p = x.data() + (n * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) mean[c] += p[i];
      }
    }
    for (auto& v : mean) v /= m;
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < channels_; ++c) {
        const double* p = x.data() + (n * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mean[c];
          var[c] += d * d;
        }
      }
    }
    for (auto& v : var) v /= m;
  } else {
    mean = running_mean_;
    var = running_var_;
  }

  Tensor xhat(s);
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < channels_; ++c) {
      const double inv_std = 1.0 / std::sqrt(var[c] + kEpsilon);
      const std::size_t base = (n * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double h = (x[base + i] - mean[c]) * inv_std;
        xhat[base + i] = h;
        out[base + i] = gamma_[c] * h + beta_[c];
      }
    }
  }
  cache.aux = std::move(xhat);
  cache.mean = std::move(mean);
  cache.var = std::move(var);
  return out;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out, const LayerCache& cache, Mode mode,
                             BackwardContext& ctx) const {
  const auto& s = grad_out.shape();
  const std::size_t plane = s.h * s.w;
  const double m = static_cast<double>(s.n * plane);
  const Tensor& xhat = cache.aux;

  std::vector<double> sum_dy(channels_, 0.0);
  std::vector<double> sum_dy_xhat(channels_, 0.0);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < channels_; ++c) {
      const std::size_t base = (n * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy[c] += grad_out[base + i];
        sum_dy_xhat[c] += grad_out[base + i] * xhat[base + i];
      }
    }
  }
  if (!ctx.param_grads.empty()) {
    Tensor& dgamma = grad_slot(ctx, param_offset_);
    Tensor& dbeta = grad_slot(ctx, param_offset_ + 1);
    for (std::size_t c = 0; c < channels_; ++c) {
      dgamma[c] += sum_dy_xhat[c];
      dbeta[c] += sum_dy[c];
    }
  }

  Tensor dx(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < channels_; ++c) {
      const double inv_std = 1.0 / std::sqrt(cache.var[c] + kEpsilon);
      const std::size_t base = (n * channels_ + c) * plane;
      if (mode == Mode::train) {
        // dxhat = dy * gamma; sums over dxhat are gamma times the dy sums.
        const double k = gamma_[c] * inv_std / m;
        for (std::size_t i = 0; i < plane; ++i) {
          dx[base + i] = k * (m * grad_out[base + i] - sum_dy[c] - xhat[base + i] * sum_dy_xhat[c]);
        }
      } else {
        const double k = gamma_[c] * inv_std;
        for (std::size_t i = 0; i < plane; ++i) dx[base + i] = k * grad_out[base + i];
      }
    }
  }
  return dx;
}

void BatchNorm2d::commit_statistics(const LayerCache& cache) {
  if (cache.mean.size() != channels_) return;
  const std::size_t plane = cache.aux.shape().h * cache.aux.shape().w;
  const double m = static_cast<double>(cache.aux.shape().n * plane);
  const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
  for (std::size_t c = 0; c < channels_; ++c) {
    running_mean_[c] = (1.0 - kMomentum) * running_mean_[c] + kMomentum * cache.mean[c];
    running_var_[c] = (1.0 - kMomentum) * running_var_[c] + kMomentum * cache.var[c] * unbias;
  }
}

void BatchNorm2d::bind(std::size_t& next_param, std::size_t&) {
  param_offset_ = next_param;
  next_param += 2;
}

void BatchNorm2d::parameters(std::vector<Tensor*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void BatchNorm2d::parameters(std::vector<const Tensor*>& out) const {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void BatchNorm2d::parameter_names(std::vector<std::string>& out) const {
  out.push_back("bn(" + feature_name_ + ").gamma");
  out.push_back("bn(" + feature_name_ + ").beta");
}

// ---------------------------------------------------------------- Relu

Tensor Relu::forward(const Tensor& x, Mode, LayerCache& cache, std::vector<Tensor>*) const {
  Tensor out = x;
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  cache.input = x;
  return out;
}

Tensor Relu::backward(const Tensor& grad_out, const LayerCache& cache, Mode,
                      BackwardContext&) const {
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (cache.input[i] <= 0.0) dx[i] = 0.0;
  }
  return dx;
}

// ---------------------------------------------------------------- AvgPool2d

Tensor AvgPool2d::forward(const Tensor& x, Mode, LayerCache& cache, std::vector<Tensor>*) const {
  const auto& s = x.shape();
  if (s.h < 2 || s.w < 2) throw ShapeError("avgpool: input too small " + s.str());
  Tensor out(Shape{s.n, s.c, s.h / 2, s.w / 2});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t i = 0; i < s.h / 2; ++i) {
        for (std::size_t j = 0; j < s.w / 2; ++j) {
          out.at(n, c, i, j) = 0.25 * (x.at(n, c, 2 * i, 2 * j) + x.at(n, c, 2 * i + 1, 2 * j) +
                                       x.at(n, c, 2 * i, 2 * j + 1) +
                                       x.at(n, c, 2 * i + 1, 2 * j + 1));
        }
      }
    }
  }
  cache.aux = Tensor(s);  // only the input extents are needed
  return out;
}

Tensor AvgPool2d::backward(const Tensor& grad_out, const LayerCache& cache, Mode,
                           BackwardContext&) const {
  const auto& s = cache.aux.shape();
  Tensor dx(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t i = 0; i < s.h / 2; ++i) {
        for (std::size_t j = 0; j < s.w / 2; ++j) {
          const double g = 0.25 * grad_out.at(n, c, i, j);
          dx.at(n, c, 2 * i, 2 * j) = g;
          dx.at(n, c, 2 * i + 1, 2 * j) = g;
          dx.at(n, c, 2 * i, 2 * j + 1) = g;
          dx.at(n, c, 2 * i + 1, 2 * j + 1) = g;
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, Mode, LayerCache& cache,
                              std::vector<Tensor>*) const {
  const auto& s = x.shape();
  const std::size_t plane = s.h * s.w;
  Tensor out(Shape{s.n, s.c, 1, 1});
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += x[nc * plane + i];
    out[nc] = acc / static_cast<double>(plane);
  }
  cache.aux = Tensor(Shape{s.n, s.c, s.h, s.w});
  return out;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out, const LayerCache& cache, Mode,
                               BackwardContext&) const {
  const auto& s = cache.aux.shape();
  const std::size_t plane = s.h * s.w;
  Tensor dx(s);
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const double g = grad_out[nc] / static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) dx[nc * plane + i] = g;
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, std::size_t in_features, std::size_t out_features, Rng& rng)
    : name_(std::move(name)),
      in_features_(in_features),
      out_features_(out_features),
      weight_(Shape{out_features, in_features, 1, 1}),
      bias_(Shape{out_features, 1, 1, 1}) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  init_uniform(weight_, bound, rng);
  init_uniform(bias_, bound, rng);
}

Tensor Linear::forward(const Tensor& x, Mode, LayerCache& cache, std::vector<Tensor>*) const {
  const auto& s = x.shape();
  if (s.per_sample() != in_features_) {
    throw ShapeError(name_ + ": expected " + std::to_string(in_features_) + " features, got " +
                     s.str());
  }
  const ConstMapRow in(x.data(), static_cast<Eigen::Index>(s.n),
                       static_cast<Eigen::Index>(in_features_));
  const ConstMapRow w(weight_.data(), static_cast<Eigen::Index>(out_features_),
                      static_cast<Eigen::Index>(in_features_));
  Tensor out(Shape{s.n, out_features_, 1, 1});
  MapRow y(out.data(), static_cast<Eigen::Index>(s.n), static_cast<Eigen::Index>(out_features_));
  y.noalias() = in * w.transpose();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    for (std::size_t k = 0; k < out_features_; ++k) y(r, static_cast<Eigen::Index>(k)) += bias_[k];
  }
  cache.input = x;
  return out;
}

Tensor Linear::backward(const Tensor& grad_out, const LayerCache& cache, Mode,
                        BackwardContext& ctx) const {
  const auto& s = cache.input.shape();
  const auto rows = static_cast<Eigen::Index>(s.n);
  const ConstMapRow in(cache.input.data(), rows, static_cast<Eigen::Index>(in_features_));
  const ConstMapRow w(weight_.data(), static_cast<Eigen::Index>(out_features_),
                      static_cast<Eigen::Index>(in_features_));
  const ConstMapRow dy(grad_out.data(), rows, static_cast<Eigen::Index>(out_features_));
  if (!ctx.param_grads.empty()) {
    MapRow dw(grad_slot(ctx, param_offset_).data(), static_cast<Eigen::Index>(out_features_),
              static_cast<Eigen::Index>(in_features_));
    dw.noalias() += dy.transpose() * in;
    Tensor& db = grad_slot(ctx, param_offset_ + 1);
    for (std::size_t k = 0; k < out_features_; ++k) db[k] += dy.col(static_cast<Eigen::Index>(k)).sum();
  }
  Tensor dx(s);
  MapRow dxm(dx.data(), rows, static_cast<Eigen::Index>(in_features_));
  dxm.noalias() = dy * w;
  return dx;
}

void Linear::bind(std::size_t& next_param, std::size_t&) {
  param_offset_ = next_param;
  next_param += 2;
}

void Linear::parameters(std::vector<Tensor*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

void Linear::parameters(std::vector<const Tensor*>& out) const {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

void Linear::parameter_names(std::vector<std::string>& out) const {
  out.push_back(name_ + ".weight");
  out.push_back(name_ + ".bias");
}

// ---------------------------------------------------------------- ResidualBlock

ResidualBlock::ResidualBlock(const std::string& name, std::size_t in_channels,
                             std::size_t out_channels, std::size_t stride, Rng& rng) {
  main_.push_back(std::make_unique<Conv2d>(name + ".conv1", in_channels, out_channels, 3, stride, 1,
                                           false, rng));
  main_.push_back(std::make_unique<BatchNorm2d>(name + ".conv1", out_channels));
  main_.push_back(std::make_unique<Relu>());
  main_.push_back(std::make_unique<Conv2d>(name + ".conv2", out_channels, out_channels, 3, 1, 1,
                                           false, rng));
  main_.push_back(std::make_unique<BatchNorm2d>(name + ".conv2", out_channels));
  if (stride != 1 || in_channels != out_channels) {
    shortcut_.push_back(std::make_unique<Conv2d>(name + ".shortcut", in_channels, out_channels, 1,
                                                 stride, 0, false, rng));
    shortcut_.push_back(std::make_unique<BatchNorm2d>(name + ".shortcut", out_channels));
  }
}

ResidualBlock::ResidualBlock(const ResidualBlock& other) : Layer(other) {
  for (const auto& l : other.main_) main_.push_back(l->clone());
  for (const auto& l : other.shortcut_) shortcut_.push_back(l->clone());
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode, LayerCache& cache,
                              std::vector<Tensor>* taps) const {
  cache.children.resize(main_.size() + shortcut_.size());
  Tensor h = x;
  for (std::size_t i = 0; i < main_.size(); ++i) {
    h = main_[i]->forward(h, mode, cache.children[i], taps);
  }
  Tensor sc = x;
  for (std::size_t i = 0; i < shortcut_.size(); ++i) {
    sc = shortcut_[i]->forward(sc, mode, cache.children[main_.size() + i], taps);
  }
  h += sc;
  cache.aux = h;
  for (auto& v : h.values()) v = v > 0.0 ? v : 0.0;
  return h;
}

Tensor ResidualBlock::backward(const Tensor& grad_out, const LayerCache& cache, Mode mode,
                               BackwardContext& ctx) const {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (cache.aux[i] <= 0.0) g[i] = 0.0;
  }
  Tensor gm = g;
  for (std::size_t i = main_.size(); i-- > 0;) {
    gm = main_[i]->backward(gm, cache.children[i], mode, ctx);
  }
  Tensor gs = g;
  for (std::size_t i = shortcut_.size(); i-- > 0;) {
    gs = shortcut_[i]->backward(gs, cache.children[main_.size() + i], mode, ctx);
  }
  gm += gs;
  return gm;
}

void ResidualBlock::commit_statistics(const LayerCache& cache) {
  for (std::size_t i = 0; i < main_.size(); ++i) main_[i]->commit_statistics(cache.children[i]);
  for (std::size_t i = 0; i < shortcut_.size(); ++i) {
    shortcut_[i]->commit_statistics(cache.children[main_.size() + i]);
  }
}

void ResidualBlock::bind(std::size_t& next_param, std::size_t& next_tap) {
  for (auto& l : main_) l->bind(next_param, next_tap);
  for (auto& l : shortcut_) l->bind(next_param, next_tap);
}

void ResidualBlock::parameters(std::vector<Tensor*>& out) {
  for (auto& l : main_) l->parameters(out);
  for (auto& l : shortcut_) l->parameters(out);
}

void ResidualBlock::parameters(std::vector<const Tensor*>& out) const {
  for (const auto& l : main_) std::as_const(*l).parameters(out);
  for (const auto& l : shortcut_) std::as_const(*l).parameters(out);
}

void ResidualBlock::parameter_names(std::vector<std::string>& out) const {
  for (const auto& l : main_) l->parameter_names(out);
  for (const auto& l : shortcut_) l->parameter_names(out);
}

void ResidualBlock::norm_layers(std::vector<BatchNorm2d*>& out) {
  for (auto& l : main_) l->norm_layers(out);
  for (auto& l : shortcut_) l->norm_layers(out);
}

void ResidualBlock::norm_layers(std::vector<const BatchNorm2d*>& out) const {
  for (const auto& l : main_) std::as_const(*l).norm_layers(out);
  for (const auto& l : shortcut_) std::as_const(*l).norm_layers(out);
}

void ResidualBlock::tap_names(std::vector<std::string>& out) const {
  for (const auto& l : main_) l->tap_names(out);
  for (const auto& l : shortcut_) l->tap_names(out);
}

}  // namespace hcl
