#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fes_stack/episode.hpp"
#include "fes_stack/error.hpp"

namespace fes {

/// Row-major f64 matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    require(values_.size() == rows_ * cols_, ErrorKind::DimMismatch, "matrix value count mismatch");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * cols_, cols_);
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

inline Matrix relu(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

enum class Method { Fes, ConFes, ReFes };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::Fes: return "fes";
    case Method::ConFes: return "confes";
    case Method::ReFes: return "refes";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "fes") return Method::Fes;
  if (s == "confes") return Method::ConFes;
  if (s == "refes") return Method::ReFes;
  fail(ErrorKind::Config, "unknown method '" + std::string(s) + "' (expected fes, confes or refes)");
}

/// Flat stacking kernel over (extractor, snapshot); effective weights are the
/// ReLU of the raw parameters.
struct FesKernel {
  Matrix raw;

  Matrix effective() const { return relu(raw); }
  std::size_t parameter_count() const { return raw.size(); }
};

/// Depthwise 1-D convolution geometry along the snapshot axis.
struct ConvGeometry {
  std::size_t snapshots = 1;  // J
  std::size_t conv_size = 1;  // J_b
  std::size_t stride = 1;     // T

  void validate() const {
    require(stride >= 1 && conv_size >= stride && snapshots >= conv_size, ErrorKind::Config,
            "conv geometry needs J >= conv size >= stride >= 1 (J=" + std::to_string(snapshots) +
                ", conv size=" + std::to_string(conv_size) + ", stride=" + std::to_string(stride) + ")");
    require((snapshots - conv_size) % stride == 0, ErrorKind::Config,
            "(J - conv size) must be divisible by the stride (J=" + std::to_string(snapshots) +
                ", conv size=" + std::to_string(conv_size) + ", stride=" + std::to_string(stride) + ")");
  }

  /// Length of each extractor's feature map, J_m.
  std::size_t feature_length() const { return (snapshots - conv_size) / stride + 1; }
};

/// Two-level kernel: per-extractor depthwise conv kernel (K x J_b) and a
/// global kernel over the resulting feature maps (K x J_m).
struct ConFesKernel {
  Matrix depthwise;
  Matrix global;
  std::size_t stride = 1;

  std::size_t extractors() const { return depthwise.rows(); }
  ConvGeometry geometry() const {
    return {(global.cols() - 1) * stride + depthwise.cols(), depthwise.cols(), stride};
  }
  std::size_t parameter_count() const { return depthwise.size() + global.size(); }

  void validate() const {
    require(depthwise.rows() == global.rows() && depthwise.rows() >= 1 && global.cols() >= 1,
            ErrorKind::DimMismatch, "depthwise and global kernels must share K");
    geometry().validate();
  }
};

/// K * (J_m + J_b).
inline std::size_t confes_parameter_count(std::size_t extractors, const ConvGeometry& g) {
  g.validate();
  return extractors * (g.feature_length() + g.conv_size);
}

/// Flat K x J effective kernel equivalent to the two-level hierarchy.
inline Matrix expand_confes(const ConFesKernel& kernel) {
  kernel.validate();
  const auto g = kernel.geometry();
  const Matrix d = relu(kernel.depthwise);
  const Matrix top = relu(kernel.global);
  Matrix w(kernel.extractors(), g.snapshots);
  for (std::size_t k = 0; k < w.rows(); ++k)
    for (std::size_t m = 0; m < top.cols(); ++m)
      for (std::size_t b = 0; b < d.cols(); ++b) w(k, m * g.stride + b) += top(k, m) * d(k, b);
  return w;
}

namespace detail {

inline void check_kernel_shape(const Matrix& w, const LogitTensor& logits) {
  require(w.rows() == logits.extractors() && w.cols() == logits.snapshots(), ErrorKind::DimMismatch,
          "kernel " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
              " does not match logits with K=" + std::to_string(logits.extractors()) +
              ", J=" + std::to_string(logits.snapshots()));
}

}  // namespace detail

/// Meta logits N x C: sum over (k, j) of weight * logit, accumulated in f64.
/// `effective` is used as given (no clipping).
inline Matrix combine_logits(const Matrix& effective, const LogitTensor& logits) {
  detail::check_kernel_shape(effective, logits);
  const std::size_t classes = logits.classes();
  const std::size_t kj = effective.size();
  const auto w = effective.values();
  Matrix meta(logits.instances(), classes);
  for (std::size_t n = 0; n < logits.instances(); ++n) {
    const float* src = logits.instance(n).data();
    double* out = &meta(n, 0);
    for (std::size_t s = 0; s < kj; ++s) {
      const double ws = w[s];
      if (ws == 0.0) continue;
      const float* l = src + s * classes;
      for (std::size_t c = 0; c < classes; ++c) out[c] += ws * static_cast<double>(l[c]);
    }
  }
  return meta;
}

inline Matrix fes_forward(const FesKernel& kernel, const LogitTensor& logits) {
  return combine_logits(kernel.effective(), logits);
}

/// Depthwise strided convolution along the snapshot axis followed by the
/// global kernel; no nonlinearity between the two levels.
inline Matrix confes_forward(const ConFesKernel& kernel, const LogitTensor& logits) {
  kernel.validate();
  const auto g = kernel.geometry();
  require(kernel.extractors() == logits.extractors() && g.snapshots == logits.snapshots(),
          ErrorKind::DimMismatch, "ConFES kernel does not match logits");
  const Matrix d = relu(kernel.depthwise);
  const Matrix top = relu(kernel.global);
  const std::size_t classes = logits.classes();
  Matrix meta(logits.instances(), classes);
  std::vector<double> feature(classes);
  for (std::size_t n = 0; n < logits.instances(); ++n) {
    for (std::size_t k = 0; k < kernel.extractors(); ++k) {
      for (std::size_t m = 0; m < top.cols(); ++m) {
        std::fill(feature.begin(), feature.end(), 0.0);
        for (std::size_t b = 0; b < g.conv_size; ++b) {
          const double wb = d(k, b);
          for (std::size_t c = 0; c < classes; ++c)
            feature[c] += wb * static_cast<double>(logits(n, k, m * g.stride + b, c));
        }
        for (std::size_t c = 0; c < classes; ++c) meta(n, c) += top(k, m) * feature[c];
      }
    }
  }
  return meta;
}

inline double log_sum_exp(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

/// Summed (not averaged) softmax cross-entropy.
inline double ce_loss(const Matrix& meta_logits, std::span<const std::uint32_t> labels) {
  require(labels.size() == meta_logits.rows(), ErrorKind::DimMismatch, "label count mismatch");
  double total = 0.0;
  for (std::size_t n = 0; n < meta_logits.rows(); ++n) {
    require(labels[n] < meta_logits.cols(), ErrorKind::DimMismatch, "label out of range");
    const auto row = meta_logits.row(n);
    total += log_sum_exp(row) - row[labels[n]];
  }
  return total;
}

inline double ridge_penalty(const FesKernel& kernel, double strength) {
  double s = 0.0;
  for (double v : kernel.raw.values()) s += v * v;
  return strength * s;
}

inline double ridge_penalty(const ConFesKernel& kernel, double strength) {
  double s = 0.0;
  for (double v : kernel.depthwise.values()) s += v * v;
  for (double v : kernel.global.values()) s += v * v;
  return strength * s;
}

/// sqrt(x^2 + eps^2) - eps, a smooth stand-in for |x|.
inline double smooth_abs(double x, double eps) { return std::sqrt(x * x + eps * eps) - eps; }
inline double smooth_abs_derivative(double x, double eps) { return x / std::sqrt(x * x + eps * eps); }

/// lambda1 * sum |w| + lambda2 * sum over each extractor row of |w_j - w_{j+1}|,
/// on effective weights.
inline double fused_lasso_penalty(const FesKernel& kernel, double lambda1, double lambda2, double eps) {
  const Matrix w = kernel.effective();
  double sparsity = 0.0;
  double smoothness = 0.0;
  for (std::size_t k = 0; k < w.rows(); ++k)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      sparsity += smooth_abs(w(k, j), eps);
      if (j + 1 < w.cols()) smoothness += smooth_abs(w(k, j) - w(k, j + 1), eps);
    }
  return lambda1 * sparsity + lambda2 * smoothness;
}

struct RegConfig {
  Method method = Method::Fes;
  double ridge_strength = 1e-2;  // FES and ConFES
  double lambda1 = 0.0;          // ReFES sparsity
  double lambda2 = 0.0;          // ReFES smoothness
  double abs_smoothing_eps = 1e-8;

  void validate() const {
    require(ridge_strength >= 0.0 && lambda1 >= 0.0 && lambda2 >= 0.0, ErrorKind::Config,
            "regularisation strengths must be >= 0");
    require(abs_smoothing_eps > 0.0, ErrorKind::Config, "abs smoothing eps must be > 0");
  }
};

/// Full-batch training objective over a flat parameter vector. FES and ReFES
/// use K*J raw weights; ConFES uses K*J_b depthwise then K*J_m global raw
/// weights. The logits are promoted to f64 once, at construction.
class StackingObjective {
 public:
  StackingObjective(const LogitTensor& logits, std::span<const std::uint32_t> labels, RegConfig reg,
                    ConvGeometry geometry = {})
      : reg_(reg),
        n_(logits.instances()),
        k_(logits.extractors()),
        j_(logits.snapshots()),
        c_(logits.classes()),
        labels_(labels.begin(), labels.end()),
        logits_(logits.values().size()) {
    // Snapshot-major f64 copy: logits_[(k*J + j) * N*C + n*C + c].
    const std::size_t kj = k_ * j_;
    const auto src = logits.values();
    for (std::size_t n = 0; n < n_; ++n)
      for (std::size_t s = 0; s < kj; ++s)
        for (std::size_t c = 0; c < c_; ++c)
          logits_[s * n_ * c_ + n * c_ + c] = static_cast<double>(src[(n * kj + s) * c_ + c]);
    reg_.validate();
    require(labels_.size() == n_, ErrorKind::DimMismatch, "label count does not match logits");
    for (auto y : labels_) require(y < c_, ErrorKind::DimMismatch, "training label out of range");
    if (reg_.method == Method::ConFes) {
      require(geometry.snapshots == j_, ErrorKind::Config, "conv geometry does not match J");
      geometry.validate();
      geometry_ = geometry;
    } else {
      geometry_ = {j_, 1, 1};
    }
  }

  std::size_t parameter_count() const {
    if (reg_.method == Method::ConFes) return k_ * (geometry_.conv_size + geometry_.feature_length());
    return k_ * j_;
  }
  std::size_t extractors() const { return k_; }
  std::size_t snapshots() const { return j_; }
  const ConvGeometry& geometry() const { return geometry_; }
  const RegConfig& reg() const { return reg_; }

  /// Objective value; writes the gradient into `grad` (same size as params).
  double operator()(std::span<const double> params, std::span<double> grad) const {
    require(params.size() == parameter_count() && grad.size() == params.size(), ErrorKind::DimMismatch,
            "parameter vector has wrong size");
    if (reg_.method == Method::ConFes) return confes_value(params, grad);
    return flat_value(params, grad);
  }

  /// Effective flat K x J kernel for a parameter vector.
  Matrix effective_kernel(std::span<const double> params) const {
    if (reg_.method != Method::ConFes) return relu(Matrix(k_, j_, {params.begin(), params.end()}));
    return expand_confes(unpack_confes(params));
  }

  ConFesKernel unpack_confes(std::span<const double> params) const {
    const std::size_t nd = k_ * geometry_.conv_size;
    ConFesKernel kernel;
    kernel.depthwise = Matrix(k_, geometry_.conv_size, {params.begin(), params.begin() + nd});
    kernel.global = Matrix(k_, geometry_.feature_length(), {params.begin() + nd, params.end()});
    kernel.stride = geometry_.stride;
    return kernel;
  }

 private:
  // Cross-entropy of meta logits under effective weights `w` (size K*J).
  // Writes dLoss/dw into `dw` for entries with active[s] set.
  double data_term(std::span<const double> w, std::span<const char> active, std::span<double> dw) const {
    const std::size_t kj = k_ * j_;
    const std::size_t block = n_ * c_;
    std::vector<double> meta(block, 0.0);
    for (std::size_t s = 0; s < kj; ++s) {
      const double ws = w[s];
      if (ws == 0.0) continue;
      const double* l = logits_.data() + s * block;
      for (std::size_t i = 0; i < block; ++i) meta[i] += ws * l[i];
    }
    // meta becomes the residual softmax - onehot in place.
    double loss = 0.0;
    for (std::size_t n = 0; n < n_; ++n) {
      double* row = meta.data() + n * c_;
      const double mx = *std::max_element(row, row + c_);
      const double target = row[labels_[n]];
      double z = 0.0;
      for (std::size_t c = 0; c < c_; ++c) {
        row[c] = std::exp(row[c] - mx);
        z += row[c];
      }
      loss += mx + std::log(z) - target;
      for (std::size_t c = 0; c < c_; ++c) row[c] /= z;
      row[labels_[n]] -= 1.0;
    }
    for (std::size_t s = 0; s < kj; ++s)
      dw[s] = active[s] ? dot4(meta.data(), logits_.data() + s * block, block) : 0.0;
    return loss;
  }

  // Dot product with four interleaved partial sums (fixed order).
  static double dot4(const double* a, const double* b, std::size_t len) {
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    std::size_t i = 0;
    for (; i + 4 <= len; i += 4)
      for (std::size_t u = 0; u < 4; ++u) acc[u] += a[i + u] * b[i + u];
    for (; i < len; ++i) acc[0] += a[i] * b[i];
    return (acc[0] + acc[1]) + (acc[2] + acc[3]);
  }

  double flat_value(std::span<const double> raw, std::span<double> grad) const {
    const std::size_t kj = k_ * j_;
    std::vector<double> w(kj);
    std::vector<char> active(kj);
    for (std::size_t s = 0; s < kj; ++s) {
      active[s] = raw[s] > 0.0;
      w[s] = active[s] ? raw[s] : 0.0;
    }
    std::vector<double> dw(kj);
    double loss = data_term(w, active, dw);

    if (reg_.method == Method::ReFes) {
      const double eps = reg_.abs_smoothing_eps;
      for (std::size_t k = 0; k < k_; ++k) {
        for (std::size_t j = 0; j < j_; ++j) {
          const std::size_t s = k * j_ + j;
          if (reg_.lambda1 != 0.0) {
            loss += reg_.lambda1 * smooth_abs(w[s], eps);
            dw[s] += reg_.lambda1 * smooth_abs_derivative(w[s], eps);
          }
          if (reg_.lambda2 != 0.0 && j + 1 < j_) {
            const double diff = w[s] - w[s + 1];
            const double slope = reg_.lambda2 * smooth_abs_derivative(diff, eps);
            loss += reg_.lambda2 * smooth_abs(diff, eps);
            dw[s] += slope;
            dw[s + 1] -= slope;
          }
        }
      }
    }

    for (std::size_t s = 0; s < kj; ++s) grad[s] = active[s] ? dw[s] : 0.0;

    if (reg_.method == Method::Fes && reg_.ridge_strength != 0.0) {
      for (std::size_t s = 0; s < kj; ++s) {
        loss += reg_.ridge_strength * raw[s] * raw[s];
        grad[s] += 2.0 * reg_.ridge_strength * raw[s];
      }
    }
    return loss;
  }

  double confes_value(std::span<const double> params, std::span<double> grad) const {
    const std::size_t jb = geometry_.conv_size;
    const std::size_t jm = geometry_.feature_length();
    const std::size_t stride = geometry_.stride;
    const std::size_t nd = k_ * jb;
    auto d_raw = params.subspan(0, nd);
    auto g_raw = params.subspan(nd);

    std::vector<double> d(nd), g(k_ * jm);
    for (std::size_t i = 0; i < nd; ++i) d[i] = d_raw[i] > 0.0 ? d_raw[i] : 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = g_raw[i] > 0.0 ? g_raw[i] : 0.0;

    const std::size_t kj = k_ * j_;
    std::vector<double> w(kj, 0.0);
    for (std::size_t k = 0; k < k_; ++k)
      for (std::size_t m = 0; m < jm; ++m)
        for (std::size_t b = 0; b < jb; ++b) w[k * j_ + m * stride + b] += g[k * jm + m] * d[k * jb + b];

    // A flat position carries gradient to a live parameter whenever some
    // window covering it has a live partner on the other level.
    std::vector<char> active(kj, 0);
    for (std::size_t k = 0; k < k_; ++k)
      for (std::size_t m = 0; m < jm; ++m)
        for (std::size_t b = 0; b < jb; ++b)
          if ((d_raw[k * jb + b] > 0.0 && g[k * jm + m] != 0.0) ||
              (g_raw[k * jm + m] > 0.0 && d[k * jb + b] != 0.0))
            active[k * j_ + m * stride + b] = 1;

    std::vector<double> dw(kj);
    double loss = data_term(w, active, dw);

    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t k = 0; k < k_; ++k)
      for (std::size_t m = 0; m < jm; ++m)
        for (std::size_t b = 0; b < jb; ++b) {
          const double upstream = dw[k * j_ + m * stride + b];
          if (d_raw[k * jb + b] > 0.0) grad[k * jb + b] += upstream * g[k * jm + m];
          if (g_raw[k * jm + m] > 0.0) grad[nd + k * jm + m] += upstream * d[k * jb + b];
        }

    if (reg_.ridge_strength != 0.0) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        loss += reg_.ridge_strength * params[i] * params[i];
        grad[i] += 2.0 * reg_.ridge_strength * params[i];
      }
    }
    return loss;
  }

  RegConfig reg_;
  std::size_t n_, k_, j_, c_;
  ConvGeometry geometry_{};
  std::vector<std::uint32_t> labels_;
  std::vector<double> logits_;
};

template <typename Kernel>
struct LossAndGrad {
  double loss = 0.0;
  Kernel gradient;
};

inline LossAndGrad<FesKernel> loss_and_grad(const FesKernel& kernel, const LogitTensor& logits,
                                           std::span<const std::uint32_t> labels, RegConfig reg) {
  require(reg.method != Method::ConFes, ErrorKind::Config, "flat kernel given a ConFES config");
  detail::check_kernel_shape(kernel.raw, logits);
  StackingObjective objective(logits, labels, reg);
  LossAndGrad<FesKernel> out;
  out.gradient.raw = Matrix(kernel.raw.rows(), kernel.raw.cols());
  out.loss = objective(kernel.raw.values(), out.gradient.raw.values());
  return out;
}

inline LossAndGrad<ConFesKernel> loss_and_grad(const ConFesKernel& kernel, const LogitTensor& logits,
                                              std::span<const std::uint32_t> labels, RegConfig reg) {
  reg.method = Method::ConFes;
  kernel.validate();
  require(kernel.extractors() == logits.extractors(), ErrorKind::DimMismatch, "ConFES kernel K mismatch");
  StackingObjective objective(logits, labels, reg, kernel.geometry());
  std::vector<double> params(kernel.depthwise.values().begin(), kernel.depthwise.values().end());
  params.insert(params.end(), kernel.global.values().begin(), kernel.global.values().end());
  std::vector<double> grad(params.size());
  LossAndGrad<ConFesKernel> out;
  out.loss = objective(params, grad);
  out.gradient = objective.unpack_confes(grad);
  return out;
}

struct Prediction {
  std::vector<std::uint32_t> labels;
  Matrix probabilities;  // N x C, rows sum to 1
};

/// Softmax class probabilities and argmax labels (ties go to the lowest class).
inline Prediction predict(const Matrix& effective, const LogitTensor& logits) {
  const Matrix meta = combine_logits(effective, logits);
  Prediction out;
  out.probabilities = Matrix(meta.rows(), meta.cols());
  out.labels.resize(meta.rows());
  for (std::size_t n = 0; n < meta.rows(); ++n) {
    const auto row = meta.row(n);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    out.labels[n] = static_cast<std::uint32_t>(best);
    const double lse = log_sum_exp(row);
    for (std::size_t c = 0; c < row.size(); ++c) out.probabilities(n, c) = std::exp(row[c] - lse);
  }
  return out;
}

inline Prediction predict(const FesKernel& kernel, const LogitTensor& logits) {
  return predict(kernel.effective(), logits);
}

inline Prediction predict(const ConFesKernel& kernel, const LogitTensor& logits) {
  return predict(expand_confes(kernel), logits);
}

/// Fraction of effective weights that are exactly zero.
inline double omission_rate(const Matrix& effective) {
  if (effective.size() == 0) return 0.0;
  const auto zeros = std::count(effective.values().begin(), effective.values().end(), 0.0);
  return static_cast<double>(zeros) / static_cast<double>(effective.size());
}

}  // namespace fes
