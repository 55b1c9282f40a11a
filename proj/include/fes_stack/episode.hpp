#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fes_stack/error.hpp"

namespace fes {

struct TensorDims {
  std::size_t n = 0;  // instances
  std::size_t k = 0;  // extractors
  std::size_t j = 0;  // snapshots per extractor
  std::size_t c = 0;  // classes

  std::size_t size() const { return n * k * j * c; }
  std::size_t instance_stride() const { return k * j * c; }
  bool operator==(const TensorDims&) const = default;
};

inline std::string to_string(const TensorDims& d) {
  return std::to_string(d.n) + "x" + std::to_string(d.k) + "x" + std::to_string(d.j) + "x" +
         std::to_string(d.c);
}

/// Dense (instance, extractor, snapshot, class) logits, row-major, f32.
class LogitTensor {
 public:
  LogitTensor() = default;

  explicit LogitTensor(TensorDims dims) : dims_(dims), data_(dims.size(), 0.0f) { check_dims(); }

  LogitTensor(TensorDims dims, std::vector<float> data) : dims_(dims), data_(std::move(data)) {
    check_dims();
    require(data_.size() == dims_.size(), ErrorKind::DimMismatch,
            "logit tensor " + to_string(dims_) + " needs " + std::to_string(dims_.size()) +
                " values, got " + std::to_string(data_.size()));
  }

  const TensorDims& dims() const { return dims_; }
  std::size_t instances() const { return dims_.n; }
  std::size_t extractors() const { return dims_.k; }
  std::size_t snapshots() const { return dims_.j; }
  std::size_t classes() const { return dims_.c; }

  std::size_t offset(std::size_t n, std::size_t k, std::size_t j, std::size_t c) const {
    return ((n * dims_.k + k) * dims_.j + j) * dims_.c + c;
  }
  float operator()(std::size_t n, std::size_t k, std::size_t j, std::size_t c) const {
    return data_[offset(n, k, j, c)];
  }
  float& operator()(std::size_t n, std::size_t k, std::size_t j, std::size_t c) {
    return data_[offset(n, k, j, c)];
  }

  std::span<const float> values() const { return data_; }
  std::span<float> values() { return data_; }

  /// All K*J*C logits of one instance.
  std::span<const float> instance(std::size_t n) const {
    return std::span<const float>(data_).subspan(n * dims_.instance_stride(), dims_.instance_stride());
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  bool operator==(const LogitTensor&) const = default;

 private:
  void check_dims() const {
    require(dims_.n >= 1 && dims_.k >= 1 && dims_.j >= 1 && dims_.c >= 1, ErrorKind::DimMismatch,
            "logit tensor dims must all be >= 1, got " + to_string(dims_));
  }

  TensorDims dims_{};
  std::vector<float> data_;
};

/// Instances picked by index, in the given order.
inline LogitTensor select_instances(const LogitTensor& src, std::span<const std::size_t> rows) {
  TensorDims d = src.dims();
  d.n = rows.size();
  std::vector<float> out;
  out.reserve(d.size());
  for (std::size_t r : rows) {
    require(r < src.instances(), ErrorKind::DimMismatch, "instance index out of range");
    auto inst = src.instance(r);
    out.insert(out.end(), inst.begin(), inst.end());
  }
  return LogitTensor(d, std::move(out));
}

/// A single snapshot index along the snapshot axis, leaving a singleton axis.
inline LogitTensor select_snapshot(const LogitTensor& src, std::size_t snapshot) {
  require(snapshot < src.snapshots(), ErrorKind::DimMismatch, "snapshot index out of range");
  TensorDims d = src.dims();
  d.j = 1;
  LogitTensor out(d);
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t k = 0; k < d.k; ++k)
      for (std::size_t c = 0; c < d.c; ++c) out(n, k, 0, c) = src(n, k, snapshot, c);
  return out;
}

/// Class columns picked by index, in the given order.
inline LogitTensor select_classes(const LogitTensor& src, std::span<const std::uint32_t> classes) {
  TensorDims d = src.dims();
  d.c = classes.size();
  LogitTensor out(d);
  for (std::uint32_t cls : classes)
    require(cls < src.classes(), ErrorKind::DimMismatch, "class index out of range");
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t k = 0; k < d.k; ++k)
      for (std::size_t j = 0; j < d.j; ++j)
        for (std::size_t c = 0; c < d.c; ++c) out(n, k, j, c) = src(n, k, j, classes[c]);
  return out;
}

inline constexpr std::uint8_t kFoldRemoved = 255;

struct EpisodeBundle {
  LogitTensor support_cv_logits;    // support logits from snapshots tuned on the opposite fold
  LogitTensor support_full_logits;  // support logits from snapshots tuned on the whole support set
  LogitTensor query_logits;
  std::vector<std::uint32_t> support_labels;
  std::vector<std::uint32_t> query_labels;
  std::vector<std::uint8_t> fold_assignment;  // 0, 1 or kFoldRemoved per support instance
  std::vector<std::string> class_names;
  std::string domain_name;
  std::string episode_id;
  std::uint64_t seed = 0;

  std::size_t extractors() const { return query_logits.extractors(); }
  std::size_t snapshots() const { return query_logits.snapshots(); }
  std::size_t classes() const { return query_logits.classes(); }

  bool operator==(const EpisodeBundle&) const = default;
};

inline std::vector<std::size_t> class_counts(std::span<const std::uint32_t> labels, std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (auto y : labels)
    if (y < classes) ++counts[y];
  return counts;
}

/// Throws fes::Error describing the first violated invariant.
inline void validate(const EpisodeBundle& b) {
  const auto& cv = b.support_cv_logits.dims();
  const auto& full = b.support_full_logits.dims();
  const auto& q = b.query_logits.dims();
  const std::string where = "episode '" + b.episode_id + "': ";

  require(cv.k == q.k && cv.j == q.j && cv.c == q.c && full.k == q.k && full.j == q.j && full.c == q.c,
          ErrorKind::DimMismatch,
          where + "logit tensors disagree on (K, J, C): cv " + to_string(cv) + ", full " +
              to_string(full) + ", query " + to_string(q));
  require(cv.n == full.n, ErrorKind::DimMismatch, where + "support tensors disagree on N");
  require(b.support_labels.size() == cv.n, ErrorKind::DimMismatch,
          where + "support label count does not match support tensors");
  require(b.fold_assignment.size() == cv.n, ErrorKind::DimMismatch,
          where + "fold assignment length does not match support tensors");
  require(b.query_labels.size() == q.n, ErrorKind::DimMismatch,
          where + "query label count does not match query tensor");
  require(b.class_names.size() == q.c, ErrorKind::DimMismatch,
          where + "class_names length does not match C");

  for (const auto* t : {&b.support_cv_logits, &b.support_full_logits, &b.query_logits})
    require(t->all_finite(), ErrorKind::NonFinite, where + "logits contain NaN or Inf");

  const std::size_t classes = q.c;
  for (auto y : b.support_labels)
    require(y < classes, ErrorKind::Invariant, where + "support label out of range");
  for (auto y : b.query_labels)
    require(y < classes, ErrorKind::Invariant, where + "query label out of range");

  const auto shots = class_counts(b.support_labels, classes);
  for (std::size_t i = 0; i < b.fold_assignment.size(); ++i) {
    const auto f = b.fold_assignment[i];
    require(f == 0 || f == 1 || f == kFoldRemoved, ErrorKind::Invariant,
            where + "fold value must be 0, 1 or 255");
    const bool singleton = shots[b.support_labels[i]] == 1;
    require((f == kFoldRemoved) == singleton, ErrorKind::Invariant,
            where + "an instance is marked removed iff its class has exactly one support instance");
  }

  const auto per_class_query = class_counts(b.query_labels, classes);
  require(std::adjacent_find(per_class_query.begin(), per_class_query.end(),
                             std::not_equal_to<>()) == per_class_query.end(),
          ErrorKind::Invariant, where + "query set is not stratified (unequal per-class counts)");
}

}  // namespace fes
