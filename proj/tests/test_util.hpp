#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fes_stack/fes_stack.hpp"

namespace fes::testing {

inline LogitTensor random_tensor(TensorDims dims, Rng& rng, double scale = 1.0) {
  LogitTensor t(dims);
  for (auto& v : t.values()) v = static_cast<float>(scale * rng.normal());
  return t;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi) {
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = lo + (hi - lo) * rng.uniform();
  return m;
}

inline std::vector<std::uint32_t> random_labels(std::size_t n, std::uint32_t classes, Rng& rng) {
  std::vector<std::uint32_t> y(n);
  for (auto& v : y) v = static_cast<std::uint32_t>(rng.uniform_int(0, classes - 1));
  return y;
}

// Small valid bundle with random logits; fold assignment from the real split.
inline EpisodeBundle make_bundle(std::vector<std::uint32_t> support_labels, std::size_t classes, std::size_t k,
                                 std::size_t j, std::size_t query_per_class, std::uint64_t seed) {
  Rng rng(seed);
  EpisodeBundle b;
  b.domain_name = "unit";
  b.episode_id = "ep-unit-" + std::to_string(seed);
  b.seed = seed;
  for (std::size_t c = 0; c < classes; ++c) b.class_names.push_back("c" + std::to_string(c));
  b.support_labels = std::move(support_labels);
  for (std::uint32_t c = 0; c < classes; ++c)
    for (std::size_t q = 0; q < query_per_class; ++q) b.query_labels.push_back(c);
  b.support_full_logits = random_tensor({b.support_labels.size(), k, j, classes}, rng);
  b.support_cv_logits = random_tensor({b.support_labels.size(), k, j, classes}, rng);
  b.query_logits = random_tensor({b.query_labels.size(), k, j, classes}, rng);
  b.fold_assignment = stratified_two_fold_split(b.support_labels, seed).fold_of;
  validate(b);
  return b;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fes_stack_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

template <class F>
ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  throw std::runtime_error("expected fes::Error");
}

}  // namespace fes::testing
