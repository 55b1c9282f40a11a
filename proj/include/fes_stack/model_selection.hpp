#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fes_stack/cv_assembly.hpp"
#include "fes_stack/episode.hpp"
#include "fes_stack/error.hpp"
#include "fes_stack/optimizer.hpp"
#include "fes_stack/stacker.hpp"

namespace fes {

enum class AblationMode { Full, NoCV, FirstSnapshotOnly, LastSnapshotOnly, NoCVFirst, NoCVLast };

inline constexpr AblationMode kAllAblations[] = {
    AblationMode::NoCVFirst,         AblationMode::NoCVLast,         AblationMode::NoCV,
    AblationMode::FirstSnapshotOnly, AblationMode::LastSnapshotOnly, AblationMode::Full};

inline std::string_view to_string(AblationMode m) {
  switch (m) {
    case AblationMode::Full: return "full";
    case AblationMode::NoCV: return "no-cv";
    case AblationMode::FirstSnapshotOnly: return "first";
    case AblationMode::LastSnapshotOnly: return "last";
    case AblationMode::NoCVFirst: return "no-cv-first";
    case AblationMode::NoCVLast: return "no-cv-last";
  }
  return "?";
}

inline AblationMode parse_ablation(std::string_view s) {
  for (auto m : kAllAblations)
    if (to_string(m) == s) return m;
  fail(ErrorKind::Config, "unknown ablation mode '" + std::string(s) + "'");
}

inline bool uses_cv_logits(AblationMode m) {
  return m == AblationMode::Full || m == AblationMode::FirstSnapshotOnly ||
         m == AblationMode::LastSnapshotOnly;
}

/// Snapshot kept by single-snapshot ablations, if any.
inline std::optional<std::size_t> kept_snapshot(AblationMode m, std::size_t snapshots) {
  switch (m) {
    case AblationMode::FirstSnapshotOnly:
    case AblationMode::NoCVFirst: return 0;
    case AblationMode::LastSnapshotOnly:
    case AblationMode::NoCVLast: return snapshots - 1;
    default: return std::nullopt;
  }
}

struct LambdaGrid {
  std::vector<double> pool1;  // sparsity strengths
  std::vector<double> pool2;  // smoothness strengths

  static std::vector<double> default_pool() { return {1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 0.0}; }
  static LambdaGrid standard() { return {default_pool(), default_pool()}; }

  void validate() const {
    require(!pool1.empty() && !pool2.empty(), ErrorKind::Config, "lambda pools must be non-empty");
    for (double v : pool1) require(v >= 0.0, ErrorKind::Config, "lambda values must be >= 0");
    for (double v : pool2) require(v >= 0.0, ErrorKind::Config, "lambda values must be >= 0");
  }
};

struct StackerConfig {
  Method method = Method::Fes;
  double ridge_strength = 1e-2;
  std::size_t conv_size = 9;
  std::size_t stride = 4;
  LambdaGrid grid = LambdaGrid::standard();
  double abs_smoothing_eps = 1e-8;
  OptimConfig optim{};
};

/// Conv geometry for `snapshots`; a singleton snapshot axis degenerates to a
/// 1x1 convolution.
inline ConvGeometry conv_geometry(const StackerConfig& cfg, std::size_t snapshots) {
  ConvGeometry g = snapshots == 1 ? ConvGeometry{1, 1, 1} : ConvGeometry{snapshots, cfg.conv_size, cfg.stride};
  g.validate();
  return g;
}

struct TrainedStacker {
  Method method = Method::Fes;
  AblationMode ablation = AblationMode::Full;
  std::optional<std::size_t> snapshot;  // set when only one snapshot was used
  std::size_t full_snapshots = 0;       // J of the episode
  Matrix effective;                     // K x J' flat effective kernel, expanded for ConFES
  std::vector<double> params;           // raw optimiser parameters
  ConvGeometry geometry{};              // ConFES only
  double final_loss = 0.0;
  double grad_inf_norm = 0.0;
  double omission_rate = 0.0;
  std::size_t iterations = 0;
  Termination termination = Termination::MaxIterations;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  bool used_full_support = false;
  std::size_t trained_classes = 0;
  std::size_t fold_trainings = 0;

  FesKernel raw_fes() const { return FesKernel{Matrix(effective.rows(), effective.cols(), params)}; }
  ConFesKernel raw_confes() const {
    const std::size_t k = effective.rows();
    const std::size_t nd = k * geometry.conv_size;
    return ConFesKernel{Matrix(k, geometry.conv_size, {params.begin(), params.begin() + nd}),
                        Matrix(k, geometry.feature_length(), {params.begin() + nd, params.end()}),
                        geometry.stride};
  }
};

/// Training logits for an ablation mode: CV logits (with the one-shot
/// fallback) or full-support logits, optionally cut to a single snapshot.
inline TrainingSet training_set_for(const EpisodeBundle& bundle, AblationMode mode) {
  TrainingSet ts;
  if (uses_cv_logits(mode)) {
    ts = select_training_logits(bundle);
  } else {
    std::vector<std::size_t> all(bundle.support_labels.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    ts = make_training_set(bundle.support_full_logits, bundle.support_labels, all);
    ts.used_full_support = true;
  }
  if (auto j = kept_snapshot(mode, bundle.snapshots())) ts.logits = select_snapshot(ts.logits, *j);
  return ts;
}

inline RegConfig reg_config(const StackerConfig& cfg, double lambda1 = 0.0, double lambda2 = 0.0) {
  RegConfig reg;
  reg.method = cfg.method;
  reg.ridge_strength = cfg.method == Method::ReFes ? 0.0 : cfg.ridge_strength;
  reg.lambda1 = lambda1;
  reg.lambda2 = lambda2;
  reg.abs_smoothing_eps = cfg.abs_smoothing_eps;
  return reg;
}

struct FitResult {
  OptimResult optim;
  Matrix effective;
  ConvGeometry geometry{};
};

/// Fits one stacking kernel from the constant initialisation.
inline FitResult fit_kernel(const LogitTensor& logits, std::span<const std::uint32_t> labels,
                            const StackerConfig& cfg, double lambda1, double lambda2) {
  const RegConfig reg = reg_config(cfg, lambda1, lambda2);
  const ConvGeometry geometry =
      cfg.method == Method::ConFes ? conv_geometry(cfg, logits.snapshots()) : ConvGeometry{logits.snapshots(), 1, 1};
  StackingObjective objective(logits, labels, reg, geometry);
  const int levels = cfg.method == Method::ConFes ? 2 : 1;
  FitResult out;
  out.geometry = geometry;
  out.optim = minimize(
      [&objective](std::span<const double> x, std::span<double> g) { return objective(x, g); },
      init_params(levels, objective.parameter_count()), cfg.optim);
  out.effective = objective.effective_kernel(out.optim.params);
  return out;
}

inline std::size_t count_correct(const Matrix& effective, const TrainingSet& test) {
  const auto pred = predict(effective, test.logits);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) correct += pred.labels[i] == test.labels[i];
  return correct;
}

struct GridSearchResult {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  std::size_t fold_trainings = 0;
  std::vector<std::size_t> correct;  // combined correct count per (pool1 index, pool2 index), row-major
};

/// Two-fold grid search over (lambda1, lambda2): each pair is trained on one
/// fold and scored on the other, in both directions. The pair with the most
/// combined correct predictions wins; ties prefer larger lambda1, then larger
/// lambda2. Strict one-shot episodes have no folds and get (0, 0).
inline GridSearchResult grid_search_refes(const EpisodeBundle& bundle, const LambdaGrid& grid,
                                          const StackerConfig& cfg,
                                          AblationMode mode = AblationMode::Full) {
  grid.validate();
  GridSearchResult out;
  if (is_strict_one_shot(bundle.fold_assignment)) return out;

  StackerConfig fold_cfg = cfg;
  fold_cfg.method = Method::ReFes;
  const LogitTensor& source = uses_cv_logits(mode) ? bundle.support_cv_logits : bundle.support_full_logits;
  const auto rows0 = fold_members(bundle.fold_assignment, 0);
  const auto rows1 = fold_members(bundle.fold_assignment, 1);
  TrainingSet split[2] = {make_training_set(source, bundle.support_labels, rows0),
                          make_training_set(source, bundle.support_labels, rows1)};
  require(split[0].classes == split[1].classes, ErrorKind::Invariant,
          "folds do not cover the same retained classes");
  if (auto j = kept_snapshot(mode, bundle.snapshots()))
    for (auto& s : split) s.logits = select_snapshot(s.logits, *j);

  out.correct.assign(grid.pool1.size() * grid.pool2.size(), 0);
  std::size_t best = 0;
  for (std::size_t a = 0; a < grid.pool1.size(); ++a) {
    for (std::size_t b = 0; b < grid.pool2.size(); ++b) {
      std::size_t correct = 0;
      for (int train = 0; train < 2; ++train) {
        const auto fit = fit_kernel(split[train].logits, split[train].labels, fold_cfg, grid.pool1[a], grid.pool2[b]);
        correct += count_correct(fit.effective, split[1 - train]);
        ++out.fold_trainings;
      }
      const std::size_t cell = a * grid.pool2.size() + b;
      out.correct[cell] = correct;
      const std::size_t ba = best / grid.pool2.size();
      const std::size_t bb = best % grid.pool2.size();
      const bool better =
          correct > out.correct[best] ||
          (correct == out.correct[best] &&
           (grid.pool1[a] > grid.pool1[ba] || (grid.pool1[a] == grid.pool1[ba] && grid.pool2[b] > grid.pool2[bb])));
      if (cell == 0 || better) best = cell;
    }
  }
  out.lambda1 = grid.pool1[best / grid.pool2.size()];
  out.lambda2 = grid.pool2[best % grid.pool2.size()];
  return out;
}

/// Per-episode pipeline: pick training logits, select ReFES strengths if
/// needed, and fit the stacking kernel.
inline TrainedStacker train_stacker(const EpisodeBundle& bundle, const StackerConfig& cfg,
                                    AblationMode mode = AblationMode::Full) {
  const TrainingSet ts = training_set_for(bundle, mode);

  TrainedStacker out;
  out.method = cfg.method;
  out.ablation = mode;
  out.snapshot = kept_snapshot(mode, bundle.snapshots());
  out.full_snapshots = bundle.snapshots();
  out.used_full_support = ts.used_full_support;
  out.trained_classes = ts.retained_classes();

  if (cfg.method == Method::ReFes) {
    const auto gs = grid_search_refes(bundle, cfg.grid, cfg, mode);
    out.lambda1 = gs.lambda1;
    out.lambda2 = gs.lambda2;
    out.fold_trainings = gs.fold_trainings;
  }

  auto fit = fit_kernel(ts.logits, ts.labels, cfg, out.lambda1, out.lambda2);
  out.params = std::move(fit.optim.params);
  out.effective = std::move(fit.effective);
  out.geometry = fit.geometry;
  out.final_loss = fit.optim.loss;
  out.grad_inf_norm = fit.optim.grad_inf_norm;
  out.iterations = fit.optim.iterations;
  out.termination = fit.optim.termination;
  out.omission_rate = omission_rate(out.effective);
  return out;
}

/// Query logits in the shape the trained kernel expects.
inline LogitTensor stacker_input(const TrainedStacker& stacker, const LogitTensor& logits) {
  if (stacker.snapshot) return select_snapshot(logits, *stacker.snapshot);
  return logits;
}

inline Prediction predict(const TrainedStacker& stacker, const LogitTensor& logits) {
  return predict(stacker.effective, stacker_input(stacker, logits));
}

inline double accuracy(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> truth) {
  require(predicted.size() == truth.size() && !truth.empty(), ErrorKind::DimMismatch,
          "accuracy needs equal, non-empty label vectors");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i];
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

inline double query_accuracy(const TrainedStacker& stacker, const EpisodeBundle& bundle) {
  return accuracy(predict(stacker, bundle.query_logits).labels, bundle.query_labels);
}

}  // namespace fes
