#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "fes_stack/episode.hpp"
#include "fes_stack/error.hpp"
#include "fes_stack/rng.hpp"

namespace fes {

struct FoldAssignment {
  std::vector<std::uint8_t> fold_of;          // per support instance: 0, 1 or kFoldRemoved
  std::vector<std::uint32_t> removed_classes;  // ascending

  bool operator==(const FoldAssignment&) const = default;
};

/// Stratified two-fold split of a support set. Classes with a single support
/// instance cannot appear in both folds and are marked removed. Within each
/// class the instances are shuffled and dealt alternately to the two folds;
/// the dealing parity carries over between classes so the folds also stay
/// balanced overall.
inline FoldAssignment stratified_two_fold_split(std::span<const std::uint32_t> labels, std::uint64_t seed) {
  require(!labels.empty(), ErrorKind::Config, "stratified split needs at least one support instance");
  const std::uint32_t classes = *std::max_element(labels.begin(), labels.end()) + 1;

  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);

  FoldAssignment out;
  out.fold_of.assign(labels.size(), kFoldRemoved);
  std::uint8_t next_fold = 0;
  for (std::uint32_t c = 0; c < classes; ++c) {
    auto& idx = members[c];
    if (idx.empty()) continue;
    if (idx.size() == 1) {
      out.removed_classes.push_back(c);
      continue;
    }
    Rng rng(derive_seed(seed, 0x5f01d, c));
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t i : idx) {
      out.fold_of[i] = next_fold;
      next_fold ^= 1;
    }
  }
  return out;
}

inline bool is_strict_one_shot(std::span<const std::uint8_t> fold_of) {
  return !fold_of.empty() &&
         std::all_of(fold_of.begin(), fold_of.end(), [](std::uint8_t f) { return f == kFoldRemoved; });
}

inline bool is_strict_one_shot(const FoldAssignment& a) { return is_strict_one_shot(a.fold_of); }

/// Stacker training data: logits restricted to the classes that occur in the
/// selected instances, with labels renumbered into [0, classes.size()).
struct TrainingSet {
  LogitTensor logits;
  std::vector<std::uint32_t> labels;
  std::vector<std::uint32_t> classes;  // original class index of each logit column
  bool used_full_support = false;      // one-shot fallback or no-CV source

  std::size_t retained_classes() const { return classes.size(); }
};

/// Builds a training set from `rows` of `source`.
inline TrainingSet make_training_set(const LogitTensor& source, std::span<const std::uint32_t> labels,
                                     std::span<const std::size_t> rows) {
  require(!rows.empty(), ErrorKind::Invariant, "training set would be empty");
  std::vector<std::uint32_t> present;
  for (auto r : rows) present.push_back(labels[r]);
  std::sort(present.begin(), present.end());
  present.erase(std::unique(present.begin(), present.end()), present.end());

  std::vector<std::uint32_t> remap(source.classes(), 0);
  for (std::size_t i = 0; i < present.size(); ++i) remap[present[i]] = static_cast<std::uint32_t>(i);

  TrainingSet ts;
  ts.logits = select_classes(select_instances(source, rows), present);
  ts.labels.reserve(rows.size());
  for (auto r : rows) ts.labels.push_back(remap[labels[r]]);
  ts.classes = std::move(present);
  return ts;
}

/// Indices of support instances in `fold` (0 or 1), or of all retained
/// instances when `fold` is negative.
inline std::vector<std::size_t> fold_members(std::span<const std::uint8_t> fold_of, int fold) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    const auto f = fold_of[i];
    if (f == kFoldRemoved) continue;
    if (fold < 0 || f == fold) rows.push_back(i);
  }
  return rows;
}

/// CV logits of the retained instances, or the full-support logits of every
/// instance when the episode is strict one-shot.
inline TrainingSet select_training_logits(const EpisodeBundle& bundle) {
  if (is_strict_one_shot(bundle.fold_assignment)) {
    std::vector<std::size_t> all(bundle.support_labels.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    auto ts = make_training_set(bundle.support_full_logits, bundle.support_labels, all);
    ts.used_full_support = true;
    return ts;
  }
  const auto rows = fold_members(bundle.fold_assignment, -1);
  return make_training_set(bundle.support_cv_logits, bundle.support_labels, rows);
}

}  // namespace fes
