#pragma once

// Synthetic episodes with a known generative model.
//
// For an instance of class y, extractor k and snapshot j emit
//
//   logit[c] = gain[k][j] * margin * [c == y] + noise_sigma * z
//
// with z standard normal. Extractors not listed as relevant have zero gain
// (pure noise). For relevant extractors z is independent across
// (instance, k, j, c). For irrelevant extractors consecutive snapshots share
// noise: z = sqrt(rho) * u[k][c] + sqrt(1 - rho) * e[k][j][c] with
// rho = irrelevant_snapshot_correlation. Support CV logits add a further
// cv_degradation * z to the full-support logits. Because the noise is
// isotropic and the class means differ only in one coordinate, the Bayes rule
// on query logits is argmax_c sum_{k,j} gain[k][j] * logit[k][j][c], whose
// accuracy has a one-dimensional integral form (see bayes_oracle_accuracy).

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "fes_stack/cv_assembly.hpp"
#include "fes_stack/episode.hpp"
#include "fes_stack/error.hpp"
#include "fes_stack/rng.hpp"

namespace fes {

/// Gain across snapshots: either explicit values (length J) or the curve
/// first + (last - first) * t^power, t = j / (J - 1).
struct GainCurve {
  double first = 0.0;
  double last = 1.0;
  double power = 1.0;
  std::vector<double> explicit_values;

  std::vector<double> materialize(std::size_t snapshots) const {
    if (!explicit_values.empty()) {
      require(explicit_values.size() == snapshots, ErrorKind::Config,
              "explicit gain curve has " + std::to_string(explicit_values.size()) + " values, J is " +
                  std::to_string(snapshots));
      return explicit_values;
    }
    std::vector<double> g(snapshots);
    for (std::size_t j = 0; j < snapshots; ++j) {
      const double t = snapshots == 1 ? 1.0 : static_cast<double>(j) / static_cast<double>(snapshots - 1);
      g[j] = first + (last - first) * std::pow(t, power);
    }
    return g;
  }
};

struct RelevantExtractor {
  std::size_t index = 0;
  GainCurve gain;
};

struct DomainProfile {
  std::string name = "synthetic";
  std::size_t class_pool_size = 50;
  std::size_t way_min = 5;
  std::size_t way_max = 10;
  std::size_t shot_min = 1;
  std::size_t shot_max = 10;
  std::size_t query_per_class = 10;
  double margin = 2.0;
  double noise_sigma = 1.0;
  double cv_degradation = 0.25;
  double irrelevant_snapshot_correlation = 0.0;
  std::vector<RelevantExtractor> relevant_extractors = {{0, {}}};

  void validate() const {
    require(!name.empty(), ErrorKind::Config, "profile needs a name");
    require(way_min >= 5 && way_min <= way_max && way_max <= class_pool_size, ErrorKind::Config,
            "profile '" + name + "': way range must lie within [5, class_pool_size]");
    require(shot_min >= 1 && shot_min <= shot_max, ErrorKind::Config,
            "profile '" + name + "': shot range must satisfy 1 <= min <= max");
    require(query_per_class >= 1, ErrorKind::Config, "profile '" + name + "': query_per_class must be >= 1");
    require(margin >= 0.0 && noise_sigma >= 0.0 && cv_degradation >= 0.0, ErrorKind::Config,
            "profile '" + name + "': margin, noise_sigma and cv_degradation must be >= 0");
    require(irrelevant_snapshot_correlation >= 0.0 && irrelevant_snapshot_correlation <= 1.0,
            ErrorKind::Config, "profile '" + name + "': irrelevant_snapshot_correlation must be in [0, 1]");
  }

  /// K x J gain matrix (zero rows for irrelevant extractors).
  std::vector<std::vector<double>> gains(std::size_t extractors, std::size_t snapshots) const {
    std::vector<std::vector<double>> g(extractors, std::vector<double>(snapshots, 0.0));
    for (const auto& r : relevant_extractors) {
      require(r.index < extractors, ErrorKind::Config,
              "profile '" + name + "': relevant extractor " + std::to_string(r.index) + " >= K");
      g[r.index] = r.gain.materialize(snapshots);
      for (double v : g[r.index]) require(v >= 0.0, ErrorKind::Config, "gain values must be >= 0");
    }
    return g;
  }
};

/// Samples one episode; `episode_id` defaults to a name derived from the seed.
inline EpisodeBundle sample_episode(const DomainProfile& profile, std::size_t extractors, std::size_t snapshots,
                                    std::uint64_t seed, std::string episode_id = {}) {
  profile.validate();
  require(extractors >= 1 && snapshots >= 1, ErrorKind::Config, "K and J must be >= 1");
  const auto gains = profile.gains(extractors, snapshots);

  Rng shape_rng(derive_seed(seed, 1));
  const auto way = static_cast<std::size_t>(shape_rng.uniform_int(profile.way_min, profile.way_max));
  std::vector<std::size_t> pool(profile.class_pool_size);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  for (std::size_t i = 0; i < way; ++i) {
    const auto j = static_cast<std::size_t>(shape_rng.uniform_int(i, pool.size() - 1));
    std::swap(pool[i], pool[j]);
  }

  EpisodeBundle b;
  b.domain_name = profile.name;
  b.seed = seed;
  if (episode_id.empty()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ep-%016llx", static_cast<unsigned long long>(seed));
    episode_id = buf;
  }
  b.episode_id = std::move(episode_id);

  char name_buf[32];
  for (std::size_t c = 0; c < way; ++c) {
    std::snprintf(name_buf, sizeof name_buf, "class_%03zu", pool[c]);
    b.class_names.emplace_back(name_buf);
  }
  for (std::size_t c = 0; c < way; ++c) {
    const auto shots = shape_rng.uniform_int(profile.shot_min, profile.shot_max);
    for (std::uint64_t s = 0; s < shots; ++s) b.support_labels.push_back(static_cast<std::uint32_t>(c));
  }
  for (std::size_t c = 0; c < way; ++c)
    for (std::size_t q = 0; q < profile.query_per_class; ++q)
      b.query_labels.push_back(static_cast<std::uint32_t>(c));

  std::vector<char> relevant(extractors, 0);
  for (const auto& r : profile.relevant_extractors) relevant[r.index] = 1;
  const double shared_scale = std::sqrt(profile.irrelevant_snapshot_correlation);
  const double own_scale = std::sqrt(1.0 - profile.irrelevant_snapshot_correlation);

  auto draw = [&](std::span<const std::uint32_t> labels, Rng& rng) {
    LogitTensor t({labels.size(), extractors, snapshots, way});
    std::vector<double> shared(way);
    for (std::size_t n = 0; n < labels.size(); ++n)
      for (std::size_t k = 0; k < extractors; ++k) {
        if (!relevant[k])
          for (auto& u : shared) u = rng.normal();
        for (std::size_t j = 0; j < snapshots; ++j)
          for (std::size_t c = 0; c < way; ++c) {
            const double mean = c == labels[n] ? gains[k][j] * profile.margin : 0.0;
            const double z = relevant[k] ? rng.normal() : shared_scale * shared[c] + own_scale * rng.normal();
            t(n, k, j, c) = static_cast<float>(mean + profile.noise_sigma * z);
          }
      }
    return t;
  };

  Rng support_rng(derive_seed(seed, 2));
  Rng cv_rng(derive_seed(seed, 3));
  Rng query_rng(derive_seed(seed, 4));
  b.support_full_logits = draw(b.support_labels, support_rng);
  b.support_cv_logits = b.support_full_logits;
  for (float& v : b.support_cv_logits.values())
    v = static_cast<float>(v + profile.cv_degradation * cv_rng.normal());
  b.query_logits = draw(b.query_labels, query_rng);
  b.fold_assignment = stratified_two_fold_split(b.support_labels, derive_seed(seed, 5)).fold_of;

  validate(b);
  return b;
}

namespace detail {

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace detail

/// P(correct) for `classes`-way argmax when the true class leads every
/// competitor by `snr` noise standard deviations:
///   integral phi(z) * Phi(z + snr)^(classes - 1) dz  (composite Simpson).
inline double argmax_accuracy(double snr, std::size_t classes) {
  require(classes >= 1, ErrorKind::Config, "need at least one class");
  if (classes == 1) return 1.0;
  if (std::isinf(snr)) return 1.0;
  const double lo = -12.0;
  const double hi = 12.0;
  const int intervals = 4000;
  const double h = (hi - lo) / intervals;
  double sum = 0.0;
  for (int i = 0; i <= intervals; ++i) {
    const double z = lo + i * h;
    const double weight = (i == 0 || i == intervals) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    sum += weight * detail::normal_pdf(z) * std::pow(detail::normal_cdf(z + snr), double(classes - 1));
  }
  return std::min(1.0, sum * h / 3.0);
}

/// Signal-to-noise ratio of the Bayes statistic: margin * ||gain|| / sigma.
inline double bayes_snr(const DomainProfile& profile, std::size_t extractors, std::size_t snapshots) {
  double sq = 0.0;
  for (const auto& row : profile.gains(extractors, snapshots))
    for (double g : row) sq += g * g;
  const double signal = profile.margin * std::sqrt(sq);
  if (profile.noise_sigma == 0.0) return signal > 0.0 ? INFINITY : 0.0;
  return signal / profile.noise_sigma;
}

/// Bayes-optimal query accuracy for a `classes`-way episode of this profile.
inline double bayes_oracle_accuracy(const DomainProfile& profile, std::size_t classes, std::size_t extractors,
                                    std::size_t snapshots) {
  return argmax_accuracy(bayes_snr(profile, extractors, snapshots), classes);
}

// JSON profile format:
// {
//   "name": "toy", "class_pool_size": 50, "way": [5, 10], "shots": [1, 10],
//   "query_per_class": 10, "margin": 2.0, "noise_sigma": 1.0, "cv_degradation": 0.25,
//   "irrelevant_snapshot_correlation": 0.0,
//   "relevant_extractors": [ {"index": 3, "gain": {"first": 0.1, "last": 1.0, "power": 1.0}},
//                            {"index": 5, "gain": [0.0, 0.5, 1.0]} ]
// }
// cv_degradation defaults to 0.25 * noise_sigma when omitted.

inline DomainProfile profile_from_json(const nlohmann::json& j) {
  DomainProfile p;
  try {
    p.name = j.at("name").get<std::string>();
    p.class_pool_size = j.value("class_pool_size", p.class_pool_size);
    if (j.contains("way")) {
      const auto way = j.at("way").get<std::vector<std::size_t>>();
      require(way.size() == 2, ErrorKind::Config, "'way' must be [min, max]");
      p.way_min = way[0];
      p.way_max = way[1];
    }
    if (j.contains("shots")) {
      const auto shots = j.at("shots").get<std::vector<std::size_t>>();
      require(shots.size() == 2, ErrorKind::Config, "'shots' must be [min, max]");
      p.shot_min = shots[0];
      p.shot_max = shots[1];
    }
    p.query_per_class = j.value("query_per_class", p.query_per_class);
    p.margin = j.value("margin", p.margin);
    p.noise_sigma = j.value("noise_sigma", p.noise_sigma);
    p.cv_degradation = j.value("cv_degradation", 0.25 * p.noise_sigma);
    p.irrelevant_snapshot_correlation =
        j.value("irrelevant_snapshot_correlation", p.irrelevant_snapshot_correlation);
    if (j.contains("relevant_extractors")) {
      p.relevant_extractors.clear();
      for (const auto& r : j.at("relevant_extractors")) {
        RelevantExtractor re;
        re.index = r.at("index").get<std::size_t>();
        if (r.contains("gain")) {
          const auto& g = r.at("gain");
          if (g.is_array()) {
            re.gain.explicit_values = g.get<std::vector<double>>();
          } else {
            re.gain.first = g.value("first", re.gain.first);
            re.gain.last = g.value("last", re.gain.last);
            re.gain.power = g.value("power", re.gain.power);
          }
        }
        p.relevant_extractors.push_back(std::move(re));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("invalid profile: ") + e.what());
  }
  p.validate();
  return p;
}

inline nlohmann::json profile_to_json(const DomainProfile& p) {
  nlohmann::json rel = nlohmann::json::array();
  for (const auto& r : p.relevant_extractors) {
    nlohmann::json gain;
    if (!r.gain.explicit_values.empty())
      gain = r.gain.explicit_values;
    else
      gain = {{"first", r.gain.first}, {"last", r.gain.last}, {"power", r.gain.power}};
    rel.push_back({{"index", r.index}, {"gain", gain}});
  }
  return {{"name", p.name},
          {"class_pool_size", p.class_pool_size},
          {"way", {p.way_min, p.way_max}},
          {"shots", {p.shot_min, p.shot_max}},
          {"query_per_class", p.query_per_class},
          {"margin", p.margin},
          {"noise_sigma", p.noise_sigma},
          {"cv_degradation", p.cv_degradation},
          {"irrelevant_snapshot_correlation", p.irrelevant_snapshot_correlation},
          {"relevant_extractors", rel}};
}

}  // namespace fes
