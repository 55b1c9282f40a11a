#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fes_stack/episode_io.hpp"
#include "fes_stack/error.hpp"
#include "fes_stack/kernel_io.hpp"
#include "fes_stack/model_selection.hpp"
#include "fes_stack/stats.hpp"

namespace fes {

struct MethodSpec {
  std::string name;
  StackerConfig config;
  AblationMode ablation = AblationMode::Full;
};

/// Per-episode results, one entry per method column.
struct EpisodeScores {
  std::string domain;
  std::string episode_id;
  std::vector<double> accuracy;
  std::vector<double> omission;

  bool operator==(const EpisodeScores&) const = default;
};

/// Episodes x methods results. Every method is scored on the same episodes.
struct ScoreTable {
  std::vector<std::string> methods;
  std::vector<EpisodeScores> episodes;

  bool operator==(const ScoreTable&) const = default;
};

struct RankGroup {
  std::string name;
  std::vector<std::string> domains;  // empty means every domain
};

struct MethodSummary {
  std::size_t n = 0;
  double mean = 0.0;
  std::optional<double> ci95_halfwidth;  // absent when n < 2
  double mean_omission = 0.0;
};

struct PairComparison {
  std::size_t a = 0;
  std::size_t b = 0;
  std::optional<PairedTTest> test;  // absent when n < 2
};

struct DomainReport {
  std::string name;
  std::vector<std::string> episode_ids;
  std::vector<MethodSummary> methods;
  std::vector<PairComparison> pairs;
};

struct GroupReport {
  std::string name;
  std::vector<std::string> domains;
  std::size_t episodes = 0;
  std::optional<FriedmanNemenyi> ranks;  // absent with fewer than 2 methods or episodes
};

struct EvalReport {
  std::vector<std::string> methods;
  std::vector<DomainReport> domains;
  std::vector<GroupReport> groups;
  ScoreTable scores;
};

inline std::vector<std::string> domains_in(const ScoreTable& t) {
  std::vector<std::string> names;
  for (const auto& e : t.episodes) names.push_back(e.domain);
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  return names;
}

/// Summary statistics, pairwise tests and rank groups for a score table.
inline EvalReport analyze(const ScoreTable& table, std::vector<RankGroup> groups = {}) {
  const std::size_t m = table.methods.size();
  require(m > 0, ErrorKind::Config, "report needs at least one method");
  require(!table.episodes.empty(), ErrorKind::Config, "report needs at least one episode");
  for (const auto& e : table.episodes) {
    require(e.accuracy.size() == m && e.omission.size() == m, ErrorKind::DimMismatch,
            "episode " + e.episode_id + " does not have a score for every method");
    for (double a : e.accuracy)
      require(a >= 0.0 && a <= 1.0, ErrorKind::Invariant, "episode " + e.episode_id + " has accuracy outside [0, 1]");
  }

  EvalReport report;
  report.methods = table.methods;
  report.scores = table;

  for (const auto& name : domains_in(table)) {
    DomainReport d;
    d.name = name;
    std::vector<std::vector<double>> acc(m), omit(m);
    for (const auto& e : table.episodes) {
      if (e.domain != name) continue;
      d.episode_ids.push_back(e.episode_id);
      for (std::size_t i = 0; i < m; ++i) {
        acc[i].push_back(e.accuracy[i]);
        omit[i].push_back(e.omission[i]);
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      MethodSummary s;
      s.n = acc[i].size();
      s.mean = mean_of(acc[i]);
      if (s.n >= 2) s.ci95_halfwidth = mean_ci95(acc[i]).halfwidth;
      s.mean_omission = mean_of(omit[i]);
      d.methods.push_back(s);
    }
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t b = a + 1; b < m; ++b) {
        PairComparison p{a, b, std::nullopt};
        if (acc[a].size() >= 2) p.test = paired_t_test(acc[a], acc[b]);
        d.pairs.push_back(p);
      }
    }
    report.domains.push_back(std::move(d));
  }

  if (groups.empty()) groups.push_back({"all", {}});
  const auto all_domains = domains_in(table);
  for (auto& g : groups) {
    for (const auto& dn : g.domains)
      require(std::find(all_domains.begin(), all_domains.end(), dn) != all_domains.end(), ErrorKind::Config,
              "rank group '" + g.name + "' names unknown domain '" + dn + "'");
    GroupReport gr;
    gr.name = g.name;
    gr.domains = g.domains.empty() ? all_domains : g.domains;
    std::vector<double> rows;
    for (const auto& e : table.episodes) {
      if (std::find(gr.domains.begin(), gr.domains.end(), e.domain) == gr.domains.end()) continue;
      rows.insert(rows.end(), e.accuracy.begin(), e.accuracy.end());
      ++gr.episodes;
    }
    if (m >= 2 && gr.episodes >= 2) gr.ranks = friedman_nemenyi(Matrix(gr.episodes, m, std::move(rows)));
    report.groups.push_back(std::move(gr));
  }
  return report;
}

struct EvalOptions {
  std::size_t jobs = 0;  // 0: hardware concurrency
  std::vector<RankGroup> groups;
  std::uint64_t seed = 0;  // recorded only; evaluation itself draws no random numbers
  std::function<void(std::size_t done, std::size_t total)> progress;
};

inline std::size_t resolve_jobs(std::size_t jobs) {
  if (jobs != 0) return jobs;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs `work(i)` for i in [0, count) on a worker pool. Exceptions are
/// collected and the one from the lowest index is rethrown, so failures are
/// reported the same way for any worker count.
inline void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& work) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        work(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(resolve_jobs(jobs), std::max<std::size_t>(count, 1));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Trains and scores every method on every episode. `load(i)` supplies episode i.
inline ScoreTable score_episodes(std::size_t count, const std::function<EpisodeBundle(std::size_t)>& load,
                                 const std::vector<MethodSpec>& methods, const EvalOptions& options = {}) {
  require(!methods.empty(), ErrorKind::Config, "evaluation needs at least one method");
  ScoreTable table;
  for (const auto& m : methods) table.methods.push_back(m.name);
  table.episodes.resize(count);

  std::mutex progress_mutex;
  std::size_t done = 0;
  parallel_for(count, options.jobs, [&](std::size_t i) {
    EpisodeBundle bundle = load(i);
    EpisodeScores& row = table.episodes[i];
    row.domain = bundle.domain_name;
    row.episode_id = bundle.episode_id;
    try {
      for (const auto& m : methods) {
        const auto stacker = train_stacker(bundle, m.config, m.ablation);
        row.accuracy.push_back(query_accuracy(stacker, bundle));
        row.omission.push_back(stacker.omission_rate);
      }
    } catch (const Error& e) {
      fail(e.kind(), "episode " + bundle.episode_id + ": " + e.message());
    }
    if (options.progress) {
      std::lock_guard lock(progress_mutex);
      options.progress(++done, count);
    }
  });
  return table;
}

inline EvalReport evaluate_suite(const std::vector<std::filesystem::path>& episode_dirs,
                                 const std::vector<MethodSpec>& methods, const EvalOptions& options = {}) {
  require(!episode_dirs.empty(), ErrorKind::Config, "no episodes to evaluate");
  auto load = [&](std::size_t i) {
    try {
      return load_episode(episode_dirs[i]);
    } catch (const Error& e) {
      fail(e.kind(), "episode " + episode_dirs[i].string() + ": " + e.message());
    }
  };
  return analyze(score_episodes(episode_dirs.size(), load, methods, options), options.groups);
}

// ---------------------------------------------------------------------------
// Serialisation

namespace detail {

// JSON number, or null when the value is not finite.
inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

inline nlohmann::json scores_to_json(const ScoreTable& t) {
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : t.episodes)
    eps.push_back({{"domain", e.domain}, {"episode_id", e.episode_id}, {"accuracy", e.accuracy}, {"omission", e.omission}});
  return {{"methods", t.methods}, {"episodes", eps}};
}

inline ScoreTable scores_from_json(const nlohmann::json& j) {
  try {
    ScoreTable t;
    t.methods = j.at("methods").get<std::vector<std::string>>();
    for (const auto& e : j.at("episodes")) {
      EpisodeScores s;
      s.domain = e.at("domain").get<std::string>();
      s.episode_id = e.at("episode_id").get<std::string>();
      s.accuracy = e.at("accuracy").get<std::vector<double>>();
      s.omission = e.at("omission").get<std::vector<double>>();
      t.episodes.push_back(std::move(s));
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, std::string("malformed score table: ") + e.what());
  }
}

inline nlohmann::json report_to_json(const EvalReport& r, std::optional<std::uint64_t> seed = std::nullopt) {
  using detail::finite_or_null;
  nlohmann::json j;
  j["schema_version"] = 1;
  j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  j["methods"] = r.methods;

  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : r.domains) {
    nlohmann::json dj;
    dj["name"] = d.name;
    dj["episodes"] = d.episode_ids.size();
    dj["single_episode"] = d.episode_ids.size() < 2;
    nlohmann::json ms = nlohmann::json::object();
    for (std::size_t i = 0; i < d.methods.size(); ++i) {
      const auto& s = d.methods[i];
      ms[r.methods[i]] = {{"n", s.n},
                          {"mean", s.mean},
                          {"ci95_halfwidth", s.ci95_halfwidth ? finite_or_null(*s.ci95_halfwidth) : nullptr},
                          {"mean_omission", s.mean_omission}};
    }
    dj["methods"] = ms;
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : d.pairs) {
      nlohmann::json pj{{"a", r.methods[p.a]}, {"b", r.methods[p.b]}};
      if (p.test) {
        pj["t"] = finite_or_null(p.test->t);
        pj["p"] = p.test->p;
        pj["mean_difference"] = p.test->mean_difference;
        pj["degenerate"] = p.test->degenerate;
      } else {
        pj["t"] = nullptr;
        pj["p"] = nullptr;
        pj["mean_difference"] = nullptr;
        pj["degenerate"] = nullptr;
      }
      pairs.push_back(pj);
    }
    dj["paired_t_tests"] = pairs;
    domains.push_back(dj);
  }
  j["domains"] = domains;

  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : r.groups) {
    nlohmann::json gj{{"name", g.name}, {"domains", g.domains}, {"episodes", g.episodes}};
    if (g.ranks) {
      const auto& f = *g.ranks;
      nlohmann::json ranks = nlohmann::json::object();
      for (std::size_t i = 0; i < f.mean_ranks.size(); ++i) ranks[r.methods[i]] = f.mean_ranks[i];
      nlohmann::json cliques = nlohmann::json::array();
      for (const auto& c : f.cliques) {
        std::vector<std::string> names;
        for (auto i : c) names.push_back(r.methods[i]);
        cliques.push_back(names);
      }
      gj["mean_ranks"] = ranks;
      gj["friedman_statistic"] = f.statistic;
      gj["friedman_p"] = f.p;
      gj["critical_difference"] = f.critical_difference ? nlohmann::json(*f.critical_difference) : nullptr;
      gj["cliques"] = cliques;
    } else {
      gj["mean_ranks"] = nullptr;
    }
    groups.push_back(gj);
  }
  j["rank_groups"] = groups;
  j["scores"] = scores_to_json(r.scores);
  return j;
}

/// Rows = domains, columns = methods, "mean±ci" accuracy in percent.
inline std::string summary_csv(const EvalReport& r) {
  std::string out = "domain";
  for (const auto& m : r.methods) out += "," + detail::csv_field(m);
  out += "\n";
  for (const auto& d : r.domains) {
    out += detail::csv_field(d.name);
    for (const auto& s : d.methods) {
      out += "," + detail::percent(s.mean);
      if (s.ci95_halfwidth) out += "±" + detail::percent(*s.ci95_halfwidth);
    }
    out += "\n";
  }
  return out;
}

/// Mean snapshot omission rate in percent, same layout as the summary.
inline std::string omission_csv(const EvalReport& r) {
  std::string out = "domain";
  for (const auto& m : r.methods) out += "," + detail::csv_field(m);
  out += "\n";
  for (const auto& d : r.domains) {
    out += detail::csv_field(d.name);
    for (const auto& s : d.methods) out += "," + detail::percent(s.mean_omission);
    out += "\n";
  }
  return out;
}

inline std::string ttests_csv(const EvalReport& r) {
  std::string out = "domain,method_a,method_b,n,mean_difference,t,p,degenerate\n";
  for (const auto& d : r.domains) {
    for (const auto& p : d.pairs) {
      out += detail::csv_field(d.name) + "," + detail::csv_field(r.methods[p.a]) + "," +
             detail::csv_field(r.methods[p.b]) + "," + std::to_string(d.episode_ids.size());
      if (p.test)
        out += "," + format_number(p.test->mean_difference) + "," + format_number(p.test->t) + "," +
               format_number(p.test->p) + "," + (p.test->degenerate ? "1" : "0");
      else
        out += ",,,,";
      out += "\n";
    }
  }
  return out;
}

inline std::string ranks_csv(const EvalReport& r) {
  std::string out = "group,method,mean_rank,critical_difference,friedman_statistic,friedman_p\n";
  for (const auto& g : r.groups) {
    if (!g.ranks) continue;
    const auto& f = *g.ranks;
    for (std::size_t i = 0; i < r.methods.size(); ++i)
      out += detail::csv_field(g.name) + "," + detail::csv_field(r.methods[i]) + "," + format_number(f.mean_ranks[i]) +
             "," + (f.critical_difference ? format_number(*f.critical_difference) : "") + "," +
             format_number(f.statistic) + "," + format_number(f.p) + "\n";
  }
  return out;
}

/// Writes report.json, summary.csv, omission.csv, ttests.csv and ranks.csv.
inline void write_report(const EvalReport& r, const std::filesystem::path& dir,
                         std::optional<std::uint64_t> seed = std::nullopt) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.json", report_to_json(r, seed).dump(2) + "\n");
  write_text(dir / "summary.csv", summary_csv(r));
  write_text(dir / "omission.csv", omission_csv(r));
  write_text(dir / "ttests.csv", ttests_csv(r));
  write_text(dir / "ranks.csv", ranks_csv(r));
}

/// Joins score tables column-wise. Every table must cover the same
/// (domain, episode_id) sequence; method names must be distinct.
inline ScoreTable merge_scores(const std::vector<ScoreTable>& tables) {
  require(!tables.empty(), ErrorKind::Config, "nothing to merge");
  ScoreTable out = tables.front();
  for (std::size_t t = 1; t < tables.size(); ++t) {
    const auto& other = tables[t];
    require(other.episodes.size() == out.episodes.size(), ErrorKind::Invariant,
            "reports cover different episode lists");
    for (const auto& m : other.methods)
      require(std::find(out.methods.begin(), out.methods.end(), m) == out.methods.end(), ErrorKind::Config,
              "method '" + m + "' appears in more than one report");
    out.methods.insert(out.methods.end(), other.methods.begin(), other.methods.end());
    for (std::size_t i = 0; i < out.episodes.size(); ++i) {
      auto& e = out.episodes[i];
      const auto& o = other.episodes[i];
      require(e.domain == o.domain && e.episode_id == o.episode_id, ErrorKind::Invariant,
              "reports cover different episode lists (first difference at " + o.domain + "/" + o.episode_id + ")");
      e.accuracy.insert(e.accuracy.end(), o.accuracy.begin(), o.accuracy.end());
      e.omission.insert(e.omission.end(), o.omission.begin(), o.omission.end());
    }
  }
  return out;
}

inline ScoreTable load_scores(const std::filesystem::path& report_json) {
  nlohmann::json j = nlohmann::json::parse(read_text(report_json), nullptr, false);
  require(!j.is_discarded(), ErrorKind::Schema, report_json.string() + " is not valid JSON");
  require(j.contains("scores"), ErrorKind::Schema, report_json.string() + " has no score table");
  return scores_from_json(j["scores"]);
}

}  // namespace fes
