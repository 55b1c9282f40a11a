// fes_stack: synthetic episode generation, stacker training and evaluation.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <glob.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fes_stack/fes_stack.hpp"

namespace fs = std::filesystem;

namespace {

struct StackerFlags {
  std::string method = "fes";
  double ridge = 1e-2;
  std::size_t conv_size = 9;
  std::size_t stride = 4;
  std::string lambda_pool = "default";
};

void add_stacker_flags(CLI::App* cmd, StackerFlags& f, bool method_flag = true) {
  if (method_flag)
    cmd->add_option("--method", f.method, "Stacking method: fes, confes or refes")->capture_default_str();
  cmd->add_option("--ridge", f.ridge, "Ridge strength on raw FES/ConFES weights")->capture_default_str();
  cmd->add_option("--conv-size", f.conv_size, "ConFES depthwise kernel size")->capture_default_str();
  cmd->add_option("--stride", f.stride, "ConFES stride")->capture_default_str();
  cmd->add_option("--lambda-pool", f.lambda_pool,
                  "Comma-separated ReFES strength pool used for both penalties, or 'default'")
      ->capture_default_str();
}

std::vector<double> parse_pool(const std::string& text) {
  if (text == "default") return fes::LambdaGrid::default_pool();
  std::vector<double> pool;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      pool.push_back(std::stod(item, &used));
      fes::require(used == item.size(), fes::ErrorKind::Config, "");
    } catch (const std::exception&) {
      fes::fail(fes::ErrorKind::Config, "bad --lambda-pool entry '" + item + "'");
    }
  }
  return pool;
}

fes::StackerConfig stacker_config(const StackerFlags& f, const std::string& method) {
  fes::StackerConfig cfg;
  cfg.method = fes::parse_method(method);
  cfg.ridge_strength = f.ridge;
  cfg.conv_size = f.conv_size;
  cfg.stride = f.stride;
  const auto pool = parse_pool(f.lambda_pool);
  cfg.grid = {pool, pool};
  cfg.grid.validate();
  fes::require(cfg.ridge_strength >= 0.0, fes::ErrorKind::Config, "--ridge must be >= 0");
  return cfg;
}

std::uint64_t parse_u64(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used, 0);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  fes::fail(fes::ErrorKind::Config, std::string("invalid ") + what + " '" + s + "'");
}

// --seed, else FES_STACK_SEED, else 0.
std::uint64_t resolve_seed(const std::optional<std::string>& flag) {
  if (flag) return parse_u64(*flag, "--seed");
  if (const char* env = std::getenv("FES_STACK_SEED"); env && *env) return parse_u64(env, "FES_STACK_SEED");
  return 0;
}

bool has_glob_chars(const std::string& s) { return s.find_first_of("*?[") != std::string::npos; }

void collect_episode_dirs(const fs::path& p, std::vector<fs::path>& out) {
  if (fs::is_regular_file(p) && p.filename() == "manifest.json") {
    out.push_back(p.parent_path());
    return;
  }
  fes::require(fs::is_directory(p), fes::ErrorKind::Config, "episode path " + p.string() + " does not exist");
  if (fs::exists(p / "manifest.json")) {
    out.push_back(p);
    return;
  }
  for (const auto& entry : fs::recursive_directory_iterator(p))
    if (entry.is_regular_file() && entry.path().filename() == "manifest.json") out.push_back(entry.path().parent_path());
}

/// Expands globs and scans directories for episode bundles; sorted, without
/// duplicate paths.
std::vector<fs::path> discover_episodes(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    if (!has_glob_chars(a)) {
      collect_episode_dirs(a, out);
      continue;
    }
    glob_t g{};
    const int rc = ::glob(a.c_str(), 0, nullptr, &g);
    std::vector<std::string> matches(g.gl_pathv, g.gl_pathv + g.gl_pathc);
    globfree(&g);
    fes::require(rc == 0 && !matches.empty(), fes::ErrorKind::Config, "no episodes match '" + a + "'");
    for (const auto& m : matches) collect_episode_dirs(m, out);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  fes::require(!out.empty(), fes::ErrorKind::Config, "no episode bundles found");
  return out;
}

// ConFES geometry is checked against every episode's snapshot count before
// any training starts.
void check_geometry(const std::vector<fs::path>& episodes, const fes::StackerConfig& cfg) {
  if (cfg.method != fes::Method::ConFes) return;
  std::optional<std::size_t> checked;
  for (const auto& dir : episodes) {
    nlohmann::json m = nlohmann::json::parse(fes::read_text(dir / "manifest.json"), nullptr, false);
    fes::require(!m.is_discarded(), fes::ErrorKind::Schema, (dir / "manifest.json").string() + " is not valid JSON");
    const auto j = m.at("dims").at("j").get<std::size_t>();
    if (checked == j) continue;
    fes::conv_geometry(cfg, j);
    checked = j;
  }
}

std::vector<fes::RankGroup> parse_groups(const std::vector<std::string>& specs) {
  std::vector<fes::RankGroup> groups;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    fes::require(eq != std::string::npos && eq > 0, fes::ErrorKind::Config,
                 "--group expects NAME=domain1,domain2 (got '" + s + "')");
    fes::RankGroup g;
    g.name = s.substr(0, eq);
    std::stringstream ss(s.substr(eq + 1));
    std::string d;
    while (std::getline(ss, d, ','))
      if (!d.empty()) g.domains.push_back(d);
    fes::require(!g.domains.empty(), fes::ErrorKind::Config, "--group " + g.name + " lists no domains");
    groups.push_back(std::move(g));
  }
  return groups;
}

std::string method_label(const std::string& method, fes::AblationMode mode) {
  if (mode == fes::AblationMode::Full) return method;
  return method + ":" + std::string(fes::to_string(mode));
}

void report_progress(const char* what, std::size_t done, std::size_t total) {
  const std::size_t step = std::max<std::size_t>(1, total / 20);
  if (done % step == 0 || done == total) std::fprintf(stderr, "[%s] %zu/%zu episodes\n", what, done, total);
}

struct Range {
  std::size_t lo = SIZE_MAX;
  std::size_t hi = 0;
  double sum = 0.0;
  void add(std::size_t v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += static_cast<double>(v);
  }
};

// ----------------------------------------------------------------------------

int cmd_synth(const std::vector<std::string>& profiles, std::size_t count, std::size_t k, std::size_t j,
              const std::optional<std::string>& seed_flag, const std::string& out) {
  const std::uint64_t seed = resolve_seed(seed_flag);
  fes::require(count > 0, fes::ErrorKind::Config, "--count must be positive");

  std::printf("%-16s %8s %18s %22s %18s\n", "domain", "episodes", "way min/mean/max", "support min/mean/max",
              "query min/mean/max");
  for (std::size_t p = 0; p < profiles.size(); ++p) {
    nlohmann::json pj = nlohmann::json::parse(fes::read_text(profiles[p]), nullptr, false);
    fes::require(!pj.is_discarded(), fes::ErrorKind::Config, profiles[p] + " is not valid JSON");
    const auto profile = fes::profile_from_json(pj);
    profile.gains(k, j);  // rejects relevant extractor indices >= K early

    Range way, support, query;
    for (std::size_t i = 0; i < count; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "ep%04zu", i);
      const auto bundle = fes::sample_episode(profile, k, j, fes::derive_seed(seed, p + 1, i), id);
      fes::save_episode(bundle, fs::path(out) / profile.name / id);
      way.add(bundle.classes());
      support.add(bundle.support_labels.size());
      query.add(bundle.query_labels.size());
    }
    const double n = static_cast<double>(count);
    auto cell = [&](const Range& r) {
      char buf[48];
      std::snprintf(buf, sizeof buf, "%zu/%.1f/%zu", r.lo, r.sum / n, r.hi);
      return std::string(buf);
    };
    std::printf("%-16s %8zu %18s %22s %18s\n", profile.name.c_str(), count, cell(way).c_str(),
                cell(support).c_str(), cell(query).c_str());
  }
  return 0;
}

int cmd_train(const std::string& episode, const StackerFlags& flags, const std::string& ablation,
              const std::string& out) {
  const auto cfg = stacker_config(flags, flags.method);
  const auto mode = fes::parse_ablation(ablation);
  const auto bundle = fes::load_episode(episode);
  if (cfg.method == fes::Method::ConFes) fes::conv_geometry(cfg, bundle.snapshots());
  fes::TrainedStacker s;
  try {
    s = fes::train_stacker(bundle, cfg, mode);
  } catch (const fes::Error& e) {
    fes::fail(e.kind(), "episode " + bundle.episode_id + ": " + e.message());
  }
  fes::save_stacker(s, out);
  std::printf("episode=%s method=%s ablation=%s lambda1=%s lambda2=%s iterations=%zu termination=%s omission=%s\n",
              bundle.episode_id.c_str(), std::string(fes::to_string(s.method)).c_str(),
              std::string(fes::to_string(s.ablation)).c_str(), fes::format_number(s.lambda1).c_str(),
              fes::format_number(s.lambda2).c_str(), s.iterations, fes::to_string(s.termination),
              fes::format_number(s.omission_rate).c_str());
  return 0;
}

int cmd_predict(const std::string& kernel, const std::string& episode, const std::string& split,
                const std::string& out) {
  const auto s = fes::load_stacker(kernel);
  const auto bundle = fes::load_episode(episode);
  fes::require(split == "query" || split == "support", fes::ErrorKind::Config, "--split must be query or support");
  const bool query = split == "query";
  const auto& logits = query ? bundle.query_logits : bundle.support_full_logits;
  const auto& labels = query ? bundle.query_labels : bundle.support_labels;
  fes::require(logits.extractors() == s.effective.rows() && logits.snapshots() == s.full_snapshots,
               fes::ErrorKind::DimMismatch,
               "episode " + bundle.episode_id + " has shape " + fes::to_string(logits.dims()) +
                   ", which does not match the kernel");
  const auto pred = fes::predict(s, logits);

  std::string csv = "instance,predicted,label";
  for (std::size_t c = 0; c < logits.classes(); ++c) csv += ",p" + std::to_string(c);
  csv += "\n";
  for (std::size_t n = 0; n < pred.labels.size(); ++n) {
    csv += std::to_string(n) + "," + std::to_string(pred.labels[n]) + "," + std::to_string(labels[n]);
    for (std::size_t c = 0; c < logits.classes(); ++c) csv += "," + fes::format_number(pred.probabilities(n, c));
    csv += "\n";
  }
  fes::write_text(out, csv);
  std::printf("episode=%s split=%s accuracy=%s\n", bundle.episode_id.c_str(), split.c_str(),
              fes::format_number(fes::accuracy(pred.labels, labels)).c_str());
  return 0;
}

int run_suite(const char* what, const std::vector<std::string>& episode_args, const std::vector<fes::MethodSpec>& methods,
              std::size_t jobs, const std::vector<std::string>& group_specs,
              const std::optional<std::string>& seed_flag, const std::string& out) {
  const auto episodes = discover_episodes(episode_args);
  for (const auto& m : methods) check_geometry(episodes, m.config);
  fes::EvalOptions options;
  options.jobs = jobs;
  options.groups = parse_groups(group_specs);
  options.seed = resolve_seed(seed_flag);
  options.progress = [what](std::size_t done, std::size_t total) { report_progress(what, done, total); };
  const auto report = fes::evaluate_suite(episodes, methods, options);
  fes::write_report(report, out, options.seed);
  std::cout << fes::summary_csv(report);
  return 0;
}

int cmd_compare(const std::vector<std::string>& reports, const std::vector<std::string>& group_specs,
                const std::string& out) {
  std::vector<fes::ScoreTable> tables;
  std::optional<std::uint64_t> seed;
  bool same_seed = true;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    nlohmann::json j = nlohmann::json::parse(fes::read_text(reports[i]), nullptr, false);
    fes::require(!j.is_discarded() && j.contains("scores"), fes::ErrorKind::Schema,
                 reports[i] + " is not an evaluation report");
    tables.push_back(fes::scores_from_json(j["scores"]));
    std::optional<std::uint64_t> s;
    if (j.contains("seed") && j["seed"].is_number_unsigned()) s = j["seed"].get<std::uint64_t>();
    if (i == 0)
      seed = s;
    else if (s != seed)
      same_seed = false;
  }
  const auto report = fes::analyze(fes::merge_scores(tables), parse_groups(group_specs));
  fes::write_report(report, out, same_seed ? seed : std::nullopt);
  std::cout << fes::summary_csv(report);
  return 0;
}

int cmd_export_kernel(const std::string& kernel, const std::string& out) {
  const auto s = fes::load_stacker(kernel);
  for (const auto& name : fes::export_kernel_csv(s, out)) std::printf("%s\n", (fs::path(out) / name).string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature extractor stacking: synthetic episodes, training and evaluation"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate synthetic episode bundles from domain profiles");
  std::vector<std::string> profiles;
  std::size_t count = 600, k = 8, j = 41;
  std::optional<std::string> seed;
  std::string out;
  synth->add_option("--profile", profiles, "Domain profile JSON (repeatable)")->required();
  synth->add_option("--count", count, "Episodes per profile")->capture_default_str();
  synth->add_option("--k", k, "Number of feature extractors")->capture_default_str();
  synth->add_option("--j", j, "Snapshots per extractor")->capture_default_str();
  synth->add_option("--seed", seed, "Root seed (falls back to FES_STACK_SEED)");
  synth->add_option("--out", out, "Output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Train a stacking kernel on one episode");
  StackerFlags train_flags;
  std::string episode, ablation = "full";
  add_stacker_flags(train, train_flags);
  train->add_option("--episode", episode, "Episode bundle directory")->required();
  train->add_option("--ablation", ablation, "Ablation mode")->capture_default_str();
  train->add_option("--out", out, "Kernel JSON output path")->required();

  // predict
  auto* predict = app.add_subcommand("predict", "Predict with a trained kernel");
  std::string kernel, split = "query";
  predict->add_option("--kernel", kernel, "Kernel JSON from 'train'")->required();
  predict->add_option("--episode", episode, "Episode bundle directory")->required();
  predict->add_option("--split", split, "query or support")->capture_default_str();
  predict->add_option("--out", out, "Prediction CSV output path")->required();

  // evaluate / ablate share the suite flags
  StackerFlags suite_flags;
  std::vector<std::string> methods{"fes"}, episodes, groups;
  std::size_t jobs = 0;
  auto add_suite_flags = [&](CLI::App* cmd) {
    add_stacker_flags(cmd, suite_flags, false);
    cmd->add_option("--method", methods, "Stacking method (repeatable)")->capture_default_str();
    cmd->add_option("--episodes", episodes, "Episode directories or globs, scanned recursively")->required();
    cmd->add_option("--jobs", jobs, "Worker threads (0: all cores)")->capture_default_str();
    cmd->add_option("--group", groups, "Rank group NAME=domain1,domain2 (repeatable; default: all domains)");
    cmd->add_option("--seed", seed, "Seed recorded in the report (falls back to FES_STACK_SEED)");
    cmd->add_option("--out", out, "Report directory")->required();
  };
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate methods on a cached episode list");
  add_suite_flags(evaluate);
  evaluate->add_option("--ablation", ablation, "Ablation mode applied to every method")->capture_default_str();
  auto* ablate = app.add_subcommand("ablate", "Evaluate every ablation mode for each method");
  add_suite_flags(ablate);

  // compare
  auto* compare = app.add_subcommand("compare", "Merge evaluation reports and recompute the statistics");
  std::vector<std::string> reports;
  compare->add_option("--reports", reports, "report.json files covering the same episodes")->required();
  compare->add_option("--group", groups, "Rank group NAME=domain1,domain2 (repeatable)");
  compare->add_option("--out", out, "Output directory")->required();

  // export-kernel
  auto* export_kernel = app.add_subcommand("export-kernel", "Write kernel heatmap CSVs");
  export_kernel->add_option("--kernel", kernel, "Kernel JSON from 'train'")->required();
  export_kernel->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(profiles, count, k, j, seed, out);
    if (train->parsed()) return cmd_train(episode, train_flags, ablation, out);
    if (predict->parsed()) return cmd_predict(kernel, episode, split, out);
    if (evaluate->parsed() || ablate->parsed()) {
      std::vector<fes::MethodSpec> specs;
      if (evaluate->parsed()) {
        const auto mode = fes::parse_ablation(ablation);
        for (const auto& m : methods) specs.push_back({method_label(m, mode), stacker_config(suite_flags, m), mode});
      } else {
        for (const auto& m : methods)
          for (auto mode : fes::kAllAblations)
            specs.push_back({method_label(m, mode), stacker_config(suite_flags, m), mode});
      }
      return run_suite(evaluate->parsed() ? "evaluate" : "ablate", episodes, specs, jobs, groups, seed, out);
    }
    if (compare->parsed()) return cmd_compare(reports, groups, out);
    if (export_kernel->parsed()) return cmd_export_kernel(kernel, out);
  } catch (const fes::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.kind() == fes::ErrorKind::Config ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
