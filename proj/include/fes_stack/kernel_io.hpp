#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fes_stack/error.hpp"
#include "fes_stack/model_selection.hpp"

namespace fes {

// Shortest-enough text for a double that reads back bit-identical.
inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  require(j.is_array() && !j.empty(), ErrorKind::Schema, "matrix must be a non-empty array of rows");
  const std::size_t cols = j.front().size();
  std::vector<double> values;
  for (const auto& row : j) {
    require(row.is_array() && row.size() == cols, ErrorKind::Schema, "matrix rows must have equal length");
    for (const auto& v : row) {
      require(v.is_number(), ErrorKind::Schema, "matrix entries must be numbers");
      values.push_back(v.get<double>());
    }
  }
  return Matrix(j.size(), cols, std::move(values));
}

inline Termination parse_termination(std::string_view s) {
  for (auto t : {Termination::GradientTolerance, Termination::LossTolerance, Termination::MaxIterations,
                 Termination::LineSearchFailure})
    if (s == to_string(t)) return t;
  fail(ErrorKind::Schema, "unknown termination '" + std::string(s) + "'");
}

inline constexpr int kKernelSchemaVersion = 1;

/// Kernel JSON: raw parameters, effective kernel and fit diagnostics.
inline nlohmann::json stacker_to_json(const TrainedStacker& s) {
  nlohmann::json j;
  j["schema_version"] = kKernelSchemaVersion;
  j["method"] = std::string(to_string(s.method));
  j["ablation"] = std::string(to_string(s.ablation));
  j["snapshot"] = s.snapshot ? nlohmann::json(*s.snapshot) : nlohmann::json(nullptr);
  j["full_snapshots"] = s.full_snapshots;
  j["extractors"] = s.effective.rows();
  if (s.method == Method::ConFes) {
    const auto raw = s.raw_confes();
    j["raw"] = {{"depthwise", matrix_to_json(raw.depthwise)}, {"global", matrix_to_json(raw.global)}};
    j["geometry"] = {{"snapshots", s.geometry.snapshots},
                     {"conv_size", s.geometry.conv_size},
                     {"stride", s.geometry.stride},
                     {"feature_length", s.geometry.feature_length()}};
  } else {
    j["raw"] = matrix_to_json(s.raw_fes().raw);
  }
  j["effective"] = matrix_to_json(s.effective);
  j["lambda1"] = s.lambda1;
  j["lambda2"] = s.lambda2;
  j["diagnostics"] = {{"final_loss", s.final_loss},
                      {"grad_inf_norm", s.grad_inf_norm},
                      {"iterations", s.iterations},
                      {"termination", to_string(s.termination)},
                      {"omission_rate", s.omission_rate},
                      {"used_full_support", s.used_full_support},
                      {"trained_classes", s.trained_classes},
                      {"fold_trainings", s.fold_trainings}};
  return j;
}

inline TrainedStacker stacker_from_json(const nlohmann::json& j) {
  try {
    require(j.value("schema_version", 0) == kKernelSchemaVersion, ErrorKind::Schema,
            "unsupported kernel schema version");
    TrainedStacker s;
    s.method = parse_method(j.at("method").get<std::string>());
    s.ablation = parse_ablation(j.at("ablation").get<std::string>());
    if (!j.at("snapshot").is_null()) s.snapshot = j.at("snapshot").get<std::size_t>();
    s.full_snapshots = j.at("full_snapshots").get<std::size_t>();
    s.effective = matrix_from_json(j.at("effective"));
    if (s.method == Method::ConFes) {
      const auto& g = j.at("geometry");
      s.geometry = ConvGeometry{g.at("snapshots").get<std::size_t>(), g.at("conv_size").get<std::size_t>(),
                                g.at("stride").get<std::size_t>()};
      s.geometry.validate();
      const Matrix d = matrix_from_json(j.at("raw").at("depthwise"));
      const Matrix gl = matrix_from_json(j.at("raw").at("global"));
      s.params.assign(d.values().begin(), d.values().end());
      s.params.insert(s.params.end(), gl.values().begin(), gl.values().end());
      const ConFesKernel k = s.raw_confes();
      require(expand_confes(k) == s.effective, ErrorKind::Invariant,
              "ConFES raw kernels do not expand to the stored effective kernel");
    } else {
      const Matrix raw = matrix_from_json(j.at("raw"));
      require(raw.rows() == s.effective.rows() && raw.cols() == s.effective.cols(), ErrorKind::DimMismatch,
              "raw and effective kernel shapes differ");
      require(relu(raw) == s.effective, ErrorKind::Invariant, "effective kernel is not relu(raw)");
      s.params.assign(raw.values().begin(), raw.values().end());
    }
    s.lambda1 = j.at("lambda1").get<double>();
    s.lambda2 = j.at("lambda2").get<double>();
    const auto& d = j.at("diagnostics");
    s.final_loss = d.at("final_loss").get<double>();
    s.grad_inf_norm = d.at("grad_inf_norm").get<double>();
    s.iterations = d.at("iterations").get<std::size_t>();
    s.termination = parse_termination(d.at("termination").get<std::string>());
    s.omission_rate = d.at("omission_rate").get<double>();
    s.used_full_support = d.at("used_full_support").get<bool>();
    s.trained_classes = d.at("trained_classes").get<std::size_t>();
    s.fold_trainings = d.at("fold_trainings").get<std::size_t>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, std::string("malformed kernel file: ") + e.what());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << text;
  require(static_cast<bool>(out), ErrorKind::Io, "failed writing " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void save_stacker(const TrainedStacker& s, const std::filesystem::path& path) {
  write_text(path, stacker_to_json(s).dump(2) + "\n");
}

inline TrainedStacker load_stacker(const std::filesystem::path& path) {
  const auto text = read_text(path);
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  require(!j.is_discarded(), ErrorKind::Schema, path.string() + " is not valid JSON");
  return stacker_from_json(j);
}

/// Heatmap CSV: one row per extractor, one column per snapshot position.
inline std::string matrix_csv(const Matrix& m, const std::string& column_prefix) {
  std::string out = "extractor";
  for (std::size_t c = 0; c < m.cols(); ++c) out += "," + column_prefix + std::to_string(c);
  out += "\n";
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out += std::to_string(r);
    for (std::size_t c = 0; c < m.cols(); ++c) out += "," + format_number(m(r, c));
    out += "\n";
  }
  return out;
}

/// Writes kernel heatmaps into `dir` and returns the file names written:
/// kernel.csv for flat kernels, depthwise/global/expanded CSVs for ConFES.
inline std::vector<std::string> export_kernel_csv(const TrainedStacker& s, const std::filesystem::path& dir) {
  std::vector<std::string> written;
  auto put = [&](const std::string& name, const Matrix& m, const std::string& prefix) {
    write_text(dir / name, matrix_csv(m, prefix));
    written.push_back(name);
  };
  if (s.method == Method::ConFes) {
    const auto raw = s.raw_confes();
    put("depthwise.csv", relu(raw.depthwise), "b");
    put("global.csv", relu(raw.global), "m");
    put("expanded.csv", s.effective, "j");
  } else {
    put("kernel.csv", s.effective, "j");
  }
  return written;
}

}  // namespace fes
