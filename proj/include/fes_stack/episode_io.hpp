#pragma once

// On-disk episode bundle: a directory holding manifest.json plus raw
// little-endian payloads.
//
//   support_cv.bin      f32  N_support x K x J x C
//   support_full.bin    f32  N_support x K x J x C
//   query.bin           f32  N_query x K x J x C
//   support_labels.bin  u32  N_support
//   query_labels.bin    u32  N_query
//   folds.bin           u8   N_support   (0, 1, or 255 for removed)

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "fes_stack/episode.hpp"
#include "fes_stack/error.hpp"

namespace fes {

inline constexpr int kEpisodeSchemaVersion = 1;

namespace detail {

inline void put_u32_le(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32_le(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline std::vector<char> encode_f32(std::span<const float> values) {
  std::vector<char> out;
  out.reserve(values.size() * 4);
  for (float v : values) put_u32_le(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline std::vector<char> encode_u32(std::span<const std::uint32_t> values) {
  std::vector<char> out;
  out.reserve(values.size() * 4);
  for (auto v : values) put_u32_le(out, v);
  return out;
}

inline void write_file(const std::filesystem::path& path, const char* data, std::size_t size) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  os.write(data, static_cast<std::streamsize>(size));
  require(static_cast<bool>(os), ErrorKind::Io, "write failed for " + path.string());
}

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::Io, "missing or unreadable file " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

struct PayloadSpec {
  const char* name;
  const char* file;
  const char* dtype;
  std::size_t element_size;
};

inline constexpr PayloadSpec kPayloads[] = {
    {"support_cv", "support_cv.bin", "f32", 4},
    {"support_full", "support_full.bin", "f32", 4},
    {"query", "query.bin", "f32", 4},
    {"support_labels", "support_labels.bin", "u32", 4},
    {"query_labels", "query_labels.bin", "u32", 4},
    {"folds", "folds.bin", "u8", 1},
};

inline std::vector<std::size_t> shape_of(const TensorDims& d) { return {d.n, d.k, d.j, d.c}; }

inline std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t p = 1;
  for (auto s : shape) p *= s;
  return p;
}

}  // namespace detail

/// Manifest describing the payload files of a bundle.
inline nlohmann::json make_manifest(const EpisodeBundle& b) {
  using nlohmann::json;
  const auto& s = b.support_cv_logits.dims();
  const auto& q = b.query_logits.dims();

  std::vector<std::vector<std::size_t>> shapes = {
      detail::shape_of(s), detail::shape_of(s), detail::shape_of(q), {s.n}, {q.n}, {s.n}};

  json files = json::object();
  for (std::size_t i = 0; i < std::size(detail::kPayloads); ++i) {
    const auto& p = detail::kPayloads[i];
    files[p.name] = {{"path", p.file},
                     {"dtype", p.dtype},
                     {"byte_order", "little"},
                     {"shape", shapes[i]},
                     {"offset", 0},
                     {"bytes", detail::product(shapes[i]) * p.element_size}};
  }

  return json{{"schema_version", kEpisodeSchemaVersion},
              {"domain", b.domain_name},
              {"episode_id", b.episode_id},
              {"seed", b.seed},
              {"dims", {{"n_support", s.n}, {"n_query", q.n}, {"k", q.k}, {"j", q.j}, {"c", q.c}}},
              {"class_names", b.class_names},
              {"shots", class_counts(b.support_labels, q.c)},
              {"files", files}};
}

/// Writes `bundle` into `dir` (created if needed). Refuses invalid bundles.
inline void save_episode(const EpisodeBundle& bundle, const std::filesystem::path& dir) {
  validate(bundle);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorKind::Io, "cannot create directory " + dir.string() + ": " + ec.message());

  const auto cv = detail::encode_f32(bundle.support_cv_logits.values());
  const auto full = detail::encode_f32(bundle.support_full_logits.values());
  const auto query = detail::encode_f32(bundle.query_logits.values());
  const auto sl = detail::encode_u32(bundle.support_labels);
  const auto ql = detail::encode_u32(bundle.query_labels);
  detail::write_file(dir / "support_cv.bin", cv.data(), cv.size());
  detail::write_file(dir / "support_full.bin", full.data(), full.size());
  detail::write_file(dir / "query.bin", query.data(), query.size());
  detail::write_file(dir / "support_labels.bin", sl.data(), sl.size());
  detail::write_file(dir / "query_labels.bin", ql.data(), ql.size());
  detail::write_file(dir / "folds.bin", reinterpret_cast<const char*>(bundle.fold_assignment.data()),
                     bundle.fold_assignment.size());

  const std::string manifest = make_manifest(bundle).dump(2) + "\n";
  detail::write_file(dir / "manifest.json", manifest.data(), manifest.size());
}

/// Reads and validates a bundle directory.
inline EpisodeBundle load_episode(const std::filesystem::path& dir) {
  using nlohmann::json;
  const auto manifest_path = dir / "manifest.json";
  const auto text = detail::read_file(manifest_path);
  json m;
  try {
    m = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, manifest_path.string() + ": " + e.what());
  }

  EpisodeBundle b;
  TensorDims support{}, query{};
  try {
    const int version = m.at("schema_version").get<int>();
    require(version == kEpisodeSchemaVersion, ErrorKind::Schema,
            manifest_path.string() + ": unknown schema_version " + std::to_string(version));
    b.domain_name = m.at("domain").get<std::string>();
    b.episode_id = m.at("episode_id").get<std::string>();
    b.seed = m.at("seed").get<std::uint64_t>();
    b.class_names = m.at("class_names").get<std::vector<std::string>>();
    const auto& d = m.at("dims");
    support = {d.at("n_support").get<std::size_t>(), d.at("k").get<std::size_t>(),
               d.at("j").get<std::size_t>(), d.at("c").get<std::size_t>()};
    query = {d.at("n_query").get<std::size_t>(), support.k, support.j, support.c};
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, manifest_path.string() + ": " + e.what());
  }

  const std::vector<std::vector<std::size_t>> expected = {
      detail::shape_of(support), detail::shape_of(support), detail::shape_of(query),
      {support.n}, {query.n}, {support.n}};

  std::vector<std::vector<char>> payloads;
  for (std::size_t i = 0; i < std::size(detail::kPayloads); ++i) {
    const auto& p = detail::kPayloads[i];
    std::string file = p.file;
    try {
      const auto& entry = m.at("files").at(p.name);
      file = entry.at("path").get<std::string>();
      require(entry.at("dtype").get<std::string>() == p.dtype, ErrorKind::Schema,
              std::string("unexpected dtype for ") + p.name);
      require(entry.at("shape").get<std::vector<std::size_t>>() == expected[i], ErrorKind::DimMismatch,
              std::string("declared shape of ") + p.name + " disagrees with dims");
    } catch (const json::exception& e) {
      fail(ErrorKind::Schema, manifest_path.string() + ": " + e.what());
    }
    auto bytes = detail::read_file(dir / file);
    const std::size_t want = detail::product(expected[i]) * p.element_size;
    require(bytes.size() == want, ErrorKind::DimMismatch,
            (dir / file).string() + ": expected " + std::to_string(want) + " bytes, found " +
                std::to_string(bytes.size()));
    payloads.push_back(std::move(bytes));
  }

  auto decode_f32 = [](const std::vector<char>& bytes) {
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = std::bit_cast<float>(detail::get_u32_le(bytes.data() + 4 * i));
    return out;
  };
  auto decode_u32 = [](const std::vector<char>& bytes) {
    std::vector<std::uint32_t> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::get_u32_le(bytes.data() + 4 * i);
    return out;
  };

  b.support_cv_logits = LogitTensor(support, decode_f32(payloads[0]));
  b.support_full_logits = LogitTensor(support, decode_f32(payloads[1]));
  b.query_logits = LogitTensor(query, decode_f32(payloads[2]));
  b.support_labels = decode_u32(payloads[3]);
  b.query_labels = decode_u32(payloads[4]);
  b.fold_assignment.assign(payloads[5].begin(), payloads[5].end());

  validate(b);
  return b;
}

}  // namespace fes
