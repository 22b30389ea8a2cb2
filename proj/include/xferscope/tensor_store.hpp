#pragma once

// Binary persistence of representation matrices ("XREP1" files) and the
// JSON experiment manifest that binds them to (source, target, layer, stage).
//
// Matrix file layout, all integers little-endian:
//   [0..4]   ASCII "XREP1"
//   [5]      version 0x01
//   [6..7]   reserved, zero
//   [8..11]  rows (u32)
//   [12..15] cols (u32)
//   [16..]   rows*cols binary32, row-major

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "xferscope/error.hpp"

namespace xferscope {

namespace fs = std::filesystem;

inline constexpr int kReferenceModelDepth = 12;
inline constexpr std::size_t kMatrixHeaderBytes = 16;
inline constexpr std::array<char, 5> kMatrixMagic = {'X', 'R', 'E', 'P', '1'};
inline constexpr std::uint8_t kMatrixVersion = 0x01;

/// N x m hidden states of one language at one layer and checkpoint.
/// Row-major float storage; construction enforces rows >= 2, cols >= 1 and
/// finite entries, so downstream code never re-checks.
class RepresentationMatrix {
 public:
  RepresentationMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows_ < 2) throw Error(Errc::InvalidMatrix, "need at least 2 rows, got " + std::to_string(rows_));
    if (cols_ < 1) throw Error(Errc::InvalidMatrix, "need at least 1 column");
    if (data_.size() != rows_ * cols_)
      throw Error(Errc::InvalidMatrix, "data length " + std::to_string(data_.size()) + " != " +
                                           std::to_string(rows_) + "x" + std::to_string(cols_));
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i]))
        throw Error(Errc::InvalidMatrix, "non-finite element at flat index " + std::to_string(i));
    }
  }

  static RepresentationMatrix filled(std::size_t rows, std::size_t cols, float value) {
    return {rows, cols, std::vector<float>(rows * cols, value)};
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::span<const float> data() const noexcept { return data_; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  friend bool operator==(const RepresentationMatrix&, const RepresentationMatrix&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<float> data_;
};

namespace detail {

inline void put_u32_le(unsigned char* out, std::uint32_t v) {
  out[0] = static_cast<unsigned char>(v & 0xFFu);
  out[1] = static_cast<unsigned char>((v >> 8) & 0xFFu);
  out[2] = static_cast<unsigned char>((v >> 16) & 0xFFu);
  out[3] = static_cast<unsigned char>((v >> 24) & 0xFFu);
}

inline std::uint32_t get_u32_le(const unsigned char* in) {
  return static_cast<std::uint32_t>(in[0]) | (static_cast<std::uint32_t>(in[1]) << 8) |
         (static_cast<std::uint32_t>(in[2]) << 16) | (static_cast<std::uint32_t>(in[3]) << 24);
}

struct MatrixHeader {
  std::uint32_t rows;
  std::uint32_t cols;
};

inline MatrixHeader parse_header(const unsigned char* h, const fs::path& path) {
  if (std::memcmp(h, kMatrixMagic.data(), kMatrixMagic.size()) != 0)
    throw Error(Errc::BadMagic, path.string());
  if (h[5] != kMatrixVersion)
    throw Error(Errc::BadMagic, path.string() + ": unsupported version " + std::to_string(h[5]));
  return {get_u32_le(h + 8), get_u32_le(h + 12)};
}

inline MatrixHeader read_header(const fs::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw Error(Errc::IoError, "cannot open " + path.string());
  std::array<unsigned char, kMatrixHeaderBytes> h{};
  const auto got = std::fread(h.data(), 1, h.size(), f);
  std::fclose(f);
  if (got != h.size()) throw Error(Errc::TruncatedFile, path.string() + ": header shorter than 16 bytes");
  return parse_header(h.data(), path);
}

}  // namespace detail

inline void write_matrix(const fs::path& path, const RepresentationMatrix& matrix) {
  if (matrix.rows() > UINT32_MAX || matrix.cols() > UINT32_MAX)
    throw Error(Errc::InvalidMatrix, "dimensions exceed u32");
  std::vector<unsigned char> bytes(kMatrixHeaderBytes + matrix.data().size() * 4, 0);
  std::memcpy(bytes.data(), kMatrixMagic.data(), kMatrixMagic.size());
  bytes[5] = kMatrixVersion;
  detail::put_u32_le(bytes.data() + 8, static_cast<std::uint32_t>(matrix.rows()));
  detail::put_u32_le(bytes.data() + 12, static_cast<std::uint32_t>(matrix.cols()));
  unsigned char* out = bytes.data() + kMatrixHeaderBytes;
  for (float v : matrix.data()) {
    detail::put_u32_le(out, std::bit_cast<std::uint32_t>(v));
    out += 4;
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw Error(Errc::IoError, "cannot open " + path.string() + " for writing");
  const bool ok = std::fwrite(bytes.data(), 1, bytes.size(), f) == bytes.size();
  if (std::fclose(f) != 0 || !ok) throw Error(Errc::IoError, "write failed for " + path.string());
}

inline RepresentationMatrix read_matrix(const fs::path& path) {
  std::vector<unsigned char> bytes;
  {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw Error(Errc::IoError, "cannot open " + path.string());
    unsigned char chunk[1 << 16];
    std::size_t got = 0;
    while ((got = std::fread(chunk, 1, sizeof chunk, f)) > 0) bytes.insert(bytes.end(), chunk, chunk + got);
    const bool failed = std::ferror(f) != 0;
    std::fclose(f);
    if (failed) throw Error(Errc::IoError, "read failed for " + path.string());
  }
  if (bytes.size() < kMatrixHeaderBytes) {
    if (bytes.size() >= kMatrixMagic.size() &&
        std::memcmp(bytes.data(), kMatrixMagic.data(), kMatrixMagic.size()) != 0)
      throw Error(Errc::BadMagic, path.string());
    throw Error(Errc::TruncatedFile, path.string() + ": header shorter than 16 bytes");
  }
  const auto header = detail::parse_header(bytes.data(), path);
  const std::uint64_t count = std::uint64_t{header.rows} * header.cols;
  if (bytes.size() - kMatrixHeaderBytes < count * 4)
    throw Error(Errc::TruncatedFile, path.string() + ": header promises " + std::to_string(count) +
                                         " floats, payload holds " +
                                         std::to_string((bytes.size() - kMatrixHeaderBytes) / 4));
  std::vector<float> data(count);
  const unsigned char* in = bytes.data() + kMatrixHeaderBytes;
  for (auto& v : data) {
    v = std::bit_cast<float>(detail::get_u32_le(in));
    in += 4;
  }
  return {header.rows, header.cols, std::move(data)};
}

enum class Stage { base, finetuned };

inline std::string_view stage_name(Stage s) { return s == Stage::base ? "base" : "finetuned"; }

inline constexpr std::string_view kBaseSource = "base";

struct ExperimentManifest {
  std::string source_lang;  // ISO 639-1 code, or "base" for the pre-trained checkpoint
  std::string target_lang;
  int layer = 1;
  Stage stage = Stage::base;
  std::string matrix_path;  // relative to the experiment root
  std::size_t sample_count = 0;

  auto key() const { return std::tie(source_lang, target_lang, layer, stage); }
  friend bool operator==(const ExperimentManifest&, const ExperimentManifest&) = default;
};

inline void to_json(nlohmann::json& j, const ExperimentManifest& m) {
  j = nlohmann::json{{"source_lang", m.source_lang}, {"target_lang", m.target_lang},
                     {"layer", m.layer},             {"stage", stage_name(m.stage)},
                     {"matrix_path", m.matrix_path}, {"sample_count", m.sample_count}};
}

inline void from_json(const nlohmann::json& j, ExperimentManifest& m) {
  j.at("source_lang").get_to(m.source_lang);
  j.at("target_lang").get_to(m.target_lang);
  j.at("layer").get_to(m.layer);
  const auto stage = j.at("stage").get<std::string>();
  if (stage == "base") m.stage = Stage::base;
  else if (stage == "finetuned") m.stage = Stage::finetuned;
  else throw Error(Errc::ParseError, "unknown stage '" + stage + "'");
  j.at("matrix_path").get_to(m.matrix_path);
  j.at("sample_count").get_to(m.sample_count);
}

/// A validated collection of manifests. Every finetuned (S, T, layer) entry has
/// a base (T, layer) partner with the same sample count, and every referenced
/// file exists with a header matching its manifest entry.
class ExperimentSet {
 public:
  const fs::path& root() const noexcept { return root_; }
  const std::vector<ExperimentManifest>& manifests() const noexcept { return manifests_; }
  const std::vector<std::string>& languages() const noexcept { return languages_; }
  const std::vector<int>& layers() const noexcept { return layers_; }

  const ExperimentManifest* find(std::string_view source, std::string_view target, int layer,
                                 Stage stage) const {
    for (const auto& m : manifests_) {
      if (m.source_lang == source && m.target_lang == target && m.layer == layer && m.stage == stage)
        return &m;
    }
    return nullptr;
  }

  const ExperimentManifest& base_for(const ExperimentManifest& finetuned) const {
    return *find(kBaseSource, finetuned.target_lang, finetuned.layer, Stage::base);
  }

  RepresentationMatrix load(const ExperimentManifest& m) const { return read_matrix(root_ / m.matrix_path); }

  /// Validates and assembles a set. Throws on the first violated invariant.
  static ExperimentSet build(fs::path root, std::vector<ExperimentManifest> manifests,
                             int model_depth = kReferenceModelDepth, bool check_files = true);

 private:
  fs::path root_;
  std::vector<ExperimentManifest> manifests_;
  std::vector<std::string> languages_;
  std::vector<int> layers_;
};

inline ExperimentSet ExperimentSet::build(fs::path root, std::vector<ExperimentManifest> manifests,
                                          int model_depth, bool check_files) {
  using Key = std::tuple<std::string, std::string, int, Stage>;
  std::map<Key, const ExperimentManifest*> by_key;
  std::set<std::string> langs;
  std::set<int> layers;
  for (const auto& m : manifests) {
    const std::string where = "(" + m.source_lang + "->" + m.target_lang + ", layer " +
                              std::to_string(m.layer) + ", " + std::string(stage_name(m.stage)) + ")";
    if (m.layer < 1 || m.layer > model_depth)
      throw Error(Errc::ParseError, where + ": layer outside model depth " + std::to_string(model_depth));
    if (m.stage == Stage::base && m.source_lang != kBaseSource)
      throw Error(Errc::ParseError, where + ": base stage requires source_lang \"base\"");
    if (m.stage == Stage::finetuned && m.source_lang == kBaseSource)
      throw Error(Errc::ParseError, where + ": finetuned stage cannot use source_lang \"base\"");
    if (m.target_lang.empty() || m.source_lang.empty())
      throw Error(Errc::ParseError, where + ": empty language code");
    if (!by_key.emplace(Key{m.source_lang, m.target_lang, m.layer, m.stage}, &m).second)
      throw Error(Errc::DuplicateEntry, where);
    langs.insert(m.target_lang);
    if (m.stage == Stage::finetuned) langs.insert(m.source_lang);
    layers.insert(m.layer);
  }
  for (const auto& m : manifests) {
    if (m.stage != Stage::finetuned) continue;
    const auto it = by_key.find(Key{std::string(kBaseSource), m.target_lang, m.layer, Stage::base});
    const std::string where = "(" + m.source_lang + "->" + m.target_lang + ", layer " + std::to_string(m.layer) + ")";
    if (it == by_key.end()) throw Error(Errc::MissingBasePair, where);
    if (it->second->sample_count != m.sample_count)
      throw Error(Errc::SampleCountMismatch, where + ": finetuned N=" + std::to_string(m.sample_count) +
                                                 ", base N=" + std::to_string(it->second->sample_count));
  }
  if (check_files) {
    for (const auto& m : manifests) {
      const auto header = detail::read_header(root / m.matrix_path);
      if (header.rows != m.sample_count)
        throw Error(Errc::SampleCountMismatch, m.matrix_path + ": file holds " + std::to_string(header.rows) +
                                                   " rows, manifest says " + std::to_string(m.sample_count));
    }
  }
  ExperimentSet set;
  set.root_ = std::move(root);
  set.manifests_ = std::move(manifests);
  std::sort(set.manifests_.begin(), set.manifests_.end(),
            [](const auto& a, const auto& b) { return a.key() < b.key(); });
  set.languages_.assign(langs.begin(), langs.end());
  set.layers_.assign(layers.begin(), layers.end());
  return set;
}

inline std::vector<ExperimentManifest> parse_manifest(const fs::path& manifest_file) {
  std::ifstream in(manifest_file);
  if (!in) throw Error(Errc::IoError, "cannot open " + manifest_file.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (!j.is_array()) throw Error(Errc::ParseError, manifest_file.string() + ": expected a JSON array");
    return j.get<std::vector<ExperimentManifest>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, manifest_file.string() + ": " + e.what());
  }
}

inline void write_manifest(const fs::path& manifest_file, const std::vector<ExperimentManifest>& manifests) {
  std::ofstream out(manifest_file, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot open " + manifest_file.string() + " for writing");
  out << nlohmann::json(manifests).dump(1) << '\n';
}

/// Loads `manifest_file` and validates it against the files under `root`.
/// Relative manifest paths resolve against `root`.
inline ExperimentSet load_experiment(const fs::path& root, const fs::path& manifest_file,
                                     int model_depth = kReferenceModelDepth) {
  return ExperimentSet::build(root, parse_manifest(manifest_file), model_depth);
}

}  // namespace xferscope
