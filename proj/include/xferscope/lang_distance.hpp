#pragma once

// Five typological language distances, each normalized to [0, 1]:
//   SYN, INV, PHON  cosine distance over mutually attested features
//   GEO             great-circle angle divided by pi
//   GEN             1 - shared/max path length in the family tree

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xferscope/csv.hpp"
#include "xferscope/error.hpp"

namespace xferscope {

enum class Metric { SYN, GEO, INV, GEN, PHON };

inline constexpr Metric kAllMetrics[] = {Metric::SYN, Metric::GEO, Metric::INV, Metric::GEN, Metric::PHON};

inline std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::SYN: return "SYN";
    case Metric::GEO: return "GEO";
    case Metric::INV: return "INV";
    case Metric::GEN: return "GEN";
    case Metric::PHON: return "PHON";
  }
  return "?";
}

inline std::optional<Metric> parse_metric(std::string_view s) {
  std::string up(s);
  for (auto& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (Metric m : kAllMetrics)
    if (metric_name(m) == up) return m;
  return std::nullopt;
}

/// Typology vector. Undefined positions hold NaN and are excluded from all math.
struct LanguageFeatureVector {
  std::string lang;
  std::vector<double> features;
  std::vector<bool> defined_mask;

  LanguageFeatureVector(std::string code, std::vector<double> values, std::vector<bool> mask)
      : lang(std::move(code)), features(std::move(values)), defined_mask(std::move(mask)) {
    if (features.size() != defined_mask.size())
      throw Error(Errc::LengthMismatch, lang + ": features and mask lengths differ");
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (!defined_mask[i]) {
        features[i] = std::numeric_limits<double>::quiet_NaN();
      } else if (!(features[i] >= 0.0 && features[i] <= 1.0)) {
        throw Error(Errc::DomainError, lang + ": feature " + std::to_string(i) + " outside [0,1]");
      }
    }
  }

  /// Fully attested vector.
  static LanguageFeatureVector dense(std::string code, std::vector<double> values) {
    std::vector<bool> mask(values.size(), true);
    return {std::move(code), std::move(values), std::move(mask)};
  }
};

inline double cosine_distance(const LanguageFeatureVector& u, const LanguageFeatureVector& v) {
  if (u.features.size() != v.features.size())
    throw Error(Errc::LengthMismatch, u.lang + " has " + std::to_string(u.features.size()) + " features, " +
                                          v.lang + " has " + std::to_string(v.features.size()));
  double dot = 0.0, uu = 0.0, vv = 0.0;
  std::size_t shared = 0;
  for (std::size_t i = 0; i < u.features.size(); ++i) {
    if (!u.defined_mask[i] || !v.defined_mask[i]) continue;
    ++shared;
    dot += u.features[i] * v.features[i];
    uu += u.features[i] * u.features[i];
    vv += v.features[i] * v.features[i];
  }
  if (shared == 0) throw Error(Errc::NoSharedFeatures, u.lang + "/" + v.lang);
  if (uu == 0.0 || vv == 0.0) throw Error(Errc::DegenerateVector, u.lang + "/" + v.lang + ": zero restricted norm");
  return std::clamp(1.0 - dot / (std::sqrt(uu) * std::sqrt(vv)), 0.0, 1.0);
}

struct GeoCoordinate {
  double lat;
  double lon;

  GeoCoordinate(double latitude, double longitude) : lat(latitude), lon(longitude) {
    if (!(lat >= -90.0 && lat <= 90.0))
      throw Error(Errc::InvalidCoordinate, "latitude " + std::to_string(lat) + " outside [-90, 90]");
    if (!(lon > -180.0 && lon <= 180.0))
      throw Error(Errc::InvalidCoordinate, "longitude " + std::to_string(lon) + " outside (-180, 180]");
  }
};

/// Central angle between two points on the unit sphere divided by pi.
inline double orthodromic_distance(const GeoCoordinate& a, const GeoCoordinate& b) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double phi1 = a.lat * deg;
  const double phi2 = b.lat * deg;
  const double dphi = (b.lat - a.lat) * deg;
  const double dlambda = (b.lon - a.lon) * deg;
  const double s_phi = std::sin(dphi / 2.0);
  const double s_lambda = std::sin(dlambda / 2.0);
  const double h = std::clamp(s_phi * s_phi + std::cos(phi1) * std::cos(phi2) * s_lambda * s_lambda, 0.0, 1.0);
  const double angle = 2.0 * std::atan2(std::sqrt(h), std::sqrt(1.0 - h));
  return std::clamp(angle / std::numbers::pi, 0.0, 1.0);
}

/// Language family tree built from root-to-leaf path strings. Nodes are
/// identified by their full path, so equal names under different parents
/// stay distinct.
class PhylogenyTree {
 public:
  struct Node {
    std::string name;
    int parent;  // -1 for the root
  };

  /// `paths` maps an ISO code to "root/child/.../leaf".
  static PhylogenyTree from_paths(const std::vector<std::pair<std::string, std::string>>& paths) {
    PhylogenyTree tree;
    std::unordered_map<std::string, int> by_path;
    for (const auto& [iso, path] : paths) {
      if (tree.leaves_.count(iso)) throw Error(Errc::InvalidTree, "language '" + iso + "' listed twice");
      const auto parts = split_path(path);
      if (parts.empty()) throw Error(Errc::InvalidTree, iso + ": empty path");
      if (tree.nodes_.empty()) {
        tree.nodes_.push_back({parts[0], -1});
        by_path.emplace(parts[0], 0);
      } else if (parts[0] != tree.nodes_[0].name) {
        throw Error(Errc::InvalidTree, iso + ": root '" + parts[0] + "' differs from '" + tree.nodes_[0].name + "'");
      }
      int current = 0;
      std::string prefix = parts[0];
      for (std::size_t i = 1; i < parts.size(); ++i) {
        prefix += '/';
        prefix += parts[i];
        auto it = by_path.find(prefix);
        if (it == by_path.end()) {
          tree.nodes_.push_back({parts[i], current});
          it = by_path.emplace(prefix, static_cast<int>(tree.nodes_.size() - 1)).first;
        }
        current = it->second;
      }
      tree.leaves_.emplace(iso, current);
    }
    return tree;
  }

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::map<std::string, int>& leaves() const noexcept { return leaves_; }
  bool contains(const std::string& iso) const { return leaves_.count(iso) != 0; }

  /// Node indices from the root down to the leaf of `iso`.
  std::vector<int> path_of(const std::string& iso) const {
    const auto it = leaves_.find(iso);
    if (it == leaves_.end()) throw Error(Errc::UnknownLanguage, "'" + iso + "' not in tree");
    std::vector<int> path;
    for (int n = it->second; n != -1; n = nodes_[static_cast<std::size_t>(n)].parent) path.push_back(n);
    std::reverse(path.begin(), path.end());
    return path;
  }

 private:
  static std::vector<std::string> split_path(std::string_view path) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (start <= path.size()) {
      const auto pos = path.find('/', start);
      const auto piece = csv::trim(path.substr(start, pos == std::string_view::npos ? pos : pos - start));
      if (piece.empty()) throw Error(Errc::InvalidTree, "empty component in path '" + std::string(path) + "'");
      parts.emplace_back(piece);
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
    return parts;
  }

  std::vector<Node> nodes_;
  std::map<std::string, int> leaves_;
};

inline double genetic_distance(const PhylogenyTree& tree, const std::string& a, const std::string& b) {
  const auto pa = tree.path_of(a);
  const auto pb = tree.path_of(b);
  std::size_t shared = 0;
  while (shared < pa.size() && shared < pb.size() && pa[shared] == pb[shared]) ++shared;
  const auto longest = std::max(pa.size(), pb.size());
  return 1.0 - static_cast<double>(shared) / static_cast<double>(longest);
}

/// Symmetric, zero-diagonal, [0,1] matrix over an ordered language list.
class DistanceMatrix {
 public:
  DistanceMatrix(Metric metric, std::vector<std::string> languages, std::vector<double> values)
      : metric_(metric), languages_(std::move(languages)), values_(std::move(values)) {
    const auto n = languages_.size();
    if (values_.size() != n * n) throw Error(Errc::LengthMismatch, "distance matrix is not square");
    for (std::size_t i = 0; i < n; ++i) {
      if (!index_.emplace(languages_[i], i).second)
        throw Error(Errc::DuplicateEntry, "language '" + languages_[i] + "' repeated");
      if (values_[i * n + i] != 0.0)
        throw Error(Errc::DomainError, std::string(metric_name(metric_)) + " diagonal at " + languages_[i] + " is not 0");
      for (std::size_t j = 0; j < n; ++j) {
        const double v = values_[i * n + j];
        if (!(v >= 0.0 && v <= 1.0))
          throw Error(Errc::DomainError, languages_[i] + "/" + languages_[j] + " distance outside [0,1]");
        if (std::abs(v - values_[j * n + i]) > 1e-12)
          throw Error(Errc::DomainError, languages_[i] + "/" + languages_[j] + " distance is asymmetric");
      }
    }
  }

  Metric metric() const noexcept { return metric_; }
  const std::vector<std::string>& languages() const noexcept { return languages_; }
  std::size_t size() const noexcept { return languages_.size(); }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * languages_.size() + j]; }
  bool contains(const std::string& lang) const { return index_.count(lang) != 0; }

  double at(const std::string& a, const std::string& b) const {
    const auto ia = index_.find(a);
    const auto ib = index_.find(b);
    if (ia == index_.end() || ib == index_.end())
      throw Error(Errc::MissingDistance, std::string(metric_name(metric_)) + " has no entry for " + a + "/" + b);
    return (*this)(ia->second, ib->second);
  }

 private:
  Metric metric_;
  std::vector<std::string> languages_;
  std::vector<double> values_;
  std::map<std::string, std::size_t> index_;
};

/// Assembles a matrix from a pairwise function evaluated once per unordered
/// pair. Pairwise failures are rethrown with the pair attached.
inline DistanceMatrix build_distance_matrix(Metric metric, const std::vector<std::string>& languages,
                                            const std::function<double(const std::string&, const std::string&)>& pair) {
  const auto n = languages.size();
  std::vector<double> values(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d = 0.0;
      try {
        d = pair(languages[i], languages[j]);
      } catch (const Error& e) {
        throw Error(e.code(), std::string(metric_name(metric)) + " pair (" + languages[i] + ", " + languages[j] +
                                  "): " + e.what());
      }
      values[i * n + j] = d;
      values[j * n + i] = d;
    }
  }
  return {metric, languages, std::move(values)};
}

namespace detail {
template <typename Map>
const typename Map::mapped_type& lookup_language(const Map& data, const std::string& lang) {
  const auto it = data.find(lang);
  if (it == data.end()) throw Error(Errc::UnknownLanguage, "no data for '" + lang + "'");
  return it->second;
}
}  // namespace detail

inline DistanceMatrix distance_matrix(Metric metric, const std::map<std::string, LanguageFeatureVector>& features,
                                      const std::vector<std::string>& languages) {
  if (metric == Metric::GEO || metric == Metric::GEN)
    throw Error(Errc::DomainError, std::string(metric_name(metric)) + " is not a feature-vector metric");
  for (const auto& l : languages) detail::lookup_language(features, l);
  return build_distance_matrix(metric, languages, [&](const std::string& a, const std::string& b) {
    return cosine_distance(detail::lookup_language(features, a), detail::lookup_language(features, b));
  });
}

inline DistanceMatrix distance_matrix(const std::map<std::string, GeoCoordinate>& coords,
                                      const std::vector<std::string>& languages) {
  for (const auto& l : languages) detail::lookup_language(coords, l);
  return build_distance_matrix(Metric::GEO, languages, [&](const std::string& a, const std::string& b) {
    return orthodromic_distance(detail::lookup_language(coords, a), detail::lookup_language(coords, b));
  });
}

inline DistanceMatrix distance_matrix(const PhylogenyTree& tree, const std::vector<std::string>& languages) {
  for (const auto& l : languages) tree.path_of(l);
  return build_distance_matrix(Metric::GEN, languages,
                               [&](const std::string& a, const std::string& b) { return genetic_distance(tree, a, b); });
}

// ---------------------------------------------------------------------------
// File formats

/// `lang,f_0,...,f_k`; undefined entries are `--`.
inline std::map<std::string, LanguageFeatureVector> read_feature_csv(const std::filesystem::path& path) {
  const auto rows = csv::read_file(path);
  if (rows.empty() || rows[0].empty() || rows[0][0] != "lang")
    throw Error(Errc::ParseError, path.string() + ": header must start with 'lang'");
  const auto width = rows[0].size() - 1;
  std::map<std::string, LanguageFeatureVector> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string ctx = path.string() + ":" + std::to_string(r + 1);
    if (row.size() != width + 1) throw Error(Errc::ParseError, ctx + ": expected " + std::to_string(width + 1) + " fields");
    std::vector<double> values(width, 0.0);
    std::vector<bool> mask(width, false);
    for (std::size_t k = 0; k < width; ++k) {
      if (row[k + 1] == "--") continue;
      values[k] = csv::parse_double(row[k + 1], ctx);
      mask[k] = true;
    }
    LanguageFeatureVector v(row[0], std::move(values), std::move(mask));
    if (!out.emplace(row[0], std::move(v)).second) throw Error(Errc::DuplicateEntry, ctx + ": language repeated");
  }
  return out;
}

/// `lang,lat,lon`, with a header row.
inline std::map<std::string, GeoCoordinate> read_coordinates_csv(const std::filesystem::path& path) {
  const auto rows = csv::read_file(path);
  if (rows.empty() || rows[0].size() != 3 || rows[0][0] != "lang")
    throw Error(Errc::ParseError, path.string() + ": header must be lang,lat,lon");
  std::map<std::string, GeoCoordinate> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const std::string ctx = path.string() + ":" + std::to_string(r + 1);
    if (rows[r].size() != 3) throw Error(Errc::ParseError, ctx + ": expected 3 fields");
    GeoCoordinate c(csv::parse_double(rows[r][1], ctx), csv::parse_double(rows[r][2], ctx));
    if (!out.emplace(rows[r][0], c).second) throw Error(Errc::DuplicateEntry, ctx + ": language repeated");
  }
  return out;
}

/// One `iso_code,root/child/.../leaf` per line.
inline PhylogenyTree read_tree_file(const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::string>> paths;
  for (const auto& row : csv::read_file(path)) {
    if (row.size() != 2) throw Error(Errc::ParseError, path.string() + ": expected iso,path");
    paths.emplace_back(row[0], row[1]);
  }
  return PhylogenyTree::from_paths(paths);
}

/// Infers the metric from a filename such as `distance_syn.csv`.
inline std::optional<Metric> metric_from_filename(const std::filesystem::path& path) {
  std::string stem = path.stem().string();
  for (auto& c : stem) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  // Split on non-alphanumerics so "PHON" and "INV" match whole tokens only.
  std::string token;
  std::optional<Metric> found;
  auto flush = [&] {
    if (auto m = parse_metric(token)) found = m;
    token.clear();
  };
  for (char c : stem) {
    if (std::isalnum(static_cast<unsigned char>(c))) token += c;
    else flush();
  }
  flush();
  return found;
}

inline std::string distance_filename(Metric m) {
  std::string name(metric_name(m));
  for (auto& c : name) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return "distance_" + name + ".csv";
}

/// Square CSV with a language header row and column. The metric comes from
/// the filename unless given.
inline DistanceMatrix read_distance_csv(const std::filesystem::path& path, std::optional<Metric> metric = std::nullopt) {
  if (!metric) metric = metric_from_filename(path);
  if (!metric) throw Error(Errc::ParseError, path.string() + ": cannot infer metric from filename");
  const auto rows = csv::read_file(path);
  if (rows.empty()) throw Error(Errc::ParseError, path.string() + ": empty");
  std::vector<std::string> langs(rows[0].begin() + 1, rows[0].end());
  const auto n = langs.size();
  if (rows.size() != n + 1) throw Error(Errc::ParseError, path.string() + ": not square");
  std::vector<double> values(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = rows[i + 1];
    const std::string ctx = path.string() + ":" + std::to_string(i + 2);
    if (row.size() != n + 1 || row[0] != langs[i]) throw Error(Errc::ParseError, ctx + ": row label/width mismatch");
    for (std::size_t j = 0; j < n; ++j) values[i * n + j] = csv::parse_double(row[j + 1], ctx);
  }
  return {*metric, std::move(langs), std::move(values)};
}

inline void write_distance_csv(const std::filesystem::path& path, const DistanceMatrix& d) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot open " + path.string() + " for writing");
  out << "lang";
  for (const auto& l : d.languages()) out << ',' << l;
  out << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << d.languages()[i];
    for (std::size_t j = 0; j < d.size(); ++j) out << ',' << csv::format_double(d(i, j));
    out << '\n';
  }
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

}  // namespace xferscope
