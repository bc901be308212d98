// Copyright 2026 The transduct Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Data exchange: embedding, softmax and label tables, synthetic ground
// truths, label oracles, run records and metrics tables.
//
// Text table format:
//
//   p=<int> n=<int>
//   <id>,<v1>,...,<vp>
//
// Binary table format (little-endian): the 8 bytes "TDEMB1\0\0", u64 p,
// u64 n, then n rows of u64 id followed by p f64 values.
//
// Run records are JSON lines. Line 1 is the header
// {"type":"header","version":"v1","config":{...},"initial":{...}}; each
// further line is one round {"type":"round","round":n,...}.

#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "transduct/error.hpp"
#include "transduct/kernel.hpp"
#include "transduct/linalg.hpp"
#include "transduct/record.hpp"
#include "transduct/selection.hpp"

namespace transduct {

static_assert(std::endian::native == std::endian::little, "binary tables assume a little-endian host");

/// Rows of `values` belong to `ids`.
struct Table {
  std::vector<Index> ids;
  Matrix values;

  std::size_t dimension() const { return static_cast<std::size_t>(values.cols()); }
  std::size_t count() const { return ids.size(); }
};

namespace io_detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

template <typename T>
T parse_number(std::string_view text, std::size_t line, const char* what) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ParseError(at_line(line) + "invalid " + what + " '" + std::string(text) + "'");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) throw ParseError(at_line(line) + "non-finite value '" + std::string(text) + "'");
  }
  return value;
}

inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw Error("could not format number");
  return std::string(buf.data(), ptr);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary file and rename so readers never see a partial file.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline constexpr std::array<char, 8> kBinaryMagic = {'T', 'D', 'E', 'M', 'B', '1', '\0', '\0'};

}  // namespace io_detail

inline Table parse_table_text(std::string_view text) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& out) {
    while (pos <= text.size()) {
      const std::size_t end = std::min(text.find('\n', pos), text.size());
      out = io_detail::trim(text.substr(pos, end - pos));
      pos = end + 1;
      ++line_no;
      if (!out.empty()) return true;
      if (end == text.size()) break;
    }
    return false;
  };

  std::string_view header;
  if (!next_line(header)) throw ParseError("empty table file");
  std::size_t p = 0, n = 0;
  {
    const auto space = header.find(' ');
    if (space == std::string_view::npos) throw ParseError(io_detail::at_line(line_no) + "header must be 'p=<int> n=<int>'");
    const auto first = io_detail::trim(header.substr(0, space));
    const auto second = io_detail::trim(header.substr(space + 1));
    if (!first.starts_with("p=") || !second.starts_with("n=")) {
      throw ParseError(io_detail::at_line(line_no) + "header must be 'p=<int> n=<int>'");
    }
    p = io_detail::parse_number<std::size_t>(first.substr(2), line_no, "dimension");
    n = io_detail::parse_number<std::size_t>(second.substr(2), line_no, "count");
    if (p == 0) throw ParseError(io_detail::at_line(line_no) + "dimension must be positive");
  }

  Table table;
  table.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  table.ids.reserve(n);
  std::unordered_set<Index> seen;
  std::string_view row;
  while (next_line(row)) {
    if (table.ids.size() == n) throw ParseError(io_detail::at_line(line_no) + "more rows than n=" + std::to_string(n));
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const auto comma = row.find(',', start);
      fields.push_back(row.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() != p + 1) {
      throw ParseError(io_detail::at_line(line_no) + "expected " + std::to_string(p) + " values, found " +
                       std::to_string(fields.size() - 1));
    }
    const Index id = io_detail::parse_number<Index>(fields[0], line_no, "id");
    if (!seen.insert(id).second) throw ParseError(io_detail::at_line(line_no) + "duplicate id " + std::to_string(id));
    const auto r = static_cast<Eigen::Index>(table.ids.size());
    for (std::size_t j = 0; j < p; ++j) {
      table.values(r, static_cast<Eigen::Index>(j)) = io_detail::parse_number<double>(fields[j + 1], line_no, "value");
    }
    table.ids.push_back(id);
  }
  if (table.ids.size() != n) {
    throw ParseError("expected " + std::to_string(n) + " rows, found " + std::to_string(table.ids.size()));
  }
  return table;
}

inline std::string format_table_text(const Table& table) {
  std::string out = "p=" + std::to_string(table.dimension()) + " n=" + std::to_string(table.count()) + "\n";
  for (std::size_t i = 0; i < table.count(); ++i) {
    out += std::to_string(table.ids[i]);
    for (Eigen::Index j = 0; j < table.values.cols(); ++j) {
      const double v = table.values(static_cast<Eigen::Index>(i), j);
      if (!std::isfinite(v)) throw InputError("table value for id " + std::to_string(table.ids[i]) + " is not finite");
      out += ',';
      out += io_detail::format_double(v);
    }
    out += '\n';
  }
  return out;
}

inline Table parse_table_binary(std::string_view bytes) {
  const std::size_t header = 8 + 16;
  if (bytes.size() < header || std::memcmp(bytes.data(), io_detail::kBinaryMagic.data(), 8) != 0) {
    throw ParseError("binary table: bad magic");
  }
  std::uint64_t p = 0, n = 0;
  std::memcpy(&p, bytes.data() + 8, 8);
  std::memcpy(&n, bytes.data() + 16, 8);
  if (p == 0) throw ParseError("binary table: dimension must be positive");
  const std::size_t row_bytes = 8 + 8 * p;
  if (n > (bytes.size() - header) / row_bytes || bytes.size() != header + n * row_bytes) {
    throw ParseError("binary table: size does not match header");
  }
  Table table;
  table.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  std::unordered_set<Index> seen;
  const char* cursor = bytes.data() + header;
  for (std::uint64_t i = 0; i < n; ++i) {
    std::uint64_t id = 0;
    std::memcpy(&id, cursor, 8);
    cursor += 8;
    if (!seen.insert(id).second) throw ParseError("binary table: duplicate id " + std::to_string(id) + " in row " + std::to_string(i));
    for (std::uint64_t j = 0; j < p; ++j) {
      double v = 0.0;
      std::memcpy(&v, cursor, 8);
      cursor += 8;
      if (!std::isfinite(v)) throw ParseError("binary table: non-finite value in row " + std::to_string(i));
      table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
    table.ids.push_back(id);
  }
  return table;
}

inline std::string format_table_binary(const Table& table) {
  std::string out(io_detail::kBinaryMagic.begin(), io_detail::kBinaryMagic.end());
  auto put = [&](const void* src) { out.append(static_cast<const char*>(src), 8); };
  const std::uint64_t p = table.dimension(), n = table.count();
  put(&p);
  put(&n);
  for (std::size_t i = 0; i < table.count(); ++i) {
    const std::uint64_t id = table.ids[i];
    put(&id);
    for (Eigen::Index j = 0; j < table.values.cols(); ++j) {
      const double v = table.values(static_cast<Eigen::Index>(i), j);
      if (!std::isfinite(v)) throw InputError("table value for id " + std::to_string(id) + " is not finite");
      put(&v);
    }
  }
  return out;
}

/// Reads a text or binary table, detected by the magic bytes.
inline Table load_table(const std::filesystem::path& path) {
  const std::string content = io_detail::read_file(path);
  try {
    if (content.size() >= 8 && std::memcmp(content.data(), io_detail::kBinaryMagic.data(), 8) == 0) {
      return parse_table_binary(content);
    }
    return parse_table_text(content);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_table(const std::filesystem::path& path, const Table& table, bool binary = false) {
  io_detail::write_atomic(path, binary ? format_table_binary(table) : format_table_text(table));
}

/// Points with embeddings set; Point::index is the file id.
inline std::vector<Point> table_points(const Table& table) {
  std::vector<Point> points;
  points.reserve(table.count());
  for (std::size_t i = 0; i < table.count(); ++i) {
    Point p;
    p.index = table.ids[i];
    p.embedding = table.values.row(static_cast<Eigen::Index>(i)).transpose();
    points.push_back(std::move(p));
  }
  return points;
}

inline std::vector<Point> load_embeddings(const std::filesystem::path& path) { return table_points(load_table(path)); }

inline void write_embeddings(const std::filesystem::path& path, std::span<const Point> points, bool binary = false) {
  Table table;
  if (points.empty()) throw InputError("write_embeddings: no points");
  const auto p = detail::require_embedding(points.front()).size();
  table.values.resize(static_cast<Eigen::Index>(points.size()), p);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vector& e = detail::require_embedding(points[i]);
    if (e.size() != p) throw InputError("write_embeddings: inconsistent embedding dimension");
    table.ids.push_back(points[i].index);
    table.values.row(static_cast<Eigen::Index>(i)) = e.transpose();
  }
  write_table(path, table, binary);
}

inline SoftmaxTable load_softmax(const std::filesystem::path& path) {
  Table table = load_table(path);
  SoftmaxTable out;
  out.ids = std::move(table.ids);
  out.probs = std::move(table.values);
  try {
    out.validate();
  } catch (const InputError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return out;
}

/// Labels use the table container with p=1.
inline std::unordered_map<Index, double> load_labels(const std::filesystem::path& path) {
  const Table table = load_table(path);
  if (table.dimension() != 1) throw ParseError(path.string() + ": label tables must have p=1");
  std::unordered_map<Index, double> labels;
  for (std::size_t i = 0; i < table.count(); ++i) labels.emplace(table.ids[i], table.values(static_cast<Eigen::Index>(i), 0));
  return labels;
}

struct SyntheticTruth {
  KernelSpec spec;
  std::vector<Point> grid;
  Vector values;
  std::uint64_t seed = 0;
};

/// f* = L z with L the Cholesky factor of the Gram and z ~ N(0, I).
inline SyntheticTruth sample_gp_truth(const KernelSpec& spec, std::vector<Point> grid, std::uint64_t seed) {
  if (grid.empty()) throw InputError("sample_gp_truth: empty grid");
  const KernelMatrix k = gram(spec, grid);
  SyntheticTruth truth{spec, std::move(grid), Vector::Zero(k.entries.rows()), seed};
  if (linalg::max_diagonal(k.entries) == 0.0) return truth;
  const auto llt = linalg::cholesky(k.entries);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(k.entries.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  truth.values = llt.matrixL() * z;
  return truth;
}

/// y = f*(x) + eps with eps ~ N(0, rho^2(x)), fresh noise per query.
class GaussianOracle : public LabelOracle {
 public:
  GaussianOracle(Vector truth, NoiseModel noise, std::uint64_t seed)
      : truth_(std::move(truth)), noise_(std::move(noise)), rng_(seed) {}

  double label(Index index) override {
    if (index >= static_cast<Index>(truth_.size())) throw DataError("oracle: index " + std::to_string(index) + " outside domain");
    return truth_(static_cast<Eigen::Index>(index)) + std::sqrt(noise_.variance(index)) * normal_(rng_);
  }

 private:
  Vector truth_;
  NoiseModel noise_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline GaussianOracle labeled_oracle(const SyntheticTruth& truth, const NoiseModel& noise, std::uint64_t seed) {
  return GaussianOracle(truth.values, noise, seed);
}

/// Serves fixed labels; a missing label aborts the run.
class RecordedOracle : public LabelOracle {
 public:
  explicit RecordedOracle(std::unordered_map<Index, double> labels) : labels_(std::move(labels)) {}

  double label(Index index) override {
    auto it = labels_.find(index);
    if (it == labels_.end()) throw DataError("no recorded label for index " + std::to_string(index));
    return it->second;
  }

 private:
  std::unordered_map<Index, double> labels_;
};

namespace io_detail {

inline void require_finite(double v, const char* field) {
  if (!std::isfinite(v)) throw NumericError(std::string("run record field '") + field + "' is not finite");
}

inline nlohmann::json entry_json(const RoundEntry& e) {
  require_finite(e.mean_variance, "mean_variance");
  require_finite(e.max_variance, "max_variance");
  for (double v : e.objectives) require_finite(v, "objectives");
  nlohmann::json j;
  j["round"] = e.round;
  j["chosen"] = e.chosen;
  j["objectives"] = e.objectives;
  j["relevant"] = e.relevant;
  j["mean_variance"] = e.mean_variance;
  j["max_variance"] = e.max_variance;
  j["retrieved"] = e.retrieved;
  if (e.rmse) {
    require_finite(*e.rmse, "rmse");
    j["rmse"] = *e.rmse;
  }
  if (e.wall_time) {
    require_finite(*e.wall_time, "wall_time");
    j["wall_time"] = *e.wall_time;
  }
  return j;
}

inline double finite_number(const nlohmann::json& j, const char* field) {
  if (!j.is_number()) throw ParseError(std::string("field '") + field + "' must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ParseError(std::string("field '") + field + "' is not finite");
  return v;
}

inline RoundEntry entry_from_json(const nlohmann::json& j) {
  RoundEntry e;
  e.round = j.at("round").get<std::size_t>();
  e.chosen = j.at("chosen").get<std::vector<Index>>();
  for (const auto& v : j.at("objectives")) e.objectives.push_back(finite_number(v, "objectives"));
  e.relevant = j.at("relevant").get<std::vector<bool>>();
  e.mean_variance = finite_number(j.at("mean_variance"), "mean_variance");
  e.max_variance = finite_number(j.at("max_variance"), "max_variance");
  e.retrieved = j.at("retrieved").get<std::size_t>();
  if (j.contains("rmse")) e.rmse = finite_number(j.at("rmse"), "rmse");
  if (j.contains("wall_time")) e.wall_time = finite_number(j.at("wall_time"), "wall_time");
  return e;
}

}  // namespace io_detail

inline std::string format_run(const RunRecord& record) {
  nlohmann::json header;
  header["type"] = "header";
  header["version"] = record.version;
  header["config"] = record.config;
  header["initial"] = io_detail::entry_json(record.initial);
  std::string out = header.dump() + "\n";
  std::size_t last = 0;
  for (const auto& e : record.rounds) {
    if (e.round <= last) throw InputError("run record rounds must be strictly increasing");
    last = e.round;
    auto j = io_detail::entry_json(e);
    j["type"] = "round";
    out += j.dump() + "\n";
  }
  return out;
}

inline RunRecord parse_run(std::string_view text) {
  RunRecord record;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool have_header = false;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = io_detail::trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (!have_header) {
        if (type != "header") throw ParseError("first record must be the header");
        record.version = j.at("version").get<std::string>();
        if (record.version != kRecordVersion) {
          throw VersionError("run record version '" + record.version + "' is not supported (expected " +
                             kRecordVersion + ")");
        }
        record.config = j.at("config");
        record.initial = io_detail::entry_from_json(j.at("initial"));
        have_header = true;
        continue;
      }
      if (type != "round") throw ParseError("unexpected record type '" + type + "'");
      RoundEntry e = io_detail::entry_from_json(j);
      const std::size_t previous = record.rounds.empty() ? record.initial.round : record.rounds.back().round;
      if (e.round <= previous) throw ParseError("rounds must be strictly increasing");
      record.rounds.push_back(std::move(e));
    } catch (const VersionError&) {
      throw;
    } catch (const ParseError& e) {
      throw ParseError(io_detail::at_line(line_no) + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(io_detail::at_line(line_no) + e.what());
    }
  }
  if (!have_header) throw ParseError("run record has no header");
  return record;
}

inline void persist_run(const RunRecord& record, const std::filesystem::path& path) {
  io_detail::write_atomic(path, format_run(record));
}

inline RunRecord load_run(const std::filesystem::path& path) {
  const std::string content = io_detail::read_file(path);
  try {
    return parse_run(content);
  } catch (const VersionError&) {
    throw;
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// One raw metrics row per (policy, seed, round).
struct MetricsRow {
  std::string policy;
  std::uint64_t seed = 0;
  std::size_t round = 0;
  double mean_variance = 0.0;
  double max_variance = 0.0;
  std::size_t retrieved = 0;
  double objective = 0.0;
  std::optional<double> rmse;

  bool operator==(const MetricsRow&) const = default;
};

inline constexpr const char* kMetricsHeader = "policy,seed,round,mean_variance,max_variance,retrieved,objective,rmse";

/// Rows for rounds 1..R of a record; the objective column sums the batch.
inline std::vector<MetricsRow> metrics_rows(const RunRecord& record, const std::string& policy, std::uint64_t seed) {
  std::vector<MetricsRow> rows;
  for (const auto& e : record.rounds) {
    double objective = 0.0;
    for (double v : e.objectives) objective += v;
    rows.push_back({policy, seed, e.round, e.mean_variance, e.max_variance, e.retrieved, objective, e.rmse});
  }
  return rows;
}

inline std::string format_metrics(std::span<const MetricsRow> rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    if (r.policy.find(',') != std::string::npos) throw InputError("policy name must not contain commas");
    out += r.policy + "," + std::to_string(r.seed) + "," + std::to_string(r.round) + "," +
           io_detail::format_double(r.mean_variance) + "," + io_detail::format_double(r.max_variance) + "," +
           std::to_string(r.retrieved) + "," + io_detail::format_double(r.objective) + "," +
           (r.rmse ? io_detail::format_double(*r.rmse) : std::string()) + "\n";
  }
  return out;
}

inline std::vector<MetricsRow> parse_metrics(std::string_view text) {
  std::vector<MetricsRow> rows;
  std::size_t pos = 0, line_no = 0;
  bool header = false;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = io_detail::trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (!header) {
      if (line != kMetricsHeader) throw ParseError(io_detail::at_line(line_no) + "unexpected metrics header");
      header = true;
      continue;
    }
    std::vector<std::string_view> f;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      f.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (f.size() != 8) throw ParseError(io_detail::at_line(line_no) + "expected 8 columns");
    MetricsRow r;
    r.policy = std::string(f[0]);
    r.seed = io_detail::parse_number<std::uint64_t>(f[1], line_no, "seed");
    r.round = io_detail::parse_number<std::size_t>(f[2], line_no, "round");
    r.mean_variance = io_detail::parse_number<double>(f[3], line_no, "mean_variance");
    r.max_variance = io_detail::parse_number<double>(f[4], line_no, "max_variance");
    r.retrieved = io_detail::parse_number<std::size_t>(f[5], line_no, "retrieved");
    r.objective = io_detail::parse_number<double>(f[6], line_no, "objective");
    if (!io_detail::trim(f[7]).empty()) r.rmse = io_detail::parse_number<double>(f[7], line_no, "rmse");
    rows.push_back(std::move(r));
  }
  if (!header) throw ParseError("metrics file has no header");
  return rows;
}

inline void write_metrics(const std::filesystem::path& path, std::span<const MetricsRow> rows) {
  io_detail::write_atomic(path, format_metrics(rows));
}

inline std::vector<MetricsRow> load_metrics(const std::filesystem::path& path) {
  return parse_metrics(io_detail::read_file(path));
}

}  // namespace transduct
