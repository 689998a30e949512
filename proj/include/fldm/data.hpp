#ifndef FLDM_DATA_HPP
#define FLDM_DATA_HPP

#include <charconv>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fldm/tensor.hpp"

namespace fldm {

/// Half-open index range [begin, end) into the time axis.
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const IndexRange&) const = default;
};

enum class Split { train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

enum class SplitProtocol { ett_hour, ett_minute, ratio };

inline SplitProtocol parse_split_protocol(const std::string& s) {
  if (s == "ett_hour") return SplitProtocol::ett_hour;
  if (s == "ett_minute") return SplitProtocol::ett_minute;
  if (s == "ratio") return SplitProtocol::ratio;
  throw ConfigError("unknown split protocol '" + s + "' (expected ett_hour, ett_minute or ratio)");
}

struct SeriesDataset {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::string> timestamps;  // empty without a date column
  Tensor values;                        // [T, V]
  std::string granularity;
  IndexRange train, val, test;
  std::vector<double> mean, stddev;     // per variate, from the train range
  std::vector<bool> constant;           // variates whose train std was zero
  bool normalized = false;

  std::size_t length() const { return values.dim(0); }
  std::size_t variates() const { return values.dim(1); }

  const IndexRange& range(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::val: return val;
      case Split::test: return test;
    }
    return train;
  }
};

struct CsvSchema {
  bool date_col = true;
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    cells.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads a header + rows CSV. Data rows and columns in error messages are
/// 1-based, rows counted after the header, columns counted in the file.
inline SeriesDataset load_csv(std::istream& in, const CsvSchema& schema, std::string name = "csv") {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) throw DataError(name + ": empty file");
  SeriesDataset ds;
  ds.name = std::move(name);
  const auto header = detail::split_commas(detail::trim(line));
  const std::size_t ncols = header.size();
  const std::size_t first = schema.date_col ? 1 : 0;
  if (ncols <= first) throw DataError(ds.name + ": no value columns");
  for (std::size_t c = first; c < ncols; ++c) ds.columns.emplace_back(detail::trim(header[c]));
  const std::size_t vars = ncols - first;

  std::vector<double> values;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    ++row;
    const auto cells = detail::split_commas(body);
    if (cells.size() != ncols) {
      throw DataError(ds.name + ": row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " columns, header has " + std::to_string(ncols));
    }
    if (schema.date_col) ds.timestamps.emplace_back(detail::trim(cells[0]));
    for (std::size_t c = first; c < ncols; ++c) {
      const auto v = detail::parse_double(cells[c]);
      if (!v) {
        throw DataError(ds.name + ": cannot parse '" + std::string(detail::trim(cells[c])) +
                        "' as a number at (row " + std::to_string(row) + ", col " +
                        std::to_string(c + 1) + ")");
      }
      if (!std::isfinite(*v)) {
        throw DataError(ds.name + ": non-finite value '" + std::string(detail::trim(cells[c])) + "' at (row " +
                        std::to_string(row) + ", col " + std::to_string(c + 1) + ")");
      }
      values.push_back(*v);
    }
  }
  if (row == 0) throw DataError(ds.name + ": no data rows");
  ds.values = Tensor({row, vars}, std::move(values));
  return ds;
}

inline SeriesDataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return load_csv(in, schema, path);
}

inline void write_csv(std::ostream& os, const SeriesDataset& ds) {
  const bool dated = !ds.timestamps.empty();
  if (dated) os << "date,";
  for (std::size_t c = 0; c < ds.columns.size(); ++c) os << (c ? "," : "") << ds.columns[c];
  os << '\n';
  const std::size_t vars = ds.variates();
  char buf[32];
  for (std::size_t t = 0; t < ds.length(); ++t) {
    if (dated) os << ds.timestamps[t] << ',';
    for (std::size_t v = 0; v < vars; ++v) {
      // Shortest representation that round-trips exactly.
      const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, ds.values[t * vars + v]);
      os << (v ? "," : "") << std::string_view(buf, static_cast<std::size_t>(end - buf));
    }
    os << '\n';
  }
}

inline void write_csv(const std::string& path, const SeriesDataset& ds) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_csv(os, ds);
}

/// Assigns disjoint, ordered train/val/test ranges and computes the train
/// statistics. ETT protocols use 12/4/4 months; series too short for them
/// fall back to 60/20/20 with a warning.
inline void assign_splits(SeriesDataset& ds, SplitProtocol protocol) {
  const std::size_t total = ds.length();
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  if (protocol != SplitProtocol::ratio) {
    const std::size_t per_month = protocol == SplitProtocol::ett_hour ? 30 * 24 : 30 * 24 * 4;
    n_train = 12 * per_month;
    n_val = 4 * per_month;
    n_test = 4 * per_month;
    if (n_train + n_val + n_test > total) {
      warn(ds.name + ": series too short for the 12/4/4-month split, using 60/20/20");
      protocol = SplitProtocol::ratio;
    }
  }
  if (protocol == SplitProtocol::ratio) {
    n_train = static_cast<std::size_t>(0.6 * static_cast<double>(total));
    n_val = static_cast<std::size_t>(0.2 * static_cast<double>(total));
    n_test = total - n_train - n_val;
  }
  ds.train = {0, n_train};
  ds.val = {n_train, n_train + n_val};
  ds.test = {n_train + n_val, n_train + n_val + n_test};

  const std::size_t vars = ds.variates();
  ds.mean.assign(vars, 0.0);
  ds.stddev.assign(vars, 0.0);
  ds.constant.assign(vars, false);
  if (n_train == 0) throw DataError(ds.name + ": empty train split");
  const auto v = ds.values.values();
  for (std::size_t c = 0; c < vars; ++c) {
    double m = 0.0;
    for (std::size_t t = 0; t < n_train; ++t) m += v[t * vars + c];
    m /= static_cast<double>(n_train);
    double ss = 0.0;
    for (std::size_t t = 0; t < n_train; ++t) ss += (v[t * vars + c] - m) * (v[t * vars + c] - m);
    ds.mean[c] = m;
    ds.stddev[c] = std::sqrt(ss / static_cast<double>(n_train));
  }
}

/// z-scores every variate with the train statistics. A zero-variance variate
/// keeps std = 1 (so it maps to 0) and is reported.
inline SeriesDataset normalize(const SeriesDataset& ds) {
  if (ds.mean.size() != ds.variates()) throw DataError(ds.name + ": splits not assigned before normalize");
  SeriesDataset out = ds;
  const std::size_t vars = ds.variates();
  for (std::size_t c = 0; c < vars; ++c) {
    if (!(out.stddev[c] > 0.0)) {
      warn(ds.name + ": variate " + std::to_string(c) + " is constant on the train split");
      out.stddev[c] = 1.0;
      out.constant[c] = true;
    }
  }
  std::vector<double> z(ds.values.values().begin(), ds.values.values().end());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (z[i] - out.mean[i % vars]) / out.stddev[i % vars];
  out.values = Tensor(ds.values.shape(), std::move(z));
  out.normalized = true;
  return out;
}

/// Maps a normalised tensor (last axis = variates) back to the data scale.
inline Tensor denormalize(const Tensor& x, const SeriesDataset& ds) {
  const std::size_t vars = ds.mean.size();
  if (x.rank() == 0 || x.shape().back() != vars) throw ShapeError("denormalize: last axis must be the variates");
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * ds.stddev[i % vars] + ds.mean[i % vars];
  return Tensor(x.shape(), std::move(out));
}

struct WindowBatch {
  Tensor inputs;                     // [B, L, V]
  Tensor targets;                    // [B, H, V]
  std::vector<std::size_t> origins;  // absolute start index of each input
};

/// Sliding windows lying entirely within one split. Window i has input
/// [o, o + L) and target [o + L, o + L + H), o = begin + i * stride.
class WindowSet {
 public:
  WindowSet(const SeriesDataset& ds, Split split, std::size_t lookback, std::size_t horizon,
            std::size_t stride = 1)
      : values_(ds.values), lookback_(lookback), horizon_(horizon) {
    const IndexRange r = ds.range(split);
    if (stride == 0) throw ConfigError("window stride must be >= 1");
    if (r.size() < lookback + horizon) {
      throw DataError(ds.name + ": " + split_name(split) + " split has " + std::to_string(r.size()) +
                      " steps, windows need " + std::to_string(lookback + horizon));
    }
    const std::size_t count = (r.size() - lookback - horizon) / stride + 1;
    origins_.reserve(count);
    for (std::size_t i = 0; i < count; ++i) origins_.push_back(r.begin + i * stride);
  }

  std::size_t size() const { return origins_.size(); }
  std::size_t lookback() const { return lookback_; }
  std::size_t horizon() const { return horizon_; }
  std::span<const std::size_t> origins() const { return origins_; }

  /// Batch built from window indices (not origins).
  WindowBatch batch(std::span<const std::size_t> idx) const {
    const std::size_t vars = values_.dim(1);
    const auto v = values_.values();
    std::vector<double> in(idx.size() * lookback_ * vars), tg(idx.size() * horizon_ * vars);
    WindowBatch wb;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const std::size_t o = origins_.at(idx[b]);
      wb.origins.push_back(o);
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * vars), lookback_ * vars,
                  in.begin() + static_cast<std::ptrdiff_t>(b * lookback_ * vars));
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((o + lookback_) * vars), horizon_ * vars,
                  tg.begin() + static_cast<std::ptrdiff_t>(b * horizon_ * vars));
    }
    wb.inputs = Tensor({idx.size(), lookback_, vars}, std::move(in));
    wb.targets = Tensor({idx.size(), horizon_, vars}, std::move(tg));
    return wb;
  }

  /// Windows [first, first + count) in order.
  WindowBatch range(std::size_t first, std::size_t count) const {
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = first + i;
    return batch(idx);
  }

 private:
  Tensor values_;
  std::size_t lookback_, horizon_;
  std::vector<std::size_t> origins_;
};

inline std::vector<WindowBatch> make_windows(const SeriesDataset& ds, Split split, std::size_t lookback,
                                             std::size_t horizon, std::size_t stride = 1,
                                             std::size_t batch_size = 32) {
  const WindowSet ws(ds, split, lookback, horizon, stride);
  std::vector<WindowBatch> out;
  for (std::size_t i = 0; i < ws.size(); i += batch_size)
    out.push_back(ws.range(i, std::min(batch_size, ws.size() - i)));
  return out;
}

/// Sum of sinusoids + seeded exponentially decaying bursts + Gaussian noise.
struct SynthSpec {
  std::size_t length = 8192;
  std::vector<double> periods{24.0, 168.0};
  std::vector<double> period_amps{1.0, 0.5};
  double burst_rate = 0.01;
  double burst_decay = 6.0;
  double burst_amp = 1.0;
  double noise_std = 0.1;
  std::size_t variates = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (periods.empty()) throw ConfigError("synth: at least one period is required");
    if (period_amps.size() != periods.size()) throw ConfigError("synth: periods and period_amps differ in length");
    for (double p : periods)
      if (!(p > 0)) throw ConfigError("synth: periods must be positive");
    const double pmax = *std::max_element(periods.begin(), periods.end());
    if (static_cast<double>(length) < 4.0 * pmax) throw ConfigError("synth: length must be >= 4 * max(period)");
    if (!(burst_rate >= 0 && burst_rate <= 1)) throw ConfigError("synth: burst_rate must lie in [0, 1]");
    if (!(burst_decay > 0)) throw ConfigError("synth: burst_decay must be positive");
    if (!(noise_std >= 0)) throw ConfigError("synth: noise_std must be >= 0");
    if (variates < 1) throw ConfigError("synth: variates must be >= 1");
  }
};

/// Variate 0 has zero phase on every period; further variates draw phases.
/// Burst onsets follow a per-step Bernoulli(burst_rate) process and each burst
/// has amplitude burst_amp * U(0.5, 1.5).
inline SeriesDataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t n = spec.length, vars = spec.variates;
  std::vector<double> x(n * vars, 0.0);
  for (std::size_t c = 0; c < vars; ++c) {
    std::vector<double> phase(spec.periods.size(), 0.0);
    if (c > 0)
      for (auto& ph : phase) ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double burst = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      double v = 0.0;
      for (std::size_t p = 0; p < spec.periods.size(); ++p)
        v += spec.period_amps[p] *
             std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / spec.periods[p] + phase[p]);
      burst *= std::exp(-1.0 / spec.burst_decay);
      if (spec.burst_rate > 0 && rng.bernoulli(spec.burst_rate)) burst += spec.burst_amp * rng.uniform(0.5, 1.5);
      v += burst;
      if (spec.noise_std > 0) v += rng.normal(0.0, spec.noise_std);
      x[t * vars + c] = v;
    }
  }
  SeriesDataset ds;
  ds.name = "synthetic";
  ds.granularity = "1 step";
  for (std::size_t c = 0; c < vars; ++c) ds.columns.push_back("x" + std::to_string(c));
  // Hourly ISO-8601 stamps from 2016-07-01 so the output reads like ETT files.
  ds.timestamps.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    const std::time_t stamp = 1467331200 + static_cast<std::time_t>(t) * 3600;
    std::tm tm{};
    gmtime_r(&stamp, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%d %H:%M:%S", &tm);
    ds.timestamps.emplace_back(buf);
  }
  ds.values = Tensor({n, vars}, std::move(x));
  return ds;
}

/// x + N(0, (level * std_v)^2) per variate (last axis), std over all other entries.
inline Tensor inject_noise(const Tensor& x, double level, std::uint64_t seed) {
  if (!(level >= 0)) throw ConfigError("inject_noise: level must be >= 0");
  if (level == 0) return x.detach();
  const std::size_t vars = x.rank() == 0 ? 1 : x.shape().back();
  const std::size_t rows = x.numel() / vars;
  const auto v = x.values();
  std::vector<double> sd(vars, 0.0);
  for (std::size_t c = 0; c < vars; ++c) {
    double m = 0.0, ss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) m += v[r * vars + c];
    m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) ss += (v[r * vars + c] - m) * (v[r * vars + c] - m);
    sd[c] = std::sqrt(ss / static_cast<double>(rows));
  }
  Rng rng(seed);
  std::vector<double> out(v.begin(), v.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = level * sd[i % vars];
    if (s > 0) out[i] += rng.normal(0.0, s);
  }
  return Tensor(x.shape(), std::move(out));
}

/// FNV-1a 64-bit over raw bytes.
inline std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h = 14695981039346656037ull) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 14695981039346656037ull) {
  return fnv1a(std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()), h);
}

/// Identity of the data a model sees: values plus split boundaries.
inline std::uint64_t dataset_hash(const SeriesDataset& ds) {
  const auto v = ds.values.values();
  std::uint64_t h = fnv1a(std::span(reinterpret_cast<const unsigned char*>(v.data()), v.size_bytes()));
  for (std::size_t b : {ds.train.begin, ds.train.end, ds.val.begin, ds.val.end, ds.test.begin, ds.test.end}) {
    h = fnv1a(std::span(reinterpret_cast<const unsigned char*>(&b), sizeof b), h);
  }
  return h;
}

}  // namespace fldm

#endif  // FLDM_DATA_HPP
