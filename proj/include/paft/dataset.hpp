// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic two-task benchmark and its text file format.
//
// A latent vector z ~ N(0, I) of size `latent_dim` is observed `copies`
// times with independent noise of scale `copy_noise`; the network input is
// the concatenation of the copies. SFT examples are labelled by a linear
// teacher T: label = argmax(T z), where T reads only the first
// `sft_features` latents. Preference pairs prefer argmax(U z) for a second
// teacher U reading only the last `pref_features` latents. On the conflict
// slice (z[0] > slice_threshold) a fraction `conflict` of the pairs name the
// SFT label as the loser, so improving the preference objective there costs
// SFT accuracy.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "paft/error.hpp"
#include "paft/rng.hpp"
#include "paft/toy_model.hpp"

namespace paft {

struct BenchmarkConfig {
  std::size_t latent_dim = 8;
  std::size_t copies = 1;
  double copy_noise = 0.0;
  std::size_t classes = 4;
  std::size_t sft_train = 256;
  std::size_t pref_train = 256;
  std::size_t sft_eval = 1024;
  std::size_t pref_eval = 1024;
  std::size_t sft_features = 4;
  std::size_t pref_features = 4;
  /// Fraction of conflict-slice pairs whose loser is the SFT label.
  double conflict = 0.5;
  double slice_threshold = 0.0;
  /// Probability that an SFT training label is replaced by a uniform one.
  double label_noise = 0.0;
};

struct Benchmark {
  std::vector<SftExample> sft_train;
  std::vector<SftExample> sft_eval;
  std::vector<PreferencePair> pref_train;
  std::vector<PreferencePair> pref_eval;
};

namespace detail {

inline std::size_t argmax_of(const std::vector<double>& m, std::size_t rows, std::size_t cols,
                             const std::vector<double>& x) {
  std::size_t best = 0;
  double best_v = -INFINITY;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += m[r * cols + c] * x[c];
    if (s > best_v) {
      best_v = s;
      best = r;
    }
  }
  return best;
}

inline std::size_t other_class(SeededRng& rng, std::size_t classes, std::size_t avoid) {
  const std::size_t k = rng.below(classes - 1);
  return k >= avoid ? k + 1 : k;
}

}  // namespace detail

inline std::size_t input_dim(const BenchmarkConfig& c) { return c.latent_dim * c.copies; }

inline void validate_benchmark_config(const BenchmarkConfig& c) {
  if (c.latent_dim == 0 || c.copies == 0) {
    throw Error(ErrorCode::kInvalidArgument, "benchmark latent_dim and copies must be positive");
  }
  if (!(c.copy_noise >= 0.0) || !std::isfinite(c.copy_noise)) {
    throw Error(ErrorCode::kInvalidArgument, "copy_noise must be finite and >= 0");
  }
  if (c.classes < 3) throw Error(ErrorCode::kInvalidArgument, "benchmark needs at least 3 classes");
  if (c.sft_features == 0 || c.sft_features > c.latent_dim || c.pref_features == 0 ||
      c.pref_features > c.latent_dim) {
    throw Error(ErrorCode::kInvalidArgument, "teacher feature counts must be in [1, latent_dim]");
  }
  if (!(c.conflict >= 0.0 && c.conflict <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "conflict must be in [0, 1]");
  }
  if (!(c.label_noise >= 0.0 && c.label_noise <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "label_noise must be in [0, 1]");
  }
  if (!std::isfinite(c.slice_threshold)) throw Error(ErrorCode::kInvalidArgument, "slice_threshold must be finite");
}

/// Deterministic in (config, seed). Train and eval splits come from the
/// same teachers and input distribution.
inline Benchmark make_benchmark(const BenchmarkConfig& c, std::uint64_t seed) {
  validate_benchmark_config(c);
  SeededRng rng(seed);
  const std::size_t d = c.latent_dim, k = c.classes;
  std::vector<double> t(k * d, 0.0), u(k * d, 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t f = 0; f < c.sft_features; ++f) t[r * d + f] = rng.normal();
    for (std::size_t f = d - c.pref_features; f < d; ++f) u[r * d + f] = rng.normal();
  }
  // Returns the latent and fills the observed input.
  auto draw = [&](std::vector<double>& x) {
    std::vector<double> z(d);
    for (double& v : z) v = rng.normal();
    x.resize(d * c.copies);
    for (std::size_t r = 0; r < c.copies; ++r) {
      for (std::size_t f = 0; f < d; ++f) {
        x[r * d + f] = c.copy_noise > 0.0 ? z[f] + c.copy_noise * rng.normal() : z[f];
      }
    }
    return z;
  };
  auto sft = [&](std::size_t n, bool noisy) {
    std::vector<SftExample> out(n);
    for (auto& e : out) {
      const auto z = draw(e.x);
      e.label = detail::argmax_of(t, k, d, z);
      if (noisy && c.label_noise > 0.0 && rng.uniform() < c.label_noise) e.label = rng.below(k);
    }
    return out;
  };
  auto pref = [&](std::size_t n) {
    std::vector<PreferencePair> out(n);
    for (auto& p : out) {
      const auto z = draw(p.x);
      const std::size_t sft_label = detail::argmax_of(t, k, d, z);
      p.winner = detail::argmax_of(u, k, d, z);
      const bool in_slice = z[0] > c.slice_threshold;
      if (in_slice && rng.uniform() < c.conflict) {
        if (p.winner == sft_label) p.winner = detail::other_class(rng, k, sft_label);
        p.loser = sft_label;
      } else {
        p.loser = detail::other_class(rng, k, p.winner);
      }
    }
    return out;
  };
  Benchmark bm;
  bm.sft_train = sft(c.sft_train, true);
  bm.pref_train = pref(c.pref_train);
  bm.sft_eval = sft(c.sft_eval, false);
  bm.pref_eval = pref(c.pref_eval);
  return bm;
}

// Text format, one record per line, values printed with %.17g:
//   paft-sft v1 dim=<d> classes=<k> count=<n>
//   <label> <x1> ... <xd>
//   paft-pref v1 dim=<d> classes=<k> count=<n>
//   <winner> <loser> <x1> ... <xd>

namespace detail {

inline void append_features(std::string& out, const std::vector<double>& x) {
  char buf[32];
  for (double v : x) {
    std::snprintf(buf, sizeof buf, " %.17g", v);
    out += buf;
  }
  out += '\n';
}

struct DatasetHeader {
  std::size_t dim = 0, classes = 0, count = 0;
};

inline DatasetHeader parse_dataset_header(const std::string& line, const std::string& kind) {
  std::istringstream in(line);
  std::string tag, version, dim, classes, count;
  in >> tag >> version >> dim >> classes >> count;
  DatasetHeader h;
  auto value = [&](const std::string& tok, const char* key) -> std::size_t {
    const std::string prefix = std::string(key) + "=";
    if (tok.rfind(prefix, 0) != 0) throw Error(ErrorCode::kFormatError, "dataset header lacks '" + prefix + "'");
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(tok.substr(prefix.size()), &pos);
      if (pos + prefix.size() != tok.size()) throw std::invalid_argument(tok);
      return static_cast<std::size_t>(v);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kFormatError, "bad dataset header field '" + tok + "'");
    }
  };
  if (tag != kind || version != "v1") {
    throw Error(ErrorCode::kFormatError, "expected a '" + kind + " v1' header");
  }
  h.dim = value(dim, "dim");
  h.classes = value(classes, "classes");
  h.count = value(count, "count");
  if (h.dim == 0 || h.classes < 2) throw Error(ErrorCode::kFormatError, "dataset header has empty dimensions");
  return h;
}

inline std::vector<double> parse_numbers(std::istringstream& in, std::size_t n, std::size_t line_no) {
  std::vector<double> x(n);
  for (double& v : x) {
    if (!(in >> v) || !std::isfinite(v)) {
      throw Error(ErrorCode::kFormatError, "line " + std::to_string(line_no) + ": bad feature value");
    }
  }
  std::string extra;
  if (in >> extra) throw Error(ErrorCode::kFormatError, "line " + std::to_string(line_no) + ": trailing tokens");
  return x;
}

inline std::size_t parse_label(std::istringstream& in, std::size_t classes, std::size_t line_no) {
  long long v = -1;
  if (!(in >> v) || v < 0 || static_cast<std::size_t>(v) >= classes) {
    throw Error(ErrorCode::kFormatError, "line " + std::to_string(line_no) + ": bad class label");
  }
  return static_cast<std::size_t>(v);
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIoError, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace detail

inline std::string format_sft_dataset(const std::vector<SftExample>& data, std::size_t classes) {
  const std::size_t dim = data.empty() ? 0 : data.front().x.size();
  std::string out = "paft-sft v1 dim=" + std::to_string(dim) + " classes=" + std::to_string(classes) +
                    " count=" + std::to_string(data.size()) + "\n";
  for (const auto& e : data) {
    out += std::to_string(e.label);
    detail::append_features(out, e.x);
  }
  return out;
}

inline std::string format_pref_dataset(const std::vector<PreferencePair>& data, std::size_t classes) {
  const std::size_t dim = data.empty() ? 0 : data.front().x.size();
  std::string out = "paft-pref v1 dim=" + std::to_string(dim) + " classes=" + std::to_string(classes) +
                    " count=" + std::to_string(data.size()) + "\n";
  for (const auto& p : data) {
    out += std::to_string(p.winner) + " " + std::to_string(p.loser);
    detail::append_features(out, p.x);
  }
  return out;
}

inline std::vector<SftExample> parse_sft_dataset(const std::string& text) {
  std::istringstream lines(text);
  std::string line;
  if (!std::getline(lines, line)) throw Error(ErrorCode::kFormatError, "empty dataset");
  const auto h = detail::parse_dataset_header(line, "paft-sft");
  std::vector<SftExample> out;
  for (std::size_t no = 2; std::getline(lines, line); ++no) {
    if (line.empty()) continue;
    std::istringstream in(line);
    SftExample e;
    e.label = detail::parse_label(in, h.classes, no);
    e.x = detail::parse_numbers(in, h.dim, no);
    out.push_back(std::move(e));
  }
  if (out.size() != h.count) throw Error(ErrorCode::kFormatError, "record count differs from header");
  return out;
}

inline std::vector<PreferencePair> parse_pref_dataset(const std::string& text) {
  std::istringstream lines(text);
  std::string line;
  if (!std::getline(lines, line)) throw Error(ErrorCode::kFormatError, "empty dataset");
  const auto h = detail::parse_dataset_header(line, "paft-pref");
  std::vector<PreferencePair> out;
  for (std::size_t no = 2; std::getline(lines, line); ++no) {
    if (line.empty()) continue;
    std::istringstream in(line);
    PreferencePair p;
    p.winner = detail::parse_label(in, h.classes, no);
    p.loser = detail::parse_label(in, h.classes, no);
    if (p.winner == p.loser) {
      throw Error(ErrorCode::kFormatError, "line " + std::to_string(no) + ": winner equals loser");
    }
    p.x = detail::parse_numbers(in, h.dim, no);
    out.push_back(std::move(p));
  }
  if (out.size() != h.count) throw Error(ErrorCode::kFormatError, "record count differs from header");
  return out;
}

inline std::vector<SftExample> load_sft_dataset(const std::string& path) {
  return parse_sft_dataset(detail::read_text(path));
}

inline std::vector<PreferencePair> load_pref_dataset(const std::string& path) {
  return parse_pref_dataset(detail::read_text(path));
}

}  // namespace paft
