// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "paft/param_set.hpp"
#include "paft/rng.hpp"

namespace paft::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    SeededRng rng(static_cast<std::uint64_t>(::getpid()) * 1000003u + static_cast<std::uint64_t>(counter++));
    path_ = std::filesystem::temp_directory_path() / ("paft_test_" + std::to_string(rng.next_u64()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

/// Up to `max_tensors` tensors of rank 0..3 with at most `max_extent` per axis.
inline ParamSet random_param_set(SeededRng& rng, std::size_t max_tensors, std::size_t max_extent) {
  ParamSet p;
  const std::size_t n = 1 + rng.below(max_tensors);
  for (std::size_t i = 0; i < n; ++i) {
    Shape shape(rng.below(4));
    for (auto& e : shape) e = rng.below(max_extent + 1);
    std::vector<double> v(element_count(shape));
    for (double& x : v) {
      switch (rng.below(4)) {
        case 0: x = 0.0; break;
        case 1: x = 1e-5; break;
        default: x = rng.normal() * std::pow(10.0, static_cast<double>(rng.below(12)) - 6.0);
      }
    }
    p.insert("t" + std::to_string(i) + (rng.below(2) ? ".weight" : ".bias"), Tensor(shape, std::move(v)));
  }
  if (rng.below(2)) p.metadata()["seed"] = std::to_string(rng.next_u64());
  return p;
}

/// Same schema as `like`, Gaussian values.
inline ParamSet random_like(SeededRng& rng, const ParamSet& like, double scale = 1.0) {
  ParamSet p;
  for (const auto& [name, t] : like) {
    std::vector<double> v(t.size());
    for (double& x : v) x = scale * rng.normal();
    p.insert(name, Tensor(t.shape(), std::move(v)));
  }
  return p;
}

struct CommandResult {
  int exit_code = -1;
  std::string out;
};

/// Runs a shell command, capturing stdout; stderr goes to `stderr_path`
/// when given, otherwise it is discarded.
inline CommandResult run(const std::string& command, const std::string& stderr_path = {}) {
  const std::string full = command + " 2>" + (stderr_path.empty() ? std::string("/dev/null") : stderr_path);
  CommandResult r;
  FILE* pipe = ::popen(full.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace paft::test
