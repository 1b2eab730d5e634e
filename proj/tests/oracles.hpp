// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reference implementations used only by tests. They share no code with the
// library beyond plain containers and are written for clarity, not speed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

// Row-major m x k times k x n by the textbook triple loop.
inline Vec matmul(const Vec& a, const Vec& b, std::size_t m, std::size_t k, std::size_t n) {
  Vec c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

// Keeps ceil(k*n) entries by a full stable sort on (|v| desc, index asc).
inline Vec trim(const Vec& v, double k) {
  const std::size_t n = v.size();
  std::size_t keep = static_cast<std::size_t>(std::ceil(k * static_cast<double>(n)));
  if (keep > n) keep = n;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
    return std::fabs(v[x]) > std::fabs(v[y]);
  });
  Vec out(n, 0.0);
  for (std::size_t r = 0; r < keep; ++r) out[idx[r]] = v[idx[r]];
  return out;
}

inline int sgn(double x) { return (x > 0) - (x < 0); }

// TIES for one tensor: weight, trim, elect sign by count (ties by value sum,
// then no change), add the mean of the agreeing nonzero entries.
inline Vec ties(const Vec& base, const std::vector<Vec>& deltas, const Vec& weights, double k) {
  std::vector<Vec> t;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    Vec w(deltas[i].size());
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = deltas[i][j] * weights[i];
    t.push_back(trim(w, k));
  }
  Vec out = base;
  for (std::size_t j = 0; j < base.size(); ++j) {
    int count = 0;
    double total = 0.0;
    for (const auto& d : t) {
      count += sgn(d[j]);
      total += d[j];
    }
    int s = sgn(static_cast<double>(count));
    if (s == 0) s = sgn(total);
    if (s == 0) continue;
    double acc = 0.0;
    int n = 0;
    for (const auto& d : t) {
      if (d[j] != 0.0 && sgn(d[j]) == s) {
        acc += d[j];
        ++n;
      }
    }
    out[j] = base[j] + acc / n;
  }
  return out;
}

// Closed-form slerp coefficient pair for angle omega at t, in long double.
inline std::pair<long double, long double> slerp_coeffs(long double omega, long double t) {
  const long double s = std::sin(omega);
  return {std::sin((1 - t) * omega) / s, std::sin(t * omega) / s};
}

}  // namespace oracle
