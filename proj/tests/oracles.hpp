#pragma once

// Deliberately naive reference implementations used to cross-check the
// library.  Everything here favors obviousness over speed and is written
// independently of the code under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lw/metrics.hpp"
#include "lw/windows.hpp"

namespace oracle {

inline std::vector<lw::ScoredLine> sort_ranked(std::vector<lw::ScoredLine> v) {
  std::sort(v.begin(), v.end(),
            [](const lw::ScoredLine& a, const lw::ScoredLine& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.path != b.path) return a.path < b.path;
              return a.line < b.line;
            });
  return v;
}

/// AuROC by checking every (defective, clean) pair.
inline std::optional<double> auc_pairs(const std::vector<lw::ScoredLine>& lines) {
  long long pos = 0, neg = 0;
  for (const auto& l : lines) (l.label ? pos : neg)++;
  if (pos == 0 || neg == 0) return std::nullopt;
  double credit = 0.0;
  for (const auto& d : lines) {
    if (!d.label) continue;
    for (const auto& c : lines) {
      if (c.label) continue;
      if (d.score > c.score)
        credit += 1.0;
      else if (d.score == c.score)
        credit += 0.5;
    }
  }
  return credit / (static_cast<double>(pos) * static_cast<double>(neg));
}

/// Balanced accuracy from the full confusion matrix.
inline std::optional<double> balanced_accuracy_confusion(
    const std::vector<lw::ScoredLine>& lines, double threshold) {
  long long tp = 0, tn = 0, fp = 0, fn = 0;
  for (const auto& l : lines) {
    const bool predicted = l.score >= threshold;
    if (l.label && predicted) ++tp;
    if (l.label && !predicted) ++fn;
    if (!l.label && predicted) ++fp;
    if (!l.label && !predicted) ++tn;
  }
  if (tp + fn == 0 || tn + fp == 0) return std::nullopt;
  const double tpr = static_cast<double>(tp) / static_cast<double>(tp + fn);
  const double tnr = static_cast<double>(tn) / static_cast<double>(tn + fp);
  return (tpr + tnr) / 2.0;
}

/// Defects found after inspecting the top max(1, floor(k*n)) lines.
inline std::optional<double> recall_at_top(const std::vector<lw::ScoredLine>& lines,
                                           double k) {
  long long defects = 0;
  for (const auto& l : lines) defects += l.label ? 1 : 0;
  if (defects == 0) return std::nullopt;
  const auto ranked = sort_ranked(lines);
  const auto n = static_cast<long long>(ranked.size());
  long long budget = static_cast<long long>(std::floor(k * static_cast<double>(n)));
  if (budget < 1) budget = 1;
  long long found = 0;
  for (long long i = 0; i < budget && i < n; ++i) found += ranked[i].label ? 1 : 0;
  return static_cast<double>(found) / static_cast<double>(defects);
}

/// Lines inspected, as a fraction, until ceil(k*defects) defects are found.
inline std::optional<double> effort_at_recall(const std::vector<lw::ScoredLine>& lines,
                                              double k) {
  long long defects = 0;
  for (const auto& l : lines) defects += l.label ? 1 : 0;
  if (defects == 0) return std::nullopt;
  const auto ranked = sort_ranked(lines);
  const auto target =
      static_cast<long long>(std::ceil(k * static_cast<double>(defects)));
  long long found = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    found += ranked[i].label ? 1 : 0;
    if (found >= target)
      return static_cast<double>(i + 1) / static_cast<double>(ranked.size());
  }
  return 1.0;
}

/// Clean lines, as a fraction, before the first defective line.
inline std::optional<double> ifa_scan(const std::vector<lw::ScoredLine>& lines) {
  long long defects = 0;
  for (const auto& l : lines) defects += l.label ? 1 : 0;
  if (defects == 0) return std::nullopt;
  const auto ranked = sort_ranked(lines);
  std::size_t clean = 0;
  for (const auto& l : ranked) {
    if (l.label) break;
    ++clean;
  }
  return static_cast<double>(clean) / static_cast<double>(ranked.size());
}

// ---- dense algebra, plain triple loops in double ----

inline std::vector<double> matmul_nn(const std::vector<double>& a,
                                     const std::vector<double>& b, int rows,
                                     int inner, int cols) {
  std::vector<double> c(static_cast<std::size_t>(rows) * cols, 0.0);
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < inner; ++k)
        acc += a[static_cast<std::size_t>(r) * inner + k] *
               b[static_cast<std::size_t>(k) * cols + j];
      c[static_cast<std::size_t>(r) * cols + j] = acc;
    }
  return c;
}

inline std::vector<double> matmul_nt(const std::vector<double>& a,
                                     const std::vector<double>& b, int rows,
                                     int inner, int cols) {
  std::vector<double> c(static_cast<std::size_t>(rows) * cols, 0.0);
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < inner; ++k)
        acc += a[static_cast<std::size_t>(r) * inner + k] *
               b[static_cast<std::size_t>(j) * inner + k];
      c[static_cast<std::size_t>(r) * cols + j] = acc;
    }
  return c;
}

inline std::vector<double> matmul_tn(const std::vector<double>& a,
                                     const std::vector<double>& b, int rows,
                                     int inner, int cols) {
  std::vector<double> c(static_cast<std::size_t>(rows) * cols, 0.0);
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < inner; ++k)
        acc += a[static_cast<std::size_t>(k) * rows + r] *
               b[static_cast<std::size_t>(k) * cols + j];
      c[static_cast<std::size_t>(r) * cols + j] = acc;
    }
  return c;
}

inline std::vector<double> softmax_rows(const std::vector<double>& x, int rows,
                                        int cols) {
  std::vector<double> out(x.size());
  for (int r = 0; r < rows; ++r) {
    const double* row = x.data() + static_cast<std::size_t>(r) * cols;
    double* dst = out.data() + static_cast<std::size_t>(r) * cols;
    double mx = row[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) z += std::exp(row[j] - mx);
    for (int j = 0; j < cols; ++j) dst[j] = std::exp(row[j] - mx) / z;
  }
  return out;
}

inline std::vector<double> layernorm_rows(const std::vector<double>& x,
                                          const std::vector<double>& gain,
                                          const std::vector<double>& bias,
                                          int rows, int cols, double eps) {
  std::vector<double> out(x.size());
  for (int r = 0; r < rows; ++r) {
    const double* row = x.data() + static_cast<std::size_t>(r) * cols;
    double mean = 0.0;
    for (int j = 0; j < cols; ++j) mean += row[j];
    mean /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= cols;
    for (int j = 0; j < cols; ++j)
      out[static_cast<std::size_t>(r) * cols + j] =
          (row[j] - mean) / std::sqrt(var + eps) * gain[j] + bias[j];
  }
  return out;
}

/// Per-line mean of window scores via explicit coverage counting.
inline std::vector<double> merge_by_coverage(
    const std::vector<std::pair<int, std::vector<double>>>& window_scores,
    const std::vector<lw::WindowRange>& plan, int n_lines) {
  std::vector<double> sum(static_cast<std::size_t>(n_lines), 0.0);
  std::vector<int> cover(static_cast<std::size_t>(n_lines), 0);
  for (std::size_t wi = 0; wi < plan.size(); ++wi) {
    const auto& [start, scores] = window_scores[wi];
    for (int line = plan[wi].start; line <= plan[wi].end; ++line) {
      sum[static_cast<std::size_t>(line - 1)] +=
          scores[static_cast<std::size_t>(line - start)];
      cover[static_cast<std::size_t>(line - 1)] += 1;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(n_lines));
  for (int i = 0; i < n_lines; ++i)
    out[static_cast<std::size_t>(i)] =
        sum[static_cast<std::size_t>(i)] / cover[static_cast<std::size_t>(i)];
  return out;
}

}  // namespace oracle
