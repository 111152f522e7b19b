#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lw/corpus.hpp"

namespace lw {

/// One scored line; (path, line) identifies it, line is 1-based.
struct ScoredLine {
  std::string path;
  int line = 0;
  double score = 0.0;
  std::uint8_t label = 0;
};

enum class Ranking { global, per_file };

struct MetricParams {
  double threshold = 0.5;  // classification cut for balanced accuracy
  double k_loc = 0.2;      // inspected fraction for recall@top
  double k_recall = 0.2;   // target recall fraction for effort@top
  Ranking ranking = Ranking::global;
};

struct MetricsReport {
  std::optional<double> balanced_accuracy;
  std::optional<double> auroc;
  std::optional<double> recall_at_top_loc;
  std::optional<double> effort_at_top_recall;
  std::optional<double> initial_false_alarm;
  /// metric name -> why it is undefined (only for absent metrics)
  std::map<std::string, std::string> reasons;
  std::int64_t n_lines = 0;
  std::int64_t n_defective = 0;
  std::int64_t n_files = 0;
  MetricParams params;
};

/// Deterministic ranking: score descending, ties by (path, line)
/// ascending.  Duplicate (path, line) pairs are an error.
std::vector<ScoredLine> rank_lines(std::vector<ScoredLine> lines);

/// Fraction of correct decisions averaged over both classes at the
/// given threshold (score >= threshold predicts defective); undefined
/// when either class is absent.
std::optional<double> balanced_accuracy(const std::vector<ScoredLine>& lines,
                                        double threshold,
                                        std::string* why = nullptr);

/// Probability a random defective line outscores a random clean one,
/// ties counting half; computed by rank sums.  Undefined when either
/// class is absent.
std::optional<double> auroc(const std::vector<ScoredLine>& lines,
                            std::string* why = nullptr);

/// Share of all defects found in the top max(1, floor(k * n)) ranked
/// lines.  Undefined without defective lines.
std::optional<double> recall_at_top_loc(const std::vector<ScoredLine>& ranked,
                                        double k, std::string* why = nullptr);

/// Fraction of lines that must be inspected, in rank order, to find
/// ceil(k * defects) defective lines.  Undefined without defective lines.
std::optional<double> effort_at_top_recall(const std::vector<ScoredLine>& ranked,
                                           double k, std::string* why = nullptr);

/// Fraction of clean lines ranked above the first defective one.
/// Undefined without defective lines.
std::optional<double> initial_false_alarm(const std::vector<ScoredLine>& ranked,
                                          std::string* why = nullptr);

/// All five metrics over per-file score vectors joined with labels from
/// the corpus.  predictions must cover exactly the corpus files, one
/// score per line.  With Ranking::per_file the three ranking metrics
/// are computed within each file that has defects and averaged.
MetricsReport evaluate(
    const std::vector<std::pair<std::string, std::vector<double>>>& predictions,
    const Corpus& subset, const MetricParams& params);

std::string report_to_json(const MetricsReport& report);

/// Ranked lines as JSONL with 1-based rank, for inspection dumps.
std::string ranked_to_jsonl(const std::vector<ScoredLine>& ranked);

}  // namespace lw
