#include "lw/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "lw/common.hpp"

namespace lw {

using nlohmann::json;

namespace {

void set_reason(std::string* why, const char* text) {
  if (why) *why = text;
}

struct ClassCounts {
  std::int64_t pos = 0;
  std::int64_t neg = 0;
};

ClassCounts count_classes(const std::vector<ScoredLine>& lines) {
  ClassCounts c;
  for (const ScoredLine& l : lines) (l.label ? c.pos : c.neg)++;
  return c;
}

}  // namespace

std::vector<ScoredLine> rank_lines(std::vector<ScoredLine> lines) {
  if (lines.empty()) throw ValidationError("cannot rank an empty line set");
  {
    std::vector<const ScoredLine*> check;
    check.reserve(lines.size());
    for (const ScoredLine& l : lines) check.push_back(&l);
    std::sort(check.begin(), check.end(),
              [](const ScoredLine* a, const ScoredLine* b) {
                if (a->path != b->path) return a->path < b->path;
                return a->line < b->line;
              });
    for (std::size_t i = 1; i < check.size(); ++i)
      if (check[i]->path == check[i - 1]->path && check[i]->line == check[i - 1]->line)
        throw ValidationError("duplicate line in ranking input: " + check[i]->path +
                              ":" + std::to_string(check[i]->line));
  }
  std::sort(lines.begin(), lines.end(), [](const ScoredLine& a, const ScoredLine& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.path != b.path) return a.path < b.path;
    return a.line < b.line;
  });
  return lines;
}

std::optional<double> balanced_accuracy(const std::vector<ScoredLine>& lines,
                                        double threshold, std::string* why) {
  const ClassCounts c = count_classes(lines);
  if (c.pos == 0 || c.neg == 0) {
    set_reason(why, "both classes must be present");
    return std::nullopt;
  }
  std::int64_t tp = 0, tn = 0;
  for (const ScoredLine& l : lines) {
    const bool predicted = l.score >= threshold;
    if (l.label && predicted) ++tp;
    if (!l.label && !predicted) ++tn;
  }
  const double tpr = static_cast<double>(tp) / static_cast<double>(c.pos);
  const double tnr = static_cast<double>(tn) / static_cast<double>(c.neg);
  return 0.5 * (tpr + tnr);
}

std::optional<double> auroc(const std::vector<ScoredLine>& lines, std::string* why) {
  const ClassCounts c = count_classes(lines);
  if (c.pos == 0 || c.neg == 0) {
    set_reason(why, "both classes must be present");
    return std::nullopt;
  }
  // Mann-Whitney formulation: average tied ranks, sum positive ranks.
  std::vector<std::size_t> order(lines.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return lines[a].score < lines[b].score;
  });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() &&
           lines[order[j + 1]].score == lines[order[i]].score)
      ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k)
      if (lines[order[k]].label) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double n1 = static_cast<double>(c.pos);
  const double n0 = static_cast<double>(c.neg);
  const double u1 = rank_sum_pos - n1 * (n1 + 1.0) / 2.0;
  return u1 / (n1 * n0);
}

std::optional<double> recall_at_top_loc(const std::vector<ScoredLine>& ranked,
                                        double k, std::string* why) {
  if (k <= 0.0 || k > 1.0)
    throw ValidationError("inspection fraction must be in (0, 1]");
  const ClassCounts c = count_classes(ranked);
  if (c.pos == 0) {
    set_reason(why, "no defective lines");
    return std::nullopt;
  }
  const auto n = static_cast<double>(ranked.size());
  const auto budget = static_cast<std::size_t>(
      std::max<double>(1.0, std::floor(k * n)));
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < budget && i < ranked.size(); ++i)
    if (ranked[i].label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(c.pos);
}

std::optional<double> effort_at_top_recall(const std::vector<ScoredLine>& ranked,
                                           double k, std::string* why) {
  if (k <= 0.0 || k > 1.0)
    throw ValidationError("recall target must be in (0, 1]");
  const ClassCounts c = count_classes(ranked);
  if (c.pos == 0) {
    set_reason(why, "no defective lines");
    return std::nullopt;
  }
  const auto target = static_cast<std::int64_t>(
      std::ceil(k * static_cast<double>(c.pos)));
  std::int64_t found = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (ranked[i].label) ++found;
    if (found >= target)
      return static_cast<double>(i + 1) / static_cast<double>(ranked.size());
  }
  return 1.0;  // unreachable: target <= defect count
}

std::optional<double> initial_false_alarm(const std::vector<ScoredLine>& ranked,
                                          std::string* why) {
  const ClassCounts c = count_classes(ranked);
  if (c.pos == 0) {
    set_reason(why, "no defective lines");
    return std::nullopt;
  }
  std::size_t first = 0;
  while (first < ranked.size() && !ranked[first].label) ++first;
  return static_cast<double>(first) / static_cast<double>(ranked.size());
}

MetricsReport evaluate(
    const std::vector<std::pair<std::string, std::vector<double>>>& predictions,
    const Corpus& subset, const MetricParams& params) {
  if (params.threshold < 0.0 || params.threshold > 1.0)
    throw ValidationError("threshold must be in [0, 1]");
  if (params.k_loc <= 0.0 || params.k_loc > 1.0)
    throw ValidationError("inspection fraction must be in (0, 1]");
  if (params.k_recall <= 0.0 || params.k_recall > 1.0)
    throw ValidationError("recall target must be in (0, 1]");
  if (subset.files.empty()) throw ValidationError("nothing to evaluate: corpus is empty");
  if (predictions.size() != subset.files.size())
    throw ValidationError("expected scores for " + std::to_string(subset.files.size()) +
                          " files, got " + std::to_string(predictions.size()));

  std::unordered_map<std::string, const SourceFile*> by_path;
  for (const SourceFile& f : subset.files) by_path[f.path] = &f;
  std::unordered_set<std::string> seen;
  std::vector<ScoredLine> pool;
  std::vector<std::vector<ScoredLine>> per_file;
  for (const auto& [path, scores] : predictions) {
    auto it = by_path.find(path);
    if (it == by_path.end())
      throw ValidationError("scores given for a file outside the corpus: " + path);
    if (!seen.insert(path).second)
      throw ValidationError("scores given twice for file: " + path);
    const SourceFile& f = *it->second;
    if (scores.size() != f.lines.size())
      throw ValidationError("file " + path + " has " + std::to_string(f.lines.size()) +
                            " lines but " + std::to_string(scores.size()) + " scores");
    std::vector<ScoredLine> lines;
    lines.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (std::isnan(scores[i]))
        throw ValidationError("score for " + path + ":" + std::to_string(i + 1) +
                              " is not a number");
      lines.push_back({path, static_cast<int>(i + 1), scores[i], f.labels[i]});
    }
    pool.insert(pool.end(), lines.begin(), lines.end());
    per_file.push_back(std::move(lines));
  }

  MetricsReport report;
  report.params = params;
  report.n_files = static_cast<std::int64_t>(subset.files.size());
  report.n_lines = static_cast<std::int64_t>(pool.size());
  const ClassCounts pool_counts = count_classes(pool);
  report.n_defective = pool_counts.pos;

  std::string why;
  report.balanced_accuracy = balanced_accuracy(pool, params.threshold, &why);
  if (!report.balanced_accuracy) report.reasons["balanced_accuracy"] = why;
  report.auroc = auroc(pool, &why);
  if (!report.auroc) report.reasons["auroc"] = why;

  if (params.ranking == Ranking::global) {
    const std::vector<ScoredLine> ranked = rank_lines(pool);
    report.recall_at_top_loc = recall_at_top_loc(ranked, params.k_loc, &why);
    if (!report.recall_at_top_loc) report.reasons["recall_at_top_loc"] = why;
    report.effort_at_top_recall = effort_at_top_recall(ranked, params.k_recall, &why);
    if (!report.effort_at_top_recall) report.reasons["effort_at_top_recall"] = why;
    report.initial_false_alarm = initial_false_alarm(ranked, &why);
    if (!report.initial_false_alarm) report.reasons["initial_false_alarm"] = why;
  } else {
    double sum_recall = 0.0, sum_effort = 0.0, sum_ifa = 0.0;
    int files_with_defects = 0;
    for (const auto& lines : per_file) {
      if (count_classes(lines).pos == 0) continue;
      const std::vector<ScoredLine> ranked = rank_lines(lines);
      sum_recall += *recall_at_top_loc(ranked, params.k_loc);
      sum_effort += *effort_at_top_recall(ranked, params.k_recall);
      sum_ifa += *initial_false_alarm(ranked);
      ++files_with_defects;
    }
    if (files_with_defects == 0) {
      for (const char* m :
           {"recall_at_top_loc", "effort_at_top_recall", "initial_false_alarm"})
        report.reasons[m] = "no file has defective lines";
    } else {
      report.recall_at_top_loc = sum_recall / files_with_defects;
      report.effort_at_top_recall = sum_effort / files_with_defects;
      report.initial_false_alarm = sum_ifa / files_with_defects;
    }
  }
  return report;
}

std::string report_to_json(const MetricsReport& report) {
  json j;
  j["tool"] = std::string(kToolName) + " " + kToolVersion;
  j["counts"] = {{"files", report.n_files},
                 {"lines", report.n_lines},
                 {"defective_lines", report.n_defective}};
  j["parameters"] = {
      {"threshold", report.params.threshold},
      {"k_loc", report.params.k_loc},
      {"k_recall", report.params.k_recall},
      {"ranking", report.params.ranking == Ranking::global ? "global" : "per-file"}};
  auto put = [&](const char* name, const std::optional<double>& v) {
    if (v)
      j["metrics"][name] = *v;
    else
      j["metrics"][name] = nullptr;
  };
  put("balanced_accuracy", report.balanced_accuracy);
  put("auroc", report.auroc);
  put("recall_at_top_loc", report.recall_at_top_loc);
  put("effort_at_top_recall", report.effort_at_top_recall);
  put("initial_false_alarm", report.initial_false_alarm);
  j["reasons"] = json::object();
  for (const auto& [metric, reason] : report.reasons) j["reasons"][metric] = reason;
  return j.dump(2) + "\n";
}

std::string ranked_to_jsonl(const std::vector<ScoredLine>& ranked) {
  std::string out;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    json j;
    j["rank"] = i + 1;
    j["path"] = ranked[i].path;
    j["line"] = ranked[i].line;
    j["score"] = ranked[i].score;
    j["label"] = static_cast<int>(ranked[i].label);
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace lw
