#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lw {

struct SourceFile {
  std::string path;
  std::vector<std::string> lines;
  std::vector<std::uint8_t> labels;  // one per line, 1 = defective
  std::string project;               // empty when absent
  std::optional<std::int64_t> timestamp;
};

struct Corpus {
  std::vector<SourceFile> files;

  const SourceFile* find(const std::string& path) const;
  /// Files for the given paths, in the given order; unknown paths are an error.
  Corpus subset(const std::vector<std::string>& paths) const;
  std::size_t total_lines() const;
  std::size_t total_defective() const;
};

/// One JSON object per line:
///   {"path": ..., "lines": [...], "labels": [...],
///    "project": optional, "timestamp": optional}
Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
  void validate() const;
};

struct SplitAssignment {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;

  /// Every listed path must exist in the corpus; the three lists must be
  /// pairwise disjoint and each non-empty.
  void validate_against(const Corpus& corpus) const;
};

SplitAssignment split_random(const Corpus& corpus, const SplitFractions& fractions,
                             std::uint64_t seed);
/// Oldest files train, newest test; every file needs a timestamp.
SplitAssignment split_timewise(const Corpus& corpus, const SplitFractions& fractions);
/// Held-out projects form the test set; the rest is shuffled and divided
/// between train and validation using the train/validation fractions.
SplitAssignment split_cross_project(const Corpus& corpus,
                                    const std::vector<std::string>& test_projects,
                                    const SplitFractions& fractions,
                                    std::uint64_t seed);

SplitAssignment load_split(const std::string& path);
void save_split(const SplitAssignment& split, const std::string& path);

/// Synthetic corpus knobs.  Defective lines contain one of the trigger
/// patterns; clean lines are guaranteed not to contain any of them.
struct SyntheticSpec {
  int n_files = 100;
  int lines_per_file = 64;
  double defect_rate = 0.03;
  int n_projects = 4;
  std::vector<std::string> trigger_patterns;  // defaults applied when empty
  std::vector<std::string> filler_words;      // defaults applied when empty
  void validate() const;
};

Corpus generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace lw
