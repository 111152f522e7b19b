#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lw/bpe.hpp"
#include "lw/corpus.hpp"

namespace lw {

/// 1-based inclusive line range of one window.
struct WindowRange {
  int start = 0;
  int end = 0;
  bool operator==(const WindowRange&) const = default;
};

/// Covers lines 1..n_lines with windows of window_lines lines advancing
/// by (window_lines - overlap); the final window is clamped to the file
/// end.  Every line is covered by at least one window.
std::vector<WindowRange> window_plan(int n_lines, int window_lines, int overlap);

/// One model input: a fixed (L, T) grid of token ids with padding masks.
struct FileWindow {
  std::string path;
  int start_line = 0;  // 1-based line this window begins at
  int window_lines = 0;
  int line_tokens = 0;
  std::vector<std::int32_t> token_ids;   // (L * T), 0 = padding
  std::vector<std::uint8_t> token_mask;  // (L * T), 1 = real token
  std::vector<std::uint8_t> line_mask;   // (L), 1 = real line
  std::vector<std::uint8_t> line_labels; // (L), only meaningful where line_mask=1

  int real_lines() const;
};

/// Tokenizes a file and lays it out into windows; each line keeps its
/// first line_tokens tokens.
std::vector<FileWindow> encode_file(const Vocabulary& vocab, const SourceFile& file,
                                    int window_lines, int line_tokens, int overlap);

/// Per-window scores back to per-line scores: lines covered by several
/// overlapping windows get the arithmetic mean of their scores.
/// window_scores[i] holds (start_line, scores row-by-row) for plan[i].
std::vector<double> merge_window_scores(
    const std::vector<std::pair<int, std::vector<double>>>& window_scores,
    const std::vector<WindowRange>& plan, int n_lines);

}  // namespace lw
