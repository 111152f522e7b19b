#include "lw/windows.hpp"

#include <algorithm>

#include "lw/common.hpp"

namespace lw {

std::vector<WindowRange> window_plan(int n_lines, int window_lines, int overlap) {
  if (n_lines < 1) throw ValidationError("window plan needs at least one line");
  if (window_lines < 1) throw ValidationError("window length must be at least 1");
  if (overlap < 0 || overlap >= window_lines)
    throw ValidationError("window overlap must satisfy 0 <= overlap < window length");
  const int stride = window_lines - overlap;
  std::vector<WindowRange> plan;
  int start = 1;
  while (true) {
    const int end = std::min(start + window_lines - 1, n_lines);
    plan.push_back({start, end});
    if (end == n_lines) break;
    start += stride;
  }
  return plan;
}

int FileWindow::real_lines() const {
  int n = 0;
  for (std::uint8_t m : line_mask) n += m ? 1 : 0;
  return n;
}

std::vector<FileWindow> encode_file(const Vocabulary& vocab, const SourceFile& file,
                                    int window_lines, int line_tokens, int overlap) {
  if (line_tokens < 1) throw ValidationError("line token budget must be at least 1");
  if (file.lines.size() != file.labels.size())
    throw ValidationError("file " + file.path + " has mismatched lines and labels");
  const int n_lines = static_cast<int>(file.lines.size());
  const std::vector<WindowRange> plan = window_plan(n_lines, window_lines, overlap);

  // Tokenize each line once; windows share the encoded rows.
  std::vector<std::vector<std::int32_t>> encoded(file.lines.size());
  for (std::size_t i = 0; i < file.lines.size(); ++i) {
    encoded[i] = encode_line(vocab, file.lines[i]);
    if (encoded[i].size() > static_cast<std::size_t>(line_tokens))
      encoded[i].resize(static_cast<std::size_t>(line_tokens));
  }

  std::vector<FileWindow> windows;
  windows.reserve(plan.size());
  for (const WindowRange& range : plan) {
    FileWindow w;
    w.path = file.path;
    w.start_line = range.start;
    w.window_lines = window_lines;
    w.line_tokens = line_tokens;
    const std::size_t grid = static_cast<std::size_t>(window_lines) * line_tokens;
    w.token_ids.assign(grid, Vocabulary::kPad);
    w.token_mask.assign(grid, 0);
    w.line_mask.assign(static_cast<std::size_t>(window_lines), 0);
    w.line_labels.assign(static_cast<std::size_t>(window_lines), 0);
    for (int row = 0; row <= range.end - range.start; ++row) {
      const auto li = static_cast<std::size_t>(range.start - 1 + row);
      w.line_mask[static_cast<std::size_t>(row)] = 1;
      w.line_labels[static_cast<std::size_t>(row)] = file.labels[li];
      const auto& ids = encoded[li];
      for (std::size_t t = 0; t < ids.size(); ++t) {
        const std::size_t at = static_cast<std::size_t>(row) * line_tokens + t;
        w.token_ids[at] = ids[t];
        w.token_mask[at] = 1;
      }
    }
    windows.push_back(std::move(w));
  }
  return windows;
}

std::vector<double> merge_window_scores(
    const std::vector<std::pair<int, std::vector<double>>>& window_scores,
    const std::vector<WindowRange>& plan, int n_lines) {
  if (window_scores.size() != plan.size())
    throw ValidationError("score merge: expected one score block per planned window");
  std::vector<double> sum(static_cast<std::size_t>(n_lines), 0.0);
  std::vector<int> cover(static_cast<std::size_t>(n_lines), 0);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& [start, scores] = window_scores[i];
    if (start != plan[i].start)
      throw ValidationError("score merge: window origins do not match the plan");
    const int rows = plan[i].end - plan[i].start + 1;
    if (scores.size() < static_cast<std::size_t>(rows))
      throw ValidationError("score merge: score block shorter than its window");
    for (int row = 0; row < rows; ++row) {
      const auto li = static_cast<std::size_t>(start - 1 + row);
      sum[li] += scores[static_cast<std::size_t>(row)];
      cover[li] += 1;
    }
  }
  std::vector<double> merged(static_cast<std::size_t>(n_lines));
  for (std::size_t i = 0; i < merged.size(); ++i) {
    if (cover[i] == 0)
      throw ValidationError("score merge: line " + std::to_string(i + 1) +
                            " is not covered by any window");
    merged[i] = sum[i] / cover[i];
  }
  return merged;
}

}  // namespace lw
