#include "lw/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "lw/common.hpp"

namespace lw {

using nlohmann::json;

const SourceFile* Corpus::find(const std::string& path) const {
  for (const SourceFile& f : files)
    if (f.path == path) return &f;
  return nullptr;
}

Corpus Corpus::subset(const std::vector<std::string>& paths) const {
  std::unordered_map<std::string, const SourceFile*> by_path;
  for (const SourceFile& f : files) by_path[f.path] = &f;
  Corpus out;
  out.files.reserve(paths.size());
  for (const std::string& p : paths) {
    auto it = by_path.find(p);
    if (it == by_path.end())
      throw ValidationError("path not present in corpus: " + p);
    out.files.push_back(*it->second);
  }
  return out;
}

std::size_t Corpus::total_lines() const {
  std::size_t n = 0;
  for (const SourceFile& f : files) n += f.lines.size();
  return n;
}

std::size_t Corpus::total_defective() const {
  std::size_t n = 0;
  for (const SourceFile& f : files)
    for (std::uint8_t y : f.labels) n += y ? 1 : 0;
  return n;
}

Corpus load_corpus(const std::string& path) {
  const std::string data = read_file(path);
  Corpus corpus;
  std::unordered_set<std::string> seen;
  std::istringstream in(data);
  std::string line;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++record;
    const std::string where = "corpus record " + std::to_string(record);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError(where + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw ValidationError(where + ": not a JSON object");
    SourceFile f;
    if (!j.contains("path") || !j["path"].is_string() || j["path"].get<std::string>().empty())
      throw ValidationError(where + ": missing or empty \"path\"");
    f.path = j["path"].get<std::string>();
    if (!seen.insert(f.path).second)
      throw ValidationError(where + ": duplicate path " + f.path);
    if (!j.contains("lines") || !j["lines"].is_array())
      throw ValidationError(where + ": missing \"lines\" array");
    if (!j.contains("labels") || !j["labels"].is_array())
      throw ValidationError(where + ": missing \"labels\" array");
    for (const auto& item : j["lines"]) {
      if (!item.is_string())
        throw ValidationError(where + ": \"lines\" entries must be strings");
      const std::string text = item.get<std::string>();
      if (text.find('\n') != std::string::npos || text.find('\r') != std::string::npos)
        throw ValidationError(where + ": line text contains a line break");
      f.lines.push_back(text);
    }
    for (const auto& item : j["labels"]) {
      long v;
      if (item.is_boolean())
        v = item.get<bool>() ? 1 : 0;
      else if (item.is_number_integer())
        v = item.get<long>();
      else
        throw ValidationError(where + ": \"labels\" entries must be 0 or 1");
      if (v != 0 && v != 1)
        throw ValidationError(where + ": \"labels\" entries must be 0 or 1");
      f.labels.push_back(static_cast<std::uint8_t>(v));
    }
    if (f.lines.empty())
      throw ValidationError(where + ": file has no lines (" + f.path + ")");
    if (f.lines.size() != f.labels.size())
      throw ValidationError(where + ": " + std::to_string(f.lines.size()) +
                            " lines but " + std::to_string(f.labels.size()) +
                            " labels");
    if (j.contains("project")) {
      if (!j["project"].is_string())
        throw ValidationError(where + ": \"project\" must be a string");
      f.project = j["project"].get<std::string>();
    }
    if (j.contains("timestamp")) {
      if (!j["timestamp"].is_number_integer())
        throw ValidationError(where + ": \"timestamp\" must be an integer");
      f.timestamp = j["timestamp"].get<std::int64_t>();
    }
    corpus.files.push_back(std::move(f));
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::string out;
  for (const SourceFile& f : corpus.files) {
    json j;
    j["path"] = f.path;
    j["lines"] = f.lines;
    j["labels"] = json::array();
    for (std::uint8_t y : f.labels) j["labels"].push_back(static_cast<int>(y));
    if (!f.project.empty()) j["project"] = f.project;
    if (f.timestamp) j["timestamp"] = *f.timestamp;
    out += j.dump();
    out += '\n';
  }
  atomic_write_file(path, out);
}

void SplitFractions::validate() const {
  if (train <= 0.0 || validation <= 0.0 || test <= 0.0)
    throw ValidationError("split fractions must all be positive");
  const double sum = train + validation + test;
  if (std::abs(sum - 1.0) > 1e-9)
    throw ValidationError("split fractions must sum to 1, got " + std::to_string(sum));
}

void SplitAssignment::validate_against(const Corpus& corpus) const {
  if (train.empty() || validation.empty() || test.empty())
    throw ValidationError("each split part must contain at least one file");
  std::unordered_set<std::string> known;
  for (const SourceFile& f : corpus.files) known.insert(f.path);
  std::unordered_set<std::string> used;
  for (const auto* part : {&train, &validation, &test}) {
    for (const std::string& p : *part) {
      if (!known.count(p))
        throw ValidationError("split references unknown path: " + p);
      if (!used.insert(p).second)
        throw ValidationError("path appears in more than one split part: " + p);
    }
  }
}

namespace {

struct SplitSizes {
  std::size_t n_train, n_val, n_test;
};

SplitSizes split_sizes(std::size_t n, const SplitFractions& fr) {
  fr.validate();
  const auto n_val = static_cast<std::size_t>(std::floor(fr.validation * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::floor(fr.test * static_cast<double>(n)));
  if (n_val + n_test >= n || n_val == 0 || n_test == 0)
    throw ValidationError("corpus of " + std::to_string(n) +
                          " files is too small for the requested split fractions");
  return {n - n_val - n_test, n_val, n_test};
}

std::vector<std::string> corpus_paths(const Corpus& corpus) {
  if (corpus.files.empty()) throw ValidationError("corpus contains no files");
  std::vector<std::string> paths;
  paths.reserve(corpus.files.size());
  for (const SourceFile& f : corpus.files) paths.push_back(f.path);
  return paths;
}

SplitAssignment assign(std::vector<std::string> ordered, const SplitSizes& sz) {
  SplitAssignment s;
  s.train.assign(ordered.begin(), ordered.begin() + static_cast<long>(sz.n_train));
  s.validation.assign(ordered.begin() + static_cast<long>(sz.n_train),
                      ordered.begin() + static_cast<long>(sz.n_train + sz.n_val));
  s.test.assign(ordered.begin() + static_cast<long>(sz.n_train + sz.n_val), ordered.end());
  return s;
}

}  // namespace

SplitAssignment split_random(const Corpus& corpus, const SplitFractions& fractions,
                             std::uint64_t seed) {
  std::vector<std::string> paths = corpus_paths(corpus);
  const SplitSizes sz = split_sizes(paths.size(), fractions);
  Rng rng(seed);
  shuffle(paths, rng);
  return assign(std::move(paths), sz);
}

SplitAssignment split_timewise(const Corpus& corpus, const SplitFractions& fractions) {
  std::vector<std::string> paths = corpus_paths(corpus);
  const SplitSizes sz = split_sizes(paths.size(), fractions);
  for (const SourceFile& f : corpus.files)
    if (!f.timestamp)
      throw ValidationError("timewise split requires a timestamp on every file; missing for " + f.path);
  std::vector<const SourceFile*> order;
  order.reserve(corpus.files.size());
  for (const SourceFile& f : corpus.files) order.push_back(&f);
  std::sort(order.begin(), order.end(), [](const SourceFile* a, const SourceFile* b) {
    if (*a->timestamp != *b->timestamp) return *a->timestamp < *b->timestamp;
    return a->path < b->path;
  });
  std::vector<std::string> ordered;
  ordered.reserve(order.size());
  for (const SourceFile* f : order) ordered.push_back(f->path);
  return assign(std::move(ordered), sz);
}

SplitAssignment split_cross_project(const Corpus& corpus,
                                    const std::vector<std::string>& test_projects,
                                    const SplitFractions& fractions,
                                    std::uint64_t seed) {
  fractions.validate();
  if (test_projects.empty())
    throw ValidationError("cross-project split needs at least one held-out project");
  if (corpus.files.empty()) throw ValidationError("corpus contains no files");
  std::set<std::string> held(test_projects.begin(), test_projects.end());
  std::set<std::string> present;
  for (const SourceFile& f : corpus.files) present.insert(f.project);
  for (const std::string& p : held)
    if (!present.count(p))
      throw ValidationError("held-out project not present in corpus: " + p);
  SplitAssignment s;
  std::vector<std::string> rest;
  for (const SourceFile& f : corpus.files) {
    if (held.count(f.project))
      s.test.push_back(f.path);
    else
      rest.push_back(f.path);
  }
  if (rest.empty())
    throw ValidationError("cross-project split holds out every project");
  Rng rng(seed);
  shuffle(rest, rng);
  const double val_share = fractions.validation / (fractions.train + fractions.validation);
  const auto n_val = static_cast<std::size_t>(
      std::floor(val_share * static_cast<double>(rest.size())));
  if (n_val == 0 || n_val >= rest.size())
    throw ValidationError("remaining files are too few for a train/validation split");
  s.validation.assign(rest.begin(), rest.begin() + static_cast<long>(n_val));
  s.train.assign(rest.begin() + static_cast<long>(n_val), rest.end());
  return s;
}

SplitAssignment load_split(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("split file " + path + ": invalid JSON: " + e.what());
  }
  if (!j.is_object())
    throw ValidationError("split file " + path + ": not a JSON object");
  SplitAssignment s;
  auto read_part = [&](const char* key, std::vector<std::string>& out) {
    if (!j.contains(key) || !j[key].is_array())
      throw ValidationError("split file " + path + ": missing \"" + key + "\" array");
    for (const auto& item : j[key]) {
      if (!item.is_string())
        throw ValidationError("split file " + path + ": \"" + key + "\" entries must be strings");
      out.push_back(item.get<std::string>());
    }
  };
  read_part("train", s.train);
  read_part("validation", s.validation);
  read_part("test", s.test);
  std::unordered_set<std::string> used;
  for (const auto* part : {&s.train, &s.validation, &s.test})
    for (const std::string& p : *part)
      if (!used.insert(p).second)
        throw ValidationError("split file " + path + ": path listed twice: " + p);
  return s;
}

void save_split(const SplitAssignment& split, const std::string& path) {
  json j;
  j["train"] = split.train;
  j["validation"] = split.validation;
  j["test"] = split.test;
  atomic_write_file(path, j.dump(2) + "\n");
}

namespace {

const std::vector<std::string>& default_fillers() {
  static const std::vector<std::string> words = {
      "count", "idx",  "buf",  "len",  "ret",  "tmp",  "val",  "ptr",
      "size",  "init", "data", "node", "next", "head", "flag", "sum",
      "pos",   "key",  "map",  "vec",  "str",  "arg",  "err",  "res",
      "ctx",   "cfg",  "fd",   "io",   "db",   "net",  "ui",   "obj",
      "row",   "col",  "min",  "max",  "avg",  "foo",  "bar",  "baz"};
  return words;
}

const std::vector<std::string>& default_triggers() {
  static const std::vector<std::string> patterns = {
      "unsafe_free ptr", "overflow_add", "race_write lock0", "bad_index idx"};
  return patterns;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n_files < 1) throw ValidationError("synthetic corpus needs at least one file");
  if (lines_per_file < 1) throw ValidationError("synthetic files need at least one line");
  if (defect_rate < 0.0 || defect_rate > 1.0)
    throw ValidationError("defect rate must be in [0, 1]");
  if (n_projects < 1) throw ValidationError("need at least one project");
}

Corpus generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::vector<std::string>& triggers =
      spec.trigger_patterns.empty() ? default_triggers() : spec.trigger_patterns;
  const std::vector<std::string>& fillers =
      spec.filler_words.empty() ? default_fillers() : spec.filler_words;
  for (const std::string& t : triggers)
    if (t.empty()) throw ValidationError("trigger patterns must be non-empty");

  Rng rng(seed);
  auto contains_trigger = [&](const std::string& text) {
    for (const std::string& t : triggers)
      if (text.find(t) != std::string::npos) return true;
    return false;
  };
  auto make_clean_line = [&]() {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const int n_words = 3 + static_cast<int>(rand_below(rng, 4));
      std::string text;
      for (int w = 0; w < n_words; ++w) {
        if (w) text += ' ';
        text += fillers[rand_below(rng, fillers.size())];
      }
      if (!contains_trigger(text)) return text;
    }
    throw std::runtime_error("filler pool cannot produce trigger-free lines");
  };
  auto make_defective_line = [&]() {
    const int n_words = 3 + static_cast<int>(rand_below(rng, 4));
    std::vector<std::string> words;
    for (int w = 0; w < n_words; ++w)
      words.push_back(fillers[rand_below(rng, fillers.size())]);
    // Keep the marker near the front so it survives token truncation.
    const std::size_t slot = rand_below(rng, std::min<std::size_t>(words.size(), 3) + 1);
    words.insert(words.begin() + static_cast<long>(slot),
                 triggers[rand_below(rng, triggers.size())]);
    std::string text;
    for (std::size_t w = 0; w < words.size(); ++w) {
      if (w) text += ' ';
      text += words[w];
    }
    return text;
  };

  Corpus corpus;
  const auto defects_per_file = static_cast<int>(
      std::lround(spec.defect_rate * static_cast<double>(spec.lines_per_file)));
  for (int i = 0; i < spec.n_files; ++i) {
    SourceFile f;
    const int project = i % spec.n_projects;
    f.project = "proj" + std::to_string(project);
    char name[32];
    std::snprintf(name, sizeof(name), "file_%05d.src", i);
    f.path = f.project + "/" + name;
    f.timestamp = 1700000000ll + static_cast<std::int64_t>(i) * 60;

    std::vector<std::uint8_t> labels(static_cast<std::size_t>(spec.lines_per_file), 0);
    std::vector<std::size_t> order(labels.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    shuffle(order, rng);
    for (int k = 0; k < defects_per_file && k < spec.lines_per_file; ++k)
      labels[order[static_cast<std::size_t>(k)]] = 1;

    for (std::size_t li = 0; li < labels.size(); ++li)
      f.lines.push_back(labels[li] ? make_defective_line() : make_clean_line());
    f.labels = std::move(labels);
    corpus.files.push_back(std::move(f));
  }
  return corpus;
}

}  // namespace lw
