#include "lw/bpe.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "lw/common.hpp"

namespace lw {

namespace {

constexpr const char* kPadText = "<pad>";
constexpr const char* kUnkText = "<unk>";
constexpr const char* kMagic = "bpe-vocab v1";

bool is_space_byte(char c) { return c == ' ' || c == '\t'; }

std::string escape(const std::string& s) {
  std::string out;
  for (unsigned char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default:
        if (c < 0x20 || c == 0x7f) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\x%02x", c);
          out += buf;
        } else {
          out += static_cast<char>(c);
        }
    }
  }
  return out;
}

std::string unescape(const std::string& s, const std::string& where) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    if (i + 1 >= s.size()) throw ValidationError(where + ": dangling escape");
    const char c = s[++i];
    switch (c) {
      case '\\': out += '\\'; break;
      case 't': out += '\t'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      case 'x': {
        if (i + 2 >= s.size()) throw ValidationError(where + ": bad \\x escape");
        auto hex = [&](char h) -> int {
          if (h >= '0' && h <= '9') return h - '0';
          if (h >= 'a' && h <= 'f') return h - 'a' + 10;
          if (h >= 'A' && h <= 'F') return h - 'A' + 10;
          throw ValidationError(where + ": bad \\x escape");
        };
        out += static_cast<char>(hex(s[i + 1]) * 16 + hex(s[i + 2]));
        i += 2;
        break;
      }
      default:
        throw ValidationError(where + ": unknown escape \\" + std::string(1, c));
    }
  }
  return out;
}

/// Unambiguous map key for a symbol pair (symbols may contain any byte).
std::string pair_key(const std::string& left, const std::string& right) {
  return std::to_string(left.size()) + ":" + left + right;
}

void apply_merge(std::vector<std::string>& syms, const std::string& left,
                 const std::string& right) {
  std::size_t i = 0;
  while (i + 1 < syms.size()) {
    if (syms[i] == left && syms[i + 1] == right) {
      syms[i] = left + right;
      syms.erase(syms.begin() + static_cast<long>(i) + 1);
    } else {
      ++i;
    }
  }
}

}  // namespace

Vocabulary train_bpe(const Corpus& corpus, int target_size) {
  if (corpus.files.empty())
    throw ValidationError("cannot train a tokenizer on an empty corpus");

  // Frequency of every whitespace-delimited chunk, and the byte alphabet.
  std::map<std::string, long> chunk_count;
  std::set<unsigned char> alphabet;
  for (const SourceFile& f : corpus.files) {
    for (const std::string& line : f.lines) {
      std::string chunk;
      auto flush = [&]() {
        if (!chunk.empty()) {
          ++chunk_count[chunk];
          chunk.clear();
        }
      };
      for (char c : line) {
        alphabet.insert(static_cast<unsigned char>(c));
        if (is_space_byte(c))
          flush();
        else
          chunk += c;
      }
      flush();
    }
  }

  Vocabulary vocab;
  vocab.tokens = {kPadText, kUnkText};
  for (unsigned char c : alphabet) vocab.tokens.emplace_back(1, static_cast<char>(c));
  vocab.alphabet_size = static_cast<int>(alphabet.size());
  for (std::size_t id = 0; id < vocab.tokens.size(); ++id)
    vocab.token_to_id[vocab.tokens[id]] = static_cast<std::int32_t>(id);

  if (target_size < vocab.size())
    throw ValidationError("target vocabulary size " + std::to_string(target_size) +
                          " is below the byte alphabet minimum of " +
                          std::to_string(vocab.size()));

  // Working state: each unique chunk as a symbol sequence with a count.
  std::vector<std::pair<std::vector<std::string>, long>> work;
  work.reserve(chunk_count.size());
  for (const auto& [chunk, count] : chunk_count) {
    std::vector<std::string> syms;
    for (char c : chunk) syms.emplace_back(1, c);
    work.emplace_back(std::move(syms), count);
  }

  while (vocab.size() < target_size) {
    // Count all adjacent symbol pairs.
    std::map<std::string, std::pair<std::pair<std::string, std::string>, long>> pairs;
    for (const auto& [syms, count] : work)
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        auto& slot = pairs[pair_key(syms[i], syms[i + 1])];
        slot.first = {syms[i], syms[i + 1]};
        slot.second += count;
      }

    // Best pair: highest count, then lexicographically smallest product,
    // then smallest left part.  Pairs whose product would collide with a
    // special token are never eligible.
    bool found = false;
    std::pair<std::string, std::string> best;
    std::string best_concat;
    long best_count = 0;
    for (const auto& [key, entry] : pairs) {
      (void)key;
      const auto& [pair, count] = entry;
      if (count < 2) continue;
      const std::string concat = pair.first + pair.second;
      if (concat == kPadText || concat == kUnkText) continue;
      if (!found || count > best_count ||
          (count == best_count &&
           (concat < best_concat ||
            (concat == best_concat && pair.first < best.first)))) {
        found = true;
        best = pair;
        best_concat = concat;
        best_count = count;
      }
    }
    if (!found) break;

    vocab.merges.push_back(best);
    if (!vocab.token_to_id.count(best_concat)) {
      vocab.token_to_id[best_concat] = static_cast<std::int32_t>(vocab.tokens.size());
      vocab.tokens.push_back(best_concat);
    }
    for (auto& [syms, count] : work) {
      (void)count;
      apply_merge(syms, best.first, best.second);
    }
  }
  return vocab;
}

std::vector<std::int32_t> encode_line(const Vocabulary& vocab, const std::string& line) {
  std::unordered_map<std::string, int> rank;
  rank.reserve(vocab.merges.size());
  for (std::size_t r = 0; r < vocab.merges.size(); ++r) {
    const std::string key = pair_key(vocab.merges[r].first, vocab.merges[r].second);
    if (!rank.count(key)) rank[key] = static_cast<int>(r);
  }

  auto lookup = [&](const std::string& sym) {
    auto it = vocab.token_to_id.find(sym);
    return it == vocab.token_to_id.end() ? Vocabulary::kUnk : it->second;
  };

  std::vector<std::int32_t> ids;
  std::vector<std::string> syms;
  auto encode_chunk = [&]() {
    if (syms.empty()) return;
    while (syms.size() > 1) {
      int best_rank = -1;
      std::size_t best_at = 0;
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        auto it = rank.find(pair_key(syms[i], syms[i + 1]));
        if (it != rank.end() && (best_rank < 0 || it->second < best_rank)) {
          best_rank = it->second;
          best_at = i;
        }
      }
      if (best_rank < 0) break;
      const std::string left = syms[best_at];
      const std::string right = syms[best_at + 1];
      apply_merge(syms, left, right);
    }
    for (const std::string& s : syms) ids.push_back(lookup(s));
    syms.clear();
  };
  for (char c : line) {
    if (is_space_byte(c)) {
      encode_chunk();
      ids.push_back(lookup(std::string(1, c)));
    } else {
      syms.emplace_back(1, c);
    }
  }
  encode_chunk();
  return ids;
}

std::string vocab_to_string(const Vocabulary& vocab) {
  std::string out = kMagic;
  out += '\n';
  for (const auto& [left, right] : vocab.merges) {
    out += escape(left);
    out += '\t';
    out += escape(right);
    out += '\n';
  }
  out += "--\n";
  for (int id = 0; id < 2 + vocab.alphabet_size; ++id) {
    out += escape(vocab.tokens[static_cast<std::size_t>(id)]);
    out += '\t';
    out += std::to_string(id);
    out += '\n';
  }
  return out;
}

void save_vocab(const Vocabulary& vocab, const std::string& path) {
  atomic_write_file(path, vocab_to_string(vocab));
}

Vocabulary load_vocab(const std::string& path) {
  const std::string where = "vocabulary file " + path;
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    throw ValidationError(where + ": unsupported format (expected \"" +
                          std::string(kMagic) + "\")");

  Vocabulary vocab;
  std::vector<std::pair<std::string, std::string>> merges;
  bool saw_separator = false;
  while (std::getline(in, line)) {
    if (line == "--") {
      saw_separator = true;
      break;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ValidationError(where + ": malformed merge line");
    merges.emplace_back(unescape(line.substr(0, tab), where),
                        unescape(line.substr(tab + 1), where));
  }
  if (!saw_separator) throw ValidationError(where + ": truncated (no token section)");

  std::vector<std::string> base_tokens;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ValidationError(where + ": malformed token line");
    const std::string text = unescape(line.substr(0, tab), where);
    long id;
    try {
      id = std::stol(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw ValidationError(where + ": malformed token id");
    }
    if (id != static_cast<long>(base_tokens.size()))
      throw ValidationError(where + ": token ids must be dense and ascending");
    base_tokens.push_back(text);
  }
  if (base_tokens.size() < 2 || base_tokens[0] != kPadText || base_tokens[1] != kUnkText)
    throw ValidationError(where + ": token section must start with " +
                          std::string(kPadText) + " and " + std::string(kUnkText));
  for (std::size_t id = 2; id < base_tokens.size(); ++id) {
    if (base_tokens[id].size() != 1)
      throw ValidationError(where + ": alphabet tokens must be single bytes");
    if (id > 2 && !(static_cast<unsigned char>(base_tokens[id - 1][0]) <
                    static_cast<unsigned char>(base_tokens[id][0])))
      throw ValidationError(where + ": alphabet tokens must be sorted");
  }

  vocab.tokens = base_tokens;
  vocab.alphabet_size = static_cast<int>(base_tokens.size()) - 2;
  for (std::size_t id = 0; id < vocab.tokens.size(); ++id)
    vocab.token_to_id[vocab.tokens[id]] = static_cast<std::int32_t>(id);
  for (const auto& [left, right] : merges) {
    if (!vocab.token_to_id.count(left) || !vocab.token_to_id.count(right))
      throw ValidationError(where + ": merge references unknown token");
    vocab.merges.emplace_back(left, right);
    const std::string concat = left + right;
    if (!vocab.token_to_id.count(concat)) {
      vocab.token_to_id[concat] = static_cast<std::int32_t>(vocab.tokens.size());
      vocab.tokens.push_back(concat);
    }
  }
  return vocab;
}

std::string vocab_fingerprint(const Vocabulary& vocab) {
  return hex64(fnv1a64(vocab_to_string(vocab)));
}

}  // namespace lw
