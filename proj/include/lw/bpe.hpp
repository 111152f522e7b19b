#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "lw/corpus.hpp"

namespace lw {

/// Byte-pair vocabulary.  Ids are dense: 0 = padding, 1 = unknown byte,
/// then every byte observed in the training corpus (sorted), then one id
/// per merge product in the order the merges were learned (a merge whose
/// product already exists reuses the existing id).
struct Vocabulary {
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;

  std::vector<std::pair<std::string, std::string>> merges;
  std::vector<std::string> tokens;  // id -> text; [0]="<pad>", [1]="<unk>"
  std::unordered_map<std::string, std::int32_t> token_to_id;
  int alphabet_size = 0;  // single-byte token count

  int size() const { return static_cast<int>(tokens.size()); }
};

/// Learns merges from whitespace-delimited chunks until the vocabulary
/// reaches target_size or no adjacent pair occurs at least twice.
/// Spaces and tabs never merge; each stays a standalone token.
Vocabulary train_bpe(const Corpus& corpus, int target_size);

/// Greedy encoding: start from bytes, repeatedly apply the
/// earliest-learned applicable merge (leftmost occurrence first).
/// Bytes never seen in training map to kUnk.
std::vector<std::int32_t> encode_line(const Vocabulary& vocab, const std::string& line);

void save_vocab(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocab(const std::string& path);

/// Canonical serialized form; also what save_vocab writes.  Hashing this
/// string fingerprints the vocabulary.
std::string vocab_to_string(const Vocabulary& vocab);

/// Fingerprint stored in checkpoints to catch tokenizer mismatches.
std::string vocab_fingerprint(const Vocabulary& vocab);

}  // namespace lw
