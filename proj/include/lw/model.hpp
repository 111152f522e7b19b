#pragma once

// Two-level transformer for line-level defect prediction: a line
// encoder contextualizes tokens within each line, pooling turns each
// line into one vector, and a line classifier transformer relates lines
// across the window before a per-line softmax head.

#include <string>
#include <unordered_map>
#include <vector>

#include "lw/common.hpp"
#include "lw/tensor.hpp"
#include "lw/windows.hpp"

namespace lw {

enum class PoolKind { concat, mean };
enum class Objective { line, file };

inline const char* to_string(PoolKind p) {
  return p == PoolKind::concat ? "concat" : "mean";
}
inline const char* to_string(Objective o) {
  return o == Objective::line ? "line" : "file";
}

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;  // per transformer stack
  int n_heads = 4;
  int d_ff = 256;
  int window_lines = 64;   // lines per window (L)
  int line_tokens = 16;    // tokens kept per line (T)
  int window_overlap = 8;  // lines shared by consecutive windows
  int vocab_size = 2048;
  double dropout = 0.1;
  double init_std = 0.02;
  PoolKind pool = PoolKind::concat;
  Objective objective = Objective::line;

  void validate() const {
    if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1)
      throw ValidationError("model dimensions must be positive");
    if (d_model % n_heads != 0)
      throw ValidationError("attention heads must divide the model width");
    if (window_lines < 1 || line_tokens < 1)
      throw ValidationError("window shape must be positive");
    if (window_overlap < 0 || window_overlap >= window_lines)
      throw ValidationError("window overlap must satisfy 0 <= overlap < window length");
    if (vocab_size < 2)
      throw ValidationError("vocabulary must include padding and unknown ids");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ValidationError("dropout must be in [0, 1)");
    if (init_std <= 0.0)
      throw ValidationError("init standard deviation must be positive");
  }
};

constexpr double kLayerNormEps = 1e-5;

/// Named parameter tensors in a stable order (used for initialization,
/// checkpoints, and the optimizer).
template <class Real>
struct Params {
  std::vector<std::pair<std::string, ag::Tensor<Real>>> items;
  std::unordered_map<std::string, std::size_t> index;

  ag::Tensor<Real>& add(const std::string& name, std::vector<int> shape) {
    if (index.count(name))
      throw std::runtime_error("duplicate parameter name: " + name);
    index[name] = items.size();
    items.emplace_back(name, ag::Tensor<Real>::zeros(std::move(shape), true));
    return items.back().second;
  }

  ag::Tensor<Real>& at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end())
      throw std::runtime_error("unknown parameter name: " + name);
    return items[it->second].second;
  }
  const ag::Tensor<Real>& at(const std::string& name) const {
    return const_cast<Params*>(this)->at(name);
  }
  bool has(const std::string& name) const { return index.count(name) != 0; }

  Params deep_copy() const {
    Params out;
    for (const auto& [name, t] : items) {
      ag::Tensor<Real>& c = out.add(name, t.shape());
      c.values() = t.values();
    }
    return out;
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items) n += t.numel();
    return n;
  }
};

template <class Real>
struct LinePredictions {
  ag::Tensor<Real> probs;  // (L, 2); column 1 = defect probability
};

template <class Real>
struct FilePrediction {
  ag::Tensor<Real> probs;          // (1, 2)
  std::vector<Real> line_scores;   // (L); attention received x defect prob
};

template <class Real>
class Model {
 public:
  ModelConfig cfg;
  Params<Real> params;

  static Model init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.build_params();
    Rng rng(seed);
    for (auto& [name, t] : m.params.items) {
      if (name.find("gain") != std::string::npos) {
        for (Real& v : t.values()) v = Real(1);
      } else if (name.find(".b") != std::string::npos ||
                 name.find("bias") != std::string::npos) {
        // biases start at zero
      } else {
        for (Real& v : t.values())
          v = static_cast<Real>(normal01(rng) * cfg.init_std);
      }
    }
    return m;
  }

  /// Whether weight decay applies: matrices yes, biases / layer-norm
  /// parameters / embedding tables no.
  static bool param_decays(const std::string& name) {
    if (name.rfind("embed.", 0) == 0) return false;
    if (name.find(".b") != std::string::npos) return false;
    if (name.find("gain") != std::string::npos) return false;
    if (name.find("bias") != std::string::npos) return false;
    return true;
  }

  Model clone() const {
    Model m;
    m.cfg = cfg;
    m.params = params.deep_copy();
    return m;
  }

  void clear_grads() {
    for (auto& [name, t] : params.items) t.clear_grad();
  }

  /// Token embeddings plus per-slot positional embeddings: (L, T, D).
  ag::Tensor<Real> embed_tokens(ag::Tape<Real>* tape, const FileWindow& w,
                                bool training, Rng* rng) const {
    check_window(w);
    const Params<Real>& p = params;
    ag::Tensor<Real> x = ag::embedding_lookup(
        tape, p.at("embed.word"), w.token_ids,
        {cfg.window_lines, cfg.line_tokens});
    x = ag::add_broadcast(tape, x, p.at("embed.token_pos"));
    return ag::dropout(tape, x, cfg.dropout, training, rng);
  }

  /// Post-norm residual transformer stack over (B, S, D) with the given
  /// key padding mask; `prefix` selects the parameter group.
  ag::Tensor<Real> encoder_stack(
      ag::Tape<Real>* tape, const std::string& prefix, ag::Tensor<Real> x,
      const std::vector<std::uint8_t>& key_mask,
      std::vector<ag::AttentionProbs<Real>>* probs_out = nullptr) const {
    const Params<Real>& p = params;
    const Real eps = Real(kLayerNormEps);
    for (int layer = 0; layer < cfg.n_layers; ++layer) {
      const std::string base = prefix + "." + std::to_string(layer) + ".";
      ag::Tensor<Real> q = ag::add_broadcast(
          tape, ag::matmul(tape, x, p.at(base + "attn.wq")), p.at(base + "attn.bq"));
      ag::Tensor<Real> k = ag::add_broadcast(
          tape, ag::matmul(tape, x, p.at(base + "attn.wk")), p.at(base + "attn.bk"));
      ag::Tensor<Real> v = ag::add_broadcast(
          tape, ag::matmul(tape, x, p.at(base + "attn.wv")), p.at(base + "attn.bv"));
      ag::AttentionProbs<Real> layer_probs;
      ag::Tensor<Real> att = ag::multihead_attention(
          tape, q, k, v, key_mask, cfg.n_heads,
          probs_out ? &layer_probs : nullptr);
      if (probs_out) probs_out->push_back(std::move(layer_probs));
      ag::Tensor<Real> proj = ag::add_broadcast(
          tape, ag::matmul(tape, att, p.at(base + "attn.wo")), p.at(base + "attn.bo"));
      x = ag::layer_norm(tape, ag::add(tape, x, proj), p.at(base + "ln1.gain"),
                         p.at(base + "ln1.bias"), eps);
      ag::Tensor<Real> h = ag::gelu(
          tape, ag::add_broadcast(tape, ag::matmul(tape, x, p.at(base + "ffn.w1")),
                                  p.at(base + "ffn.b1")));
      ag::Tensor<Real> f = ag::add_broadcast(
          tape, ag::matmul(tape, h, p.at(base + "ffn.w2")), p.at(base + "ffn.b2"));
      x = ag::layer_norm(tape, ag::add(tape, x, f), p.at(base + "ln2.gain"),
                         p.at(base + "ln2.bias"), eps);
    }
    return x;
  }

  /// (L, T, D) token states -> one vector per line: padding slots are
  /// excluded, then either the per-line slots are concatenated or
  /// averaged, and a dense layer with tanh produces (L, D).
  ag::Tensor<Real> pool_lines(ag::Tape<Real>* tape, ag::Tensor<Real> encoded,
                              const FileWindow& w) const {
    const Params<Real>& p = params;
    ag::Tensor<Real> z;
    if (cfg.pool == PoolKind::concat) {
      ag::Tensor<Real> masked = ag::mask_rows(tape, encoded, w.token_mask);
      ag::Tensor<Real> flat = ag::reshape(
          tape, masked, {cfg.window_lines, cfg.line_tokens * cfg.d_model});
      z = ag::add_broadcast(tape, ag::matmul(tape, flat, p.at("pool.w")),
                            p.at("pool.b"));
    } else {
      ag::Tensor<Real> mean = ag::masked_mean(tape, encoded, w.token_mask);
      z = ag::add_broadcast(tape, ag::matmul(tape, mean, p.at("pool.w")),
                            p.at("pool.b"));
    }
    return ag::tanh(tape, z);
  }

  /// Line vectors -> per-line class probabilities (L, 2).
  LinePredictions<Real> classify_lines(
      ag::Tape<Real>* tape, ag::Tensor<Real> line_vecs, const FileWindow& w,
      bool training, Rng* rng,
      std::vector<ag::AttentionProbs<Real>>* probs_out = nullptr) const {
    if (w.real_lines() == 0)
      throw ValidationError("window has no real lines");
    const Params<Real>& p = params;
    ag::Tensor<Real> x = ag::add(tape, line_vecs, p.at("embed.line_pos"));
    x = ag::reshape(tape, x, {1, cfg.window_lines, cfg.d_model});
    x = encoder_stack(tape, "line_cls", x, w.line_mask, probs_out);
    x = ag::reshape(tape, x, {cfg.window_lines, cfg.d_model});
    x = ag::dropout(tape, x, cfg.dropout, training, rng);
    ag::Tensor<Real> logits = ag::add_broadcast(
        tape, ag::matmul(tape, x, p.at("head.line.w")), p.at("head.line.b"));
    return {ag::softmax_lastdim(tape, logits)};
  }

  /// Full line-level forward pass for one window.
  LinePredictions<Real> forward_window(ag::Tape<Real>* tape, const FileWindow& w,
                                       bool training, Rng* rng) const {
    ag::Tensor<Real> x = embed_tokens(tape, w, training, rng);
    x = encoder_stack(tape, "line_enc", x, w.token_mask);
    x = pool_lines(tape, x, w);
    return classify_lines(tape, x, w, training, rng);
  }

  /// File-level objective: window label = any defective line.  Line
  /// scores come from attention received in the line classifier stack,
  /// scaled by the file defect probability.
  FilePrediction<Real> file_forward(ag::Tape<Real>* tape, const FileWindow& w,
                                    bool training, Rng* rng) const {
    if (cfg.objective != Objective::file)
      throw ValidationError("model was not built with the file objective");
    if (w.real_lines() == 0)
      throw ValidationError("window has no real lines");
    const Params<Real>& p = params;
    ag::Tensor<Real> x = embed_tokens(tape, w, training, rng);
    x = encoder_stack(tape, "line_enc", x, w.token_mask);
    x = pool_lines(tape, x, w);
    x = ag::add(tape, x, p.at("embed.line_pos"));
    x = ag::reshape(tape, x, {1, cfg.window_lines, cfg.d_model});
    std::vector<ag::AttentionProbs<Real>> probs;
    x = encoder_stack(tape, "line_cls", x, w.line_mask, &probs);
    ag::Tensor<Real> pooled = ag::masked_mean(tape, x, w.line_mask);  // (1, D)
    ag::Tensor<Real> logits = ag::add_broadcast(
        tape, ag::matmul(tape, pooled, p.at("head.file.w")), p.at("head.file.b"));
    ag::Tensor<Real> fprobs = ag::softmax_lastdim(tape, logits);

    FilePrediction<Real> out;
    out.probs = fprobs;
    const int L = cfg.window_lines;
    std::vector<double> received(static_cast<std::size_t>(L), 0.0);
    long contributions = 0;
    for (const auto& layer : probs) {
      for (int h = 0; h < layer.n_heads; ++h)
        for (int s = 0; s < L; ++s) {
          if (!w.line_mask[static_cast<std::size_t>(s)]) continue;
          const std::size_t base =
              (static_cast<std::size_t>(h) * L + static_cast<std::size_t>(s)) * L;
          for (int t = 0; t < L; ++t)
            received[static_cast<std::size_t>(t)] +=
                static_cast<double>(layer.p[base + static_cast<std::size_t>(t)]);
        }
      contributions += static_cast<long>(layer.n_heads) * w.real_lines();
    }
    const double p_defect = static_cast<double>(fprobs.values()[1]);
    out.line_scores.resize(static_cast<std::size_t>(L));
    for (int t = 0; t < L; ++t)
      out.line_scores[static_cast<std::size_t>(t)] = static_cast<Real>(
          received[static_cast<std::size_t>(t)] / static_cast<double>(contributions) *
          p_defect);
    return out;
  }

 private:
  void check_window(const FileWindow& w) const {
    if (w.window_lines != cfg.window_lines || w.line_tokens != cfg.line_tokens)
      throw ValidationError("window shape (" + std::to_string(w.window_lines) +
                            ", " + std::to_string(w.line_tokens) +
                            ") does not match the model (" +
                            std::to_string(cfg.window_lines) + ", " +
                            std::to_string(cfg.line_tokens) + ")");
  }

  void build_params() {
    const int d = cfg.d_model;
    params.add("embed.word", {cfg.vocab_size, d});
    params.add("embed.token_pos", {cfg.line_tokens, d});
    params.add("embed.line_pos", {cfg.window_lines, d});
    for (const char* prefix : {"line_enc", "line_cls"}) {
      for (int layer = 0; layer < cfg.n_layers; ++layer) {
        const std::string base =
            std::string(prefix) + "." + std::to_string(layer) + ".";
        params.add(base + "attn.wq", {d, d});
        params.add(base + "attn.bq", {d});
        params.add(base + "attn.wk", {d, d});
        params.add(base + "attn.bk", {d});
        params.add(base + "attn.wv", {d, d});
        params.add(base + "attn.bv", {d});
        params.add(base + "attn.wo", {d, d});
        params.add(base + "attn.bo", {d});
        params.add(base + "ln1.gain", {d});
        params.add(base + "ln1.bias", {d});
        params.add(base + "ffn.w1", {d, cfg.d_ff});
        params.add(base + "ffn.b1", {cfg.d_ff});
        params.add(base + "ffn.w2", {cfg.d_ff, d});
        params.add(base + "ffn.b2", {d});
        params.add(base + "ln2.gain", {d});
        params.add(base + "ln2.bias", {d});
      }
    }
    if (cfg.pool == PoolKind::concat)
      params.add("pool.w", {cfg.line_tokens * d, d});
    else
      params.add("pool.w", {d, d});
    params.add("pool.b", {d});
    params.add("head.line.w", {d, 2});
    params.add("head.line.b", {2});
    if (cfg.objective == Objective::file) {
      params.add("head.file.w", {d, 2});
      params.add("head.file.b", {2});
    }
  }
};

}  // namespace lw
