#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lw/common.hpp"
#include "lw/metrics.hpp"
#include "lw/model.hpp"

namespace lw {

enum class Precision { f32, f64 };

inline const char* to_string(Precision p) {
  return p == Precision::f32 ? "single" : "double";
}
inline const char* dtype_name(Precision p) {
  return p == Precision::f32 ? "f32" : "f64";
}

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 10;
  int batch_size = 16;
  double warmup_fraction = 0.0;
  double class_w0 = 1.0;  // clean-line loss weight
  double class_w1 = 1.0;  // defective-line loss weight
  std::uint64_t seed = 0;
  Precision precision = Precision::f64;

  void validate() const {
    if (learning_rate <= 0.0) throw ValidationError("learning rate must be positive");
    if (weight_decay < 0.0) throw ValidationError("weight decay must be non-negative");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw ValidationError("adam betas must be in [0, 1)");
    if (adam_eps <= 0.0) throw ValidationError("adam epsilon must be positive");
    if (epochs < 0) throw ValidationError("epoch count must be non-negative");
    if (batch_size < 1) throw ValidationError("batch size must be at least 1");
    if (warmup_fraction < 0.0 || warmup_fraction > 1.0)
      throw ValidationError("warmup fraction must be in [0, 1]");
    if (class_w0 <= 0.0 || class_w1 <= 0.0)
      throw ValidationError("class weights must be positive");
  }
};

/// Linear warmup to the peak rate, then linear decay toward zero by the
/// end of training.  step is 0-based.
inline double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
  if (total_steps <= 0) return cfg.learning_rate;
  const auto warmup = static_cast<std::int64_t>(
      std::floor(cfg.warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup)
    return cfg.learning_rate * static_cast<double>(step + 1) /
           static_cast<double>(warmup);
  if (total_steps == warmup) return cfg.learning_rate;
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(total_steps - warmup);
  return cfg.learning_rate * (1.0 - progress);
}

template <class Real>
struct OptState {
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  std::int64_t t = 0;

  static OptState zeros_like(const Params<Real>& params) {
    OptState s;
    for (const auto& [name, tensor] : params.items) {
      s.m.emplace_back(tensor.numel(), Real(0));
      s.v.emplace_back(tensor.numel(), Real(0));
    }
    return s;
  }
};

/// One decoupled-weight-decay Adam update over all parameters.  Decay is
/// applied directly to the previous parameter value and skipped for
/// biases, layer-norm parameters, and embeddings.
template <class Real>
void adamw_step(Model<Real>& model, OptState<Real>& opt, double lr,
                const TrainConfig& cfg) {
  if (opt.m.size() != model.params.items.size())
    throw std::runtime_error("optimizer state does not match the parameter list");
  ++opt.t;
  const Real b1 = Real(cfg.beta1), b2 = Real(cfg.beta2);
  const Real bc1 = Real(1) - static_cast<Real>(std::pow(cfg.beta1, static_cast<double>(opt.t)));
  const Real bc2 = Real(1) - static_cast<Real>(std::pow(cfg.beta2, static_cast<double>(opt.t)));
  const Real eps = Real(cfg.adam_eps);
  const Real step_size = Real(lr);
  for (std::size_t i = 0; i < model.params.items.size(); ++i) {
    auto& [name, tensor] = model.params.items[i];
    const Real wd = Model<Real>::param_decays(name) ? Real(cfg.weight_decay) : Real(0);
    auto& m = opt.m[i];
    auto& v = opt.v[i];
    auto& theta = tensor.values();
    const std::vector<Real>* grad = tensor.has_grad() ? &tensor.grad() : nullptr;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const Real g = grad ? (*grad)[j] : Real(0);
      m[j] = b1 * m[j] + (Real(1) - b1) * g;
      v[j] = b2 * v[j] + (Real(1) - b2) * g * g;
      const Real mhat = m[j] / bc1;
      const Real vhat = v[j] / bc2;
      theta[j] -= step_size * (mhat / (std::sqrt(vhat) + eps) + wd * theta[j]);
    }
  }
}

template <class Real>
struct Checkpoint {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  Params<Real> params;
  std::vector<std::vector<Real>> opt_m;
  std::vector<std::vector<Real>> opt_v;
  std::int64_t opt_t = 0;
  std::int64_t global_step = 0;
  std::string vocab_mark;  // tokenizer fingerprint
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::optional<double> val_auroc;
};

template <class Real>
struct FitResult {
  Checkpoint<Real> checkpoint;
  std::vector<EpochLog> log;
};

// ---- config (de)serialization ----

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {{"d_model", cfg.d_model},
          {"n_layers", cfg.n_layers},
          {"n_heads", cfg.n_heads},
          {"d_ff", cfg.d_ff},
          {"window_lines", cfg.window_lines},
          {"line_tokens", cfg.line_tokens},
          {"window_overlap", cfg.window_overlap},
          {"vocab_size", cfg.vocab_size},
          {"dropout", cfg.dropout},
          {"init_std", cfg.init_std},
          {"pool", to_string(cfg.pool)},
          {"objective", to_string(cfg.objective)}};
}

inline PoolKind pool_from_string(const std::string& s) {
  if (s == "concat") return PoolKind::concat;
  if (s == "mean") return PoolKind::mean;
  throw ValidationError("unknown pooling kind: " + s + " (expected concat or mean)");
}

inline Objective objective_from_string(const std::string& s) {
  if (s == "line") return Objective::line;
  if (s == "file") return Objective::file;
  throw ValidationError("unknown objective: " + s + " (expected line or file)");
}

inline Precision precision_from_string(const std::string& s) {
  if (s == "single") return Precision::f32;
  if (s == "double") return Precision::f64;
  throw ValidationError("unknown precision: " + s + " (expected single or double)");
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.window_lines = j.at("window_lines").get<int>();
    cfg.line_tokens = j.at("line_tokens").get<int>();
    cfg.window_overlap = j.at("window_overlap").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.init_std = j.at("init_std").get<double>();
    cfg.pool = pool_from_string(j.at("pool").get<std::string>());
    cfg.objective = objective_from_string(j.at("objective").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad model configuration: ") + e.what());
  }
  return cfg;
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"weight_decay", cfg.weight_decay},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"adam_eps", cfg.adam_eps},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"warmup_fraction", cfg.warmup_fraction},
          {"class_w0", cfg.class_w0},
          {"class_w1", cfg.class_w1},
          {"seed", cfg.seed},
          {"precision", to_string(cfg.precision)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  try {
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.weight_decay = j.at("weight_decay").get<double>();
    cfg.beta1 = j.at("beta1").get<double>();
    cfg.beta2 = j.at("beta2").get<double>();
    cfg.adam_eps = j.at("adam_eps").get<double>();
    cfg.epochs = j.at("epochs").get<int>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.warmup_fraction = j.at("warmup_fraction").get<double>();
    cfg.class_w0 = j.at("class_w0").get<double>();
    cfg.class_w1 = j.at("class_w1").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.precision = precision_from_string(j.at("precision").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad training configuration: ") + e.what());
  }
  return cfg;
}

// ---- checkpoint file format ----
//
//   "lwck v1\n"
//   u64 meta_len, meta JSON (dtype, model, train, step, opt_step, vocab)
//   u64 tensor_count, then per tensor: u32 name_len, name, u32 ndims,
//     i32 dims..., u64 element_count
//   payloads in manifest order, little-endian raw values
//
// Tensor order: parameters, then opt.m.<name>, then opt.v.<name>.

inline constexpr const char* kCheckpointMagic = "lwck v1\n";

namespace detail {

template <class Real>
void append_values(std::string& buf, const std::vector<Real>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    buf.append(reinterpret_cast<const char*>(values.data()),
               values.size() * sizeof(Real));
  } else {
    for (Real v : values) put_le(buf, v);
  }
}

template <class Real>
std::vector<Real> read_values(ByteReader& reader, std::size_t count) {
  std::vector<Real> values(count);
  if constexpr (std::endian::native == std::endian::little) {
    const std::string raw = reader.get_bytes(count * sizeof(Real));
    std::memcpy(values.data(), raw.data(), raw.size());
  } else {
    for (std::size_t i = 0; i < count; ++i) values[i] = reader.get_le<Real>();
  }
  return values;
}

inline void append_manifest_entry(std::string& buf, const std::string& name,
                                  const std::vector<int>& dims, std::size_t count) {
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
  buf += name;
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(dims.size()));
  for (int d : dims) put_le<std::int32_t>(buf, d);
  put_le<std::uint64_t>(buf, count);
}

}  // namespace detail

template <class Real>
std::string checkpoint_to_bytes(const Checkpoint<Real>& ckpt) {
  if (ckpt.opt_m.size() != ckpt.params.items.size() ||
      ckpt.opt_v.size() != ckpt.params.items.size())
    throw std::runtime_error("checkpoint optimizer state does not match parameters");
  std::string buf = kCheckpointMagic;
  nlohmann::json meta = {
      {"dtype", sizeof(Real) == 8 ? "f64" : "f32"},
      {"model", model_config_to_json(ckpt.model_cfg)},
      {"train", train_config_to_json(ckpt.train_cfg)},
      {"step", ckpt.global_step},
      {"opt_step", ckpt.opt_t},
      {"vocab", ckpt.vocab_mark}};
  const std::string meta_str = meta.dump();
  put_le<std::uint64_t>(buf, meta_str.size());
  buf += meta_str;

  put_le<std::uint64_t>(buf, ckpt.params.items.size() * 3);
  for (const auto& [name, t] : ckpt.params.items)
    detail::append_manifest_entry(buf, name, t.shape(), t.numel());
  for (std::size_t i = 0; i < ckpt.params.items.size(); ++i)
    detail::append_manifest_entry(buf, "opt.m." + ckpt.params.items[i].first,
                                  ckpt.params.items[i].second.shape(),
                                  ckpt.opt_m[i].size());
  for (std::size_t i = 0; i < ckpt.params.items.size(); ++i)
    detail::append_manifest_entry(buf, "opt.v." + ckpt.params.items[i].first,
                                  ckpt.params.items[i].second.shape(),
                                  ckpt.opt_v[i].size());

  for (const auto& [name, t] : ckpt.params.items)
    detail::append_values(buf, t.values());
  for (const auto& m : ckpt.opt_m) detail::append_values(buf, m);
  for (const auto& v : ckpt.opt_v) detail::append_values(buf, v);
  return buf;
}

template <class Real>
void save_checkpoint(const Checkpoint<Real>& ckpt, const std::string& path) {
  atomic_write_file(path, checkpoint_to_bytes(ckpt));
}

/// Reads only the metadata block; used to pick the precision before
/// instantiating the full loader.
inline nlohmann::json peek_checkpoint_meta(const std::string& path) {
  const std::string data = read_file(path);
  const std::string magic = kCheckpointMagic;
  if (data.size() < magic.size() || data.compare(0, magic.size(), magic) != 0)
    throw ValidationError("checkpoint " + path + ": unsupported format");
  ByteReader reader(data, "checkpoint " + path);
  reader.get_bytes(magic.size());
  const auto meta_len = reader.get_le<std::uint64_t>();
  const std::string meta_str = reader.get_bytes(meta_len);
  try {
    return nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("checkpoint " + path + ": corrupt metadata: " + e.what());
  }
}

template <class Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
  const std::string where = "checkpoint " + path;
  const std::string data = read_file(path);
  const std::string magic = kCheckpointMagic;
  if (data.size() < magic.size() || data.compare(0, magic.size(), magic) != 0)
    throw ValidationError(where + ": unsupported format");
  ByteReader reader(data, where);
  reader.get_bytes(magic.size());
  const auto meta_len = reader.get_le<std::uint64_t>();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(reader.get_bytes(meta_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(where + ": corrupt metadata: " + e.what());
  }

  Checkpoint<Real> ckpt;
  try {
    const std::string dtype = meta.at("dtype").get<std::string>();
    const std::string expected = sizeof(Real) == 8 ? "f64" : "f32";
    if (dtype != expected)
      throw ValidationError(where + ": stores " + dtype + " values but " +
                            expected + " was requested");
    ckpt.model_cfg = model_config_from_json(meta.at("model"));
    ckpt.train_cfg = train_config_from_json(meta.at("train"));
    ckpt.global_step = meta.at("step").get<std::int64_t>();
    ckpt.opt_t = meta.at("opt_step").get<std::int64_t>();
    ckpt.vocab_mark = meta.at("vocab").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(where + ": corrupt metadata: " + e.what());
  }
  ckpt.model_cfg.validate();

  struct Entry {
    std::string name;
    std::vector<int> dims;
    std::size_t count;
  };
  const auto tensor_count = reader.get_le<std::uint64_t>();
  if (tensor_count == 0 || tensor_count % 3 != 0)
    throw ValidationError(where + ": corrupt manifest");
  std::vector<Entry> entries;
  entries.reserve(tensor_count);
  for (std::uint64_t i = 0; i < tensor_count; ++i) {
    Entry e;
    const auto name_len = reader.get_le<std::uint32_t>();
    e.name = reader.get_bytes(name_len);
    const auto ndims = reader.get_le<std::uint32_t>();
    if (ndims > 8) throw ValidationError(where + ": corrupt manifest");
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndims; ++d) {
      const auto dim = reader.get_le<std::int32_t>();
      if (dim <= 0) throw ValidationError(where + ": corrupt manifest");
      e.dims.push_back(dim);
      numel *= static_cast<std::size_t>(dim);
    }
    e.count = reader.get_le<std::uint64_t>();
    if (e.count != numel) throw ValidationError(where + ": corrupt manifest");
    entries.push_back(std::move(e));
  }

  const std::size_t n_params = tensor_count / 3;
  for (std::size_t i = 0; i < n_params; ++i) {
    if (entries[n_params + i].name != "opt.m." + entries[i].name ||
        entries[2 * n_params + i].name != "opt.v." + entries[i].name)
      throw ValidationError(where + ": corrupt manifest (optimizer entries out of order)");
  }

  for (std::size_t i = 0; i < n_params; ++i) {
    ag::Tensor<Real>& t = ckpt.params.add(entries[i].name, entries[i].dims);
    t.values() = detail::read_values<Real>(reader, entries[i].count);
  }
  for (std::size_t i = 0; i < n_params; ++i)
    ckpt.opt_m.push_back(detail::read_values<Real>(reader, entries[n_params + i].count));
  for (std::size_t i = 0; i < n_params; ++i)
    ckpt.opt_v.push_back(detail::read_values<Real>(reader, entries[2 * n_params + i].count));
  if (reader.remaining() != 0)
    throw ValidationError(where + ": trailing bytes after payload");
  return ckpt;
}

/// Rebuilds a Model from checkpoint contents (validates the parameter
/// list against the configuration).
template <class Real>
Model<Real> model_from_checkpoint(const Checkpoint<Real>& ckpt) {
  Model<Real> expected = Model<Real>::init(ckpt.model_cfg, 0);
  if (expected.params.items.size() != ckpt.params.items.size())
    throw ValidationError("checkpoint parameter list does not match its configuration");
  Model<Real> m;
  m.cfg = ckpt.model_cfg;
  for (std::size_t i = 0; i < ckpt.params.items.size(); ++i) {
    const auto& [name, t] = ckpt.params.items[i];
    if (expected.params.items[i].first != name ||
        expected.params.items[i].second.shape() != t.shape())
      throw ValidationError("checkpoint parameter " + name +
                            " does not match its configuration");
    ag::Tensor<Real>& dst = m.params.add(name, t.shape());
    dst.values() = t.values();
  }
  return m;
}

// ---- prediction ----

/// Line scores for every file of the corpus, in corpus order.  Files are
/// windowed exactly as in training; overlapping line scores are averaged.
template <class Real>
std::vector<std::pair<std::string, std::vector<double>>> predict_corpus(
    const Model<Real>& model, const Vocabulary& vocab, const Corpus& corpus) {
  if (model.cfg.vocab_size < vocab.size())
    throw ValidationError("vocabulary has " + std::to_string(vocab.size()) +
                          " tokens but the model embeds only " +
                          std::to_string(model.cfg.vocab_size));
  std::vector<std::pair<std::string, std::vector<double>>> out(corpus.files.size());
  std::vector<std::exception_ptr> failures(corpus.files.size());
  kern::parallel_for(static_cast<int>(corpus.files.size()), [&](int i) {
    try {
      const SourceFile& f = corpus.files[static_cast<std::size_t>(i)];
      const auto plan = window_plan(static_cast<int>(f.lines.size()),
                                    model.cfg.window_lines, model.cfg.window_overlap);
      const auto windows = encode_file(vocab, f, model.cfg.window_lines,
                                       model.cfg.line_tokens, model.cfg.window_overlap);
      std::vector<std::pair<int, std::vector<double>>> scored;
      scored.reserve(windows.size());
      for (const FileWindow& w : windows) {
        std::vector<double> scores(static_cast<std::size_t>(model.cfg.window_lines));
        if (model.cfg.objective == Objective::line) {
          LinePredictions<Real> pred = model.forward_window(nullptr, w, false, nullptr);
          for (int r = 0; r < model.cfg.window_lines; ++r)
            scores[static_cast<std::size_t>(r)] = static_cast<double>(
                pred.probs.values()[static_cast<std::size_t>(r) * 2 + 1]);
        } else {
          FilePrediction<Real> pred = model.file_forward(nullptr, w, false, nullptr);
          for (int r = 0; r < model.cfg.window_lines; ++r)
            scores[static_cast<std::size_t>(r)] =
                static_cast<double>(pred.line_scores[static_cast<std::size_t>(r)]);
        }
        scored.emplace_back(w.start_line, std::move(scores));
      }
      out[static_cast<std::size_t>(i)] = {
          f.path, merge_window_scores(scored, plan, static_cast<int>(f.lines.size()))};
    } catch (...) {
      failures[static_cast<std::size_t>(i)] = std::current_exception();
    }
  });
  for (const std::exception_ptr& e : failures)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---- training ----

template <class Real>
FitResult<Real> fit(const Corpus& corpus, const SplitAssignment& split,
                    const Vocabulary& vocab, const ModelConfig& mcfg,
                    const TrainConfig& tcfg,
                    const std::function<void(const EpochLog&)>& on_epoch = {}) {
  mcfg.validate();
  tcfg.validate();
  split.validate_against(corpus);
  if (mcfg.vocab_size < vocab.size())
    throw ValidationError("vocabulary has " + std::to_string(vocab.size()) +
                          " tokens but the model embeds only " +
                          std::to_string(mcfg.vocab_size));

  const Corpus train_files = corpus.subset(split.train);
  const Corpus val_files = corpus.subset(split.validation);

  std::vector<FileWindow> train_windows;
  for (const SourceFile& f : train_files.files) {
    auto ws = encode_file(vocab, f, mcfg.window_lines, mcfg.line_tokens,
                          mcfg.window_overlap);
    for (FileWindow& w : ws) train_windows.push_back(std::move(w));
  }
  std::vector<std::vector<FileWindow>> val_windows;
  val_windows.reserve(val_files.files.size());
  for (const SourceFile& f : val_files.files)
    val_windows.push_back(encode_file(vocab, f, mcfg.window_lines, mcfg.line_tokens,
                                      mcfg.window_overlap));

  Model<Real> model = Model<Real>::init(mcfg, tcfg.seed);
  OptState<Real> opt = OptState<Real>::zeros_like(model.params);
  Rng run_rng(tcfg.seed ^ 0x9e3779b97f4a7c15ull);

  const auto n_windows = static_cast<std::int64_t>(train_windows.size());
  const std::int64_t steps_per_epoch = (n_windows + tcfg.batch_size - 1) / tcfg.batch_size;
  const std::int64_t total_steps = steps_per_epoch * tcfg.epochs;

  const std::vector<Real> class_weights = {Real(tcfg.class_w0), Real(tcfg.class_w1)};
  auto window_loss = [&](ag::Tape<Real>* tape, const FileWindow& w, bool training,
                         Rng* rng) {
    if (mcfg.objective == Objective::line) {
      LinePredictions<Real> pred = model.forward_window(tape, w, training, rng);
      return ag::masked_cross_entropy(tape, pred.probs, w.line_labels, w.line_mask,
                                      class_weights);
    }
    FilePrediction<Real> pred = model.file_forward(tape, w, training, rng);
    std::uint8_t label = 0;
    for (std::size_t i = 0; i < w.line_labels.size(); ++i)
      if (w.line_mask[i] && w.line_labels[i]) label = 1;
    return ag::masked_cross_entropy(tape, pred.probs,
                                    std::vector<std::uint8_t>{label},
                                    std::vector<std::uint8_t>{1}, class_weights);
  };

  auto validation_pass = [&]() {
    double loss_sum = 0.0;
    std::int64_t loss_count = 0;
    std::vector<ScoredLine> pooled;
    for (std::size_t fi = 0; fi < val_files.files.size(); ++fi) {
      const SourceFile& f = val_files.files[fi];
      const auto plan = window_plan(static_cast<int>(f.lines.size()),
                                    mcfg.window_lines, mcfg.window_overlap);
      std::vector<std::pair<int, std::vector<double>>> scored;
      for (const FileWindow& w : val_windows[fi]) {
        std::vector<double> scores(static_cast<std::size_t>(mcfg.window_lines));
        if (mcfg.objective == Objective::line) {
          LinePredictions<Real> pred = model.forward_window(nullptr, w, false, nullptr);
          loss_sum += static_cast<double>(
              ag::masked_cross_entropy<Real>(nullptr, pred.probs, w.line_labels,
                                             w.line_mask, class_weights)
                  .item());
          for (int r = 0; r < mcfg.window_lines; ++r)
            scores[static_cast<std::size_t>(r)] = static_cast<double>(
                pred.probs.values()[static_cast<std::size_t>(r) * 2 + 1]);
        } else {
          FilePrediction<Real> pred = model.file_forward(nullptr, w, false, nullptr);
          std::uint8_t label = 0;
          for (std::size_t i = 0; i < w.line_labels.size(); ++i)
            if (w.line_mask[i] && w.line_labels[i]) label = 1;
          loss_sum += static_cast<double>(
              ag::masked_cross_entropy<Real>(nullptr, pred.probs, {label}, {1},
                                             class_weights)
                  .item());
          for (int r = 0; r < mcfg.window_lines; ++r)
            scores[static_cast<std::size_t>(r)] =
                static_cast<double>(pred.line_scores[static_cast<std::size_t>(r)]);
        }
        ++loss_count;
        scored.emplace_back(w.start_line, std::move(scores));
      }
      const std::vector<double> merged =
          merge_window_scores(scored, plan, static_cast<int>(f.lines.size()));
      for (std::size_t li = 0; li < merged.size(); ++li)
        pooled.push_back({f.path, static_cast<int>(li + 1), merged[li], f.labels[li]});
    }
    EpochLog entry;
    entry.val_loss = loss_sum / static_cast<double>(loss_count);
    entry.val_auroc = auroc(pooled);
    return entry;
  };

  Checkpoint<Real> best;
  bool have_best = false;
  bool best_has_auroc = false;
  double best_key = 0.0;  // auroc when available, else -val_loss
  auto snapshot = [&](std::int64_t step) {
    best.model_cfg = mcfg;
    best.train_cfg = tcfg;
    best.params = model.params.deep_copy();
    best.opt_m = opt.m;
    best.opt_v = opt.v;
    best.opt_t = opt.t;
    best.global_step = step;
    best.vocab_mark = vocab_fingerprint(vocab);
    have_best = true;
  };

  std::vector<EpochLog> log;
  std::vector<std::size_t> order(train_windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::int64_t global_step = 0;
  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    shuffle(order, run_rng);
    double train_loss_sum = 0.0;
    for (std::int64_t start = 0; start < n_windows; start += tcfg.batch_size) {
      const std::int64_t batch_n = std::min<std::int64_t>(tcfg.batch_size, n_windows - start);
      ag::Tape<Real> tape;
      ag::Tensor<Real> batch_loss;
      for (std::int64_t b = 0; b < batch_n; ++b) {
        const FileWindow& w = train_windows[order[static_cast<std::size_t>(start + b)]];
        ag::Tensor<Real> loss = window_loss(&tape, w, true, &run_rng);
        batch_loss = b == 0 ? loss : ag::add(&tape, batch_loss, loss);
      }
      batch_loss = ag::scale(&tape, batch_loss, Real(1) / Real(batch_n));
      const double loss_value = static_cast<double>(batch_loss.item());
      if (!std::isfinite(loss_value))
        throw std::runtime_error("training diverged: loss became " +
                                 std::to_string(loss_value) + " at epoch " +
                                 std::to_string(epoch) + ", step " +
                                 std::to_string(global_step));
      train_loss_sum += loss_value * static_cast<double>(batch_n);
      tape.backward(batch_loss);
      adamw_step(model, opt, lr_at(global_step, total_steps, tcfg), tcfg);
      model.clear_grads();
      ++global_step;
    }

    EpochLog entry = validation_pass();
    entry.epoch = epoch;
    entry.train_loss = train_loss_sum / static_cast<double>(n_windows);
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);

    const bool has_auroc = entry.val_auroc.has_value();
    const double key = has_auroc ? *entry.val_auroc : -entry.val_loss;
    const bool better = !have_best || (has_auroc && !best_has_auroc) ||
                        (has_auroc == best_has_auroc && key > best_key);
    if (better) {
      best_has_auroc = has_auroc;
      best_key = key;
      snapshot(global_step);
    }
  }

  if (!have_best) snapshot(0);  // zero epochs: keep the initial model
  return {std::move(best), std::move(log)};
}

}  // namespace lw
