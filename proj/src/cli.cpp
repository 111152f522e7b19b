#include "lw/cli.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"
#include "lw/common.hpp"
#include "lw/train.hpp"

namespace lw::cli {

using nlohmann::json;

namespace {

/// Collects "apply this flag over the config-file value" actions; flags
/// given on the command line always win over --config contents.
struct FlagOverrides {
  std::vector<std::pair<CLI::Option*, std::function<void()>>> actions;
  void add(CLI::Option* opt, std::function<void()> fn) {
    actions.emplace_back(opt, std::move(fn));
  }
  void apply() const {
    for (const auto& [opt, fn] : actions)
      if (opt->count() > 0) fn();
  }
};

struct Hyper {
  ModelConfig model;
  TrainConfig train;
};

void apply_json_key(const json& j, const char* key,
                    const std::function<void(const json&)>& set) {
  if (j.contains(key)) set(j.at(key));
}

/// Merges a partial {"model": {...}, "train": {...}} file into the
/// defaults; unknown keys are rejected so typos cannot silently vanish.
void load_config_file(const std::string& path, Hyper& h) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("config file " + path + ": invalid JSON: " + e.what());
  }
  if (!j.is_object())
    throw ValidationError("config file " + path + ": not a JSON object");
  for (const auto& [section, body] : j.items()) {
    if (section != "model" && section != "train")
      throw ValidationError("config file " + path + ": unknown section \"" +
                            section + "\"");
    if (!body.is_object())
      throw ValidationError("config file " + path + ": \"" + section +
                            "\" must be an object");
  }
  try {
    if (j.contains("model")) {
      const json& m = j["model"];
      static const std::vector<std::string> known = {
          "d_model",     "n_layers",       "n_heads", "d_ff",
          "window_lines", "line_tokens",   "window_overlap",
          "dropout",     "init_std",       "pool",    "objective"};
      for (const auto& [key, value] : m.items()) {
        (void)value;
        if (std::find(known.begin(), known.end(), key) == known.end())
          throw ValidationError("config file " + path +
                                ": unknown model key \"" + key + "\"");
      }
      apply_json_key(m, "d_model", [&](const json& v) { h.model.d_model = v.get<int>(); });
      apply_json_key(m, "n_layers", [&](const json& v) { h.model.n_layers = v.get<int>(); });
      apply_json_key(m, "n_heads", [&](const json& v) { h.model.n_heads = v.get<int>(); });
      apply_json_key(m, "d_ff", [&](const json& v) { h.model.d_ff = v.get<int>(); });
      apply_json_key(m, "window_lines", [&](const json& v) { h.model.window_lines = v.get<int>(); });
      apply_json_key(m, "line_tokens", [&](const json& v) { h.model.line_tokens = v.get<int>(); });
      apply_json_key(m, "window_overlap", [&](const json& v) { h.model.window_overlap = v.get<int>(); });
      apply_json_key(m, "dropout", [&](const json& v) { h.model.dropout = v.get<double>(); });
      apply_json_key(m, "init_std", [&](const json& v) { h.model.init_std = v.get<double>(); });
      apply_json_key(m, "pool", [&](const json& v) { h.model.pool = pool_from_string(v.get<std::string>()); });
      apply_json_key(m, "objective", [&](const json& v) { h.model.objective = objective_from_string(v.get<std::string>()); });
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      static const std::vector<std::string> known = {
          "learning_rate", "weight_decay", "beta1",           "beta2",
          "adam_eps",      "epochs",       "batch_size",      "warmup_fraction",
          "class_w0",      "class_w1",     "seed",            "precision"};
      for (const auto& [key, value] : t.items()) {
        (void)value;
        if (std::find(known.begin(), known.end(), key) == known.end())
          throw ValidationError("config file " + path +
                                ": unknown train key \"" + key + "\"");
      }
      apply_json_key(t, "learning_rate", [&](const json& v) { h.train.learning_rate = v.get<double>(); });
      apply_json_key(t, "weight_decay", [&](const json& v) { h.train.weight_decay = v.get<double>(); });
      apply_json_key(t, "beta1", [&](const json& v) { h.train.beta1 = v.get<double>(); });
      apply_json_key(t, "beta2", [&](const json& v) { h.train.beta2 = v.get<double>(); });
      apply_json_key(t, "adam_eps", [&](const json& v) { h.train.adam_eps = v.get<double>(); });
      apply_json_key(t, "epochs", [&](const json& v) { h.train.epochs = v.get<int>(); });
      apply_json_key(t, "batch_size", [&](const json& v) { h.train.batch_size = v.get<int>(); });
      apply_json_key(t, "warmup_fraction", [&](const json& v) { h.train.warmup_fraction = v.get<double>(); });
      apply_json_key(t, "class_w0", [&](const json& v) { h.train.class_w0 = v.get<double>(); });
      apply_json_key(t, "class_w1", [&](const json& v) { h.train.class_w1 = v.get<double>(); });
      apply_json_key(t, "seed", [&](const json& v) { h.train.seed = v.get<std::uint64_t>(); });
      apply_json_key(t, "precision", [&](const json& v) { h.train.precision = precision_from_string(v.get<std::string>()); });
    }
  } catch (const json::exception& e) {
    throw ValidationError("config file " + path + ": " + e.what());
  }
}

/// Registers the shared model/training hyperparameter flags on a train-like
/// subcommand, recording override actions for each.
struct HyperFlags {
  std::string config_path;
  int d_model = 0, n_layers = 0, n_heads = 0, d_ff = 0, L = 0, T = 0, N_O = 0;
  double dropout = 0, init_std = 0, lr = 0, wd = 0, beta1 = 0, beta2 = 0,
         adam_eps = 0, warmup = 0, w0 = 0, w1 = 0;
  int epochs = 0, batch_size = 0;
  std::uint64_t seed = 0;
  std::string pool, objective, precision;

  void attach(CLI::App* cmd, Hyper& h, FlagOverrides& over) {
    cmd->add_option("--config", config_path,
                    "JSON file with model/train settings (flags override it)");
    auto* o_seed = cmd->add_option("--seed", seed, "Random seed");
    over.add(o_seed, [this, &h] { h.train.seed = seed; });
    auto* o_dm = cmd->add_option("--d-model", d_model, "Embedding width");
    over.add(o_dm, [this, &h] { h.model.d_model = d_model; });
    auto* o_nl = cmd->add_option("--n-layers", n_layers, "Layers per transformer stack");
    over.add(o_nl, [this, &h] { h.model.n_layers = n_layers; });
    auto* o_nh = cmd->add_option("--n-heads", n_heads, "Attention heads");
    over.add(o_nh, [this, &h] { h.model.n_heads = n_heads; });
    auto* o_ff = cmd->add_option("--d-ff", d_ff, "Feed-forward width");
    over.add(o_ff, [this, &h] { h.model.d_ff = d_ff; });
    auto* o_L = cmd->add_option("--L", L, "Lines per window");
    over.add(o_L, [this, &h] { h.model.window_lines = L; });
    auto* o_T = cmd->add_option("--T", T, "Tokens kept per line");
    over.add(o_T, [this, &h] { h.model.line_tokens = T; });
    auto* o_NO = cmd->add_option("--N-O", N_O, "Lines of overlap between windows");
    over.add(o_NO, [this, &h] { h.model.window_overlap = N_O; });
    auto* o_do = cmd->add_option("--dropout", dropout, "Dropout probability");
    over.add(o_do, [this, &h] { h.model.dropout = dropout; });
    auto* o_is = cmd->add_option("--init-std", init_std, "Init standard deviation");
    over.add(o_is, [this, &h] { h.model.init_std = init_std; });
    auto* o_pool = cmd->add_option("--pool", pool, "Line pooling: concat or mean");
    over.add(o_pool, [this, &h] { h.model.pool = pool_from_string(pool); });
    auto* o_obj = cmd->add_option("--objective", objective, "Training objective: line or file");
    over.add(o_obj, [this, &h] { h.model.objective = objective_from_string(objective); });
    auto* o_lr = cmd->add_option("--learning-rate", lr, "Peak learning rate");
    over.add(o_lr, [this, &h] { h.train.learning_rate = lr; });
    auto* o_wd = cmd->add_option("--weight-decay", wd, "Decoupled weight decay");
    over.add(o_wd, [this, &h] { h.train.weight_decay = wd; });
    auto* o_b1 = cmd->add_option("--beta1", beta1, "Adam beta1");
    over.add(o_b1, [this, &h] { h.train.beta1 = beta1; });
    auto* o_b2 = cmd->add_option("--beta2", beta2, "Adam beta2");
    over.add(o_b2, [this, &h] { h.train.beta2 = beta2; });
    auto* o_eps = cmd->add_option("--adam-eps", adam_eps, "Adam epsilon");
    over.add(o_eps, [this, &h] { h.train.adam_eps = adam_eps; });
    auto* o_ep = cmd->add_option("--epochs", epochs, "Training epochs");
    over.add(o_ep, [this, &h] { h.train.epochs = epochs; });
    auto* o_bs = cmd->add_option("--batch-size", batch_size, "Windows per optimizer step");
    over.add(o_bs, [this, &h] { h.train.batch_size = batch_size; });
    auto* o_wu = cmd->add_option("--warmup-fraction", warmup, "Fraction of steps for LR warmup");
    over.add(o_wu, [this, &h] { h.train.warmup_fraction = warmup; });
    auto* o_w0 = cmd->add_option("--w0", w0, "Loss weight for the clean class");
    over.add(o_w0, [this, &h] { h.train.class_w0 = w0; });
    auto* o_w1 = cmd->add_option("--w1", w1, "Loss weight for the defective class");
    over.add(o_w1, [this, &h] { h.train.class_w1 = w1; });
    auto* o_pr = cmd->add_option("--precision", precision, "Numeric precision: single or double");
    over.add(o_pr, [this, &h] { h.train.precision = precision_from_string(precision); });
  }
};

void set_threads(int threads) {
  if (threads < 0) throw ValidationError("thread count must be non-negative");
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

// ---- prediction score files (JSONL: {"path": ..., "scores": [...]}) ----

void save_predictions(
    const std::vector<std::pair<std::string, std::vector<double>>>& preds,
    const std::string& path) {
  std::string out;
  for (const auto& [file_path, scores] : preds) {
    json j;
    j["path"] = file_path;
    j["scores"] = scores;
    out += j.dump();
    out += '\n';
  }
  atomic_write_file(path, out);
}

std::vector<std::pair<std::string, std::vector<double>>> load_predictions(
    const std::string& path) {
  const std::string data = read_file(path);
  std::vector<std::pair<std::string, std::vector<double>>> preds;
  std::istringstream in(data);
  std::string line;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++record;
    const std::string where = "score file record " + std::to_string(record);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError(where + ": invalid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("path") || !j["path"].is_string() ||
        !j.contains("scores") || !j["scores"].is_array())
      throw ValidationError(where + ": expected {\"path\": ..., \"scores\": [...]}");
    std::vector<double> scores;
    for (const auto& v : j["scores"]) {
      if (!v.is_number()) throw ValidationError(where + ": scores must be numbers");
      scores.push_back(v.get<double>());
    }
    preds.emplace_back(j["path"].get<std::string>(), std::move(scores));
  }
  if (preds.empty()) throw ValidationError("score file " + path + " is empty");
  return preds;
}

std::string epoch_log_line(const EpochLog& e) {
  json j;
  j["epoch"] = e.epoch;
  j["train_loss"] = e.train_loss;
  j["val_loss"] = e.val_loss;
  if (e.val_auroc)
    j["val_auroc"] = *e.val_auroc;
  else
    j["val_auroc"] = nullptr;
  return j.dump();
}

// ---- subcommand payloads ----

struct SynthArgs {
  std::string out;
  SyntheticSpec spec;
  std::uint64_t seed = 0;
};

void run_synth(const SynthArgs& a) {
  const Corpus corpus = generate_synthetic(a.spec, a.seed);
  save_corpus(corpus, a.out);
  std::cout << "wrote " << corpus.files.size() << " files, " << corpus.total_lines()
            << " lines (" << corpus.total_defective() << " defective) to " << a.out
            << "\n";
}

struct BpeArgs {
  std::string corpus_path;
  std::string out;
  int vocab_size = 2048;
};

void run_bpe_train(const BpeArgs& a) {
  const Corpus corpus = load_corpus(a.corpus_path);
  const Vocabulary vocab = train_bpe(corpus, a.vocab_size);
  save_vocab(vocab, a.out);
  std::cout << "vocabulary of " << vocab.size() << " tokens ("
            << vocab.merges.size() << " merges) written to " << a.out << "\n";
}

struct SplitArgs {
  std::string corpus_path;
  std::string out;
  std::string strategy = "random";
  SplitFractions fractions;
  std::string test_projects;
  std::uint64_t seed = 0;
};

void run_split(const SplitArgs& a) {
  const Corpus corpus = load_corpus(a.corpus_path);
  SplitAssignment split;
  if (a.strategy == "random") {
    split = split_random(corpus, a.fractions, a.seed);
  } else if (a.strategy == "timewise") {
    split = split_timewise(corpus, a.fractions);
  } else if (a.strategy == "cross-project") {
    std::vector<std::string> projects;
    std::stringstream ss(a.test_projects);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) projects.push_back(item);
    split = split_cross_project(corpus, projects, a.fractions, a.seed);
  } else {
    throw ValidationError("unknown split strategy: " + a.strategy +
                          " (expected random, timewise, or cross-project)");
  }
  split.validate_against(corpus);
  save_split(split, a.out);
  std::cout << "split " << split.train.size() << "/" << split.validation.size()
            << "/" << split.test.size() << " (train/validation/test) written to "
            << a.out << "\n";
}

struct TrainArgs {
  std::string corpus_path;
  std::string vocab_path;
  std::string split_path;
  std::string out;
  std::string log_path;  // default: <out>.log.jsonl
  Hyper hyper;
};

template <class Real>
void run_train_typed(const TrainArgs& a, const Corpus& corpus,
                     const SplitAssignment& split, const Vocabulary& vocab) {
  const std::string log_path =
      a.log_path.empty() ? a.out + ".log.jsonl" : a.log_path;
  std::string log_text;
  auto on_epoch = [&](const EpochLog& e) {
    log_text += epoch_log_line(e);
    log_text += '\n';
    atomic_write_file(log_path, log_text);
    std::cout << "epoch " << e.epoch << "/" << a.hyper.train.epochs
              << "  train_loss=" << e.train_loss << "  val_loss=" << e.val_loss;
    if (e.val_auroc)
      std::cout << "  val_auroc=" << *e.val_auroc;
    else
      std::cout << "  val_auroc=undefined";
    std::cout << "\n" << std::flush;
  };
  FitResult<Real> result =
      fit<Real>(corpus, split, vocab, a.hyper.model, a.hyper.train, on_epoch);
  save_checkpoint(result.checkpoint, a.out);
  if (a.hyper.train.epochs == 0) atomic_write_file(log_path, log_text);
  std::cout << "checkpoint written to " << a.out << " (selected step "
            << result.checkpoint.global_step << ")\n";
}

void run_train(TrainArgs& a) {
  const Corpus corpus = load_corpus(a.corpus_path);
  const Vocabulary vocab = load_vocab(a.vocab_path);
  const SplitAssignment split = load_split(a.split_path);
  a.hyper.model.vocab_size = vocab.size();
  if (a.hyper.train.precision == Precision::f64)
    run_train_typed<double>(a, corpus, split, vocab);
  else
    run_train_typed<float>(a, corpus, split, vocab);
}

struct PredictArgs {
  std::string corpus_path;
  std::string vocab_path;
  std::string checkpoint_path;
  std::string out;
  std::string split_path;
  std::string part = "test";
};

template <class Real>
void run_predict_typed(const PredictArgs& a, const Corpus& corpus,
                       const Vocabulary& vocab) {
  const Checkpoint<Real> ckpt = load_checkpoint<Real>(a.checkpoint_path);
  if (ckpt.vocab_mark != vocab_fingerprint(vocab))
    throw ValidationError(
        "vocabulary does not match the one this checkpoint was trained with");
  const Model<Real> model = model_from_checkpoint(ckpt);
  const auto preds = predict_corpus(model, vocab, corpus);
  save_predictions(preds, a.out);
  std::cout << "scores for " << preds.size() << " files written to " << a.out << "\n";
}

void run_predict(const PredictArgs& a) {
  Corpus corpus = load_corpus(a.corpus_path);
  if (!a.split_path.empty()) {
    const SplitAssignment split = load_split(a.split_path);
    const std::vector<std::string>* part;
    if (a.part == "train")
      part = &split.train;
    else if (a.part == "validation")
      part = &split.validation;
    else if (a.part == "test")
      part = &split.test;
    else
      throw ValidationError("unknown split part: " + a.part +
                            " (expected train, validation, or test)");
    corpus = corpus.subset(*part);
  }
  if (corpus.files.empty()) throw ValidationError("nothing to score: no files selected");
  const Vocabulary vocab = load_vocab(a.vocab_path);
  const json meta = peek_checkpoint_meta(a.checkpoint_path);
  std::string dtype;
  try {
    dtype = meta.at("dtype").get<std::string>();
  } catch (const json::exception&) {
    throw ValidationError("checkpoint " + a.checkpoint_path + ": corrupt metadata");
  }
  if (dtype == "f64")
    run_predict_typed<double>(a, corpus, vocab);
  else if (dtype == "f32")
    run_predict_typed<float>(a, corpus, vocab);
  else
    throw ValidationError("checkpoint " + a.checkpoint_path +
                          ": unknown dtype " + dtype);
}

struct EvaluateArgs {
  std::string corpus_path;
  std::string scores_path;
  std::string out;
  std::string ranked_out;
  MetricParams params;
  std::string ranking = "global";
};

void run_evaluate(EvaluateArgs& a) {
  if (a.ranking == "global")
    a.params.ranking = Ranking::global;
  else if (a.ranking == "per-file")
    a.params.ranking = Ranking::per_file;
  else
    throw ValidationError("unknown ranking mode: " + a.ranking +
                          " (expected global or per-file)");
  const Corpus corpus = load_corpus(a.corpus_path);
  const auto preds = load_predictions(a.scores_path);
  std::vector<std::string> paths;
  paths.reserve(preds.size());
  for (const auto& [p, scores] : preds) paths.push_back(p);
  const Corpus subset = corpus.subset(paths);
  const MetricsReport report = evaluate(preds, subset, a.params);
  const std::string text = report_to_json(report);
  std::cout << text;
  if (!a.out.empty()) atomic_write_file(a.out, text);
  if (!a.ranked_out.empty()) {
    std::vector<ScoredLine> pool;
    for (const auto& [p, scores] : preds) {
      const SourceFile* f = subset.find(p);
      for (std::size_t i = 0; i < scores.size(); ++i)
        pool.push_back({p, static_cast<int>(i + 1), scores[i], f->labels[i]});
    }
    atomic_write_file(a.ranked_out, ranked_to_jsonl(rank_lines(std::move(pool))));
  }
}

struct PipelineArgs {
  std::string out_dir;
  SyntheticSpec spec;
  int vocab_target = 2048;
  std::uint64_t seed = 0;
  Hyper hyper;
};

void run_pipeline(PipelineArgs& a) {
  namespace fs = std::filesystem;
  fs::create_directories(a.out_dir);
  const std::string corpus_path = a.out_dir + "/corpus.jsonl";
  const std::string vocab_path = a.out_dir + "/vocab.txt";
  const std::string split_path = a.out_dir + "/split.json";
  const std::string ckpt_path = a.out_dir + "/model.ckpt";
  const std::string scores_path = a.out_dir + "/scores.jsonl";
  const std::string report_path = a.out_dir + "/report.json";

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&]() {
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::steady_clock::now() - t0)
        .count();
  };
  auto stage = [&](const char* name) {
    std::cout << "[" << elapsed() << "s] " << name << "\n" << std::flush;
  };

  stage("generating corpus");
  SynthArgs synth{corpus_path, a.spec, a.seed};
  run_synth(synth);

  stage("training tokenizer");
  BpeArgs bpe{corpus_path, vocab_path, a.vocab_target};
  run_bpe_train(bpe);

  stage("splitting corpus");
  SplitArgs split{corpus_path, split_path, "random", SplitFractions{}, "", a.seed};
  run_split(split);

  stage("training model");
  TrainArgs train{corpus_path, vocab_path, split_path, ckpt_path, "", a.hyper};
  run_train(train);

  stage("scoring test files");
  PredictArgs predict{corpus_path, vocab_path, ckpt_path, scores_path, split_path,
                      "test"};
  run_predict(predict);

  stage("evaluating");
  EvaluateArgs ev;
  ev.corpus_path = corpus_path;
  ev.scores_path = scores_path;
  ev.out = report_path;
  run_evaluate(ev);
  std::cout << "[" << elapsed() << "s] done; report at " << report_path << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{std::string(kToolName) +
               ": line-level defect prediction with a two-level transformer"};
  app.name(kToolName);
  app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads,
                 "OpenMP thread cap (0 = library default)");

  FlagOverrides over;

  // synth
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic labeled corpus");
  SynthArgs synth;
  c_synth->add_option("--out", synth.out, "Corpus output path (JSONL)")->required();
  c_synth->add_option("--files", synth.spec.n_files, "Number of files");
  c_synth->add_option("--lines", synth.spec.lines_per_file, "Lines per file");
  c_synth->add_option("--defect-rate", synth.spec.defect_rate,
                      "Fraction of defective lines per file");
  c_synth->add_option("--projects", synth.spec.n_projects, "Number of projects");
  c_synth->add_option("--seed", synth.seed, "Random seed");

  // bpe-train
  auto* c_bpe = app.add_subcommand("bpe-train", "Learn a byte-pair vocabulary");
  BpeArgs bpe;
  c_bpe->add_option("--corpus", bpe.corpus_path, "Corpus path (JSONL)")->required();
  c_bpe->add_option("--out", bpe.out, "Vocabulary output path")->required();
  c_bpe->add_option("--vocab-size", bpe.vocab_size, "Target vocabulary size");

  // split
  auto* c_split = app.add_subcommand("split", "Assign corpus files to train/validation/test");
  SplitArgs split;
  c_split->add_option("--corpus", split.corpus_path, "Corpus path (JSONL)")->required();
  c_split->add_option("--out", split.out, "Split output path (JSON)")->required();
  c_split->add_option("--strategy", split.strategy,
                      "random, timewise, or cross-project");
  c_split->add_option("--train-frac", split.fractions.train, "Train fraction");
  c_split->add_option("--val-frac", split.fractions.validation, "Validation fraction");
  c_split->add_option("--test-frac", split.fractions.test, "Test fraction");
  c_split->add_option("--test-projects", split.test_projects,
                      "Comma-separated projects held out as test (cross-project)");
  c_split->add_option("--seed", split.seed, "Random seed");

  // train
  auto* c_train = app.add_subcommand("train", "Train a model and write the best checkpoint");
  TrainArgs train;
  HyperFlags train_flags;
  c_train->add_option("--corpus", train.corpus_path, "Corpus path (JSONL)")->required();
  c_train->add_option("--vocab", train.vocab_path, "Vocabulary path")->required();
  c_train->add_option("--split", train.split_path, "Split file (JSON)")->required();
  c_train->add_option("--out", train.out, "Checkpoint output path")->required();
  c_train->add_option("--log", train.log_path,
                      "Training log path (default: <out>.log.jsonl)");
  train_flags.attach(c_train, train.hyper, over);

  // predict
  auto* c_predict = app.add_subcommand("predict", "Score lines with a trained model");
  PredictArgs predict;
  c_predict->add_option("--corpus", predict.corpus_path, "Corpus path (JSONL)")->required();
  c_predict->add_option("--vocab", predict.vocab_path, "Vocabulary path")->required();
  c_predict->add_option("--checkpoint", predict.checkpoint_path, "Trained checkpoint")->required();
  c_predict->add_option("--out", predict.out, "Score output path (JSONL)")->required();
  c_predict->add_option("--split", predict.split_path,
                        "Optional split file restricting which files are scored");
  c_predict->add_option("--part", predict.part,
                        "Split part to score: train, validation, or test");

  // evaluate
  auto* c_eval = app.add_subcommand("evaluate", "Compute metrics from scores and labels");
  EvaluateArgs ev;
  c_eval->add_option("--corpus", ev.corpus_path, "Corpus path (JSONL)")->required();
  c_eval->add_option("--scores", ev.scores_path, "Score file from predict")->required();
  c_eval->add_option("--out", ev.out, "Report output path (JSON)");
  c_eval->add_option("--ranked-out", ev.ranked_out,
                     "Optional ranked-line dump path (JSONL)");
  c_eval->add_option("--threshold", ev.params.threshold,
                     "Classification threshold for balanced accuracy");
  c_eval->add_option("--k-loc", ev.params.k_loc, "Inspected-lines fraction");
  c_eval->add_option("--k-recall", ev.params.k_recall, "Recall target fraction");
  c_eval->add_option("--ranking", ev.ranking, "global or per-file");

  // pipeline
  auto* c_pipe = app.add_subcommand(
      "pipeline", "synth + bpe-train + split + train + predict + evaluate");
  PipelineArgs pipe;
  HyperFlags pipe_flags;
  c_pipe->add_option("--out-dir", pipe.out_dir, "Directory for all artifacts")->required();
  c_pipe->add_option("--files", pipe.spec.n_files, "Number of synthetic files");
  c_pipe->add_option("--lines", pipe.spec.lines_per_file, "Lines per file");
  c_pipe->add_option("--defect-rate", pipe.spec.defect_rate,
                     "Fraction of defective lines per file");
  c_pipe->add_option("--projects", pipe.spec.n_projects, "Number of projects");
  c_pipe->add_option("--vocab-size", pipe.vocab_target, "Target vocabulary size");
  pipe_flags.attach(c_pipe, pipe.hyper, over);
  // A short schedule on the bigger synthetic corpus is enough; the train
  // subcommand keeps its own longer default.
  pipe.spec.n_files = 2000;
  pipe.hyper.train.epochs = 2;

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    // Prints help/version on stdout or the failure on stderr; any parse
    // failure maps to exit code 1.
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    set_threads(threads);
    if (c_train->parsed() || c_pipe->parsed()) {
      Hyper& h = c_train->parsed() ? train.hyper : pipe.hyper;
      const std::string& config_path =
          c_train->parsed() ? train_flags.config_path : pipe_flags.config_path;
      if (!config_path.empty()) load_config_file(config_path, h);
      over.apply();
      pipe.seed = pipe.hyper.train.seed;
    }
    if (c_synth->parsed()) run_synth(synth);
    if (c_bpe->parsed()) run_bpe_train(bpe);
    if (c_split->parsed()) run_split(split);
    if (c_train->parsed()) run_train(train);
    if (c_predict->parsed()) run_predict(predict);
    if (c_eval->parsed()) run_evaluate(ev);
    if (c_pipe->parsed()) run_pipeline(pipe);
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace lw::cli
