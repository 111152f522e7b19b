#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "lw/bpe.hpp"
#include "lw/common.hpp"
#include "lw/corpus.hpp"
#include "lw/model.hpp"
#include "lw/train.hpp"

using namespace lw;
namespace fs = std::filesystem;

namespace {

std::string train_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "lw_train_tests";
  fs::create_directories(dir);
  return (dir / name).string();
}

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.window_lines = 8;
  cfg.line_tokens = 4;
  cfg.window_overlap = 2;
  cfg.vocab_size = 128;
  cfg.dropout = 0.0;
  return cfg;
}

struct TinySetup {
  Corpus corpus;
  SplitAssignment split;
  Vocabulary vocab;
};

TinySetup tiny_setup(std::uint64_t seed) {
  TinySetup s;
  SyntheticSpec spec;
  spec.n_files = 8;
  spec.lines_per_file = 10;
  spec.defect_rate = 0.2;
  s.corpus = generate_synthetic(spec, seed);
  SplitFractions fr;
  fr.train = 0.5;
  fr.validation = 0.25;
  fr.test = 0.25;
  s.split = split_random(s.corpus, fr, seed + 1);
  s.vocab = train_bpe(s.corpus, 120);
  return s;
}

}  // namespace

TEST_CASE("training config validation") {
  auto expect_throw = [](auto mutate) {
    TrainConfig cfg;
    mutate(cfg);
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  };
  expect_throw([](TrainConfig& c) { c.learning_rate = 0.0; });
  expect_throw([](TrainConfig& c) { c.weight_decay = -1.0; });
  expect_throw([](TrainConfig& c) { c.beta1 = 1.0; });
  expect_throw([](TrainConfig& c) { c.beta2 = -0.1; });
  expect_throw([](TrainConfig& c) { c.adam_eps = 0.0; });
  expect_throw([](TrainConfig& c) { c.epochs = -1; });
  expect_throw([](TrainConfig& c) { c.batch_size = 0; });
  expect_throw([](TrainConfig& c) { c.warmup_fraction = 1.5; });
  expect_throw([](TrainConfig& c) { c.class_w0 = 0.0; });
  CHECK_NOTHROW(TrainConfig{}.validate());
}

TEST_CASE("learning rate warms up linearly then decays to zero") {
  TrainConfig cfg;
  cfg.learning_rate = 1.0;
  cfg.warmup_fraction = 0.1;
  CHECK(lr_at(0, 100, cfg) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(lr_at(4, 100, cfg) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(lr_at(9, 100, cfg) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lr_at(10, 100, cfg) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lr_at(55, 100, cfg) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(lr_at(99, 100, cfg) == doctest::Approx(1.0 / 90.0).epsilon(1e-12));

  cfg.warmup_fraction = 0.0;
  CHECK(lr_at(0, 100, cfg) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lr_at(50, 100, cfg) == doctest::Approx(0.5).epsilon(1e-12));

  cfg.warmup_fraction = 1.0;
  CHECK(lr_at(0, 10, cfg) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(lr_at(9, 10, cfg) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK(lr_at(5, 0, cfg) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("one adamw step reproduces the hand-computed update") {
  Model<double> m;
  m.cfg = small_model();
  m.params.add("w", {1});
  m.params.add("ln.gain", {1});
  ag::Tensor<double> w = m.params.at("w");
  ag::Tensor<double> gain = m.params.at("ln.gain");
  w.values() = {1.0};
  gain.values() = {1.0};
  w.grad() = {0.5};
  gain.grad() = {0.5};

  TrainConfig cfg;
  cfg.weight_decay = 0.01;
  OptState<double> opt = OptState<double>::zeros_like(m.params);
  adamw_step(m, opt, 0.1, cfg);

  // m=0.05, v=2.5e-4; bias correction gives mhat=0.5, vhat=0.25, so the
  // adam term is 0.5/(0.5+1e-8); "w" also decays, "ln.gain" does not
  const double adam = 0.5 / (0.5 + 1e-8);
  CHECK(w.values()[0] == doctest::Approx(1.0 - 0.1 * (adam + 0.01)).epsilon(1e-14));
  CHECK(gain.values()[0] == doctest::Approx(1.0 - 0.1 * adam).epsilon(1e-14));
  CHECK(opt.t == 1);
  CHECK(opt.m[0][0] == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(opt.v[0][0] == doctest::Approx(2.5e-4).epsilon(1e-14));

  // a second identical gradient keeps mhat/vhat at 0.5/0.25 exactly
  w.grad() = {0.5};
  gain.grad() = {0.5};
  const double before = w.values()[0];
  adamw_step(m, opt, 0.1, cfg);
  CHECK(opt.t == 2);
  CHECK(w.values()[0] ==
        doctest::Approx(before - 0.1 * (adam + 0.01 * before)).epsilon(1e-13));

  // parameters with no gradient only decay
  Model<double> m2;
  m2.cfg = m.cfg;
  ag::Tensor<double> w2 = m2.params.add("w", {1});
  w2.values() = {2.0};
  OptState<double> opt2 = OptState<double>::zeros_like(m2.params);
  adamw_step(m2, opt2, 0.1, cfg);
  CHECK(w2.values()[0] == doctest::Approx(2.0 - 0.1 * 0.01 * 2.0).epsilon(1e-14));
}

TEST_CASE("checkpoints survive a byte-exact save/load/save round trip") {
  const ModelConfig mcfg = small_model();
  TrainConfig tcfg;
  tcfg.seed = 9;
  auto m = Model<double>::init(mcfg, 9);

  Checkpoint<double> ckpt;
  ckpt.model_cfg = mcfg;
  ckpt.train_cfg = tcfg;
  ckpt.params = m.params.deep_copy();
  OptState<double> opt = OptState<double>::zeros_like(m.params);
  Rng rng(4);
  for (auto& mm : opt.m)
    for (auto& x : mm) x = normal01(rng);
  for (auto& vv : opt.v)
    for (auto& x : vv) x = uniform01(rng);
  ckpt.opt_m = opt.m;
  ckpt.opt_v = opt.v;
  ckpt.opt_t = 17;
  ckpt.global_step = 23;
  ckpt.vocab_mark = "0123456789abcdef";

  const std::string p1 = train_path("round1.ckpt");
  save_checkpoint(ckpt, p1);
  const auto loaded = load_checkpoint<double>(p1);
  CHECK(loaded.opt_t == 17);
  CHECK(loaded.global_step == 23);
  CHECK(loaded.vocab_mark == "0123456789abcdef");
  CHECK(loaded.model_cfg.d_model == mcfg.d_model);
  CHECK(loaded.model_cfg.window_lines == mcfg.window_lines);
  CHECK(loaded.train_cfg.seed == 9);
  REQUIRE(loaded.params.items.size() == ckpt.params.items.size());
  for (std::size_t i = 0; i < loaded.params.items.size(); ++i) {
    CHECK(loaded.params.items[i].first == ckpt.params.items[i].first);
    CHECK(loaded.params.items[i].second.shape() == ckpt.params.items[i].second.shape());
    CHECK(loaded.params.items[i].second.values() == ckpt.params.items[i].second.values());
  }
  CHECK(loaded.opt_m == ckpt.opt_m);
  CHECK(loaded.opt_v == ckpt.opt_v);

  const std::string p2 = train_path("round2.ckpt");
  save_checkpoint(loaded, p2);
  CHECK(read_file(p1) == read_file(p2));

  const auto meta = peek_checkpoint_meta(p1);
  CHECK(meta.at("dtype") == "f64");
  CHECK(meta.at("step") == 23);
  CHECK(meta.at("model").at("d_model") == mcfg.d_model);

  CHECK_THROWS_AS(load_checkpoint<float>(p1), ValidationError);

  auto rebuilt = model_from_checkpoint(loaded);
  Rng wrng(2);
  FileWindow w;
  w.path = "w";
  w.start_line = 1;
  w.window_lines = mcfg.window_lines;
  w.line_tokens = mcfg.line_tokens;
  w.token_ids.assign(static_cast<std::size_t>(mcfg.window_lines) * mcfg.line_tokens, 2);
  w.token_mask.assign(w.token_ids.size(), 1);
  w.line_mask.assign(static_cast<std::size_t>(mcfg.window_lines), 1);
  w.line_labels.assign(static_cast<std::size_t>(mcfg.window_lines), 0);
  const auto a = m.forward_window(nullptr, w, false, nullptr);
  const auto b = rebuilt.forward_window(nullptr, w, false, nullptr);
  CHECK(a.probs.values() == b.probs.values());
}

TEST_CASE("checkpoint loader rejects corrupt files") {
  const ModelConfig mcfg = small_model();
  auto m = Model<double>::init(mcfg, 3);
  Checkpoint<double> ckpt;
  ckpt.model_cfg = mcfg;
  ckpt.train_cfg = TrainConfig{};
  ckpt.params = m.params.deep_copy();
  OptState<double> opt = OptState<double>::zeros_like(m.params);
  ckpt.opt_m = opt.m;
  ckpt.opt_v = opt.v;
  const std::string good = checkpoint_to_bytes(ckpt);

  auto expect_throw = [](const std::string& name, const std::string& bytes) {
    const std::string p = train_path(name);
    atomic_write_file(p, bytes);
    CHECK_THROWS_AS(load_checkpoint<double>(p), ValidationError);
  };
  expect_throw("empty.ckpt", "");
  expect_throw("magic.ckpt", "not a checkpoint at all");
  expect_throw("trunc.ckpt", good.substr(0, good.size() - 5));
  expect_throw("trail.ckpt", good + "xx");
  {
    std::string bad = good;
    bad[10] = static_cast<char>(bad[10] + 1);  // inside the metadata block
    expect_throw("meta.ckpt", bad);
  }
  CHECK_THROWS_AS(load_checkpoint<double>("/does/not/exist.ckpt"), ValidationError);
  CHECK_THROWS_AS(peek_checkpoint_meta(train_path("magic.ckpt")), ValidationError);

  Checkpoint<double> renamed;
  renamed.model_cfg = mcfg;
  renamed.train_cfg = TrainConfig{};
  renamed.params = m.params.deep_copy();
  renamed.params.items[0].first = "not.a.real.parameter";
  renamed.opt_m = opt.m;
  renamed.opt_v = opt.v;
  CHECK_THROWS_AS(model_from_checkpoint(renamed), ValidationError);
}

TEST_CASE("training runs are reproducible and logged per epoch") {
  const TinySetup s = tiny_setup(60);
  const ModelConfig mcfg = small_model();
  TrainConfig tcfg;
  tcfg.epochs = 2;
  tcfg.batch_size = 4;
  tcfg.seed = 5;

  std::vector<EpochLog> seen;
  const auto r1 = fit<double>(s.corpus, s.split, s.vocab, mcfg, tcfg,
                              [&](const EpochLog& e) { seen.push_back(e); });
  REQUIRE(r1.log.size() == 2);
  REQUIRE(seen.size() == 2);
  for (std::size_t i = 0; i < seen.size(); ++i) {
    CHECK(r1.log[i].epoch == static_cast<int>(i) + 1);
    CHECK(seen[i].epoch == r1.log[i].epoch);
    CHECK(seen[i].train_loss == r1.log[i].train_loss);
    CHECK(seen[i].val_loss == r1.log[i].val_loss);
    CHECK(std::isfinite(r1.log[i].train_loss));
    CHECK(std::isfinite(r1.log[i].val_loss));
  }
  CHECK(r1.checkpoint.vocab_mark == vocab_fingerprint(s.vocab));

  const auto r2 = fit<double>(s.corpus, s.split, s.vocab, mcfg, tcfg);
  CHECK(checkpoint_to_bytes(r1.checkpoint) == checkpoint_to_bytes(r2.checkpoint));
  REQUIRE(r2.log.size() == r1.log.size());
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].train_loss == r2.log[i].train_loss);
    CHECK(r1.log[i].val_loss == r2.log[i].val_loss);
    CHECK(r1.log[i].val_auroc == r2.log[i].val_auroc);
  }

  TrainConfig other = tcfg;
  other.seed = 6;
  const auto r3 = fit<double>(s.corpus, s.split, s.vocab, mcfg, other);
  CHECK(checkpoint_to_bytes(r1.checkpoint) != checkpoint_to_bytes(r3.checkpoint));
}

TEST_CASE("zero-epoch training checkpoints the freshly initialized model") {
  const TinySetup s = tiny_setup(61);
  const ModelConfig mcfg = small_model();
  TrainConfig tcfg;
  tcfg.epochs = 0;
  tcfg.seed = 7;
  const auto r = fit<double>(s.corpus, s.split, s.vocab, mcfg, tcfg);
  CHECK(r.log.empty());
  CHECK(r.checkpoint.global_step == 0);
  CHECK(r.checkpoint.opt_t == 0);
  const auto fresh = Model<double>::init(mcfg, 7);
  for (std::size_t i = 0; i < fresh.params.items.size(); ++i)
    CHECK(r.checkpoint.params.items[i].second.values() ==
          fresh.params.items[i].second.values());
}

TEST_CASE("training loss falls on a learnable corpus") {
  const TinySetup s = tiny_setup(62);
  const ModelConfig mcfg = small_model();
  TrainConfig tcfg;
  tcfg.epochs = 6;
  tcfg.batch_size = 4;
  tcfg.learning_rate = 3e-3;
  tcfg.seed = 11;
  const auto r = fit<double>(s.corpus, s.split, s.vocab, mcfg, tcfg);
  REQUIRE(r.log.size() == 6);
  CHECK(r.log.back().train_loss < 0.9 * r.log.front().train_loss);
  CHECK(r.log.back().val_loss < r.log.front().val_loss);
}

TEST_CASE("training in single precision stays finite") {
  const TinySetup s = tiny_setup(63);
  const ModelConfig mcfg = small_model();
  TrainConfig tcfg;
  tcfg.epochs = 1;
  tcfg.batch_size = 4;
  tcfg.seed = 3;
  tcfg.precision = Precision::f32;
  const auto r = fit<float>(s.corpus, s.split, s.vocab, mcfg, tcfg);
  REQUIRE(r.log.size() == 1);
  CHECK(std::isfinite(r.log[0].train_loss));
  const std::string p = train_path("single.ckpt");
  save_checkpoint(r.checkpoint, p);
  CHECK(peek_checkpoint_meta(p).at("dtype") == "f32");
  CHECK_THROWS_AS(load_checkpoint<double>(p), ValidationError);
  CHECK_NOTHROW(load_checkpoint<float>(p));
}

TEST_CASE("validation without defects logs no auroc but still selects a model") {
  Corpus c;
  Rng filler(5);
  for (int i = 0; i < 6; ++i) {
    SourceFile f;
    f.path = "f" + std::to_string(i) + ".src";
    for (int l = 0; l < 6; ++l) {
      f.lines.push_back(l % 2 ? "alpha beta gamma" : "delta epsilon");
      f.labels.push_back(i < 4 && l == 0 ? 1 : 0);
    }
    c.files.push_back(f);
  }
  SplitAssignment split;
  split.train = {"f0.src", "f1.src", "f2.src", "f3.src"};
  split.validation = {"f4.src"};
  split.test = {"f5.src"};

  const Vocabulary vocab = train_bpe(c, 64);
  ModelConfig mcfg = small_model();
  mcfg.vocab_size = 64;
  TrainConfig tcfg;
  tcfg.epochs = 2;
  tcfg.batch_size = 2;
  const auto r = fit<double>(c, split, vocab, mcfg, tcfg);
  REQUIRE(r.log.size() == 2);
  CHECK_FALSE(r.log[0].val_auroc.has_value());
  CHECK_FALSE(r.log[1].val_auroc.has_value());
  CHECK(r.checkpoint.global_step > 0);
}

TEST_CASE("file objective training minimizes a per-window file loss") {
  const TinySetup s = tiny_setup(64);
  ModelConfig mcfg = small_model();
  mcfg.objective = Objective::file;
  TrainConfig tcfg;
  tcfg.epochs = 1;
  tcfg.batch_size = 4;
  const auto r = fit<double>(s.corpus, s.split, s.vocab, mcfg, tcfg);
  REQUIRE(r.log.size() == 1);
  CHECK(std::isfinite(r.log[0].train_loss));
}

TEST_CASE("prediction scores every line of every file once") {
  const TinySetup s = tiny_setup(65);
  ModelConfig mcfg = small_model();
  mcfg.window_lines = 4;
  mcfg.window_overlap = 1;  // 10-line files need several windows
  TrainConfig tcfg;
  tcfg.epochs = 1;
  tcfg.batch_size = 4;
  const auto r = fit<double>(s.corpus, s.split, s.vocab, mcfg, tcfg);
  const auto model = model_from_checkpoint(r.checkpoint);

  const auto scores = predict_corpus(model, s.vocab, s.corpus);
  REQUIRE(scores.size() == s.corpus.files.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    CHECK(scores[i].first == s.corpus.files[i].path);
    REQUIRE(scores[i].second.size() == s.corpus.files[i].lines.size());
    for (double v : scores[i].second) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  const auto again = predict_corpus(model, s.vocab, s.corpus);
  for (std::size_t i = 0; i < scores.size(); ++i)
    CHECK(scores[i].second == again[i].second);
}

TEST_CASE("training rejects a vocabulary larger than the embedding table") {
  const TinySetup s = tiny_setup(66);
  ModelConfig mcfg = small_model();
  mcfg.vocab_size = 8;  // far below the trained vocabulary
  CHECK_THROWS_AS(fit<double>(s.corpus, s.split, s.vocab, mcfg, TrainConfig{}),
                  ValidationError);
  auto model = Model<double>::init(small_model(), 2);
  model.cfg.vocab_size = 8;
  CHECK_THROWS_AS(predict_corpus(model, s.vocab, s.corpus), ValidationError);
}
