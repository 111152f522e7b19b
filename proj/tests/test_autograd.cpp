#include <cmath>
#include <vector>

#include "doctest.h"
#include "lw/gradcheck.hpp"
#include "lw/tensor.hpp"

using namespace lw;
using ag::Tensor;
using T64 = Tensor<double>;

TEST_CASE("matmul forward on a worked 2x2 example") {
  T64 a = T64::from({2, 2}, {1, 2, 3, 4});
  T64 b = T64::from({2, 2}, {5, 6, 7, 8});
  T64 c = ag::matmul<double>(nullptr, a, b);
  CHECK(c.values() == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("softmax of (0, ln 3) is (1/4, 3/4)") {
  T64 x = T64::from({1, 2}, {0.0, std::log(3.0)});
  T64 p = ag::softmax_lastdim<double>(nullptr, x);
  CHECK(p.values()[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(p.values()[1] == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("layer norm maps (1, 3) to (-1, 1)") {
  T64 x = T64::from({1, 2}, {1.0, 3.0});
  T64 gain = T64::from({2}, {1.0, 1.0});
  T64 bias = T64::from({2}, {0.0, 0.0});
  T64 y = ag::layer_norm<double>(nullptr, x, gain, bias, 1e-12);
  CHECK(y.values()[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(y.values()[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("gelu(1) equals Phi(1)") {
  T64 x = T64::scalar(1.0);
  T64 y = ag::gelu<double>(nullptr, x);
  CHECK(y.values()[0] == doctest::Approx(0.8413447460685429).epsilon(1e-15));
}

TEST_CASE("cross entropy on a worked two-row example") {
  T64 probs = T64::from({2, 2}, {0.9, 0.1, 0.5, 0.5});
  const std::vector<std::uint8_t> labels = {0, 1};
  const std::vector<std::uint8_t> mask = {1, 1};
  T64 loss = ag::masked_cross_entropy<double>(nullptr, probs, labels, mask,
                                              {1.0, 1.0});
  CHECK(loss.item() ==
        doctest::Approx((-std::log(0.9) - std::log(0.5)) / 2.0).epsilon(1e-14));

  // class weights scale each row's term
  T64 weighted = ag::masked_cross_entropy<double>(nullptr, probs, labels, mask,
                                                  {2.0, 3.0});
  CHECK(weighted.item() ==
        doctest::Approx((-2.0 * std::log(0.9) - 3.0 * std::log(0.5)) / 2.0)
            .epsilon(1e-14));

  // masked rows do not contribute
  T64 only_first = ag::masked_cross_entropy<double>(nullptr, probs, labels,
                                                    {1, 0}, {1.0, 1.0});
  CHECK(only_first.item() == doctest::Approx(-std::log(0.9)).epsilon(1e-14));

  CHECK_THROWS_AS(ag::masked_cross_entropy<double>(nullptr, probs, labels, {0, 0},
                                                   {1.0, 1.0}),
                  ValidationError);
}

TEST_CASE("product rule by hand: d sum(a*b) / da = b") {
  T64 a = T64::from({3}, {1.0, -2.0, 0.5}, true);
  T64 b = T64::from({3}, {4.0, 5.0, 6.0}, true);
  ag::Tape<double> tape;
  T64 loss = ag::sum_all(&tape, ag::mul(&tape, a, b));
  tape.backward(loss);
  CHECK(a.grad() == b.values());
  CHECK(b.grad() == a.values());
}

TEST_CASE("broadcast add accumulates its bias gradient over rows") {
  T64 a = T64::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  T64 b = T64::from({3}, {10, 20, 30}, true);
  ag::Tape<double> tape;
  T64 out = ag::add_broadcast(&tape, a, b);
  CHECK(out.values() == std::vector<double>{11, 22, 33, 14, 25, 36});
  T64 loss = ag::sum_all(&tape, out);
  tape.backward(loss);
  CHECK(b.grad() == std::vector<double>{2, 2, 2});
  CHECK(a.grad() == std::vector<double>(6, 1.0));
}

TEST_CASE("embedding lookup scatters gradients to the used rows") {
  T64 table = T64::from({4, 2}, {0, 1, 2, 3, 4, 5, 6, 7}, true);
  const std::vector<std::int32_t> ids = {0, 2, 2};
  ag::Tape<double> tape;
  T64 out = ag::embedding_lookup(&tape, table, ids, {3});
  CHECK(out.shape() == std::vector<int>{3, 2});
  CHECK(out.values() == std::vector<double>{0, 1, 4, 5, 4, 5});
  tape.backward(ag::sum_all(&tape, out));
  CHECK(table.grad() == std::vector<double>{1, 1, 0, 0, 2, 2, 0, 0});

  CHECK_THROWS_AS(ag::embedding_lookup<double>(nullptr, table, {4}, {1}),
                  ValidationError);
  CHECK_THROWS_AS(ag::embedding_lookup<double>(nullptr, table, {-1}, {1}),
                  ValidationError);
}

TEST_CASE("mask_rows zeroes rows and blocks their gradients") {
  T64 x = T64::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  ag::Tape<double> tape;
  T64 y = ag::mask_rows(&tape, x, {1, 0, 1});
  CHECK(y.values() == std::vector<double>{1, 2, 0, 0, 5, 6});
  tape.backward(ag::sum_all(&tape, y));
  CHECK(x.grad() == std::vector<double>{1, 1, 0, 0, 1, 1});
}

TEST_CASE("masked mean averages the unmasked rows of each group") {
  // (2 groups, 2 rows, 2 cols); second group fully masked
  T64 x = T64::from({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
  ag::Tape<double> tape;
  T64 y = ag::masked_mean(&tape, x, {1, 1, 0, 0});
  CHECK(y.shape() == std::vector<int>{2, 2});
  CHECK(y.values() == std::vector<double>{2, 3, 0, 0});
  tape.backward(ag::sum_all(&tape, y));
  CHECK(x.grad() == std::vector<double>{0.5, 0.5, 0.5, 0.5, 0, 0, 0, 0});
}

TEST_CASE("dropout keeps everything in inference or at probability zero") {
  T64 x = T64::from({4}, {1, 2, 3, 4});
  Rng rng(1);
  T64 same = ag::dropout<double>(nullptr, x, 0.5, false, &rng);
  CHECK(same.values() == x.values());
  T64 same2 = ag::dropout<double>(nullptr, x, 0.0, true, &rng);
  CHECK(same2.values() == x.values());
  CHECK_THROWS_AS(ag::dropout<double>(nullptr, x, 0.5, true, nullptr),
                  std::exception);
}

TEST_CASE("dropout scales survivors and routes gradients through them") {
  T64 x = T64::from({64}, std::vector<double>(64, 2.0), true);
  Rng rng(9);
  ag::Tape<double> tape;
  T64 y = ag::dropout(&tape, x, 0.25, true, &rng);
  int kept = 0;
  for (double v : y.values()) {
    const bool is_kept = v != 0.0;
    if (is_kept) CHECK(v == doctest::Approx(2.0 / 0.75).epsilon(1e-12));
    kept += is_kept ? 1 : 0;
  }
  CHECK(kept > 32);  // ~48 expected
  CHECK(kept < 64);
  tape.backward(ag::sum_all(&tape, y));
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double expect = y.values()[i] == 0.0 ? 0.0 : 1.0 / 0.75;
    CHECK(x.grad()[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("uniform attention averages the value rows") {
  // zero q and k make every unmasked key equally likely
  const int B = 1, S = 3, D = 2;
  T64 q = T64::zeros({B, S, D});
  T64 k = T64::zeros({B, S, D});
  T64 v = T64::from({B, S, D}, {1, 2, 3, 4, 100, 200});
  ag::AttentionProbs<double> probs;
  T64 out = ag::multihead_attention<double>(nullptr, q, k, v, {1, 1, 0}, 1, &probs);
  // masked third key contributes exactly nothing
  CHECK(out.values()[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(out.values()[1] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(probs.p[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(probs.p[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(probs.p[2] == 0.0);
}

TEST_CASE("tape misuse is rejected") {
  T64 a = T64::from({2}, {1, 2}, true);
  ag::Tape<double> tape;
  T64 y = ag::scale(&tape, a, 2.0);
  CHECK_THROWS_AS(tape.backward(y), ValidationError);  // not a scalar
  ag::Tape<double> other;
  T64 z = ag::sum_all(&other, a);
  CHECK_THROWS_AS(tape.backward(z), ValidationError);  // wrong tape
}

// ---- finite-difference checks ----

namespace {

T64 rand_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = true) {
  T64 t = T64::zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = uniform01(rng) * 2.0 - 1.0;
  return t;
}

}  // namespace

TEST_CASE("gradients of the basic ops agree with finite differences") {
  Rng rng(17);
  T64 a = rand_tensor({3, 4}, rng);
  T64 b = rand_tensor({3, 4}, rng);
  T64 c = rand_tensor({4, 2}, rng);
  T64 bias = rand_tensor({2}, rng);

  auto f = [&](ag::Tape<double>* tape) {
    T64 s = ag::add(tape, a, b);
    s = ag::sub(tape, s, ag::scale(tape, b, 0.5));
    s = ag::mul(tape, s, a);
    s = ag::matmul(tape, s, c);
    s = ag::add_broadcast(tape, s, bias);
    s = ag::tanh(tape, s);
    return ag::sum_all(tape, s);
  };
  CHECK(ag::finite_diff_check<double>(f, {a, b, c, bias}, 1e-5) < 1e-7);
}

TEST_CASE("gradients of softmax, layer norm, and gelu agree with finite differences") {
  Rng rng(23);
  T64 x = rand_tensor({4, 5}, rng);
  T64 gain = rand_tensor({5}, rng);
  T64 bias = rand_tensor({5}, rng);
  T64 w = rand_tensor({5, 3}, rng);
  // fixed probe spreads the output so the softmax jacobian is exercised
  // off-axis (the sum of a softmax row has zero gradient)
  T64 probe = rand_tensor({4, 3}, rng, false);

  auto f = [&](ag::Tape<double>* tape) {
    T64 h = ag::layer_norm(tape, x, gain, bias, 1e-5);
    h = ag::gelu(tape, h);
    h = ag::matmul(tape, h, w);
    h = ag::softmax_lastdim(tape, h);
    h = ag::mul(tape, h, probe);
    return ag::sum_all(tape, h);
  };
  CHECK(ag::finite_diff_check<double>(f, {x, gain, bias, w}, 1e-5) < 1e-7);
}

TEST_CASE("gradients of reshape, masking, and pooling ops agree with finite differences") {
  Rng rng(31);
  T64 x = rand_tensor({2, 3, 4}, rng);
  const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 1, 0};

  auto f = [&](ag::Tape<double>* tape) {
    T64 kept = ag::mask_rows(tape, x, mask);
    T64 flat = ag::reshape(tape, kept, {2, 12});
    T64 mean = ag::masked_mean(tape, x, mask);
    T64 packed = ag::reshape(tape, mean, {2, 4});
    T64 joined = ag::matmul(tape, packed, ag::reshape(tape, flat, {4, 6}));
    return ag::sum_all(tape, ag::tanh(tape, joined));
  };
  CHECK(ag::finite_diff_check<double>(f, {x}, 1e-5) < 1e-7);
}

TEST_CASE("gradients of embeddings and cross entropy agree with finite differences") {
  Rng rng(37);
  T64 table = rand_tensor({6, 4}, rng);
  T64 w = rand_tensor({4, 2}, rng);
  const std::vector<std::int32_t> ids = {1, 4, 4, 0, 5, 2};
  const std::vector<std::uint8_t> labels = {1, 0, 1, 0, 1, 0};
  const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1, 1};

  auto f = [&](ag::Tape<double>* tape) {
    T64 e = ag::embedding_lookup(tape, table, ids, {6});
    T64 logits = ag::matmul(tape, e, w);
    T64 probs = ag::softmax_lastdim(tape, logits);
    return ag::masked_cross_entropy(tape, probs, labels, mask, {1.0, 2.5});
  };
  CHECK(ag::finite_diff_check<double>(f, {table, w}, 1e-5) < 1e-6);
}

TEST_CASE("gradients of multi-head attention agree with finite differences") {
  Rng rng(41);
  const int B = 2, S = 4, D = 6;
  T64 q = rand_tensor({B, S, D}, rng);
  T64 k = rand_tensor({B, S, D}, rng);
  T64 v = rand_tensor({B, S, D}, rng);
  const std::vector<std::uint8_t> key_mask = {1, 1, 1, 0, 1, 1, 0, 0};
  T64 probe = rand_tensor({B, S, D}, rng, false);

  for (int heads : {1, 2, 3}) {
    auto f = [&, heads](ag::Tape<double>* tape) {
      T64 out = ag::multihead_attention(tape, q, k, v, key_mask, heads);
      out = ag::mul(tape, out, probe);
      // rows whose keys are partly masked still carry gradient; fully
      // padded query rows are dropped the way the model drops them
      return ag::sum_all(tape, ag::mask_rows(tape, out, key_mask));
    };
    CHECK(ag::finite_diff_check<double>(f, {q, k, v}, 1e-5) < 1e-6);
  }
}
