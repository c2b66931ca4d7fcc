#include <cmath>
#include <doctest.h>

#include "convqr/errors.hpp"
#include "convqr/toy_lm.hpp"
#include "convqr/util.hpp"

using namespace convqr;

namespace {

ToyLMParams random_params(int buckets, int vocab, Rng& rng, double scale = 1.0) {
  auto params = ToyLMParams::zeros(buckets, vocab);
  for (auto& x : params.logits) x = (rng.unit() * 2.0 - 1.0) * scale;
  return params;
}

std::vector<int> random_target(int vocab, Rng& rng, int max_len = 6) {
  const int len = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len)));
  std::vector<int> target;
  for (int i = 0; i < len; ++i) {
    target.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab))));
  }
  return target;
}

std::vector<SftExample> random_sft_data(int vocab, Rng& rng, int n) {
  std::vector<SftExample> data;
  for (int i = 0; i < n; ++i) {
    data.push_back({"context " + std::to_string(rng.below(10)), random_target(vocab, rng)});
  }
  return data;
}

std::vector<DpoExample> random_dpo_data(int vocab, Rng& rng, int n) {
  std::vector<DpoExample> data;
  for (int i = 0; i < n; ++i) {
    DpoExample pair;
    pair.context = "context " + std::to_string(rng.below(10));
    pair.chosen = random_target(vocab, rng);
    pair.rejected = random_target(vocab, rng);
    data.push_back(std::move(pair));
  }
  return data;
}

}  // namespace

TEST_CASE("vocab builds dense ids with specials first") {
  auto vocab = ToyVocab::build({"beta alpha", "alpha gamma"});
  CHECK(vocab.size() == 6);  // 3 specials + 3 words
  CHECK(vocab.token(0) == "<bos>");
  CHECK(vocab.token(1) == "<eos>");
  CHECK(vocab.token(2) == "<unk>");
  auto ids = vocab.encode("alpha unknownword beta");
  REQUIRE(ids.size() == 3);
  CHECK(ids[1] == vocab.unk());
  CHECK(vocab.token(ids[0]) == "alpha");
}

TEST_CASE("uniform logits give exact uniform sequence log probs") {
  auto params = ToyLMParams::zeros(8, 4);
  // 2 target tokens + the appended EOS = 3 uniform steps
  const double lp = sequence_log_prob(params, "any context", {3, 2});
  CHECK(lp == doctest::Approx(-4.1588830833596715).epsilon(1e-14));
  CHECK(sequence_log_prob(params, "any context", {3, 2}) == lp);  // determinism
  CHECK_THROWS_AS(sequence_log_prob(params, "ctx", {}), DataError);
  CHECK_THROWS_AS(sequence_log_prob(params, "ctx", {9}), DataError);
}

TEST_CASE("sequence log prob matches a naive per-step recomputation") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int vocab = 3 + static_cast<int>(rng.below(6));
    auto params = random_params(4, vocab, rng);
    auto target = random_target(vocab, rng);
    const std::string context = "ctx " + std::to_string(trial);

    // step-by-step oracle
    const int c = context_bucket(context, params.buckets);
    double expected = 0.0;
    int prev = 0;
    std::vector<int> seq = target;
    seq.push_back(1);
    for (int v : seq) {
      double denom = 0.0;
      for (int u = 0; u < vocab; ++u) denom += std::exp(params.at(c, prev, u));
      expected += std::log(std::exp(params.at(c, prev, v)) / denom);
      prev = v;
    }
    CHECK(sequence_log_prob(params, context, target) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("context buckets separate different contexts") {
  auto params = ToyLMParams::zeros(64, 4);
  params.at(context_bucket("ctx a", 64), 0, 3) = 2.0;
  const double a = sequence_log_prob(params, "ctx a", {3});
  const double b = sequence_log_prob(params, "ctx b", {3});
  CHECK(a != b);  // fnv1a("ctx a") % 64 != fnv1a("ctx b") % 64 for these strings
}

TEST_CASE("sft loss on uniform logits and saturated logits") {
  auto params = ToyLMParams::zeros(2, 4);
  std::vector<SftExample> data = {{"c", {3}}};
  // one token + EOS under uniform distributions
  CHECK(sft_loss(params, data) == doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-14));

  // heavily peaked logits on the right transitions: loss and gradient ~ 0
  auto peaked = ToyLMParams::zeros(2, 4);
  const int c = context_bucket("c", 2);
  peaked.at(c, 0, 3) = 50.0;  // bos -> 3
  peaked.at(c, 3, 1) = 50.0;  // 3 -> eos
  auto lg = sft_loss_grad(peaked, data);
  CHECK(lg.loss < 1e-12);
  double grad_norm = 0.0;
  for (double g : lg.grad) grad_norm += g * g;
  CHECK(std::sqrt(grad_norm) < 1e-10);
}

TEST_CASE("sft gradient matches central finite differences") {
  Rng rng(32);
  for (int trial = 0; trial < 10; ++trial) {
    const int vocab = 4 + static_cast<int>(rng.below(4));
    auto params = random_params(3, vocab, rng);
    auto data = random_sft_data(vocab, rng, 4);
    const double err = grad_check_sft(params, data, 1e-5, 200, rng.next());
    CHECK(err < 1e-4);
  }
}

TEST_CASE("sft loss is invariant to shifting a logits row by a constant") {
  Rng rng(33);
  auto params = random_params(4, 5, rng);
  auto data = random_sft_data(5, rng, 5);
  const double before = sft_loss(params, data);
  auto shifted = params;
  for (int v = 0; v < shifted.vocab; ++v) shifted.at(2, 3, v) += 7.25;
  CHECK(sft_loss(shifted, data) == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one after updates") {
  Rng rng(34);
  auto params = random_params(2, 5, rng);
  auto data = random_sft_data(5, rng, 4);
  TrainConfig config;
  config.learning_rate = 0.05;
  config.steps = 25;
  auto result = train_sft(params, data, config);
  for (int c = 0; c < result.params.buckets; ++c) {
    for (int u = 0; u < result.params.vocab; ++u) {
      double max = -1e300;
      for (int v = 0; v < result.params.vocab; ++v) max = std::max(max, result.params.at(c, u, v));
      double total = 0.0;
      for (int v = 0; v < result.params.vocab; ++v) {
        total += std::exp(result.params.at(c, u, v) - max);
      }
      double sum = 0.0;
      for (int v = 0; v < result.params.vocab; ++v) {
        sum += std::exp(result.params.at(c, u, v) - max) / total;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("dpo loss at the reference point is exactly ln 2") {
  Rng rng(35);
  for (double beta : {0.05, 0.1, 1.0, 7.5}) {
    auto params = random_params(3, 6, rng);
    auto pairs = random_dpo_data(6, rng, 5);
    const double loss = dpo_loss(params, params, pairs, beta);
    CHECK(std::abs(loss - 0.6931471805599453) < 1e-12);
  }
}

TEST_CASE("dpo closed-form value at a fixed margin") {
  // engineered margin: chosen transition logit raised so that
  // r_w - r_l = 0.1 exactly under beta * delta-log-likelihood
  // Instead of reverse-engineering logits, check the scalar form the
  // loss reduces to: -log sigmoid(0.1) = ln(1 + e^{-0.1}).
  const double expected = std::log(1.0 + std::exp(-0.1));
  CHECK(expected == doctest::Approx(0.6443966600735709).epsilon(1e-14));

  // and the implementation reproduces it through the full path:
  // single-token vocab transitions with a hand-set margin.
  auto ref = ToyLMParams::zeros(1, 3);  // bos, eos, one word is impossible; use unk as the word
  auto params = ref;
  // chosen = [2], rejected uses the same token so margins come only from
  // the first step row; shift the chosen step by delta.
  // log pi(2|bos) - log pi_ref(2|bos) changes when row (0, bos) moves.
  // Use beta = 0.1 and solve: margin = beta * (dlp_w - dlp_l) with
  // dlp_l = 0 by keeping the rejected sequence on an untouched bucket —
  // impossible with one bucket, so instead verify numerically:
  std::vector<DpoExample> pairs = {{"ctx", {2}, {2, 2}}};
  params.at(0, 0, 2) += 0.35;
  const double margin = dpo_margins(params, ref, pairs, 0.1)[0];
  const double loss = dpo_loss(params, ref, pairs, 0.1);
  CHECK(loss == doctest::Approx(std::log(1.0 + std::exp(-margin))).epsilon(1e-12));
}

TEST_CASE("dpo gradient matches central finite differences") {
  Rng rng(36);
  for (int trial = 0; trial < 10; ++trial) {
    const int vocab = 4 + static_cast<int>(rng.below(4));
    auto params = random_params(3, vocab, rng);
    auto ref = random_params(3, vocab, rng);
    auto pairs = random_dpo_data(vocab, rng, 4);
    const double err = grad_check_dpo(params, ref, pairs, 0.1, 1e-5, 200, rng.next());
    CHECK(err < 1e-4);
  }
}

TEST_CASE("quadratic sanity gradient check is near exact") {
  Rng rng(37);
  auto params = random_params(2, 4, rng);
  CHECK(grad_check_quadratic(params, 1e-5, 200, 99) < 1e-8);
}

TEST_CASE("sft training is monotone at a small learning rate") {
  Rng rng(38);
  auto params = random_params(4, 6, rng, 0.5);
  auto data = random_sft_data(6, rng, 8);
  TrainConfig config;
  config.learning_rate = 0.01;
  config.steps = 60;
  auto result = train_sft(params, data, config);
  REQUIRE(result.loss_curve.size() == 61);
  for (std::size_t i = 1; i < result.loss_curve.size(); ++i) {
    CHECK(result.loss_curve[i] <= result.loss_curve[i - 1]);
  }
}

TEST_CASE("zero training steps leave parameters unchanged") {
  Rng rng(39);
  auto params = random_params(2, 4, rng);
  auto data = random_sft_data(4, rng, 3);
  TrainConfig config;
  config.steps = 0;
  auto result = train_sft(params, data, config);
  CHECK(result.params.logits == params.logits);
  REQUIRE(result.loss_curve.size() == 1);

  auto pairs = random_dpo_data(4, rng, 3);
  auto dpo_result = train_dpo(params, pairs, config);
  CHECK(dpo_result.params.logits == params.logits);
  REQUIRE(dpo_result.margin_curve.size() == 1);
  CHECK(dpo_result.margin_curve[0] == 0.0);  // at the reference point
}

TEST_CASE("dpo training grows the mean margin and orders likelihood ratios") {
  Rng rng(40);
  // consistent pairs: distinct chosen/rejected sequences
  const int vocab = 8;
  auto start = random_params(4, vocab, rng, 0.3);
  std::vector<DpoExample> pairs;
  for (int i = 0; i < 12; ++i) {
    DpoExample pair;
    pair.context = "ctx " + std::to_string(i % 3);
    pair.chosen = random_target(vocab, rng);
    pair.rejected = random_target(vocab, rng);
    if (pair.chosen == pair.rejected) pair.rejected.push_back(3);
    pairs.push_back(pair);
  }
  TrainConfig config;
  config.beta = 0.1;
  config.learning_rate = 1.0;
  config.steps = 150;
  auto result = train_dpo(start, pairs, config);
  REQUIRE(result.margin_curve.size() == 151);
  CHECK(result.margin_curve.front() == 0.0);
  for (std::size_t i = 1; i < result.margin_curve.size(); ++i) {
    CHECK(result.margin_curve[i] > result.margin_curve[i - 1]);
  }
  // implied-reward ordering: pi/pi_ref higher for chosen on >= 90% of pairs
  auto margins = dpo_margins(result.params, start, pairs, config.beta);
  int positive = 0;
  for (double m : margins) {
    if (m > 0.0) ++positive;
  }
  CHECK(static_cast<double>(positive) >= 0.9 * static_cast<double>(pairs.size()));
}

TEST_CASE("training aborts on non-finite loss naming the step") {
  auto params = ToyLMParams::zeros(1, 3);
  params.logits[0] = std::numeric_limits<double>::quiet_NaN();
  std::vector<SftExample> data = {{"c", {2}}};
  CHECK_THROWS_WITH_AS(train_sft(params, data, TrainConfig{}), doctest::Contains("step 0"), Error);
}
