#include "convqr/toy_lm.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "convqr/errors.hpp"
#include "convqr/util.hpp"

namespace convqr {

ToyVocab ToyVocab::build(const std::vector<std::string>& texts) {
  ToyVocab vocab;
  vocab.tokens_ = {"<bos>", "<eos>", "<unk>"};
  std::set<std::string> words;
  for (const auto& text : texts) {
    for (auto& word : split_ws(text)) words.insert(std::move(word));
  }
  for (const auto& word : words) vocab.tokens_.push_back(word);
  for (std::size_t i = 0; i < vocab.tokens_.size(); ++i) {
    vocab.ids_[vocab.tokens_[i]] = static_cast<int>(i);
  }
  return vocab;
}

std::vector<int> ToyVocab::encode(const std::string& text) const {
  std::vector<int> out;
  for (const auto& word : split_ws(text)) {
    auto it = ids_.find(word);
    out.push_back(it == ids_.end() ? unk() : it->second);
  }
  return out;
}

ToyLMParams ToyLMParams::zeros(int buckets, int vocab) {
  if (buckets < 1 || vocab < 1) throw DataError("toy LM needs buckets >= 1 and vocab >= 1");
  ToyLMParams params;
  params.buckets = buckets;
  params.vocab = vocab;
  params.logits.assign(static_cast<std::size_t>(buckets) * static_cast<std::size_t>(vocab) *
                           static_cast<std::size_t>(vocab),
                       0.0);
  return params;
}

int context_bucket(const std::string& context, int buckets) {
  return static_cast<int>(fnv1a64(context) % static_cast<std::uint64_t>(buckets));
}

namespace {

double log_sum_exp(const double* row, int n) {
  double max = row[0];
  for (int i = 1; i < n; ++i) max = std::max(max, row[i]);
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += std::exp(row[i] - max);
  return max + std::log(total);
}

// log sigmoid(x), stable at both tails; exactly -ln 2 at x = 0.
double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_tokens(const ToyLMParams& params, const std::vector<int>& tokens) {
  for (int t : tokens) {
    if (t < 0 || t >= params.vocab) throw DataError("token id out of vocabulary range");
  }
}

// Walks the (bucket, prev, next) transitions of one sequence, calling
// visit(row_base, next) per step. Row base points at params row start.
template <typename Visit>
void walk_sequence(const ToyLMParams& params, const std::string& context,
                   const std::vector<int>& target, Visit&& visit) {
  const int c = context_bucket(context, params.buckets);
  int prev = 0;  // <bos>
  for (std::size_t t = 0; t <= target.size(); ++t) {
    const int next = t < target.size() ? target[t] : 1;  // <eos>
    visit(params.flat(c, prev, 0), next);
    prev = next;
  }
}

// Memoizes log-sum-exp and softmax rows per (bucket, prev) row for one
// parameter snapshot. Sequences revisit the same few rows constantly, so
// this turns the exp cost from per-token to per-unique-row.
class SoftmaxCache {
 public:
  explicit SoftmaxCache(const ToyLMParams& params) : params_(params) {}

  std::size_t slot(std::size_t row_base) {
    auto [it, inserted] = slots_.try_emplace(row_base, bases_.size());
    if (inserted) {
      bases_.push_back(row_base);
      const double* row = params_.logits.data() + row_base;
      const double lse = log_sum_exp(row, params_.vocab);
      lses_.push_back(lse);
      const std::size_t offset = probs_.size();
      probs_.resize(offset + static_cast<std::size_t>(params_.vocab));
      for (int v = 0; v < params_.vocab; ++v) {
        probs_[offset + static_cast<std::size_t>(v)] = std::exp(row[v] - lse);
      }
    }
    return it->second;
  }

  double lse(std::size_t s) const { return lses_[s]; }
  std::size_t row_base(std::size_t s) const { return bases_[s]; }
  const double* probs(std::size_t s) const {
    return probs_.data() + s * static_cast<std::size_t>(params_.vocab);
  }
  std::size_t size() const { return bases_.size(); }

 private:
  const ToyLMParams& params_;
  std::unordered_map<std::size_t, std::size_t> slots_;
  std::vector<std::size_t> bases_;
  std::vector<double> lses_;
  std::vector<double> probs_;
};

double sequence_log_prob_cached(const ToyLMParams& params, SoftmaxCache& cache,
                                const std::string& context, const std::vector<int>& target) {
  double total = 0.0;
  walk_sequence(params, context, target, [&](std::size_t row_base, int next) {
    total += params.logits[row_base + static_cast<std::size_t>(next)] -
             cache.lse(cache.slot(row_base));
  });
  return total;
}

double sequence_log_prob_impl(const ToyLMParams& params, const std::string& context,
                              const std::vector<int>& target) {
  double total = 0.0;
  walk_sequence(params, context, target, [&](std::size_t row_base, int next) {
    const double* row = params.logits.data() + row_base;
    total += row[next] - log_sum_exp(row, params.vocab);
  });
  return total;
}

// Two-phase gradient accumulator: one-hot contributions land directly
// during the walk; softmax contributions are folded into per-row
// coefficient sums and applied in a single pass at the end.
class GradAccumulator {
 public:
  GradAccumulator(const ToyLMParams& params, SoftmaxCache& cache, std::vector<double>& grad)
      : params_(params), cache_(cache), grad_(grad) {}

  void add_sequence(const std::string& context, const std::vector<int>& target,
                    double coefficient) {
    walk_sequence(params_, context, target, [&](std::size_t row_base, int next) {
      const std::size_t s = cache_.slot(row_base);
      if (s >= slot_coef_.size()) slot_coef_.resize(s + 1, 0.0);
      slot_coef_[s] += coefficient;
      grad_[row_base + static_cast<std::size_t>(next)] += coefficient;
    });
  }

  void flush() {
    for (std::size_t s = 0; s < slot_coef_.size(); ++s) {
      if (slot_coef_[s] == 0.0) continue;
      const std::size_t base = cache_.row_base(s);
      const double* probs = cache_.probs(s);
      for (int v = 0; v < params_.vocab; ++v) {
        grad_[base + static_cast<std::size_t>(v)] -= slot_coef_[s] * probs[v];
      }
    }
  }

 private:
  const ToyLMParams& params_;
  SoftmaxCache& cache_;
  std::vector<double>& grad_;
  std::vector<double> slot_coef_;
};

}  // namespace

double sequence_log_prob(const ToyLMParams& params, const std::string& context,
                         const std::vector<int>& target) {
  if (target.empty()) throw DataError("sequence_log_prob requires a non-empty target");
  check_tokens(params, target);
  return sequence_log_prob_impl(params, context, target);
}

double sft_loss(const ToyLMParams& params, const std::vector<SftExample>& data) {
  if (data.empty()) throw DataError("sft loss requires a non-empty dataset");
  SoftmaxCache cache(params);
  double total = 0.0;
  for (const auto& example : data) {
    if (example.target.empty()) throw DataError("sft example has empty target");
    check_tokens(params, example.target);
    total += sequence_log_prob_cached(params, cache, example.context, example.target);
  }
  return -total / static_cast<double>(data.size());
}

LossGrad sft_loss_grad(const ToyLMParams& params, const std::vector<SftExample>& data) {
  if (data.empty()) throw DataError("sft loss requires a non-empty dataset");
  LossGrad out;
  out.grad.assign(params.logits.size(), 0.0);
  SoftmaxCache cache(params);
  GradAccumulator accumulator(params, cache, out.grad);
  const double scale = -1.0 / static_cast<double>(data.size());
  double total = 0.0;
  for (const auto& example : data) {
    check_tokens(params, example.target);
    if (example.target.empty()) throw DataError("sft example has empty target");
    total += sequence_log_prob_cached(params, cache, example.context, example.target);
    accumulator.add_sequence(example.context, example.target, scale);
  }
  accumulator.flush();
  out.loss = -total / static_cast<double>(data.size());
  return out;
}

namespace {

void check_pairs(const ToyLMParams& params, const ToyLMParams& ref,
                 const std::vector<DpoExample>& pairs, double beta) {
  if (pairs.empty()) throw DataError("dpo loss requires a non-empty pair set");
  if (beta <= 0.0) throw DataError("dpo beta must be > 0");
  if (ref.buckets != params.buckets || ref.vocab != params.vocab) {
    throw DataError("dpo reference parameters have a different shape");
  }
  for (const auto& pair : pairs) {
    if (pair.chosen.empty() || pair.rejected.empty()) {
      throw DataError("dpo pair has an empty sequence");
    }
    check_tokens(params, pair.chosen);
    check_tokens(params, pair.rejected);
  }
}

// ref_lp_w - ref_lp_l per pair; constant while the reference is frozen,
// so training loops and finite differencing compute it once.
std::vector<double> reference_deltas(const ToyLMParams& ref, const std::vector<DpoExample>& pairs) {
  SoftmaxCache cache(ref);
  std::vector<double> deltas;
  deltas.reserve(pairs.size());
  for (const auto& pair : pairs) {
    deltas.push_back(sequence_log_prob_cached(ref, cache, pair.context, pair.chosen) -
                     sequence_log_prob_cached(ref, cache, pair.context, pair.rejected));
  }
  return deltas;
}

std::vector<double> margins_cached(const ToyLMParams& params, const std::vector<DpoExample>& pairs,
                                   double beta, const std::vector<double>& ref_deltas) {
  SoftmaxCache cache(params);
  std::vector<double> margins;
  margins.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double delta = sequence_log_prob_cached(params, cache, pairs[i].context,
                                                  pairs[i].chosen) -
                         sequence_log_prob_cached(params, cache, pairs[i].context,
                                                  pairs[i].rejected);
    margins.push_back(beta * (delta - ref_deltas[i]));
  }
  return margins;
}

double dpo_loss_cached(const ToyLMParams& params, const std::vector<DpoExample>& pairs,
                       double beta, const std::vector<double>& ref_deltas) {
  double total = 0.0;
  for (double margin : margins_cached(params, pairs, beta, ref_deltas)) {
    total += -log_sigmoid(margin);
  }
  return total / static_cast<double>(pairs.size());
}

LossGrad dpo_loss_grad_cached(const ToyLMParams& params, const std::vector<DpoExample>& pairs,
                              double beta, const std::vector<double>& ref_deltas,
                              std::vector<double>* margins_out) {
  LossGrad out;
  out.grad.assign(params.logits.size(), 0.0);
  SoftmaxCache cache(params);
  GradAccumulator accumulator(params, cache, out.grad);
  auto margins = margins_cached(params, pairs, beta, ref_deltas);
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    total += -log_sigmoid(margins[i]);
    // d(-log sigmoid(m))/dm = sigmoid(m) - 1
    const double coefficient = (sigmoid(margins[i]) - 1.0) * beta * inv_n;
    accumulator.add_sequence(pairs[i].context, pairs[i].chosen, coefficient);
    accumulator.add_sequence(pairs[i].context, pairs[i].rejected, -coefficient);
  }
  accumulator.flush();
  out.loss = total * inv_n;
  if (margins_out) *margins_out = std::move(margins);
  return out;
}

}  // namespace

double dpo_loss(const ToyLMParams& params, const ToyLMParams& ref,
                const std::vector<DpoExample>& pairs, double beta) {
  check_pairs(params, ref, pairs, beta);
  return dpo_loss_cached(params, pairs, beta, reference_deltas(ref, pairs));
}

LossGrad dpo_loss_grad(const ToyLMParams& params, const ToyLMParams& ref,
                       const std::vector<DpoExample>& pairs, double beta) {
  check_pairs(params, ref, pairs, beta);
  return dpo_loss_grad_cached(params, pairs, beta, reference_deltas(ref, pairs), nullptr);
}

std::vector<double> dpo_margins(const ToyLMParams& params, const ToyLMParams& ref,
                                const std::vector<DpoExample>& pairs, double beta) {
  check_pairs(params, ref, pairs, beta);
  return margins_cached(params, pairs, beta, reference_deltas(ref, pairs));
}

namespace {

void apply_step(ToyLMParams& params, const std::vector<double>& grad, double learning_rate) {
  for (std::size_t i = 0; i < params.logits.size(); ++i) {
    params.logits[i] -= learning_rate * grad[i];
  }
}

void require_finite(double loss, const char* objective, int step) {
  if (!std::isfinite(loss)) {
    throw Error(std::string(objective) + " loss is non-finite at step " + std::to_string(step));
  }
}

double mean(const std::vector<double>& values) {
  double total = 0.0;
  for (double v : values) total += v;
  return values.empty() ? 0.0 : total / static_cast<double>(values.size());
}

}  // namespace

TrainResult train_sft(ToyLMParams params, const std::vector<SftExample>& data,
                      const TrainConfig& config) {
  if (config.learning_rate <= 0.0) throw DataError("learning_rate must be > 0");
  if (config.steps < 0) throw DataError("steps must be >= 0");
  TrainResult result;
  for (int step = 0; step < config.steps; ++step) {
    LossGrad lg = sft_loss_grad(params, data);
    require_finite(lg.loss, "sft", step);
    result.loss_curve.push_back(lg.loss);
    apply_step(params, lg.grad, config.learning_rate);
  }
  const double final_loss = sft_loss(params, data);
  require_finite(final_loss, "sft", config.steps);
  result.loss_curve.push_back(final_loss);
  result.params = std::move(params);
  return result;
}

TrainResult train_dpo(const ToyLMParams& start, const std::vector<DpoExample>& pairs,
                      const TrainConfig& config) {
  if (config.learning_rate <= 0.0) throw DataError("learning_rate must be > 0");
  if (config.steps < 0) throw DataError("steps must be >= 0");
  check_pairs(start, start, pairs, config.beta);
  const std::vector<double> ref_deltas = reference_deltas(start, pairs);
  ToyLMParams params = start;  // `start` doubles as the frozen reference
  TrainResult result;
  std::vector<double> margins;
  for (int step = 0; step < config.steps; ++step) {
    LossGrad lg = dpo_loss_grad_cached(params, pairs, config.beta, ref_deltas, &margins);
    require_finite(lg.loss, "dpo", step);
    result.loss_curve.push_back(lg.loss);
    result.margin_curve.push_back(mean(margins));  // state entering this step
    apply_step(params, lg.grad, config.learning_rate);
  }
  const double final_loss = dpo_loss_cached(params, pairs, config.beta, ref_deltas);
  require_finite(final_loss, "dpo", config.steps);
  result.loss_curve.push_back(final_loss);
  result.margin_curve.push_back(mean(margins_cached(params, pairs, config.beta, ref_deltas)));
  result.params = std::move(params);
  return result;
}

namespace {

// Coordinates from rows the data visits, topped up with global draws.
std::vector<std::size_t> pick_coordinates(const ToyLMParams& params,
                                          const std::vector<std::size_t>& visited_rows,
                                          int min_coords, std::uint64_t seed) {
  const std::size_t tensor = params.logits.size();
  const std::size_t want = std::min<std::size_t>(tensor, static_cast<std::size_t>(min_coords));
  std::set<std::size_t> chosen;
  Rng rng(seed);
  std::vector<std::size_t> candidates;
  for (std::size_t row : visited_rows) {
    for (int v = 0; v < params.vocab; ++v) candidates.push_back(row + static_cast<std::size_t>(v));
  }
  if (candidates.size() > want) {
    for (std::size_t pick : rng.sample_without_replacement(candidates.size(), want)) {
      chosen.insert(candidates[pick]);
    }
  } else {
    chosen.insert(candidates.begin(), candidates.end());
  }
  while (chosen.size() < want) {
    chosen.insert(static_cast<std::size_t>(rng.below(tensor)));
  }
  return std::vector<std::size_t>(chosen.begin(), chosen.end());
}

template <typename LossFn>
double max_rel_err(ToyLMParams params, const std::vector<double>& analytic,
                   const std::vector<std::size_t>& coords, double h, LossFn&& loss_fn) {
  double worst = 0.0;
  for (std::size_t i : coords) {
    const double saved = params.logits[i];
    params.logits[i] = saved + h;
    const double up = loss_fn(params);
    params.logits[i] = saved - h;
    const double down = loss_fn(params);
    params.logits[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({1e-3, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

template <typename Seq>
void collect_visited_rows(const ToyLMParams& params, const std::string& context, const Seq& target,
                          std::set<std::size_t>& rows) {
  walk_sequence(params, context, target,
                [&](std::size_t row_base, int) { rows.insert(row_base); });
}

}  // namespace

double grad_check_sft(const ToyLMParams& params, const std::vector<SftExample>& data, double h,
                      int min_coords, std::uint64_t seed) {
  if (h <= 0.0) throw DataError("grad check requires h > 0");
  LossGrad lg = sft_loss_grad(params, data);
  std::set<std::size_t> rows;
  for (const auto& example : data) collect_visited_rows(params, example.context, example.target, rows);
  auto coords = pick_coordinates(params, {rows.begin(), rows.end()}, min_coords, seed);
  return max_rel_err(params, lg.grad, coords, h,
                     [&](const ToyLMParams& p) { return sft_loss(p, data); });
}

double grad_check_dpo(const ToyLMParams& params, const ToyLMParams& ref,
                      const std::vector<DpoExample>& pairs, double beta, double h, int min_coords,
                      std::uint64_t seed) {
  if (h <= 0.0) throw DataError("grad check requires h > 0");
  check_pairs(params, ref, pairs, beta);
  const std::vector<double> ref_deltas = reference_deltas(ref, pairs);
  LossGrad lg = dpo_loss_grad_cached(params, pairs, beta, ref_deltas, nullptr);
  std::set<std::size_t> rows;
  for (const auto& pair : pairs) {
    collect_visited_rows(params, pair.context, pair.chosen, rows);
    collect_visited_rows(params, pair.context, pair.rejected, rows);
  }
  auto coords = pick_coordinates(params, {rows.begin(), rows.end()}, min_coords, seed);
  return max_rel_err(params, lg.grad, coords, h, [&](const ToyLMParams& p) {
    return dpo_loss_cached(p, pairs, beta, ref_deltas);
  });
}

double grad_check_quadratic(const ToyLMParams& params, double h, int min_coords,
                            std::uint64_t seed) {
  if (h <= 0.0) throw DataError("grad check requires h > 0");
  std::vector<double> analytic(params.logits.size());
  for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] = 2.0 * params.logits[i];
  auto coords = pick_coordinates(params, {}, min_coords, seed);
  return max_rel_err(params, analytic, coords, h, [](const ToyLMParams& p) {
    double total = 0.0;
    for (double x : p.logits) total += x * x;
    return total;
  });
}

}  // namespace convqr
