#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace convqr {

// Word-level vocabulary with dense ids; <bos>=0, <eos>=1, <unk>=2.
class ToyVocab {
 public:
  static ToyVocab build(const std::vector<std::string>& texts);

  int bos() const { return 0; }
  int eos() const { return 1; }
  int unk() const { return 2; }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  // Whitespace word-level encoding; out-of-vocabulary words map to <unk>.
  std::vector<int> encode(const std::string& text) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Context-bucketed bigram LM: free logits indexed by
// (context bucket, previous token, next token).
struct ToyLMParams {
  int buckets = 64;
  int vocab = 0;
  std::vector<double> logits;  // buckets * vocab * vocab, all finite

  static ToyLMParams zeros(int buckets, int vocab);

  std::size_t flat(int c, int u, int v) const {
    return (static_cast<std::size_t>(c) * static_cast<std::size_t>(vocab) +
            static_cast<std::size_t>(u)) *
               static_cast<std::size_t>(vocab) +
           static_cast<std::size_t>(v);
  }
  double at(int c, int u, int v) const { return logits[flat(c, u, v)]; }
  double& at(int c, int u, int v) { return logits[flat(c, u, v)]; }
};

struct TrainConfig {
  double beta = 0.1;
  double learning_rate = 0.01;
  int steps = 100;
  std::uint64_t seed = 0;
};

// 64-bit FNV-1a of the context string, mod bucket count.
int context_bucket(const std::string& context, int buckets);

struct SftExample {
  std::string context;
  std::vector<int> target;  // token ids, EOS appended internally
};

struct DpoExample {
  std::string context;
  std::vector<int> chosen;
  std::vector<int> rejected;
};

// log pi(target | context): sum of per-step log-softmax values starting
// from <bos>, with <eos> appended. Always <= 0.
double sequence_log_prob(const ToyLMParams& params, const std::string& context,
                         const std::vector<int>& target);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;  // same shape as params.logits
};

// Negative mean sequence log-likelihood and its exact gradient
// (softmax-minus-one-hot accumulation per visited row).
double sft_loss(const ToyLMParams& params, const std::vector<SftExample>& data);
LossGrad sft_loss_grad(const ToyLMParams& params, const std::vector<SftExample>& data);

// DPO objective against a frozen reference:
//   loss = -mean log sigmoid(r_w - r_l),
//   r(x, q) = beta * (log pi(q|x) - log pi_ref(q|x)).
double dpo_loss(const ToyLMParams& params, const ToyLMParams& ref,
                const std::vector<DpoExample>& pairs, double beta);
LossGrad dpo_loss_grad(const ToyLMParams& params, const ToyLMParams& ref,
                       const std::vector<DpoExample>& pairs, double beta);

// Implied-reward margins r_w - r_l per pair at the given parameters.
std::vector<double> dpo_margins(const ToyLMParams& params, const ToyLMParams& ref,
                                const std::vector<DpoExample>& pairs, double beta);

struct TrainResult {
  ToyLMParams params;
  // loss_curve[i] is the loss entering step i; the final entry is the
  // loss after the last step (size steps + 1).
  std::vector<double> loss_curve;
  // DPO only: mean margin before training and after every step.
  std::vector<double> margin_curve;
};

// Full-batch gradient descent; deterministic. Throws on non-finite loss
// naming the step.
TrainResult train_sft(ToyLMParams params, const std::vector<SftExample>& data,
                      const TrainConfig& config);

// The incoming parameters are snapshotted as the frozen reference before
// the first step.
TrainResult train_dpo(const ToyLMParams& start, const std::vector<DpoExample>& pairs,
                      const TrainConfig& config);

// Central-difference check of the analytic gradient on a seeded random
// coordinate subset (>= min_coords where the tensor allows), biased
// toward rows the data actually visits. Returns the max relative error
// with denominators floored at 1e-3 so roundoff on near-zero entries
// cannot dominate.
double grad_check_sft(const ToyLMParams& params, const std::vector<SftExample>& data, double h,
                      int min_coords, std::uint64_t seed);
double grad_check_dpo(const ToyLMParams& params, const ToyLMParams& ref,
                      const std::vector<DpoExample>& pairs, double beta, double h, int min_coords,
                      std::uint64_t seed);
// Sanity harness on loss(p) = sum p^2 whose derivative is exact.
double grad_check_quadratic(const ToyLMParams& params, double h, int min_coords,
                            std::uint64_t seed);

}  // namespace convqr
