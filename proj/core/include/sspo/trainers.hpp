#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "sspo/labels.hpp"
#include "sspo/policy.hpp"
#include "sspo/reward.hpp"
#include "sspo/tokenizer.hpp"

namespace sspo {

struct TrainConfig {
  double sft_lr = 2e-4;
  int sft_epochs = 4;
  int sft_batch = 16;
  double rl_lr = 2e-5;
  int rl_epochs = 8;
  int rl_batch = 1;
  int grad_accum = 4;
  int group_size = 4;      // G
  double clip_eps = 0.2;   // surrogate clip width
  double kl_beta = 0.04;   // KL penalty weight
  double adv_eps = 1e-8;   // advantage normalization epsilon
  double temperature = 1.0;
  std::uint64_t seed = 0;
  int max_new_tokens = 72;

  void validate() const;  // throws std::invalid_argument
};

// A frozen copy of PolicyParams. Serves as the reference policy and as the
// pre-update sampler; callers must not mutate it after capture.
using PolicySnapshot = PolicyParams;

struct Example {
  SignalRecord signal;
  TokenSequence query;
  TokenSequence target;
};

// Mean-per-token negative log-likelihood over the batch and its exact
// gradient. Rejects empty batches.
std::pair<double, Eigen::VectorXd> sft_loss_and_grad(const std::vector<Example>& batch,
                                                     const PolicyParams& params);

struct SspoEvalResult {
  double objective = 0.0;  // group-mean clipped surrogate minus KL penalty
  Eigen::VectorXd grad;    // ascent gradient of the objective
  double kl_mean = 0.0;    // group-mean per-token-averaged k3 estimate
};

// Clipped-surrogate objective with sequence-level likelihood ratios and a
// per-token k3 KL penalty against the reference policy. Samples must have
// been drawn under the pre-update snapshot that produced their logprobs.
SspoEvalResult sspo_objective_and_grad(const SignalRecord& signal, const TokenSequence& query,
                                       const std::vector<SampledRollout>& group,
                                       const GroupAdvantages& advantages,
                                       const PolicyParams& params, const PolicySnapshot& ref,
                                       const TrainConfig& cfg);

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;

  static AdamState zeros(std::size_t n);
};

// Standard Adam update (beta1=0.9, beta2=0.999, eps=1e-8) with bias
// correction. Non-finite gradient components reject the step.
void adam_step(PolicyParams& params, const Eigen::VectorXd& grad, AdamState& state, double lr);

// Seeded shuffled mini-batch SFT. Returns the loss log: element 0 is the
// pre-training dataset loss, element e >= 1 the running mean loss of epoch e.
std::vector<double> train_sft(const std::vector<Example>& dataset, const TrainConfig& cfg,
                              PolicyParams& params);

struct RlQuery {
  SignalRecord signal;
  TokenSequence query;
  LabelSet truth;
};

struct SspoStepLog {
  int step = 0;
  double mean_total = 0.0;
  double mean_struct = 0.0;
  double mean_dice = 0.0;
  double kl_mean = 0.0;
  double loss = 0.0;  // negated objective, what the optimizer descends
};

// The reinforcement stage: per query, sample a group from the current
// policy, score each rollout, normalize rewards within the group, accumulate
// gradients over grad_accum queries and apply one Adam step. The reference
// policy is frozen to the incoming params for the whole run.
std::vector<SspoStepLog> train_sspo(const std::vector<RlQuery>& dataset, const TrainConfig& cfg,
                                    const Tokenizer& tokenizer, const LabelSet& label_vocab,
                                    PolicyParams& params);

}  // namespace sspo
