#include "sspo/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "sspo/errors.hpp"
#include "sspo/rng.hpp"
#include "sspo/trace.hpp"

namespace sspo {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// Exponent clamp that keeps likelihood ratios finite for wildly off-policy
// inputs without touching the near-on-policy regime training lives in.
constexpr double kMaxLogRatio = 30.0;

double clipped(double rho, double eps) {
  return std::min(std::max(rho, 1.0 - eps), 1.0 + eps);
}

TokenSequence strip_token(const TokenSequence& ids, int drop) {
  TokenSequence out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id != drop) out.push_back(id);
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  // lr 0 is accepted as an explicit "evaluate only" mode; updates are no-ops.
  if (sft_lr < 0.0 || rl_lr < 0.0) {
    throw std::invalid_argument("TrainConfig: learning rates must be non-negative");
  }
  if (sft_epochs < 0 || rl_epochs < 0) {
    throw std::invalid_argument("TrainConfig: epochs must be non-negative");
  }
  if (sft_batch < 1 || rl_batch < 1 || grad_accum < 1) {
    throw std::invalid_argument("TrainConfig: batch and accumulation sizes must be >= 1");
  }
  if (group_size < 2) throw std::invalid_argument("TrainConfig: group_size must be >= 2");
  if (clip_eps <= 0.0 || clip_eps >= 1.0) {
    throw std::invalid_argument("TrainConfig: clip_eps must lie in (0, 1)");
  }
  if (kl_beta < 0.0) throw std::invalid_argument("TrainConfig: kl_beta must be >= 0");
  if (adv_eps < 0.0) throw std::invalid_argument("TrainConfig: adv_eps must be >= 0");
  if (temperature <= 0.0) throw std::invalid_argument("TrainConfig: temperature must be > 0");
  if (max_new_tokens < 1) throw std::invalid_argument("TrainConfig: max_new_tokens must be >= 1");
}

std::pair<double, Eigen::VectorXd> sft_loss_and_grad(const std::vector<Example>& batch,
                                                     const PolicyParams& params) {
  if (batch.empty()) throw std::invalid_argument("sft_loss_and_grad: empty batch");

  std::size_t total_tokens = 0;
  for (const Example& ex : batch) {
    if (ex.target.empty()) throw std::invalid_argument("sft_loss_and_grad: empty target");
    total_tokens += ex.target.size();
  }

  const double w = -1.0 / static_cast<double>(total_tokens);
  double nll_sum = 0.0;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
  for (const Example& ex : batch) {
    PolicyAutograd graph(ex.signal, ex.query, ex.target, params);
    nll_sum -= graph.total_logprob();
    grad += graph.backward(std::vector<double>(ex.target.size(), w));
  }
  return {nll_sum / static_cast<double>(total_tokens), grad};
}

SspoEvalResult sspo_objective_and_grad(const SignalRecord& signal, const TokenSequence& query,
                                       const std::vector<SampledRollout>& group,
                                       const GroupAdvantages& advantages,
                                       const PolicyParams& params, const PolicySnapshot& ref,
                                       const TrainConfig& cfg) {
  const std::size_t g = group.size();
  if (g < 2) throw std::invalid_argument("sspo_objective_and_grad: group size must be >= 2");
  if (advantages.advantages.size() != g) {
    throw std::invalid_argument("sspo_objective_and_grad: group/advantage size mismatch");
  }

  // Reference per-token log-probs under the frozen snapshot, forward only.
  const EmbeddedInput ref_input =
      assemble_input(project(encode_signal(signal, ref), ref), query, ref);

  SspoEvalResult res;
  res.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));

  const double inv_g = 1.0 / static_cast<double>(g);
  for (std::size_t i = 0; i < g; ++i) {
    const SampledRollout& roll = group[i];
    if (roll.ids.empty() || roll.ids.size() != roll.logprobs.size()) {
      throw std::invalid_argument("sspo_objective_and_grad: malformed rollout");
    }
    const std::size_t m = roll.ids.size();
    const double adv = advantages.advantages[i];

    PolicyAutograd graph(signal, query, roll.ids, params);
    const std::vector<double>& lp = graph.token_logprobs();
    const std::vector<double> ref_lp = forward_logprobs(ref_input, roll.ids, ref);

    double old_sum = 0.0;
    for (double v : roll.logprobs) old_sum += v;
    const double log_ratio =
        std::clamp(graph.total_logprob() - old_sum, -kMaxLogRatio, kMaxLogRatio);
    const double rho = std::exp(log_ratio);

    const double unclipped = rho * adv;
    const double clipped_term = clipped(rho, cfg.clip_eps) * adv;
    const double surrogate = std::min(unclipped, clipped_term);
    // min() selects the unclipped branch on ties, where both derivatives agree.
    const double surr_weight = unclipped <= clipped_term ? adv * rho : 0.0;

    double kl = 0.0;
    std::vector<double> weights(m);
    for (std::size_t t = 0; t < m; ++t) {
      const double log_x = ref_lp[t] - lp[t];
      const double x = std::exp(std::clamp(log_x, -kMaxLogRatio, kMaxLogRatio));
      kl += x - log_x - 1.0;
      weights[t] = inv_g * (surr_weight - cfg.kl_beta * (1.0 - x) / static_cast<double>(m));
    }
    kl /= static_cast<double>(m);

    res.objective += inv_g * (surrogate - cfg.kl_beta * kl);
    res.kl_mean += inv_g * kl;
    res.grad += graph.backward(weights);
  }
  return res;
}

AdamState AdamState::zeros(std::size_t n) {
  AdamState st;
  st.m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  st.v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  return st;
}

void adam_step(PolicyParams& params, const Eigen::VectorXd& grad, AdamState& state, double lr) {
  const Eigen::Index n = static_cast<Eigen::Index>(params.size());
  if (grad.size() != n || state.m.size() != n || state.v.size() != n) {
    throw std::invalid_argument("adam_step: dimension mismatch");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(grad(i))) {
      throw DataError("adam_step: non-finite gradient at coordinate " + std::to_string(i));
    }
  }
  state.step += 1;
  state.m = kAdamBeta1 * state.m + (1.0 - kAdamBeta1) * grad;
  state.v = kAdamBeta2 * state.v + (1.0 - kAdamBeta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  params.flat() -=
      (lr / bc1) * state.m.cwiseQuotient((state.v / bc2).cwiseSqrt().array().matrix() +
                                         Eigen::VectorXd::Constant(n, kAdamEps));
}

std::vector<double> train_sft(const std::vector<Example>& dataset, const TrainConfig& cfg,
                              PolicyParams& params) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train_sft: empty dataset");

  std::vector<double> log;
  log.push_back(sft_loss_and_grad(dataset, params).first);

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::mt19937_64 rng(mix_seed(cfg.seed, 0x5f7u));
  AdamState state = AdamState::zeros(params.size());
  for (int epoch = 0; epoch < cfg.sft_epochs; ++epoch) {
    shuffle(order, rng);
    double nll_sum = 0.0;
    std::size_t token_count = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.sft_batch) {
      std::vector<Example> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.sft_batch); ++i) {
        batch.push_back(dataset[order[i]]);
      }
      auto [loss, grad] = sft_loss_and_grad(batch, params);
      adam_step(params, grad, state, cfg.sft_lr);
      std::size_t batch_tokens = 0;
      for (const Example& ex : batch) batch_tokens += ex.target.size();
      nll_sum += loss * static_cast<double>(batch_tokens);
      token_count += batch_tokens;
    }
    log.push_back(nll_sum / static_cast<double>(token_count));
  }
  return log;
}

std::vector<SspoStepLog> train_sspo(const std::vector<RlQuery>& dataset, const TrainConfig& cfg,
                                    const Tokenizer& tokenizer, const LabelSet& label_vocab,
                                    PolicyParams& params) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train_sspo: empty dataset");

  const PolicySnapshot ref = params;  // frozen for the entire run
  AdamState state = AdamState::zeros(params.size());

  std::vector<SspoStepLog> logs;
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x99f2u));
  std::uint64_t sample_counter = 0;
  int step = 0;

  Eigen::VectorXd grad_acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
  int acc_count = 0;
  double win_total = 0.0, win_struct = 0.0, win_dice = 0.0, win_kl = 0.0, win_obj = 0.0;
  int win_rollouts = 0, win_queries = 0;

  auto flush = [&]() {
    if (acc_count == 0) return;
    const Eigen::VectorXd step_grad = -grad_acc / static_cast<double>(acc_count);
    adam_step(params, step_grad, state, cfg.rl_lr);
    ++step;
    logs.push_back({step, win_total / win_rollouts, win_struct / win_rollouts,
                    win_dice / win_rollouts, win_kl / win_queries, -win_obj / win_queries});
    grad_acc.setZero();
    acc_count = 0;
    win_total = win_struct = win_dice = win_kl = win_obj = 0.0;
    win_rollouts = win_queries = 0;
  };

  for (int epoch = 0; epoch < cfg.rl_epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    for (std::size_t qi : order) {
      const RlQuery& q = dataset[qi];

      // The current parameters play the pre-update snapshot: sampling and the
      // gradient evaluation happen before the window's optimizer step.
      const EmbeddedInput input =
          assemble_input(project(encode_signal(q.signal, params), params), q.query, params);
      const auto group =
          sample_group(input, cfg.group_size, cfg.temperature, cfg.max_new_tokens,
                       tokenizer.eos_id(), params, mix_seed(cfg.seed, 0xab5e + sample_counter));
      ++sample_counter;

      std::vector<double> rewards;
      rewards.reserve(group.size());
      for (const auto& roll : group) {
        const std::string text = tokenizer.decode(strip_token(roll.ids, tokenizer.eos_id()));
        const StructuredTrace trace = parse_trace(text, label_vocab);
        const RewardBreakdown rb = composite_reward(trace, q.truth);
        rewards.push_back(rb.total);
        win_total += rb.total;
        win_struct += rb.structure;
        win_dice += rb.diagnosis;
        ++win_rollouts;
      }

      const GroupAdvantages adv = group_advantages(rewards, cfg.adv_eps);
      const SspoEvalResult res =
          sspo_objective_and_grad(q.signal, q.query, group, adv, params, ref, cfg);
      grad_acc += res.grad;
      ++acc_count;
      win_kl += res.kl_mean;
      win_obj += res.objective;
      ++win_queries;

      if (acc_count == cfg.grad_accum) flush();
    }
    flush();  // partial window at epoch end
  }
  return logs;
}

}  // namespace sspo
