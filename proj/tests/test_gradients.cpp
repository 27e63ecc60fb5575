#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "sspo/policy.hpp"
#include "sspo/rng.hpp"
#include "sspo/trainers.hpp"

using namespace sspo;

namespace {

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.patch_len = 4;
  cfg.channels = 2;
  cfg.enc_layers = 2;
  cfg.enc_dim = 8;
  cfg.dec_layers = 2;
  cfg.dec_dim = 8;
  cfg.heads = 2;
  cfg.vocab_size = 13;
  cfg.max_seq = 48;
  cfg.seed = 3;
  return cfg;
}

SignalRecord random_signal(std::mt19937_64& rng, int t_len, int channels) {
  SignalRecord x;
  x.samples.resize(t_len, channels);
  for (int t = 0; t < t_len; ++t) {
    for (int c = 0; c < channels; ++c) x.samples(t, c) = normal01(rng);
  }
  return x;
}

TokenSequence random_ids(std::mt19937_64& rng, std::size_t len, int vocab) {
  TokenSequence ids;
  for (std::size_t i = 0; i < len; ++i) {
    ids.push_back(static_cast<int>(bounded(rng, static_cast<std::uint64_t>(vocab))));
  }
  return ids;
}

// Central finite differences on randomly chosen coordinates.
void check_grad(const PolicyParams& params, const Eigen::VectorXd& analytic,
                const std::function<double(const PolicyParams&)>& f, int n_coords,
                std::mt19937_64& rng, double tol = 1e-4) {
  const double h = 1e-5;
  for (int i = 0; i < n_coords; ++i) {
    const Eigen::Index idx =
        static_cast<Eigen::Index>(bounded(rng, static_cast<std::uint64_t>(params.size())));
    PolicyParams plus = params, minus = params;
    plus.flat()(idx) += h;
    minus.flat()(idx) -= h;
    const double fd = (f(plus) - f(minus)) / (2.0 * h);
    const double a = analytic(idx);
    const double rel = std::abs(fd - a) / std::max(std::abs(fd) + std::abs(a), 1e-6);
    INFO("coordinate ", idx, " analytic ", a, " fd ", fd);
    CHECK(rel < tol);
  }
}

}  // namespace

TEST_CASE("total logprob gradient matches finite differences") {
  const ModelConfig cfg = small_cfg();
  const PolicyParams params = PolicyParams::init(cfg);
  std::mt19937_64 rng(21);
  const SignalRecord x = random_signal(rng, 16, 2);
  const TokenSequence query = random_ids(rng, 3, cfg.vocab_size);
  const TokenSequence target = random_ids(rng, 7, cfg.vocab_size);

  PolicyAutograd graph(x, query, target, params);
  const Eigen::VectorXd grad = graph.backward(std::vector<double>(target.size(), 1.0));

  check_grad(params, grad,
             [&](const PolicyParams& p) {
               return PolicyAutograd(x, query, target, p).total_logprob();
             },
             60, rng);
}

TEST_CASE("sft loss gradient matches finite differences") {
  const ModelConfig cfg = small_cfg();
  const PolicyParams params = PolicyParams::init(cfg);
  std::mt19937_64 rng(22);
  std::vector<Example> batch;
  for (int i = 0; i < 2; ++i) {
    batch.push_back({random_signal(rng, 16, 2), random_ids(rng, 2, cfg.vocab_size),
                     random_ids(rng, 6, cfg.vocab_size)});
  }
  const auto [loss, grad] = sft_loss_and_grad(batch, params);
  CHECK(std::isfinite(loss));
  check_grad(params, grad,
             [&](const PolicyParams& p) { return sft_loss_and_grad(batch, p).first; }, 60, rng);
}

TEST_CASE("sspo objective gradient matches finite differences off-policy") {
  const ModelConfig cfg = small_cfg();
  std::mt19937_64 rng(23);
  const PolicyParams params_old = PolicyParams::init(cfg);
  ModelConfig ref_cfg = cfg;
  ref_cfg.seed = 11;
  const PolicySnapshot ref = PolicyParams::init(ref_cfg);

  const SignalRecord x = random_signal(rng, 16, 2);
  const TokenSequence query = random_ids(rng, 2, cfg.vocab_size);
  const EmbeddedInput input =
      assemble_input(project(encode_signal(x, params_old), params_old), query, params_old);
  const auto group = sample_group(input, 4, 1.0, 8, /*eos=*/0, params_old, 1001);
  const GroupAdvantages adv = group_advantages({0.2, 1.4, 0.6, 2.0}, 1e-8);

  TrainConfig tc;
  tc.clip_eps = 0.2;
  tc.kl_beta = 0.05;

  // evaluate slightly off-policy so the ratio path is exercised
  PolicyParams params = params_old;
  for (Eigen::Index i = 0; i < params.flat().size(); ++i) {
    params.flat()(i) += 0.01 * normal01(rng);
  }

  const SspoEvalResult res = sspo_objective_and_grad(x, query, group, adv, params, ref, tc);
  CHECK(std::isfinite(res.objective));
  CHECK(res.kl_mean >= 0.0);

  check_grad(params, res.grad,
             [&](const PolicyParams& p) {
               return sspo_objective_and_grad(x, query, group, adv, p, ref, tc).objective;
             },
             60, rng);
}

TEST_CASE("on-policy sspo gradient equals the score-function gradient") {
  const ModelConfig cfg = small_cfg();
  std::mt19937_64 rng(24);
  const PolicyParams params = PolicyParams::init(cfg);

  const SignalRecord x = random_signal(rng, 16, 2);
  const TokenSequence query = random_ids(rng, 2, cfg.vocab_size);
  const EmbeddedInput input =
      assemble_input(project(encode_signal(x, params), params), query, params);
  const auto group = sample_group(input, 4, 1.0, 10, /*eos=*/0, params, 555);
  const GroupAdvantages adv = group_advantages({0.0, 1.0, 2.0, 0.5}, 1e-8);

  TrainConfig tc;
  tc.kl_beta = 0.0;

  const SspoEvalResult res = sspo_objective_and_grad(x, query, group, adv, params, params, tc);

  Eigen::VectorXd reinforce = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
  for (std::size_t i = 0; i < group.size(); ++i) {
    PolicyAutograd graph(x, query, group[i].ids, params);
    reinforce += graph.backward(
        std::vector<double>(group[i].ids.size(), adv.advantages[i] / 4.0));
  }
  CHECK((res.grad - reinforce).cwiseAbs().maxCoeff() < 1e-6);

  // the KL penalty vanishes identically at the reference point
  TrainConfig with_kl = tc;
  with_kl.kl_beta = 0.5;
  const SspoEvalResult res_kl =
      sspo_objective_and_grad(x, query, group, adv, params, params, with_kl);
  CHECK(res_kl.kl_mean == 0.0);
  CHECK((res_kl.grad - reinforce).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("clip arithmetic: doctored ratios hit the clipped branch") {
  const ModelConfig cfg = small_cfg();
  std::mt19937_64 rng(25);
  const PolicyParams params = PolicyParams::init(cfg);
  const SignalRecord x = random_signal(rng, 16, 2);
  const TokenSequence query = random_ids(rng, 2, cfg.vocab_size);
  const EmbeddedInput input =
      assemble_input(project(encode_signal(x, params), params), query, params);
  auto group = sample_group(input, 2, 1.0, 8, /*eos=*/0, params, 99);

  // shift the recorded old logprobs so that rho is exactly 1.5 for both
  for (auto& roll : group) {
    const double shift = std::log(1.5) / static_cast<double>(roll.logprobs.size());
    for (double& lp : roll.logprobs) lp -= shift;
  }

  GroupAdvantages adv;
  adv.advantages = {1.0, 0.0};
  adv.rewards = {1.0, 0.0};
  adv.epsilon = 0.0;

  TrainConfig tc;
  tc.clip_eps = 0.2;
  tc.kl_beta = 0.0;

  // per-sample surrogates: min(1.5*1, 1.2*1) = 1.2 and 0; group mean 0.6
  const SspoEvalResult res = sspo_objective_and_grad(x, query, group, adv, params, params, tc);
  CHECK(res.objective == doctest::Approx(0.6).epsilon(1e-9));

  // negative advantage leaves the min on the unclipped side
  adv.advantages = {-1.0, 0.0};
  const SspoEvalResult res_neg =
      sspo_objective_and_grad(x, query, group, adv, params, params, tc);
  CHECK(res_neg.objective == doctest::Approx(-0.75).epsilon(1e-9));
}

TEST_CASE("surrogate never exceeds the clip bound") {
  const ModelConfig cfg = small_cfg();
  std::mt19937_64 rng(26);
  const PolicyParams params = PolicyParams::init(cfg);
  const SignalRecord x = random_signal(rng, 16, 2);
  const TokenSequence query = random_ids(rng, 1, cfg.vocab_size);
  const EmbeddedInput input =
      assemble_input(project(encode_signal(x, params), params), query, params);

  TrainConfig tc;
  tc.clip_eps = 0.2;
  tc.kl_beta = 0.0;

  for (int trial = 0; trial < 50; ++trial) {
    auto group = sample_group(input, 2, 1.0, 6, /*eos=*/0, params,
                              static_cast<std::uint64_t>(3000 + trial));
    const double rho = std::exp(4.0 * (uniform01(rng) - 0.5));
    for (auto& roll : group) {
      const double shift = std::log(rho) / static_cast<double>(roll.logprobs.size());
      for (double& lp : roll.logprobs) lp -= shift;
    }
    const double a = 4.0 * (uniform01(rng) - 0.5);
    GroupAdvantages adv;
    adv.advantages = {a, 0.0};
    adv.rewards = {0.0, 0.0};
    const SspoEvalResult res =
        sspo_objective_and_grad(x, query, group, adv, params, params, tc);
    const double surrogate = 2.0 * res.objective;  // second member contributes 0
    CHECK(surrogate <= (1.0 + tc.clip_eps) * std::abs(a) + 1e-9);
  }
}

TEST_CASE("k3 penalty is non-negative across random parameter pairs") {
  const ModelConfig cfg = small_cfg();
  std::mt19937_64 rng(27);
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig ca = cfg, cb = cfg;
    ca.seed = 100 + static_cast<std::uint64_t>(trial);
    cb.seed = 200 + static_cast<std::uint64_t>(trial);
    const PolicyParams pa = PolicyParams::init(ca);
    const PolicyParams pb = PolicyParams::init(cb);
    const SignalRecord x = random_signal(rng, 16, 2);
    const TokenSequence query = random_ids(rng, 2, cfg.vocab_size);

    const EmbeddedInput input = assemble_input(project(encode_signal(x, pa), pa), query, pa);
    const auto group = sample_group(input, 2, 1.0, 8, /*eos=*/0, pa, 7000 + trial);
    const GroupAdvantages adv = group_advantages({0.0, 1.0}, 1e-8);
    TrainConfig tc;
    const SspoEvalResult res = sspo_objective_and_grad(x, query, group, adv, pa, pb, tc);
    CHECK(res.kl_mean >= 0.0);
  }
}
