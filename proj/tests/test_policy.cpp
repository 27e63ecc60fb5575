#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "sspo/checkpoint.hpp"
#include "sspo/policy.hpp"
#include "sspo/rng.hpp"

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

bool bitwise_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.array() == b.array()).all();
}

}  // namespace

TEST_CASE("encode_signal emits one row per patch") {
  ModelConfig cfg = small_cfg();
  cfg.patch_len = 8;
  const PolicyParams p = PolicyParams::init(cfg);
  std::mt19937_64 rng(1);
  const SignalRecord x = random_signal(rng, 32, cfg.channels);
  CHECK(encode_signal(x, p).rows() == 4);
  CHECK(encode_signal(x, p).cols() == cfg.enc_dim);
}

TEST_CASE("encode_signal rejects shape mismatches") {
  const PolicyParams p = PolicyParams::init(small_cfg());
  std::mt19937_64 rng(2);
  CHECK_THROWS_AS(encode_signal(random_signal(rng, 18, 2), p), std::invalid_argument);
  CHECK_THROWS_AS(encode_signal(random_signal(rng, 16, 3), p), std::invalid_argument);
  SignalRecord bad = random_signal(rng, 16, 2);
  bad.samples(3, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(encode_signal(bad, p), std::invalid_argument);
}

TEST_CASE("encode_signal is deterministic, including on all-zero input") {
  const PolicyParams p = PolicyParams::init(small_cfg());
  SignalRecord zero;
  zero.samples = Eigen::MatrixXd::Zero(16, 2);
  CHECK(bitwise_equal(encode_signal(zero, p), encode_signal(zero, p)));
  std::mt19937_64 rng(3);
  const SignalRecord x = random_signal(rng, 16, 2);
  CHECK(bitwise_equal(encode_signal(x, p), encode_signal(x, p)));
}

TEST_CASE("encode_signal input Jacobian matches finite differences") {
  const ModelConfig cfg = small_cfg();
  const PolicyParams p = PolicyParams::init(cfg);
  std::mt19937_64 rng(4);
  const SignalRecord x = random_signal(rng, 16, 2);

  Eigen::MatrixXd w(4, cfg.enc_dim);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal01(rng);

  const Eigen::MatrixXd g = encode_signal_vjp(x, p, w);
  REQUIRE(g.rows() == 16);
  REQUIRE(g.cols() == 2);

  const double h = 1e-5;
  for (int trial = 0; trial < 12; ++trial) {
    const int t = static_cast<int>(bounded(rng, 16));
    const int c = static_cast<int>(bounded(rng, 2));
    SignalRecord plus = x, minus = x;
    plus.samples(t, c) += h;
    minus.samples(t, c) -= h;
    const double fplus = (w.array() * encode_signal(plus, p).array()).sum();
    const double fminus = (w.array() * encode_signal(minus, p).array()).sum();
    const double fd = (fplus - fminus) / (2.0 * h);
    const double rel = std::abs(fd - g(t, c)) / std::max(std::abs(fd) + std::abs(g(t, c)), 1e-6);
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("projector: degenerate weights, gelu fixed point, straight-line oracle") {
  const ModelConfig cfg = small_cfg();
  PolicyParams p = PolicyParams::init(cfg);

  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(3.0) == doctest::Approx(3.0 * 0.5 * (1.0 + std::erf(3.0 / std::sqrt(2.0)))));

  SUBCASE("zero weights make every row the output bias") {
    p.tensor("proj.w1").setZero();
    p.tensor("proj.w2").setZero();
    p.tensor("proj.b1").setZero();
    p.tensor("proj.b2").setConstant(0.75);
    Eigen::MatrixXd z = Eigen::MatrixXd::Random(5, cfg.enc_dim);
    const Eigen::MatrixXd h = project(z, p);
    for (Eigen::Index r = 0; r < h.rows(); ++r) {
      for (Eigen::Index c = 0; c < h.cols(); ++c) CHECK(h(r, c) == 0.75);
    }
  }

  SUBCASE("matches an independent per-element recomputation") {
    std::mt19937_64 rng(6);
    Eigen::MatrixXd z(5, cfg.enc_dim);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal01(rng);
    const Eigen::MatrixXd h = project(z, p);

    const auto w1 = p.tensor("proj.w1");
    const auto b1 = p.tensor("proj.b1");
    const auto w2 = p.tensor("proj.w2");
    const auto b2 = p.tensor("proj.b2");
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      std::vector<double> mid(static_cast<std::size_t>(cfg.dec_dim));
      for (int j = 0; j < cfg.dec_dim; ++j) {
        double acc = b1(0, j);
        for (int i = 0; i < cfg.enc_dim; ++i) acc += z(r, i) * w1(i, j);
        mid[static_cast<std::size_t>(j)] =
            0.5 * acc * (1.0 + std::erf(acc / std::sqrt(2.0)));
      }
      for (int j = 0; j < cfg.dec_dim; ++j) {
        double acc = b2(0, j);
        for (int i = 0; i < cfg.dec_dim; ++i) acc += mid[static_cast<std::size_t>(i)] * w2(i, j);
        CHECK(h(r, j) == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("assemble_input concatenates along the sequence axis") {
  const ModelConfig cfg = small_cfg();
  const PolicyParams p = PolicyParams::init(cfg);
  std::mt19937_64 rng(7);
  const SignalRecord x = random_signal(rng, 16, 2);
  const Eigen::MatrixXd h = project(encode_signal(x, p), p);
  REQUIRE(h.rows() == 4);

  const TokenSequence query = random_ids(rng, 6, cfg.vocab_size);
  const EmbeddedInput input = assemble_input(h, query, p);
  CHECK(input.rows.rows() == 10);
  CHECK(input.signal_rows == 4);

  const EmbeddedInput bare = assemble_input(h, {}, p);
  CHECK(bare.rows.rows() == 4);

  // swapping two query tokens changes exactly those rows before attention
  TokenSequence swapped = query;
  std::swap(swapped[1], swapped[4]);
  if (query[1] != query[4]) {
    const EmbeddedInput other = assemble_input(h, swapped, p);
    for (Eigen::Index r = 0; r < input.rows.rows(); ++r) {
      const bool differs = !(input.rows.row(r).array() == other.rows.row(r).array()).all();
      CHECK(differs == (r == 5 || r == 8));
    }
  }

  TokenSequence too_long = random_ids(rng, static_cast<std::size_t>(cfg.max_seq), cfg.vocab_size);
  CHECK_THROWS_AS(assemble_input(h, too_long, p), std::invalid_argument);
}

TEST_CASE("uniform head yields -ln V for every target token") {
  const ModelConfig cfg = small_cfg();
  PolicyParams p = PolicyParams::init(cfg);
  p.tensor("head.w").setZero();
  p.tensor("head.b").setZero();
  std::mt19937_64 rng(8);
  const SignalRecord x = random_signal(rng, 16, 2);
  const EmbeddedInput input = assemble_input(project(encode_signal(x, p), p), {1, 2}, p);
  const auto lps = forward_logprobs(input, {0, 5, 12}, p);
  REQUIRE(lps.size() == 3);
  for (double lp : lps) {
    CHECK(lp == doctest::Approx(-std::log(13.0)).epsilon(1e-12));
  }
}

TEST_CASE("per-position distributions are normalized and logprobs non-positive") {
  const ModelConfig cfg = small_cfg();
  const PolicyParams p = PolicyParams::init(cfg);
  std::mt19937_64 rng(9);
  const SignalRecord x = random_signal(rng, 16, 2);
  const EmbeddedInput input = assemble_input(project(encode_signal(x, p), p),
                                             random_ids(rng, 3, cfg.vocab_size), p);
  for (int trial = 0; trial < 5; ++trial) {
    const TokenSequence prefix = random_ids(rng, bounded(rng, 6), cfg.vocab_size);
    const Eigen::VectorXd probs = next_token_distribution(input, prefix, p);
    CHECK(std::abs(probs.sum() - 1.0) < 1e-9);
    CHECK(probs.minCoeff() >= 0.0);
  }
  const TokenSequence target = random_ids(rng, 8, cfg.vocab_size);
  for (double lp : forward_logprobs(input, target, p)) CHECK(lp <= 0.0);
}

TEST_CASE("causality: later target tokens cannot move earlier logprobs") {
  const ModelConfig cfg = small_cfg();
  const PolicyParams p = PolicyParams::init(cfg);
  std::mt19937_64 rng(10);
  const SignalRecord x = random_signal(rng, 16, 2);
  const EmbeddedInput input = assemble_input(project(encode_signal(x, p), p), {1}, p);

  TokenSequence a = random_ids(rng, 9, cfg.vocab_size);
  TokenSequence b = a;
  b[6] = (b[6] + 1) % cfg.vocab_size;
  b[8] = (b[8] + 5) % cfg.vocab_size;
  const auto lp_a = forward_logprobs(input, a, p);
  const auto lp_b = forward_logprobs(input, b, p);
  for (std::size_t t = 0; t < 6; ++t) CHECK(lp_a[t] == lp_b[t]);
  CHECK(lp_a[6] != lp_b[6]);  // same position, different token
}

TEST_CASE("sampling: determinism, greedy mode, logprob consistency") {
  const ModelConfig cfg = small_cfg();
  const PolicyParams p = PolicyParams::init(cfg);
  std::mt19937_64 rng(11);
  const SignalRecord x = random_signal(rng, 16, 2);
  const EmbeddedInput input = assemble_input(project(encode_signal(x, p), p), {2, 3}, p);
  const int eos = 0;

  const auto g1 = sample_group(input, 4, 1.0, 12, eos, p, 777);
  const auto g2 = sample_group(input, 4, 1.0, 12, eos, p, 777);
  REQUIRE(g1.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(g1[i].ids == g2[i].ids);
    CHECK(g1[i].logprobs == g2[i].logprobs);
  }

  // greedy: every sample equals the argmax rollout
  const auto greedy = sample_group(input, 3, 1.0, 12, eos, p, 42, /*greedy=*/true);
  for (const auto& roll : greedy) CHECK(roll.ids == greedy[0].ids);
  Eigen::Index argmax = 0;
  next_token_distribution(input, {}, p).maxCoeff(&argmax);
  CHECK(greedy[0].ids[0] == static_cast<int>(argmax));

  // reported logprobs equal the batched recomputation
  for (const auto& roll : g1) {
    const auto recomputed = forward_logprobs(input, roll.ids, p);
    REQUIRE(recomputed.size() == roll.logprobs.size());
    for (std::size_t t = 0; t < recomputed.size(); ++t) {
      CHECK(std::abs(recomputed[t] - roll.logprobs[t]) < 1e-9);
    }
  }

  // samples terminate at eos or the token budget
  for (const auto& roll : g1) {
    CHECK(roll.ids.size() <= 12);
    for (std::size_t t = 0; t + 1 < roll.ids.size(); ++t) CHECK(roll.ids[t] != eos);
  }
}

TEST_CASE("one-step sampling frequencies match the exact distribution") {
  const ModelConfig cfg = small_cfg();
  const PolicyParams p = PolicyParams::init(cfg);
  std::mt19937_64 rng(12);
  const SignalRecord x = random_signal(rng, 16, 2);
  const EmbeddedInput input = assemble_input(project(encode_signal(x, p), p), {4}, p);

  const Eigen::VectorXd probs = next_token_distribution(input, {}, p);
  const int n = 10000;
  const auto rolls = sample_group(input, n, 1.0, 1, /*eos=*/0, p, 2024);
  std::vector<int> counts(static_cast<std::size_t>(cfg.vocab_size), 0);
  for (const auto& roll : rolls) {
    REQUIRE(roll.ids.size() == 1);
    counts[static_cast<std::size_t>(roll.ids[0])]++;
  }
  for (int v = 0; v < cfg.vocab_size; ++v) {
    const double pv = probs(v);
    if (pv < 0.005) continue;
    const double freq = static_cast<double>(counts[static_cast<std::size_t>(v)]) / n;
    const double sigma = std::sqrt(pv * (1.0 - pv) / n);
    CHECK(std::abs(freq - pv) <= 3.0 * sigma + 1e-12);
  }
}

TEST_CASE("flat vector and named tensors are two views of one storage") {
  const ModelConfig cfg = small_cfg();
  PolicyParams p = PolicyParams::init(cfg);
  const PolicyParams q = p;
  CHECK((p.flat().array() == q.flat().array()).all());

  p.tensor("head.b")(0, 2) = 123.5;
  const TensorSpec& spec = p.layout()->spec("head.b");
  CHECK(p.flat()(spec.offset + 2 * 1) == 123.5);

  // init is a pure function of the config
  const PolicyParams r = PolicyParams::init(cfg);
  CHECK((r.flat().array() == q.flat().array()).all());
  ModelConfig other = cfg;
  other.seed = 4;
  CHECK_FALSE((PolicyParams::init(other).flat().array() == q.flat().array()).all());
}

TEST_CASE("checkpoints reload bit-exactly") {
  const ModelConfig cfg = small_cfg();
  const PolicyParams p = PolicyParams::init(cfg);
  const auto path = std::filesystem::temp_directory_path() / "sspo_test_ckpt.bin";
  save_checkpoint(path, p, {"NORM", "MI"});
  const Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.params.config() == cfg);
  CHECK(loaded.labels == std::vector<std::string>{"NORM", "MI"});
  CHECK((loaded.params.flat().array() == p.flat().array()).all());
  std::filesystem::remove(path);
}
