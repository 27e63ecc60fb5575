#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sspo/tokenizer.hpp"

namespace sspo {

// A multichannel signal; rows are time steps, columns are channels. The row
// count must be a positive multiple of the model's patch length.
struct SignalRecord {
  Eigen::MatrixXd samples;  // T x C
};

struct ModelConfig {
  int patch_len = 16;
  int channels = 4;  // input channel count; fixes the patch embedding shape
  int enc_layers = 2;
  int enc_dim = 32;
  int dec_layers = 2;
  int dec_dim = 32;
  int heads = 4;
  int vocab_size = 0;
  int max_seq = 160;
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Shape and flat-vector offset of one named parameter tensor.
struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::ptrdiff_t offset = 0;
};

class ParamLayout {
 public:
  static std::shared_ptr<const ParamLayout> create(const ModelConfig& cfg);

  const TensorSpec& spec(std::string_view name) const;  // throws on unknown name
  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  std::size_t total() const { return total_; }

 private:
  std::vector<TensorSpec> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t total_ = 0;
};

// All trainable scalars of the encoder, projector, embeddings, decoder and
// output head, addressable by name and as one flat vector. The flat vector
// is the storage; named tensors are views into it, so flatten/unflatten is
// the identity.
class PolicyParams {
 public:
  explicit PolicyParams(const ModelConfig& cfg);  // zero-initialized

  // Deterministic random initialization from cfg.seed.
  static PolicyParams init(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const std::shared_ptr<const ParamLayout>& layout() const { return layout_; }

  Eigen::VectorXd& flat() { return flat_; }
  const Eigen::VectorXd& flat() const { return flat_; }
  std::size_t size() const { return static_cast<std::size_t>(flat_.size()); }

  Eigen::Map<Eigen::MatrixXd> tensor(std::string_view name);
  Eigen::Map<const Eigen::MatrixXd> tensor(std::string_view name) const;

 private:
  ModelConfig cfg_;
  std::shared_ptr<const ParamLayout> layout_;
  Eigen::VectorXd flat_;
};

// Patch embedding plus pre-norm self-attention blocks; output is one row per
// non-overlapping patch. Deterministic given (x, params).
Eigen::MatrixXd encode_signal(const SignalRecord& x, const PolicyParams& params);

// Gradient of sum(out_weights ⊙ encode_signal(x)) with respect to x.
Eigen::MatrixXd encode_signal_vjp(const SignalRecord& x, const PolicyParams& params,
                                  const Eigen::MatrixXd& out_weights);

// Row-wise two-layer perceptron with exact-erf GELU between the layers; maps
// encoder features into the decoder embedding space.
Eigen::MatrixXd project(const Eigen::MatrixXd& z, const PolicyParams& params);

double gelu(double x);
double gelu_derivative(double x);

// A position-encoded joint prefix: projected signal rows followed by query
// token embeddings.
struct EmbeddedInput {
  Eigen::MatrixXd rows;
  int signal_rows = 0;
};

EmbeddedInput assemble_input(const Eigen::MatrixXd& h_ecg, const TokenSequence& query_ids,
                             const PolicyParams& params);

// Per-token log-probabilities of `target_ids` decoded autoregressively after
// the assembled input, under causal masking.
std::vector<double> forward_logprobs(const EmbeddedInput& input, const TokenSequence& target_ids,
                                     const PolicyParams& params);

// Exact next-token distribution after (input, prefix). Sums to 1.
Eigen::VectorXd next_token_distribution(const EmbeddedInput& input, const TokenSequence& prefix,
                                        const PolicyParams& params);

struct SampledRollout {
  TokenSequence ids;             // includes the terminating end token if emitted
  std::vector<double> logprobs;  // untempered log p of each sampled token
};

// g independent ancestral samples, each terminated at the end token or
// max_new tokens. Deterministic given rng_seed; sample i depends only on
// (rng_seed, i). With greedy=true the temperature is ignored and every
// sample is the argmax decode.
std::vector<SampledRollout> sample_group(const EmbeddedInput& input, int g, double temperature,
                                         int max_new, int eos_id, const PolicyParams& params,
                                         std::uint64_t rng_seed, bool greedy = false);

// One fused forward pass over (signal, query, target) with cached
// activations, exposing the exact analytic gradient of any token-weighted
// log-probability objective sum_t w_t * logprob_t.
//
// The PolicyParams passed at construction must outlive the graph and must
// not be mutated before backward() is called.
class PolicyAutograd {
 public:
  PolicyAutograd(const SignalRecord& x, const TokenSequence& query_ids,
                 const TokenSequence& target_ids, const PolicyParams& params);
  PolicyAutograd(PolicyAutograd&&) noexcept;
  PolicyAutograd& operator=(PolicyAutograd&&) noexcept;
  ~PolicyAutograd();

  const std::vector<double>& token_logprobs() const;
  double total_logprob() const;

  // d(sum_t token_weights[t] * logprob_t) / d(flat parameters).
  Eigen::VectorXd backward(const std::vector<double>& token_weights) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sspo
