#include "sspo/policy.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "sspo/rng.hpp"

namespace sspo {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMap = Eigen::Map<const Mat>;
using MMap = Eigen::Map<Mat>;

constexpr double kLnEps = 1e-5;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

CMap pt(const PolicyParams& p, std::string_view name) { return p.tensor(name); }

MMap gt(Vec& grad, const ParamLayout& layout, std::string_view name) {
  const TensorSpec& s = layout.spec(name);
  return MMap(grad.data() + s.offset, s.rows, s.cols);
}

// ---------------------------------------------------------------------------
// layer norm

struct LnCache {
  Vec rstd;
  Mat xhat;
};

Mat ln_forward(const Mat& x, CMap g, CMap b, LnCache* cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat y(n, d);
  if (cache) {
    cache->rstd.resize(n);
    cache->xhat.resize(n, d);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    Eigen::RowVectorXd xhat = (x.row(i).array() - mu) * rstd;
    y.row(i) = xhat.cwiseProduct(g.row(0)) + b.row(0);
    if (cache) {
      cache->rstd(i) = rstd;
      cache->xhat.row(i) = xhat;
    }
  }
  return y;
}

Mat ln_backward(const Mat& dy, const LnCache& cache, CMap g, MMap dg, MMap db) {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  Mat dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    dg.row(0) += dy.row(i).cwiseProduct(cache.xhat.row(i));
    db.row(0) += dy.row(i);
    Eigen::RowVectorXd dxhat = dy.row(i).cwiseProduct(g.row(0));
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(cache.xhat.row(i)).mean();
    dx.row(i) =
        cache.rstd(i) * (dxhat.array() - m1 - cache.xhat.row(i).array() * m2).matrix();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// transformer block (pre-norm attention + pre-norm GELU MLP)

struct BlockCache {
  LnCache ln1;
  Mat a;  // ln1 output
  Mat q, k, v;
  std::vector<Mat> probs;  // per-head attention weights
  Mat attn_concat;
  Mat x2;  // after the attention residual
  LnCache ln2;
  Mat mlp_in;  // ln2 output
  Mat m1;
  Mat gelu_out;
};

Mat softmax_rows_masked(Mat s, bool causal) {
  const Eigen::Index n = s.rows();
  if (causal) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < s.cols(); ++j) s(i, j) = kNegInf;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = s.row(i).maxCoeff();
    Eigen::RowVectorXd e = (s.row(i).array() - m).exp();
    s.row(i) = e / e.sum();
  }
  return s;
}

Mat block_forward(const Mat& x, const PolicyParams& p, const std::string& pre, bool causal,
                  BlockCache* c) {
  const Eigen::Index n = x.rows(), d = x.cols();
  const int heads = p.config().heads;
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  LnCache ln1_local;
  Mat a = ln_forward(x, pt(p, pre + "ln1.g"), pt(p, pre + "ln1.b"), c ? &c->ln1 : &ln1_local);

  Mat q = a * pt(p, pre + "attn.wq");
  q.rowwise() += pt(p, pre + "attn.bq").row(0);
  Mat k = a * pt(p, pre + "attn.wk");
  k.rowwise() += pt(p, pre + "attn.bk").row(0);
  Mat v = a * pt(p, pre + "attn.wv");
  v.rowwise() += pt(p, pre + "attn.bv").row(0);

  Mat attn_concat(n, d);
  std::vector<Mat> probs(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    auto qh = q.middleCols(h * dh, dh);
    auto kh = k.middleCols(h * dh, dh);
    auto vh = v.middleCols(h * dh, dh);
    Mat s = qh * kh.transpose() * scale;
    probs[static_cast<std::size_t>(h)] = softmax_rows_masked(std::move(s), causal);
    attn_concat.middleCols(h * dh, dh) = probs[static_cast<std::size_t>(h)] * vh;
  }

  Mat attn_out = attn_concat * pt(p, pre + "attn.wo");
  attn_out.rowwise() += pt(p, pre + "attn.bo").row(0);
  Mat x2 = x + attn_out;

  LnCache ln2_local;
  Mat mlp_in =
      ln_forward(x2, pt(p, pre + "ln2.g"), pt(p, pre + "ln2.b"), c ? &c->ln2 : &ln2_local);
  Mat m1 = mlp_in * pt(p, pre + "mlp.w1");
  m1.rowwise() += pt(p, pre + "mlp.b1").row(0);
  Mat gelu_out = m1.unaryExpr([](double t) { return gelu(t); });
  Mat m2 = gelu_out * pt(p, pre + "mlp.w2");
  m2.rowwise() += pt(p, pre + "mlp.b2").row(0);
  Mat out = x2 + m2;

  if (c) {
    c->a = std::move(a);
    c->q = std::move(q);
    c->k = std::move(k);
    c->v = std::move(v);
    c->probs = std::move(probs);
    c->attn_concat = std::move(attn_concat);
    c->x2 = std::move(x2);
    c->mlp_in = std::move(mlp_in);
    c->m1 = std::move(m1);
    c->gelu_out = std::move(gelu_out);
  }
  return out;
}

Mat block_backward(const Mat& dout, const PolicyParams& p, const std::string& pre, bool causal,
                   const BlockCache& c, Vec& grad) {
  (void)causal;  // masked attention weights are zero, which zeroes their grads
  const ParamLayout& layout = *p.layout();
  const Eigen::Index n = dout.rows(), d = dout.cols();
  const int heads = p.config().heads;
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // MLP path.
  gt(grad, layout, pre + "mlp.w2").noalias() += c.gelu_out.transpose() * dout;
  gt(grad, layout, pre + "mlp.b2").row(0) += dout.colwise().sum();
  Mat dgelu = dout * pt(p, pre + "mlp.w2").transpose();
  Mat dm1 = dgelu.cwiseProduct(c.m1.unaryExpr([](double t) { return gelu_derivative(t); }));
  gt(grad, layout, pre + "mlp.w1").noalias() += c.mlp_in.transpose() * dm1;
  gt(grad, layout, pre + "mlp.b1").row(0) += dm1.colwise().sum();
  Mat dmlp_in = dm1 * pt(p, pre + "mlp.w1").transpose();

  Mat dx2 = ln_backward(dmlp_in, c.ln2, pt(p, pre + "ln2.g"), gt(grad, layout, pre + "ln2.g"),
                        gt(grad, layout, pre + "ln2.b"));
  dx2 += dout;  // residual

  // Attention path.
  gt(grad, layout, pre + "attn.wo").noalias() += c.attn_concat.transpose() * dx2;
  gt(grad, layout, pre + "attn.bo").row(0) += dx2.colwise().sum();
  Mat dO = dx2 * pt(p, pre + "attn.wo").transpose();

  Mat dq(n, d), dk(n, d), dv(n, d);
  for (int h = 0; h < heads; ++h) {
    const Mat& ph = c.probs[static_cast<std::size_t>(h)];
    auto kh = c.k.middleCols(h * dh, dh);
    auto qh = c.q.middleCols(h * dh, dh);
    auto vh = c.v.middleCols(h * dh, dh);
    Mat dOh = dO.middleCols(h * dh, dh);
    Mat dP = dOh * vh.transpose();
    dv.middleCols(h * dh, dh).noalias() = ph.transpose() * dOh;
    Mat dS(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dot = dP.row(i).cwiseProduct(ph.row(i)).sum();
      dS.row(i) = ph.row(i).array() * (dP.row(i).array() - dot);
    }
    dq.middleCols(h * dh, dh).noalias() = dS * kh * scale;
    dk.middleCols(h * dh, dh).noalias() = dS.transpose() * qh * scale;
  }

  gt(grad, layout, pre + "attn.wq").noalias() += c.a.transpose() * dq;
  gt(grad, layout, pre + "attn.bq").row(0) += dq.colwise().sum();
  gt(grad, layout, pre + "attn.wk").noalias() += c.a.transpose() * dk;
  gt(grad, layout, pre + "attn.bk").row(0) += dk.colwise().sum();
  gt(grad, layout, pre + "attn.wv").noalias() += c.a.transpose() * dv;
  gt(grad, layout, pre + "attn.bv").row(0) += dv.colwise().sum();

  Mat da = dq * pt(p, pre + "attn.wq").transpose();
  da.noalias() += dk * pt(p, pre + "attn.wk").transpose();
  da.noalias() += dv * pt(p, pre + "attn.wv").transpose();

  Mat dx = ln_backward(da, c.ln1, pt(p, pre + "ln1.g"), gt(grad, layout, pre + "ln1.g"),
                       gt(grad, layout, pre + "ln1.b"));
  dx += dx2;  // residual
  return dx;
}

// ---------------------------------------------------------------------------
// stacks (blocks + final layer norm)

struct StackCache {
  std::vector<Mat> block_inputs;
  std::vector<BlockCache> blocks;
  LnCache lnf;
};

Mat stack_forward(const Mat& x0, const PolicyParams& p, const std::string& prefix, int layers,
                  bool causal, StackCache* c) {
  Mat x = x0;
  if (c) {
    c->block_inputs.clear();
    c->blocks.assign(static_cast<std::size_t>(layers), BlockCache{});
  }
  for (int i = 0; i < layers; ++i) {
    if (c) c->block_inputs.push_back(x);
    const std::string pre = prefix + ".l" + std::to_string(i) + ".";
    x = block_forward(x, p, pre, causal, c ? &c->blocks[static_cast<std::size_t>(i)] : nullptr);
  }
  LnCache lnf_local;
  return ln_forward(x, pt(p, prefix + ".lnf.g"), pt(p, prefix + ".lnf.b"),
                    c ? &c->lnf : &lnf_local);
}

Mat stack_backward(const Mat& dout, const PolicyParams& p, const std::string& prefix, int layers,
                   bool causal, const StackCache& c, Vec& grad) {
  const ParamLayout& layout = *p.layout();
  Mat dx = ln_backward(dout, c.lnf, pt(p, prefix + ".lnf.g"),
                       gt(grad, layout, prefix + ".lnf.g"), gt(grad, layout, prefix + ".lnf.b"));
  for (int i = layers - 1; i >= 0; --i) {
    const std::string pre = prefix + ".l" + std::to_string(i) + ".";
    dx = block_backward(dx, p, pre, causal, c.blocks[static_cast<std::size_t>(i)], grad);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// encoder and projector

Mat signal_patches(const SignalRecord& x, const ModelConfig& cfg) {
  const Eigen::Index t_len = x.samples.rows();
  const Eigen::Index channels = x.samples.cols();
  if (t_len <= 0 || channels != cfg.channels || t_len % cfg.patch_len != 0) {
    throw std::invalid_argument("encode_signal: signal shape does not match patch_len/channels");
  }
  if (!x.samples.allFinite()) {
    throw std::invalid_argument("encode_signal: signal contains non-finite values");
  }
  const Eigen::Index n_patches = t_len / cfg.patch_len;
  Mat patches(n_patches, cfg.patch_len * channels);
  for (Eigen::Index l = 0; l < n_patches; ++l) {
    for (Eigen::Index t = 0; t < cfg.patch_len; ++t) {
      for (Eigen::Index ch = 0; ch < channels; ++ch) {
        patches(l, t * channels + ch) = x.samples(l * cfg.patch_len + t, ch);
      }
    }
  }
  return patches;
}

struct EncoderCache {
  Mat patches;
  StackCache stack;
  Eigen::Index n_patches = 0;
};

Mat encoder_forward(const SignalRecord& x, const PolicyParams& p, EncoderCache* c) {
  const ModelConfig& cfg = p.config();
  Mat patches = signal_patches(x, cfg);
  const Eigen::Index n_patches = patches.rows();
  if (n_patches > cfg.max_seq) {
    throw std::invalid_argument("encode_signal: patch count exceeds max_seq");
  }
  Mat emb = patches * pt(p, "enc.patch.w");
  emb.rowwise() += pt(p, "enc.patch.b").row(0);
  emb += pt(p, "enc.pos").topRows(n_patches);
  Mat out = stack_forward(emb, p, "enc", cfg.enc_layers, /*causal=*/false,
                          c ? &c->stack : nullptr);
  if (c) {
    c->patches = std::move(patches);
    c->n_patches = n_patches;
  }
  return out;
}

// Returns the gradient with respect to the raw signal when requested.
Mat encoder_backward(const Mat& denc_out, const PolicyParams& p, const EncoderCache& c,
                     Vec& grad, bool want_input_grad) {
  const ModelConfig& cfg = p.config();
  const ParamLayout& layout = *p.layout();
  Mat demb = stack_backward(denc_out, p, "enc", cfg.enc_layers, /*causal=*/false, c.stack, grad);
  gt(grad, layout, "enc.pos").topRows(c.n_patches) += demb;
  gt(grad, layout, "enc.patch.w").noalias() += c.patches.transpose() * demb;
  gt(grad, layout, "enc.patch.b").row(0) += demb.colwise().sum();
  if (!want_input_grad) return {};
  Mat dpatches = demb * pt(p, "enc.patch.w").transpose();
  Mat dx(c.n_patches * cfg.patch_len, cfg.channels);
  for (Eigen::Index l = 0; l < c.n_patches; ++l) {
    for (Eigen::Index t = 0; t < cfg.patch_len; ++t) {
      for (Eigen::Index ch = 0; ch < cfg.channels; ++ch) {
        dx(l * cfg.patch_len + t, ch) = dpatches(l, t * cfg.channels + ch);
      }
    }
  }
  return dx;
}

struct ProjCache {
  Mat z_in, m1, gelu_out;
};

Mat proj_forward(const Mat& z, const PolicyParams& p, ProjCache* c) {
  if (z.cols() != p.config().enc_dim) {
    throw std::invalid_argument("project: input width must equal enc_dim");
  }
  Mat m1 = z * pt(p, "proj.w1");
  m1.rowwise() += pt(p, "proj.b1").row(0);
  Mat gelu_out = m1.unaryExpr([](double t) { return gelu(t); });
  Mat h = gelu_out * pt(p, "proj.w2");
  h.rowwise() += pt(p, "proj.b2").row(0);
  if (c) {
    c->z_in = z;
    c->m1 = std::move(m1);
    c->gelu_out = std::move(gelu_out);
  }
  return h;
}

Mat proj_backward(const Mat& dh, const PolicyParams& p, const ProjCache& c, Vec& grad) {
  const ParamLayout& layout = *p.layout();
  gt(grad, layout, "proj.w2").noalias() += c.gelu_out.transpose() * dh;
  gt(grad, layout, "proj.b2").row(0) += dh.colwise().sum();
  Mat dgelu = dh * pt(p, "proj.w2").transpose();
  Mat dm1 = dgelu.cwiseProduct(c.m1.unaryExpr([](double t) { return gelu_derivative(t); }));
  gt(grad, layout, "proj.w1").noalias() += c.z_in.transpose() * dm1;
  gt(grad, layout, "proj.b1").row(0) += dm1.colwise().sum();
  return dm1 * pt(p, "proj.w1").transpose();
}

void check_token_ids(const TokenSequence& ids, int vocab_size, const char* what) {
  for (int id : ids) {
    if (id < 0 || id >= vocab_size) {
      throw std::invalid_argument(std::string(what) + ": token id out of vocabulary range");
    }
  }
}

// Decoder input rows for positions [0, n): joint prefix plus target tokens,
// all position-encoded.
Mat decoder_rows(const EmbeddedInput& input, const TokenSequence& extra_ids,
                 const PolicyParams& p) {
  const ModelConfig& cfg = p.config();
  const Eigen::Index prefix_len = input.rows.rows();
  const Eigen::Index n = prefix_len + static_cast<Eigen::Index>(extra_ids.size());
  if (n > cfg.max_seq) {
    throw std::invalid_argument("decoder: combined sequence length exceeds max_seq");
  }
  check_token_ids(extra_ids, cfg.vocab_size, "decoder");
  Mat rows(n, cfg.dec_dim);
  rows.topRows(prefix_len) = input.rows;
  auto tok = pt(p, "dec.tok");
  auto pos = pt(p, "dec.pos");
  for (std::size_t i = 0; i < extra_ids.size(); ++i) {
    const Eigen::Index r = prefix_len + static_cast<Eigen::Index>(i);
    rows.row(r) = tok.row(extra_ids[i]) + pos.row(r);
  }
  return rows;
}

Eigen::RowVectorXd log_softmax_row(const Eigen::RowVectorXd& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

}  // namespace

// ---------------------------------------------------------------------------
// gelu

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }

double gelu_derivative(double x) {
  const double phi = std::exp(-0.5 * x * x) * 0.3989422804014326779399461;
  return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244)) + x * phi;
}

// ---------------------------------------------------------------------------
// config, layout, params

void ModelConfig::validate() const {
  if (patch_len < 1) throw std::invalid_argument("ModelConfig: patch_len must be >= 1");
  if (channels < 1) throw std::invalid_argument("ModelConfig: channels must be >= 1");
  if (enc_layers < 1 || dec_layers < 1) {
    throw std::invalid_argument("ModelConfig: layer counts must be >= 1");
  }
  if (heads < 1) throw std::invalid_argument("ModelConfig: heads must be >= 1");
  if (enc_dim < heads || enc_dim % heads != 0) {
    throw std::invalid_argument("ModelConfig: enc_dim must be divisible by heads");
  }
  if (dec_dim < heads || dec_dim % heads != 0) {
    throw std::invalid_argument("ModelConfig: dec_dim must be divisible by heads");
  }
  if (vocab_size < 2) throw std::invalid_argument("ModelConfig: vocab_size must be >= 2");
  if (max_seq < 2) throw std::invalid_argument("ModelConfig: max_seq must be >= 2");
}

std::shared_ptr<const ParamLayout> ParamLayout::create(const ModelConfig& cfg) {
  cfg.validate();
  auto layout = std::make_shared<ParamLayout>();
  auto add = [&](std::string name, int rows, int cols) {
    layout->index_.emplace(name, layout->tensors_.size());
    layout->tensors_.push_back(
        {std::move(name), rows, cols, static_cast<std::ptrdiff_t>(layout->total_)});
    layout->total_ += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  };
  auto add_block = [&](const std::string& pre, int d) {
    add(pre + "ln1.g", 1, d);
    add(pre + "ln1.b", 1, d);
    add(pre + "attn.wq", d, d);
    add(pre + "attn.bq", 1, d);
    add(pre + "attn.wk", d, d);
    add(pre + "attn.bk", 1, d);
    add(pre + "attn.wv", d, d);
    add(pre + "attn.bv", 1, d);
    add(pre + "attn.wo", d, d);
    add(pre + "attn.bo", 1, d);
    add(pre + "ln2.g", 1, d);
    add(pre + "ln2.b", 1, d);
    add(pre + "mlp.w1", d, 4 * d);
    add(pre + "mlp.b1", 1, 4 * d);
    add(pre + "mlp.w2", 4 * d, d);
    add(pre + "mlp.b2", 1, d);
  };

  add("enc.patch.w", cfg.patch_len * cfg.channels, cfg.enc_dim);
  add("enc.patch.b", 1, cfg.enc_dim);
  add("enc.pos", cfg.max_seq, cfg.enc_dim);
  for (int i = 0; i < cfg.enc_layers; ++i) add_block("enc.l" + std::to_string(i) + ".", cfg.enc_dim);
  add("enc.lnf.g", 1, cfg.enc_dim);
  add("enc.lnf.b", 1, cfg.enc_dim);
  add("proj.w1", cfg.enc_dim, cfg.dec_dim);
  add("proj.b1", 1, cfg.dec_dim);
  add("proj.w2", cfg.dec_dim, cfg.dec_dim);
  add("proj.b2", 1, cfg.dec_dim);
  add("dec.tok", cfg.vocab_size, cfg.dec_dim);
  add("dec.pos", cfg.max_seq, cfg.dec_dim);
  for (int i = 0; i < cfg.dec_layers; ++i) add_block("dec.l" + std::to_string(i) + ".", cfg.dec_dim);
  add("dec.lnf.g", 1, cfg.dec_dim);
  add("dec.lnf.b", 1, cfg.dec_dim);
  add("head.w", cfg.dec_dim, cfg.vocab_size);
  add("head.b", 1, cfg.vocab_size);
  return layout;
}

const TensorSpec& ParamLayout::spec(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw std::invalid_argument("ParamLayout: unknown tensor name: " + std::string(name));
  }
  return tensors_[it->second];
}

PolicyParams::PolicyParams(const ModelConfig& cfg)
    : cfg_(cfg), layout_(ParamLayout::create(cfg)) {
  flat_ = Vec::Zero(static_cast<Eigen::Index>(layout_->total()));
}

PolicyParams PolicyParams::init(const ModelConfig& cfg) {
  PolicyParams p(cfg);
  std::mt19937_64 rng(cfg.seed);
  for (const TensorSpec& s : p.layout_->tensors()) {
    auto view = p.tensor(s.name);
    const std::string leaf = s.name.substr(s.name.find_last_of('.') + 1);
    if (leaf[0] == 'g') {
      view.setOnes();
    } else if (leaf[0] == 'b') {
      view.setZero();
    } else if (leaf == "pos" || leaf == "tok") {
      for (Eigen::Index c = 0; c < view.cols(); ++c) {
        for (Eigen::Index r = 0; r < view.rows(); ++r) view(r, c) = 0.05 * normal01(rng);
      }
    } else {
      const double scale = 1.0 / std::sqrt(static_cast<double>(s.rows));
      for (Eigen::Index c = 0; c < view.cols(); ++c) {
        for (Eigen::Index r = 0; r < view.rows(); ++r) view(r, c) = scale * normal01(rng);
      }
    }
  }
  return p;
}

Eigen::Map<Eigen::MatrixXd> PolicyParams::tensor(std::string_view name) {
  const TensorSpec& s = layout_->spec(name);
  return {flat_.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<const Eigen::MatrixXd> PolicyParams::tensor(std::string_view name) const {
  const TensorSpec& s = layout_->spec(name);
  return {flat_.data() + s.offset, s.rows, s.cols};
}

// ---------------------------------------------------------------------------
// public forward ops

Eigen::MatrixXd encode_signal(const SignalRecord& x, const PolicyParams& params) {
  return encoder_forward(x, params, nullptr);
}

Eigen::MatrixXd encode_signal_vjp(const SignalRecord& x, const PolicyParams& params,
                                  const Eigen::MatrixXd& out_weights) {
  EncoderCache cache;
  Mat out = encoder_forward(x, params, &cache);
  if (out_weights.rows() != out.rows() || out_weights.cols() != out.cols()) {
    throw std::invalid_argument("encode_signal_vjp: weight shape mismatch");
  }
  Vec grad = Vec::Zero(static_cast<Eigen::Index>(params.size()));
  return encoder_backward(out_weights, params, cache, grad, /*want_input_grad=*/true);
}

Eigen::MatrixXd project(const Eigen::MatrixXd& z, const PolicyParams& params) {
  return proj_forward(z, params, nullptr);
}

EmbeddedInput assemble_input(const Eigen::MatrixXd& h_ecg, const TokenSequence& query_ids,
                             const PolicyParams& params) {
  const ModelConfig& cfg = params.config();
  if (h_ecg.cols() != cfg.dec_dim) {
    throw std::invalid_argument("assemble_input: h_ecg width must equal dec_dim");
  }
  check_token_ids(query_ids, cfg.vocab_size, "assemble_input");
  const Eigen::Index n = h_ecg.rows() + static_cast<Eigen::Index>(query_ids.size());
  if (n > cfg.max_seq) {
    throw std::invalid_argument("assemble_input: combined length exceeds max_seq");
  }
  EmbeddedInput input;
  input.signal_rows = static_cast<int>(h_ecg.rows());
  input.rows.resize(n, cfg.dec_dim);
  input.rows.topRows(h_ecg.rows()) = h_ecg;
  auto tok = pt(params, "dec.tok");
  for (std::size_t i = 0; i < query_ids.size(); ++i) {
    input.rows.row(h_ecg.rows() + static_cast<Eigen::Index>(i)) = tok.row(query_ids[i]);
  }
  input.rows += pt(params, "dec.pos").topRows(n);
  return input;
}

std::vector<double> forward_logprobs(const EmbeddedInput& input, const TokenSequence& target_ids,
                                     const PolicyParams& params) {
  const ModelConfig& cfg = params.config();
  if (input.rows.rows() < 1) {
    throw std::invalid_argument("forward_logprobs: input must have at least one row");
  }
  if (target_ids.empty()) return {};
  Mat rows = decoder_rows(input, target_ids, params);
  Mat out = stack_forward(rows, params, "dec", cfg.dec_layers, /*causal=*/true, nullptr);

  const Eigen::Index prefix_len = input.rows.rows();
  const Eigen::Index m = static_cast<Eigen::Index>(target_ids.size());
  Mat logits = out.middleRows(prefix_len - 1, m) * pt(params, "head.w");
  logits.rowwise() += pt(params, "head.b").row(0);

  std::vector<double> lps(target_ids.size());
  for (Eigen::Index t = 0; t < m; ++t) {
    lps[static_cast<std::size_t>(t)] =
        log_softmax_row(logits.row(t))(target_ids[static_cast<std::size_t>(t)]);
  }
  return lps;
}

Eigen::VectorXd next_token_distribution(const EmbeddedInput& input, const TokenSequence& prefix,
                                        const PolicyParams& params) {
  const ModelConfig& cfg = params.config();
  Mat rows = decoder_rows(input, prefix, params);
  Mat out = stack_forward(rows, params, "dec", cfg.dec_layers, /*causal=*/true, nullptr);
  Eigen::RowVectorXd logits =
      out.row(rows.rows() - 1) * pt(params, "head.w") + pt(params, "head.b").row(0);
  Eigen::RowVectorXd lp = log_softmax_row(logits);
  return lp.array().exp().matrix().transpose();
}

// ---------------------------------------------------------------------------
// sampling with per-layer K/V caches

namespace {

struct LayerKV {
  Mat k, v;  // filled rows [0, len)
};

struct SamplerState {
  std::vector<LayerKV> layers;
  Eigen::Index len = 0;
  Eigen::RowVectorXd last_logits;
};

// Runs the joint prefix as a batch, capturing per-layer keys/values and the
// logits after the final prefix row.
SamplerState prefill(const EmbeddedInput& input, const PolicyParams& p) {
  const ModelConfig& cfg = p.config();
  SamplerState st;
  st.layers.resize(static_cast<std::size_t>(cfg.dec_layers));
  for (auto& l : st.layers) {
    l.k.resize(cfg.max_seq, cfg.dec_dim);
    l.v.resize(cfg.max_seq, cfg.dec_dim);
  }
  StackCache cache;
  Mat out = stack_forward(input.rows, p, "dec", cfg.dec_layers, /*causal=*/true, &cache);
  st.len = input.rows.rows();
  for (int i = 0; i < cfg.dec_layers; ++i) {
    st.layers[static_cast<std::size_t>(i)].k.topRows(st.len) =
        cache.blocks[static_cast<std::size_t>(i)].k;
    st.layers[static_cast<std::size_t>(i)].v.topRows(st.len) =
        cache.blocks[static_cast<std::size_t>(i)].v;
  }
  st.last_logits = out.row(st.len - 1) * pt(p, "head.w") + pt(p, "head.b").row(0);
  return st;
}

// Appends one token at absolute position st.len and refreshes last_logits.
void sampler_step(SamplerState& st, int token_id, const PolicyParams& p) {
  const ModelConfig& cfg = p.config();
  const Eigen::Index dh = cfg.dec_dim / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index pos = st.len;

  Mat row = pt(p, "dec.tok").row(token_id) + pt(p, "dec.pos").row(pos);
  for (int li = 0; li < cfg.dec_layers; ++li) {
    const std::string pre = "dec.l" + std::to_string(li) + ".";
    LayerKV& kv = st.layers[static_cast<std::size_t>(li)];

    Mat a = ln_forward(row, pt(p, pre + "ln1.g"), pt(p, pre + "ln1.b"), nullptr);
    Mat q = a * pt(p, pre + "attn.wq") + pt(p, pre + "attn.bq");
    kv.k.row(pos) = (a * pt(p, pre + "attn.wk") + pt(p, pre + "attn.bk")).row(0);
    kv.v.row(pos) = (a * pt(p, pre + "attn.wv") + pt(p, pre + "attn.bv")).row(0);

    Mat concat(1, cfg.dec_dim);
    for (int h = 0; h < cfg.heads; ++h) {
      auto kh = kv.k.block(0, h * dh, pos + 1, dh);
      auto vh = kv.v.block(0, h * dh, pos + 1, dh);
      Eigen::RowVectorXd s = q.middleCols(h * dh, dh) * kh.transpose() * scale;
      const double m = s.maxCoeff();
      Eigen::RowVectorXd e = (s.array() - m).exp();
      e /= e.sum();
      concat.middleCols(h * dh, dh) = e * vh;
    }
    Mat attn_out = concat * pt(p, pre + "attn.wo") + pt(p, pre + "attn.bo");
    Mat x2 = row + attn_out;
    Mat b = ln_forward(x2, pt(p, pre + "ln2.g"), pt(p, pre + "ln2.b"), nullptr);
    Mat m1 = b * pt(p, pre + "mlp.w1") + pt(p, pre + "mlp.b1");
    Mat g = m1.unaryExpr([](double t) { return gelu(t); });
    row = x2 + (g * pt(p, pre + "mlp.w2") + pt(p, pre + "mlp.b2"));
  }
  Mat y = ln_forward(row, pt(p, "dec.lnf.g"), pt(p, "dec.lnf.b"), nullptr);
  st.last_logits = y.row(0) * pt(p, "head.w") + pt(p, "head.b").row(0);
  st.len = pos + 1;
}

int pick_token(const Eigen::RowVectorXd& logits, double temperature, bool greedy,
               std::mt19937_64& rng) {
  if (greedy) {
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    return static_cast<int>(best);
  }
  Eigen::RowVectorXd lp = log_softmax_row(logits / temperature);
  Eigen::RowVectorXd probs = lp.array().exp();
  const double u = uniform01(rng);
  double cum = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    cum += probs(i);
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);
}

}  // namespace

std::vector<SampledRollout> sample_group(const EmbeddedInput& input, int g, double temperature,
                                         int max_new, int eos_id, const PolicyParams& params,
                                         std::uint64_t rng_seed, bool greedy) {
  if (g < 1) throw std::invalid_argument("sample_group: g must be >= 1");
  if (!greedy && temperature <= 0.0) {
    throw std::invalid_argument("sample_group: temperature must be positive");
  }
  const ModelConfig& cfg = params.config();
  if (eos_id < 0 || eos_id >= cfg.vocab_size) {
    throw std::invalid_argument("sample_group: eos_id out of range");
  }
  const SamplerState prefilled = prefill(input, params);
  const Eigen::Index budget =
      std::min<Eigen::Index>(max_new, cfg.max_seq - prefilled.len);

  std::vector<SampledRollout> out(static_cast<std::size_t>(g));
  for (int s = 0; s < g; ++s) {
    std::mt19937_64 rng(mix_seed(rng_seed, static_cast<std::uint64_t>(s)));
    SamplerState st = prefilled;
    SampledRollout& roll = out[static_cast<std::size_t>(s)];
    for (Eigen::Index step = 0; step < budget; ++step) {
      const int id = pick_token(st.last_logits, temperature, greedy, rng);
      roll.ids.push_back(id);
      roll.logprobs.push_back(log_softmax_row(st.last_logits)(id));
      if (id == eos_id) break;
      if (step + 1 < budget) sampler_step(st, id, params);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// fused forward/backward graph

struct PolicyAutograd::Impl {
  const PolicyParams* params = nullptr;
  EncoderCache enc;
  ProjCache proj;
  TokenSequence query, target;
  Eigen::Index input_len = 0;  // signal rows + query tokens
  StackCache dec;
  Mat head_in;  // rows feeding the output head
  Mat probs;    // M x V softmax rows
  std::vector<double> logprobs;
  double total = 0.0;
};

PolicyAutograd::PolicyAutograd(const SignalRecord& x, const TokenSequence& query_ids,
                               const TokenSequence& target_ids, const PolicyParams& params)
    : impl_(std::make_unique<Impl>()) {
  if (target_ids.empty()) {
    throw std::invalid_argument("PolicyAutograd: target must be non-empty");
  }
  const ModelConfig& cfg = params.config();
  check_token_ids(query_ids, cfg.vocab_size, "PolicyAutograd");
  check_token_ids(target_ids, cfg.vocab_size, "PolicyAutograd");

  impl_->params = &params;
  impl_->query = query_ids;
  impl_->target = target_ids;

  Mat enc_out = encoder_forward(x, params, &impl_->enc);
  Mat h = proj_forward(enc_out, params, &impl_->proj);

  const Eigen::Index sig_rows = h.rows();
  const Eigen::Index q_len = static_cast<Eigen::Index>(query_ids.size());
  const Eigen::Index m = static_cast<Eigen::Index>(target_ids.size());
  impl_->input_len = sig_rows + q_len;
  const Eigen::Index n = impl_->input_len + m;
  if (n > cfg.max_seq) {
    throw std::invalid_argument("PolicyAutograd: combined sequence length exceeds max_seq");
  }

  Mat rows(n, cfg.dec_dim);
  rows.topRows(sig_rows) = h;
  auto tok = pt(params, "dec.tok");
  for (Eigen::Index i = 0; i < q_len; ++i) {
    rows.row(sig_rows + i) = tok.row(query_ids[static_cast<std::size_t>(i)]);
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    rows.row(impl_->input_len + i) = tok.row(target_ids[static_cast<std::size_t>(i)]);
  }
  rows += pt(params, "dec.pos").topRows(n);

  Mat out = stack_forward(rows, params, "dec", cfg.dec_layers, /*causal=*/true, &impl_->dec);
  impl_->head_in = out.middleRows(impl_->input_len - 1, m);
  Mat logits = impl_->head_in * pt(params, "head.w");
  logits.rowwise() += pt(params, "head.b").row(0);

  impl_->probs.resize(m, cfg.vocab_size);
  impl_->logprobs.resize(target_ids.size());
  for (Eigen::Index t = 0; t < m; ++t) {
    Eigen::RowVectorXd lp = log_softmax_row(logits.row(t));
    impl_->probs.row(t) = lp.array().exp();
    impl_->logprobs[static_cast<std::size_t>(t)] = lp(target_ids[static_cast<std::size_t>(t)]);
    impl_->total += lp(target_ids[static_cast<std::size_t>(t)]);
  }
}

PolicyAutograd::PolicyAutograd(PolicyAutograd&&) noexcept = default;
PolicyAutograd& PolicyAutograd::operator=(PolicyAutograd&&) noexcept = default;
PolicyAutograd::~PolicyAutograd() = default;

const std::vector<double>& PolicyAutograd::token_logprobs() const { return impl_->logprobs; }

double PolicyAutograd::total_logprob() const { return impl_->total; }

Eigen::VectorXd PolicyAutograd::backward(const std::vector<double>& token_weights) const {
  const Impl& im = *impl_;
  const PolicyParams& p = *im.params;
  const ModelConfig& cfg = p.config();
  const ParamLayout& layout = *p.layout();
  if (token_weights.size() != im.target.size()) {
    throw std::invalid_argument("PolicyAutograd::backward: weight count mismatch");
  }

  const Eigen::Index m = static_cast<Eigen::Index>(im.target.size());
  const Eigen::Index n = im.input_len + m;
  Vec grad = Vec::Zero(static_cast<Eigen::Index>(p.size()));

  Mat dlogits(m, cfg.vocab_size);
  for (Eigen::Index t = 0; t < m; ++t) {
    const double w = token_weights[static_cast<std::size_t>(t)];
    dlogits.row(t) = -w * im.probs.row(t);
    dlogits(t, im.target[static_cast<std::size_t>(t)]) += w;
  }

  gt(grad, layout, "head.w").noalias() += im.head_in.transpose() * dlogits;
  gt(grad, layout, "head.b").row(0) += dlogits.colwise().sum();

  Mat dstack = Mat::Zero(n, cfg.dec_dim);
  dstack.middleRows(im.input_len - 1, m) = dlogits * pt(p, "head.w").transpose();

  Mat drows = stack_backward(dstack, p, "dec", cfg.dec_layers, /*causal=*/true, im.dec, grad);

  gt(grad, layout, "dec.pos").topRows(n) += drows;
  auto dtok = gt(grad, layout, "dec.tok");
  const Eigen::Index sig_rows = im.enc.n_patches;
  for (std::size_t i = 0; i < im.query.size(); ++i) {
    dtok.row(im.query[i]) += drows.row(sig_rows + static_cast<Eigen::Index>(i));
  }
  for (std::size_t i = 0; i < im.target.size(); ++i) {
    dtok.row(im.target[i]) += drows.row(im.input_len + static_cast<Eigen::Index>(i));
  }

  Mat dh = drows.topRows(sig_rows);
  Mat denc = proj_backward(dh, p, im.proj, grad);
  encoder_backward(denc, p, im.enc, grad, /*want_input_grad=*/false);
  return grad;
}

}  // namespace sspo
