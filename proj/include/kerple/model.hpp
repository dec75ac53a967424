// Copyright 2026 The kerple-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// A small byte-level causal decoder with hand-written reverse-mode adjoints,
// so the network weights and the per-head kernel parameters are trained
// jointly. Kernel parameters are stored unconstrained and pushed through the
// constraint bijections; one spec per head, shared across layers.

#ifndef KERPLE_MODEL_HPP
#define KERPLE_MODEL_HPP

#include <Eigen/Dense>

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kerple/attention.hpp"
#include "kerple/kernels.hpp"

namespace kerple {

struct OptimizerConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const OptimizerConfig&) const = default;
};

struct ModelConfig {
  int vocab_size = 256;  // byte-level tokenizer
  int layers = 2;
  int heads = 4;
  int head_dim = 8;
  int mlp_hidden = 64;
  int train_len = 64;
  int batch_size = 8;
  long long steps = 2000;
  std::uint64_t seed = 0;
  Variant variant = Variant::log;
  OptimizerConfig opt;

  int d_model() const { return heads * head_dim; }
  bool operator==(const ModelConfig&) const = default;
};

inline void validate(const ModelConfig& c) {
  if (c.vocab_size < 1 || c.layers < 1 || c.heads < 1 || c.head_dim < 1 ||
      c.mlp_hidden < 1 || c.batch_size < 1 || c.steps < 0)
    throw std::invalid_argument("model config fields must be positive");
  if (c.train_len < 2) throw std::invalid_argument("train_len must be >= 2");
}

inline void to_json(nlohmann::json& j, const OptimizerConfig& o) {
  j = {{"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps}};
}
inline void from_json(const nlohmann::json& j, OptimizerConfig& o) {
  j.at("lr").get_to(o.lr);
  j.at("beta1").get_to(o.beta1);
  j.at("beta2").get_to(o.beta2);
  j.at("eps").get_to(o.eps);
}
inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"layers", c.layers},
       {"heads", c.heads},           {"head_dim", c.head_dim},
       {"mlp_hidden", c.mlp_hidden}, {"train_len", c.train_len},
       {"batch_size", c.batch_size}, {"steps", c.steps},
       {"seed", c.seed},             {"variant", variant_name(c.variant)},
       {"opt", c.opt}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("layers").get_to(c.layers);
  j.at("heads").get_to(c.heads);
  j.at("head_dim").get_to(c.head_dim);
  j.at("mlp_hidden").get_to(c.mlp_hidden);
  j.at("train_len").get_to(c.train_len);
  j.at("batch_size").get_to(c.batch_size);
  j.at("steps").get_to(c.steps);
  j.at("seed").get_to(c.seed);
  c.variant = variant_from_name(j.at("variant").get<std::string>());
  j.at("opt").get_to(c.opt);
}

// Plain-text key-value config file ("# kerple-config v1"). Keys mirror the
// struct fields; unknown keys are an error.
inline ModelConfig load_model_config(std::istream& is) {
  ModelConfig c;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "vocab_size") ls >> c.vocab_size;
    else if (key == "layers") ls >> c.layers;
    else if (key == "heads") ls >> c.heads;
    else if (key == "head_dim") ls >> c.head_dim;
    else if (key == "mlp_hidden") ls >> c.mlp_hidden;
    else if (key == "train_len") ls >> c.train_len;
    else if (key == "batch_size") ls >> c.batch_size;
    else if (key == "steps") ls >> c.steps;
    else if (key == "seed") ls >> c.seed;
    else if (key == "lr") ls >> c.opt.lr;
    else if (key == "beta1") ls >> c.opt.beta1;
    else if (key == "beta2") ls >> c.opt.beta2;
    else if (key == "eps") ls >> c.opt.eps;
    else if (key == "variant") {
      std::string name;
      ls >> name;
      c.variant = variant_from_name(name);
    } else {
      throw std::runtime_error("config: unknown key '" + key + "'");
    }
    if (ls.fail()) throw std::runtime_error("config: bad value for key '" + key + "'");
  }
  validate(c);
  return c;
}

inline ModelConfig load_model_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  return load_model_config(is);
}

inline void save_model_config(std::ostream& os, const ModelConfig& c) {
  os << "# kerple-config v1\n";
  os << "vocab_size " << c.vocab_size << "\n";
  os << "layers " << c.layers << "\n";
  os << "heads " << c.heads << "\n";
  os << "head_dim " << c.head_dim << "\n";
  os << "mlp_hidden " << c.mlp_hidden << "\n";
  os << "train_len " << c.train_len << "\n";
  os << "batch_size " << c.batch_size << "\n";
  os << "steps " << c.steps << "\n";
  os << "seed " << c.seed << "\n";
  os << "variant " << variant_name(c.variant) << "\n";
  os.precision(17);
  os << "lr " << c.opt.lr << "\n";
  os << "beta1 " << c.opt.beta1 << "\n";
  os << "beta2 " << c.opt.beta2 << "\n";
  os << "eps " << c.opt.eps << "\n";
}

// --- parameters ------------------------------------------------------------

struct LayerParams {
  Eigen::MatrixXd wq, wk, wv, wo;  // d_model x d_model
  Eigen::MatrixXd w1, w2;          // d_model x mlp, mlp x d_model
  Eigen::VectorXd b1, b2;
  Eigen::VectorXd ln1_g, ln1_b, ln2_g, ln2_b;
};

struct Parameters {
  Eigen::MatrixXd embed;  // vocab x d_model
  std::vector<LayerParams> layers;
  Eigen::VectorXd lnf_g, lnf_b;
  Eigen::MatrixXd w_out;  // d_model x vocab
  Eigen::VectorXd b_out;
  std::vector<ParamVector> kernel;  // one per head, shared across layers
};

struct TensorRef {
  std::string name;
  double* data;
  std::int64_t size;
};

inline std::vector<TensorRef> tensor_refs(Parameters& p) {
  std::vector<TensorRef> refs;
  auto add = [&refs](const std::string& name, auto& m) {
    refs.push_back({name, m.data(), static_cast<std::int64_t>(m.size())});
  };
  add("embed", p.embed);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& lp = p.layers[l];
    const std::string prefix = "layer." + std::to_string(l) + ".";
    add(prefix + "ln1_g", lp.ln1_g);
    add(prefix + "ln1_b", lp.ln1_b);
    add(prefix + "wq", lp.wq);
    add(prefix + "wk", lp.wk);
    add(prefix + "wv", lp.wv);
    add(prefix + "wo", lp.wo);
    add(prefix + "ln2_g", lp.ln2_g);
    add(prefix + "ln2_b", lp.ln2_b);
    add(prefix + "w1", lp.w1);
    add(prefix + "b1", lp.b1);
    add(prefix + "w2", lp.w2);
    add(prefix + "b2", lp.b2);
  }
  add("lnf_g", p.lnf_g);
  add("lnf_b", p.lnf_b);
  add("w_out", p.w_out);
  add("b_out", p.b_out);
  for (std::size_t h = 0; h < p.kernel.size(); ++h) {
    auto& raw = p.kernel[h].raw;
    if (!raw.empty())
      refs.push_back({"kernel." + std::to_string(h) + ".raw", raw.data(),
                      static_cast<std::int64_t>(raw.size())});
  }
  return refs;
}

inline Parameters zeros_like_shapes(const ModelConfig& c) {
  const int dm = c.d_model();
  Parameters p;
  p.embed = Eigen::MatrixXd::Zero(c.vocab_size, dm);
  p.layers.resize(c.layers);
  for (auto& lp : p.layers) {
    lp.wq = Eigen::MatrixXd::Zero(dm, dm);
    lp.wk = Eigen::MatrixXd::Zero(dm, dm);
    lp.wv = Eigen::MatrixXd::Zero(dm, dm);
    lp.wo = Eigen::MatrixXd::Zero(dm, dm);
    lp.w1 = Eigen::MatrixXd::Zero(dm, c.mlp_hidden);
    lp.w2 = Eigen::MatrixXd::Zero(c.mlp_hidden, dm);
    lp.b1 = Eigen::VectorXd::Zero(c.mlp_hidden);
    lp.b2 = Eigen::VectorXd::Zero(dm);
    lp.ln1_g = Eigen::VectorXd::Zero(dm);
    lp.ln1_b = Eigen::VectorXd::Zero(dm);
    lp.ln2_g = Eigen::VectorXd::Zero(dm);
    lp.ln2_b = Eigen::VectorXd::Zero(dm);
  }
  p.lnf_g = Eigen::VectorXd::Zero(dm);
  p.lnf_b = Eigen::VectorXd::Zero(dm);
  p.w_out = Eigen::MatrixXd::Zero(dm, c.vocab_size);
  p.b_out = Eigen::VectorXd::Zero(c.vocab_size);
  p.kernel.resize(c.heads);
  for (int h = 0; h < c.heads; ++h) {
    p.kernel[h].mapping = param_mappings(c.variant);
    p.kernel[h].raw.assign(p.kernel[h].mapping.size(), 0.0);
  }
  return p;
}

inline Parameters init_parameters(const ModelConfig& c) {
  validate(c);
  Parameters p = zeros_like_shapes(c);
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  auto fill = [&](Eigen::MatrixXd& m) {
    for (std::int64_t i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  };
  fill(p.embed);
  for (auto& lp : p.layers) {
    fill(lp.wq);
    fill(lp.wk);
    fill(lp.wv);
    fill(lp.wo);
    fill(lp.w1);
    fill(lp.w2);
    lp.ln1_g.setOnes();
    lp.ln2_g.setOnes();
  }
  p.lnf_g.setOnes();
  // w_out stays zero: the untrained model emits exactly uniform logits.
  for (int h = 0; h < c.heads; ++h) {
    const KernelSpec spec = default_spec(c.variant, h, c.heads);
    p.kernel[h] = ParamVector::from_constrained(c.variant, spec.params);
  }
  return p;
}

// Constrained view of head h's kernel as a KernelSpec.
inline KernelSpec head_spec(const ModelConfig& c, const Parameters& p, int head) {
  return make_spec(c.variant, p.kernel[head].constrained(), head, c.heads);
}

inline std::vector<KernelSpec> catalog_from_params(const ModelConfig& c, const Parameters& p) {
  std::vector<KernelSpec> specs;
  specs.reserve(c.heads);
  for (int h = 0; h < c.heads; ++h) specs.push_back(head_spec(c, p, h));
  return specs;
}

// --- checkpoint ------------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  Parameters params;
  long long step = 0;
};

inline constexpr char kCheckpointMagic[8] = {'K', 'E', 'R', 'P', 'L', 'E', 'C', '1'};

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  auto refs = tensor_refs(const_cast<Parameters&>(ckpt.params));
  nlohmann::json header;
  header["format"] = "kerple-checkpoint";
  header["version"] = 1;
  header["step"] = ckpt.step;
  header["config"] = ckpt.config;
  auto& tensors = header["tensors"] = nlohmann::json::array();
  for (const auto& r : refs) tensors.push_back({{"name", r.name}, {"size", r.size}});
  const std::string header_str = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t header_len = header_str.size();
  os.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& r : refs)
    os.write(reinterpret_cast<const char*>(r.data),
             static_cast<std::streamsize>(r.size * sizeof(double)));
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a kerple checkpoint: " + path);
  std::uint64_t header_len = 0;
  is.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  std::string header_str(header_len, '\0');
  is.read(header_str.data(), static_cast<std::streamsize>(header_len));
  const nlohmann::json header = nlohmann::json::parse(header_str);
  if (header.at("version").get<int>() != 1)
    throw std::runtime_error("unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.config = header.at("config").get<ModelConfig>();
  ckpt.step = header.at("step").get<long long>();
  ckpt.params = zeros_like_shapes(ckpt.config);
  for (int h = 0; h < ckpt.config.heads; ++h) {
    const KernelSpec spec = default_spec(ckpt.config.variant, h, ckpt.config.heads);
    ckpt.params.kernel[h] = ParamVector::from_constrained(ckpt.config.variant, spec.params);
  }
  auto refs = tensor_refs(ckpt.params);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != refs.size())
    throw std::runtime_error("checkpoint tensor manifest does not match config");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (tensors[i].at("name").get<std::string>() != refs[i].name ||
        tensors[i].at("size").get<std::int64_t>() != refs[i].size)
      throw std::runtime_error("checkpoint tensor '" + refs[i].name + "' mismatch");
    is.read(reinterpret_cast<char*>(refs[i].data),
            static_cast<std::streamsize>(refs[i].size * sizeof(double)));
  }
  if (!is) throw std::runtime_error("truncated checkpoint: " + path);
  return ckpt;
}

inline Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!(ckpt.config == expected))
    throw std::runtime_error("checkpoint config does not match the expected config");
  return ckpt;
}

// --- batches ---------------------------------------------------------------

struct Batch {
  // batch_size rows of train_len + 1 token ids; inputs are the first
  // train_len, targets the last train_len.
  std::vector<std::vector<int>> token_ids;
};

inline void validate_tokens(const std::vector<int>& tokens, int vocab_size) {
  for (int id : tokens)
    if (id < 0 || id >= vocab_size)
      throw std::out_of_range("token id " + std::to_string(id) + " outside [0, " +
                              std::to_string(vocab_size) + ")");
}

// --- forward / backward ----------------------------------------------------

namespace detail {

inline constexpr double kLnEps = 1e-5;

inline double gelu(double x) {
  constexpr double kAlpha = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(kAlpha * (x + 0.044715 * x * x * x)));
}

inline double gelu_derivative(double x) {
  constexpr double kAlpha = 0.7978845608028654;
  const double u = kAlpha * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = kAlpha * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

// y = g * (x - mean) / sqrt(var + eps) + b, row-wise.
inline void layernorm_forward(const Eigen::MatrixXd& x, const Eigen::VectorXd& g,
                              const Eigen::VectorXd& b, Eigen::MatrixXd& xhat,
                              Eigen::VectorXd& rstd, Eigen::MatrixXd& y) {
  const int rows = static_cast<int>(x.rows());
  const int cols = static_cast<int>(x.cols());
  xhat.resize(rows, cols);
  y.resize(rows, cols);
  rstd.resize(rows);
  for (int r = 0; r < rows; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    rstd(r) = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(r) = ((x.row(r).array() - mean) * rstd(r)).matrix();
    y.row(r) = xhat.row(r).cwiseProduct(g.transpose()) + b.transpose();
  }
}

inline Eigen::MatrixXd layernorm_backward(const Eigen::MatrixXd& dy,
                                          const Eigen::MatrixXd& xhat,
                                          const Eigen::VectorXd& rstd,
                                          const Eigen::VectorXd& g, Eigen::VectorXd& dg,
                                          Eigen::VectorXd& db) {
  const int rows = static_cast<int>(dy.rows());
  const int cols = static_cast<int>(dy.cols());
  Eigen::MatrixXd dx(rows, cols);
  for (int r = 0; r < rows; ++r) {
    dg += dy.row(r).cwiseProduct(xhat.row(r)).transpose();
    db += dy.row(r).transpose();
    const Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(g.transpose());
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
    dx.row(r) = (rstd(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2)).matrix();
  }
  return dx;
}

struct LayerCache {
  Eigen::MatrixXd attn_in;              // residual-stream input to the block
  Eigen::MatrixXd xhat1, xn1;
  Eigen::VectorXd rstd1;
  Eigen::MatrixXd q, k, v;              // L x d_model
  std::vector<Eigen::MatrixXd> attn;    // per-head attention weights, L x L
  Eigen::MatrixXd head_out;             // concatenated head outputs
  Eigen::MatrixXd mlp_in;
  Eigen::MatrixXd xhat2, xn2;
  Eigen::VectorXd rstd2;
  Eigen::MatrixXd h_pre, h_act;
};

struct SequenceCache {
  std::vector<int> inputs, targets;
  std::vector<LayerCache> layers;
  Eigen::MatrixXd final_in, xhatf, xnf;
  Eigen::VectorXd rstdf;
  Eigen::MatrixXd probs;                // L x vocab softmax of logits
  std::vector<double> losses;           // per-position next-token loss, nats
};

}  // namespace detail

// Per-head bias/weight matrices at a given length, built from the current
// unconstrained kernel parameters.
struct KernelMatrices {
  std::vector<BiasMatrix> bias;
  std::vector<std::optional<WeightMatrix>> weight;
};

inline KernelMatrices build_kernel_matrices(const ModelConfig& c, const Parameters& p,
                                            int length) {
  KernelMatrices km;
  km.bias.reserve(c.heads);
  km.weight.reserve(c.heads);
  for (int h = 0; h < c.heads; ++h) {
    auto [bias, weight] = build_matrices(head_spec(c, p, h), length);
    km.bias.push_back(std::move(bias));
    km.weight.push_back(std::move(weight));
  }
  return km;
}

struct ForwardResult {
  double loss = 0.0;
  std::vector<detail::SequenceCache> sequences;
  KernelMatrices kernel_matrices;
  // Identity of the (params, batch) pair the caches belong to; backward
  // rejects stale caches.
  const void* params_tag = nullptr;
  const void* batch_tag = nullptr;
};

namespace detail {

// Forward for one sequence. tokens has length L+1; returns L per-position
// losses in cache.losses. window = 0 means full causal attention.
inline void forward_sequence(const ModelConfig& c, const Parameters& p,
                             const KernelMatrices& km, const std::vector<int>& tokens,
                             int window, SequenceCache& cache) {
  if (tokens.size() < 2) throw std::invalid_argument("sequence needs at least 2 tokens");
  validate_tokens(tokens, c.vocab_size);
  const int length = static_cast<int>(tokens.size()) - 1;
  const int dm = c.d_model();
  const int dh = c.head_dim;
  cache.inputs.assign(tokens.begin(), tokens.end() - 1);
  cache.targets.assign(tokens.begin() + 1, tokens.end());
  cache.layers.resize(c.layers);

  Eigen::MatrixXd x(length, dm);
  for (int t = 0; t < length; ++t) x.row(t) = p.embed.row(cache.inputs[t]);

  for (int l = 0; l < c.layers; ++l) {
    auto& lc = cache.layers[l];
    const auto& lp = p.layers[l];
    lc.attn_in = x;
    layernorm_forward(lc.attn_in, lp.ln1_g, lp.ln1_b, lc.xhat1, lc.rstd1, lc.xn1);
    lc.q = lc.xn1 * lp.wq;
    lc.k = lc.xn1 * lp.wk;
    lc.v = lc.xn1 * lp.wv;
    lc.attn.resize(c.heads);
    lc.head_out.resize(length, dm);
    for (int h = 0; h < c.heads; ++h) {
      const auto qh = lc.q.middleCols(h * dh, dh);
      const auto kh = lc.k.middleCols(h * dh, dh);
      const auto vh = lc.v.middleCols(h * dh, dh);
      const Eigen::MatrixXd scores =
          composite_scores(qh, kh, km.bias[h], km.weight[h], window);
      lc.attn[h] = causal_softmax(scores).values;
      lc.head_out.middleCols(h * dh, dh) = lc.attn[h] * vh;
    }
    x = lc.attn_in + lc.head_out * lp.wo;
    lc.mlp_in = x;
    layernorm_forward(lc.mlp_in, lp.ln2_g, lp.ln2_b, lc.xhat2, lc.rstd2, lc.xn2);
    lc.h_pre = (lc.xn2 * lp.w1).rowwise() + lp.b1.transpose();
    lc.h_act = lc.h_pre.unaryExpr([](double v) { return gelu(v); });
    x = lc.mlp_in + ((lc.h_act * lp.w2).rowwise() + lp.b2.transpose());
    if (!x.allFinite())
      throw std::runtime_error("non-finite activations at layer " + std::to_string(l));
  }

  cache.final_in = x;
  layernorm_forward(cache.final_in, p.lnf_g, p.lnf_b, cache.xhatf, cache.rstdf, cache.xnf);
  Eigen::MatrixXd logits = (cache.xnf * p.w_out).rowwise() + p.b_out.transpose();
  cache.probs.resize(length, c.vocab_size);
  cache.losses.resize(length);
  for (int t = 0; t < length; ++t) {
    const double row_max = logits.row(t).maxCoeff();
    const Eigen::ArrayXd e = (logits.row(t).transpose().array() - row_max).exp();
    const double denom = e.sum();
    cache.probs.row(t) = (e / denom).matrix().transpose();
    cache.losses[t] = std::log(denom) + row_max - logits(t, cache.targets[t]);
  }
}

}  // namespace detail

// Mean next-token cross-entropy (nats) over every position of every sequence,
// plus the cached activations backward needs.
inline ForwardResult forward_loss(const Checkpoint& ckpt, const Batch& batch) {
  validate(ckpt.config);
  if (batch.token_ids.empty()) throw std::invalid_argument("empty batch");
  const int length = static_cast<int>(batch.token_ids.front().size()) - 1;
  for (const auto& seq : batch.token_ids)
    if (static_cast<int>(seq.size()) != length + 1)
      throw std::invalid_argument("ragged batch");
  ForwardResult result;
  result.kernel_matrices = build_kernel_matrices(ckpt.config, ckpt.params, length);
  result.sequences.resize(batch.token_ids.size());
  double total = 0.0;
  long long count = 0;
  for (std::size_t b = 0; b < batch.token_ids.size(); ++b) {
    detail::forward_sequence(ckpt.config, ckpt.params, result.kernel_matrices,
                             batch.token_ids[b], /*window=*/0, result.sequences[b]);
    for (double loss : result.sequences[b].losses) total += loss;
    count += length;
  }
  result.loss = total / static_cast<double>(count);
  result.params_tag = &ckpt.params;
  result.batch_tag = &batch;
  return result;
}

// Gradients of the mean loss for every weight tensor and every unconstrained
// kernel parameter. Must be called with the same checkpoint and batch the
// cache was produced from.
inline Parameters backward(const Checkpoint& ckpt, const Batch& batch,
                           const ForwardResult& cache) {
  const ModelConfig& c = ckpt.config;
  if (cache.params_tag != &ckpt.params || cache.batch_tag != &batch)
    throw std::invalid_argument("backward called with a stale forward cache");
  Parameters grads = zeros_like_shapes(c);
  for (auto& pv : grads.kernel) pv.raw.assign(pv.raw.size(), 0.0);
  const int dm = c.d_model();
  const int dh = c.head_dim;
  const int length = static_cast<int>(batch.token_ids.front().size()) - 1;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dh));
  const double scale =
      1.0 / static_cast<double>(batch.token_ids.size() * static_cast<std::size_t>(length));

  // Per-head, per-distance adjoints of the bias and weight values.
  const int karity = arity(c.variant);
  std::vector<std::vector<double>> dbias_dist(c.heads, std::vector<double>(length, 0.0));
  std::vector<std::vector<double>> dweight_dist(c.heads, std::vector<double>(length, 0.0));
  const bool weighted = has_weight(c.variant);

  for (std::size_t b = 0; b < batch.token_ids.size(); ++b) {
    const auto& sc = cache.sequences[b];
    // output head
    Eigen::MatrixXd dlogits = sc.probs;
    for (int t = 0; t < length; ++t) dlogits(t, sc.targets[t]) -= 1.0;
    dlogits *= scale;
    grads.w_out += sc.xnf.transpose() * dlogits;
    grads.b_out += dlogits.colwise().sum().transpose();
    Eigen::MatrixXd dxnf = dlogits * ckpt.params.w_out.transpose();
    Eigen::MatrixXd dx = detail::layernorm_backward(dxnf, sc.xhatf, sc.rstdf,
                                                    ckpt.params.lnf_g, grads.lnf_g,
                                                    grads.lnf_b);

    for (int l = c.layers - 1; l >= 0; --l) {
      const auto& lc = sc.layers[l];
      const auto& lp = ckpt.params.layers[l];
      auto& lg = grads.layers[l];
      // MLP block: x_out = mlp_in + gelu(xn2 w1 + b1) w2 + b2
      Eigen::MatrixXd dhact = dx * lp.w2.transpose();
      lg.w2 += lc.h_act.transpose() * dx;
      lg.b2 += dx.colwise().sum().transpose();
      Eigen::MatrixXd dhpre =
          dhact.cwiseProduct(lc.h_pre.unaryExpr([](double v) {
            return detail::gelu_derivative(v);
          }));
      lg.w1 += lc.xn2.transpose() * dhpre;
      lg.b1 += dhpre.colwise().sum().transpose();
      Eigen::MatrixXd dxn2 = dhpre * lp.w1.transpose();
      dx += detail::layernorm_backward(dxn2, lc.xhat2, lc.rstd2, lp.ln2_g, lg.ln2_g,
                                       lg.ln2_b);

      // attention block: mlp_in = attn_in + head_out wo
      Eigen::MatrixXd dhead_out = dx * lp.wo.transpose();
      lg.wo += lc.head_out.transpose() * dx;
      Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(length, dm);
      Eigen::MatrixXd dk = Eigen::MatrixXd::Zero(length, dm);
      Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(length, dm);
      for (int h = 0; h < c.heads; ++h) {
        const auto qh = lc.q.middleCols(h * dh, dh);
        const auto kh = lc.k.middleCols(h * dh, dh);
        const auto vh = lc.v.middleCols(h * dh, dh);
        const auto doh = dhead_out.middleCols(h * dh, dh);
        const Eigen::MatrixXd& attn = lc.attn[h];
        Eigen::MatrixXd dattn = doh * vh.transpose();
        dv.middleCols(h * dh, dh) = attn.transpose() * doh;
        // softmax backward, row-wise; masked entries have attn = 0
        Eigen::MatrixXd dscores(length, length);
        for (int m = 0; m < length; ++m) {
          const double dot = dattn.row(m).cwiseProduct(attn.row(m)).sum();
          dscores.row(m) = (attn.row(m).array() * (dattn.row(m).array() - dot)).matrix();
        }
        // bias and (optional) weight adjoints, bucketed by distance
        auto& db = dbias_dist[h];
        for (int m = 0; m < length; ++m)
          for (int n = 0; n <= m; ++n) db[m - n] += dscores(m, n) * inv_sqrt_d;
        Eigen::MatrixXd dqk;
        if (weighted) {
          const Eigen::MatrixXd qk = qh * kh.transpose();
          auto& dw = dweight_dist[h];
          const auto& wt = cache.kernel_matrices.weight[h]->values;
          dqk = Eigen::MatrixXd::Zero(length, length);
          for (int m = 0; m < length; ++m)
            for (int n = 0; n <= m; ++n) {
              const double ds = dscores(m, n) * inv_sqrt_d;
              dw[m - n] += ds * qk(m, n);
              dqk(m, n) = ds * wt(m, n);
            }
        } else {
          dqk = Eigen::MatrixXd::Zero(length, length);
          for (int m = 0; m < length; ++m)
            for (int n = 0; n <= m; ++n) dqk(m, n) = dscores(m, n) * inv_sqrt_d;
        }
        dq.middleCols(h * dh, dh) = dqk * kh;
        dk.middleCols(h * dh, dh) = dqk.transpose() * qh;
      }
      lg.wq += lc.xn1.transpose() * dq;
      lg.wk += lc.xn1.transpose() * dk;
      lg.wv += lc.xn1.transpose() * dv;
      Eigen::MatrixXd dxn1 =
          dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();
      dx += detail::layernorm_backward(dxn1, lc.xhat1, lc.rstd1, lp.ln1_g, lg.ln1_g,
                                       lg.ln1_b);
      // dx now holds the gradient w.r.t. attn_in for the next (lower) layer
    }
    for (int t = 0; t < length; ++t) grads.embed.row(sc.inputs[t]) += dx.row(t);
  }

  // Chain distance-bucketed adjoints through the kernel formulas and the
  // constraint bijections into the unconstrained parameters.
  if (karity > 0) {
    std::vector<double> partials;
    for (int h = 0; h < c.heads; ++h) {
      const KernelSpec spec = head_spec(c, ckpt.params, h);
      const auto& raw = ckpt.params.kernel[h].raw;
      const auto& maps = ckpt.params.kernel[h].mapping;
      auto& graw = grads.kernel[h].raw;
      for (int d = 0; d < length; ++d) {
        if (dbias_dist[h][d] != 0.0) {
          eval_bias_param_grad(spec, d, partials);
          for (int j = 0; j < karity; ++j)
            graw[j] += dbias_dist[h][d] * partials[j] * constrain_derivative(maps[j], raw[j]);
        }
        if (weighted && dweight_dist[h][d] != 0.0) {
          eval_weight_param_grad(spec, d, partials);
          for (int j = 0; j < karity; ++j)
            graw[j] += dweight_dist[h][d] * partials[j] * constrain_derivative(maps[j], raw[j]);
        }
      }
    }
  }
  return grads;
}

// Per-position next-token losses for a token sequence of any length,
// including lengths beyond train_len. tokens has N >= 2 entries and yields
// N - 1 losses. window = 0 means full causal attention; window W restricts
// each position to the last W keys.
inline std::vector<double> score_sequence(const Checkpoint& ckpt,
                                          const std::vector<int>& tokens,
                                          int window = 0) {
  if (window < 0) throw std::invalid_argument("window must be >= 0");
  const int length = static_cast<int>(tokens.size()) - 1;
  const KernelMatrices km = build_kernel_matrices(ckpt.config, ckpt.params, length);
  detail::SequenceCache cache;
  detail::forward_sequence(ckpt.config, ckpt.params, km, tokens, window, cache);
  return cache.losses;
}

// --- optimizer and training loop -------------------------------------------

struct AdamState {
  Parameters m, v;
  long long t = 0;
};

inline AdamState make_adam_state(const ModelConfig& c) {
  return AdamState{zeros_like_shapes(c), zeros_like_shapes(c), 0};
}

inline void adam_step(const OptimizerConfig& opt, Parameters& params,
                      const Parameters& grads, AdamState& state) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.t));
  auto pr = tensor_refs(params);
  auto gr = tensor_refs(const_cast<Parameters&>(grads));
  auto mr = tensor_refs(state.m);
  auto vr = tensor_refs(state.v);
  for (std::size_t i = 0; i < pr.size(); ++i) {
    for (std::int64_t j = 0; j < pr[i].size; ++j) {
      const double g = gr[i].data[j];
      double& m = mr[i].data[j];
      double& v = vr[i].data[j];
      m = opt.beta1 * m + (1.0 - opt.beta1) * g;
      v = opt.beta2 * v + (1.0 - opt.beta2) * g * g;
      pr[i].data[j] -= opt.lr * (m / bc1) / (std::sqrt(v / bc2) + opt.eps);
    }
  }
}

using Corpus = std::vector<std::uint8_t>;

inline Corpus load_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open corpus file: " + path);
  return Corpus(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline Batch sample_batch(const ModelConfig& c, const Corpus& corpus, std::mt19937_64& rng) {
  if (corpus.size() < static_cast<std::size_t>(c.train_len) + 1)
    throw std::invalid_argument("corpus shorter than train_len + 1");
  std::uniform_int_distribution<std::size_t> start(0, corpus.size() - c.train_len - 1);
  Batch batch;
  batch.token_ids.resize(c.batch_size);
  for (auto& seq : batch.token_ids) {
    const std::size_t s = start(rng);
    seq.resize(c.train_len + 1);
    for (int i = 0; i <= c.train_len; ++i) seq[i] = corpus[s + i];
  }
  return batch;
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<std::pair<long long, double>> loss_trace;  // (step, loss)
};

// Deterministic given (config, corpus): same seed, same trace, same weights.
inline TrainResult train(const ModelConfig& config, const Corpus& corpus, long long steps,
                         long long trace_every = 100,
                         const std::function<void(long long, double)>& on_step = {}) {
  validate(config);
  if (corpus.size() < static_cast<std::size_t>(config.train_len) + 1)
    throw std::invalid_argument("corpus shorter than train_len + 1");
  TrainResult result;
  result.checkpoint.config = config;
  result.checkpoint.params = init_parameters(config);
  AdamState adam = make_adam_state(config);
  std::mt19937_64 batch_rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  for (long long step = 0; step < steps; ++step) {
    const Batch batch = sample_batch(config, corpus, batch_rng);
    const ForwardResult fwd = forward_loss(result.checkpoint, batch);
    const Parameters grads = backward(result.checkpoint, batch, fwd);
    adam_step(config.opt, result.checkpoint.params, grads, adam);
    result.checkpoint.step = step + 1;
    if (trace_every > 0 && (step % trace_every == 0 || step == steps - 1))
      result.loss_trace.emplace_back(step, fwd.loss);
    if (on_step) on_step(step, fwd.loss);
  }
  return result;
}

}  // namespace kerple

#endif  // KERPLE_MODEL_HPP
