#pragma once

// Single-layer LSTM language model over token ids with full backpropagation
// through time, Adam training and perplexity scoring.
//
// Input  : [BOS, v_1, ..., v_n]
// Targets: [v_1, ..., v_n, EOS]
//
//   z_t = W x_t + U h_{t-1} + b          gate rows: [input | forget | cell | output]
//   c_t = f ⊙ c_{t-1} + i ⊙ g,  h_t = o ⊙ tanh(c_t)
//   q_t = softmax(W_out h_t + b_out)

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "seqnd/common.hpp"
#include "seqnd/corpus.hpp"

namespace seqnd {

struct LstmWeights {
  Eigen::MatrixXd embedding;  // |V| x d_e
  Eigen::MatrixXd w_in;       // 4 d_h x d_e
  Eigen::MatrixXd w_rec;      // 4 d_h x d_h
  Eigen::VectorXd bias;       // 4 d_h
  Eigen::MatrixXd w_out;      // |V| x d_h
  Eigen::VectorXd b_out;      // |V|

  static LstmWeights zeros(std::size_t vocab, std::size_t embed, std::size_t hidden) {
    const auto V = static_cast<Eigen::Index>(vocab), E = static_cast<Eigen::Index>(embed),
               H = static_cast<Eigen::Index>(hidden);
    return {Eigen::MatrixXd::Zero(V, E), Eigen::MatrixXd::Zero(4 * H, E), Eigen::MatrixXd::Zero(4 * H, H),
            Eigen::VectorXd::Zero(4 * H), Eigen::MatrixXd::Zero(V, H),    Eigen::VectorXd::Zero(V)};
  }

  /// Views over every tensor in a fixed order (storage order within each).
  std::array<std::span<double>, 6> tensors() {
    return {span_of(embedding), span_of(w_in), span_of(w_rec), span_of(bias), span_of(w_out), span_of(b_out)};
  }
  std::array<std::span<const double>, 6> tensors() const {
    return {cspan_of(embedding), cspan_of(w_in), cspan_of(w_rec), cspan_of(bias), cspan_of(w_out), cspan_of(b_out)};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto t : tensors()) n += t.size();
    return n;
  }

  void set_zero() {
    for (auto t : tensors()) std::fill(t.begin(), t.end(), 0.0);
  }

  double squared_norm() const {
    double s = 0.0;
    for (auto t : tensors())
      for (double v : t) s += v * v;
    return s;
  }

  bool all_finite() const {
    for (auto t : tensors())
      for (double v : t)
        if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const LstmWeights& o) const {
    auto a = tensors();
    auto b = o.tensors();
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].size() != b[i].size() || !std::equal(a[i].begin(), a[i].end(), b[i].begin())) return false;
    return true;
  }

private:
  template <class M>
  static std::span<double> span_of(M& m) {
    return {m.data(), static_cast<std::size_t>(m.size())};
  }
  template <class M>
  static std::span<const double> cspan_of(const M& m) {
    return {m.data(), static_cast<std::size_t>(m.size())};
  }
};

struct LstmLanguageModel {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 0;
  std::size_t hidden_dim = 0;
  std::uint64_t seed = 0;
  LstmWeights weights;

  static std::size_t expected_parameter_count(std::size_t V, std::size_t de, std::size_t dh) {
    return V * de + 4 * dh * (de + dh + 1) + V * (dh + 1);
  }
};

/// Uniform(-r, r) weights with r = 1/sqrt(d_h); biases zero except the
/// forget gate, which starts at 1.
inline LstmLanguageModel init_model(std::size_t vocab_size, std::size_t embed_dim, std::size_t hidden_dim,
                                    std::uint64_t seed) {
  if (vocab_size < 1 || embed_dim < 1 || hidden_dim < 1) throw InvalidArgument("LSTM dimensions must be >= 1");
  LstmLanguageModel m{vocab_size, embed_dim, hidden_dim, seed,
                      LstmWeights::zeros(vocab_size, embed_dim, hidden_dim)};
  Rng rng(seed);
  const double r = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  auto fill = [&](auto& mat) {
    for (Eigen::Index i = 0; i < mat.size(); ++i) mat.data()[i] = uniform_range(rng, -r, r);
  };
  fill(m.weights.embedding);
  fill(m.weights.w_in);
  fill(m.weights.w_rec);
  fill(m.weights.w_out);
  const auto H = static_cast<Eigen::Index>(hidden_dim);
  m.weights.bias.segment(H, H).setOnes();
  return m;
}

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Per-step activations kept for the backward pass; column t is step t.
struct LstmTrace {
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;
  Eigen::MatrixXd x;       // d_e x L
  Eigen::MatrixXd gates;   // 4 d_h x L, post-activation
  Eigen::MatrixXd cell;    // d_h x (L+1), column 0 is the zero state
  Eigen::MatrixXd hidden;  // d_h x (L+1)
  Eigen::MatrixXd tanh_c;  // d_h x L
  Eigen::MatrixXd log_probs;  // |V| x L
};

inline void check_tokens(const LstmLanguageModel& m, const std::vector<TokenId>& tokens) {
  for (TokenId t : tokens)
    if (t >= m.vocab_size) throw InvalidArgument("token id " + std::to_string(t) + " outside model vocabulary");
}

/// Runs the recurrence. `with_eos` appends the EOS target.
inline LstmTrace run_forward(const LstmLanguageModel& m, const std::vector<TokenId>& tokens, bool with_eos = true) {
  check_tokens(m, tokens);
  const auto& W = m.weights;
  const auto H = static_cast<Eigen::Index>(m.hidden_dim);
  LstmTrace tr;
  tr.inputs.push_back(Vocabulary::kBos);
  tr.inputs.insert(tr.inputs.end(), tokens.begin(), tokens.end());
  tr.targets = tokens;
  if (with_eos) tr.targets.push_back(Vocabulary::kEos);
  else tr.inputs.pop_back();
  const auto L = static_cast<Eigen::Index>(tr.targets.size());

  tr.x.resize(static_cast<Eigen::Index>(m.embed_dim), L);
  for (Eigen::Index t = 0; t < L; ++t) tr.x.col(t) = W.embedding.row(tr.inputs[static_cast<std::size_t>(t)]).transpose();
  tr.gates.noalias() = W.w_in * tr.x;
  tr.gates.colwise() += W.bias;
  tr.cell = Eigen::MatrixXd::Zero(H, L + 1);
  tr.hidden = Eigen::MatrixXd::Zero(H, L + 1);
  tr.tanh_c.resize(H, L);
  for (Eigen::Index t = 0; t < L; ++t) {
    auto z = tr.gates.col(t);
    z.noalias() += W.w_rec * tr.hidden.col(t);
    for (Eigen::Index j = 0; j < H; ++j) {
      z(j) = sigmoid(z(j));
      z(H + j) = sigmoid(z(H + j));
      z(2 * H + j) = std::tanh(z(2 * H + j));
      z(3 * H + j) = sigmoid(z(3 * H + j));
      const double c = z(H + j) * tr.cell(j, t) + z(j) * z(2 * H + j);
      tr.cell(j, t + 1) = c;
      tr.tanh_c(j, t) = std::tanh(c);
      tr.hidden(j, t + 1) = z(3 * H + j) * tr.tanh_c(j, t);
    }
  }
  tr.log_probs.noalias() = W.w_out * tr.hidden.rightCols(L);
  tr.log_probs.colwise() += W.b_out;
  for (Eigen::Index t = 0; t < L; ++t) {
    auto col = tr.log_probs.col(t);
    const double mx = col.maxCoeff();
    const double lse = mx + std::log((col.array() - mx).exp().sum());
    col.array() -= lse;
  }
  return tr;
}

/// Sum of -log q(target) over the trace.
inline double trace_loss(const LstmTrace& tr) {
  double loss = 0.0;
  for (std::size_t t = 0; t < tr.targets.size(); ++t)
    loss -= tr.log_probs(static_cast<Eigen::Index>(tr.targets[t]), static_cast<Eigen::Index>(t));
  return loss;
}

/// Adds scale * d(sum loss)/d(weights) into `grad`.
inline void backward(const LstmLanguageModel& m, const LstmTrace& tr, double scale, LstmWeights& grad) {
  const auto& W = m.weights;
  const auto H = static_cast<Eigen::Index>(m.hidden_dim);
  const auto L = static_cast<Eigen::Index>(tr.targets.size());

  Eigen::MatrixXd dlogits = tr.log_probs.array().exp().matrix();
  for (Eigen::Index t = 0; t < L; ++t) dlogits(tr.targets[static_cast<std::size_t>(t)], t) -= 1.0;
  dlogits *= scale;
  grad.w_out.noalias() += dlogits * tr.hidden.rightCols(L).transpose();
  grad.b_out += dlogits.rowwise().sum();
  Eigen::MatrixXd dh_out = W.w_out.transpose() * dlogits;  // d_h x L

  Eigen::MatrixXd dz(4 * H, L);
  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(H), dc_next = Eigen::VectorXd::Zero(H);
  for (Eigen::Index t = L - 1; t >= 0; --t) {
    const auto g = tr.gates.col(t);
    for (Eigen::Index j = 0; j < H; ++j) {
      const double i = g(j), f = g(H + j), cc = g(2 * H + j), o = g(3 * H + j);
      const double dh = dh_out(j, t) + dh_next(j);
      const double tc = tr.tanh_c(j, t);
      const double dc = dh * o * (1.0 - tc * tc) + dc_next(j);
      dz(j, t) = dc * cc * i * (1.0 - i);
      dz(H + j, t) = dc * tr.cell(j, t) * f * (1.0 - f);
      dz(2 * H + j, t) = dc * i * (1.0 - cc * cc);
      dz(3 * H + j, t) = dh * tc * o * (1.0 - o);
      dc_next(j) = dc * f;
    }
    dh_next.noalias() = W.w_rec.transpose() * dz.col(t);
  }
  grad.w_in.noalias() += dz * tr.x.transpose();
  grad.w_rec.noalias() += dz * tr.hidden.leftCols(L).transpose();
  grad.bias += dz.rowwise().sum();
  Eigen::MatrixXd dx = W.w_in.transpose() * dz;  // d_e x L
  for (Eigen::Index t = 0; t < L; ++t) grad.embedding.row(tr.inputs[static_cast<std::size_t>(t)]) += dx.col(t).transpose();
}

}  // namespace detail

/// One next-token distribution per position, the last one predicting EOS.
inline std::vector<Eigen::VectorXd> forward(const LstmLanguageModel& m, const std::vector<TokenId>& tokens) {
  auto tr = detail::run_forward(m, tokens);
  std::vector<Eigen::VectorXd> out;
  for (Eigen::Index t = 0; t < tr.log_probs.cols(); ++t) out.emplace_back(tr.log_probs.col(t).array().exp());
  return out;
}

/// Sum over positions of -ln q(target), EOS included.
inline double sequence_nll(const LstmLanguageModel& m, const std::vector<TokenId>& tokens) {
  return detail::trace_loss(detail::run_forward(m, tokens));
}

/// exp of the mean negative log-probability of the true next tokens,
/// L = |s| + 1 targets.
inline double perplexity(const LstmLanguageModel& m, const std::vector<TokenId>& tokens) {
  if (tokens.empty()) throw InvalidArgument("perplexity of an empty sequence");
  auto tr = detail::run_forward(m, tokens);
  return std::exp(detail::trace_loss(tr) / static_cast<double>(tr.targets.size()));
}

/// Sum loss over one sequence and its gradient.
inline double loss_and_gradient(const LstmLanguageModel& m, const std::vector<TokenId>& tokens, LstmWeights& grad) {
  grad = LstmWeights::zeros(m.vocab_size, m.embed_dim, m.hidden_dim);
  auto tr = detail::run_forward(m, tokens);
  detail::backward(m, tr, 1.0, grad);
  return detail::trace_loss(tr);
}

/// Largest |g_a - g_n| / max(|g_a|, |g_n|, 1e-8) over all parameters, with
/// g_n from central differences of the summed sequence loss.
inline double gradient_check(const LstmLanguageModel& model, const std::vector<TokenId>& tokens,
                             double epsilon = 1e-4) {
  LstmWeights analytic;
  loss_and_gradient(model, tokens, analytic);
  LstmLanguageModel probe = model;
  auto params = probe.weights.tensors();
  auto grads = analytic.tensors();
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double saved = params[k][i];
      params[k][i] = saved + epsilon;
      const double up = sequence_nll(probe, tokens);
      params[k][i] = saved - epsilon;
      const double down = sequence_nll(probe, tokens);
      params[k][i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double ga = grads[k][i];
      const double denom = std::max({std::abs(ga), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(ga - numeric) / denom);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;
  std::size_t max_seq_len = 200;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1 || batch_size < 1 || max_seq_len < 1) throw InvalidArgument("train config counts must be >= 1");
    if (!(learning_rate > 0.0) || !(clip_norm > 0.0) || !(epsilon > 0.0))
      throw InvalidArgument("learning rate, epsilon and clip norm must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
      throw InvalidArgument("Adam betas must lie in (0,1)");
  }
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean per-token cross-entropy
};

/// Mean next-token cross-entropy, Adam, global-norm clipping. Sequences
/// longer than max_seq_len are cut and lose their EOS target.
inline TrainResult train(LstmLanguageModel& model, const std::vector<std::vector<TokenId>>& sequences,
                         const TrainConfig& cfg,
                         const std::function<void(std::size_t, double)>& on_epoch = {}) {
  cfg.validate();
  if (sequences.empty()) throw InvalidArgument("training set is empty");
  for (const auto& s : sequences) {
    if (s.empty()) throw InvalidArgument("training sequence is empty");
    detail::check_tokens(model, s);
  }
  const std::size_t V = model.vocab_size, de = model.embed_dim, dh = model.hidden_dim;
  LstmWeights grad = LstmWeights::zeros(V, de, dh), m1 = grad, m2 = grad;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  TrainResult result;
  std::size_t step = 0;
  std::vector<TokenId> cut;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    double epoch_loss = 0.0;
    std::size_t epoch_targets = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<detail::LstmTrace> traces;
      std::size_t targets = 0;
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const auto& s = sequences[order[b]];
        const bool truncated = s.size() > cfg.max_seq_len;
        if (truncated) cut.assign(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(cfg.max_seq_len));
        traces.push_back(detail::run_forward(model, truncated ? cut : s, !truncated));
        targets += traces.back().targets.size();
        batch_loss += detail::trace_loss(traces.back());
      }
      if (!std::isfinite(batch_loss))
        throw Error("non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                    std::to_string(start));
      grad.set_zero();
      const double scale = 1.0 / static_cast<double>(targets);
      for (const auto& tr : traces) detail::backward(model, tr, scale, grad);

      const double norm = std::sqrt(grad.squared_norm());
      const double clip = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
      ++step;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      auto p = model.weights.tensors();
      auto g = grad.tensors();
      auto a = m1.tensors();
      auto v = m2.tensors();
      for (std::size_t k = 0; k < p.size(); ++k)
        for (std::size_t i = 0; i < p[k].size(); ++i) {
          const double gi = g[k][i] * clip;
          a[k][i] = cfg.beta1 * a[k][i] + (1.0 - cfg.beta1) * gi;
          v[k][i] = cfg.beta2 * v[k][i] + (1.0 - cfg.beta2) * gi * gi;
          p[k][i] -= cfg.learning_rate * (a[k][i] / bc1) / (std::sqrt(v[k][i] / bc2) + cfg.epsilon);
        }
      epoch_loss += batch_loss;
      epoch_targets += targets;
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(epoch_targets));
    if (on_epoch) on_epoch(epoch, result.epoch_loss.back());
  }
  if (!model.weights.all_finite()) throw Error("training produced non-finite weights");
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: "SEQNDLM\0", u32 version, u64 vocab/embed/hidden/seed, then the
// six tensors as raw little-endian doubles in tensors() order.

inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'Q', 'N', 'D', 'L', 'M', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const LstmLanguageModel& m, std::ostream& out) {
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  auto put = [&](auto v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
  put(kCheckpointVersion);
  put(static_cast<std::uint64_t>(m.vocab_size));
  put(static_cast<std::uint64_t>(m.embed_dim));
  put(static_cast<std::uint64_t>(m.hidden_dim));
  put(static_cast<std::uint64_t>(m.seed));
  for (auto t : m.weights.tensors())
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size_bytes()));
  if (!out) throw Error("failed writing model checkpoint");
}

inline LstmLanguageModel load_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw InvalidArgument("not a model checkpoint");
  auto get = [&](auto& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw InvalidArgument("truncated model checkpoint");
  };
  std::uint32_t version = 0;
  get(version);
  if (version != kCheckpointVersion) throw InvalidArgument("unsupported checkpoint version " + std::to_string(version));
  std::uint64_t V, de, dh, seed;
  get(V), get(de), get(dh), get(seed);
  if (V == 0 || de == 0 || dh == 0 || V > (1u << 24) || de > (1u << 16) || dh > (1u << 16))
    throw InvalidArgument("implausible checkpoint dimensions");
  LstmLanguageModel m{V, de, dh, seed, LstmWeights::zeros(V, de, dh)};
  for (auto t : m.weights.tensors()) {
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size_bytes()));
    if (!in) throw InvalidArgument("truncated model checkpoint");
  }
  return m;
}

inline void save_checkpoint(const LstmLanguageModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  save_checkpoint(m, out);
}

inline LstmLanguageModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open checkpoint '" + path + "'");
  return load_checkpoint(in);
}

}  // namespace seqnd
