#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kbtypo/common.hpp"
#include "kbtypo/victim.hpp"
#include "kbtypo/wordpiece.hpp"

namespace kbtypo {

struct Hyperparams {
  int embed_dim = 64;
  int hidden_dim = 64;
  double learning_rate = 1.0;
  int epochs = 20;
  int batch_size = 32;
  std::uint64_t seed = 13;
  // Learning rate decays linearly from `learning_rate` to zero over training.
  bool linear_decay = true;
  // L2 penalty coefficient, applied to the parameters touched by each batch.
  double weight_decay = 1e-3;
};

/// Desk-scale classifier: embedding lookup, a per-token tanh layer, mean
/// pooling over tokens, then a softmax output layer.
///
///   h_i = tanh(A e_i + b),  p = mean_i h_i,  probs = softmax(W p + c)
///
/// All matrices are row-major. The per-token nonlinearity is what makes the
/// per-token loss gradients differ from one another.
class BuiltinModel {
 public:
  BuiltinModel() = default;

  /// All parameters zero.
  BuiltinModel(std::size_t vocab_size, int embed_dim, int hidden_dim, int num_classes, std::uint64_t vocab_hash = 0)
      : vocab_size_(vocab_size),
        d_(embed_dim),
        h_(hidden_dim),
        c_(num_classes),
        vocab_hash_(vocab_hash),
        embed_(vocab_size * static_cast<std::size_t>(embed_dim)),
        hidden_w_(static_cast<std::size_t>(hidden_dim * embed_dim)),
        hidden_b_(static_cast<std::size_t>(hidden_dim)),
        out_w_(static_cast<std::size_t>(num_classes * hidden_dim)),
        out_b_(static_cast<std::size_t>(num_classes)) {
    if (embed_dim <= 0 || hidden_dim <= 0 || num_classes < 2 || vocab_size == 0)
      throw ContractViolation("BuiltinModel: bad dimensions");
  }

  /// Embeddings uniform in [-0.1, 0.1], weight matrices Glorot-uniform, biases zero.
  static BuiltinModel initialized(std::size_t vocab_size, int embed_dim, int hidden_dim, int num_classes,
                                  std::uint64_t seed, std::uint64_t vocab_hash = 0) {
    BuiltinModel m(vocab_size, embed_dim, hidden_dim, num_classes, vocab_hash);
    std::mt19937_64 rng(seed);
    for (auto& x : m.embed_) x = uniform_real(rng, -0.1, 0.1);
    const double ra = std::sqrt(6.0 / (embed_dim + hidden_dim));
    for (auto& x : m.hidden_w_) x = uniform_real(rng, -ra, ra);
    const double rw = std::sqrt(6.0 / (hidden_dim + num_classes));
    for (auto& x : m.out_w_) x = uniform_real(rng, -rw, rw);
    return m;
  }

  std::size_t vocab_size() const { return vocab_size_; }
  int embed_dim() const { return d_; }
  int hidden_dim() const { return h_; }
  int num_classes() const { return c_; }
  std::uint64_t vocab_hash() const { return vocab_hash_; }

  std::span<const double> embedding(int id) const {
    return {embed_.data() + static_cast<std::size_t>(id) * static_cast<std::size_t>(d_), static_cast<std::size_t>(d_)};
  }

  std::vector<double>& embeddings() { return embed_; }
  std::vector<double>& hidden_weights() { return hidden_w_; }
  std::vector<double>& hidden_bias() { return hidden_b_; }
  std::vector<double>& output_weights() { return out_w_; }
  std::vector<double>& output_bias() { return out_b_; }

  bool operator==(const BuiltinModel&) const = default;

  /// Rows of `embs` are the per-token input vectors.
  struct Forward {
    std::vector<double> hidden;  // n x h, tanh outputs
    std::vector<double> pooled;  // h
    std::vector<double> probs;   // C
  };

  /// tanh(A e + b) for one token vector.
  void hidden_row(const double* e, double* out) const {
    for (int k = 0; k < h_; ++k) {
      const double* row = hidden_w_.data() + static_cast<std::size_t>(k * d_);
      double z = hidden_b_[static_cast<std::size_t>(k)];
      for (int j = 0; j < d_; ++j) z += row[j] * e[j];
      out[k] = std::tanh(z);
    }
  }

  /// softmax(W pooled + c)
  std::vector<double> head(const std::vector<double>& pooled) const {
    std::vector<double> logits(static_cast<std::size_t>(c_));
    for (int c = 0; c < c_; ++c) {
      double z = out_b_[static_cast<std::size_t>(c)];
      for (int k = 0; k < h_; ++k) z += out_w_[static_cast<std::size_t>(c * h_ + k)] * pooled[static_cast<std::size_t>(k)];
      logits[static_cast<std::size_t>(c)] = z;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    std::vector<double> probs(logits.size());
    for (std::size_t c = 0; c < logits.size(); ++c) sum += (probs[c] = std::exp(logits[c] - mx));
    for (auto& p : probs) p /= sum;
    return probs;
  }

  Forward forward(std::span<const double> embs, std::size_t n) const {
    if (n == 0) throw ContractViolation("empty input");
    const auto H = static_cast<std::size_t>(h_);
    Forward f;
    f.hidden.resize(n * H);
    f.pooled.assign(H, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double* hi = f.hidden.data() + i * H;
      hidden_row(embs.data() + i * static_cast<std::size_t>(d_), hi);
      for (std::size_t k = 0; k < H; ++k) f.pooled[k] += hi[k];
    }
    for (auto& p : f.pooled) p /= static_cast<double>(n);
    f.probs = head(f.pooled);
    return f;
  }

  /// Hidden activations of every vocabulary entry (vocab_size x h). A token's
  /// activation depends only on its id, so predictions can pool rows of this
  /// table instead of recomputing them.
  std::vector<double> hidden_table() const {
    const auto H = static_cast<std::size_t>(h_);
    std::vector<double> table(vocab_size_ * H);
    for (std::size_t id = 0; id < vocab_size_; ++id) hidden_row(embed_.data() + id * static_cast<std::size_t>(d_), table.data() + id * H);
    return table;
  }

  /// Same result as predict_ids, bit for bit, using a hidden_table().
  Prediction predict_cached(const std::vector<double>& table, std::span<const int> ids) const {
    if (ids.empty()) throw ContractViolation("empty input");
    const auto H = static_cast<std::size_t>(h_);
    std::vector<double> pooled(H, 0.0);
    for (int id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size_) throw ContractViolation("token id out of range");
      const double* hi = table.data() + static_cast<std::size_t>(id) * H;
      for (std::size_t k = 0; k < H; ++k) pooled[k] += hi[k];
    }
    for (auto& p : pooled) p /= static_cast<double>(ids.size());
    auto probs = head(pooled);
    return {argmax_lowest(probs), std::move(probs)};
  }

  std::vector<double> gather(std::span<const int> ids) const {
    std::vector<double> embs(ids.size() * static_cast<std::size_t>(d_));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab_size_) throw ContractViolation("token id out of range");
      auto e = embedding(ids[i]);
      std::copy(e.begin(), e.end(), embs.begin() + static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(d_)));
    }
    return embs;
  }

  Prediction predict_ids(std::span<const int> ids) const {
    auto f = forward(gather(ids), ids.size());
    return {argmax_lowest(f.probs), std::move(f.probs)};
  }

  static double cross_entropy(const std::vector<double>& probs, int gold) {
    return -std::log(std::max(probs[static_cast<std::size_t>(gold)], 1e-300));
  }

  double loss_from_embeddings(std::span<const double> embs, std::size_t n, int gold) const {
    return cross_entropy(forward(embs, n).probs, gold);
  }

  /// Parameter gradients of the cross-entropy loss for one example. Any of
  /// the output pointers may be null. `embed_grads` receives dL/de_i per
  /// token (n x d); the other gradients are accumulated (+=).
  struct GradSinks {
    std::vector<double>* embed_grads = nullptr;
    std::vector<double>* hidden_w = nullptr;
    std::vector<double>* hidden_b = nullptr;
    std::vector<double>* out_w = nullptr;
    std::vector<double>* out_b = nullptr;
  };

  /// Returns {loss, predicted label}.
  std::pair<double, int> backward(std::span<const double> embs, std::size_t n, int gold, const GradSinks& out) const {
    if (gold < 0 || gold >= c_) throw ContractViolation("gold label " + std::to_string(gold) + " out of range");
    const auto f = forward(embs, n);
    const auto H = static_cast<std::size_t>(h_);
    const auto D = static_cast<std::size_t>(d_);
    std::vector<double> g = f.probs;
    g[static_cast<std::size_t>(gold)] -= 1.0;

    // dL/dp = W^T g
    std::vector<double> dpooled(H, 0.0);
    for (int c = 0; c < c_; ++c)
      for (std::size_t k = 0; k < H; ++k) dpooled[k] += out_w_[static_cast<std::size_t>(c) * H + k] * g[static_cast<std::size_t>(c)];
    if (out.out_w)
      for (int c = 0; c < c_; ++c)
        for (std::size_t k = 0; k < H; ++k) (*out.out_w)[static_cast<std::size_t>(c) * H + k] += g[static_cast<std::size_t>(c)] * f.pooled[k];
    if (out.out_b)
      for (int c = 0; c < c_; ++c) (*out.out_b)[static_cast<std::size_t>(c)] += g[static_cast<std::size_t>(c)];

    if (out.embed_grads) out.embed_grads->assign(n * D, 0.0);
    std::vector<double> dz(H);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double* hi = f.hidden.data() + i * H;
      for (std::size_t k = 0; k < H; ++k) dz[k] = dpooled[k] * inv_n * (1.0 - hi[k] * hi[k]);
      const double* e = embs.data() + i * D;
      if (out.hidden_w)
        for (std::size_t k = 0; k < H; ++k) {
          double* row = out.hidden_w->data() + k * D;
          for (std::size_t j = 0; j < D; ++j) row[j] += dz[k] * e[j];
        }
      if (out.hidden_b)
        for (std::size_t k = 0; k < H; ++k) (*out.hidden_b)[k] += dz[k];
      if (out.embed_grads) {
        double* ge = out.embed_grads->data() + i * D;
        for (std::size_t k = 0; k < H; ++k) {
          const double* row = hidden_w_.data() + k * D;
          for (std::size_t j = 0; j < D; ++j) ge[j] += row[j] * dz[k];
        }
      }
    }
    return {cross_entropy(f.probs, gold), argmax_lowest(f.probs)};
  }

  // Checkpoint: magic, version, dimensions, vocab hash, then every parameter
  // as little-endian float64 in the order E, A, b, W, c.
  static constexpr char kMagic[8] = {'K', 'B', 'T', 'Y', 'P', 'O', 'M', 'D'};
  static constexpr std::uint32_t kVersion = 1;

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path);
    out.write(kMagic, sizeof kMagic);
    put_u64(out, kVersion);
    put_u64(out, vocab_size_);
    put_u64(out, static_cast<std::uint64_t>(d_));
    put_u64(out, static_cast<std::uint64_t>(h_));
    put_u64(out, static_cast<std::uint64_t>(c_));
    put_u64(out, vocab_hash_);
    for (const auto* v : {&embed_, &hidden_w_, &hidden_b_, &out_w_, &out_b_})
      for (double x : *v) put_u64(out, std::bit_cast<std::uint64_t>(x));
    if (!out) throw DataError("failed writing checkpoint " + path);
  }

  static BuiltinModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    char magic[sizeof kMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError(path + ": not a model checkpoint");
    if (get_u64(in) != kVersion) throw DataError(path + ": unsupported checkpoint version");
    const auto vocab = get_u64(in);
    const auto d = get_u64(in), h = get_u64(in), c = get_u64(in);
    const auto hash = get_u64(in);
    if (!in || d == 0 || h == 0 || c < 2 || d > 4096 || h > 4096 || c > 4096 || vocab == 0 || vocab > (1u << 24))
      throw DataError(path + ": corrupt checkpoint header");
    BuiltinModel m(vocab, static_cast<int>(d), static_cast<int>(h), static_cast<int>(c), hash);
    for (auto* v : {&m.embed_, &m.hidden_w_, &m.hidden_b_, &m.out_w_, &m.out_b_})
      for (double& x : *v) x = std::bit_cast<double>(get_u64(in));
    if (!in) throw DataError(path + ": truncated checkpoint");
    return m;
  }

 private:
  static void put_u64(std::ostream& out, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(buf, 8);
  }
  static std::uint64_t get_u64(std::istream& in) {
    unsigned char buf[8] = {};
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }

  std::size_t vocab_size_ = 0;
  int d_ = 0;
  int h_ = 0;
  int c_ = 0;
  std::uint64_t vocab_hash_ = 0;
  std::vector<double> embed_;
  std::vector<double> hidden_w_;
  std::vector<double> hidden_b_;
  std::vector<double> out_w_;
  std::vector<double> out_b_;
};

inline std::vector<int> token_ids(const Segmentation& seg) {
  std::vector<int> ids;
  ids.reserve(seg.size());
  for (const auto& c : seg.components) ids.push_back(c.id);
  return ids;
}

inline Prediction predict(const BuiltinModel& model, const Vocab& vocab, std::string_view text) {
  return model.predict_ids(token_ids(tokenize(text, vocab)));
}

/// Per-component L2 norm of dL/de_i, with L the cross-entropy under `gold`.
inline GradientReport grad_norms(const BuiltinModel& model, const Vocab& vocab, std::string_view text, int gold) {
  const auto seg = tokenize(text, vocab);
  const auto ids = token_ids(seg);
  std::vector<double> grads;
  const auto [loss, _] = model.backward(model.gather(ids), ids.size(), gold, {.embed_grads = &grads});
  GradientReport r;
  r.loss = loss;
  const auto D = static_cast<std::size_t>(model.embed_dim());
  for (std::size_t i = 0; i < seg.size(); ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < D; ++j) sq += grads[i * D + j] * grads[i * D + j];
    r.component_norms.push_back(std::sqrt(sq));
    r.tokens.push_back(seg.components[i].token);
    r.chunk_index.push_back(static_cast<int>(seg.words[seg.components[i].word_index].chunk));
  }
  return r;
}

/// Worst relative error between the analytic dL/de_i and central finite
/// differences over every embedding coordinate of every component.
/// Relative error is |a - n| / max(|a|, |n|, 1e-8).
inline double finite_diff_check(const BuiltinModel& model, const Vocab& vocab, std::string_view text, int gold,
                                double epsilon) {
  const auto ids = token_ids(tokenize(text, vocab));
  auto embs = model.gather(ids);
  std::vector<double> analytic;
  model.backward(embs, ids.size(), gold, {.embed_grads = &analytic});
  // A perturbation of token t only changes hidden row t, so the loss is
  // re-pooled from cached rows (same summation order as forward).
  const auto n = ids.size();
  const auto d = static_cast<std::size_t>(model.embed_dim());
  const auto h = static_cast<std::size_t>(model.hidden_dim());
  const auto rows = model.forward(embs, n).hidden;
  std::vector<double> row(h), pooled(h);
  auto loss_with = [&](std::size_t t) {
    model.hidden_row(embs.data() + t * d, row.data());
    std::fill(pooled.begin(), pooled.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* hi = i == t ? row.data() : rows.data() + i * h;
      for (std::size_t k = 0; k < h; ++k) pooled[k] += hi[k];
    }
    for (auto& p : pooled) p /= static_cast<double>(n);
    return BuiltinModel::cross_entropy(model.head(pooled), gold);
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < embs.size(); ++k) {
    const double saved = embs[k];
    embs[k] = saved + epsilon;
    const double up = loss_with(k / d);
    embs[k] = saved - epsilon;
    const double down = loss_with(k / d);
    embs[k] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[k] - numeric) / denom);
  }
  return worst;
}

struct TrainResult {
  BuiltinModel model;
  double train_accuracy = 0.0;
};

/// Minibatch gradient descent on cross-entropy. Deterministic for a given
/// corpus, vocab and hyperparameters.
inline TrainResult train(const std::vector<LabeledExample>& corpus, const Vocab& vocab, const Hyperparams& hp,
                         int num_classes = 0,
                         const std::function<void(int, const BuiltinModel&)>& on_epoch = {}) {
  if (corpus.empty()) throw DataError("train: empty corpus");
  if (hp.batch_size <= 0 || hp.epochs < 0 || hp.learning_rate <= 0.0) throw ContractViolation("train: bad hyperparameters");
  int max_label = 0;
  std::vector<bool> present;
  for (const auto& ex : corpus) {
    if (ex.label < 0) throw DataError("train: negative label");
    max_label = std::max(max_label, ex.label);
    if (present.size() <= static_cast<std::size_t>(ex.label)) present.resize(static_cast<std::size_t>(ex.label) + 1);
    present[static_cast<std::size_t>(ex.label)] = true;
  }
  if (std::count(present.begin(), present.end(), true) < 2) throw DataError("train: corpus has a single class");
  const int classes = std::max(num_classes, max_label + 1);

  std::vector<std::vector<int>> ids;
  ids.reserve(corpus.size());
  for (const auto& ex : corpus) ids.push_back(token_ids(tokenize(ex.text, vocab)));

  auto model = BuiltinModel::initialized(vocab.size(), hp.embed_dim, hp.hidden_dim, classes, hp.seed, vocab.hash());
  std::mt19937_64 rng(splitmix64(hp.seed));
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const auto D = static_cast<std::size_t>(hp.embed_dim);
  std::vector<double> gA(model.hidden_weights().size()), gb(model.hidden_bias().size());
  std::vector<double> gW(model.output_weights().size()), gc(model.output_bias().size());
  std::vector<double> gE_dense(model.embeddings().size(), 0.0);
  std::vector<int> touched;
  std::vector<double> eg;

  const std::size_t batches = (order.size() + static_cast<std::size_t>(hp.batch_size) - 1) / static_cast<std::size_t>(hp.batch_size);
  const std::size_t total_steps = batches * static_cast<std::size_t>(hp.epochs);
  std::size_t step_index = 0;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    shuffle_in_place(rng, order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hp.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(hp.batch_size));
      std::fill(gA.begin(), gA.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      std::fill(gW.begin(), gW.end(), 0.0);
      std::fill(gc.begin(), gc.end(), 0.0);
      touched.clear();
      for (std::size_t b = start; b < stop; ++b) {
        const auto& x = ids[order[b]];
        if (x.empty()) continue;
        model.backward(model.gather(x), x.size(), corpus[order[b]].label,
                       {.embed_grads = &eg, .hidden_w = &gA, .hidden_b = &gb, .out_w = &gW, .out_b = &gc});
        for (std::size_t i = 0; i < x.size(); ++i) {
          touched.push_back(x[i]);
          double* dst = gE_dense.data() + static_cast<std::size_t>(x[i]) * D;
          for (std::size_t j = 0; j < D; ++j) dst[j] += eg[i * D + j];
        }
      }
      double lr = hp.learning_rate;
      if (hp.linear_decay) lr *= 1.0 - static_cast<double>(step_index) / static_cast<double>(total_steps);
      ++step_index;
      const double step = lr / static_cast<double>(stop - start);
      const double shrink = 1.0 - lr * hp.weight_decay;
      auto apply = [step, shrink](std::vector<double>& p, const std::vector<double>& g) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = shrink * p[i] - step * g[i];
      };
      apply(model.hidden_weights(), gA);
      apply(model.hidden_bias(), gb);
      apply(model.output_weights(), gW);
      apply(model.output_bias(), gc);
      std::sort(touched.begin(), touched.end());
      touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
      for (int id : touched) {
        double* src = gE_dense.data() + static_cast<std::size_t>(id) * D;
        double* dst = model.embeddings().data() + static_cast<std::size_t>(id) * D;
        for (std::size_t j = 0; j < D; ++j) {
          dst[j] = shrink * dst[j] - step * src[j];
          src[j] = 0.0;
        }
      }
    }
    if (on_epoch) on_epoch(epoch + 1, model);
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (!ids[i].empty() && model.predict_ids(ids[i]).label == corpus[i].label) ++correct;
  return {std::move(model), static_cast<double>(correct) / static_cast<double>(corpus.size())};
}

/// Victim adapter over a trained built-in model.
class BuiltinVictim : public Victim {
 public:
  BuiltinVictim(std::shared_ptr<const Vocab> vocab, BuiltinModel model)
      : vocab_(std::move(vocab)), model_(std::move(model)) {
    if (model_.vocab_size() != vocab_->size()) throw DataError("model and vocab sizes differ");
    if (model_.vocab_hash() != 0 && model_.vocab_hash() != vocab_->hash())
      throw DataError("model was trained with a different vocabulary");
    hidden_ = model_.hidden_table();
  }

  int num_classes() const override { return model_.num_classes(); }
  bool supports_gradients() const override { return true; }

  Prediction predict(std::string_view text) const override {
    return model_.predict_cached(hidden_, token_ids(tokenize(text, *vocab_)));
  }
  GradientReport grad_norms(std::string_view text, int gold) const override {
    return kbtypo::grad_norms(model_, *vocab_, text, gold);
  }

  const BuiltinModel& model() const { return model_; }
  const Vocab& vocab() const { return *vocab_; }

 private:
  std::shared_ptr<const Vocab> vocab_;
  BuiltinModel model_;
  std::vector<double> hidden_;
};

}  // namespace kbtypo
