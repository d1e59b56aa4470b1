#pragma once

// Fine-tuning with optional adversarial regularization.
//
// Two adversarial objectives are implemented over embedding-space
// perturbations delta with an l-inf ball constraint:
//
//   supervised:  max_{|delta| <= eps} CE(f(x + delta), y), optimized directly;
//   virtual:     CE(f(x), y) + alpha * max_{|delta| <= eps} SKL(f(x + delta), f(x)),
//
// where SKL is the symmetric KL divergence between the two output
// distributions and the inner maximum is approximated by K projected
// gradient ascent steps with l-inf-normalized steps of size eta from a
// N(0, sigma^2) start. The virtual objective never reads labels; its target
// distribution f(x) is held fixed (stop-gradient) during the inner ascent,
// while the outer gradient flows through both divergence arguments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ivat/data.hpp"
#include "ivat/error.hpp"
#include "ivat/eval.hpp"
#include "ivat/model.hpp"
#include "ivat/rng.hpp"
#include "ivat/tensor.hpp"

#include "json.hpp"

namespace ivat {

enum class TrainMethod { standard, adv_supervised, smart };

inline TrainMethod parse_method(const std::string& s) {
  if (s == "standard") return TrainMethod::standard;
  if (s == "adv_supervised") return TrainMethod::adv_supervised;
  if (s == "smart") return TrainMethod::smart;
  raise(ErrorKind::config, "unknown method '" + s + "' (expected standard, adv_supervised or smart)");
}

inline const char* method_name(TrainMethod m) {
  switch (m) {
    case TrainMethod::standard: return "standard";
    case TrainMethod::adv_supervised: return "adv_supervised";
    case TrainMethod::smart: return "smart";
  }
  return "?";
}

struct AdvConfig {
  double epsilon = 1e-5;  // perturbation ball radius
  double eta = 1e-3;      // ascent step size
  double sigma = 1e-5;    // init noise scale
  std::size_t k_steps = 1;
  double alpha = 1.0;  // weight of the virtual adversarial term

  void validate() const {
    if (epsilon < 0.0) raise(ErrorKind::config, "adv: epsilon must be non-negative");
    if (eta < 0.0) raise(ErrorKind::config, "adv: eta must be non-negative");
    if (sigma < 0.0) raise(ErrorKind::config, "adv: sigma must be non-negative");
    if (alpha < 0.0) raise(ErrorKind::config, "adv: alpha must be non-negative");
  }
};

struct TrainConfig {
  TrainMethod method = TrainMethod::standard;
  double learning_rate = 1e-5;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 10;
  double warmup_ratio = 0.1;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 7;
  std::size_t eval_batch_size = 64;

  void validate() const {
    if (learning_rate <= 0.0) raise(ErrorKind::config, "train: learning_rate must be positive");
    if (batch_size == 0) raise(ErrorKind::config, "train: batch_size must be positive");
    if (max_epochs == 0) raise(ErrorKind::config, "train: max_epochs must be positive");
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0)
      raise(ErrorKind::config, "train: warmup_ratio must be in [0, 1)");
    if (grad_clip_norm <= 0.0) raise(ErrorKind::config, "train: grad_clip_norm must be positive");
    if (eval_batch_size == 0) raise(ErrorKind::config, "train: eval_batch_size must be positive");
  }
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean cross entropy over the batch.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2) raise(ErrorKind::dimension, "cross_entropy: logits must be [batch, classes]");
  std::size_t b = s[0], c = s[1];
  if (labels.size() != b) raise(ErrorKind::contract, "cross_entropy: label count does not match batch");
  std::vector<double> onehot(b * c, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      raise(ErrorKind::value, "cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    onehot[i * c + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  Tensor lp = log(softmax(logits, 1));
  Tensor picked = mul(Tensor::from_data({b, c}, std::move(onehot)), lp);
  return mul_scalar(sum(picked), -1.0 / static_cast<double>(b));
}

// Mean symmetric KL divergence between two batches of logits:
// mean_i sum_c (p_ic - q_ic) * (log p_ic - log q_ic). Non-negative, exactly
// zero for identical logits.
inline Tensor symmetric_kl(const Tensor& logits_p, const Tensor& logits_q) {
  if (logits_p.shape() != logits_q.shape() || logits_p.rank() != 2)
    raise(ErrorKind::dimension, "symmetric_kl: logits must be two equal [batch, classes] tensors");
  std::size_t b = logits_p.shape()[0];
  Tensor p = softmax(logits_p, 1);
  Tensor q = softmax(logits_q, 1);
  Tensor t = mul(sub(p, q), sub(log(p), log(q)));
  return mul_scalar(sum(t), 1.0 / static_cast<double>(b));
}

// ---------------------------------------------------------------------------
// Perturbations
// ---------------------------------------------------------------------------

// Gaussian N(0, sigma^2) start, zeroed at padded positions. sigma == 0 yields
// exact zeros and consumes no randomness. The mask applies when the shape is
// [batch, tokens, ...] and a batch is given.
inline Tensor init_perturbation(const Shape& shape, double sigma, std::uint64_t seed,
                                const EncodedBatch* batch = nullptr) {
  std::vector<double> data(shape_numel(shape), 0.0);
  if (sigma > 0.0) {
    Rng rng(seed);
    for (double& v : data) v = rng.normal(0.0, sigma);
  }
  if (batch != nullptr) {
    if (shape.size() < 2 || shape[0] != batch->batch || shape[1] != batch->tokens)
      raise(ErrorKind::dimension, "init_perturbation: shape does not match the batch");
    std::size_t inner = shape_numel(shape) / (batch->batch * batch->tokens);
    for (std::size_t b = 0; b < batch->batch; ++b)
      for (std::size_t t = 0; t < batch->tokens; ++t)
        if (!batch->attention_mask[b * batch->tokens + t])
          std::fill_n(data.begin() + (b * batch->tokens + t) * inner, inner, 0.0);
  }
  Tensor out = Tensor::from_data(shape, std::move(data));
  out.set_requires_grad(true);
  return out;
}

inline Tensor project_linf(const Tensor& delta, double epsilon) {
  if (epsilon < 0.0) raise(ErrorKind::value, "project_linf: epsilon must be non-negative");
  std::vector<double> out = delta.value();
  for (double& v : out) v = std::clamp(v, -epsilon, epsilon);
  Tensor t = Tensor::from_data(delta.shape(), std::move(out));
  t.set_requires_grad(delta.requires_grad());
  return t;
}

// One ascent step: delta' = project(delta + eta * g / ||g||_inf), with the
// norm taken per example over unmasked positions. Examples whose gradient
// norm falls below 1e-12 keep their delta unchanged.
inline Tensor pgd_ascent_step(const Tensor& delta, const std::vector<double>& grad, double eta,
                              double epsilon, const EncodedBatch* batch = nullptr) {
  const Shape& s = delta.shape();
  if (grad.size() != delta.size()) raise(ErrorKind::dimension, "pgd_ascent_step: gradient size mismatch");
  if (s.empty()) raise(ErrorKind::dimension, "pgd_ascent_step: delta must have a batch axis");
  std::size_t n_examples = s[0];
  std::size_t per = delta.size() / n_examples;
  std::size_t inner = 0;
  if (batch != nullptr) {
    if (s.size() < 2 || s[0] != batch->batch || s[1] != batch->tokens)
      raise(ErrorKind::dimension, "pgd_ascent_step: shape does not match the batch");
    inner = per / batch->tokens;
  }
  auto active = [&](std::size_t b, std::size_t off) {
    if (batch == nullptr) return true;
    return batch->attention_mask[b * batch->tokens + off / inner] != 0;
  };
  std::vector<double> out = delta.value();
  for (std::size_t b = 0; b < n_examples; ++b) {
    double norm = 0.0;
    for (std::size_t j = 0; j < per; ++j)
      if (active(b, j)) norm = std::max(norm, std::fabs(grad[b * per + j]));
    if (norm < 1e-12) continue;
    for (std::size_t j = 0; j < per; ++j) {
      std::size_t idx = b * per + j;
      if (!active(b, j)) {
        out[idx] = 0.0;
        continue;
      }
      out[idx] = std::clamp(out[idx] + eta * grad[idx] / norm, -epsilon, epsilon);
    }
  }
  Tensor t = Tensor::from_data(s, std::move(out));
  t.set_requires_grad(true);
  return t;
}

struct DeltaStats {
  double max_abs = 0.0;      // over unmasked positions, post-projection
  double pad_max_abs = 0.0;  // over masked positions

  void track(const Tensor& delta, const EncodedBatch* batch) {
    const auto& v = delta.value();
    if (batch == nullptr) {
      for (double x : v) max_abs = std::max(max_abs, std::fabs(x));
      return;
    }
    std::size_t inner = v.size() / (batch->batch * batch->tokens);
    for (std::size_t b = 0; b < batch->batch; ++b) {
      for (std::size_t t = 0; t < batch->tokens; ++t) {
        bool real = batch->attention_mask[b * batch->tokens + t] != 0;
        const double* cell = v.data() + (b * batch->tokens + t) * inner;
        for (std::size_t j = 0; j < inner; ++j) {
          double a = std::fabs(cell[j]);
          (real ? max_abs : pad_max_abs) = std::max(real ? max_abs : pad_max_abs, a);
        }
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Inner maximization
// ---------------------------------------------------------------------------

using LogitsFn = std::function<Tensor(const Tensor&)>;

// What the ascent climbs: cross entropy toward fixed labels, or symmetric KL
// toward a fixed logits snapshot.
class InnerObjective {
 public:
  static InnerObjective toward_labels(const std::vector<int>& labels) {
    InnerObjective o;
    o.labels_ = &labels;
    return o;
  }

  static InnerObjective toward_logits(Tensor target) {
    InnerObjective o;
    o.target_ = std::move(target);
    return o;
  }

  Tensor loss(const Tensor& logits) const {
    if (labels_ != nullptr) return cross_entropy(logits, *labels_);
    return symmetric_kl(logits, target_);
  }

 private:
  const std::vector<int>* labels_ = nullptr;
  Tensor target_;
};

// K steps of projected gradient ascent on the objective, starting from the
// sigma-noise init. Each iteration runs under its own tape; the caller is
// responsible for clearing any parameter gradients the inner backward passes
// accumulate (the ascent differentiates through the model to reach delta).
// The returned delta is a constant (post-projection, in-ball).
inline Tensor pgd_find_delta(const LogitsFn& forward, const Tensor& x0, const InnerObjective& objective,
                             const AdvConfig& adv, const EncodedBatch* batch, std::uint64_t seed,
                             DeltaStats* stats = nullptr) {
  adv.validate();
  Tensor delta = init_perturbation(x0.shape(), adv.sigma, seed, batch);
  for (std::size_t k = 0; k < adv.k_steps; ++k) {
    delta.zero_grad();
    {
      Tape inner;
      Tensor logits = forward(add(x0, delta));
      Tensor loss = objective.loss(logits);
      inner.backward(loss);
    }
    delta = pgd_ascent_step(delta, delta.grad(), adv.eta, adv.epsilon, batch);
    if (stats) stats->track(delta, batch);
  }
  if (adv.k_steps == 0) {
    delta = project_linf(delta, adv.epsilon);
    if (stats) stats->track(delta, batch);
  }
  delta.set_requires_grad(false);
  return delta;
}

// ---------------------------------------------------------------------------
// Adversarial objectives
// ---------------------------------------------------------------------------

// Supervised adversarial loss: CE(f(x + delta*), y) with delta* found by
// ascent on the same CE. Differentiable through the forward function; delta*
// is treated as a constant by the outer graph. after_ascent runs once the
// inner loop is done, before the outer forward, so callers can discard
// gradients the ascent leaked into their parameters.
inline Tensor supervised_adv_loss(const LogitsFn& forward, const Tensor& x,
                                  const std::vector<int>& labels, const AdvConfig& adv,
                                  std::uint64_t seed, const EncodedBatch* batch = nullptr,
                                  DeltaStats* stats = nullptr,
                                  const std::function<void()>& after_ascent = {}) {
  Tensor delta = pgd_find_delta(forward, x.detach(), InnerObjective::toward_labels(labels), adv,
                                batch, seed, stats);
  if (after_ascent) after_ascent();
  return cross_entropy(forward(add(x, delta)), labels);
}

inline Tensor supervised_adv_loss(EncoderModel& model, const EncodedBatch& batch, const AdvConfig& adv,
                                  std::uint64_t seed, DeltaStats* stats = nullptr) {
  Tensor x = embed_input(model, batch);
  LogitsFn f = [&model, &batch](const Tensor& xp) {
    return forward_from_embeddings(model, xp, batch, false, nullptr).logits;
  };
  return supervised_adv_loss(f, x, batch.labels, adv, seed, &batch, stats,
                             [&model] { model.zero_grad(); });
}

// Virtual adversarial (smoothness) term: SKL(f(x + delta*), f(x)) with
// delta* ascending the same divergence against the frozen clean
// distribution. Gradients flow through both divergence arguments; labels are
// never read.
inline Tensor vat_regularizer(const LogitsFn& forward, const Tensor& x, const Tensor& clean_logits,
                              const AdvConfig& adv, std::uint64_t seed,
                              const EncodedBatch* batch = nullptr, DeltaStats* stats = nullptr,
                              const std::function<void()>& after_ascent = {}) {
  Tensor delta = pgd_find_delta(forward, x.detach(), InnerObjective::toward_logits(clean_logits.detach()),
                                adv, batch, seed, stats);
  if (after_ascent) after_ascent();
  return symmetric_kl(forward(add(x, delta)), clean_logits);
}

inline Tensor vat_regularizer(EncoderModel& model, const EncodedBatch& batch, const AdvConfig& adv,
                              const ClassifierOutput& clean, std::uint64_t seed,
                              DeltaStats* stats = nullptr) {
  if (!clean.logits.defined() || !clean.input_embeddings.defined())
    raise(ErrorKind::contract, "vat_regularizer: clean forward output required");
  LogitsFn f = [&model, &batch](const Tensor& xp) {
    return forward_from_embeddings(model, xp, batch, false, nullptr).logits;
  };
  return vat_regularizer(f, clean.input_embeddings, clean.logits, adv, seed, &batch, stats,
                         [&model] { model.zero_grad(); });
}

// clean + alpha * regularizer. alpha == 0 returns the clean loss tensor
// itself, keeping the graph identical to standard training.
inline Tensor total_loss_smart(const Tensor& clean_loss, const Tensor& regularizer, double alpha) {
  if (alpha == 0.0) return clean_loss;
  return add(clean_loss, mul_scalar(regularizer, alpha));
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

// Linear warmup to the peak over ceil(warmup_ratio * total) steps, then
// linear decay to zero at step == total.
inline double lr_schedule(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_ratio) {
  if (total_steps == 0) raise(ErrorKind::contract, "lr_schedule: total_steps must be positive");
  if (step > total_steps) raise(ErrorKind::contract, "lr_schedule: step beyond total_steps");
  if (warmup_ratio < 0.0 || warmup_ratio >= 1.0)
    raise(ErrorKind::value, "lr_schedule: warmup_ratio must be in [0, 1)");
  std::size_t warmup = static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
  if (warmup >= total_steps) warmup = total_steps - 1;
  if (warmup > 0 && step <= warmup)
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  return peak_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

struct ClipResult {
  double pre_norm = 0.0;
  double post_norm = 0.0;
};

// Global l2 clipping across all parameter gradients, in place.
inline ClipResult clip_grad_global_norm(std::vector<Tensor>& params, double max_norm) {
  if (max_norm <= 0.0) raise(ErrorKind::value, "clip: max_norm must be positive");
  double sq = 0.0;
  for (auto& p : params)
    if (p.grad_allocated())
      for (double g : p.grad()) sq += g * g;
  ClipResult r;
  r.pre_norm = std::sqrt(sq);
  if (!std::isfinite(r.pre_norm)) raise(ErrorKind::numeric, "clip: non-finite gradient norm");
  if (r.pre_norm > max_norm) {
    double scale = max_norm / r.pre_norm;
    double sq2 = 0.0;
    for (auto& p : params) {
      if (!p.grad_allocated()) continue;
      for (double& g : p.grad()) {
        g *= scale;
        sq2 += g * g;
      }
    }
    r.post_norm = std::sqrt(sq2);
  } else {
    r.post_norm = r.pre_norm;
  }
  return r;
}

struct AdamState {
  std::size_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<std::vector<double>> m, v;

  void init(const std::vector<Tensor>& params) {
    t = 0;
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.size(), 0.0);
      v.emplace_back(p.size(), 0.0);
    }
  }
};

inline void adam_step(std::vector<Tensor>& params, AdamState& state, double lr) {
  if (state.m.size() != params.size())
    raise(ErrorKind::contract, "adam: state not initialized for this parameter list");
  ++state.t;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (p.size() != state.m[i].size()) raise(ErrorKind::contract, "adam: parameter size changed");
    auto& value = p.value();
    auto& grad = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      double g = grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      double update = lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + state.eps);
      value[j] -= update;
      if (!std::isfinite(value[j])) raise(ErrorKind::numeric, "adam: non-finite parameter value");
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double clean_loss = 0.0;
  double adv_term = 0.0;
  double total_loss = 0.0;
  double grad_norm_pre_clip = 0.0;
  double grad_norm_post_clip = 0.0;
  double delta_max_abs = 0.0;
  double delta_pad_max_abs = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double dev_macro_f1 = 0.0;
  double dev_accuracy = 0.0;
  bool best_so_far = false;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  bool aborted = false;
  std::string abort_reason;

  std::string to_jsonl() const {
    std::string out;
    std::size_t next_epoch_record = 0;
    auto emit_epochs_through = [&](std::size_t epoch) {
      while (next_epoch_record < epochs.size() && epochs[next_epoch_record].epoch <= epoch) {
        const auto& e = epochs[next_epoch_record++];
        nlohmann::ordered_json j;
        j["type"] = "epoch";
        j["epoch"] = e.epoch;
        j["dev_macro_f1"] = e.dev_macro_f1;
        j["dev_accuracy"] = e.dev_accuracy;
        j["best_so_far"] = e.best_so_far;
        out += j.dump() + "\n";
      }
    };
    for (const auto& s : steps) {
      if (s.epoch > 0) emit_epochs_through(s.epoch - 1);
      nlohmann::ordered_json j;
      j["type"] = "step";
      j["step"] = s.step;
      j["epoch"] = s.epoch;
      j["lr"] = s.lr;
      j["clean_loss"] = s.clean_loss;
      j["adv_term"] = s.adv_term;
      j["total_loss"] = s.total_loss;
      j["grad_norm_pre_clip"] = s.grad_norm_pre_clip;
      j["grad_norm_post_clip"] = s.grad_norm_post_clip;
      j["delta_max_abs"] = s.delta_max_abs;
      j["delta_pad_max_abs"] = s.delta_pad_max_abs;
      out += j.dump() + "\n";
    }
    emit_epochs_through(epochs.empty() ? 0 : epochs.back().epoch);
    if (aborted) {
      nlohmann::ordered_json j;
      j["type"] = "abort";
      j["reason"] = abort_reason;
      out += j.dump() + "\n";
    }
    return out;
  }
};

struct TrainResult {
  TrainHistory history;
  double best_dev_macro_f1 = -1.0;
  std::size_t best_epoch = 0;
  bool aborted = false;
  std::string abort_reason;
};

// Runs up to max_epochs over the training split. When a dev split is given
// the model is evaluated each epoch and left at the best-dev parameters on
// return. A numeric abort (NaN/inf anywhere in the step) stops training,
// keeps the history, and restores the best parameters seen so far.
inline TrainResult train_run(EncoderModel& model, const DatasetSplit& train_split,
                             const DatasetSplit* dev_split, const Vocab& vocab, const TrainConfig& tc,
                             const AdvConfig& adv) {
  tc.validate();
  adv.validate();
  model.config.validate();
  if (train_split.examples.empty()) raise(ErrorKind::value, "train: empty training split");

  TrainResult result;
  model.set_requires_grad(true);
  std::vector<Tensor> params = model.parameters();
  AdamState opt;
  opt.init(params);

  std::size_t steps_per_epoch = (train_split.examples.size() + tc.batch_size - 1) / tc.batch_size;
  std::size_t total_steps = steps_per_epoch * tc.max_epochs;
  std::size_t global_step = 0;
  auto best_params = model.snapshot();

  for (std::size_t epoch = 0; epoch < tc.max_epochs && !result.aborted; ++epoch) {
    auto batches = make_batches(train_split.examples, vocab, tc.batch_size, model.config.max_len,
                                derive_seed(tc.seed, "shuffle", epoch), true);
    for (const auto& batch : batches) {
      double lr = lr_schedule(global_step, total_steps, tc.learning_rate, tc.warmup_ratio);
      ++global_step;
      std::uint64_t perturb_seed = derive_seed(tc.seed, "perturb", global_step);
      Rng dropout_rng(derive_seed(tc.seed, "dropout", global_step));
      StepRecord rec;
      rec.step = global_step;
      rec.epoch = epoch;
      rec.lr = lr;
      try {
        model.zero_grad();
        DeltaStats dstats;
        Tape tape;
        Tensor total;
        if (tc.method == TrainMethod::adv_supervised) {
          total = supervised_adv_loss(model, batch, adv, perturb_seed, &dstats);
          {
            NoTape guard;
            Tensor clean_logits = forward_batch(model, batch, false, nullptr).logits;
            rec.clean_loss = cross_entropy(clean_logits, batch.labels).item();
          }
          rec.adv_term = total.item() - rec.clean_loss;
        } else {
          Tensor x = embed_input(model, batch);
          ClassifierOutput out = forward_from_embeddings(model, x, batch, true, &dropout_rng);
          Tensor clean = cross_entropy(out.logits, batch.labels);
          rec.clean_loss = clean.item();
          total = clean;
          if (tc.method == TrainMethod::smart && adv.alpha != 0.0) {
            // KL reference: a dropout-free forward when dropout is active,
            // otherwise the training forward itself.
            ClassifierOutput ref = model.config.dropout_rate > 0.0
                                       ? forward_from_embeddings(model, x, batch, false, nullptr)
                                       : out;
            ref.input_embeddings = x;
            Tensor reg = vat_regularizer(model, batch, adv, ref, perturb_seed, &dstats);
            rec.adv_term = adv.alpha * reg.item();
            total = total_loss_smart(clean, reg, adv.alpha);
          }
        }
        rec.total_loss = total.item();
        tape.backward(total);
        ClipResult clip = clip_grad_global_norm(params, tc.grad_clip_norm);
        rec.grad_norm_pre_clip = clip.pre_norm;
        rec.grad_norm_post_clip = clip.post_norm;
        adam_step(params, opt, lr);
        rec.delta_max_abs = dstats.max_abs;
        rec.delta_pad_max_abs = dstats.pad_max_abs;
        result.history.steps.push_back(rec);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::numeric) throw;
        result.aborted = true;
        result.abort_reason = e.what();
        break;
      }
    }
    if (!result.aborted && dev_split != nullptr) {
      MetricsReport report = evaluate_split(model, *dev_split, vocab, tc.eval_batch_size);
      EpochRecord er;
      er.epoch = epoch;
      er.dev_macro_f1 = report.overall.macro_f1;
      er.dev_accuracy = report.overall.accuracy;
      er.best_so_far = report.overall.macro_f1 > result.best_dev_macro_f1;
      if (er.best_so_far) {
        result.best_dev_macro_f1 = report.overall.macro_f1;
        result.best_epoch = epoch;
        best_params = model.snapshot();
      }
      result.history.epochs.push_back(er);
    }
  }
  if (dev_split != nullptr) model.restore(best_params);
  result.history.aborted = result.aborted;
  result.history.abort_reason = result.abort_reason;
  return result;
}

}  // namespace ivat
