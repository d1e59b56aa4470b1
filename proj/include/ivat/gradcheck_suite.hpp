#pragma once

// Named finite-difference checks covering every primitive, the composed
// losses, the full classifier, and the virtual adversarial total loss with
// the perturbation frozen. The fault-injected entry exists to prove the
// harness can see a wrong gradient; it must fail.

#include <cstdint>
#include <string>
#include <vector>

#include "ivat/data.hpp"
#include "ivat/grad_check.hpp"
#include "ivat/model.hpp"
#include "ivat/rng.hpp"
#include "ivat/tensor.hpp"
#include "ivat/training.hpp"

namespace ivat {

struct SuiteCheck {
  GradCheckReport report;
  bool expect_fail = false;

  bool ok() const { return expect_fail ? !report.pass : report.pass; }
};

namespace detail {

inline Tensor rand_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.normal(0.0, scale);
  return Tensor::from_data(std::move(shape), std::move(data));
}

// Deliberately wrong gradient rule (forward 2x, backward reports 3).
inline Tensor faulty_scale(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * x.value()[i];
  Tape* tape = Tape::active();
  bool rec = tape && x.requires_grad();
  Tensor result = make_result("faulty_scale", x.shape(), std::move(out), rec);
  if (rec) {
    auto xn = x.node();
    auto on = result.node();
    tape->record([xn, on] {
      if (on->grad.empty()) return;
      ensure_grad(*xn);
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += 3.0 * on->grad[i];
    });
  }
  return result;
}

inline EncodedBatch suite_batch(std::size_t vocab_size) {
  EncodedBatch b;
  b.batch = 2;
  b.tokens = 6;
  b.token_ids = {2, 5, 7, 4, 3, 0, 2, 6, 8, 9, 3, 4};
  for (int& id : b.token_ids)
    if (id >= static_cast<int>(vocab_size)) id = static_cast<int>(vocab_size) - 1;
  b.attention_mask = {1, 1, 1, 1, 1, 0, 1, 1, 1, 1, 1, 1};
  b.labels = {0, 1};
  b.example_index = {0, 1};
  return b;
}

}  // namespace detail

inline std::vector<SuiteCheck> run_gradcheck_suite(bool inject_fault = false) {
  std::vector<SuiteCheck> checks;
  auto push = [&](GradCheckReport r, bool expect_fail = false) {
    checks.push_back({std::move(r), expect_fail});
  };
  Rng rng(20240811);

  {
    Tensor a = detail::rand_tensor(rng, {3, 4});
    Tensor b = detail::rand_tensor(rng, {4});
    push(grad_check("add_broadcast", {a, b}, [=] { return sum(add(a, b)); }));
  }
  {
    Tensor a = detail::rand_tensor(rng, {2, 3});
    Tensor b = detail::rand_tensor(rng, {2, 3});
    push(grad_check("sub", {a, b}, [=] { return sum(mul(sub(a, b), sub(a, b))); }));
  }
  {
    Tensor a = detail::rand_tensor(rng, {2, 2, 3});
    Tensor b = detail::rand_tensor(rng, {3});
    push(grad_check("mul_broadcast", {a, b}, [=] { return sum(mul(a, b)); }));
  }
  {
    Tensor a = detail::rand_tensor(rng, {3, 4});
    Tensor b = detail::rand_tensor(rng, {4, 5});
    Tensor w = detail::rand_tensor(rng, {3, 5});
    push(grad_check("matmul", {a, b}, [=] { return sum(mul(matmul(a, b), w)); }));
  }
  {
    Tensor a = detail::rand_tensor(rng, {2, 3, 4});
    Tensor b = detail::rand_tensor(rng, {4, 3});
    Tensor w = detail::rand_tensor(rng, {2, 3, 3});
    push(grad_check("matmul_batched_shared", {a, b}, [=] { return sum(mul(matmul(a, b), w)); }));
  }
  {
    Tensor x = detail::rand_tensor(rng, {3, 5});
    Tensor w = detail::rand_tensor(rng, {3, 5});
    push(grad_check("softmax", {x}, [=] { return sum(mul(softmax(x, 1), w)); }));
  }
  {
    Tensor x = detail::rand_tensor(rng, {2, 4});
    push(grad_check("log_of_softmax", {x}, [=] { return sum(log(softmax(x, 1))); }));
  }
  {
    Tensor x = detail::rand_tensor(rng, {3, 4});
    push(grad_check("gelu", {x}, [=] { return sum(gelu(x)); }));
  }
  {
    Tensor x = detail::rand_tensor(rng, {4, 6});
    Tensor g = detail::rand_tensor(rng, {6});
    Tensor b = detail::rand_tensor(rng, {6});
    Tensor w = detail::rand_tensor(rng, {4, 6});
    push(grad_check("layer_norm", {x, g, b}, [=] { return sum(mul(layer_norm(x, g, b), w)); }));
  }
  {
    Tensor table = detail::rand_tensor(rng, {7, 3});
    std::vector<int> ids = {0, 3, 3, 6, 1, 2};
    Tensor w = detail::rand_tensor(rng, {2, 3, 3});
    push(grad_check("embedding", {table}, [=] { return sum(mul(embedding(table, ids, 2, 3), w)); }));
  }
  {
    Tensor x = detail::rand_tensor(rng, {2, 3, 4});
    Tensor w = detail::rand_tensor(rng, {4, 3, 2});
    push(grad_check("reshape_transpose", {x}, [=] {
      return sum(mul(transpose(reshape(x, {2, 3, 2, 2}), {3, 1, 2, 0}), reshape(w, {2, 3, 2, 2})));
    }));
  }
  {
    Tensor x = detail::rand_tensor(rng, {5});
    push(grad_check("sum_mean", {x}, [=] { return add(sum(mul(x, x)), mean(x)); }));
  }
  {
    Tensor logits = detail::rand_tensor(rng, {4, 2}, 2.0);
    std::vector<int> labels = {0, 1, 1, 0};
    push(grad_check("cross_entropy", {logits}, [=] { return cross_entropy(logits, labels); }));
  }
  {
    Tensor p = detail::rand_tensor(rng, {3, 2}, 1.5);
    Tensor q = detail::rand_tensor(rng, {3, 2}, 1.5);
    push(grad_check("symmetric_kl", {p, q}, [=] { return symmetric_kl(p, q); }));
  }

  ModelConfig mc;
  mc.vocab_size = 12;
  mc.d_model = 8;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.d_ff = 16;
  mc.max_len = 10;
  mc.dropout_rate = 0.0;
  mc.init_seed = 99;
  EncoderModel model = init_model(mc);
  EncodedBatch batch = detail::suite_batch(mc.vocab_size);
  {
    push(grad_check(
        "classifier_cross_entropy", model.parameters(),
        [&model, &batch] {
          return cross_entropy(forward_batch(model, batch, false, nullptr).logits, batch.labels);
        },
        1e-5, 1e-4));
  }
  {
    // Virtual adversarial total with the perturbation frozen at the value
    // the ascent found for the initial parameters.
    AdvConfig adv;
    adv.epsilon = 1e-3;
    adv.eta = 1e-3;
    adv.sigma = 1e-3;
    adv.k_steps = 1;
    adv.alpha = 1.0;
    Tensor frozen_delta;
    {
      Tensor x0 = embed_input(model, batch).detach();
      Tensor target;
      {
        NoTape guard;
        target = forward_batch(model, batch, false, nullptr).logits.detach();
      }
      LogitsFn f = [&model, &batch](const Tensor& xp) {
        return forward_from_embeddings(model, xp, batch, false, nullptr).logits;
      };
      frozen_delta = pgd_find_delta(f, x0, InnerObjective::toward_logits(target), adv, &batch, 4242);
      model.zero_grad();
    }
    push(grad_check(
        "smart_total_frozen_delta", model.parameters(),
        [&model, &batch, frozen_delta, &adv] {
          Tensor x = embed_input(model, batch);
          ClassifierOutput clean = forward_from_embeddings(model, x, batch, false, nullptr);
          Tensor clean_loss = cross_entropy(clean.logits, batch.labels);
          Tensor adv_logits =
              forward_from_embeddings(model, add(x, frozen_delta), batch, false, nullptr).logits;
          Tensor reg = symmetric_kl(adv_logits, clean.logits);
          return total_loss_smart(clean_loss, reg, adv.alpha);
        },
        1e-5, 1e-3));
  }
  if (inject_fault) {
    Tensor x = detail::rand_tensor(rng, {4});
    push(grad_check("injected_fault", {x}, [=] { return sum(detail::faulty_scale(x)); }), true);
  }
  return checks;
}

}  // namespace ivat
