#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "stnas/autodiff.hpp"
#include "stnas/search.hpp"
#include "stnas/st_ops.hpp"

namespace stnas::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (Real& v : t.values()) v = static_cast<Real>(u(rng));
  return t;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;  // "<param>[<index>]"
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor) over every parameter element, where `a` is the
// tape gradient and `n` the central difference with step h.
inline GradCheck check_gradients(ParamStore& store, const std::function<Var(Tape&, ParamBinder&)>& loss,
                                 double h = 1e-5, double floor = 1e-3) {
  auto eval = [&]() {
    Tape tape;
    ParamBinder bind(tape, static_cast<const ParamStore&>(store));
    return static_cast<double>(loss(tape, bind).value()[0]);
  };
  store.zero_grad();
  {
    Tape tape;
    ParamBinder bind(tape, store);
    tape.backward(loss(tape, bind));
  }
  GradCheck out;
  for (auto& p : store) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const Real saved = p.value[i];
      p.value[i] = static_cast<Real>(saved + h);
      const double up = eval();
      p.value[i] = static_cast<Real>(saved - h);
      const double down = eval();
      p.value[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p.grad[i];
      const double rel =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++out.checked;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

// Small dimensions that keep a full search round well under a second.
inline RunConfig tiny_run_config() {
  RunConfig cfg;
  cfg.data.synthetic_nodes = 4;
  cfg.data.synthetic_steps = 200;
  cfg.model.hidden_size = 4;
  cfg.model.attn_dim = 4;
  cfg.model.attn_heads = 1;
  cfg.model.ffn_dim = 8;
  cfg.model.node_emb_dim = 2;
  cfg.model.history = 4;
  cfg.model.horizon = 2;
  cfg.train.epochs = 1;
  cfg.train.batch_size = 8;
  cfg.train.max_steps = 3;
  cfg.plan.total_rounds = 5;
  return cfg;
}

}  // namespace stnas::test
