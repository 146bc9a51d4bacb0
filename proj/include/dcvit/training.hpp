#pragma once

#include <map>
#include <string>
#include <vector>

#include "dcvit/datagen.hpp"
#include "dcvit/encoder.hpp"
#include "dcvit/finite_diff.hpp"

namespace dcvit {

// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
template <class S>
Var<S> cross_entropy(GradTape<S>& tape, const Var<S>& logits, const std::vector<long>& labels) {
  const long b = logits.value().rows(), k = logits.value().cols();
  if (static_cast<long>(labels.size()) != b)
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(b) + " rows");
  for (long lab : labels)
    if (lab < 0 || lab >= k)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(lab) + " outside 0.." +
                                  std::to_string(k - 1));
  ensure_finite(logits.value(), "cross_entropy");

  auto lm = logits.value().mat();
  S total = 0;
  for (long i = 0; i < b; ++i) {
    S mx = lm.row(i).maxCoeff();
    S lse = mx + std::log((lm.row(i).array() - mx).exp().sum());
    total += lse - lm(i, labels[static_cast<size_t>(i)]);
  }
  Var<S> out(Tensor<S>::scalar(total / static_cast<S>(b)), detail::result_needs_grad(tape, {&logits}));
  if (out.requires_grad()) {
    auto ln = logits.node(), on = out.node();
    tape.record([ln, on, labels] {
      if (!on->has_grad()) return;
      ln->ensure_grad();
      auto l = ln->value.mat();
      const S g = on->grad[0] / static_cast<S>(l.rows());
      for (long i = 0; i < l.rows(); ++i) {
        S mx = l.row(i).maxCoeff();
        Eigen::Array<S, 1, Eigen::Dynamic> p = (l.row(i).array() - mx).exp();
        p /= p.sum();
        ln->grad.mat().row(i).array() += g * p;
        ln->grad.at2(i, labels[static_cast<size_t>(i)]) -= g;
      }
    });
  }
  return out;
}

template <class S>
S cross_entropy(const Tensor<S>& logits, const std::vector<long>& labels) {
  GradTape<S> tape(false);
  return cross_entropy(tape, Var<S>(logits), labels).value()[0];
}

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long batch_size = 16;
  long steps = 100;
  uint64_t seed = 0;
  long eval_every = 50;
  double grad_clip = 0;             // max gradient norm; 0 disables clipping
  double stop_at_val_accuracy = 0;  // stop once reached; 0 disables

  void validate() const {
    if (lr < 0) throw std::invalid_argument("train: lr must be nonnegative");
    if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("train: eval_every must be >= 1");
  }
};

// Standard Adam with bias correction on a single parameter tensor.
template <class S>
void adam_update(Tensor<S>& param, const Tensor<S>& grad, Tensor<S>& m, Tensor<S>& v,
                 const TrainConfig& cfg, long t) {
  if (!param.same_shape(grad))
    throw std::invalid_argument("adam: param " + shape_str(param.shape()) + " vs grad " +
                                shape_str(grad.shape()));
  if (t < 1) throw std::invalid_argument("adam: t must be >= 1");
  if (m.numel() != param.numel()) m = Tensor<S>::zeros(param.shape());
  if (v.numel() != param.numel()) v = Tensor<S>::zeros(param.shape());
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S c1 = S(1) - static_cast<S>(std::pow(cfg.beta1, static_cast<double>(t)));
  const S c2 = S(1) - static_cast<S>(std::pow(cfg.beta2, static_cast<double>(t)));
  for (long i = 0; i < param.numel(); ++i) {
    m[i] = b1 * m[i] + (S(1) - b1) * grad[i];
    v[i] = b2 * v[i] + (S(1) - b2) * grad[i] * grad[i];
    S mhat = m[i] / c1;
    S vhat = v[i] / c2;
    param[i] -= static_cast<S>(cfg.lr) * mhat / (std::sqrt(vhat) + static_cast<S>(cfg.eps));
  }
}

template <class S>
struct AdamState {
  std::map<std::string, std::pair<Tensor<S>, Tensor<S>>> moments;
};

// One optimizer step over every model parameter, with optional global-norm
// gradient clipping.
template <class S>
void adam_step(DcVitModel<S>& model, AdamState<S>& state, const TrainConfig& cfg, long t) {
  S scale = 1;
  if (cfg.grad_clip > 0) {
    double sq = 0;
    model.for_each_param([&](const std::string&, Var<S>& p) {
      const Tensor<S>& g = p.grad();
      for (long i = 0; i < g.numel(); ++i) sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    });
    double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) scale = static_cast<S>(cfg.grad_clip / norm);
  }
  model.for_each_param([&](const std::string& name, Var<S>& p) {
    Tensor<S> param = p.value();
    Tensor<S> grad = p.grad();
    if (scale != S(1)) grad.mat() *= scale;
    auto& [m, v] = state.moments[name];
    adam_update(param, grad, m, v, cfg, t);
    p.set_value(std::move(param));
  });
}

struct EvalRecord {
  long step = 0;
  double train_loss = 0;
  double val_accuracy = 0;
};

struct TrainHistory {
  std::vector<EvalRecord> records;
  std::map<long, double> final_alpha;  // keyed by 1-based layer index

  double best_val_accuracy() const {
    double best = 0;
    for (const auto& r : records) best = std::max(best, r.val_accuracy);
    return best;
  }
  double final_val_accuracy() const { return records.empty() ? 0 : records.back().val_accuracy; }
};

template <class S>
double accuracy(DcVitModel<S>& model, const ChannelBatch<S>& batch) {
  if (batch.labels.empty()) throw std::invalid_argument("accuracy: batch has no labels");
  Tensor<S> logits = forward_logits(batch, model);
  long hits = 0;
  for (long i = 0; i < logits.rows(); ++i) {
    long arg = 0;
    for (long j = 1; j < logits.cols(); ++j)
      if (logits.at2(i, j) > logits.at2(i, arg)) arg = j;
    if (arg == batch.labels[static_cast<size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

// Seeded minibatch loop: sample batch -> cross-entropy -> backward -> Adam.
// Evaluates every eval_every steps and always on the final step.
template <class S>
TrainHistory train(DcVitModel<S>& model, const ChannelBatch<S>& train_set, const ChannelBatch<S>& val_set,
                   const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.labels.empty()) throw std::invalid_argument("train: training batch has no labels");
  RandomStream rng(cfg.seed);
  AdamState<S> state;
  TrainHistory history;

  for (long step = 1; step <= cfg.steps; ++step) {
    std::vector<long> idx(static_cast<size_t>(cfg.batch_size));
    for (long i = 0; i < cfg.batch_size; ++i) idx[static_cast<size_t>(i)] = rng.index(train_set.batch_size());
    ChannelBatch<S> minibatch = subset(train_set, idx);

    model.zero_grad();
    GradTape<S> tape;
    Var<S> logits = forward_logits_var(tape, model, minibatch);
    Var<S> loss = cross_entropy(tape, logits, minibatch.labels);
    backward(tape, loss);
    adam_step(model, state, cfg, step);
    model.zero_grad();

    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      EvalRecord rec;
      rec.step = step;
      rec.train_loss = static_cast<double>(loss.value()[0]);
      rec.val_accuracy = accuracy(model, val_set);
      history.records.push_back(rec);
      if (cfg.stop_at_val_accuracy > 0 && rec.val_accuracy >= cfg.stop_at_val_accuracy) break;
    }
  }

  for (long l = 0; l < model.config.L; ++l)
    if (model.layers[static_cast<size_t>(l)].attn.layer_in_m)
      history.final_alpha[l + 1] =
          static_cast<double>(model.layers[static_cast<size_t>(l)].attn.alpha.value()[0]);
  return history;
}

// ---- whole-model gradient checking ----------------------------------------

struct GradCheckGroup {
  std::string name;
  double max_rel_error = 0;
  long n_params = 0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double worst() const {
    double w = 0;
    for (const auto& g : groups) w = std::max(w, g.max_rel_error);
    return w;
  }
  bool pass(double tol = 1e-3) const { return worst() < tol; }
};

inline std::string gradcheck_group_of(const std::string& param_name) {
  if (param_name.rfind("layers.", 0) == 0) {
    size_t dot = param_name.find('.', 7);
    return param_name.substr(dot + 1);
  }
  return param_name;
}

constexpr long kGradCheckParamLimit = 50000;

// Compares analytic whole-model gradients against central differences
// (h=1e-5) on one random labeled batch. 64-bit only.
inline GradCheckReport gradcheck(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  DcVitModel<double> model = DcVitModel<double>::init(cfg, seed);
  const long n_params = model.param_count();
  if (n_params >= kGradCheckParamLimit)
    throw std::invalid_argument("gradcheck: model has " + std::to_string(n_params) +
                                " parameters, limit is " + std::to_string(kGradCheckParamLimit));

  RandomStream rng(seed + 1);
  ChannelBatch<double> batch;
  const long b = 2;
  batch.images = rng.normal_tensor<double>({b, cfg.C_max, cfg.H_img, cfg.H_img});
  batch.present.assign(b, std::vector<bool>(static_cast<size_t>(cfg.C_max), true));
  batch.labels.resize(b);
  for (long i = 0; i < b; ++i) batch.labels[static_cast<size_t>(i)] = rng.index(cfg.num_classes);

  model.zero_grad();
  GradTape<double> tape;
  Var<double> loss = cross_entropy(tape, forward_logits_var(tape, model, batch), batch.labels);
  backward(tape, loss);

  auto loss_value = [&] {
    GradTape<double> t(false);
    return cross_entropy(t, forward_logits_var(t, model, batch), batch.labels).value()[0];
  };

  std::map<std::string, GradCheckGroup> groups;
  if (cfg.block_kind == "dcvit") groups["alpha"] = {"alpha", 0.0, 0};  // present even when M is empty
  model.for_each_param([&](const std::string& name, Var<double>& p) {
    Tensor<double> analytic = p.grad();
    Tensor<double> x0 = p.value();
    auto f = [&](const Tensor<double>& xv) {
      p.set_value(xv);
      return loss_value();
    };
    Tensor<double> numeric = finite_diff_grad(f, x0, 1e-5);
    p.set_value(x0);
    double err = max_relative_error(analytic, numeric);
    GradCheckGroup& g = groups[gradcheck_group_of(name)];
    g.name = gradcheck_group_of(name);
    g.max_rel_error = std::max(g.max_rel_error, err);
    g.n_params += x0.numel();
  });
  model.zero_grad();

  GradCheckReport report;
  for (auto& [name, g] : groups) report.groups.push_back(g);
  return report;
}

}  // namespace dcvit
