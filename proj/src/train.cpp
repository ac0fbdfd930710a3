#include "aspmtl/train.hpp"

#include "aspmtl/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

namespace aspmtl {

std::string to_string(DiffMode m) { return m == DiffMode::PerSentence ? "sentence" : "batch"; }

DiffMode parse_diff_mode(const std::string& text) {
  if (text == "sentence") return DiffMode::PerSentence;
  if (text == "batch") return DiffMode::PerBatch;
  throw ConfigError("diff_mode: expected sentence or batch, got '" + text + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
  weights().validate();
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

void TrainHistory::write_csv(std::ostream& out, const std::vector<std::string>& task_names) const {
  out << "epoch,task,train_loss,dev_error,disc_acc,l_adv,l_diff\n";
  for (const auto& e : epochs) {
    for (std::size_t k = 0; k < e.tasks.size(); ++k) {
      const auto& t = e.tasks[k];
      out << e.epoch << ',' << (k < task_names.size() ? task_names[k] : std::to_string(k)) << ',' << fmt(t.train_loss)
          << ',' << fmt(t.dev_error) << ',' << fmt(t.disc_acc) << ',' << fmt(t.l_adv) << ',' << fmt(t.l_diff) << '\n';
    }
  }
}

std::vector<ParamRef> trainable_parameters(Model& model) {
  std::vector<ParamRef> out;
  for (auto& r : named_parameters(model)) {
    if (r.trainable) out.push_back(r);
  }
  return out;
}

double sgd_step(std::span<const ParamRef> params, const GradientMap& grads, double lr, double clip_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    auto it = grads.find(p.name);
    if (it == grads.end()) continue;
    if (!all_finite(it->second)) throw DivergenceError("non-finite gradient for parameter " + p.name);
    if (it->second.rows() != p.value->rows() || it->second.cols() != p.value->cols()) {
      throw ShapeError("gradient for " + p.name + " has shape " + shape_string(it->second) + ", parameter " +
                       shape_string(*p.value));
    }
    sq += it->second.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  const double factor = (std::isfinite(clip_norm) && norm > clip_norm) ? clip_norm / norm : 1.0;
  for (const auto& p : params) {
    if (!p.trainable) continue;
    auto it = grads.find(p.name);
    if (it == grads.end()) continue;
    *p.value -= (lr * factor) * it->second;
    if (!all_finite(*p.value)) throw DivergenceError("parameter " + p.name + " became non-finite");
  }
  return norm;
}

void SgdOptimizer::step(std::span<const ParamRef> params, const GradientMap& grads) {
  sgd_step(params, grads, lr_, clip_);
}

ModelVars bind_named(const VarMap& vars, const Model& model) {
  auto get = [&](const std::string& name) {
    auto it = vars.find(name);
    if (it == vars.end()) throw ContractError("bind: no variable for parameter " + name);
    return it->second;
  };
  ModelVars mv;
  mv.embeddings = get("embedding");
  mv.shared = LstmVars{get("shared.weight"), get("shared.bias")};
  for (std::size_t k = 0; k < model.params.priv.size(); ++k) {
    const std::string p = "private." + std::to_string(k);
    mv.priv.push_back(LstmVars{get(p + ".weight"), get(p + ".bias")});
  }
  for (std::size_t k = 0; k < model.params.heads.size(); ++k) {
    const std::string p = "head." + std::to_string(k);
    mv.heads.push_back(HeadVars{get(p + ".weight"), get(p + ".bias")});
  }
  if (model.params.disc) mv.disc = HeadVars{get("disc.weight"), get("disc.bias")};
  return mv;
}

Var batch_loss(const ModelVars& vars, const Model& model, const Batch& batch, const TrainConfig& cfg,
               BatchParts* parts) {
  if (batch.samples.empty()) throw ContractError("batch_loss: empty batch");
  const bool asp = model.config.has_discriminator();
  const LossWeights w = cfg.weights();
  const GradReversalSpec reversal{w.lambda};
  const auto task = static_cast<Index>(batch.task);

  if (batch.unlabeled) {
    if (!asp) throw ContractError("batch_loss: unlabeled batches need the adversarial scheme");
    std::vector<Var> adv;
    ForwardOptions opts;
    opts.classify = false;
    for (const Sample* s : batch.samples) {
      EncodedSequence shared = lstm_encode(lookup(vars.embeddings, std::span<const int>(s->ids)), vars.shared);
      adv.push_back(adversarial_loss(shared.final_h, task, *vars.disc, reversal));
    }
    Var l_adv = mean(std::span<const Var>(adv));
    const double lambda = w.lambda;
    Var total = weighted_sum(std::span<const Var>(&l_adv, 1), std::span<const double>(&lambda, 1));
    if (parts) {
      parts->adv = l_adv.scalar();
      parts->total = total.scalar();
    }
    return total;
  }

  std::vector<Var> ce, adv, diff, shared_finals, private_finals;
  for (const Sample* s : batch.samples) {
    ForwardVars fv = forward(vars, model, std::span<const int>(s->ids), batch.task);
    ce.push_back(cross_entropy(fv.class_probs, static_cast<Index>(s->label)));
    if (!asp) continue;
    adv.push_back(adversarial_loss(fv.shared.final_h, task, *vars.disc, reversal));
    if (cfg.diff_mode == DiffMode::PerSentence) {
      diff.push_back(diff_loss(fv.shared.hidden_matrix(), fv.priv->hidden_matrix()));
    } else {
      shared_finals.push_back(fv.shared.final_h);
      private_finals.push_back(fv.priv->final_h);
    }
  }
  const std::pair<std::size_t, Var> per_task{batch.task, mean(std::span<const Var>(ce))};
  Var l_task = task_loss(std::span<const std::pair<std::size_t, Var>>(&per_task, 1), w);
  std::optional<Var> l_adv, l_diff;
  if (asp) {
    l_adv = mean(std::span<const Var>(adv));
    if (cfg.diff_mode == DiffMode::PerSentence) {
      l_diff = mean(std::span<const Var>(diff));
    } else {
      const Index d = model.config.hidden;
      Var s = stack_rows(std::span<const Var>(shared_finals), 0, d);
      Var h = stack_rows(std::span<const Var>(private_finals), 0, d);
      l_diff = diff_loss(s, h);
    }
  }
  Var total = total_loss(l_task, l_adv, l_diff, w);
  if (parts) {
    parts->task = per_task.second.scalar();
    if (l_adv) parts->adv = l_adv->scalar();
    if (l_diff) parts->diff = l_diff->scalar();
    parts->total = total.scalar();
  }
  return total;
}

GradientMap batch_gradients(const Model& model, const Batch& batch, const TrainConfig& cfg, ReversalMode mode,
                            BatchParts* parts) {
  Tape tape(mode);
  const ModelVars vars = bind(tape, model);
  Var loss = batch_loss(vars, model, batch, cfg, parts);
  return tape.backward(loss);
}

BatchParts train_step(Model& model, const Batch& batch, const TrainConfig& cfg, Optimizer& opt) {
  BatchParts parts;
  auto params = trainable_parameters(model);
  if (cfg.alternating && model.config.has_discriminator()) {
    std::vector<ParamRef> disc, rest;
    for (const auto& p : params) (p.name.rfind("disc.", 0) == 0 ? disc : rest).push_back(p);
    GradientMap g = batch_gradients(model, batch, cfg, ReversalMode::Reverse, &parts);
    if (!std::isfinite(parts.total)) throw DivergenceError("non-finite loss");
    opt.step(disc, g);
    g = batch_gradients(model, batch, cfg, ReversalMode::Reverse);
    opt.step(rest, g);
    return parts;
  }
  GradientMap g = batch_gradients(model, batch, cfg, ReversalMode::Reverse, &parts);
  if (!std::isfinite(parts.total)) throw DivergenceError("non-finite loss");
  opt.step(params, g);
  return parts;
}

double evaluate(const Model& model, std::span<const Sample> samples, std::size_t task) {
  if (samples.empty()) throw InputError("evaluate: empty split");
  std::size_t wrong = 0;
  for (const auto& s : samples) {
    if (predict(model, std::span<const int>(s.ids), task) != s.label) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(samples.size());
}

double discriminator_accuracy(const Model& model, std::span<const Sample> samples, std::size_t task) {
  if (!model.params.disc) throw ContractError("discriminator_accuracy: model has no discriminator");
  if (samples.empty()) throw InputError("discriminator_accuracy: empty split");
  std::size_t right = 0;
  for (const auto& s : samples) {
    const Tensor p = discriminate(shared_features(model, std::span<const int>(s.ids)), *model.params.disc);
    Index best = 0;
    for (Index j = 1; j < p.rows(); ++j) {
      if (p(j, 0) > p(best, 0)) best = j;
    }
    if (static_cast<std::size_t>(best) == task) ++right;
  }
  return static_cast<double>(right) / static_cast<double>(samples.size());
}

namespace {

struct TaskStream {
  std::vector<Batch> batches;
  std::size_t cursor = 0;
  std::size_t epoch = 0;
};

struct Accum {
  double loss = 0.0, adv = 0.0, diff = 0.0;
  std::size_t n = 0, n_adv = 0, n_diff = 0;
};

}  // namespace

TrainResult train_multitask(Model model, const std::vector<EncodedTask>& data, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t K = model.config.tasks();
  if (data.size() != K) {
    throw CompatibilityError("model has " + std::to_string(K) + " tasks, data has " + std::to_string(data.size()));
  }
  if (!cfg.alpha.empty() && cfg.alpha.size() != K) {
    throw ConfigError("alpha lists " + std::to_string(cfg.alpha.size()) + " weights for " + std::to_string(K) + " tasks");
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (data[k].train.empty()) throw InputError("task " + data[k].name + " has no training examples");
    if (data[k].dev.empty()) throw InputError("task " + data[k].name + " has no dev examples");
    if (static_cast<Index>(data[k].classes) > model.config.classes[k]) {
      throw CompatibilityError("task " + data[k].name + " has more classes than the model head");
    }
  }

  BatchOptions bopts;
  bopts.size = cfg.batch_size;
  bopts.seed = cfg.seed;
  bopts.include_unlabeled = cfg.use_unlabeled && model.config.has_discriminator();
  bopts.unlabeled_ratio = cfg.unlabeled_ratio;

  std::vector<TaskStream> streams(K);
  std::size_t largest = 0;
  for (std::size_t k = 0; k < K; ++k) {
    streams[k].batches = make_batches(data[k], k, 0, bopts);
    largest = std::max(largest, streams[k].batches.size());
  }

  SgdOptimizer opt(cfg.learning_rate, cfg.clip_norm);
  TrainResult result;
  result.model = model;
  double best_dev = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::vector<Accum> acc(K);
    try {
      for (std::size_t step = 0; step < K * largest; ++step) {
        const std::size_t k = step % K;
        TaskStream& st = streams[k];
        if (st.cursor == st.batches.size()) {
          st.batches = make_batches(data[k], k, ++st.epoch, bopts);
          st.cursor = 0;
        }
        const Batch& batch = st.batches[st.cursor++];
        const BatchParts parts = train_step(model, batch, cfg, opt);
        if (!batch.unlabeled) {
          acc[k].loss += parts.task;
          ++acc[k].n;
        }
        if (!std::isnan(parts.adv)) {
          acc[k].adv += parts.adv;
          ++acc[k].n_adv;
        }
        if (!std::isnan(parts.diff)) {
          acc[k].diff += parts.diff;
          ++acc[k].n_diff;
        }
      }
    } catch (const DivergenceError& e) {
      result.diverged = true;
      result.divergence = "epoch " + std::to_string(epoch) + ": " + e.what();
      return result;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    double dev_sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      TaskEpoch te;
      te.train_loss = acc[k].n ? acc[k].loss / static_cast<double>(acc[k].n) : std::nan("");
      te.dev_error = evaluate(model, data[k].dev, k);
      if (model.params.disc) te.disc_acc = discriminator_accuracy(model, data[k].dev, k);
      if (acc[k].n_adv) te.l_adv = acc[k].adv / static_cast<double>(acc[k].n_adv);
      if (acc[k].n_diff) te.l_diff = acc[k].diff / static_cast<double>(acc[k].n_diff);
      dev_sum += te.dev_error;
      rec.tasks.push_back(te);
    }
    rec.mean_dev_error = dev_sum / static_cast<double>(K);
    result.history.epochs.push_back(rec);
    if (cfg.on_epoch) cfg.on_epoch(rec, model);

    if (rec.mean_dev_error < best_dev) {
      best_dev = rec.mean_dev_error;
      result.model = model;
      result.history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

GridResult grid_search(const ModelFactory& factory, const std::vector<EncodedTask>& data, const TrainConfig& base,
                       const Grid& grid, std::size_t jobs) {
  auto or_base = [](const std::vector<double>& v, double b) { return v.empty() ? std::vector<double>{b} : v; };
  GridResult out;
  for (double lr : or_base(grid.learning_rates, base.learning_rate)) {
    for (double lambda : or_base(grid.lambdas, base.lambda)) {
      for (double gamma : or_base(grid.gammas, base.gamma)) {
        GridCell cell;
        cell.config = base;
        cell.config.learning_rate = lr;
        cell.config.lambda = lambda;
        cell.config.gamma = gamma;
        out.cells.push_back(cell);
      }
    }
  }
  auto run = [&](GridCell& cell) {
    TrainResult r = train_multitask(factory(cell.config), data, cell.config);
    cell.diverged = r.diverged;
    if (!r.diverged && !r.history.epochs.empty()) {
      cell.mean_dev_error = r.history.epochs[r.history.best_epoch].mean_dev_error;
    }
  };
  if (jobs <= 1) {
    for (auto& cell : out.cells) run(cell);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(out.cells.size());
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < std::min(jobs, out.cells.size()); ++w) {
      workers.emplace_back([&] {
        for (std::size_t i; (i = next++) < out.cells.size();) {
          try {
            run(out.cells[i]);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  for (std::size_t i = 1; i < out.cells.size(); ++i) {
    if (out.cells[i].mean_dev_error < out.cells[out.best].mean_dev_error) out.best = i;
  }
  return out;
}

TransferResult train_transfer(const Model& source, const EncodedTask& target, TransferMode mode,
                              const TrainConfig& cfg) {
  Model m = build_transfer(source, mode, target.classes, cfg.seed);
  TrainResult r = train_multitask(std::move(m), std::vector<EncodedTask>{target}, cfg);
  if (r.diverged) throw DivergenceError("transfer training diverged: " + r.divergence);
  TransferResult out{std::move(r.model), std::move(r.history), 0.0, 0.0};
  out.dev_error = evaluate(out.model, target.dev, 0);
  out.test_error = target.test.empty() ? std::nan("") : evaluate(out.model, target.test, 0);
  return out;
}

double probe_accuracy(const Model& model, const std::vector<EncodedTask>& data, const ProbeOptions& opts) {
  const Index d = model.config.hidden;
  const auto K = static_cast<Index>(data.size());
  auto features = [&](Split split, std::vector<Index>& labels) {
    std::size_t n = 0;
    for (const auto& t : data) n += t.split(split).size();
    Tensor x(static_cast<Index>(n), d);
    labels.clear();
    Index row = 0;
    for (std::size_t k = 0; k < data.size(); ++k) {
      for (const auto& s : data[k].split(split)) {
        x.row(row++) = shared_features(model, std::span<const int>(s.ids)).col(0).transpose();
        labels.push_back(static_cast<Index>(k));
      }
    }
    return x;
  };
  std::vector<Index> y_train, y_dev;
  Tensor x_train = features(Split::Train, y_train);
  Tensor x_dev = features(Split::Dev, y_dev);
  if (x_train.rows() == 0 || x_dev.rows() == 0) throw InputError("probe_accuracy: empty train or dev split");

  const Eigen::RowVectorXd mu = x_train.colwise().mean();
  Eigen::RowVectorXd sd = ((x_train.rowwise() - mu).array().square().colwise().mean()).sqrt();
  for (Index j = 0; j < d; ++j) {
    if (!(sd(j) > 1e-12)) sd(j) = 1.0;
  }
  auto standardize = [&](Tensor& x) { x = ((x.rowwise() - mu).array().rowwise() / sd.array()).matrix(); };
  standardize(x_train);
  standardize(x_dev);

  const auto n = static_cast<double>(x_train.rows());
  Tensor y = Tensor::Zero(x_train.rows(), K);
  for (Index i = 0; i < x_train.rows(); ++i) y(i, y_train[static_cast<std::size_t>(i)]) = 1.0;
  Tensor w = Tensor::Zero(d, K);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(K);
  for (std::size_t it = 0; it < opts.iterations; ++it) {
    Tensor z = (x_train * w).rowwise() + b;
    for (Index i = 0; i < z.rows(); ++i) {
      z.row(i).array() -= z.row(i).maxCoeff();
      z.row(i) = z.row(i).array().exp().matrix();
      z.row(i) /= z.row(i).sum();
    }
    const Tensor g = (z - y) / n;
    w -= opts.learning_rate * (x_train.transpose() * g);
    b -= opts.learning_rate * g.colwise().sum();
  }
  const Tensor scores = (x_dev * w).rowwise() + b;
  std::size_t right = 0;
  for (Index i = 0; i < scores.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < K; ++j) {
      if (scores(i, j) > scores(i, best)) best = j;
    }
    if (best == y_dev[static_cast<std::size_t>(i)]) ++right;
  }
  return static_cast<double>(right) / static_cast<double>(scores.rows());
}

double mean_abs_cosine(const Model& model, const std::vector<EncodedTask>& data, Split split) {
  if (!model.config.has_private()) throw ContractError("mean_abs_cosine: model has no private encoders");
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    for (const auto& s : data[k].split(split)) {
      const ForwardResult r = forward(model, std::span<const int>(s.ids), k);
      const double denom = r.shared_final.norm() * r.private_final->norm();
      total += denom > 0.0 ? std::abs(r.shared_final.col(0).dot(r.private_final->col(0))) / denom : 0.0;
      ++n;
    }
  }
  if (n == 0) throw InputError("mean_abs_cosine: empty split");
  return total / static_cast<double>(n);
}

}  // namespace aspmtl
