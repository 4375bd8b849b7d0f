#pragma once

// Teacher training, pseudo-labeling, student training and evaluation, plus
// the baselines the student is compared against.

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mkelab/error.hpp"
#include "mkelab/netcore.hpp"
#include "mkelab/perturb.hpp"
#include "mkelab/synthdata.hpp"

namespace mkelab {

enum class LabelMode { hard, soft };
enum class LossMode { combined, equivalent };
enum class Baseline {
  um_teacher,
  um_student,
  naive_pl,
  noisy_student_lite,
  mm_student,
  mm_student_noreg,
  mm_student_sup,
};

inline std::string label_mode_name(LabelMode m) { return m == LabelMode::hard ? "hard" : "soft"; }
inline std::string loss_mode_name(LossMode m) {
  return m == LossMode::combined ? "combined" : "equivalent";
}

inline const std::vector<std::pair<Baseline, std::string>>& baseline_names() {
  static const std::vector<std::pair<Baseline, std::string>> names = {
      {Baseline::um_teacher, "um_teacher"},
      {Baseline::um_student, "um_student"},
      {Baseline::naive_pl, "naive_pl"},
      {Baseline::noisy_student_lite, "noisy_student_lite"},
      {Baseline::mm_student, "mm_student"},
      {Baseline::mm_student_noreg, "mm_student_noreg"},
      {Baseline::mm_student_sup, "mm_student_sup"},
  };
  return names;
}

inline std::string baseline_name(Baseline b) {
  for (const auto& [k, v] : baseline_names())
    if (k == b) return v;
  return "?";
}

inline Baseline parse_baseline(const std::string& s) {
  for (const auto& [k, v] : baseline_names())
    if (v == s) return k;
  throw Error(Errc::config, "baseline: unknown baseline '" + s + "'");
}

/// Data inputs the student sees: modality alpha only, or both.
inline Modality baseline_modality(Baseline b) {
  switch (b) {
    case Baseline::mm_student:
    case Baseline::mm_student_noreg:
    case Baseline::mm_student_sup: return Modality::both;
    default: return Modality::alpha;
  }
}

struct DataConfig {
  int n = 500;
  double noise_std = 0.1;
  double scale = 1.0;
  int n_labeled = 30;
  int n_unlabeled = 270;
  int n_test = 200;
};

struct ExperimentConfig {
  DataConfig data;
  Activation activation = Activation::tanh;
  std::vector<int> teacher_hidden{32, 32};
  std::vector<int> um_student_hidden{32, 32};
  std::vector<int> mm_student_hidden{16, 16};
  Transform transform = Transform::input_gaussian(2.0);
  LabelMode label_mode = LabelMode::soft;
  double gamma = 1.0;
  LossMode loss_mode = LossMode::equivalent;
  bool confidence_weighting = false;
  Baseline baseline = Baseline::mm_student;
  OptimizerConfig teacher_optimizer;
  OptimizerConfig student_optimizer;
  int teacher_epochs = 200;
  int student_epochs = 1000;
  /// Dropout rate of the noisy_student_lite baseline.
  double noisy_dropout = 0.5;
  /// Runs use seeds base_seed, base_seed + 1, ..., base_seed + seeds - 1.
  int seeds = 10;
  std::uint64_t base_seed = 0;

  /// Throws config errors naming the offending field.
  void validate() const {
    if (data.n < 2) throw Error(Errc::config, "data.n: must be >= 2");
    if (!(data.noise_std >= 0.0)) throw Error(Errc::config, "data.noise_std: must be >= 0");
    if (data.n_labeled + data.n_unlabeled + data.n_test != data.n)
      throw Error(Errc::config, "data.split: sizes must sum to data.n");
    if (!(gamma >= 0.0)) throw Error(Errc::config, "gamma: must be >= 0");
    if (confidence_weighting && label_mode != LabelMode::soft)
      throw Error(Errc::config, "confidence_weighting: requires label_mode=soft");
    if (teacher_epochs < 0) throw Error(Errc::config, "teacher.epochs: must be >= 0");
    if (student_epochs < 0) throw Error(Errc::config, "student.epochs: must be >= 0");
    if (seeds < 1) throw Error(Errc::config, "seeds: must be >= 1");
    if (!(noisy_dropout >= 0.0 && noisy_dropout < 1.0))
      throw Error(Errc::config, "noisy_dropout: must lie in [0,1)");
    for (const auto* h : {&teacher_hidden, &um_student_hidden, &mm_student_hidden})
      for (int s : *h)
        if (s < 1) throw Error(Errc::config, "hidden sizes must be >= 1");
    try {
      transform.validate(static_cast<int>(
          std::min({teacher_hidden.size(), um_student_hidden.size(), mm_student_hidden.size()})));
    } catch (const Error& e) {
      throw Error(Errc::config, std::string("transform: ") + e.what());
    }
  }
};

/// A network bound to the modalities it reads.
struct TrainedModel {
  MLP mlp;
  Modality modality;
  std::vector<double> loss_log;
};

struct EvalReport {
  double accuracy = 0.0;
  double err = 0.0;
  std::vector<double> per_class_accuracy;
  /// confusion[true][predicted]
  std::vector<std::vector<long>> confusion;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent sub-stream seed for a given run seed and purpose tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(splitmix64(seed) ^ splitmix64(tag * 0x632be59bd9b4e019ULL + 1));
}

enum SeedTag : std::uint64_t {
  tag_data = 1,
  tag_split = 2,
  tag_teacher_init = 3,
  tag_teacher_noise = 4,
  tag_student_init = 5,
  tag_student_noise = 6,
};

inline std::vector<int> arch(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

inline Mat stack_inputs(const Mat& alpha, const Mat& beta, Modality m) {
  switch (m) {
    case Modality::alpha: return alpha;
    case Modality::beta: return beta;
    case Modality::both: {
      Mat x(alpha.rows() + beta.rows(), alpha.cols());
      x << alpha, beta;
      return x;
    }
  }
  return {};
}

inline Mat one_hot_columns(const std::vector<int>& labels, int num_classes) {
  Mat y = Mat::Zero(num_classes, static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw Error(Errc::shape, "label out of range");
    y(labels[i], static_cast<Eigen::Index>(i)) = 1.0;
  }
  return y;
}

inline std::vector<int> argmax_columns(const Mat& logits) {
  std::vector<int> out(logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    int best = 0;
    for (Eigen::Index k = 1; k < logits.rows(); ++k)
      if (logits(k, c) > logits(best, c)) best = static_cast<int>(k);
    out[c] = best;
  }
  return out;
}

/// Mean over columns of w_i * l_cls(targets_i, logits_i) and its logit
/// gradient, already divided by the batch size.
inline std::pair<double, Mat> weighted_cls(const Mat& targets, const Mat& logits,
                                           const Vec& weights) {
  const auto n = static_cast<double>(logits.cols());
  const Eigen::RowVectorXd lse = log_sum_exp_columns(logits);
  // y log y - y (p - lse), with 0 log 0 = 0
  const Mat ylogy = (targets.array() > 0.0)
                        .select(targets.array() * targets.array().max(1e-12).log(), 0.0)
                        .matrix();
  const Mat logp = logits.rowwise() - lse;
  const Eigen::RowVectorXd per = (ylogy.array() - targets.array() * logp.array())
                                     .colwise()
                                     .sum()
                                     .max(0.0)
                                     .matrix();
  const double total = per.dot(weights.transpose());
  Mat grad = logp.array().exp().matrix() - targets;
  grad.array().rowwise() *= (weights.transpose() / n).array();
  return {total / n, grad};
}

}  // namespace detail

/// One training problem: inputs (d x n), targets (K x n), and how to
/// regularize.
struct TrainSpec {
  Transform transform;
  LossMode loss_mode = LossMode::equivalent;
  double gamma = 0.0;
  /// Per-sample multipliers on the classification term; empty = all ones.
  Vec sample_weights;
  OptimizerConfig optimizer;
  int epochs = 0;
};

/// Full-batch training. Combined mode minimizes
///   mean w_i l_cls(y_i, f(x_i)) + gamma * mean l_reg(f(x_i), T f(x_i));
/// equivalent mode minimizes mean w_i l_cls(y_i, T f(x_i)).
/// Returns the per-epoch objective.
inline std::vector<double> train_network(MLP& mlp, const Mat& inputs, const Mat& targets,
                                         const TrainSpec& spec, Rng& rng) {
  const Eigen::Index n = inputs.cols();
  if (targets.cols() != n || targets.rows() != mlp.num_classes())
    throw Error(Errc::shape, "targets do not match inputs / classes");
  if (n == 0 && spec.epochs > 0) throw Error(Errc::training, "empty training set");
  const Vec weights = spec.sample_weights.size() ? spec.sample_weights : Vec(Vec::Ones(n));
  if (weights.size() != n) throw Error(Errc::shape, "sample weight count mismatch");
  spec.transform.validate(mlp.hidden_layers());

  std::vector<double> log;
  log.reserve(spec.epochs);
  OptState state;
  const bool use_reg = spec.loss_mode == LossMode::combined && spec.gamma > 0.0 &&
                       !spec.transform.is_identity();
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    double objective = 0.0;
    Gradients grads = mlp.zero_gradients();
    if (spec.loss_mode == LossMode::equivalent) {
      ForwardResult fr = forward(mlp, inputs, Mode::train, spec.transform, rng);
      auto [loss, up] = detail::weighted_cls(targets, fr.logits, weights);
      objective = loss;
      grads = backward(mlp, fr.tape, up);
    } else if (use_reg) {
      RegLoss r = reg_loss(mlp, inputs, spec.transform, rng);
      auto [loss, up] = detail::weighted_cls(targets, r.clean.logits, weights);
      objective = loss + spec.gamma * r.mean();
      grads = backward(mlp, r.clean.tape, up);
      grads += reg_loss_backward(mlp, r, Vec::Constant(n, spec.gamma / static_cast<double>(n)));
    } else {
      ForwardResult fr = forward(mlp, inputs, Mode::train, Transform::none(), rng);
      auto [loss, up] = detail::weighted_cls(targets, fr.logits, weights);
      objective = loss;
      grads = backward(mlp, fr.tape, up);
    }
    if (!std::isfinite(objective))
      throw Error(Errc::training, fmt::format("non-finite loss at epoch {}", epoch));
    try {
      optimizer_step(mlp, grads, state, spec.optimizer);
    } catch (const Error& e) {
      throw Error(Errc::training, fmt::format("epoch {}: {}", epoch, e.what()));
    }
    log.push_back(objective);
  }
  return log;
}

inline Mat model_inputs(const TrainedModel& m, const Mat& alpha, const Mat& beta) {
  return detail::stack_inputs(alpha, beta, m.modality);
}

/// Trains the modality-alpha teacher on D_l with cross-entropy.
inline TrainedModel train_teacher(const LabeledUnimodal& d_l, const ExperimentConfig& cfg,
                                  std::uint64_t seed) {
  if (d_l.size() == 0) throw Error(Errc::training, "empty labeled set");
  std::vector<bool> seen(2, false);
  for (int y : d_l.labels)
    if (y >= 0 && y < 2) seen[y] = true;
  if (!seen[0] || !seen[1]) throw Error(Errc::training, "labeled set must contain both classes");

  TrainedModel t{MLP(detail::arch(static_cast<int>(d_l.alpha.rows()), cfg.teacher_hidden, 2),
                     cfg.activation, detail::derive_seed(seed, detail::tag_teacher_init)),
                 Modality::alpha,
                 {}};
  TrainSpec spec;
  spec.optimizer = cfg.teacher_optimizer;
  spec.epochs = cfg.teacher_epochs;
  Rng rng(detail::derive_seed(seed, detail::tag_teacher_noise));
  t.loss_log = train_network(t.mlp, d_l.alpha, detail::one_hot_columns(d_l.labels, 2), spec, rng);
  return t;
}

/// Teacher targets on D_u: softmax outputs (soft) or argmax one-hot with
/// ties going to the lower class index (hard).
inline PseudoLabeledMultimodal pseudo_label(const TrainedModel& teacher,
                                            const UnlabeledMultimodal& d_u, LabelMode mode) {
  if (teacher.modality != Modality::alpha)
    throw Error(Errc::config, "teacher must read modality alpha only");
  PseudoLabeledMultimodal out{d_u.alpha, d_u.beta, {}};
  const Mat logits = predict_logits(teacher.mlp, d_u.alpha);
  if (mode == LabelMode::soft)
    out.targets = softmax_columns(logits);
  else
    out.targets = detail::one_hot_columns(detail::argmax_columns(logits),
                                          static_cast<int>(logits.rows()));
  return out;
}

/// omega = 1 - H(y) / log K: 0 for the uniform label, 1 for a one-hot one.
inline double confidence_weight(const ProbVector& y) {
  const auto K = static_cast<double>(y.size());
  if (K < 2) return 1.0;
  double h = 0.0;
  for (Eigen::Index k = 0; k < y.size(); ++k)
    if (y[k] > 0.0) h -= y[k] * std::log(y[k]);
  return std::clamp(1.0 - h / std::log(K), 0.0, 1.0);
}

inline std::vector<double> confidence_weights(const std::vector<ProbVector>& labels) {
  std::vector<double> w;
  w.reserve(labels.size());
  for (const auto& y : labels) w.push_back(confidence_weight(y));
  return w;
}

inline Vec confidence_weights(const Mat& targets) {
  Vec w(targets.cols());
  for (Eigen::Index c = 0; c < targets.cols(); ++c)
    w[c] = confidence_weight(ProbVector(targets.col(c)));
  return w;
}

/// Extra inputs some baselines need beyond D~_u.
struct StudentInputs {
  /// True labels of D_u (mm_student_sup only).
  const OracleLabels* oracle = nullptr;
  /// D_l (noisy_student_lite only).
  const LabeledUnimodal* labeled = nullptr;
};

/// Trains the student selected by `cfg.baseline`.
inline TrainedModel train_student(const PseudoLabeledMultimodal& d_u, const ExperimentConfig& cfg,
                                  std::uint64_t seed, const StudentInputs& extra = {}) {
  if (cfg.baseline == Baseline::um_teacher)
    throw Error(Errc::config, "baseline: um_teacher has no student");
  if (cfg.confidence_weighting && cfg.label_mode != LabelMode::soft)
    throw Error(Errc::config, "confidence_weighting: requires soft labels");
  const Modality modality = baseline_modality(cfg.baseline);
  const auto& hidden = modality == Modality::both ? cfg.mm_student_hidden : cfg.um_student_hidden;

  Mat inputs = detail::stack_inputs(d_u.alpha, d_u.beta, modality);
  Mat targets = d_u.targets;
  TrainSpec spec;
  spec.transform = cfg.transform;
  spec.loss_mode = cfg.loss_mode;
  spec.gamma = cfg.gamma;
  spec.optimizer = cfg.student_optimizer;
  spec.epochs = cfg.student_epochs;

  switch (cfg.baseline) {
    case Baseline::naive_pl:
    case Baseline::mm_student_noreg:
      spec.transform = Transform::none();
      spec.gamma = 0.0;
      break;
    case Baseline::mm_student_sup:
      if (!extra.oracle) throw Error(Errc::config, "baseline: mm_student_sup needs oracle labels");
      if (extra.oracle->labels.size() != static_cast<std::size_t>(d_u.size()))
        throw Error(Errc::config, "oracle label count does not match D_u");
      targets = detail::one_hot_columns(extra.oracle->labels, static_cast<int>(targets.rows()));
      break;
    case Baseline::noisy_student_lite: {
      if (!extra.labeled)
        throw Error(Errc::config, "baseline: noisy_student_lite needs the labeled set");
      const Mat& la = extra.labeled->alpha;
      Mat x(inputs.rows(), inputs.cols() + la.cols());
      x << la, inputs;
      Mat y(targets.rows(), x.cols());
      y << detail::one_hot_columns(extra.labeled->labels, static_cast<int>(targets.rows())),
          targets;
      inputs = std::move(x);
      targets = std::move(y);
      spec.transform = Transform::dropout(cfg.noisy_dropout);
      spec.loss_mode = LossMode::equivalent;
      break;
    }
    default: break;
  }
  if (cfg.confidence_weighting && cfg.baseline != Baseline::mm_student_sup)
    spec.sample_weights = confidence_weights(targets);

  TrainedModel s{MLP(detail::arch(static_cast<int>(inputs.rows()), hidden,
                                  static_cast<int>(targets.rows())),
                     cfg.activation,
                     detail::derive_seed(seed, detail::tag_student_init * 16 +
                                                   static_cast<std::uint64_t>(modality))),
                 modality,
                 {}};
  Rng rng(detail::derive_seed(seed, detail::tag_student_noise));
  s.loss_log = train_network(s.mlp, inputs, targets, spec, rng);
  return s;
}

inline std::vector<int> predict(const TrainedModel& m, const Mat& alpha, const Mat& beta) {
  return detail::argmax_columns(predict_logits(m.mlp, model_inputs(m, alpha, beta)));
}

inline EvalReport evaluate_predictions(const std::vector<int>& predicted,
                                       const std::vector<int>& truth, int num_classes) {
  if (truth.empty()) throw Error(Errc::eval, "empty test set");
  if (predicted.size() != truth.size()) throw Error(Errc::eval, "prediction count mismatch");
  EvalReport r;
  r.confusion.assign(num_classes, std::vector<long>(num_classes, 0));
  long correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    r.confusion.at(truth[i]).at(predicted[i]) += 1;
    if (truth[i] == predicted[i]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  r.err = 1.0 - r.accuracy;
  for (int k = 0; k < num_classes; ++k) {
    long total = 0;
    for (long c : r.confusion[k]) total += c;
    r.per_class_accuracy.push_back(total ? static_cast<double>(r.confusion[k][k]) / total : 0.0);
  }
  return r;
}

inline EvalReport evaluate(const TrainedModel& model, const LabeledMultimodal& test) {
  if (test.size() == 0) throw Error(Errc::eval, "empty test set");
  return evaluate_predictions(predict(model, test.alpha, test.beta), test.labels,
                              model.mlp.num_classes());
}

// ---------------------------------------------------------------------------
// End-to-end runs

/// Everything shared by all baselines for one seed.
struct SeedContext {
  std::uint64_t seed = 0;
  SplitResult split;
  TrainedModel teacher;
  PseudoLabeledMultimodal pseudo;
  EvalReport teacher_eval;
};

inline SeedContext prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  auto data = twomoon_generate(cfg.data.n, cfg.data.noise_std,
                               detail::derive_seed(seed, detail::tag_data), cfg.data.scale);
  auto parts = split(data, cfg.data.n_labeled, cfg.data.n_unlabeled, cfg.data.n_test,
                     detail::derive_seed(seed, detail::tag_split));
  TrainedModel teacher = train_teacher(parts.labeled, cfg, seed);
  PseudoLabeledMultimodal pseudo = pseudo_label(teacher, parts.unlabeled, cfg.label_mode);
  EvalReport te = evaluate(teacher, parts.test);
  return {seed, std::move(parts), std::move(teacher), std::move(pseudo), std::move(te)};
}

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double teacher_acc = 0.0;
  double student_acc = 0.0;
};

/// Trains and evaluates the configured baseline on a prepared seed.
inline SeedResult run_baseline(const SeedContext& ctx, const ExperimentConfig& cfg,
                               TrainedModel* student_out = nullptr) {
  SeedResult r;
  r.seed = ctx.seed;
  r.teacher_acc = ctx.teacher_eval.accuracy;
  if (cfg.baseline == Baseline::um_teacher) {
    r.student_acc = r.teacher_acc;
    r.ok = true;
    if (student_out) *student_out = ctx.teacher;
    return r;
  }
  StudentInputs extra{&ctx.split.unlabeled_oracle, &ctx.split.labeled};
  TrainedModel s = train_student(ctx.pseudo, cfg, ctx.seed, extra);
  r.student_acc = evaluate(s, ctx.split.test).accuracy;
  r.ok = true;
  if (student_out) *student_out = std::move(s);
  return r;
}

struct ResultRow {
  Baseline baseline = Baseline::mm_student;
  Transform transform;
  LabelMode label_mode = LabelMode::soft;
  std::vector<SeedResult> seeds;

  bool failed() const {
    for (const auto& s : seeds)
      if (!s.ok) return true;
    return false;
  }

  static double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }
  static double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  }
  std::vector<double> teacher_accs() const {
    std::vector<double> v;
    for (const auto& s : seeds)
      if (s.ok) v.push_back(s.teacher_acc);
    return v;
  }
  std::vector<double> student_accs() const {
    std::vector<double> v;
    for (const auto& s : seeds)
      if (s.ok) v.push_back(s.student_acc);
    return v;
  }
  double teacher_mean() const { return mean_of(teacher_accs()); }
  double teacher_std() const { return std_of(teacher_accs()); }
  double student_mean() const { return mean_of(student_accs()); }
  double student_std() const { return std_of(student_accs()); }
};

/// generate -> split -> teacher -> pseudo labels -> student -> evaluate,
/// once per configured seed. A failing seed is recorded, not dropped.
inline ResultRow run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ResultRow row{cfg.baseline, cfg.transform, cfg.label_mode, {}};
  for (int k = 0; k < cfg.seeds; ++k) {
    const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(k);
    try {
      row.seeds.push_back(run_baseline(prepare_seed(cfg, seed), cfg));
    } catch (const Error& e) {
      SeedResult failed;
      failed.seed = seed;
      failed.error = e.what();
      row.seeds.push_back(failed);
    }
  }
  return row;
}

inline std::string format_strength(double s) { return fmt::format("{:g}", s); }

inline constexpr const char* kResultsHeader =
    "baseline,transform,strength,label_mode,seed,teacher_acc,student_acc";

/// One CSV line per seed; failed seeds carry `nan` accuracies.
inline std::string result_rows_csv(const ResultRow& row) {
  std::string out;
  for (const auto& s : row.seeds) {
    out += fmt::format("{},{},{},{},{},", baseline_name(row.baseline), row.transform.kind_name(),
                       format_strength(row.transform.strength()),
                       label_mode_name(row.label_mode), s.seed);
    if (s.ok)
      out += fmt::format("{:.6f},{:.6f}\n", s.teacher_acc, s.student_acc);
    else
      out += "nan,nan\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: text, "MKELAB1" magic, architecture header, row-major arrays.

inline constexpr const char* kCheckpointMagic = "MKELAB1";

inline std::string checkpoint_string(const TrainedModel& m) {
  std::string out = std::string(kCheckpointMagic) + "\n";
  out += "modality " + modality_name(m.modality) + "\n";
  out += "activation " + activation_name(m.mlp.activation()) + "\n";
  out += fmt::format("seed {}\n", m.mlp.seed());
  out += fmt::format("layers {}", m.mlp.layer_sizes().size());
  for (int s : m.mlp.layer_sizes()) out += fmt::format(" {}", s);
  out += "\n";
  for (int l = 0; l < m.mlp.num_layers(); ++l) {
    const Mat& w = m.mlp.weight(l);
    out += fmt::format("weight {} {} {}\n", l, w.rows(), w.cols());
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        out += fmt::format("{}{:.17g}", c ? " " : "", w(r, c));
      out += "\n";
    }
    const Vec& b = m.mlp.bias(l);
    out += fmt::format("bias {} {}\n", l, b.size());
    for (Eigen::Index k = 0; k < b.size(); ++k) out += fmt::format("{}{:.17g}", k ? " " : "", b[k]);
    out += "\n";
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const TrainedModel& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::io, "cannot write " + path);
  f << checkpoint_string(m);
  if (!f) throw Error(Errc::io, "write failed for " + path);
}

inline TrainedModel parse_checkpoint(std::istream& in) {
  auto fail = [](const std::string& why) { return Error(Errc::io, "checkpoint: " + why); };
  std::string word;
  if (!(in >> word) || word != kCheckpointMagic) throw fail("bad magic");
  std::string modality, activation;
  std::uint64_t seed = 0;
  std::size_t count = 0;
  if (!(in >> word) || word != "modality" || !(in >> modality)) throw fail("missing modality");
  if (!(in >> word) || word != "activation" || !(in >> activation))
    throw fail("missing activation");
  if (!(in >> word) || word != "seed" || !(in >> seed)) throw fail("missing seed");
  if (!(in >> word) || word != "layers" || !(in >> count) || count < 2 || count > 64)
    throw fail("missing layers");
  std::vector<int> sizes(count);
  for (auto& s : sizes)
    if (!(in >> s)) throw fail("truncated layer sizes");
  Modality m;
  if (modality == "alpha") m = Modality::alpha;
  else if (modality == "beta") m = Modality::beta;
  else if (modality == "both") m = Modality::both;
  else throw fail("unknown modality " + modality);

  MLP mlp(sizes, parse_activation(activation), seed);
  for (int l = 0; l < mlp.num_layers(); ++l) {
    int idx = 0;
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> word) || word != "weight" || !(in >> idx >> rows >> cols) || idx != l ||
        rows != mlp.weight(l).rows() || cols != mlp.weight(l).cols())
      throw fail("bad weight header at layer " + std::to_string(l));
    Mat& w = mlp.weight_mut(l);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        if (!(in >> w(r, c))) throw fail("truncated weights");
    Eigen::Index len = 0;
    if (!(in >> word) || word != "bias" || !(in >> idx >> len) || idx != l ||
        len != mlp.bias(l).size())
      throw fail("bad bias header at layer " + std::to_string(l));
    Vec& b = mlp.bias_mut(l);
    for (Eigen::Index k = 0; k < len; ++k)
      if (!(in >> b[k])) throw fail("truncated biases");
  }
  return {std::move(mlp), m, {}};
}

inline TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::io, "cannot read " + path);
  return parse_checkpoint(f);
}

}  // namespace mkelab
