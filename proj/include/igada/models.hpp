#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "igada/dataset.hpp"
#include "igada/generators.hpp"
#include "igada/subprocess.hpp"

namespace igada {

class TrainedModel {
 public:
  virtual ~TrainedModel() = default;
  virtual std::size_t num_classes() const = 0;
  virtual std::vector<double> predict_proba(const TimeWindow& w) const = 0;
  virtual std::vector<std::vector<double>> predict_proba_batch(const std::vector<TimeWindow>& ws) const {
    std::vector<std::vector<double>> out;
    out.reserve(ws.size());
    for (const auto& w : ws) out.push_back(predict_proba(w));
    return out;
  }
  virtual nlohmann::json to_json() const = 0;
};

using ModelPtr = std::shared_ptr<const TrainedModel>;

class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual const std::string& id() const = 0;
  virtual ModelPtr train(const LabeledDataset& data, std::uint64_t seed) const = 0;
};

using ClassifierPtr = std::shared_ptr<const Classifier>;

// ---------------------------------------------------------------------------
// Softmax networks: multinomial logistic regression (no hidden layer) and MLP.

/// Layer sizes from input to output, e.g. {D, 64, C}. Parameters are laid
/// out layer by layer as a row-major (out x in) weight block followed by the
/// bias vector.
struct NetworkShape {
  std::vector<std::size_t> sizes;

  std::size_t layers() const noexcept { return sizes.size() - 1; }
  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < layers(); ++l) n += sizes[l + 1] * sizes[l] + sizes[l + 1];
    return n;
  }
  std::size_t weight_offset(std::size_t l) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < l; ++i) n += sizes[i + 1] * sizes[i] + sizes[i + 1];
    return n;
  }
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

inline void softmax_rows(Eigen::MatrixXd& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double mx = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - mx).exp();
    logits.row(i) /= logits.row(i).sum();
  }
}

inline Eigen::MatrixXd forward(const NetworkShape& shape, const std::vector<double>& params, const Eigen::MatrixXd& X,
                               std::vector<Eigen::MatrixXd>* pre_activations = nullptr,
                               std::vector<Eigen::MatrixXd>* activations = nullptr) {
  Eigen::MatrixXd h = X;
  if (activations) activations->push_back(h);
  for (std::size_t l = 0; l < shape.layers(); ++l) {
    const auto in = static_cast<Eigen::Index>(shape.sizes[l]);
    const auto out = static_cast<Eigen::Index>(shape.sizes[l + 1]);
    const double* p = params.data() + shape.weight_offset(l);
    Eigen::Map<const RowMatrix> W(p, out, in);
    Eigen::Map<const Eigen::VectorXd> b(p + out * in, out);
    Eigen::MatrixXd z = h * W.transpose();
    z.rowwise() += b.transpose();
    if (pre_activations) pre_activations->push_back(z);
    if (l + 1 < shape.layers()) {
      h = z.cwiseMax(0.0);
      if (activations) activations->push_back(h);
    } else {
      h = std::move(z);
    }
  }
  softmax_rows(h);
  return h;
}

}  // namespace detail

/// Weighted cross-entropy averaged over the total sample weight W, plus
/// l2 / (2 W) times the squared norm of all weight matrices (biases are not
/// penalized). Fills `grad` when non-null.
inline double network_objective(const NetworkShape& shape, const std::vector<double>& params, const Eigen::MatrixXd& X,
                                const std::vector<std::size_t>& labels, const std::vector<double>& sample_weights,
                                double l2, std::vector<double>* grad = nullptr) {
  const auto n = X.rows();
  const double wsum = std::accumulate(sample_weights.begin(), sample_weights.end(), 0.0);
  std::vector<Eigen::MatrixXd> pre, act;
  Eigen::MatrixXd P = detail::forward(shape, params, X, grad ? &pre : nullptr, grad ? &act : nullptr);

  double loss = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    loss -= sample_weights[static_cast<std::size_t>(i)] *
            std::log(std::max(P(i, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])), 1e-300));
  loss /= wsum;
  double sq = 0;
  for (std::size_t l = 0; l < shape.layers(); ++l) {
    const double* p = params.data() + shape.weight_offset(l);
    for (std::size_t j = 0; j < shape.sizes[l + 1] * shape.sizes[l]; ++j) sq += p[j] * p[j];
  }
  loss += 0.5 * l2 * sq / wsum;
  if (!grad) return loss;

  grad->assign(params.size(), 0.0);
  Eigen::MatrixXd delta = P;
  for (Eigen::Index i = 0; i < n; ++i) {
    delta(i, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])) -= 1.0;
    delta.row(i) *= sample_weights[static_cast<std::size_t>(i)] / wsum;
  }
  for (std::size_t l = shape.layers(); l-- > 0;) {
    const auto in = static_cast<Eigen::Index>(shape.sizes[l]);
    const auto out = static_cast<Eigen::Index>(shape.sizes[l + 1]);
    const double* p = params.data() + shape.weight_offset(l);
    double* g = grad->data() + shape.weight_offset(l);
    Eigen::Map<const RowMatrix> W(p, out, in);
    Eigen::Map<RowMatrix> gW(g, out, in);
    Eigen::Map<Eigen::VectorXd> gb(g + out * in, out);
    gW = delta.transpose() * act[l] + (l2 / wsum) * W;
    gb = delta.colwise().sum().transpose();
    if (l > 0) {
      Eigen::MatrixXd back = delta * W;
      delta = back.cwiseProduct((pre[l - 1].array() > 0).cast<double>().matrix());
    }
  }
  return loss;
}

/// Per-class weights N / (K * N_c) over the K classes present.
inline std::vector<double> balanced_class_weights(const std::vector<std::size_t>& counts) {
  std::size_t n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  std::size_t present = static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }));
  std::vector<double> w(counts.size(), 0.0);
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] > 0) w[c] = static_cast<double>(n) / (static_cast<double>(present) * static_cast<double>(counts[c]));
  return w;
}

struct Standardizer {
  std::vector<double> mean, stddev;

  static Standardizer fit(const LabeledDataset& data) {
    const std::size_t D = data.T() * data.F();
    Standardizer s{std::vector<double>(D, 0.0), std::vector<double>(D, 0.0)};
    const double n = static_cast<double>(data.size());
    for (const auto& w : data)
      for (std::size_t j = 0; j < D; ++j) s.mean[j] += w.values()[j];
    for (double& m : s.mean) m /= n;
    for (const auto& w : data)
      for (std::size_t j = 0; j < D; ++j) {
        double e = w.values()[j] - s.mean[j];
        s.stddev[j] += e * e;
      }
    for (double& v : s.stddev) {
      v = std::sqrt(v / n);
      if (!(v > 1e-12)) v = 1.0;
    }
    return s;
  }

  Eigen::MatrixXd apply(const std::vector<TimeWindow>& ws) const {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(ws.size()), static_cast<Eigen::Index>(mean.size()));
    for (std::size_t i = 0; i < ws.size(); ++i) {
      if (ws[i].values().size() != mean.size()) throw ValidationError("window size does not match the model input");
      for (std::size_t j = 0; j < mean.size(); ++j)
        X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (ws[i].values()[j] - mean[j]) / stddev[j];
    }
    return X;
  }
};

class SoftmaxNetworkModel final : public TrainedModel {
 public:
  SoftmaxNetworkModel(NetworkShape shape, std::vector<double> params, Standardizer standardizer)
      : shape_(std::move(shape)), params_(std::move(params)), std_(std::move(standardizer)) {}

  std::size_t num_classes() const override { return shape_.sizes.back(); }

  std::vector<double> predict_proba(const TimeWindow& w) const override { return predict_proba_batch({w}).front(); }

  std::vector<std::vector<double>> predict_proba_batch(const std::vector<TimeWindow>& ws) const override {
    if (ws.empty()) return {};
    Eigen::MatrixXd P = detail::forward(shape_, params_, std_.apply(ws));
    std::vector<std::vector<double>> out(ws.size());
    for (std::size_t i = 0; i < ws.size(); ++i) {
      for (Eigen::Index k = 0; k < P.cols(); ++k) out[i].push_back(P(static_cast<Eigen::Index>(i), k));
    }
    return out;
  }

  const std::vector<double>& params() const noexcept { return params_; }
  const NetworkShape& shape() const noexcept { return shape_; }

  nlohmann::json to_json() const override {
    return {{"type", "softmax_network"}, {"layers", shape_.sizes}, {"mean", std_.mean},
            {"std", std_.stddev},        {"params", params_}};
  }

  static std::shared_ptr<SoftmaxNetworkModel> from_json(const nlohmann::json& j) {
    NetworkShape shape{j.at("layers").get<std::vector<std::size_t>>()};
    auto params = j.at("params").get<std::vector<double>>();
    if (shape.sizes.size() < 2 || params.size() != shape.param_count())
      throw ValidationError("model JSON: parameter count does not match layer sizes");
    Standardizer s{j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
    if (s.mean.size() != shape.sizes.front() || s.stddev.size() != shape.sizes.front())
      throw ValidationError("model JSON: standardizer size does not match input layer");
    return std::make_shared<SoftmaxNetworkModel>(std::move(shape), std::move(params), std::move(s));
  }

 private:
  NetworkShape shape_;
  std::vector<double> params_;
  Standardizer std_;
};

struct TrainingTrace {
  std::vector<double> losses;
};

struct NetworkTrainingOptions {
  std::vector<std::size_t> hidden;  // empty: multinomial logistic regression
  double l2 = 0.0;
  std::size_t epochs = 300;
  double lr = 0.05;
};

/// Full-batch gradient descent on the balanced-weight objective.
inline std::shared_ptr<SoftmaxNetworkModel> train_softmax_network(const LabeledDataset& data,
                                                                  const NetworkTrainingOptions& opt, std::uint64_t seed,
                                                                  TrainingTrace* trace = nullptr) {
  if (data.empty()) throw ValidationError("cannot train on an empty dataset");
  auto counts = data.class_counts();
  if (std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) < 2)
    throw ValidationError("training data must contain at least 2 classes");
  if (!(opt.lr > 0) || opt.l2 < 0) throw ValidationError("invalid training options");

  Standardizer s = Standardizer::fit(data);
  Eigen::MatrixXd X = s.apply(data.windows());
  std::vector<std::size_t> labels;
  std::vector<double> weights;
  auto cw = balanced_class_weights(counts);
  for (const auto& w : data) {
    labels.push_back(w.label());
    weights.push_back(cw[w.label()]);
  }

  NetworkShape shape;
  shape.sizes.push_back(data.T() * data.F());
  for (auto h : opt.hidden) {
    if (h == 0) throw ValidationError("hidden layer size must be positive");
    shape.sizes.push_back(h);
  }
  shape.sizes.push_back(data.C());

  std::vector<double> params(shape.param_count(), 0.0);
  if (!opt.hidden.empty()) {
    Rng rng = make_rng(seed);
    for (std::size_t l = 0; l < shape.layers(); ++l) {
      double sd = std::sqrt((l + 1 < shape.layers() ? 2.0 : 1.0) / static_cast<double>(shape.sizes[l]));
      std::normal_distribution<double> normal(0.0, sd);
      double* p = params.data() + shape.weight_offset(l);
      for (std::size_t j = 0; j < shape.sizes[l + 1] * shape.sizes[l]; ++j) p[j] = normal(rng);
    }
  }

  std::vector<double> grad;
  for (std::size_t e = 0; e < opt.epochs; ++e) {
    double loss = network_objective(shape, params, X, labels, weights, opt.l2, &grad);
    if (trace) trace->losses.push_back(loss);
    for (std::size_t j = 0; j < params.size(); ++j) params[j] -= opt.lr * grad[j];
  }
  return std::make_shared<SoftmaxNetworkModel>(std::move(shape), std::move(params), std::move(s));
}

inline std::shared_ptr<SoftmaxNetworkModel> train_logistic(const LabeledDataset& data, double l2 = 1.0,
                                                           std::size_t epochs = 500, double lr = 0.1,
                                                           std::uint64_t seed = 0) {
  return train_softmax_network(data, {{}, l2, epochs, lr}, seed);
}

inline std::shared_ptr<SoftmaxNetworkModel> train_mlp(const LabeledDataset& data, std::vector<std::size_t> hidden = {64},
                                                      std::size_t epochs = 300, double lr = 0.05, std::uint64_t seed = 0,
                                                      TrainingTrace* trace = nullptr) {
  if (hidden.empty()) throw ValidationError("mlp needs at least one hidden layer");
  return train_softmax_network(data, {std::move(hidden), 0.0, epochs, lr}, seed, trace);
}

class LogisticClassifier final : public Classifier {
 public:
  explicit LogisticClassifier(double l2 = 1.0, std::size_t epochs = 500, double lr = 0.1)
      : l2_(l2), epochs_(epochs), lr_(lr) {}
  const std::string& id() const override { return id_; }
  ModelPtr train(const LabeledDataset& data, std::uint64_t seed) const override {
    return train_logistic(data, l2_, epochs_, lr_, seed);
  }

 private:
  std::string id_ = "logistic";
  double l2_;
  std::size_t epochs_;
  double lr_;
};

class MlpClassifier final : public Classifier {
 public:
  explicit MlpClassifier(std::vector<std::size_t> hidden = {64}, std::size_t epochs = 300, double lr = 0.05)
      : hidden_(std::move(hidden)), epochs_(epochs), lr_(lr) {}
  const std::string& id() const override { return id_; }
  ModelPtr train(const LabeledDataset& data, std::uint64_t seed) const override {
    return train_mlp(data, hidden_, epochs_, lr_, seed);
  }

 private:
  std::string id_ = "mlp";
  std::vector<std::size_t> hidden_;
  std::size_t epochs_;
  double lr_;
};

// ---------------------------------------------------------------------------
// External models over JSON stdin/stdout

inline nlohmann::json dataset_json(const LabeledDataset& data) {
  nlohmann::json ws = nlohmann::json::array();
  for (const auto& w : data) ws.push_back({{"values", window_matrix_json(w)}, {"label", w.label()}});
  return {{"T", data.T()}, {"F", data.F()}, {"C", data.C()}, {"windows", std::move(ws)}};
}

/// Train request:   {"command": "train", "dataset": {...}, "seed": s} -> {"model": <opaque>}
/// Predict request: {"command": "predict", "model": <opaque>, "windows": [...], "seed": s}
///                  -> {"proba": [[p_0, ..., p_{C-1}], ...]}
class SubprocessModel final : public TrainedModel {
 public:
  SubprocessModel(std::string command, nlohmann::json state, std::size_t classes, std::uint64_t seed,
                  std::chrono::milliseconds timeout)
      : command_(std::move(command)), state_(std::move(state)), classes_(classes), seed_(seed), timeout_(timeout) {}

  std::size_t num_classes() const override { return classes_; }
  std::vector<double> predict_proba(const TimeWindow& w) const override { return predict_proba_batch({w}).front(); }

  std::vector<std::vector<double>> predict_proba_batch(const std::vector<TimeWindow>& ws) const override {
    if (ws.empty()) return {};
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& w : ws) arr.push_back(window_matrix_json(w));
    nlohmann::json req = {{"command", "predict"}, {"model", state_}, {"windows", arr}, {"seed", seed_}};
    std::vector<std::vector<double>> proba;
    try {
      auto reply = nlohmann::json::parse(run_subprocess(command_, req.dump(), timeout_));
      proba = reply.at("proba").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
      throw RuntimeFailure(std::string("model subprocess returned an invalid reply: ") + e.what());
    }
    if (proba.size() != ws.size()) throw RuntimeFailure("model subprocess returned the wrong number of rows");
    for (auto& p : proba) {
      if (p.size() != classes_) throw RuntimeFailure("model subprocess returned the wrong number of classes");
      double s = 0;
      for (double v : p) {
        if (!(v >= 0) || !std::isfinite(v)) throw RuntimeFailure("model subprocess returned an invalid probability");
        s += v;
      }
      if (!(s > 0)) throw RuntimeFailure("model subprocess returned an all-zero probability row");
      for (double& v : p) v /= s;
    }
    return proba;
  }

  nlohmann::json to_json() const override {
    return {{"type", "subprocess"}, {"command", command_}, {"classes", classes_}, {"seed", seed_}, {"model", state_}};
  }

 private:
  std::string command_;
  nlohmann::json state_;
  std::size_t classes_;
  std::uint64_t seed_;
  std::chrono::milliseconds timeout_;
};

class SubprocessClassifier final : public Classifier {
 public:
  SubprocessClassifier(std::string id, std::string command, std::chrono::milliseconds timeout = std::chrono::seconds(300))
      : id_(std::move(id)), command_(std::move(command)), timeout_(timeout) {}

  const std::string& id() const override { return id_; }

  ModelPtr train(const LabeledDataset& data, std::uint64_t seed) const override {
    nlohmann::json req = {{"command", "train"}, {"dataset", dataset_json(data)}, {"seed", seed}};
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(run_subprocess(command_, req.dump(), timeout_));
    } catch (const nlohmann::json::exception& e) {
      throw RuntimeFailure(id_ + ": invalid JSON from model subprocess: " + e.what());
    }
    if (!reply.contains("model")) throw RuntimeFailure(id_ + ": train reply lacks a model");
    return std::make_shared<SubprocessModel>(command_, reply["model"], data.C(), seed, timeout_);
  }

 private:
  std::string id_;
  std::string command_;
  std::chrono::milliseconds timeout_;
};

inline ModelPtr load_model_json(const nlohmann::json& j) {
  auto type = j.at("type").get<std::string>();
  if (type == "softmax_network") return SoftmaxNetworkModel::from_json(j);
  if (type == "subprocess")
    return std::make_shared<SubprocessModel>(j.at("command").get<std::string>(), j.at("model"),
                                             j.at("classes").get<std::size_t>(), j.value("seed", std::uint64_t{0}),
                                             std::chrono::seconds(300));
  throw ValidationError("unknown model type: " + type);
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  double accuracy = 0;
  double macro_f1 = 0;
  double macro_precision = 0;
  double macro_recall = 0;
  std::vector<double> per_class_precision;
  std::vector<double> per_class_recall;
  std::vector<double> per_class_f1;
  std::vector<double> mean_normalized_entropy_per_class;
  std::vector<std::size_t> support;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<std::size_t> absent_classes;           // classes with no sample in the split

  nlohmann::json to_json() const {
    return {{"accuracy", accuracy},
            {"macro_f1", macro_f1},
            {"macro_precision", macro_precision},
            {"macro_recall", macro_recall},
            {"per_class_precision", per_class_precision},
            {"per_class_recall", per_class_recall},
            {"per_class_f1", per_class_f1},
            {"mean_normalized_entropy_per_class", mean_normalized_entropy_per_class},
            {"support", support},
            {"confusion", confusion},
            {"absent_classes", absent_classes}};
  }
};

/// Natural-log entropy of a probability vector.
inline double predictive_entropy(std::span<const double> p) {
  double h = 0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

/// Metrics from predicted probabilities. Macro averages run over all C
/// classes; a class without samples scores 0 and is listed in absent_classes.
inline EvalReport evaluate_probabilities(const std::vector<std::vector<double>>& proba,
                                         const std::vector<std::size_t>& labels, std::size_t C) {
  if (labels.empty()) throw ValidationError("cannot evaluate on an empty split");
  if (proba.size() != labels.size()) throw ValidationError("probability rows do not match labels");
  EvalReport r;
  r.confusion.assign(C, std::vector<std::size_t>(C, 0));
  r.support.assign(C, 0);
  std::vector<double> entropy_sum(C, 0.0);
  const double logC = C > 1 ? std::log(static_cast<double>(C)) : 1.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& p = proba[i];
    if (p.size() != C) throw ValidationError("probability vector has the wrong length");
    std::size_t pred = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    ++r.confusion[labels[i]][pred];
    ++r.support[labels[i]];
    if (pred == labels[i]) ++correct;
    entropy_sum[labels[i]] += C > 1 ? predictive_entropy(p) / logC : 0.0;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  r.per_class_precision.assign(C, 0.0);
  r.per_class_recall.assign(C, 0.0);
  r.per_class_f1.assign(C, 0.0);
  r.mean_normalized_entropy_per_class.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t tp = r.confusion[c][c];
    std::size_t predicted = 0;
    for (std::size_t t = 0; t < C; ++t) predicted += r.confusion[t][c];
    double prec = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    double rec = r.support[c] ? static_cast<double>(tp) / static_cast<double>(r.support[c]) : 0.0;
    r.per_class_precision[c] = prec;
    r.per_class_recall[c] = rec;
    r.per_class_f1[c] = (prec + rec) > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    if (r.support[c]) r.mean_normalized_entropy_per_class[c] = entropy_sum[c] / static_cast<double>(r.support[c]);
    else r.absent_classes.push_back(c);
  }
  auto mean = [&](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(C); };
  r.macro_precision = mean(r.per_class_precision);
  r.macro_recall = mean(r.per_class_recall);
  r.macro_f1 = mean(r.per_class_f1);
  return r;
}

inline EvalReport evaluate(const TrainedModel& model, const LabeledDataset& split) {
  if (split.empty()) throw ValidationError("cannot evaluate on an empty split");
  if (model.num_classes() != split.C()) throw ValidationError("model and split disagree on the number of classes");
  std::vector<std::size_t> labels;
  for (const auto& w : split) labels.push_back(w.label());
  return evaluate_probabilities(model.predict_proba_batch(split.windows()), labels, split.C());
}

}  // namespace igada
