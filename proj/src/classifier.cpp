#include "relbow/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "relbow/digest.hpp"
#include "relbow/errors.hpp"

namespace relbow {

using nlohmann::json;

std::string FitConfig::digest(std::size_t n_rows) const {
  json j;
  j["lambda"] = resolve_lambda(n_rows);
  j["class_weight"] = class_weight == ClassWeightMode::Balanced ? "balanced" : "none";
  j["max_iter"] = max_iter;
  j["tol"] = tol;
  j["seed"] = seed;
  return digest_hex(j.dump());
}

double FitConfig::resolve_lambda(std::size_t n_rows) const {
  if (lambda) return *lambda;
  return n_rows > 0 ? 1.0 / static_cast<double>(n_rows) : 1.0;
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// log(1 + e^z), stable for large |z|
double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void class_weights(const Dataset& data, ClassWeightMode mode, double& w_pos, double& w_neg) {
  if (mode == ClassWeightMode::None) {
    w_pos = w_neg = 1.0;
    return;
  }
  std::size_t n_pos = 0;
  for (UserClass c : data.y) n_pos += c == UserClass::Diagnosed ? 1 : 0;
  const std::size_t n_neg = data.y.size() - n_pos;
  const double n = static_cast<double>(data.y.size());
  w_pos = n_pos > 0 ? n / (2.0 * static_cast<double>(n_pos)) : 0.0;
  w_neg = n_neg > 0 ? n / (2.0 * static_cast<double>(n_neg)) : 0.0;
}

void check_dataset(std::span<const double> weights, const Dataset& data) {
  if (data.rows.size() != data.y.size())
    throw DimensionMismatch("dataset rows (" + std::to_string(data.rows.size()) +
                            ") != labels (" + std::to_string(data.y.size()) + ")");
  if (weights.size() != data.cols)
    throw DimensionMismatch("weight vector length " + std::to_string(weights.size()) +
                            " != feature width " + std::to_string(data.cols));
  for (const SparseRow& row : data.rows) {
    if (!row.empty() && row.back().first >= data.cols)
      throw DimensionMismatch("feature index " + std::to_string(row.back().first) +
                              " out of range for width " + std::to_string(data.cols));
  }
}

}  // namespace

LossGrad loss_and_gradient(std::span<const double> weights, double bias,
                           const Dataset& data, double lambda, ClassWeightMode mode) {
  check_dataset(weights, data);
  double w_pos = 1.0, w_neg = 1.0;
  class_weights(data, mode, w_pos, w_neg);

  LossGrad out;
  out.grad_weights.assign(data.cols, 0.0);
  double total_weight = 0.0;
  double nll = 0.0;
  for (std::size_t i = 0; i < data.rows.size(); ++i) {
    const SparseRow& row = data.rows[i];
    double z = bias;
    for (const auto& [col, v] : row) z += weights[col] * v;
    const double y = data.y[i] == UserClass::Diagnosed ? 1.0 : 0.0;
    const double c = y > 0.5 ? w_pos : w_neg;
    total_weight += c;
    nll += c * (log1pexp(z) - y * z);
    const double delta = c * (sigmoid(z) - y);
    for (const auto& [col, v] : row) out.grad_weights[col] += delta * v;
    out.grad_bias += delta;
  }
  if (total_weight <= 0.0) throw SingleClass("no weighted samples in dataset");
  out.loss = nll / total_weight;
  out.grad_bias /= total_weight;
  double reg = 0.0;
  for (std::size_t j = 0; j < data.cols; ++j) {
    out.grad_weights[j] = out.grad_weights[j] / total_weight + lambda * weights[j];
    reg += weights[j] * weights[j];
  }
  out.loss += 0.5 * lambda * reg;
  return out;
}

LogisticModel fit(const Dataset& data, const FitConfig& config, FitTrace* trace) {
  std::size_t n_pos = 0;
  for (UserClass c : data.y) n_pos += c == UserClass::Diagnosed ? 1 : 0;
  if (data.y.empty() || n_pos == 0 || n_pos == data.y.size())
    throw SingleClass("fit requires at least one user of each class");

  const double lambda = config.resolve_lambda(data.rows.size());
  LogisticModel model;
  model.weights.assign(data.cols, 0.0);
  model.bias = 0.0;
  model.seed = config.seed;
  model.config_digest = config.digest(data.rows.size());

  // Descent direction is diagonally preconditioned by the mean squared
  // feature value per column (identical to plain gradient descent on
  // standardized features); the objective itself is untouched.
  std::vector<double> precond(data.cols, 0.0);
  for (const SparseRow& row : data.rows)
    for (const auto& [col, v] : row) precond[col] += v * v;
  for (double& p : precond)
    p = 1.0 / std::max(p / static_cast<double>(data.rows.size()), 1e-8);

  LossGrad lg = loss_and_gradient(model.weights, model.bias, data, lambda,
                                  config.class_weight);
  double step = 1.0;
  int iter = 0;
  for (; iter < config.max_iter; ++iter) {
    double g2 = lg.grad_bias * lg.grad_bias;
    for (double g : lg.grad_weights) g2 += g * g;
    if (std::sqrt(g2) <= config.tol) {
      model.converged = true;
      break;
    }
    // directional derivative along the preconditioned direction
    double gdotd = -lg.grad_bias * lg.grad_bias;
    for (std::size_t j = 0; j < data.cols; ++j)
      gdotd -= precond[j] * lg.grad_weights[j] * lg.grad_weights[j];
    step = std::min(step * 2.0, 1e6);
    bool accepted = false;
    std::vector<double> trial_w(data.cols);
    for (int back = 0; back < 60; ++back) {
      for (std::size_t j = 0; j < data.cols; ++j)
        trial_w[j] = model.weights[j] - step * precond[j] * lg.grad_weights[j];
      const double trial_b = model.bias - step * lg.grad_bias;
      LossGrad trial = loss_and_gradient(trial_w, trial_b, data, lambda,
                                         config.class_weight);
      if (trial.loss <= lg.loss + 1e-4 * step * gdotd) {
        model.weights.swap(trial_w);
        model.bias = trial_b;
        lg = std::move(trial);
        accepted = true;
        if (trace) trace->loss_history.push_back(lg.loss);
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // stalled at machine precision
  }
  model.iterations = iter;
  model.final_loss = lg.loss;
  return model;
}

double LogisticModel::predict_proba(const SparseRow& x) const {
  double z = bias;
  for (const auto& [col, v] : x) {
    if (col >= weights.size())
      throw DimensionMismatch("feature index " + std::to_string(col) +
                              " out of range for model width " +
                              std::to_string(weights.size()));
    z += weights[col] * v;
  }
  return sigmoid(z);
}

EvalReport evaluate(std::span<const UserClass> predictions, std::span<const UserClass> truth) {
  if (predictions.size() != truth.size())
    throw LengthMismatch("predictions (" + std::to_string(predictions.size()) +
                         ") != truth (" + std::to_string(truth.size()) + ")");
  EvalReport r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool pred_pos = predictions[i] == UserClass::Diagnosed;
    const bool true_pos = truth[i] == UserClass::Diagnosed;
    if (pred_pos && true_pos) ++r.tp;
    if (pred_pos && !true_pos) ++r.fp;
    if (!pred_pos && true_pos) ++r.fn;
    if (!pred_pos && !true_pos) ++r.tn;
  }
  r.precision = r.tp + r.fp > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
  r.recall = r.tp + r.fn > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  r.f1 = r.precision + r.recall > 0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

std::string eval_text_table(const EvalReport& report, const std::string& model_name) {
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-16s %10s %10s %10s\n", "Model", "Precision", "Recall",
                "F1");
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-16s %10.2f %10.2f %10.2f\n", model_name.c_str(),
                report.precision, report.recall, report.f1);
  out += buf;
  return out;
}

double sweep_threshold(const LogisticModel& model, const Dataset& data) {
  std::vector<double> probs;
  probs.reserve(data.rows.size());
  for (const SparseRow& row : data.rows) probs.push_back(model.predict_proba(row));
  std::vector<double> candidates = probs;
  candidates.push_back(0.5);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  double best_threshold = 0.5, best_f1 = -1.0;
  std::vector<UserClass> preds(data.y.size());
  for (double t : candidates) {
    for (std::size_t i = 0; i < probs.size(); ++i)
      preds[i] = probs[i] >= t ? UserClass::Diagnosed : UserClass::Control;
    const EvalReport r = evaluate(preds, data.y);
    if (r.f1 > best_f1) {
      best_f1 = r.f1;
      best_threshold = t;
    }
  }
  return best_threshold;
}

namespace {
constexpr char kModelMagic[8] = {'R', 'B', 'L', 'O', 'G', 'R', '0', '1'};
}

void save_logistic_model(const LogisticModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write classifier model: " + path.string());
  out.write(kModelMagic, sizeof(kModelMagic));
  const std::uint64_t width = model.weights.size();
  out.write(reinterpret_cast<const char*>(&width), sizeof(width));
  out.write(reinterpret_cast<const char*>(model.weights.data()),
            static_cast<std::streamsize>(width * sizeof(double)));
  out.write(reinterpret_cast<const char*>(&model.bias), sizeof(model.bias));
  out.write(reinterpret_cast<const char*>(&model.threshold), sizeof(model.threshold));
  out.write(reinterpret_cast<const char*>(&model.seed), sizeof(model.seed));
  out.write(reinterpret_cast<const char*>(&model.final_loss), sizeof(model.final_loss));
  out.write(reinterpret_cast<const char*>(&model.iterations), sizeof(model.iterations));
  const std::uint8_t conv = model.converged ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&conv), sizeof(conv));
  const std::uint32_t digest_len = static_cast<std::uint32_t>(model.config_digest.size());
  out.write(reinterpret_cast<const char*>(&digest_len), sizeof(digest_len));
  out.write(model.config_digest.data(), digest_len);
  if (!out) throw IoError("write failure on classifier model: " + path.string());
}

LogisticModel load_logistic_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open classifier model: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
    throw VersionMismatch("not a classifier model file (or unsupported version): " +
                          path.string());
  LogisticModel model;
  std::uint64_t width = 0;
  in.read(reinterpret_cast<char*>(&width), sizeof(width));
  model.weights.resize(width);
  in.read(reinterpret_cast<char*>(model.weights.data()),
          static_cast<std::streamsize>(width * sizeof(double)));
  in.read(reinterpret_cast<char*>(&model.bias), sizeof(model.bias));
  in.read(reinterpret_cast<char*>(&model.threshold), sizeof(model.threshold));
  in.read(reinterpret_cast<char*>(&model.seed), sizeof(model.seed));
  in.read(reinterpret_cast<char*>(&model.final_loss), sizeof(model.final_loss));
  in.read(reinterpret_cast<char*>(&model.iterations), sizeof(model.iterations));
  std::uint8_t conv = 0;
  in.read(reinterpret_cast<char*>(&conv), sizeof(conv));
  model.converged = conv != 0;
  std::uint32_t digest_len = 0;
  in.read(reinterpret_cast<char*>(&digest_len), sizeof(digest_len));
  if (!in || digest_len > 4096)
    throw VersionMismatch("corrupt classifier model header: " + path.string());
  model.config_digest.resize(digest_len);
  in.read(model.config_digest.data(), digest_len);
  if (!in) throw VersionMismatch("truncated classifier model file: " + path.string());
  return model;
}

}  // namespace relbow
