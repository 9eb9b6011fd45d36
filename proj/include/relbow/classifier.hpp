#ifndef RELBOW_CLASSIFIER_HPP
#define RELBOW_CLASSIFIER_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relbow/corpus.hpp"
#include "relbow/features.hpp"

namespace relbow {

enum class ClassWeightMode { None, Balanced };

struct FitConfig {
  // L2 strength; unset defaults to 1 / (number of training users).
  std::optional<double> lambda;
  ClassWeightMode class_weight = ClassWeightMode::Balanced;
  int max_iter = 500;
  double tol = 1e-6;  // gradient-norm stopping tolerance
  std::uint64_t seed = 0;

  std::string digest(std::size_t n_rows) const;
  double resolve_lambda(std::size_t n_rows) const;
};

struct Dataset {
  std::vector<SparseRow> rows;
  std::vector<UserClass> y;  // Diagnosed = positive
  std::size_t cols = 0;
};

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad_weights;
  double grad_bias = 0.0;
};

// Class-weighted mean logistic loss plus (lambda/2)*||w||^2; the bias is
// unregularized. Weighted mean uses the total sample weight, so the loss at
// w=0,b=0 is ln 2 regardless of class balance.
LossGrad loss_and_gradient(std::span<const double> weights, double bias,
                           const Dataset& data, double lambda, ClassWeightMode mode);

struct LogisticModel {
  std::vector<double> weights;
  double bias = 0.0;
  double threshold = 0.5;
  // fit metadata
  std::string config_digest;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  int iterations = 0;
  bool converged = false;

  double predict_proba(const SparseRow& x) const;  // sigmoid(w.x + b)
  UserClass predict(const SparseRow& x) const {
    return predict_proba(x) >= threshold ? UserClass::Diagnosed : UserClass::Control;
  }
};

struct FitTrace {
  std::vector<double> loss_history;  // loss after each accepted step
};

// Deterministic full-batch gradient descent with backtracking line search.
LogisticModel fit(const Dataset& data, const FitConfig& config, FitTrace* trace = nullptr);

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  double threshold = 0.5;
};

// Diagnosed-class precision/recall/F1 with exact confusion counts.
EvalReport evaluate(std::span<const UserClass> predictions, std::span<const UserClass> truth);

std::string eval_text_table(const EvalReport& report, const std::string& model_name);

// Threshold maximizing Diagnosed F1 over the candidate probabilities.
double sweep_threshold(const LogisticModel& model, const Dataset& data);

void save_logistic_model(const LogisticModel& model, const std::filesystem::path& path);
LogisticModel load_logistic_model(const std::filesystem::path& path);

}  // namespace relbow

#endif  // RELBOW_CLASSIFIER_HPP
