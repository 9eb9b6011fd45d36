#include "relbow/classifier.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "helpers.hpp"
#include "relbow/errors.hpp"
#include "relbow/rng.hpp"

using namespace relbow;
using namespace relbow::testing;

namespace {

Dataset dense_dataset(const std::vector<std::vector<double>>& x,
                      const std::vector<UserClass>& y) {
  Dataset data;
  data.cols = x.empty() ? 0 : x[0].size();
  data.y = y;
  for (const auto& row : x) {
    SparseRow sparse;
    for (std::size_t j = 0; j < row.size(); ++j)
      if (row[j] != 0.0) sparse.emplace_back(static_cast<std::uint32_t>(j), row[j]);
    data.rows.push_back(std::move(sparse));
  }
  return data;
}

Dataset random_dataset(Rng& rng, std::size_t n, std::size_t cols) {
  std::vector<std::vector<double>> x(n, std::vector<double>(cols, 0.0));
  std::vector<UserClass> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = i % 2 ? UserClass::Control : UserClass::Diagnosed;
    for (std::size_t j = 0; j < cols; ++j)
      x[i][j] = rng.next_double() * 4.0 - 2.0;
  }
  return dense_dataset(x, y);
}

// 7:1 one-dimensional toy with heavy class overlap
Dataset imbalanced_toy(Rng& rng, std::size_t n_pos, double shift) {
  std::vector<std::vector<double>> x;
  std::vector<UserClass> y;
  for (std::size_t i = 0; i < n_pos; ++i) {
    x.push_back({shift + rng.next_double()});
    y.push_back(UserClass::Diagnosed);
  }
  for (std::size_t i = 0; i < 7 * n_pos; ++i) {
    x.push_back({rng.next_double() * 1.2});
    y.push_back(UserClass::Control);
  }
  return dense_dataset(x, y);
}

}  // namespace

TEST_CASE("loss at the zero model is ln 2 for any class balance") {
  Rng rng(1);
  for (ClassWeightMode mode : {ClassWeightMode::None, ClassWeightMode::Balanced}) {
    Dataset data = imbalanced_toy(rng, 4, 0.5);
    const std::vector<double> w(data.cols, 0.0);
    const LossGrad lg = loss_and_gradient(w, 0.0, data, 0.0, mode);
    CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("gradient matches central finite differences") {
  Rng rng(2026);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = rng.uniform(3, 8), cols = rng.uniform(2, 6);
    Dataset data = random_dataset(rng, n, cols);
    std::vector<double> w(cols);
    for (double& v : w) v = rng.next_double() * 2.0 - 1.0;
    double b = rng.next_double() - 0.5;
    const double lambda = rng.next_double() * 0.5;
    const ClassWeightMode mode =
        trial % 2 ? ClassWeightMode::Balanced : ClassWeightMode::None;

    const LossGrad lg = loss_and_gradient(w, b, data, lambda, mode);
    const double h = 1e-5;
    auto loss_at = [&](const std::vector<double>& wt, double bt) {
      return loss_and_gradient(wt, bt, data, lambda, mode).loss;
    };
    for (std::size_t j = 0; j < cols; ++j) {
      std::vector<double> up = w, down = w;
      up[j] += h;
      down[j] -= h;
      const double fd = (loss_at(up, b) - loss_at(down, b)) / (2 * h);
      CHECK(std::abs(fd - lg.grad_weights[j]) <=
            1e-6 * std::max({1.0, std::abs(fd), std::abs(lg.grad_weights[j])}));
    }
    const double fd_b = (loss_at(w, b + h) - loss_at(w, b - h)) / (2 * h);
    CHECK(std::abs(fd_b - lg.grad_bias) <= 1e-6 * std::max(1.0, std::abs(fd_b)));
  }
}

TEST_CASE("with all-zero features the gradient is exactly lambda * w") {
  Dataset data;
  data.cols = 3;
  data.rows = {{}, {}, {}, {}};
  data.y = {UserClass::Diagnosed, UserClass::Control, UserClass::Control,
            UserClass::Diagnosed};
  const std::vector<double> w = {1.5, -2.0, 0.25};
  const double lambda = 10.0;
  const LossGrad lg = loss_and_gradient(w, 0.0, data, lambda, ClassWeightMode::None);
  for (std::size_t j = 0; j < 3; ++j) CHECK(lg.grad_weights[j] == lambda * w[j]);
}

TEST_CASE("loss_and_gradient validates dimensions") {
  Dataset data = dense_dataset({{1.0, 2.0}}, {UserClass::Diagnosed});
  const std::vector<double> wrong_width(3, 0.0);
  CHECK_THROWS_AS(loss_and_gradient(wrong_width, 0.0, data, 0.0, ClassWeightMode::None),
                  DimensionMismatch);
  Dataset uneven = data;
  uneven.y.clear();
  const std::vector<double> ok_width(2, 0.0);
  CHECK_THROWS_AS(loss_and_gradient(ok_width, 0.0, uneven, 0.0, ClassWeightMode::None),
                  DimensionMismatch);
}

TEST_CASE("fit separates 1-D separable data at threshold 0.5") {
  std::vector<std::vector<double>> x;
  std::vector<UserClass> y;
  for (int i = 0; i < 10; ++i) {
    x.push_back({static_cast<double>(i < 5 ? i : i + 4)});
    y.push_back(i < 5 ? UserClass::Control : UserClass::Diagnosed);
  }
  Dataset data = dense_dataset(x, y);
  FitConfig cfg;
  cfg.lambda = 1e-4;
  cfg.max_iter = 2000;
  cfg.tol = 1e-8;
  const LogisticModel model = fit(data, cfg);
  for (std::size_t i = 0; i < data.rows.size(); ++i)
    CHECK(model.predict(data.rows[i]) == y[i]);
}

TEST_CASE("fit is bit-identical across runs") {
  Rng rng(8);
  Dataset data = imbalanced_toy(rng, 6, 0.8);
  FitConfig cfg;
  cfg.max_iter = 200;
  const LogisticModel a = fit(data, cfg);
  const LogisticModel b = fit(data, cfg);
  REQUIRE(a.weights.size() == b.weights.size());
  CHECK(std::memcmp(a.weights.data(), b.weights.data(),
                    a.weights.size() * sizeof(double)) == 0);
  CHECK(a.bias == b.bias);
  CHECK(a.final_loss == b.final_loss);
}

TEST_CASE("fit rejects single-class data") {
  Dataset data = dense_dataset({{1.0}, {2.0}}, {UserClass::Control, UserClass::Control});
  CHECK_THROWS_AS(fit(data, FitConfig{}), SingleClass);
}

TEST_CASE("loss decreases monotonically across accepted steps") {
  Rng rng(21);
  Dataset data = imbalanced_toy(rng, 8, 0.6);
  FitConfig cfg;
  cfg.max_iter = 100;
  FitTrace trace;
  (void)fit(data, cfg, &trace);
  REQUIRE_FALSE(trace.loss_history.empty());
  for (std::size_t i = 1; i < trace.loss_history.size(); ++i)
    CHECK(trace.loss_history[i] <= trace.loss_history[i - 1]);
}

TEST_CASE("balanced weighting recalls at least as much as unweighted on 7:1 data") {
  Rng rng(33);
  for (int trial = 0; trial < 5; ++trial) {
    Dataset data = imbalanced_toy(rng, 10, 0.55);
    FitConfig balanced;
    balanced.class_weight = ClassWeightMode::Balanced;
    FitConfig unweighted;
    unweighted.class_weight = ClassWeightMode::None;

    auto recall_of = [&](const FitConfig& cfg) {
      const LogisticModel model = fit(data, cfg);
      std::vector<UserClass> preds;
      for (const auto& row : data.rows) preds.push_back(model.predict(row));
      return evaluate(preds, data.y).recall;
    };
    const double r_balanced = recall_of(balanced);
    const double r_unweighted = recall_of(unweighted);
    CHECK(r_balanced >= r_unweighted);
  }
}

TEST_CASE("predict_proba basics") {
  LogisticModel model;
  model.weights = {0.0, 0.0};
  model.bias = 0.0;
  CHECK(model.predict_proba({{0, 3.0}, {1, -2.0}}) == doctest::Approx(0.5));

  model.bias = 30.0;
  CHECK(model.predict_proba({}) >= 1.0 - 1e-9);

  model.weights = {1.0};
  CHECK_THROWS_AS(model.predict_proba({{5, 1.0}}), DimensionMismatch);
}

TEST_CASE("predict_proba is monotone in positively weighted coordinates") {
  Rng rng(44);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t cols = rng.uniform(1, 6);
    LogisticModel model;
    model.bias = rng.next_double() - 0.5;
    model.weights.resize(cols);
    for (double& w : model.weights) w = rng.next_double() * 2.0 - 1.0;
    const std::uint32_t j = static_cast<std::uint32_t>(rng.uniform(0, cols - 1));
    if (model.weights[j] <= 0) model.weights[j] = 0.3;

    SparseRow x;
    for (std::uint32_t c = 0; c < cols; ++c)
      x.emplace_back(c, rng.next_double() * 4.0 - 2.0);
    SparseRow x_up = x;
    x_up[j].second += 1.0 + rng.next_double();
    CHECK(model.predict_proba(x_up) >= model.predict_proba(x));
  }
}

TEST_CASE("column rescaling with inverse weight leaves probabilities unchanged") {
  Rng rng(58);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t cols = rng.uniform(2, 6);
    LogisticModel model;
    model.bias = rng.next_double() - 0.5;
    model.weights.resize(cols);
    for (double& w : model.weights) w = rng.next_double() * 2.0 - 1.0;
    const double c = 0.25 + rng.next_double() * 4.0;
    const std::uint32_t j = static_cast<std::uint32_t>(rng.uniform(0, cols - 1));

    SparseRow x;
    for (std::uint32_t col = 0; col < cols; ++col)
      x.emplace_back(col, rng.next_double() * 4.0 - 2.0);

    LogisticModel scaled = model;
    scaled.weights[j] /= c;
    SparseRow x_scaled = x;
    x_scaled[j].second *= c;
    CHECK(std::abs(model.predict_proba(x) - scaled.predict_proba(x_scaled)) < 1e-8);
  }
}

TEST_CASE("evaluate hand cases") {
  using C = UserClass;
  SUBCASE("perfect predictions") {
    const std::vector<C> truth = {C::Diagnosed, C::Control, C::Diagnosed};
    const EvalReport r = evaluate(truth, truth);
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
    CHECK(r.f1 == 1.0);
  }
  SUBCASE("tp=2 fp=1 fn=2") {
    const std::vector<C> truth = {C::Diagnosed, C::Diagnosed, C::Diagnosed, C::Diagnosed,
                                  C::Control};
    const std::vector<C> preds = {C::Diagnosed, C::Diagnosed, C::Control, C::Control,
                                  C::Diagnosed};
    const EvalReport r = evaluate(preds, truth);
    CHECK(r.tp == 2);
    CHECK(r.fp == 1);
    CHECK(r.fn == 2);
    CHECK(r.precision == doctest::Approx(2.0 / 3));
    CHECK(r.recall == doctest::Approx(0.5));
    CHECK(r.f1 == doctest::Approx(4.0 / 7));
  }
  SUBCASE("no positive predictions with positives present") {
    const std::vector<C> truth = {C::Diagnosed, C::Control};
    const std::vector<C> preds = {C::Control, C::Control};
    const EvalReport r = evaluate(preds, truth);
    CHECK(r.precision == 0.0);
    CHECK(r.recall == 0.0);
    CHECK(r.f1 == 0.0);
  }
  SUBCASE("length mismatch") {
    const std::vector<C> truth = {C::Diagnosed};
    const std::vector<C> preds = {C::Control, C::Control};
    CHECK_THROWS_AS(evaluate(preds, truth), LengthMismatch);
  }
}

TEST_CASE("evaluate is permutation invariant and F1 is the harmonic mean") {
  Rng rng(66);
  const std::size_t n = 40;
  std::vector<UserClass> truth(n), preds(n);
  for (std::size_t i = 0; i < n; ++i) {
    truth[i] = rng.bernoulli(0.3) ? UserClass::Diagnosed : UserClass::Control;
    preds[i] = rng.bernoulli(0.4) ? UserClass::Diagnosed : UserClass::Control;
  }
  const EvalReport r1 = evaluate(preds, truth);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<UserClass> truth_p(n), preds_p(n);
  for (std::size_t i = 0; i < n; ++i) {
    truth_p[i] = truth[perm[i]];
    preds_p[i] = preds[perm[i]];
  }
  const EvalReport r2 = evaluate(preds_p, truth_p);
  CHECK(r1.precision == r2.precision);
  CHECK(r1.recall == r2.recall);
  CHECK(r1.f1 == r2.f1);
  if (r1.precision + r1.recall > 0)
    CHECK(std::abs(r1.f1 -
                   2 * r1.precision * r1.recall / (r1.precision + r1.recall)) < 1e-12);
}

TEST_CASE("eval text table mirrors the column layout") {
  EvalReport r;
  r.precision = 0.64;
  r.recall = 0.72;
  r.f1 = 0.66;
  const std::string table = eval_text_table(r, "relbow");
  CHECK(table.find("Model") != std::string::npos);
  CHECK(table.find("Precision") != std::string::npos);
  CHECK(table.find("Recall") != std::string::npos);
  CHECK(table.find("F1") != std::string::npos);
  CHECK(table.find("0.64") != std::string::npos);
  CHECK(table.find("0.72") != std::string::npos);
  CHECK(table.find("0.66") != std::string::npos);
}

TEST_CASE("sweep_threshold finds the F1-best cut") {
  LogisticModel model;
  model.weights = {1.0};
  model.bias = 0.0;
  // scores: positives at 2.0 and 1.0, negatives at -1.0 and 0.5
  Dataset data = dense_dataset({{2.0}, {1.0}, {-1.0}, {0.5}},
                               {UserClass::Diagnosed, UserClass::Diagnosed,
                                UserClass::Control, UserClass::Control});
  const double t = sweep_threshold(model, data);
  std::vector<UserClass> preds;
  for (const auto& row : data.rows)
    preds.push_back(model.predict_proba(row) >= t ? UserClass::Diagnosed
                                                  : UserClass::Control);
  CHECK(evaluate(preds, data.y).f1 == doctest::Approx(1.0));
}

TEST_CASE("model artifact round-trips and refuses foreign files") {
  Rng rng(70);
  Dataset data = imbalanced_toy(rng, 5, 0.7);
  FitConfig cfg;
  cfg.max_iter = 50;
  LogisticModel model = fit(data, cfg);
  model.threshold = 0.4;

  TempDir dir("logr");
  save_logistic_model(model, dir / "m.bin");
  const LogisticModel back = load_logistic_model(dir / "m.bin");
  CHECK(back.weights == model.weights);
  CHECK(back.bias == model.bias);
  CHECK(back.threshold == model.threshold);
  CHECK(back.final_loss == model.final_loss);
  CHECK(back.iterations == model.iterations);
  CHECK(back.converged == model.converged);
  CHECK(back.config_digest == model.config_digest);

  std::ofstream bad(dir / "bad.bin", std::ios::binary);
  bad << "JUNKJUNKJUNKJUNK";
  bad.close();
  CHECK_THROWS_AS(load_logistic_model(dir / "bad.bin"), VersionMismatch);
}
