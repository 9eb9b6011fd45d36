#include "relbow/propagation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "relbow/digest.hpp"
#include "relbow/errors.hpp"
#include "relbow/rng.hpp"
#include "relbow/text.hpp"

namespace relbow {

namespace {

std::uint32_t hash_into(std::string_view key, char tag, std::uint32_t mask) {
  Fnv64 h;
  h.update(&tag, 1);
  h.update(key);
  return static_cast<std::uint32_t>(h.value()) & mask;
}

}  // namespace

std::vector<std::pair<std::uint32_t, float>> hash_features(std::string_view text,
                                                           const HashedNgramConfig& config) {
  const std::uint32_t mask = static_cast<std::uint32_t>(config.dimension() - 1);
  std::unordered_map<std::uint32_t, float> acc;
  const std::vector<std::string> tokens = tokenize(text);
  for (const std::string& tok : tokens) {
    if (config.word_unigrams) acc[hash_into(tok, 'w', mask)] += 1.0f;
    const std::string padded = " " + tok + " ";
    for (int n = config.char_min; n <= config.char_max; ++n) {
      if (n <= 0 || padded.size() < static_cast<std::size_t>(n)) continue;
      for (std::size_t i = 0; i + n <= padded.size(); ++i)
        acc[hash_into(std::string_view(padded).substr(i, n), 'c', mask)] += 1.0f;
    }
  }
  std::vector<std::pair<std::uint32_t, float>> features(acc.begin(), acc.end());
  std::sort(features.begin(), features.end());
  double norm = 0.0;
  for (const auto& [idx, v] : features) norm += static_cast<double>(v) * v;
  if (norm > 0.0) {
    const float inv = static_cast<float>(1.0 / std::sqrt(norm));
    for (auto& [idx, v] : features) v *= inv;
  }
  return features;
}

std::array<double, 3> RelevanceModel::predict_proba(std::string_view text) const {
  const auto features = hash_features(text, ngrams);
  std::array<double, 3> logits;
  for (int c = 0; c < 3; ++c) {
    double z = bias[c];
    for (const auto& [idx, v] : features) z += static_cast<double>(weights[c][idx]) * v;
    logits[c] = z;
  }
  const double zmax = std::max({logits[0], logits[1], logits[2]});
  std::array<double, 3> probs;
  double sum = 0.0;
  for (int c = 0; c < 3; ++c) {
    probs[c] = std::exp(logits[c] - zmax);
    sum += probs[c];
  }
  for (double& p : probs) p /= sum;
  return probs;
}

std::pair<RelevanceLabel, std::array<double, 3>> RelevanceModel::predict(
    std::string_view text) const {
  const std::array<double, 3> probs = predict_proba(text);
  int best = 0;
  for (int c = 1; c < 3; ++c)
    if (probs[c] > probs[best]) best = c;
  return {label_from_code(best + 1), probs};
}

std::string PropagationConfig::digest() const {
  nlohmann::json j;
  j["hash_bits"] = ngrams.hash_bits;
  j["char_min"] = ngrams.char_min;
  j["char_max"] = ngrams.char_max;
  j["word_unigrams"] = ngrams.word_unigrams;
  j["lambda"] = lambda;
  j["max_iter"] = max_iter;
  j["tol"] = tol;
  j["holdout_fraction"] = holdout_fraction;
  j["seed"] = seed;
  return digest_hex(j.dump());
}

namespace {

using SparseFeatures = std::vector<std::pair<std::uint32_t, float>>;

struct SoftmaxProblem {
  std::vector<SparseFeatures> rows;
  std::vector<int> labels;  // 0..2
  std::size_t dim = 0;
  double lambda = 0.0;
};

struct SoftmaxState {
  std::array<std::vector<double>, 3> w;
  std::array<double, 3> b = {0, 0, 0};
};

double loss_and_gradient(const SoftmaxProblem& prob, const SoftmaxState& state,
                         SoftmaxState& grad) {
  const double n = static_cast<double>(prob.rows.size());
  for (int c = 0; c < 3; ++c) {
    grad.w[c].assign(prob.dim, 0.0);
    grad.b[c] = 0.0;
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < prob.rows.size(); ++i) {
    std::array<double, 3> logits;
    for (int c = 0; c < 3; ++c) {
      double z = state.b[c];
      for (const auto& [idx, v] : prob.rows[i]) z += state.w[c][idx] * v;
      logits[c] = z;
    }
    const double zmax = std::max({logits[0], logits[1], logits[2]});
    double sum = 0.0;
    std::array<double, 3> p;
    for (int c = 0; c < 3; ++c) {
      p[c] = std::exp(logits[c] - zmax);
      sum += p[c];
    }
    for (double& v : p) v /= sum;
    const int y = prob.labels[i];
    loss -= std::log(std::max(p[y], 1e-300));
    for (int c = 0; c < 3; ++c) {
      const double delta = (p[c] - (c == y ? 1.0 : 0.0)) / n;
      for (const auto& [idx, v] : prob.rows[i]) grad.w[c][idx] += delta * v;
      grad.b[c] += delta;
    }
  }
  loss /= n;
  for (int c = 0; c < 3; ++c) {
    for (std::size_t j = 0; j < prob.dim; ++j) {
      loss += 0.5 * prob.lambda * state.w[c][j] * state.w[c][j];
      grad.w[c][j] += prob.lambda * state.w[c][j];
    }
  }
  return loss;
}

double grad_norm(const SoftmaxState& grad, std::size_t dim) {
  double s = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (std::size_t j = 0; j < dim; ++j) s += grad.w[c][j] * grad.w[c][j];
    s += grad.b[c] * grad.b[c];
  }
  return std::sqrt(s);
}

// Full-batch gradient descent with backtracking line search; deterministic.
SoftmaxState minimize(const SoftmaxProblem& prob, int max_iter, double tol) {
  SoftmaxState state;
  for (int c = 0; c < 3; ++c) state.w[c].assign(prob.dim, 0.0);
  SoftmaxState grad, trial;
  for (int c = 0; c < 3; ++c) trial.w[c].assign(prob.dim, 0.0);

  double loss = loss_and_gradient(prob, state, grad);
  double step = 1.0;
  for (int iter = 0; iter < max_iter; ++iter) {
    const double gnorm = grad_norm(grad, prob.dim);
    if (gnorm <= tol) break;
    const double g2 = gnorm * gnorm;
    bool accepted = false;
    step = std::min(step * 2.0, 1e4);
    for (int back = 0; back < 60; ++back) {
      for (int c = 0; c < 3; ++c) {
        for (std::size_t j = 0; j < prob.dim; ++j)
          trial.w[c][j] = state.w[c][j] - step * grad.w[c][j];
        trial.b[c] = state.b[c] - step * grad.b[c];
      }
      SoftmaxState trial_grad;
      const double trial_loss = loss_and_gradient(prob, trial, trial_grad);
      if (trial_loss <= loss - 1e-4 * step * g2) {
        std::swap(state, trial);
        std::swap(grad, trial_grad);
        loss = trial_loss;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no descent step at machine precision
  }
  return state;
}

}  // namespace

std::pair<RelevanceModel, PropagationReport> train_relevance_model(
    std::span<const AnnotationRecord> records, std::span<const Publication> publications,
    const PropagationConfig& config) {
  std::unordered_map<std::string_view, const Publication*> posts;
  for (const Publication& p : publications) posts.emplace(p.post_id, &p);

  std::array<std::vector<std::size_t>, 3> by_label;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const AnnotationRecord& rec = records[i];
    if (rec.source != AnnotationSource::Llm)
      throw InvalidConfig("train_relevance_model: record " + rec.post_id +
                          " does not come from the annotator");
    if (!posts.count(rec.post_id))
      throw UnknownPost("annotated post not in the publication set: " + rec.post_id);
    by_label[code(rec.label) - 1].push_back(i);
  }
  for (RelevanceLabel l : kAllLabels) {
    const auto n = by_label[code(l) - 1].size();
    if (n < 3)
      throw InsufficientLabels(std::string("label `") + to_string(l) + "` has only " +
                               std::to_string(n) + " records; need at least 3");
  }

  // stratified held-out fold
  Rng rng(config.seed);
  std::vector<std::size_t> train_idx, holdout_idx;
  for (auto& idx : by_label) {
    rng.shuffle(idx);
    std::size_t n_hold = static_cast<std::size_t>(
        std::floor(config.holdout_fraction * static_cast<double>(idx.size())));
    n_hold = std::max<std::size_t>(1, std::min(n_hold, idx.size() - 1));
    holdout_idx.insert(holdout_idx.end(), idx.begin(), idx.begin() + n_hold);
    train_idx.insert(train_idx.end(), idx.begin() + n_hold, idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(holdout_idx.begin(), holdout_idx.end());

  SoftmaxProblem prob;
  prob.dim = config.ngrams.dimension();
  prob.lambda = config.lambda;
  for (std::size_t i : train_idx) {
    prob.rows.push_back(hash_features(posts.at(records[i].post_id)->text, config.ngrams));
    prob.labels.push_back(code(records[i].label) - 1);
  }
  const SoftmaxState state = minimize(prob, config.max_iter, config.tol);

  RelevanceModel model;
  model.ngrams = config.ngrams;
  model.seed = config.seed;
  model.config_digest = config.digest();
  for (int c = 0; c < 3; ++c) {
    model.weights[c].assign(prob.dim, 0.0f);
    for (std::size_t j = 0; j < prob.dim; ++j)
      model.weights[c][j] = static_cast<float>(state.w[c][j]);
    model.bias[c] = static_cast<float>(state.b[c]);
  }

  PropagationReport report;
  report.holdout_size = holdout_idx.size();
  std::uint64_t correct = 0;
  for (std::size_t i : holdout_idx) {
    const auto [predicted, probs] = model.predict(posts.at(records[i].post_id)->text);
    const int truth = code(records[i].label) - 1;
    report.holdout_confusion.counts[truth][code(predicted) - 1] += 1;
    if (predicted == records[i].label) ++correct;
  }
  report.holdout_accuracy =
      holdout_idx.empty() ? 0.0 : static_cast<double>(correct) / holdout_idx.size();
  return {std::move(model), report};
}

std::vector<AnnotationRecord> label_corpus(const RelevanceModel& model, const Corpus& corpus,
                                           std::span<const AnnotationRecord> llm_records,
                                           PropagationReport* report) {
  std::unordered_map<std::string_view, const AnnotationRecord*> existing;
  for (const AnnotationRecord& rec : llm_records) existing.emplace(rec.post_id, &rec);

  std::vector<AnnotationRecord> out;
  out.reserve(corpus.publication_count());
  std::array<std::uint64_t, 3> counts = {0, 0, 0};
  for (const Timeline& t : corpus.timelines) {
    for (const Publication& p : t.publications) {
      auto it = existing.find(p.post_id);
      if (it != existing.end()) {
        out.push_back(*it->second);
      } else {
        AnnotationRecord rec;
        rec.post_id = p.post_id;
        rec.label = model.predict(p.text).first;
        rec.source = AnnotationSource::Propagated;
        rec.model_id = model.model_id();
        rec.template_hash = model.config_digest;
        out.push_back(std::move(rec));
      }
      counts[code(out.back().label) - 1] += 1;
    }
  }
  if (report) report->corpus_label_counts = counts;
  return out;
}

namespace {
constexpr char kModelMagic[8] = {'R', 'B', 'R', 'E', 'L', 'M', '0', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}
}  // namespace

void save_relevance_model(const RelevanceModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write relevance model: " + path.string());
  out.write(kModelMagic, sizeof(kModelMagic));
  write_pod(out, model.ngrams.hash_bits);
  write_pod(out, model.ngrams.char_min);
  write_pod(out, model.ngrams.char_max);
  const std::uint8_t wu = model.ngrams.word_unigrams ? 1 : 0;
  write_pod(out, wu);
  write_pod(out, model.seed);
  const std::uint32_t digest_len = static_cast<std::uint32_t>(model.config_digest.size());
  write_pod(out, digest_len);
  out.write(model.config_digest.data(), digest_len);
  for (int c = 0; c < 3; ++c)
    out.write(reinterpret_cast<const char*>(model.weights[c].data()),
              static_cast<std::streamsize>(model.weights[c].size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(model.bias.data()), sizeof(model.bias));
  if (!out) throw IoError("write failure on relevance model: " + path.string());
}

RelevanceModel load_relevance_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open relevance model: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
    throw VersionMismatch("not a relevance model file (or unsupported version): " +
                          path.string());
  RelevanceModel model;
  read_pod(in, model.ngrams.hash_bits);
  read_pod(in, model.ngrams.char_min);
  read_pod(in, model.ngrams.char_max);
  std::uint8_t wu = 0;
  read_pod(in, wu);
  model.ngrams.word_unigrams = wu != 0;
  read_pod(in, model.seed);
  std::uint32_t digest_len = 0;
  read_pod(in, digest_len);
  if (!in || digest_len > 4096)
    throw VersionMismatch("corrupt relevance model header: " + path.string());
  model.config_digest.resize(digest_len);
  in.read(model.config_digest.data(), digest_len);
  const std::size_t dim = model.ngrams.dimension();
  for (int c = 0; c < 3; ++c) {
    model.weights[c].resize(dim);
    in.read(reinterpret_cast<char*>(model.weights[c].data()),
            static_cast<std::streamsize>(dim * sizeof(float)));
  }
  in.read(reinterpret_cast<char*>(model.bias.data()), sizeof(model.bias));
  if (!in) throw VersionMismatch("truncated relevance model file: " + path.string());
  return model;
}

}  // namespace relbow
