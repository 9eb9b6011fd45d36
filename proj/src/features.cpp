#include "relbow/features.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "relbow/errors.hpp"
#include "relbow/text.hpp"

namespace relbow {

using nlohmann::json;

namespace {

int stratum_of(RelevanceLabel l) { return code(l) - 1; }

RelevanceLabel label_for_post(const LabelMap& labels, const Publication& p) {
  auto it = labels.find(p.post_id);
  if (it == labels.end())
    throw MissingLabel("publication `" + p.post_id + "` has no relevance label");
  return it->second;
}

StratumVocab freeze_vocab(std::map<std::string, std::uint32_t>&& df, std::uint32_t min_df) {
  StratumVocab vocab;
  vocab.min_df = min_df;
  for (auto& [token, count] : df) {
    if (count < min_df) continue;
    vocab.index.emplace(token, static_cast<std::uint32_t>(vocab.tokens.size()));
    vocab.tokens.push_back(token);
    vocab.doc_freq.push_back(count);
  }
  return vocab;
}

SparseRow to_sparse(std::map<std::uint32_t, double>&& counts) {
  SparseRow row(counts.begin(), counts.end());
  return row;
}

using DfMaps = std::array<std::map<std::string, std::uint32_t>, 3>;

// Document-frequency pass over Train publications, counted in parallel over
// timelines and merged; index assignment stays deterministic because the
// merged maps are lexicographic.
DfMaps stratified_df(const Corpus& corpus, const LabelMap& labels) {
  std::vector<const Timeline*> train;
  for (const Timeline& t : corpus.timelines)
    if (t.split == Split::Train) train.push_back(&t);

  const std::size_t n_threads = std::clamp<std::size_t>(
      std::thread::hardware_concurrency(), 1, std::max<std::size_t>(1, train.size()));
  std::vector<DfMaps> partials(n_threads);
  std::vector<std::string> missing(n_threads);
  std::atomic<std::size_t> next{0};
  auto worker = [&](std::size_t slot) {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= train.size()) return;
      for (const Publication& p : train[i]->publications) {
        auto it = labels.find(p.post_id);
        if (it == labels.end()) {
          if (missing[slot].empty()) missing[slot] = p.post_id;
          return;
        }
        const int s = stratum_of(it->second);
        std::vector<std::string> tokens = tokenize(p.text);
        std::sort(tokens.begin(), tokens.end());
        tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
        for (const std::string& tok : tokens) partials[slot][s][tok] += 1;
      }
    }
  };
  if (n_threads <= 1) {
    worker(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker, t);
    for (auto& t : threads) t.join();
  }
  for (const std::string& post_id : missing)
    if (!post_id.empty())
      throw MissingLabel("publication `" + post_id + "` has no relevance label");

  DfMaps merged = std::move(partials[0]);
  for (std::size_t t = 1; t < n_threads; ++t)
    for (int s = 0; s < 3; ++s)
      for (const auto& [tok, count] : partials[t][s]) merged[s][tok] += count;
  return merged;
}

}  // namespace

StratifiedBow build_stratified_bow(const Corpus& corpus, const LabelMap& labels,
                                   const FeatureConfig& config) {
  StratifiedBow bow;
  DfMaps df = stratified_df(corpus, labels);
  for (int s = 0; s < 3; ++s)
    bow.vocabs[s] = freeze_vocab(std::move(df[s]), config.min_df);

  for (const Timeline& t : corpus.timelines) {
    if (t.split != Split::Train) continue;
    bow.users.push_back(t.user_id);
    bow.classes.push_back(t.label);
    std::array<std::map<std::uint32_t, double>, 3> counts;
    for (const Publication& p : t.publications) {
      const int s = stratum_of(label_for_post(labels, p));
      for (const std::string& tok : tokenize(p.text)) {
        auto it = bow.vocabs[s].index.find(tok);
        if (it != bow.vocabs[s].index.end()) counts[s][it->second] += 1.0;
      }
    }
    for (int s = 0; s < 3; ++s) bow.matrices[s].rows.push_back(to_sparse(std::move(counts[s])));
  }
  for (int s = 0; s < 3; ++s) {
    bow.matrices[s].user_ids = bow.users;
    bow.matrices[s].cols = bow.vocabs[s].size();
  }
  return bow;
}

std::vector<double> univariate_f_scores(const CountMatrix& matrix,
                                        std::span<const UserClass> y) {
  if (matrix.rows.size() != y.size())
    throw LengthMismatch("univariate_f_scores: matrix rows (" +
                         std::to_string(matrix.rows.size()) + ") != labels (" +
                         std::to_string(y.size()) + ")");
  std::size_t n_pos = 0;
  for (UserClass c : y) n_pos += c == UserClass::Diagnosed ? 1 : 0;
  const std::size_t n = y.size();
  const std::size_t n_neg = n - n_pos;
  if (n < 2 || n_pos == 0 || n_neg == 0)
    throw SingleClass("univariate_f_scores needs at least one user of each class");

  const std::size_t cols = matrix.cols;
  // per class: sum, sum of squares, nonzero count, nonzero min/max
  struct Acc {
    double sum = 0, sq = 0;
    std::size_t nnz = 0;
    double min_nz = 0, max_nz = 0;
  };
  std::vector<Acc> acc(2 * cols);
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = y[i] == UserClass::Diagnosed ? 0 : 1;
    for (const auto& [col, v] : matrix.rows[i]) {
      Acc& a = acc[2 * col + cls];
      a.sum += v;
      a.sq += v * v;
      if (a.nnz == 0) {
        a.min_nz = a.max_nz = v;
      } else {
        a.min_nz = std::min(a.min_nz, v);
        a.max_nz = std::max(a.max_nz, v);
      }
      ++a.nnz;
    }
  }

  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  std::vector<double> scores(cols, 0.0);
  for (std::size_t col = 0; col < cols; ++col) {
    const Acc& p = acc[2 * col];
    const Acc& q = acc[2 * col + 1];
    // a class is constant when all its entries are zero, or all nonzero and equal
    const bool p_const = p.nnz == 0 || (p.nnz == n_pos && p.min_nz == p.max_nz);
    const bool q_const = q.nnz == 0 || (q.nnz == n_neg && q.min_nz == q.max_nz);
    const double mean_p = p.sum / np;
    const double mean_q = q.sum / nn;
    if (p_const && q_const) {
      scores[col] = mean_p == mean_q ? 0.0 : kMaxFScore;
      continue;
    }
    const double grand = (p.sum + q.sum) / static_cast<double>(n);
    const double ssb =
        np * (mean_p - grand) * (mean_p - grand) + nn * (mean_q - grand) * (mean_q - grand);
    const double ssw = (p.sq - p.sum * p.sum / np) + (q.sq - q.sum * q.sum / nn);
    if (ssw <= 0.0) {
      scores[col] = ssb > 0.0 ? kMaxFScore : 0.0;
      continue;
    }
    const double msw = ssw / static_cast<double>(n - 2);
    scores[col] = ssb / msw;  // between-group df = 1
  }
  return scores;
}

std::vector<std::uint32_t> select_top_k(std::span<const double> scores, std::size_t k) {
  std::vector<std::uint32_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::uint32_t>(i);
  if (k < idx.size()) {
    std::nth_element(idx.begin(), idx.begin() + k, idx.end(),
                     [&](std::uint32_t a, std::uint32_t b) {
                       if (scores[a] != scores[b]) return scores[a] > scores[b];
                       return a < b;
                     });
    idx.resize(k);
  }
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::string ngram_key(std::span<const RelevanceLabel> window) {
  std::string key;
  key.reserve(window.size());
  for (RelevanceLabel l : window) key.push_back("hml"[code(l) - 1]);
  return key;
}

std::map<std::string, std::uint32_t> label_sequence_ngrams(
    std::span<const RelevanceLabel> labels, int order) {
  if (order < 1) throw InvalidConfig("label n-gram order must be >= 1");
  std::map<std::string, std::uint32_t> counts;
  if (labels.size() < static_cast<std::size_t>(order)) return counts;
  for (std::size_t i = 0; i + order <= labels.size(); ++i)
    counts[ngram_key(labels.subspan(i, order))] += 1;
  return counts;
}

std::array<std::size_t, 4> FeatureSpace::block_offsets() const {
  std::array<std::size_t, 4> offsets;
  offsets[0] = 0;
  offsets[1] = offsets[0] + selected[0].size();
  offsets[2] = offsets[1] + selected[1].size();
  offsets[3] = offsets[2] + selected[2].size();
  return offsets;
}

namespace {

std::vector<RelevanceLabel> timeline_labels(const Timeline& t, const LabelMap& labels) {
  std::vector<RelevanceLabel> seq;
  seq.reserve(t.publications.size());
  for (const Publication& p : t.publications) seq.push_back(label_for_post(labels, p));
  return seq;
}

// Train-user matrix of label-n-gram counts plus the frozen n-gram vocabulary.
std::pair<SequenceVocab, CountMatrix> build_sequence_counts(const Corpus& corpus,
                                                            const LabelMap& labels,
                                                            int order) {
  SequenceVocab vocab;
  vocab.order = order;
  std::map<std::string, std::uint32_t> all;
  std::vector<std::map<std::string, std::uint32_t>> per_user;
  std::vector<std::string> users;
  for (const Timeline& t : corpus.timelines) {
    if (t.split != Split::Train) continue;
    auto counts = label_sequence_ngrams(timeline_labels(t, labels), order);
    for (const auto& [key, c] : counts) all[key] += c;
    per_user.push_back(std::move(counts));
    users.push_back(t.user_id);
  }
  for (const auto& [key, c] : all) {
    vocab.index.emplace(key, static_cast<std::uint32_t>(vocab.ngrams.size()));
    vocab.ngrams.push_back(key);
  }
  CountMatrix matrix;
  matrix.user_ids = std::move(users);
  matrix.cols = vocab.size();
  for (const auto& counts : per_user) {
    std::map<std::uint32_t, double> row;
    for (const auto& [key, c] : counts) row[vocab.index.at(key)] = static_cast<double>(c);
    matrix.rows.push_back(to_sparse(std::move(row)));
  }
  return {std::move(vocab), std::move(matrix)};
}

// Pools every Train publication into one stratum (ablation mode).
std::pair<StratumVocab, CountMatrix> build_pooled_bow(const Corpus& corpus,
                                                      const LabelMap& labels,
                                                      const FeatureConfig& config) {
  std::map<std::string, std::uint32_t> df;
  for (const Timeline& t : corpus.timelines) {
    if (t.split != Split::Train) continue;
    for (const Publication& p : t.publications) {
      label_for_post(labels, p);  // same labeling contract as the stratified path
      std::vector<std::string> tokens = tokenize(p.text);
      std::sort(tokens.begin(), tokens.end());
      tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
      for (const std::string& tok : tokens) df[tok] += 1;
    }
  }
  StratumVocab vocab = freeze_vocab(std::move(df), config.min_df);
  CountMatrix matrix;
  matrix.cols = vocab.size();
  for (const Timeline& t : corpus.timelines) {
    if (t.split != Split::Train) continue;
    matrix.user_ids.push_back(t.user_id);
    std::map<std::uint32_t, double> counts;
    for (const Publication& p : t.publications) {
      for (const std::string& tok : tokenize(p.text)) {
        auto it = vocab.index.find(tok);
        if (it != vocab.index.end()) counts[it->second] += 1.0;
      }
    }
    matrix.rows.push_back(to_sparse(std::move(counts)));
  }
  return {std::move(vocab), std::move(matrix)};
}

}  // namespace

FeatureSpace fit_feature_space(const Corpus& corpus, const LabelMap& labels,
                               const FeatureConfig& config) {
  FeatureSpace space;
  space.config = config;

  std::vector<UserClass> classes;
  for (const Timeline& t : corpus.timelines)
    if (t.split == Split::Train) classes.push_back(t.label);

  if (config.pooled_text) {
    auto [vocab, matrix] = build_pooled_bow(corpus, labels, config);
    const auto scores = univariate_f_scores(matrix, classes);
    space.vocabs[0] = std::move(vocab);
    space.selected[0] = select_top_k(scores, config.text_capacity());
  } else {
    StratifiedBow bow = build_stratified_bow(corpus, labels, config);
    const std::array<std::size_t, 3> ks = {config.k_high, config.k_medium, config.k_low};
    for (int s = 0; s < 3; ++s) {
      const auto scores = univariate_f_scores(bow.matrices[s], bow.classes);
      space.selected[s] = select_top_k(scores, ks[s]);
      space.vocabs[s] = std::move(bow.vocabs[s]);
    }
  }

  auto [seq_vocab, seq_matrix] = build_sequence_counts(corpus, labels, config.seq_order);
  if (seq_vocab.size() > 0) {
    const auto scores = univariate_f_scores(seq_matrix, classes);
    space.seq_selected = select_top_k(scores, config.seq_cap);
  }
  space.seq_vocab = std::move(seq_vocab);
  return space;
}

UserFeatureVector transform_user(const FeatureSpace& space, const Timeline& timeline,
                                 const LabelMap& labels) {
  UserFeatureVector vec;
  vec.user_id = timeline.user_id;
  vec.width = space.width();
  vec.offsets = space.block_offsets();

  std::map<std::uint32_t, double> entries;
  auto add_block = [&](int block, const std::map<std::uint32_t, double>& counts) {
    const auto& sel = space.selected[block];
    for (const auto& [col, v] : counts) {
      auto it = std::lower_bound(sel.begin(), sel.end(), col);
      if (it != sel.end() && *it == col)
        entries[vec.offsets[block] + static_cast<std::size_t>(it - sel.begin())] += v;
    }
  };

  if (space.config.pooled_text) {
    std::map<std::uint32_t, double> counts;
    for (const Publication& p : timeline.publications) {
      label_for_post(labels, p);
      for (const std::string& tok : tokenize(p.text)) {
        auto it = space.vocabs[0].index.find(tok);
        if (it != space.vocabs[0].index.end()) counts[it->second] += 1.0;
      }
    }
    add_block(0, counts);
  } else {
    std::array<std::map<std::uint32_t, double>, 3> counts;
    for (const Publication& p : timeline.publications) {
      const int s = stratum_of(label_for_post(labels, p));
      for (const std::string& tok : tokenize(p.text)) {
        auto it = space.vocabs[s].index.find(tok);
        if (it != space.vocabs[s].index.end()) counts[s][it->second] += 1.0;
      }
    }
    for (int s = 0; s < 3; ++s) add_block(s, counts[s]);
  }

  const auto seq_counts =
      label_sequence_ngrams(timeline_labels(timeline, labels), space.seq_vocab.order);
  const std::size_t seq_offset = vec.offsets[3];
  for (const auto& [key, c] : seq_counts) {
    auto vit = space.seq_vocab.index.find(key);
    if (vit == space.seq_vocab.index.end()) continue;
    auto it = std::lower_bound(space.seq_selected.begin(), space.seq_selected.end(),
                               vit->second);
    if (it != space.seq_selected.end() && *it == vit->second)
      entries[seq_offset + static_cast<std::size_t>(it - space.seq_selected.begin())] +=
          static_cast<double>(c);
  }

  vec.entries.assign(entries.begin(), entries.end());
  return vec;
}

namespace {
constexpr int kFeatureSpaceVersion = 1;

json vocab_to_json(const StratumVocab& vocab) {
  json j;
  j["tokens"] = vocab.tokens;
  j["doc_freq"] = vocab.doc_freq;
  j["min_df"] = vocab.min_df;
  return j;
}

StratumVocab vocab_from_json(const json& j) {
  StratumVocab vocab;
  vocab.tokens = j.at("tokens").get<std::vector<std::string>>();
  vocab.doc_freq = j.at("doc_freq").get<std::vector<std::uint32_t>>();
  vocab.min_df = j.at("min_df").get<std::uint32_t>();
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i)
    vocab.index.emplace(vocab.tokens[i], static_cast<std::uint32_t>(i));
  return vocab;
}
}  // namespace

void save_feature_space(const FeatureSpace& space, const std::filesystem::path& path) {
  json j;
  j["format_version"] = kFeatureSpaceVersion;
  j["config"] = {{"k_high", space.config.k_high},
                 {"k_medium", space.config.k_medium},
                 {"k_low", space.config.k_low},
                 {"seq_cap", space.config.seq_cap},
                 {"seq_order", space.config.seq_order},
                 {"min_df", space.config.min_df},
                 {"pooled_text", space.config.pooled_text}};
  for (int s = 0; s < 3; ++s) {
    j["vocabs"][s] = vocab_to_json(space.vocabs[s]);
    j["selected"][s] = space.selected[s];
  }
  j["sequence"] = {{"order", space.seq_vocab.order},
                   {"ngrams", space.seq_vocab.ngrams},
                   {"selected", space.seq_selected}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write feature space: " + path.string());
  out << j.dump();
  if (!out) throw IoError("write failure on feature space: " + path.string());
}

FeatureSpace load_feature_space(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature space: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad feature space file: ") + e.what());
  }
  if (!j.contains("format_version") || j["format_version"].get<int>() != kFeatureSpaceVersion)
    throw VersionMismatch("unsupported feature space version in " + path.string());
  FeatureSpace space;
  try {
    const json& c = j.at("config");
    space.config.k_high = c.at("k_high").get<std::size_t>();
    space.config.k_medium = c.at("k_medium").get<std::size_t>();
    space.config.k_low = c.at("k_low").get<std::size_t>();
    space.config.seq_cap = c.at("seq_cap").get<std::size_t>();
    space.config.seq_order = c.at("seq_order").get<int>();
    space.config.min_df = c.at("min_df").get<std::uint32_t>();
    space.config.pooled_text = c.at("pooled_text").get<bool>();
    for (int s = 0; s < 3; ++s) {
      space.vocabs[s] = vocab_from_json(j.at("vocabs").at(s));
      space.selected[s] = j.at("selected").at(s).get<std::vector<std::uint32_t>>();
    }
    space.seq_vocab.order = j.at("sequence").at("order").get<int>();
    space.seq_vocab.ngrams = j.at("sequence").at("ngrams").get<std::vector<std::string>>();
    space.seq_selected = j.at("sequence").at("selected").get<std::vector<std::uint32_t>>();
    for (std::size_t i = 0; i < space.seq_vocab.ngrams.size(); ++i)
      space.seq_vocab.index.emplace(space.seq_vocab.ngrams[i], static_cast<std::uint32_t>(i));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad feature space file: ") + e.what());
  }
  return space;
}

void write_triplets(std::span<const UserFeatureVector> vectors,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write feature vectors: " + path.string());
  for (std::size_t row = 0; row < vectors.size(); ++row) {
    for (const auto& [col, v] : vectors[row].entries) {
      char buf[80];
      std::snprintf(buf, sizeof(buf), "%zu %u %.17g\n", row, col, v);
      out << buf;
    }
  }
  if (!out) throw IoError("write failure on feature vectors: " + path.string());
}

std::vector<SparseRow> load_triplets(const std::filesystem::path& path, std::size_t n_rows) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open feature vectors: " + path.string());
  std::vector<SparseRow> rows(n_rows);
  std::size_t row = 0;
  std::uint32_t col = 0;
  double value = 0.0;
  while (in >> row >> col >> value) {
    if (row >= n_rows)
      throw SchemaError("triplet row index " + std::to_string(row) + " out of range in " +
                        path.string());
    rows[row].emplace_back(col, value);
  }
  return rows;
}

}  // namespace relbow
