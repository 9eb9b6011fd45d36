#include "relbow/features.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "helpers.hpp"
#include "relbow/errors.hpp"
#include "relbow/rng.hpp"
#include "relbow/text.hpp"

using namespace relbow;
using namespace relbow::testing;

namespace {

// Independent one-way ANOVA oracle over a dense matrix: explicit group
// means and deviation sums, same zero-variance conventions as the library.
std::vector<double> anova_oracle(const std::vector<std::vector<double>>& dense,
                                 const std::vector<UserClass>& y) {
  const std::size_t n = dense.size(), cols = dense.empty() ? 0 : dense[0].size();
  std::vector<double> scores(cols, 0.0);
  for (std::size_t j = 0; j < cols; ++j) {
    std::vector<double> g0, g1;
    for (std::size_t i = 0; i < n; ++i)
      (y[i] == UserClass::Diagnosed ? g0 : g1).push_back(dense[i][j]);
    auto mean = [](const std::vector<double>& v) {
      double s = 0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    auto constant = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    };
    const double m0 = mean(g0), m1 = mean(g1);
    if (constant(g0) && constant(g1)) {
      scores[j] = m0 == m1 ? 0.0 : kMaxFScore;
      continue;
    }
    const double grand = mean([&] {
      std::vector<double> all = g0;
      all.insert(all.end(), g1.begin(), g1.end());
      return all;
    }());
    double ssb = g0.size() * (m0 - grand) * (m0 - grand) +
                 g1.size() * (m1 - grand) * (m1 - grand);
    double ssw = 0;
    for (double x : g0) ssw += (x - m0) * (x - m0);
    for (double x : g1) ssw += (x - m1) * (x - m1);
    if (ssw <= 0.0) {
      scores[j] = ssb > 0.0 ? kMaxFScore : 0.0;
      continue;
    }
    scores[j] = ssb / (ssw / static_cast<double>(n - 2));
  }
  return scores;
}

CountMatrix to_sparse_matrix(const std::vector<std::vector<double>>& dense) {
  CountMatrix m;
  m.cols = dense.empty() ? 0 : dense[0].size();
  for (const auto& row : dense) {
    SparseRow sparse;
    for (std::size_t j = 0; j < row.size(); ++j)
      if (row[j] != 0.0) sparse.emplace_back(static_cast<std::uint32_t>(j), row[j]);
    m.rows.push_back(std::move(sparse));
  }
  return m;
}

std::vector<RelevanceLabel> seq(const std::string& code_string) {
  std::vector<RelevanceLabel> labels;
  for (char c : code_string) {
    if (c == 'h') labels.push_back(RelevanceLabel::High);
    if (c == 'm') labels.push_back(RelevanceLabel::Medium);
    if (c == 'l') labels.push_back(RelevanceLabel::Low);
  }
  return labels;
}

// two-user corpus: each "spec" entry is (label_code, text) for one post
Corpus mini_corpus(const std::vector<std::vector<std::pair<char, std::string>>>& user_posts,
                   const std::vector<UserClass>& classes, LabelMap& labels) {
  Corpus corpus;
  for (std::size_t u = 0; u < user_posts.size(); ++u) {
    std::vector<Publication> posts;
    for (std::size_t k = 0; k < user_posts[u].size(); ++k) {
      const std::string id = "u" + std::to_string(u) + "p" + std::to_string(k);
      posts.push_back(make_post("u" + std::to_string(u), id, static_cast<std::int64_t>(k),
                                user_posts[u][k].second));
      const char c = user_posts[u][k].first;
      labels.emplace(id, c == 'h'   ? RelevanceLabel::High
                         : c == 'm' ? RelevanceLabel::Medium
                                    : RelevanceLabel::Low);
    }
    corpus.timelines.push_back(make_timeline("u" + std::to_string(u), classes[u],
                                             std::move(posts), Split::Train));
  }
  return corpus;
}

}  // namespace

TEST_CASE("stratified bow: counts land in the right stratum") {
  LabelMap labels;
  const Corpus corpus = mini_corpus(
      {
          {{'h', "a a b"}, {'l', "c c"}},
          {{'l', "a b c"}, {'l', "b b"}},
      },
      {UserClass::Diagnosed, UserClass::Control}, labels);
  FeatureConfig cfg;
  cfg.min_df = 1;
  const StratifiedBow bow = build_stratified_bow(corpus, labels, cfg);

  // "a a b" is the only High post
  const StratumVocab& high = bow.vocabs[0];
  REQUIRE(high.size() == 2);
  CHECK(high.tokens == std::vector<std::string>{"a", "b"});
  const SparseRow& row0 = bow.matrices[0].rows[0];
  REQUIRE(row0.size() == 2);
  CHECK(row0[0] == std::pair<std::uint32_t, double>{0, 2.0});  // a: 2
  CHECK(row0[1] == std::pair<std::uint32_t, double>{1, 1.0});  // b: 1

  // user 1 has no High or Medium posts: all-zero rows there
  CHECK(bow.matrices[0].rows[1].empty());
  CHECK(bow.matrices[1].rows[1].empty());
  CHECK(bow.matrices[1].cols == 0);  // nobody posted Medium
}

TEST_CASE("stratified bow honors min_df") {
  LabelMap labels;
  const Corpus corpus = mini_corpus(
      {
          {{'l', "rare common"}, {'l', "common other"}},
          {{'l', "common other"}},
      },
      {UserClass::Diagnosed, UserClass::Control}, labels);
  FeatureConfig cfg;
  cfg.min_df = 2;
  const StratifiedBow bow = build_stratified_bow(corpus, labels, cfg);
  const StratumVocab& low = bow.vocabs[2];
  CHECK(low.index.count("common") == 1);
  CHECK(low.index.count("other") == 1);
  CHECK(low.index.count("rare") == 0);  // df 1 < min_df
}

TEST_CASE("stratified bow requires labels for every Train post") {
  LabelMap labels;
  const Corpus corpus = mini_corpus({{{'h', "a"}}}, {UserClass::Diagnosed}, labels);
  labels.clear();
  CHECK_THROWS_AS(build_stratified_bow(corpus, labels, FeatureConfig{}), MissingLabel);
}

TEST_CASE("stratum column sums equal a recount over the raw text") {
  // randomized corpus, then recount token occurrences per stratum from scratch
  Rng rng(31);
  std::vector<std::vector<std::pair<char, std::string>>> users;
  std::vector<UserClass> classes;
  for (int u = 0; u < 8; ++u) {
    std::vector<std::pair<char, std::string>> posts;
    const int n_posts = static_cast<int>(rng.uniform(1, 6));
    for (int k = 0; k < n_posts; ++k) {
      std::string text;
      const int n_tokens = static_cast<int>(rng.uniform(1, 8));
      for (int w = 0; w < n_tokens; ++w) text += "tok" + std::to_string(rng.uniform(0, 9)) + " ";
      posts.emplace_back("hml"[rng.uniform(0, 2)], text);
    }
    users.push_back(std::move(posts));
    classes.push_back(u % 2 ? UserClass::Control : UserClass::Diagnosed);
  }
  LabelMap labels;
  const Corpus corpus = mini_corpus(users, classes, labels);
  FeatureConfig cfg;
  cfg.min_df = 1;
  const StratifiedBow bow = build_stratified_bow(corpus, labels, cfg);

  for (int s = 0; s < 3; ++s) {
    std::vector<double> col_sums(bow.vocabs[s].size(), 0.0);
    for (const SparseRow& row : bow.matrices[s].rows)
      for (const auto& [col, v] : row) col_sums[col] += v;

    std::map<std::string, double> recount;
    for (const auto& t : corpus.timelines)
      for (const auto& p : t.publications)
        if (code(labels.at(p.post_id)) - 1 == s)
          for (const auto& tok : tokenize(p.text)) recount[tok] += 1.0;

    for (std::size_t col = 0; col < col_sums.size(); ++col)
      CHECK(col_sums[col] == recount[bow.vocabs[s].tokens[col]]);
  }
}

TEST_CASE("f-score conventions on degenerate columns") {
  // constant column scores 0
  CountMatrix constant = to_sparse_matrix({{2}, {2}, {2}, {2}});
  const std::vector<UserClass> y = {UserClass::Diagnosed, UserClass::Diagnosed,
                                    UserClass::Control, UserClass::Control};
  CHECK(univariate_f_scores(constant, y)[0] == 0.0);

  // perfect separation hits the sentinel
  CountMatrix separated = to_sparse_matrix({{1}, {1}, {2}, {2}});
  CHECK(univariate_f_scores(separated, y)[0] == kMaxFScore);

  // all-zero column is constant too
  CountMatrix zeros = to_sparse_matrix({{0}, {0}, {0}, {0}});
  CHECK(univariate_f_scores(zeros, y)[0] == 0.0);
}

TEST_CASE("hand-computed F for [1..6] split 3/3 is 13.5") {
  CountMatrix m = to_sparse_matrix({{1}, {2}, {3}, {4}, {5}, {6}});
  const std::vector<UserClass> y = {UserClass::Diagnosed, UserClass::Diagnosed,
                                    UserClass::Diagnosed, UserClass::Control,
                                    UserClass::Control,   UserClass::Control};
  CHECK(univariate_f_scores(m, y)[0] == doctest::Approx(13.5).epsilon(1e-12));
}

TEST_CASE("f-scores match the brute-force oracle on random matrices") {
  Rng rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = rng.uniform(4, 20);
    const std::size_t cols = rng.uniform(2, 30);
    std::vector<std::vector<double>> dense(n, std::vector<double>(cols, 0.0));
    std::vector<UserClass> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i < n / 2 ? UserClass::Diagnosed : UserClass::Control;
      for (std::size_t j = 0; j < cols; ++j)
        if (rng.bernoulli(0.6)) dense[i][j] = static_cast<double>(rng.uniform(0, 6));
    }
    const auto expected = anova_oracle(dense, y);
    const auto got = univariate_f_scores(to_sparse_matrix(dense), y);
    REQUIRE(got.size() == expected.size());
    for (std::size_t j = 0; j < got.size(); ++j) {
      if (expected[j] == kMaxFScore) {
        CHECK(got[j] == kMaxFScore);
      } else {
        CHECK(got[j] == doctest::Approx(expected[j]).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("f-scores need both classes") {
  CountMatrix m = to_sparse_matrix({{1}, {2}});
  CHECK_THROWS_AS(
      univariate_f_scores(m, std::vector<UserClass>{UserClass::Control, UserClass::Control}),
      SingleClass);
}

TEST_CASE("permuting users permutes rows and leaves scores unchanged") {
  Rng rng(91);
  const std::size_t n = 10, cols = 12;
  std::vector<std::vector<double>> dense(n, std::vector<double>(cols, 0.0));
  std::vector<UserClass> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = rng.bernoulli(0.4) ? UserClass::Diagnosed : UserClass::Control;
    for (std::size_t j = 0; j < cols; ++j)
      if (rng.bernoulli(0.5)) dense[i][j] = static_cast<double>(rng.uniform(1, 5));
  }
  y[0] = UserClass::Diagnosed;
  y[1] = UserClass::Control;
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<std::vector<double>> permuted(n);
  std::vector<UserClass> y_permuted(n);
  for (std::size_t i = 0; i < n; ++i) {
    permuted[i] = dense[perm[i]];
    y_permuted[i] = y[perm[i]];
  }
  const auto s1 = univariate_f_scores(to_sparse_matrix(dense), y);
  const auto s2 = univariate_f_scores(to_sparse_matrix(permuted), y_permuted);
  for (std::size_t j = 0; j < cols; ++j) CHECK(s1[j] == doctest::Approx(s2[j]).epsilon(1e-12));
}

TEST_CASE("select_top_k basics") {
  CHECK(select_top_k(std::vector<double>{0.1, 5.0, 3.0}, 2) ==
        std::vector<std::uint32_t>{1, 2});
  CHECK(select_top_k(std::vector<double>{1.0, 2.0, 3.0}, 10) ==
        std::vector<std::uint32_t>{0, 1, 2});
  CHECK(select_top_k(std::vector<double>{2.0, 2.0, 1.0}, 1) ==
        std::vector<std::uint32_t>{0});
}

TEST_CASE("select_top_k matches the sort-based oracle") {
  Rng rng(13);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = rng.uniform(1, 40);
    std::vector<double> scores(n);
    for (double& s : scores) s = static_cast<double>(rng.uniform(0, 9));  // many ties
    const std::size_t k = rng.uniform(1, n);
    // oracle: sort (score desc, index asc), truncate, report sorted indices
    std::vector<std::uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return a < b;
    });
    std::vector<std::uint32_t> expected(order.begin(), order.begin() + k);
    std::sort(expected.begin(), expected.end());
    CHECK(select_top_k(scores, k) == expected);
  }
}

TEST_CASE("label sequence n-grams") {
  using Counts = std::map<std::string, std::uint32_t>;
  CHECK(label_sequence_ngrams(seq("hhl"), 2) == Counts{{"hh", 1}, {"hl", 1}});
  CHECK(label_sequence_ngrams(seq("m"), 2).empty());
  CHECK(label_sequence_ngrams(seq("hmhm"), 2) == Counts{{"hm", 2}, {"mh", 1}});
  CHECK(label_sequence_ngrams(seq("hml"), 1) == Counts{{"h", 1}, {"m", 1}, {"l", 1}});
  CHECK(label_sequence_ngrams(seq("hhh"), 3) == Counts{{"hhh", 1}});
  CHECK_THROWS_AS(label_sequence_ngrams(seq("h"), 0), InvalidConfig);
}

TEST_CASE("n-gram counts sum to max(0, len - order + 1)") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int len = static_cast<int>(rng.uniform(0, 12));
    std::string s;
    for (int i = 0; i < len; ++i) s += "hml"[rng.uniform(0, 2)];
    const int order = static_cast<int>(rng.uniform(1, 4));
    const auto counts = label_sequence_ngrams(seq(s), order);
    std::uint32_t total = 0;
    for (const auto& [key, c] : counts) total += c;
    const int expected = std::max(0, len - order + 1);
    CHECK(total == static_cast<std::uint32_t>(expected));
  }
}

TEST_CASE("fit_feature_space saturates when vocabularies are small") {
  LabelMap labels;
  const Corpus corpus = mini_corpus(
      {
          {{'h', "a b"}, {'m', "c d"}, {'l', "e f"}, {'h', "a b"}},
          {{'h', "a g"}, {'m', "c h"}, {'l', "e i"}, {'l', "e f"}},
      },
      {UserClass::Diagnosed, UserClass::Control}, labels);
  FeatureConfig cfg;
  cfg.min_df = 1;  // defaults otherwise: 6000/6000/3000 far above these vocabs
  const FeatureSpace space = fit_feature_space(corpus, labels, cfg);
  CHECK(space.selected[0].size() == space.vocabs[0].size());
  CHECK(space.selected[1].size() == space.vocabs[1].size());
  CHECK(space.selected[2].size() == space.vocabs[2].size());
  CHECK(space.text_width() ==
        space.vocabs[0].size() + space.vocabs[1].size() + space.vocabs[2].size());
  CHECK(space.seq_width() == space.seq_vocab.size());
  CHECK(space.seq_width() <= 9);

  const auto offsets = space.block_offsets();
  CHECK(offsets[0] == 0);
  CHECK(offsets[1] == space.selected[0].size());
  CHECK(offsets[3] == space.text_width());
  CHECK(space.width() == space.text_width() + space.seq_width());
}

TEST_CASE("transform_user") {
  LabelMap labels;
  const Corpus corpus = mini_corpus(
      {
          {{'h', "a a b"}, {'l', "c a"}},
          {{'h', "b d"}, {'l', "c c"}},
      },
      {UserClass::Diagnosed, UserClass::Control}, labels);
  FeatureConfig cfg;
  cfg.min_df = 1;
  const FeatureSpace space = fit_feature_space(corpus, labels, cfg);
  const StratifiedBow bow = build_stratified_bow(corpus, labels, cfg);

  SUBCASE("train-user vectors match the fit-time matrices at selected indices") {
    for (std::size_t u = 0; u < corpus.timelines.size(); ++u) {
      const UserFeatureVector vec = transform_user(space, corpus.timelines[u], labels);
      const auto offsets = space.block_offsets();
      for (int s = 0; s < 3; ++s) {
        for (std::size_t pos = 0; pos < space.selected[s].size(); ++pos) {
          const std::uint32_t vocab_col = space.selected[s][pos];
          double expected = 0;
          for (const auto& [col, v] : bow.matrices[s].rows[u])
            if (col == vocab_col) expected = v;
          double got = 0;
          for (const auto& [idx, v] : vec.entries)
            if (idx == offsets[s] + pos) got = v;
          CHECK(got == expected);
        }
      }
    }
  }

  SUBCASE("empty timeline gives an all-zero vector of full width") {
    Timeline empty = make_timeline("ghost", UserClass::Control, {}, Split::Test);
    const UserFeatureVector vec = transform_user(space, empty, labels);
    CHECK(vec.entries.empty());
    CHECK(vec.width == space.width());
  }

  SUBCASE("out-of-vocabulary text leaves text blocks zero, sequence block counts") {
    LabelMap local = labels;
    Timeline oov = make_timeline(
        "new", UserClass::Control,
        {make_post("new", "n1", 1, "zz yy"), make_post("new", "n2", 2, "qq pp")}, Split::Test);
    local.emplace("n1", RelevanceLabel::High);
    local.emplace("n2", RelevanceLabel::High);
    const UserFeatureVector vec = transform_user(space, oov, local);
    const auto offsets = space.block_offsets();
    for (const auto& [idx, v] : vec.entries) CHECK(idx >= offsets[3]);
    // the ("hh") bigram must be counted iff it was seen at fit time
    const bool hh_in_vocab = space.seq_vocab.index.count("hh") == 1;
    CHECK(vec.entries.empty() == !hh_in_vocab);
  }
}

TEST_CASE("feature space is a pure function of the Train split") {
  LabelMap labels;
  Corpus corpus = mini_corpus(
      {
          {{'h', "a a b"}, {'m', "x y"}, {'l', "c a"}},
          {{'h', "b d"}, {'m', "y z"}, {'l', "c c"}},
      },
      {UserClass::Diagnosed, UserClass::Control}, labels);
  FeatureConfig cfg;
  cfg.min_df = 1;
  const FeatureSpace base = fit_feature_space(corpus, labels, cfg);

  // adding Test users with unseen tokens must not change the space
  Corpus extended = corpus;
  std::vector<Publication> extra = {make_post("t9", "t9p0", 1, "novel words only"),
                                    make_post("t9", "t9p1", 2, "never seen")};
  labels.emplace("t9p0", RelevanceLabel::High);
  labels.emplace("t9p1", RelevanceLabel::Low);
  extended.timelines.push_back(
      make_timeline("t9", UserClass::Diagnosed, std::move(extra), Split::Test));
  const FeatureSpace with_test = fit_feature_space(extended, labels, cfg);

  CHECK(with_test.width() == base.width());
  for (int s = 0; s < 3; ++s) {
    CHECK(with_test.vocabs[s].tokens == base.vocabs[s].tokens);
    CHECK(with_test.selected[s] == base.selected[s]);
  }
  CHECK(with_test.seq_vocab.ngrams == base.seq_vocab.ngrams);
  CHECK(with_test.vocabs[0].index.count("novel") == 0);
}

TEST_CASE("feature space artifact round-trips") {
  LabelMap labels;
  const Corpus corpus = mini_corpus(
      {
          {{'h', "a a b"}, {'m', "x y"}, {'l', "c a"}},
          {{'h', "b d"}, {'m', "y z"}, {'l', "c c"}},
      },
      {UserClass::Diagnosed, UserClass::Control}, labels);
  FeatureConfig cfg;
  cfg.min_df = 1;
  const FeatureSpace space = fit_feature_space(corpus, labels, cfg);

  TempDir dir("fspace");
  save_feature_space(space, dir / "fs.json");
  const FeatureSpace back = load_feature_space(dir / "fs.json");
  CHECK(back.config.k_high == space.config.k_high);
  CHECK(back.config.min_df == space.config.min_df);
  for (int s = 0; s < 3; ++s) {
    CHECK(back.vocabs[s].tokens == space.vocabs[s].tokens);
    CHECK(back.selected[s] == space.selected[s]);
  }
  CHECK(back.seq_vocab.ngrams == space.seq_vocab.ngrams);
  CHECK(back.seq_selected == space.seq_selected);
  CHECK(back.width() == space.width());

  // transforms agree
  const auto v1 = transform_user(space, corpus.timelines[0], labels);
  const auto v2 = transform_user(back, corpus.timelines[0], labels);
  CHECK(v1.entries == v2.entries);

  std::ofstream bad(dir / "bad.json", std::ios::binary);
  bad << R"({"format_version": 99})";
  bad.close();
  CHECK_THROWS_AS(load_feature_space(dir / "bad.json"), VersionMismatch);
}

TEST_CASE("triplet export round-trips") {
  UserFeatureVector a{"u0", {{0, 2.0}, {3, 1.5}}, 5, {0, 1, 2, 3}};
  UserFeatureVector b{"u1", {}, 5, {0, 1, 2, 3}};
  UserFeatureVector c{"u2", {{4, 1.0}}, 5, {0, 1, 2, 3}};
  const std::vector<UserFeatureVector> vecs = {a, b, c};
  TempDir dir("triplets");
  write_triplets(vecs, dir / "v.tsv");
  const auto rows = load_triplets(dir / "v.tsv", 3);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == a.entries);
  CHECK(rows[1].empty());
  CHECK(rows[2] == c.entries);
}
