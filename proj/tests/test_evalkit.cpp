#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "pcqa/evalkit.hpp"

using namespace pcqa;

namespace {

std::vector<LabeledViews> blank_samples(const std::vector<double>& mos, int res = 8) {
  std::vector<LabeledViews> out;
  for (std::size_t i = 0; i < mos.size(); ++i) {
    LabeledViews s{"s" + std::to_string(i), "c" + std::to_string(i), mos[i], {}};
    for (int v = 0; v < kNumViews; ++v) {
      s.views.texture[v] = Image(3, res, res, 0.5);
      s.views.depth[v] = Image(1, res, res, 1.0);
      s.views.occupancy[v] = Image(1, res, res, 1.0);
      s.views.ratios[v] = 1.0;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("rank correlation examples") {
  const std::vector<double> a{1, 2, 3}, b{10, 20, 30}, c{3, 2, 1};
  CHECK(srocc(a, b) == doctest::Approx(1.0));
  CHECK(srocc(a, c) == doctest::Approx(-1.0));
  CHECK_THROWS(srocc(a, std::vector<double>{2, 2, 2}));
}

TEST_CASE("average ranks agree with the counting oracle under ties") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    auto v = oracle::random_vector(6, rng);
    v[rng() % 6] = v[(rng() % 5 + 1) % 6];
    const auto r = average_ranks(v);
    const auto o = oracle::count_ranks(v);
    for (int i = 0; i < 6; ++i) CHECK(r[i] == o[i]);
    const auto q = oracle::random_vector(6, rng);
    CHECK(srocc(v, q) == doctest::Approx(oracle::spearman(v, q)).epsilon(1e-12));
  }
}

TEST_CASE("plcc and rmse") {
  const std::vector<double> q{1, 3, 2, 5};
  std::vector<double> lin;
  for (double v : q) lin.push_back(2 * v + 3);
  CHECK(plcc(lin, q) == doctest::Approx(1.0));
  CHECK(rmse(q, q) == 0.0);
  CHECK(rmse(std::vector<double>{1, 2}, std::vector<double>{2, 4}) == doctest::Approx(std::sqrt(2.5)));
  CHECK_THROWS(plcc(std::vector<double>{1, 1, 1, 1}, q));
}

TEST_CASE("logistic fit recovers a generating curve") {
  const Logistic4Params truth{1, 2, 5, 0};
  std::vector<double> x, q;
  for (int i = 1; i <= 25; ++i) {
    x.push_back(0.4 * i);
    q.push_back(truth(0.4 * i));
  }
  const auto fit = logistic4_fit(x, q);
  CHECK(fit.converged);
  CHECK_FALSE(fit.params.identity);
  CHECK(rmse(fit.mapped, q) < 1e-4);
}

TEST_CASE("logistic fit never lowers plcc below the identity") {
  std::mt19937_64 rng(4);
  auto q = oracle::random_vector(30, rng, 1, 5);
  std::sort(q.begin(), q.end());
  const auto fit = logistic4_fit(q, q);
  CHECK(pearson(fit.mapped, q) >= pearson(q, q) - 1e-9);
}

TEST_CASE("logistic fit fallbacks") {
  const std::vector<double> q{1, 2, 3, 4, 5};
  const auto c = logistic4_fit(std::vector<double>(5, 2.0), q);
  CHECK(c.params.identity);
  CHECK(c.mapped == std::vector<double>(5, 2.0));
  CHECK(logistic4_fit(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}).params.identity);
  // Non-positive predictions are shifted before fitting.
  const auto s = logistic4_fit(std::vector<double>{-3, -1, 0, 2, 4}, q);
  CHECK_FALSE(s.params.identity);
  CHECK(s.params.scale != 1.0);
}

TEST_CASE("oracle model scores perfectly") {
  const auto samples = blank_samples({1.5, 4.0, 2.2, 3.3, 4.8, 1.1});
  const CropScorer oracle_model = [&](std::size_t i, const ViewSet&) { return samples[i].mos; };
  const auto r = evaluate(oracle_model, samples, 4, 10, 1);
  CHECK(r.srocc == doctest::Approx(1.0));
  CHECK(r.plcc == doctest::Approx(1.0));
  CHECK(r.rmse == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("crop averaging") {
  const auto samples = blank_samples({1, 2, 3, 4, 5});
  const CropScorer invariant = [&](std::size_t i, const ViewSet& v) { return samples[i].mos * 2 + v.height(); };
  const auto one = evaluate(invariant, samples, 4, 1, 5);
  const auto ten = evaluate(invariant, samples, 4, 10, 5);
  CHECK(one.plcc == ten.plcc);
  CHECK(one.srocc == ten.srocc);
  CHECK(one.rmse == ten.rmse);

  int calls = 0;
  const CropScorer counting = [&](std::size_t, const ViewSet& v) {
    ++calls;
    return double(v.height());
  };
  const auto s = crop_averaged_scores(counting, samples, 4, 3, 2);
  CHECK(calls == 15);
  CHECK(s == std::vector<double>(5, 4.0));
  calls = 0;
  crop_averaged_scores(counting, samples, 8, 3, 2);
  CHECK(calls == 5);
  CHECK_THROWS(evaluate(invariant, {}, 4, 1, 1));
}

TEST_CASE("report averaging and csv") {
  std::vector<MetricReport> folds{{0, 0.9, 0.8, 0.5, false}, {1, 0.8, 0.9, 0.7, false}};
  const auto avg = average_reports(folds);
  CHECK(avg.fold == -1);
  CHECK(avg.srocc == doctest::Approx(0.85));
  CHECK(avg.plcc == doctest::Approx(0.85));
  CHECK(avg.rmse == doctest::Approx(0.6));
  std::ostringstream out;
  write_reports_csv(out, folds, &avg);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "fold,plcc,srocc,rmse");
  std::getline(in, line);
  CHECK(line.rfind("0,", 0) == 0);
  std::getline(in, line);
  std::getline(in, line);
  CHECK(line.rfind("mean,", 0) == 0);
}
