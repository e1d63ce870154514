#include "hiersurp/regress.h"

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "doctest.h"

namespace hiersurp {
namespace {

struct SimSpec {
  int articles = 20;
  int subjects = 20;
  int per_cell = 2;
  double sd_article = 0.3;
  double sd_subj = 0.4;
  double sd_noise = 0.5;
  std::vector<double> beta = {6.0, 0.3, -0.2};  // intercept, x1, x2
  // Removes article and subject means from the noise so the sample carries no
  // between-group variation at all.
  bool double_centered_noise = false;
};

// y = beta0 + beta1 x1 + beta2 x2 + article + subj + noise, with an extra
// pure-noise column x3.
Dataset simulate(const SimSpec& s, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> a_eff(s.articles), s_eff(s.subjects);
  for (double& v : a_eff) v = s.sd_article * rng.normal();
  for (double& v : s_eff) v = s.sd_subj * rng.normal();
  const int n = s.articles * s.subjects * s.per_cell;
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd y(n);
  std::vector<int> art(n), subj(n);
  Eigen::VectorXd noise(n);
  int i = 0;
  for (int a = 0; a < s.articles; ++a) {
    for (int j = 0; j < s.subjects; ++j) {
      for (int c = 0; c < s.per_cell; ++c, ++i) {
        x(i, 0) = rng.normal();
        x(i, 1) = rng.normal();
        x(i, 2) = rng.normal();
        noise(i) = s.sd_noise * rng.normal();
        art[i] = a;
        subj[i] = j;
      }
    }
  }
  if (s.double_centered_noise) {
    Eigen::VectorXd am = Eigen::VectorXd::Zero(s.articles), sm = Eigen::VectorXd::Zero(s.subjects);
    for (int k = 0; k < n; ++k) {
      am(art[k]) += noise(k) / (s.subjects * s.per_cell);
      sm(subj[k]) += noise(k) / (s.articles * s.per_cell);
    }
    const double grand = noise.mean();
    for (int k = 0; k < n; ++k) noise(k) += grand - am(art[k]) - sm(subj[k]);
  }
  for (int k = 0; k < n; ++k) {
    y(k) = s.beta[0] + s.beta[1] * x(k, 0) + s.beta[2] * x(k, 1) + a_eff[art[k]] +
           s_eff[subj[k]] + noise(k);
  }
  return Dataset::from_arrays({"x1", "x2", "x3"}, x, y, art, subj);
}

// Dense oracle: -2 max log-likelihood over beta and sigma^2 at fixed ratios.
double dense_deviance(const Dataset& d, const std::vector<std::string>& preds, double ta,
                      double ts) {
  const Eigen::Index n = d.y.size();
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(preds.size()) + 1);
  x.col(0).setOnes();
  for (std::size_t k = 0; k < preds.size(); ++k) x.col(k + 1) = d.columns.col(d.column(preds[k]));
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (d.article[i] == d.article[j]) v(i, j) += ta;
      if (d.subj[i] == d.subj[j]) v(i, j) += ts;
    }
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(v);
  const Eigen::MatrixXd vx = llt.solve(x);
  const Eigen::VectorXd beta = (x.transpose() * vx).ldlt().solve(vx.transpose() * d.y);
  const Eigen::VectorXd r = d.y - x * beta;
  const double q = r.dot(llt.solve(r));
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double nn = static_cast<double>(n);
  return logdet + nn * (1.0 + std::log(2.0 * std::numbers::pi * q / nn));
}

// Upper chi-square tail by Simpson integration of the density after the
// substitution t = u^2, which removes the df = 1 singularity.
double chi_square_oracle(double x, int df) {
  const double k = df;
  const double norm = std::pow(2.0, k / 2.0) * std::tgamma(k / 2.0);
  auto f = [&](double u) { return 2.0 * std::pow(u, k - 1.0) * std::exp(-u * u / 2.0) / norm; };
  const int m = 200000;
  const double b = std::sqrt(x), h = b / m;
  double s = f(0.0) + f(b);
  for (int i = 1; i < m; ++i) s += (i % 2 ? 4.0 : 2.0) * f(i * h);
  return 1.0 - s * h / 3.0;
}

TEST_CASE("chi-square tail fixtures") {
  CHECK(std::abs(chi_square_test(2.9406, 1) - 0.08638) < 1e-4);
  CHECK(std::abs(chi_square_test(4.5609, 1) - 0.03271) < 1e-4);
  CHECK(chi_square_test(0.0, 1) == 1.0);
  CHECK(chi_square_test(0.0, 3) == 1.0);
  for (double x : {0.05, 0.5, 1.0, 2.9406, 4.5609, 10.0, 25.0}) {
    for (int df : {1, 2, 3, 5, 9}) {
      CHECK(std::abs(chi_square_test(x, df) - chi_square_oracle(x, df)) < 1e-6);
    }
  }
}

TEST_CASE("profiled deviance matches the dense likelihood") {
  SimSpec s;
  s.articles = 5;
  s.subjects = 7;
  s.per_cell = 3;
  const Dataset d = simulate(s, 3);
  for (auto [ta, ts] : {std::pair{0.0, 0.0}, {0.5, 0.1}, {2.0, 3.0}, {0.0, 1.5}}) {
    CHECK(profiled_deviance(d, {"x1", "x2"}, ta, ts) ==
          doctest::Approx(dense_deviance(d, {"x1", "x2"}, ta, ts)).epsilon(1e-10));
  }
}

TEST_CASE("zero random variance reduces to least squares") {
  SimSpec s;
  s.sd_article = 0.0;
  s.sd_subj = 0.0;
  s.double_centered_noise = true;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Dataset d = simulate(s, seed);
    const MixedModelFit f = fit_lmm(d, {"x1", "x2"});
    CHECK(f.var_article / f.sigma2 < 1e-3);
    CHECK(f.var_subj / f.sigma2 < 1e-3);
    CHECK(std::abs(f.deviance - ols_deviance(d, {"x1", "x2"})) < 1e-6);
  }
}

TEST_CASE("known effects are recovered") {
  SimSpec s;
  s.articles = 50;
  s.subjects = 50;
  s.per_cell = 1;
  int within = 0, total = 0;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const Dataset d = simulate(s, seed);
    const MixedModelFit f = fit_lmm(d, {"x1", "x2"});
    CHECK(f.converged);
    for (std::size_t k = 0; k < 3; ++k) {
      ++total;
      if (std::abs(f.beta(k) - s.beta[k]) < 3.0 * f.se(k)) ++within;
    }
    CHECK(std::sqrt(f.sigma2) == doctest::Approx(s.sd_noise).epsilon(0.1));
    CHECK(f.var_article > 0.0);
    CHECK(f.var_subj > 0.0);
    // The optimum is not beaten by a coarse grid.
    for (double la : {-4.0, -2.0, -1.0, 0.0, 1.0}) {
      for (double ls : {-4.0, -2.0, -1.0, 0.0, 1.0}) {
        CHECK(profiled_deviance(d, {"x1", "x2"}, std::exp(la), std::exp(ls)) >=
              f.deviance - 1e-6);
      }
    }
  }
  CHECK(within == total);
}

TEST_CASE("noise predictors never increase deviance") {
  for (std::uint64_t seed = 20; seed < 26; ++seed) {
    const Dataset d = simulate(SimSpec{}, seed);
    const MixedModelFit small = fit_lmm(d, {"x1"});
    const MixedModelFit big = fit_lmm(d, {"x1", "x3"});
    CHECK(big.deviance <= small.deviance + 1e-4);
    const DeltaDeviance dd = delta_deviance(small, big);
    CHECK(dd.value >= 0.0);
    CHECK(dd.df == 1);
    CHECK_FALSE(dd.beyond_tolerance);
  }
}

TEST_CASE("deviance is invariant to affine rescaling of a predictor") {
  const Dataset d = simulate(SimSpec{}, 31);
  Dataset e = d;
  e.columns.col(0) = 7.0 * e.columns.col(0).array() + 3.0;
  const MixedModelFit a = fit_lmm(d, {"x1", "x2"});
  const MixedModelFit b = fit_lmm(e, {"x1", "x2"});
  CHECK(b.deviance == doctest::Approx(a.deviance).epsilon(1e-9));
  CHECK(std::abs(b.deviance - a.deviance) < 1e-6);
  CHECK(b.beta(1) == doctest::Approx(a.beta(1) / 7.0).epsilon(1e-5));
  CHECK(b.beta(2) == doctest::Approx(a.beta(2)).epsilon(1e-5));
}

TEST_CASE("fits are deterministic") {
  const Dataset d = simulate(SimSpec{}, 41);
  const MixedModelFit a = fit_lmm(d, {"x1", "x2", "x3"});
  const MixedModelFit b = fit_lmm(d, {"x1", "x2", "x3"});
  CHECK(a.deviance == b.deviance);
  CHECK(a.beta == b.beta);
  CHECK(a.var_article == b.var_article);
}

TEST_CASE("delta deviance edge cases") {
  Dataset d = simulate(SimSpec{}, 51);
  const MixedModelFit base = fit_lmm(d, {"x2"});
  CHECK(delta_deviance(base, base).value == 0.0);

  // A constant column is absorbed by the intercept.
  Eigen::MatrixXd cols(d.rows(), 4);
  cols << d.columns, Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d.rows()), 4.2);
  Dataset c = Dataset::from_arrays({"x1", "x2", "x3", "const"}, cols, d.y, d.article, d.subj);
  const MixedModelFit with_const = fit_lmm(c, {"x2", "const"});
  CHECK(with_const.dropped == std::vector<std::string>{"const"});
  const DeltaDeviance dc = delta_deviance(fit_lmm(c, {"x2"}), with_const);
  CHECK(dc.value < 1e-6);
  CHECK(dc.df == 0);
  CHECK(chi_square_test(dc.value, dc.df) == 1.0);
  FitOptions strict;
  strict.drop_aliased = false;
  CHECK_THROWS_AS(fit_lmm(c, {"x2", "const"}, strict), Singular);

  // The generating predictor explains a lot.
  const DeltaDeviance big = delta_deviance(base, fit_lmm(d, {"x2", "x1"}));
  CHECK(big.value > 50.0);
  CHECK(chi_square_test(big.value, big.df) < 1e-6);

  CHECK_THROWS_AS(delta_deviance(fit_lmm(d, {"x1"}), fit_lmm(d, {"x2", "x3"})), NotNested);
}

TEST_CASE("a single-level grouping factor drops its intercept") {
  SimSpec s;
  s.articles = 1;
  const Dataset d = simulate(s, 61);
  const MixedModelFit f = fit_lmm(d, {"x1"});
  CHECK_FALSE(f.article_effect);
  CHECK(f.subj_effect);
  CHECK(f.var_article == 0.0);
  CHECK_FALSE(f.warnings.empty());
}

// Three surprisal-like columns; y depends on "LC" only.
Dataset three_models(std::uint64_t seed, double effect, bool identical) {
  Rng rng(seed);
  const int articles = 12, subjects = 16, per = 4;
  const int n = articles * subjects * per;
  std::vector<double> a_eff(articles), s_eff(subjects);
  for (double& v : a_eff) v = 0.2 * rng.normal();
  for (double& v : s_eff) v = 0.3 * rng.normal();
  Eigen::MatrixXd x(n, 4);
  Eigen::VectorXd y(n);
  std::vector<int> art(n), subj(n);
  int i = 0;
  for (int a = 0; a < articles; ++a) {
    for (int j = 0; j < subjects; ++j) {
      for (int c = 0; c < per; ++c, ++i) {
        const double len = rng.normal();
        const double lc = rng.normal();
        x(i, 0) = len;
        x(i, 1) = identical ? lc : 0.5 * lc + rng.normal();  // LSTM
        x(i, 2) = identical ? lc : 0.6 * lc + rng.normal();  // TD
        x(i, 3) = lc;                                         // LC
        y(i) = 6.0 + 0.1 * len + effect * lc + a_eff[a] + s_eff[j] + 0.4 * rng.normal();
        art[i] = a;
        subj[i] = j;
      }
    }
  }
  return Dataset::from_arrays({"length", "LSTM", "TD", "LC"}, x, y, art, subj);
}

TEST_CASE("comparison matrix layout and significance") {
  const Dataset d = three_models(71, 0.15, false);
  const ComparisonMatrix m = comparison_matrix(d, {"length"}, {"LSTM", "TD", "LC"});
  const std::vector<std::string> expect = {"Baseline<LSTM", "Baseline<TD", "Baseline<LC",
                                           "LSTM<TD",       "LSTM<LC",     "TD<LSTM",
                                           "TD<LC",         "LC<LSTM",     "LC<TD"};
  REQUIRE(m.rows.size() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(m.rows[i].name == expect[i]);
  CHECK(m.fits.size() == 7u);
  CHECK(m.row("Baseline<LC").significant);
  CHECK(m.row("LSTM<LC").significant);
  CHECK(m.row("TD<LC").significant);
  CHECK_FALSE(m.row("LC<TD").significant);
  CHECK_FALSE(m.row("LC<LSTM").significant);
  CHECK(m.row("Baseline<LC").chi2 > m.row("Baseline<TD").chi2);
  for (const ComparisonRow& r : m.rows) CHECK(r.df == 1);

  const ComparisonMatrix par = comparison_matrix(d, {"length"}, {"LSTM", "TD", "LC"}, {},
                                                 kBonferroniAlpha, 3);
  for (std::size_t i = 0; i < m.rows.size(); ++i) CHECK(par.rows[i].chi2 == m.rows[i].chi2);

  std::ostringstream csv;
  write_comparison_csv(csv, m);
  CHECK(csv.str().rfind("comparison,chi2,df,p,significant\nBaseline<LSTM,", 0) == 0);
  CHECK(fit_report_json(m.fits.at("LC")).find("\"fixed_effects\"") != std::string::npos);
}

TEST_CASE("identical surprisal columns give no pairwise evidence") {
  const Dataset d = three_models(72, 0.15, true);
  const ComparisonMatrix m = comparison_matrix(d, {"length"}, {"LSTM", "TD", "LC"});
  for (std::size_t i = 3; i < m.rows.size(); ++i) {
    CHECK(m.rows[i].chi2 < 1e-6);
    CHECK_FALSE(m.rows[i].significant);
  }
}

TEST_CASE("baseline predictor screening") {
  const Dataset d = simulate(SimSpec{}, 81);
  const Selection s = baseline_predictor_selection(d, {"x1", "x2", "x3"});
  CHECK(s.retained == std::vector<std::string>{"x1", "x2"});
  CHECK(s.dropped == std::vector<std::string>{"x3"});
  CHECK(s.refit.predictors == s.retained);
  const Selection all = baseline_predictor_selection(d, {"x1", "x2"});
  CHECK(all.retained == std::vector<std::string>{"x1", "x2"});
  CHECK(all.dropped.empty());
}

std::vector<RtRow> rt_rows(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<RtRow> rows;
  for (int i = 0; i < n; ++i) {
    RtRow r;
    r.segment_id = "s" + std::to_string(i % 40);
    r.article = "a" + std::to_string((i % 40) / 10);
    r.subj = "p" + std::to_string(i / 40);
    r.rt = std::exp(5.5 + 0.2 * rng.normal());
    r.length = 1 + static_cast<double>(rng.index(8));
    r.prev_length = 1 + static_cast<double>(rng.index(8));
    r.freq = rng.normal();
    r.prev_freq = rng.normal();
    r.is_first = (i % 10) == 0;
    r.is_last = (i % 10) == 9;
    r.is_second_last = (i % 10) == 8;
    r.screenN = static_cast<double>((i % 40) / 20);
    r.lineN = static_cast<double>((i % 40) / 10);
    r.segmentN = static_cast<double>(i % 40);
    r.words = "w" + std::to_string(i % 7) + " w" + std::to_string(i % 3);
    rows.push_back(r);
  }
  return rows;
}

SurprisalColumn column_for(int segments, double scale, std::set<int> unk = {}) {
  SurprisalColumn c;
  for (int s = 0; s < segments; ++s) {
    c["s" + std::to_string(s)] = {scale * (1.0 + s % 5), unk.count(s) > 0};
  }
  return c;
}

TEST_CASE("prepare filters, counts and centers") {
  std::vector<RtRow> rows = rt_rows(400, 5);
  rows[3].main_text = false;
  rows[4].fixated = false;
  rows[5].rt = 0.0;
  rows[5].fixated = false;
  rows[100].rt = std::exp(5.5 + 10 * 0.2 * 10);  // far beyond 3 SD
  const std::map<std::string, SurprisalColumn> surp = {{"LC", column_for(40, 1.0, {7})}};
  const Dataset d = prepare(rows, surp);
  CHECK(d.counts.total == 400u);
  CHECK(d.counts.non_main_text == 1u);
  CHECK(d.counts.not_fixated == 2u);
  CHECK(d.counts.unk == 10u);  // segment s7 for each of 10 readers
  CHECK(d.counts.outliers == 1u);
  CHECK(d.counts.kept == 400u - 1 - 2 - 10 - 1);
  CHECK(d.rows() == d.counts.kept);
  for (const std::string& name : {"length", "freq", "segmentN", "LC"}) {
    CHECK(std::abs(d.columns.col(d.column(name)).mean()) < 1e-12);
  }
  const auto is_first = d.columns.col(d.column("is_first"));
  CHECK(((is_first.array() == 0.0) || (is_first.array() == 1.0)).all());
  CHECK(d.n_subj == 10);
  CHECK(d.n_article == 4);

  std::map<std::string, SurprisalColumn> missing = {{"LC", column_for(39, 1.0)}};
  CHECK_THROWS_AS(prepare(rows, missing), JoinFailure);

  PrepareOptions spill;
  spill.spillover = true;
  const Dataset ds = prepare(rows, surp, spill);
  CHECK(ds.column("LC_prev") >= 0);
}

TEST_CASE("outlier rule removes exactly the extreme row") {
  std::vector<RtRow> rows = rt_rows(400, 9);
  for (RtRow& r : rows) r.rt = std::exp(5.5 + 0.01 * (static_cast<int>(r.segmentN) % 3));
  rows[17].rt = std::exp(5.5 + 10.0 * 0.01 * 10);
  const Dataset d = prepare(rows, {{"LC", column_for(40, 1.0)}});
  CHECK(d.counts.outliers == 1u);
  CHECK(std::find(d.y.data(), d.y.data() + d.y.size(), std::log(rows[17].rt)) ==
        d.y.data() + d.y.size());
}

TEST_CASE("reading-time csv and frequency table") {
  std::vector<RtRow> rows = rt_rows(80, 2);
  std::ostringstream out;
  write_rt_csv(out, rows);
  std::istringstream in(out.str());
  const std::vector<RtRow> back = read_rt_csv(in);
  REQUIRE(back.size() == rows.size());
  CHECK(back[13].rt == rows[13].rt);
  CHECK(back[13].words == rows[13].words);
  CHECK(back[9].is_last == 1.0);

  std::istringstream bad("segment_id,article\nx,y\n");
  CHECK_THROWS_AS(read_rt_csv(bad), DataError);

  std::istringstream tsv("w0\t9\nw1\t99\nw2\t0\n");
  const FrequencyTable ft = read_frequency_tsv(tsv);
  fill_frequencies(rows, ft);
  // Segment 0 holds "w0 w0": log(10).
  CHECK(rows[0].freq == doctest::Approx(std::log(10.0)));
  CHECK(rows[0].prev_freq == 0.0);
  CHECK(rows[1].prev_freq == rows[0].freq);

  std::ostringstream st;
  write_surprisal_table(st, {{"s1", "x", 2.5, {2.5}, false}, {"s2", "y", 1.0, {1.0}, true}});
  std::istringstream sin(st.str());
  const SurprisalColumn col = read_surprisal_column(sin);
  CHECK(col.at("s1").surprisal == 2.5);
  CHECK(col.at("s2").unk);
}

}  // namespace
}  // namespace hiersurp
