#include "hiersurp/regress.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <boost/math/special_functions/gamma.hpp>
#include <json.hpp>

#include "hiersurp/csv.h"

namespace hiersurp {

namespace {

const std::vector<std::string> kBaseline = {"length",   "prev_length",    "freq",
                                            "prev_freq", "is_first",      "is_last",
                                            "is_second_last", "screenN", "lineN",
                                            "segmentN"};
const std::set<std::string> kBinary = {"is_first", "is_last", "is_second_last"};

double parse_number(const std::string& s, const std::string& column, std::size_t row) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("row " + std::to_string(row) + ": column '" + column +
                    "' is not a finite number: '" + s + "'");
  }
}

bool parse_flag(const std::string& s, const std::string& column, std::size_t row) {
  const double v = parse_number(s, column, row);
  if (v != 0.0 && v != 1.0) {
    throw DataError("row " + std::to_string(row) + ": column '" + column + "' must be 0 or 1");
  }
  return v == 1.0;
}

// Previous segment of the same article by display order, keyed by row.
std::vector<int> previous_rows(const std::vector<RtRow>& rows) {
  std::map<std::string, std::map<double, int>> order;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    order[rows[i].article].emplace(rows[i].segmentN, static_cast<int>(i));
  }
  std::vector<int> prev(rows.size(), -1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& m = order[rows[i].article];
    auto it = m.find(rows[i].segmentN);
    if (it != m.begin()) prev[i] = std::prev(it)->second;
  }
  return prev;
}

void center(Eigen::Ref<Eigen::VectorXd> v) {
  if (v.size() == 0) return;
  const double lo = v.minCoeff(), hi = v.maxCoeff();
  if (hi - lo <= 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)))) {
    // Constant columns become exactly zero rather than round-off noise.
    v.setZero();
    return;
  }
  // Two passes so the mean of the result is zero to round-off.
  v.array() -= v.mean();
  v.array() -= v.mean();
}

// ---- Profiled likelihood ----

struct Problem {
  const Dataset* data = nullptr;
  Eigen::MatrixXd x;  // n x p, intercept first
  bool use_article = false;
  bool use_subj = false;
  int qa = 0, qs = 0;
  Eigen::MatrixXd ztz;  // q x q
  Eigen::MatrixXd ztx;  // q x p
  Eigen::VectorXd zty;
  Eigen::MatrixXd xtx;
  Eigen::VectorXd xty;

  int q() const { return qa + qs; }
};

struct Evaluation {
  double deviance = 0.0;
  double r2 = 0.0;
  Eigen::VectorXd beta;
  Eigen::MatrixXd s_inv;  // (X' V^-1 X)^-1 up to sigma^2
};

// Intercept plus the requested columns, minus aliased ones.
Eigen::MatrixXd design(const Dataset& d, const std::vector<std::string>& predictors,
                       bool drop_aliased, std::vector<std::string>& terms,
                       std::vector<std::string>& dropped) {
  const Eigen::Index n = d.y.size();
  std::vector<Eigen::VectorXd> cols = {Eigen::VectorXd::Ones(n)};
  terms = {"(Intercept)"};
  // Incremental Cholesky of the retained Gram matrix.
  Eigen::MatrixXd l(1, 1);
  l(0, 0) = std::sqrt(static_cast<double>(n));
  for (const std::string& name : predictors) {
    const Eigen::VectorXd c = d.columns.col(d.column(name));
    const Eigen::Index k = static_cast<Eigen::Index>(cols.size());
    Eigen::VectorXd g(k);
    for (Eigen::Index j = 0; j < k; ++j) g(j) = cols[j].dot(c);
    const Eigen::VectorXd w = l.triangularView<Eigen::Lower>().solve(g);
    const double cc = c.squaredNorm();
    const double resid = cc - w.squaredNorm();
    if (cc == 0.0 || resid <= 1e-10 * cc) {
      if (!drop_aliased) throw Singular("column '" + name + "' is aliased");
      dropped.push_back(name);
      continue;
    }
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(k + 1, k + 1);
    next.topLeftCorner(k, k) = l;
    next.block(k, 0, 1, k) = w.transpose();
    next(k, k) = std::sqrt(resid);
    l = std::move(next);
    cols.push_back(c);
    terms.push_back(name);
  }
  if (n <= static_cast<Eigen::Index>(cols.size())) {
    throw Singular("only " + std::to_string(n) + " rows for " + std::to_string(cols.size()) +
                   " fixed effects");
  }
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = cols[j];
  return x;
}

Problem make_problem(const Dataset& d, Eigen::MatrixXd x, bool use_article, bool use_subj) {
  Problem p;
  p.data = &d;
  p.x = std::move(x);
  p.use_article = use_article;
  p.use_subj = use_subj;
  p.qa = use_article ? d.n_article : 0;
  p.qs = use_subj ? d.n_subj : 0;
  const int q = p.q();
  const Eigen::Index cols = p.x.cols();
  p.ztz = Eigen::MatrixXd::Zero(q, q);
  p.ztx = Eigen::MatrixXd::Zero(q, cols);
  p.zty = Eigen::VectorXd::Zero(q);
  for (Eigen::Index i = 0; i < d.y.size(); ++i) {
    const int a = p.use_article ? d.article[i] : -1;
    const int s = p.use_subj ? p.qa + d.subj[i] : -1;
    for (int g : {a, s}) {
      if (g < 0) continue;
      p.ztx.row(g) += p.x.row(i);
      p.zty(g) += d.y(i);
    }
    if (a >= 0) p.ztz(a, a) += 1.0;
    if (s >= 0) p.ztz(s, s) += 1.0;
    if (a >= 0 && s >= 0) {
      p.ztz(a, s) += 1.0;
      p.ztz(s, a) += 1.0;
    }
  }
  p.xtx = p.x.transpose() * p.x;
  p.xty = p.x.transpose() * d.y;
  return p;
}

Evaluation evaluate(const Problem& p, double ratio_article, double ratio_subj) {
  const Dataset& d = *p.data;
  const double n = static_cast<double>(d.y.size());
  const int q = p.q();
  Eigen::VectorXd lambda(q);
  lambda.head(p.qa).setConstant(std::sqrt(std::max(0.0, ratio_article)));
  lambda.tail(p.qs).setConstant(std::sqrt(std::max(0.0, ratio_subj)));

  Evaluation e;
  double logdet = 0.0;
  Eigen::VectorXd u;
  Eigen::MatrixXd s;
  Eigen::VectorXd rhs;
  if (q > 0) {
    Eigen::MatrixXd a = lambda.asDiagonal() * p.ztz * lambda.asDiagonal();
    a.diagonal().array() += 1.0;
    const Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) throw NumericalError("random-effect system not positive");
    logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const Eigen::MatrixXd b = lambda.asDiagonal() * p.ztx;
    const Eigen::VectorXd b1 = lambda.asDiagonal() * p.zty;
    const Eigen::MatrixXd ainv_b = llt.solve(b);
    const Eigen::VectorXd ainv_b1 = llt.solve(b1);
    s = p.xtx - b.transpose() * ainv_b;
    rhs = p.xty - b.transpose() * ainv_b1;
    const Eigen::LLT<Eigen::MatrixXd> sl(s);
    if (sl.info() != Eigen::Success) throw Singular("fixed-effect system is not positive definite");
    e.beta = sl.solve(rhs);
    e.s_inv = sl.solve(Eigen::MatrixXd::Identity(s.rows(), s.cols()));
    u = ainv_b1 - ainv_b * e.beta;
  } else {
    const Eigen::LLT<Eigen::MatrixXd> sl(p.xtx);
    if (sl.info() != Eigen::Success) throw Singular("fixed-effect system is not positive definite");
    e.beta = sl.solve(p.xty);
    e.s_inv = sl.solve(Eigen::MatrixXd::Identity(p.xtx.rows(), p.xtx.cols()));
  }
  // Penalized residual sum of squares, accumulated directly for accuracy.
  Eigen::VectorXd r = d.y - p.x * e.beta;
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    if (p.use_article) r(i) -= lambda(d.article[i]) * u(d.article[i]);
    if (p.use_subj) r(i) -= lambda(p.qa + d.subj[i]) * u(p.qa + d.subj[i]);
  }
  e.r2 = r.squaredNorm() + (q > 0 ? u.squaredNorm() : 0.0);
  if (!(e.r2 > 0.0)) throw NumericalError("residual sum of squares is zero");
  e.deviance = logdet + n * (1.0 + std::log(2.0 * std::numbers::pi * e.r2 / n));
  return e;
}

// ---- Nelder-Mead over log variance ratios ----

constexpr double kLogLo = -30.0;
constexpr double kLogHi = 15.0;

struct SimplexResult {
  std::vector<double> x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

template <typename F>
SimplexResult nelder_mead(F&& f, std::vector<double> x0, int max_iter, double tol) {
  const std::size_t d = x0.size();
  SimplexResult out;
  auto eval = [&](std::vector<double>& x) {
    for (double& v : x) v = std::clamp(v, kLogLo, kLogHi);
    ++out.evaluations;
    return f(x);
  };
  std::vector<std::vector<double>> pts(d + 1, x0);
  std::vector<double> fs(d + 1);
  for (std::size_t i = 0; i < d; ++i) pts[i + 1][i] += 1.0;
  for (std::size_t i = 0; i <= d; ++i) fs[i] = eval(pts[i]);
  std::vector<std::size_t> idx(d + 1);
  double checkpoint = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    for (std::size_t i = 0; i <= d; ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return fs[a] < fs[b];
    });
    const std::size_t best = idx.front(), worst = idx.back(), second = idx[d - 1];
    if (it % static_cast<int>(d + 1) == 0) {
      // One full cycle without meaningful progress and a flat simplex.
      if (checkpoint - fs[best] < tol && fs[worst] - fs[best] < tol) {
        out.converged = true;
        out.iterations = it;
        break;
      }
      checkpoint = fs[best];
    }
    std::vector<double> c(d, 0.0);
    for (std::size_t i = 0; i <= d; ++i) {
      if (i == worst) continue;
      for (std::size_t k = 0; k < d; ++k) c[k] += pts[i][k] / static_cast<double>(d);
    }
    auto along = [&](double t) {
      std::vector<double> x(d);
      for (std::size_t k = 0; k < d; ++k) x[k] = c[k] + t * (pts[worst][k] - c[k]);
      return x;
    };
    std::vector<double> xr = along(-1.0);
    const double fr = eval(xr);
    if (fr < fs[best]) {
      std::vector<double> xe = along(-2.0);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        fs[worst] = fe;
      } else {
        pts[worst] = xr;
        fs[worst] = fr;
      }
    } else if (fr < fs[second]) {
      pts[worst] = xr;
      fs[worst] = fr;
    } else {
      const bool outside = fr < fs[worst];
      std::vector<double> xc = along(outside ? -0.5 : 0.5);
      const double fc = eval(xc);
      if (fc < (outside ? fr : fs[worst])) {
        pts[worst] = xc;
        fs[worst] = fc;
      } else {
        for (std::size_t i = 0; i <= d; ++i) {
          if (i == best) continue;
          for (std::size_t k = 0; k < d; ++k) {
            pts[i][k] = pts[best][k] + 0.5 * (pts[i][k] - pts[best][k]);
          }
          fs[i] = eval(pts[i]);
        }
      }
    }
    out.iterations = it + 1;
  }
  const std::size_t b =
      static_cast<std::size_t>(std::min_element(fs.begin(), fs.end()) - fs.begin());
  out.x = pts[b];
  out.f = fs[b];
  return out;
}

}  // namespace

const std::vector<std::string>& baseline_predictors() { return kBaseline; }

// ---- Data ----

std::vector<RtRow> read_rt_csv(std::istream& in) {
  const CsvTable t = read_csv(in);
  const int c_seg = t.require("segment_id"), c_art = t.require("article"),
            c_subj = t.require("subj"), c_rt = t.require("rt");
  std::map<std::string, int> num;
  for (const std::string& name : kBaseline) {
    const bool optional = name == "freq" || name == "prev_freq";
    const int c = optional ? t.column(name) : t.require(name);
    num[name] = c;
  }
  const int c_words = t.column("words");
  if ((num["freq"] < 0 || num["prev_freq"] < 0) && c_words < 0) {
    throw DataError("reading-time table needs freq/prev_freq columns or a words column");
  }
  const int c_main = t.column("main_text"), c_fix = t.column("fixated");
  std::vector<RtRow> rows;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    const std::size_t line = r + 2;
    RtRow row;
    row.segment_id = f[c_seg];
    row.article = f[c_art];
    row.subj = f[c_subj];
    if (row.segment_id.empty() || row.article.empty() || row.subj.empty()) {
      throw DataError("row " + std::to_string(line) + ": empty segment, article or subject id");
    }
    row.rt = parse_number(f[c_rt], "rt", line);
    auto get = [&](const std::string& name) {
      return num[name] < 0 ? 0.0 : parse_number(f[num[name]], name, line);
    };
    row.length = get("length");
    row.prev_length = get("prev_length");
    row.freq = get("freq");
    row.prev_freq = get("prev_freq");
    row.is_first = parse_flag(f[num["is_first"]], "is_first", line);
    row.is_last = parse_flag(f[num["is_last"]], "is_last", line);
    row.is_second_last = parse_flag(f[num["is_second_last"]], "is_second_last", line);
    row.screenN = get("screenN");
    row.lineN = get("lineN");
    row.segmentN = get("segmentN");
    if (c_main >= 0) row.main_text = parse_flag(f[c_main], "main_text", line);
    if (c_fix >= 0) row.fixated = parse_flag(f[c_fix], "fixated", line);
    if (c_words >= 0) row.words = f[c_words];
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_rt_csv(std::ostream& out, const std::vector<RtRow>& rows) {
  std::vector<std::string> header = {"segment_id", "article", "subj", "rt"};
  header.insert(header.end(), kBaseline.begin(), kBaseline.end());
  for (const char* extra : {"main_text", "fixated", "words"}) header.push_back(extra);
  write_csv_row(out, header);
  for (const RtRow& r : rows) {
    write_csv_row(out, {r.segment_id, r.article, r.subj, fmt(r.rt), fmt(r.length),
                        fmt(r.prev_length), fmt(r.freq), fmt(r.prev_freq), fmt(r.is_first),
                        fmt(r.is_last), fmt(r.is_second_last), fmt(r.screenN), fmt(r.lineN),
                        fmt(r.segmentN), r.main_text ? "1" : "0", r.fixated ? "1" : "0",
                        r.words});
  }
}

FrequencyTable read_frequency_tsv(std::istream& in) {
  FrequencyTable t;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError("frequency table line " + std::to_string(n) + " lacks a tab");
    }
    const double c = parse_number(line.substr(tab + 1), "count", n);
    if (c < 0) throw DataError("negative count on frequency line " + std::to_string(n));
    t[line.substr(0, tab)] += c;
  }
  return t;
}

void fill_frequencies(std::vector<RtRow>& rows, const FrequencyTable& table) {
  for (RtRow& r : rows) {
    std::istringstream words(r.words);
    std::string w;
    double sum = 0.0;
    int count = 0;
    while (words >> w) {
      auto it = table.find(w);
      sum += std::log((it == table.end() ? 0.0 : it->second) + 1.0);
      ++count;
    }
    r.freq = count ? sum / count : 0.0;
  }
  const std::vector<int> prev = previous_rows(rows);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].prev_freq = prev[i] < 0 ? 0.0 : rows[prev[i]].freq;
  }
}

SurprisalColumn surprisal_column(const std::vector<SurprisalRow>& rows) {
  SurprisalColumn c;
  for (const SurprisalRow& r : rows) {
    if (!c.emplace(r.segment_id, SurprisalEntry{r.surprisal, r.unk}).second) {
      throw DataError("duplicate surprisal segment '" + r.segment_id + "'");
    }
  }
  return c;
}

SurprisalColumn read_surprisal_column(std::istream& in) {
  const CsvTable t = read_csv(in);
  const int c_id = t.require("segment_id"), c_s = t.require("surprisal");
  const int c_unk = t.column("unk");
  SurprisalColumn c;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    SurprisalEntry e{parse_number(f[c_s], "surprisal", r + 2),
                     c_unk >= 0 && parse_flag(f[c_unk], "unk", r + 2)};
    if (!c.emplace(f[c_id], e).second) {
      throw DataError("duplicate surprisal segment '" + f[c_id] + "'");
    }
  }
  return c;
}

int Dataset::column(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  throw UsageError("unknown predictor '" + name + "'");
}

Dataset Dataset::from_arrays(std::vector<std::string> names, Eigen::MatrixXd columns,
                             Eigen::VectorXd y, std::vector<int> article,
                             std::vector<int> subj) {
  const std::size_t n = static_cast<std::size_t>(y.size());
  if (static_cast<std::size_t>(columns.rows()) != n || article.size() != n || subj.size() != n ||
      static_cast<std::size_t>(columns.cols()) != names.size()) {
    throw UsageError("dataset arrays disagree in size");
  }
  Dataset d;
  auto densify = [](std::vector<int>& g) {
    std::map<int, int> ids;
    for (int& v : g) v = ids.emplace(v, static_cast<int>(ids.size())).first->second;
    return static_cast<int>(ids.size());
  };
  d.n_article = densify(article);
  d.n_subj = densify(subj);
  d.names = std::move(names);
  d.columns = std::move(columns);
  d.y = std::move(y);
  d.article = std::move(article);
  d.subj = std::move(subj);
  d.counts.total = d.counts.kept = n;
  return d;
}

Dataset prepare(const std::vector<RtRow>& rows,
                const std::map<std::string, SurprisalColumn>& surprisals,
                const PrepareOptions& options) {
  PrepareCounts counts;
  counts.total = rows.size();
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const RtRow& r = rows[i];
    if (!r.main_text) {
      ++counts.non_main_text;
      continue;
    }
    if (!r.fixated) {
      ++counts.not_fixated;
      continue;
    }
    bool unk = false;
    for (const auto& [name, col] : surprisals) {
      auto it = col.find(r.segment_id);
      if (it == col.end()) throw JoinFailure(r.segment_id);
      unk = unk || it->second.unk;
    }
    if (unk) {
      ++counts.unk;
      continue;
    }
    if (!(r.rt > 0.0)) {
      throw DataError("segment '" + r.segment_id + "' has a fixated reading time <= 0");
    }
    kept.push_back(i);
  }

  // Outlier rule on the surviving rows.
  if (kept.size() > 1 && options.outlier_sd > 0.0) {
    std::vector<double> v;
    for (std::size_t i : kept) v.push_back(options.outlier_on_log ? std::log(rows[i].rt) : rows[i].rt);
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(v.size() - 1));
    std::vector<std::size_t> inliers;
    for (std::size_t k = 0; k < kept.size(); ++k) {
      if (std::abs(v[k] - mean) > options.outlier_sd * sd) {
        ++counts.outliers;
      } else {
        inliers.push_back(kept[k]);
      }
    }
    kept = std::move(inliers);
  }
  counts.kept = kept.size();
  if (kept.empty()) throw DataError("no reading-time rows survive filtering");

  std::vector<std::string> names = kBaseline;
  for (const auto& [name, col] : surprisals) {
    names.push_back(name);
    if (options.spillover) names.push_back(name + "_prev");
  }
  const std::vector<int> prev = options.spillover ? previous_rows(rows) : std::vector<int>{};
  const Eigen::Index n = static_cast<Eigen::Index>(kept.size());
  Eigen::MatrixXd cols(n, static_cast<Eigen::Index>(names.size()));
  Eigen::VectorXd y(n);
  std::vector<int> article(kept.size()), subj(kept.size());
  std::map<std::string, int> article_ids, subj_ids;
  Dataset d;
  for (Eigen::Index k = 0; k < n; ++k) {
    const std::size_t i = kept[static_cast<std::size_t>(k)];
    const RtRow& r = rows[i];
    const double base[] = {r.length,   r.prev_length, r.freq,    r.prev_freq, r.is_first,
                           r.is_last,  r.is_second_last, r.screenN, r.lineN,   r.segmentN};
    Eigen::Index c = 0;
    for (double v : base) cols(k, c++) = v;
    for (const auto& [name, col] : surprisals) {
      cols(k, c++) = col.at(r.segment_id).surprisal;
      if (options.spillover) {
        double s = 0.0;
        if (prev[i] >= 0) {
          auto it = col.find(rows[prev[i]].segment_id);
          if (it == col.end()) throw JoinFailure(rows[prev[i]].segment_id);
          s = it->second.surprisal;
        }
        cols(k, c++) = s;
      }
    }
    y(k) = std::log(r.rt);
    article[k] = article_ids.emplace(r.article, static_cast<int>(article_ids.size())).first->second;
    subj[k] = subj_ids.emplace(r.subj, static_cast<int>(subj_ids.size())).first->second;
    d.segment_ids.push_back(r.segment_id);
  }
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (!kBinary.count(names[c])) center(cols.col(static_cast<Eigen::Index>(c)));
  }
  d.names = std::move(names);
  d.columns = std::move(cols);
  d.y = std::move(y);
  d.article = std::move(article);
  d.subj = std::move(subj);
  d.n_article = static_cast<int>(article_ids.size());
  d.n_subj = static_cast<int>(subj_ids.size());
  d.counts = counts;
  return d;
}

// ---- Fitting ----

double MixedModelFit::wald_p(std::size_t term) const {
  return std::erfc(std::abs(z(term)) / std::numbers::sqrt2);
}

double profiled_deviance(const Dataset& data, const std::vector<std::string>& predictors,
                         double ratio_article, double ratio_subj) {
  std::vector<std::string> terms, dropped;
  Problem p = make_problem(data, design(data, predictors, true, terms, dropped), true, true);
  return evaluate(p, ratio_article, ratio_subj).deviance;
}

double ols_deviance(const Dataset& data, const std::vector<std::string>& predictors) {
  std::vector<std::string> terms, dropped;
  const Eigen::MatrixXd x = design(data, predictors, true, terms, dropped);
  const Eigen::VectorXd beta = x.householderQr().solve(data.y);
  const double rss = (data.y - x * beta).squaredNorm();
  const double n = static_cast<double>(data.y.size());
  return n * (1.0 + std::log(2.0 * std::numbers::pi * rss / n));
}

MixedModelFit fit_lmm(const Dataset& data, const std::vector<std::string>& predictors,
                      const FitOptions& options) {
  MixedModelFit fit;
  fit.predictors = predictors;
  fit.n = data.rows();
  Eigen::MatrixXd x = design(data, predictors, options.drop_aliased, fit.terms, fit.dropped);
  for (const std::string& name : fit.dropped) {
    fit.warnings.push_back("dropped aliased predictor '" + name + "'");
  }
  fit.article_effect = data.n_article >= 2;
  fit.subj_effect = data.n_subj >= 2;
  if (!fit.article_effect) fit.warnings.push_back("article has < 2 levels; intercept dropped");
  if (!fit.subj_effect) fit.warnings.push_back("subj has < 2 levels; intercept dropped");
  const Problem p = make_problem(data, std::move(x), fit.article_effect, fit.subj_effect);

  // Free coordinates in log-ratio space.
  std::vector<int> free;
  if (fit.article_effect) free.push_back(0);
  if (fit.subj_effect) free.push_back(1);
  auto ratios = [&](const std::vector<double>& t, std::array<bool, 2> zero) {
    std::array<double, 2> r = {0.0, 0.0};
    std::size_t k = 0;
    for (int f : free) {
      const double v = t[k++];
      r[f] = zero[f] ? 0.0 : std::exp(v);
    }
    return r;
  };

  std::array<double, 2> best_ratio = {0.0, 0.0};
  double best = evaluate(p, 0.0, 0.0).deviance;
  int evals = 1;
  if (!free.empty()) {
    const std::array<std::array<double, 2>, 5> starts = {
        {{0.0, 0.0}, {-2.0, -2.0}, {2.0, 2.0}, {-2.0, 2.0}, {2.0, -2.0}}};
    // Interior optimum over the free coordinates, best over the starts.
    auto run = [&](const std::vector<int>& coords, std::array<double, 2> start,
                   std::array<bool, 2> zero) {
      auto f = [&](const std::vector<double>& t) {
        std::vector<double> full;
        for (int c : free) {
          auto it = std::find(coords.begin(), coords.end(), c);
          full.push_back(it == coords.end() ? kLogLo : t[it - coords.begin()]);
        }
        const auto r = ratios(full, zero);
        return evaluate(p, r[0], r[1]).deviance;
      };
      std::vector<double> x0;
      for (int c : coords) x0.push_back(start[c]);
      return nelder_mead(f, x0, options.max_iterations, options.tolerance);
    };
    SimplexResult interior;
    interior.f = std::numeric_limits<double>::infinity();
    const int n_starts = std::clamp(options.starts, 1, 5);
    bool any_converged = false;
    for (int s = 0; s < n_starts; ++s) {
      SimplexResult r = run(free, starts[s], {false, false});
      fit.iterations += r.iterations;
      evals += r.evaluations;
      if (r.converged) any_converged = true;
      if (r.f < interior.f) interior = r;
    }
    if (!any_converged) throw NonConvergence(fit.iterations, interior.f);
    fit.converged = true;
    std::vector<double> t_full;
    for (std::size_t k = 0; k < free.size(); ++k) t_full.push_back(interior.x[k]);
    if (interior.f < best) {
      best = interior.f;
      best_ratio = ratios(t_full, {false, false});
    }
    // Boundary polish: each variance pinned at zero with the other optimized.
    if (free.size() == 2) {
      for (int pinned : {0, 1}) {
        const int other = 1 - pinned;
        std::array<double, 2> start = {interior.x[0], interior.x[1]};
        std::array<bool, 2> zero = {pinned == 0, pinned == 1};
        SimplexResult r = run({other}, start, zero);
        fit.iterations += r.iterations;
        evals += r.evaluations;
        if (r.f <= best) {
          best = r.f;
          best_ratio = {0.0, 0.0};
          best_ratio[other] = std::exp(std::clamp(r.x[0], kLogLo, kLogHi));
        }
      }
    }
  } else {
    fit.converged = true;
  }
  // The all-zero boundary was evaluated first; ties keep the simpler model.
  const Evaluation e = evaluate(p, best_ratio[0], best_ratio[1]);
  fit.evaluations = evals + 1;
  fit.deviance = e.deviance;
  fit.beta = e.beta;
  fit.sigma2 = e.r2 / static_cast<double>(data.rows());
  fit.var_article = best_ratio[0] * fit.sigma2;
  fit.var_subj = best_ratio[1] * fit.sigma2;
  fit.se = (fit.sigma2 * e.s_inv.diagonal()).array().sqrt();
  return fit;
}

DeltaDeviance delta_deviance(const MixedModelFit& baseline, const MixedModelFit& augmented,
                             double tolerance) {
  if (baseline.n != augmented.n) throw NotNested("fits use different rows");
  if (baseline.article_effect != augmented.article_effect ||
      baseline.subj_effect != augmented.subj_effect) {
    throw NotNested("random-effect structures differ");
  }
  for (const std::string& p : baseline.predictors) {
    if (std::find(augmented.predictors.begin(), augmented.predictors.end(), p) ==
        augmented.predictors.end()) {
      throw NotNested("predictor '" + p + "' missing from the larger model");
    }
  }
  DeltaDeviance d;
  d.df = static_cast<int>(augmented.rank()) - static_cast<int>(baseline.rank());
  d.value = baseline.deviance - augmented.deviance;
  if (d.value < 0.0) {
    d.clamped = true;
    d.beyond_tolerance = d.value < -tolerance;
    d.value = 0.0;
  }
  return d;
}

double chi_square_test(double delta, int df) {
  if (df < 1 || !(delta > 0.0)) return 1.0;
  return boost::math::gamma_q(df / 2.0, delta / 2.0);
}

const ComparisonRow& ComparisonMatrix::row(const std::string& name) const {
  for (const ComparisonRow& r : rows) {
    if (r.name == name) return r;
  }
  throw UsageError("no comparison named '" + name + "'");
}

ComparisonMatrix comparison_matrix(const Dataset& data, const std::vector<std::string>& base,
                                   const std::vector<std::string>& models,
                                   const FitOptions& options, double alpha, int threads) {
  // Every fit needed by the rows, keyed by its model set.
  std::vector<std::pair<std::string, std::vector<std::string>>> jobs = {{"baseline", base}};
  auto with = [&](std::vector<std::string> extra) {
    std::vector<std::string> p = base;
    p.insert(p.end(), extra.begin(), extra.end());
    return p;
  };
  for (const std::string& m : models) jobs.push_back({m, with({m})});
  for (std::size_t a = 0; a < models.size(); ++a) {
    for (std::size_t b = a + 1; b < models.size(); ++b) {
      jobs.push_back({models[a] + "+" + models[b], with({models[a], models[b]})});
    }
  }
  std::vector<MixedModelFit> fits(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < jobs.size(); i += step) {
      try {
        fits[i] = fit_lmm(data, jobs[i].second, options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t t = static_cast<std::size_t>(std::max(1, threads));
  if (t == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < t; ++k) pool.emplace_back(work, k, t);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  ComparisonMatrix m;
  for (std::size_t i = 0; i < jobs.size(); ++i) m.fits[jobs[i].first] = fits[i];

  auto add = [&](const std::string& label_small, const std::string& small,
                 const std::string& label_large, const std::string& large) {
    const DeltaDeviance d = delta_deviance(m.fits.at(small), m.fits.at(large));
    ComparisonRow r;
    r.name = label_small + "<" + label_large;
    r.smaller = small;
    r.larger = large;
    r.chi2 = d.value;
    r.df = d.df;
    r.p = chi_square_test(d.value, d.df);
    r.significant = r.p < alpha;
    r.clamped = d.clamped;
    m.rows.push_back(r);
  };
  for (const std::string& mname : models) add("Baseline", "baseline", mname, mname);
  for (std::size_t a = 0; a < models.size(); ++a) {
    for (std::size_t b = 0; b < models.size(); ++b) {
      if (a == b) continue;
      const std::string pair = a < b ? models[a] + "+" + models[b] : models[b] + "+" + models[a];
      add(models[a], models[a], models[b], pair);
    }
  }
  return m;
}

void write_comparison_csv(std::ostream& out, const ComparisonMatrix& m) {
  write_csv_row(out, {"comparison", "chi2", "df", "p", "significant"});
  for (const ComparisonRow& r : m.rows) {
    write_csv_row(out, {r.name, fmt(r.chi2), std::to_string(r.df), fmt(r.p),
                        r.significant ? "1" : "0"});
  }
}

std::string fit_report_json(const MixedModelFit& fit) {
  nlohmann::json j;
  j["n"] = fit.n;
  j["deviance"] = fit.deviance;
  j["log_likelihood"] = -fit.deviance / 2.0;
  j["sigma2"] = fit.sigma2;
  j["var_article"] = fit.var_article;
  j["var_subj"] = fit.var_subj;
  j["article_effect"] = fit.article_effect;
  j["subj_effect"] = fit.subj_effect;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["evaluations"] = fit.evaluations;
  j["dropped"] = fit.dropped;
  j["warnings"] = fit.warnings;
  nlohmann::json terms = nlohmann::json::array();
  for (std::size_t i = 0; i < fit.terms.size(); ++i) {
    terms.push_back({{"term", fit.terms[i]},
                     {"estimate", fit.beta(static_cast<Eigen::Index>(i))},
                     {"se", fit.se(static_cast<Eigen::Index>(i))},
                     {"z", fit.z(i)},
                     {"p", fit.wald_p(i)}});
  }
  j["fixed_effects"] = terms;
  return j.dump(2);
}

Selection baseline_predictor_selection(const Dataset& data,
                                       const std::vector<std::string>& predictors,
                                       const FitOptions& options, double alpha) {
  Selection s;
  s.full = fit_lmm(data, predictors, options);
  for (const std::string& name : predictors) {
    auto it = std::find(s.full.terms.begin(), s.full.terms.end(), name);
    if (it == s.full.terms.end()) {
      s.dropped.push_back(name);  // aliased
      continue;
    }
    const std::size_t k = static_cast<std::size_t>(it - s.full.terms.begin());
    if (s.full.wald_p(k) > alpha) {
      s.dropped.push_back(name);
    } else {
      s.retained.push_back(name);
    }
  }
  s.refit = s.dropped.empty() ? s.full : fit_lmm(data, s.retained, options);
  return s;
}

}  // namespace hiersurp
