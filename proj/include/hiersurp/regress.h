#ifndef HIERSURP_REGRESS_H_
#define HIERSURP_REGRESS_H_

#include <iosfwd>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "hiersurp/common.h"
#include "hiersurp/eval.h"

namespace hiersurp {

class JoinFailure : public DataError {
 public:
  explicit JoinFailure(const std::string& segment)
      : DataError("segment '" + segment + "' has no surprisal entry"), segment_(segment) {}
  const std::string& segment() const { return segment_; }

 private:
  std::string segment_;
};

class Singular : public NumericalError {
 public:
  explicit Singular(const std::string& what)
      : NumericalError("singular fixed-effect design: " + what) {}
};

class NonConvergence : public NumericalError {
 public:
  NonConvergence(int iterations, double best)
      : NumericalError("optimizer did not converge after " + std::to_string(iterations) +
                       " iterations (best deviance " + fmt(best) + ")"),
        iterations_(iterations), best_(best) {}
  int iterations() const { return iterations_; }
  double best_deviance() const { return best_; }

 private:
  int iterations_;
  double best_;
};

class NotNested : public DataError {
 public:
  explicit NotNested(const std::string& what) : DataError("models are not nested: " + what) {}
};

// ---- Reading-time data ----

// One first-pass reading-time observation. Numeric predictors follow the
// factor inventory used in the baseline model.
struct RtRow {
  std::string segment_id;
  std::string article;
  std::string subj;
  double rt = 0.0;  // milliseconds
  double length = 0.0;
  double prev_length = 0.0;
  double freq = 0.0;
  double prev_freq = 0.0;
  double is_first = 0.0;
  double is_last = 0.0;
  double is_second_last = 0.0;
  double screenN = 0.0;
  double lineN = 0.0;
  double segmentN = 0.0;
  bool main_text = true;
  bool fixated = true;
  std::string words;  // space-separated words, used for frequency lookup
};

// Baseline predictor names in model order.
const std::vector<std::string>& baseline_predictors();

// Required columns: segment_id, article, subj, rt, length, prev_length,
// is_first, is_last, is_second_last, screenN, lineN, segmentN. Optional:
// freq, prev_freq (else `words` is required and frequencies are filled in
// later), main_text, fixated (default 1).
std::vector<RtRow> read_rt_csv(std::istream& in);
void write_rt_csv(std::ostream& out, const std::vector<RtRow>& rows);

// Token -> count table read from "token<TAB>count" lines.
using FrequencyTable = std::unordered_map<std::string, double>;
FrequencyTable read_frequency_tsv(std::istream& in);

// freq = mean log(count + 1) over the segment's words (log of the geometric
// mean of add-one counts); prev_freq comes from the previous segment of the
// same article by segmentN (0 for the first segment).
void fill_frequencies(std::vector<RtRow>& rows, const FrequencyTable& table);

struct SurprisalEntry {
  double surprisal = 0.0;
  bool unk = false;
};
using SurprisalColumn = std::unordered_map<std::string, SurprisalEntry>;

// Reads the table written by write_surprisal_table.
SurprisalColumn read_surprisal_column(std::istream& in);
SurprisalColumn surprisal_column(const std::vector<SurprisalRow>& rows);

struct PrepareOptions {
  double outlier_sd = 3.0;
  // Outliers on log RT (default) or raw RT.
  bool outlier_on_log = true;
  // Adds "<name>_prev": surprisal of the previous segment in the article.
  bool spillover = false;
};

struct PrepareCounts {
  std::size_t total = 0;
  std::size_t non_main_text = 0;
  std::size_t not_fixated = 0;
  std::size_t unk = 0;
  std::size_t outliers = 0;
  std::size_t kept = 0;
};

// Analysis-ready design. Numeric predictors and surprisals are centered on
// the kept rows; the binary factors stay 0/1.
struct Dataset {
  std::vector<std::string> names;
  Eigen::MatrixXd columns;  // n x names.size()
  Eigen::VectorXd y;        // log RT
  std::vector<int> article;
  std::vector<int> subj;
  int n_article = 0;
  int n_subj = 0;
  std::vector<std::string> segment_ids;
  PrepareCounts counts;

  std::size_t rows() const { return static_cast<std::size_t>(y.size()); }
  int column(const std::string& name) const;  // throws UsageError

  // Builds a dataset from raw arrays; groups are dense ids from 0.
  static Dataset from_arrays(std::vector<std::string> names, Eigen::MatrixXd columns,
                             Eigen::VectorXd y, std::vector<int> article,
                             std::vector<int> subj);
};

// Filters (main text, fixated, unk-free in every surprisal column), then the
// outlier rule, then centering. Throws JoinFailure.
Dataset prepare(const std::vector<RtRow>& rows,
                const std::map<std::string, SurprisalColumn>& surprisals,
                const PrepareOptions& options = {});

// ---- Mixed-effects fit ----

struct FitOptions {
  int starts = 5;
  int max_iterations = 2000;
  double tolerance = 1e-8;
  // Aliased fixed-effect columns are dropped (with a warning) instead of
  // raising Singular.
  bool drop_aliased = true;
};

struct MixedModelFit {
  std::vector<std::string> predictors;  // as requested
  std::vector<std::string> terms;       // "(Intercept)" then retained predictors
  std::vector<std::string> dropped;     // aliased predictors
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  double sigma2 = 0.0;
  double var_article = 0.0;
  double var_subj = 0.0;
  bool article_effect = true;
  bool subj_effect = true;
  double deviance = 0.0;
  std::size_t n = 0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::vector<std::string> warnings;

  std::size_t rank() const { return terms.size(); }
  double z(std::size_t term) const { return beta(term) / se(term); }
  double wald_p(std::size_t term) const;
};

// ML fit of log RT ~ predictors + (1|article) + (1|subj) with the fixed
// effects and residual variance profiled out. Throws Singular and
// NonConvergence.
MixedModelFit fit_lmm(const Dataset& data, const std::vector<std::string>& predictors,
                      const FitOptions& options = {});

// Profiled ML deviance at given variance ratios (article, subj); exposed for
// testing.
double profiled_deviance(const Dataset& data, const std::vector<std::string>& predictors,
                         double ratio_article, double ratio_subj);

// Deviance of ordinary least squares on the same fixed effects.
double ols_deviance(const Dataset& data, const std::vector<std::string>& predictors);

struct DeltaDeviance {
  double value = 0.0;
  int df = 0;
  bool clamped = false;  // negative optimizer noise set to zero
  // The negative value exceeded the tolerance: the larger fit is suspect.
  bool beyond_tolerance = false;
};

// D_baseline - D_augmented. Throws NotNested.
DeltaDeviance delta_deviance(const MixedModelFit& baseline, const MixedModelFit& augmented,
                             double tolerance = 1e-4);

// Upper tail of the chi-square distribution.
double chi_square_test(double delta, int df);

struct ComparisonRow {
  std::string name;  // "A<B"
  std::string smaller;
  std::string larger;
  double chi2 = 0.0;
  int df = 0;
  double p = 1.0;
  bool significant = false;
  bool clamped = false;
};

inline constexpr double kBonferroniAlpha = 0.05 / 9.0;

struct ComparisonMatrix {
  std::vector<ComparisonRow> rows;
  // Keyed by the joined predictor set ("baseline", "LSTM", "TD+LC", ...).
  std::map<std::string, MixedModelFit> fits;

  const ComparisonRow& row(const std::string& name) const;
};

// Rows Baseline<M for every model M, then M<N for every ordered pair, where
// "A<B" compares the fit with A's surprisal against the fit with both.
// Independent fits run on up to `threads` threads.
ComparisonMatrix comparison_matrix(const Dataset& data, const std::vector<std::string>& base,
                                   const std::vector<std::string>& models,
                                   const FitOptions& options = {}, double alpha = kBonferroniAlpha,
                                   int threads = 1);

void write_comparison_csv(std::ostream& out, const ComparisonMatrix& m);
std::string fit_report_json(const MixedModelFit& fit);

struct Selection {
  std::vector<std::string> retained;
  std::vector<std::string> dropped;
  MixedModelFit full;
  MixedModelFit refit;
};

// Drops predictors whose Wald p exceeds `alpha` in the full fit, then
// refits once.
Selection baseline_predictor_selection(const Dataset& data,
                                       const std::vector<std::string>& predictors,
                                       const FitOptions& options = {}, double alpha = 0.05);

}  // namespace hiersurp

#endif  // HIERSURP_REGRESS_H_
