#ifndef HIERSURP_EVAL_H_
#define HIERSURP_EVAL_H_

#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hiersurp/common.h"
#include "hiersurp/treebank.h"

namespace hiersurp {

class SegmentationMismatch : public DataError {
 public:
  SegmentationMismatch(std::size_t subwords, std::size_t segmented)
      : DataError("segmentation covers " + std::to_string(segmented) + " subwords but " +
                  std::to_string(subwords) + " were scored") {}
};

class YieldMismatch : public DataError {
 public:
  YieldMismatch() : DataError("gold and predicted trees have different yields") {}
};

// One reading-time region: an id, its surface string and how many subwords
// it was split into.
struct Segment {
  std::string id;
  std::string phrase;
  std::size_t subwords = 0;
};

struct SurprisalRow {
  std::string segment_id;
  std::string phrase;
  double surprisal = 0.0;  // nats, summed over the region's subwords
  std::vector<double> subword_surprisals;
  bool unk = false;
};

// Sums subword surprisals left to right within each segment. `unk` marks
// unknown subwords and may be empty. Throws SegmentationMismatch.
std::vector<SurprisalRow> phrasal_surprisal(std::span<const double> surprisals,
                                            std::span<const Segment> segments,
                                            std::span<const char> unk = {});

void write_surprisal_table(std::ostream& out, const std::vector<SurprisalRow>& rows);

struct LabeledSpan {
  std::string label;
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive

  friend auto operator<=>(const LabeledSpan&, const LabeledSpan&) = default;
};

struct F1Options {
  // Terminals dropped before indexing spans (e.g. punctuation).
  std::set<std::string> ignored_terminals;
};

// Spans of every internal node covering at least one kept terminal.
std::vector<LabeledSpan> labeled_spans(const Tree& tree, const F1Options& options = {});

struct F1Report {
  std::size_t matched = 0;
  std::size_t gold = 0;
  std::size_t predicted = 0;

  double precision() const;
  double recall() const;
  double f1() const;
  F1Report& operator+=(const F1Report& other);
};

// Throws YieldMismatch.
F1Report labeled_f1(const Tree& gold, const Tree& predicted, const F1Options& options = {});

struct CorpusF1 {
  std::vector<F1Report> sentences;
  F1Report pooled;

  void add(const F1Report& r);
  std::string to_json() const;
};

}  // namespace hiersurp

#endif  // HIERSURP_EVAL_H_
