#include "hiersurp/eval.h"

#include <algorithm>
#include <ostream>

#include <json.hpp>

#include "hiersurp/csv.h"

namespace hiersurp {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

// Returns the number of kept terminals under `t` starting at `pos`.
std::size_t collect(const Tree& t, std::size_t pos, const F1Options& opt,
                    std::vector<LabeledSpan>& out) {
  if (t.is_terminal()) return opt.ignored_terminals.count(t.label) ? 0 : 1;
  std::size_t n = 0;
  for (const Tree& c : t.children) n += collect(c, pos + n, opt, out);
  if (n > 0) out.push_back({t.label, pos, pos + n});
  return n;
}

std::vector<std::string> kept_yield(const Tree& t, const F1Options& opt) {
  std::vector<std::string> y = yield_terminals(t);
  std::erase_if(y, [&](const std::string& w) { return opt.ignored_terminals.count(w) > 0; });
  return y;
}

}  // namespace

std::vector<SurprisalRow> phrasal_surprisal(std::span<const double> surprisals,
                                            std::span<const Segment> segments,
                                            std::span<const char> unk) {
  std::size_t total = 0;
  for (const Segment& s : segments) total += s.subwords;
  if (total != surprisals.size()) throw SegmentationMismatch(surprisals.size(), total);
  if (!unk.empty() && unk.size() != surprisals.size()) {
    throw SegmentationMismatch(unk.size(), total);
  }
  std::vector<SurprisalRow> rows;
  std::size_t pos = 0;
  for (const Segment& s : segments) {
    SurprisalRow r;
    r.segment_id = s.id;
    r.phrase = s.phrase;
    for (std::size_t i = 0; i < s.subwords; ++i, ++pos) {
      r.surprisal += surprisals[pos];
      r.subword_surprisals.push_back(surprisals[pos]);
      if (!unk.empty() && unk[pos]) r.unk = true;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_surprisal_table(std::ostream& out, const std::vector<SurprisalRow>& rows) {
  out << "segment_id,phrase,surprisal,n_subwords,unk\n";
  for (const SurprisalRow& r : rows) {
    out << csv_escape(r.segment_id) << ',' << csv_escape(r.phrase) << ',' << fmt(r.surprisal)
        << ',' << r.subword_surprisals.size() << ',' << (r.unk ? 1 : 0) << '\n';
  }
}

std::vector<LabeledSpan> labeled_spans(const Tree& tree, const F1Options& options) {
  std::vector<LabeledSpan> out;
  collect(tree, 0, options, out);
  return out;
}

double F1Report::precision() const { return ratio(matched, predicted); }
double F1Report::recall() const { return ratio(matched, gold); }

double F1Report::f1() const {
  const double p = precision(), r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

F1Report& F1Report::operator+=(const F1Report& o) {
  matched += o.matched;
  gold += o.gold;
  predicted += o.predicted;
  return *this;
}

F1Report labeled_f1(const Tree& gold, const Tree& predicted, const F1Options& options) {
  if (kept_yield(gold, options) != kept_yield(predicted, options)) throw YieldMismatch();
  std::vector<LabeledSpan> g = labeled_spans(gold, options);
  std::vector<LabeledSpan> p = labeled_spans(predicted, options);
  std::sort(g.begin(), g.end());
  std::sort(p.begin(), p.end());
  std::vector<LabeledSpan> common;
  std::set_intersection(g.begin(), g.end(), p.begin(), p.end(), std::back_inserter(common));
  return {common.size(), g.size(), p.size()};
}

void CorpusF1::add(const F1Report& r) {
  sentences.push_back(r);
  pooled += r;
}

std::string CorpusF1::to_json() const {
  nlohmann::json j;
  j["precision"] = pooled.precision();
  j["recall"] = pooled.recall();
  j["f1"] = pooled.f1();
  j["matched"] = pooled.matched;
  j["gold_spans"] = pooled.gold;
  j["predicted_spans"] = pooled.predicted;
  nlohmann::json per = nlohmann::json::array();
  for (const F1Report& r : sentences) {
    per.push_back({{"precision", r.precision()},
                   {"recall", r.recall()},
                   {"f1", r.f1()},
                   {"matched", r.matched},
                   {"gold_spans", r.gold},
                   {"predicted_spans", r.predicted}});
  }
  j["sentences"] = per;
  return j.dump(2);
}

}  // namespace hiersurp
