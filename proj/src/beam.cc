#include "hiersurp/beam.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

namespace hiersurp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Candidate {
  std::size_t parent;
  int cls;
  double score;
};

double log_sum(const std::vector<BeamItem>& beam) {
  double m = kNegInf;
  for (const BeamItem& it : beam) m = std::max(m, it.log_prob);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (const BeamItem& it : beam) s += std::exp(it.log_prob - m);
  return m + std::log(s);
}

void sort_items(std::vector<BeamItem>& items) {
  std::stable_sort(items.begin(), items.end(), [](const BeamItem& a, const BeamItem& b) {
    return a.log_prob > b.log_prob;
  });
}

// Every successor of the frontier. GEN is restricted to `target` (or
// skipped when target < 0); FINISH only when `allow_finish`.
std::vector<Candidate> expand(const Rnng& model, const std::vector<BeamItem>& frontier,
                              int target, bool allow_finish) {
  std::vector<Candidate> out;
  const int n_labels = model.config().n_labels;
  for (std::size_t p = 0; p < frontier.size(); ++p) {
    const BeamItem& item = frontier[p];
    const RnngHead h = model.head(item.state);
    if (h.legal.open) {
      for (int l = 0; l < n_labels; ++l) {
        out.push_back({p, l, item.log_prob + h.action_logp(l)});
      }
    }
    if (h.legal.gen && target >= 0) {
      const Vec wl = model.word_log_probs(h);
      out.push_back({p, model.gen_class(),
                     item.log_prob + h.action_logp(model.gen_class()) + wl(target)});
    }
    if (h.legal.reduce) {
      out.push_back({p, model.reduce_class(),
                     item.log_prob + h.action_logp(model.reduce_class())});
    }
    if (h.legal.finish && allow_finish) {
      out.push_back({p, model.finish_class(),
                     item.log_prob + h.action_logp(model.finish_class())});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    return a.score > b.score;
  });
  return out;
}

BeamItem successor(const Rnng& model, const BeamItem& parent, const Candidate& c,
                   int target) {
  BeamItem next;
  next.log_prob = c.score;
  if (c.cls == model.finish_class()) {
    next.state = parent.state;
    next.history = parent.history;
    return next;
  }
  Action a;
  if (c.cls == model.gen_class()) {
    a = Action::gen(target);
  } else if (c.cls == model.reduce_class()) {
    a = Action::reduce();
  } else {
    a = Action::open(c.cls);
  }
  next.state = model.apply(parent.state, a);
  next.history = std::make_shared<const ActionNode>(ActionNode{a, parent.history});
  return next;
}

// Runs structural rounds from `frontier` until the pool of items taking
// `pool_class` reaches the pool target, the frontier dies out, or the step
// cap is hit. Returns the pool (unsorted).
std::vector<BeamItem> advance(const Rnng& model, std::vector<BeamItem> frontier,
                              int target, bool final_phase, const BeamConfig& cfg,
                              int step_cap) {
  const int pool_class = final_phase ? model.finish_class() : model.gen_class();
  const std::size_t k = static_cast<std::size_t>(cfg.action_beam);
  const std::size_t fill = static_cast<std::size_t>(std::max(1, cfg.pool_target));
  std::vector<BeamItem> pool;
  for (int step = 0; step < step_cap && !frontier.empty() && pool.size() < fill; ++step) {
    const std::vector<Candidate> cands =
        expand(model, frontier, final_phase ? -1 : target, final_phase);
    std::vector<BeamItem> next_frontier;
    int fast = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const Candidate& c = cands[i];
      const bool to_pool = c.cls == pool_class;
      if (i < k) {
        BeamItem item = successor(model, frontier[c.parent], c, target);
        (to_pool ? pool : next_frontier).push_back(std::move(item));
        if (to_pool) ++fast;
      } else if (to_pool && fast < cfg.fast_track) {
        // The best few pool successors are admitted even outside the top k.
        pool.push_back(successor(model, frontier[c.parent], c, target));
        ++fast;
      } else if (fast >= cfg.fast_track) {
        break;
      }
    }
    frontier = std::move(next_frontier);
  }
  return pool;
}

}  // namespace

BeamConfig BeamConfig::from_action_beam(int k, int max_structural_steps) {
  if (k < 10) throw UsageError("action beam must be at least 10, got " + std::to_string(k));
  if (max_structural_steps < 1) throw UsageError("structural step cap must be positive");
  BeamConfig c;
  c.action_beam = k;
  c.word_beam = std::max(1, k / 10);
  c.fast_track = std::max(1, k / 100);
  c.pool_target = k;
  c.max_structural_steps = max_structural_steps;
  return c;
}

SearchResult word_sync_search(const Rnng& model, std::span<const int> ids,
                              const BeamConfig& cfg) {
  if (ids.empty()) throw DataError("cannot search an empty sentence");
  SearchResult out;
  std::vector<BeamItem> beam(1);
  beam[0].state = model.initial_state(static_cast<int>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::vector<BeamItem> pool =
        advance(model, std::move(beam), ids[i], false, cfg, cfg.max_structural_steps);
    if (pool.empty()) throw BeamEmpty(i);
    sort_items(pool);
    if (pool.size() > static_cast<std::size_t>(cfg.word_beam)) pool.resize(cfg.word_beam);
    out.word_beams.push_back(pool);
    beam = std::move(pool);
  }
  // Closing the remaining constituents may take up to one REDUCE per open
  // nonterminal on top of the usual structural rounds.
  const int cap = cfg.max_structural_steps + model.config().limits.max_open_nonterminals;
  std::vector<BeamItem> done = advance(model, std::move(beam), -1, true, cfg, cap);
  if (done.empty()) throw BeamEmpty(ids.size());
  sort_items(done);
  if (done.size() > static_cast<std::size_t>(cfg.word_beam)) done.resize(cfg.word_beam);
  out.final_beam = std::move(done);
  return out;
}

std::vector<double> beam_masses(const SearchResult& result) {
  std::vector<double> out;
  out.reserve(result.word_beams.size());
  for (const auto& b : result.word_beams) out.push_back(log_sum(b));
  return out;
}

std::vector<double> marginal_surprisals(const SearchResult& result) {
  std::vector<double> out;
  double prev = 0.0;
  for (std::size_t i = 0; i < result.word_beams.size(); ++i) {
    if (result.word_beams[i].empty()) throw BeamEmpty(i);
    const double cur = log_sum(result.word_beams[i]);
    out.push_back(prev - cur);
    prev = cur;
  }
  return out;
}

ActionSequence item_actions(const BeamItem& item, Strategy strategy) {
  ActionSequence seq;
  seq.strategy = strategy;
  for (const ActionNode* n = item.history.get(); n; n = n->prev.get()) {
    seq.actions.push_back(n->action);
  }
  std::reverse(seq.actions.begin(), seq.actions.end());
  return seq;
}

Tree best_parse(const SearchResult& result, Strategy strategy, const SymbolTable& labels,
                const SymbolTable& terminals) {
  if (result.final_beam.empty()) throw BeamEmpty(result.word_beams.size());
  return actions_to_tree(item_actions(result.final_beam.front(), strategy), labels,
                         terminals);
}

int relative_beam_count(std::span<const double> log_scores, double threshold) {
  if (log_scores.empty()) return 0;
  const double best = *std::max_element(log_scores.begin(), log_scores.end());
  const double cut = best + std::log(threshold);
  return static_cast<int>(std::count_if(log_scores.begin(), log_scores.end(),
                                        [cut](double s) { return s >= cut; }));
}

RelativeBeamStats::RelativeBeamStats(std::vector<double> thresholds)
    : thresholds_(std::move(thresholds)), totals_(thresholds_.size(), 0.0) {}

void RelativeBeamStats::add_beam(std::span<const double> log_scores) {
  for (std::size_t t = 0; t < thresholds_.size(); ++t) {
    totals_[t] += relative_beam_count(log_scores, thresholds_[t]);
  }
  ++beams_;
}

void RelativeBeamStats::add_result(const SearchResult& result) {
  std::vector<double> scores;
  for (const auto& beam : result.word_beams) {
    scores.clear();
    for (const BeamItem& it : beam) scores.push_back(it.log_prob);
    add_beam(scores);
  }
}

double RelativeBeamStats::mean(std::size_t threshold_index) const {
  if (beams_ == 0) return 0.0;
  return totals_.at(threshold_index) / static_cast<double>(beams_);
}

std::vector<SentenceSurprisal> rnng_surprisals(
    const Rnng& model, const std::vector<std::vector<int>>& sentences,
    const BeamConfig& config, int threads, RelativeBeamStats* stats,
    const SymbolTable* labels, const SymbolTable* terminals) {
  const std::size_t n = sentences.size();
  std::vector<SentenceSurprisal> out(n);
  // Per-sentence beam scores kept so the statistics are merged in order.
  std::vector<std::vector<std::vector<double>>> beam_scores(stats ? n : 0);
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < n; i += step) {
      SentenceSurprisal& r = out[i];
      try {
        const SearchResult res = word_sync_search(model, sentences[i], config);
        r.surprisals = marginal_surprisals(res);
        r.beam_mass = beam_masses(res);
        r.best_derivation_nll = -res.final_beam.front().log_prob;
        if (labels && terminals) {
          r.best_tree = best_parse(res, model.strategy(), *labels, *terminals);
        }
        if (stats) {
          for (const auto& beam : res.word_beams) {
            std::vector<double> s;
            for (const BeamItem& it : beam) s.push_back(it.log_prob);
            beam_scores[i].push_back(std::move(s));
          }
        }
        r.ok = true;
      } catch (const BeamEmpty&) {
        r = SentenceSurprisal{};
      }
    }
  };
  const std::size_t t = static_cast<std::size_t>(std::max(1, threads));
  if (t == 1 || n < 2) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < t; ++k) pool.emplace_back(work, k, t);
    for (auto& th : pool) th.join();
  }
  if (stats) {
    for (const auto& sent : beam_scores) {
      for (const auto& s : sent) stats->add_beam(s);
    }
  }
  return out;
}

PerplexityReport rnng_perplexity(const std::vector<SentenceSurprisal>& results,
                                 const std::vector<std::vector<int>>& sentences,
                                 RnngPerplexityMode mode) {
  if (results.size() != sentences.size()) {
    throw UsageError("perplexity: results and sentences differ in length");
  }
  PerplexityReport rep;
  double total = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const SentenceSurprisal& r = results[i];
    if (!r.ok) {
      ++rep.excluded_sentences;
      continue;
    }
    if (mode == RnngPerplexityMode::kMarginal) {
      for (double s : r.surprisals) total += s;
    } else {
      total += r.best_derivation_nll;
    }
    rep.subwords += static_cast<long>(sentences[i].size());
  }
  rep.perplexity = rep.subwords ? std::exp(total / static_cast<double>(rep.subwords))
                                : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

std::vector<double> lstm_surprisals(const LstmLm& model, std::span<const int> ids) {
  SentenceScores s = model.score(ids);
  s.per_position.pop_back();
  return s.per_position;
}

PerplexityReport lstm_perplexity(const LstmLm& model,
                                 const std::vector<std::vector<int>>& sentences) {
  PerplexityReport rep;
  double total = 0.0;
  for (const auto& sent : sentences) {
    for (double s : lstm_surprisals(model, sent)) total += s;
    rep.subwords += static_cast<long>(sent.size());
  }
  rep.perplexity = rep.subwords ? std::exp(total / static_cast<double>(rep.subwords))
                                : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

}  // namespace hiersurp
