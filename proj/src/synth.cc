#include "hiersurp/synth.h"

#include <cmath>
#include <set>
#include <sstream>

#include "hiersurp/bpe.h"

namespace hiersurp {

namespace {

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const std::string& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace

Pcfg Pcfg::parse(std::string_view text) {
  Pcfg g;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (std::size_t hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    std::vector<std::string> tok = split_ws(line);
    if (tok.empty()) continue;
    const std::string where = " at line " + std::to_string(line_no);
    if (tok.size() < 4 || tok[1] != "->") {
      throw DataError("expected 'LHS -> RHS... PROB'" + where);
    }
    Rule r;
    r.lhs = tok[0];
    r.rhs.assign(tok.begin() + 2, tok.end() - 1);
    try {
      std::size_t used = 0;
      r.prob = std::stod(tok.back(), &used);
      if (used != tok.back().size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError("bad rule probability '" + tok.back() + "'" + where);
    }
    if (!(r.prob >= 0.0 && r.prob <= 1.0)) {
      throw DataError("rule probability outside [0, 1]" + where);
    }
    if (g.start_.empty()) g.start_ = r.lhs;
    g.rules_.push_back(std::move(r));
  }
  if (g.rules_.empty()) throw DataError("grammar has no rules");
  if (is_word_class(g.start_)) throw DataError("start symbol cannot be a word class");
  g.index();
  for (const auto& [lhs, ids] : g.by_lhs_) {
    double total = 0.0;
    for (std::size_t i : ids) total += g.rules_[i].prob;
    if (std::abs(total - 1.0) > 1e-6) {
      throw DataError("rules of '" + lhs + "' sum to " + fmt(total));
    }
    if (!is_word_class(lhs)) continue;
    for (std::size_t i : ids) {
      for (const std::string& s : g.rules_[i].rhs) {
        if (g.is_nonterminal(s)) {
          throw DataError("word class '" + lhs + "' rewrites to nonterminal '" + s + "'");
        }
      }
    }
  }
  return g;
}

void Pcfg::index() {
  by_lhs_.clear();
  for (std::size_t i = 0; i < rules_.size(); ++i) by_lhs_[rules_[i].lhs].push_back(i);
}

Pcfg Pcfg::with_left_bias(double bias) const {
  if (!(bias >= 0.0 && bias <= 1.0)) throw UsageError("left bias must lie in [0, 1]");
  Pcfg g = *this;
  for (const auto& [lhs, ids] : by_lhs_) {
    if (is_word_class(lhs)) continue;
    double total = 0.0;
    for (std::size_t i : ids) {
      Rule& r = g.rules_[i];
      bool left = true;
      for (std::size_t j = 1; j < r.rhs.size(); ++j) {
        if (is_nonterminal(r.rhs[j]) && !is_word_class(r.rhs[j])) left = false;
      }
      r.prob *= left ? bias : 1.0 - bias;
      total += r.prob;
    }
    if (total <= 0.0) throw ImproperGrammar("no rule of '" + lhs + "' survives the bias");
    for (std::size_t i : ids) g.rules_[i].prob /= total;
  }
  return g;
}

void Pcfg::check_proper() const {
  std::map<std::string, double> q;
  for (const auto& [lhs, ids] : by_lhs_) q[lhs] = 0.0;
  for (int iter = 0; iter < 1000000; ++iter) {
    double change = 0.0;
    for (const auto& [lhs, ids] : by_lhs_) {
      double v = 0.0;
      for (std::size_t i : ids) {
        double p = rules_[i].prob;
        for (const std::string& s : rules_[i].rhs) {
          if (auto it = q.find(s); it != q.end()) p *= it->second;
        }
        v += p;
      }
      change = std::max(change, std::abs(v - q[lhs]));
      q[lhs] = v;
    }
    if (change < 1e-15) break;
  }
  for (const auto& [lhs, v] : q) {
    if (v < 1.0 - 1e-6) {
      throw ImproperGrammar("'" + lhs + "' terminates with probability " + fmt(v));
    }
  }
}

std::string Pcfg::to_text() const {
  std::string out;
  for (const Rule& r : rules_) {
    out += r.lhs + " ->";
    for (const std::string& s : r.rhs) out += " " + s;
    out += " " + fmt(r.prob) + "\n";
  }
  return out;
}

bool Pcfg::expand(const std::string& symbol, Rng& rng, int depth, int max_depth,
                  std::vector<Tree>& out, int& words, int max_words) const {
  if (depth > max_depth) return false;
  const std::vector<std::size_t>& ids = by_lhs_.at(symbol);
  double u = rng.uniform();
  std::size_t pick = ids.back();
  for (std::size_t i : ids) {
    if (u < rules_[i].prob) {
      pick = i;
      break;
    }
    u -= rules_[i].prob;
  }
  for (const std::string& s : rules_[pick].rhs) {
    if (!is_nonterminal(s)) {
      out.push_back(Tree::leaf(s));
      if (++words > max_words) return false;
    } else if (is_word_class(s)) {
      if (!expand(s, rng, depth + 1, max_depth, out, words, max_words)) return false;
    } else {
      std::vector<Tree> children;
      if (!expand(s, rng, depth + 1, max_depth, children, words, max_words)) return false;
      out.push_back(Tree::node(s, std::move(children)));
    }
  }
  return true;
}

Tree Pcfg::sample(Rng& rng, int min_words, int max_words, int max_depth, int max_tries) const {
  for (int t = 0; t < max_tries; ++t) {
    std::vector<Tree> children;
    int words = 0;
    if (!expand(start_, rng, 1, max_depth, children, words, max_words)) continue;
    if (words < min_words) continue;
    return Tree::node(start_, std::move(children));
  }
  throw ImproperGrammar("no sample within the length and depth bounds after " +
                        std::to_string(max_tries) + " tries");
}

std::string default_grammar_text() {
  static const std::vector<std::string> kSyllables = {
      "ka", "ki", "ku", "ke", "ko", "sa", "shi", "su", "se", "so", "ta", "chi",
      "tsu", "te", "to", "na", "ni", "nu", "ne", "no", "ha", "hi", "fu", "he",
      "ho", "ma", "mi", "mu", "me", "mo", "ra", "ri", "ru", "re", "ro", "ya",
      "yu", "yo", "wa", "ga", "go", "da", "do", "ba", "bu"};
  Rng rng(20240531);
  std::set<std::string> used;
  auto make = [&](int min_syl, int max_syl, const std::string& suffix) {
    for (;;) {
      std::string w;
      const int n = min_syl + static_cast<int>(rng.index(max_syl - min_syl + 1));
      for (int i = 0; i < n; ++i) w += kSyllables[rng.index(kSyllables.size())];
      w += suffix;
      if (used.insert(w).second) return w;
    }
  };
  std::string out;
  out += "# Head-final phrase structure.\n";
  out += "S -> VP _F 0.35\nS -> PP VP 0.25\nS -> S _C VP 0.15\nS -> PP PP VP 0.1\nS -> VP 0.15\n";
  out += "VP -> _V 0.3\nVP -> PP _V 0.35\nVP -> PP VP 0.2\nVP -> VP _C _V 0.15\n";
  out += "PP -> NP _P 1\n";
  out += "NP -> _N 0.4\nNP -> _A _N 0.15\nNP -> NP _G _N 0.15\nNP -> VP _N 0.1\n"
         "NP -> _N _G NP 0.2\n";
  // Zipfian word classes.
  auto word_class = [&](const std::string& name, const std::vector<std::string>& words) {
    double z = 0.0;
    for (std::size_t r = 0; r < words.size(); ++r) z += 1.0 / static_cast<double>(r + 1);
    for (std::size_t r = 0; r < words.size(); ++r) {
      out += name + " -> " + words[r] + " " + fmt(1.0 / static_cast<double>(r + 1) / z) + "\n";
    }
  };
  std::vector<std::string> nouns, verbs, adjectives;
  for (int i = 0; i < 60; ++i) nouns.push_back(make(2, 3, ""));
  static const std::vector<std::string> kVerbEndings = {"ru", "ta", "masu", "mashita"};
  for (int i = 0; i < 30; ++i) verbs.push_back(make(1, 2, kVerbEndings[i % 4]));
  for (int i = 0; i < 20; ++i) adjectives.push_back(make(1, 2, "i"));
  word_class("_N", nouns);
  word_class("_V", verbs);
  word_class("_A", adjectives);
  word_class("_P", {"ga", "wo", "ni", "de", "to", "kara", "made"});
  word_class("_G", {"no"});
  word_class("_C", {"te", "kedo", "nagara"});
  word_class("_F", {"yo", "ne", "ka"});
  return out;
}

std::vector<SimSegment> segment_sentences(const std::vector<std::vector<std::string>>& sentences,
                                          const RtSimConfig& config, Rng& rng) {
  if (config.max_segment_words < 1) throw UsageError("segments need at least one word");
  if (config.sentences_per_article < 1) throw UsageError("articles need at least one sentence");
  std::vector<SimSegment> out;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    const int article = static_cast<int>(s) / config.sentences_per_article;
    std::size_t pos = 0;
    int g = 0;
    while (pos < sentences[s].size()) {
      std::size_t len = 1 + rng.index(static_cast<std::uint64_t>(config.max_segment_words));
      len = std::min(len, sentences[s].size() - pos);
      SimSegment seg;
      seg.id = "a" + std::to_string(article) + "-s" + std::to_string(s) + "-g" + std::to_string(g++);
      seg.article = article;
      seg.sentence = static_cast<int>(s);
      seg.words.assign(sentences[s].begin() + static_cast<std::ptrdiff_t>(pos),
                       sentences[s].begin() + static_cast<std::ptrdiff_t>(pos + len));
      out.push_back(std::move(seg));
      pos += len;
    }
  }
  return out;
}

std::vector<RtRow> simulate_reading_times(const std::vector<SimSegment>& segments,
                                          const FrequencyTable& freq,
                                          const std::map<std::string, double>& surprisal,
                                          const RtSimConfig& config, Rng& rng) {
  if (config.subjects < 1) throw UsageError("need at least one subject");
  // Layout and lexical predictors, shared by all subjects.
  std::vector<RtRow> layout;
  int n_article = 0;
  {
    int article = -1, line = 0, screen = 0, seg_n = 0, line_chars = 0;
    double prev_len = 0.0, prev_freq = 0.0;
    for (const SimSegment& s : segments) {
      if (s.article != article) {
        article = s.article;
        line = 1;
        screen = 1;
        seg_n = 0;
        line_chars = 0;
        prev_len = 0.0;
        prev_freq = 0.0;
        n_article = std::max(n_article, article + 1);
      }
      std::size_t chars = 0;
      double f = 0.0;
      for (const std::string& w : s.words) {
        chars += utf8_chars(w).size();
        auto it = freq.find(w);
        f += std::log((it == freq.end() ? 0.0 : it->second) + 1.0);
      }
      f /= static_cast<double>(std::max<std::size_t>(1, s.words.size()));
      const int len = static_cast<int>(chars);
      if (line_chars > 0 && line_chars + len > config.line_chars) {
        line_chars = 0;
        if (++line > config.lines_per_screen) {
          line = 1;
          ++screen;
        }
      }
      RtRow r;
      r.segment_id = s.id;
      r.article = "a" + std::to_string(s.article);
      r.length = len;
      r.prev_length = prev_len;
      r.freq = f;
      r.prev_freq = prev_freq;
      r.is_first = line_chars == 0 ? 1.0 : 0.0;
      r.screenN = screen;
      r.lineN = line;
      r.segmentN = ++seg_n;
      r.words = join(s.words);
      layout.push_back(r);
      line_chars += len;
      prev_len = len;
      prev_freq = f;
    }
    // A segment is last on its line when the next one starts a line.
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const bool next_first = i + 1 == layout.size() || layout[i + 1].is_first == 1.0;
      layout[i].is_last = next_first ? 1.0 : 0.0;
      if (i + 2 <= layout.size() && !next_first) {
        const bool after_first = i + 2 == layout.size() || layout[i + 2].is_first == 1.0;
        layout[i].is_second_last = after_first ? 1.0 : 0.0;
      }
    }
  }
  std::vector<double> article_eff(static_cast<std::size_t>(n_article));
  for (double& a : article_eff) a = config.sd_article * rng.normal();
  std::vector<double> subj_eff(static_cast<std::size_t>(config.subjects));
  for (double& s : subj_eff) s = config.sd_subject * rng.normal();

  std::vector<RtRow> rows;
  rows.reserve(layout.size() * subj_eff.size());
  for (std::size_t j = 0; j < subj_eff.size(); ++j) {
    for (std::size_t i = 0; i < layout.size(); ++i) {
      RtRow r = layout[i];
      r.subj = "s" + std::to_string(j);
      if (rng.bernoulli(config.skip_rate)) {
        r.fixated = false;
        r.rt = 0.0;
        rows.push_back(std::move(r));
        continue;
      }
      auto it = surprisal.find(r.segment_id);
      const double s = it == surprisal.end() ? 0.0 : it->second;
      const double log_rt =
          config.intercept + config.beta_length * r.length +
          config.beta_prev_length * r.prev_length + config.beta_freq * r.freq +
          config.beta_prev_freq * r.prev_freq + config.beta_is_first * r.is_first +
          config.beta_is_last * r.is_last + config.beta_is_second_last * r.is_second_last +
          config.beta_screen * r.screenN + config.beta_line * r.lineN +
          config.beta_segment * r.segmentN + config.gamma * s +
          article_eff[static_cast<std::size_t>(segments[i].article)] + subj_eff[j] +
          config.sd_noise * rng.normal();
      r.rt = std::exp(log_rt);
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

FrequencyTable word_counts(const std::vector<Tree>& trees) {
  FrequencyTable t;
  for (const Tree& tree : trees) {
    for (const std::string& w : yield_terminals(tree)) t[w] += 1.0;
  }
  return t;
}

}  // namespace hiersurp
