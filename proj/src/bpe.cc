#include "hiersurp/bpe.h"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace hiersurp {
namespace {

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;
}

struct WordEntry {
  std::vector<int> symbols;
  long long count = 0;
};

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

}  // namespace

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t len = utf8_length(static_cast<unsigned char>(text[i]));
    if (i + len > text.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) >> 6) != 0x2) {
        len = 1;
        break;
      }
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

int BpeModel::add_piece(const std::string& piece) {
  auto it = index_.find(piece);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(pieces_.size());
  pieces_.push_back(piece);
  index_.emplace(piece, id);
  return id;
}

void BpeModel::add_merge(int left, int right) {
  const int result = add_piece(pieces_[left] + pieces_[right]);
  merge_table_.emplace(std::make_pair(left, right),
                       std::make_pair(static_cast<int>(merges_.size()), result));
  merges_.emplace_back(pieces_[left], pieces_[right]);
}

BpeModel BpeModel::train(const std::vector<std::vector<std::string>>& sentences,
                         const BpeOptions& options) {
  std::map<std::string, long long> word_counts;
  for (const auto& sentence : sentences) {
    for (const auto& word : sentence) ++word_counts[word];
  }
  if (word_counts.empty()) throw DataError("cannot train BPE on an empty corpus");

  std::map<std::string, long long> char_counts;
  long long total_chars = 0;
  for (const auto& [word, count] : word_counts) {
    for (const auto& ch : utf8_chars(word)) {
      char_counts[ch] += count;
      total_chars += count;
    }
  }
  std::vector<std::pair<std::string, long long>> chars(char_counts.begin(),
                                                       char_counts.end());
  std::stable_sort(chars.begin(), chars.end(), [](const auto& a, const auto& b) {
    return a.second > b.second;
  });

  // Keep the most frequent characters until the coverage mass is reached.
  std::vector<std::string> kept;
  const double target_mass = options.character_coverage * total_chars;
  long long mass = 0;
  for (const auto& [ch, count] : chars) {
    if (static_cast<double>(mass) >= target_mass - 1e-9 && !kept.empty()) break;
    kept.push_back(ch);
    mass += count;
  }

  BpeModel model;
  model.coverage_ = options.character_coverage;
  model.add_piece(std::string(kUnkPiece));
  for (const auto& ch : kept) model.add_piece(ch);
  model.base_size_ = model.pieces_.size();
  if (model.base_size_ > options.vocab_size) {
    throw VocabTooSmall(model.base_size_, options.vocab_size);
  }

  std::vector<WordEntry> words;
  words.reserve(word_counts.size());
  for (const auto& [word, count] : word_counts) {
    WordEntry e;
    e.count = count;
    for (const auto& ch : utf8_chars(word)) {
      auto id = model.find(ch);
      e.symbols.push_back(id ? *id : kUnkId);
    }
    words.push_back(std::move(e));
  }

  using Pair = std::pair<int, int>;
  const auto& pieces = model.pieces_;
  // Highest count first; ties broken lexicographically on the piece strings.
  auto better = [&pieces](const std::pair<long long, Pair>& a,
                          const std::pair<long long, Pair>& b) {
    if (a.first != b.first) return a.first > b.first;
    const int c1 = pieces[a.second.first].compare(pieces[b.second.first]);
    if (c1 != 0) return c1 < 0;
    const int c2 = pieces[a.second.second].compare(pieces[b.second.second]);
    if (c2 != 0) return c2 < 0;
    return a.second < b.second;
  };
  std::set<std::pair<long long, Pair>, decltype(better)> queue(better);
  std::map<Pair, long long> pair_counts;
  std::map<Pair, std::set<std::size_t>> occurs;

  auto update_count = [&](const Pair& p, long long delta) {
    auto it = pair_counts.find(p);
    long long old = it == pair_counts.end() ? 0 : it->second;
    if (old > 0) queue.erase({old, p});
    const long long now = old + delta;
    if (now > 0) {
      pair_counts[p] = now;
      queue.insert({now, p});
    } else if (it != pair_counts.end()) {
      pair_counts.erase(it);
    }
  };
  auto account = [&](std::size_t w, int sign) {
    const auto& syms = words[w].symbols;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      if (syms[i] == kUnkId || syms[i + 1] == kUnkId) continue;
      const Pair p{syms[i], syms[i + 1]};
      update_count(p, sign * words[w].count);
      if (sign > 0) {
        occurs[p].insert(w);
      }
    }
  };
  for (std::size_t w = 0; w < words.size(); ++w) account(w, +1);

  while (model.pieces_.size() < options.vocab_size) {
    if (queue.empty()) {
      if (options.clamp_to_corpus) break;
      throw VocabTooLarge(model.pieces_.size(), options.vocab_size);
    }
    const Pair best = queue.begin()->second;
    model.add_merge(best.first, best.second);
    const int merged = model.merge_table_.at(best).second;

    const std::set<std::size_t> affected = occurs[best];
    for (std::size_t w : affected) {
      account(w, -1);
      auto& syms = words[w].symbols;
      std::vector<int> next;
      next.reserve(syms.size());
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == best.first &&
            syms[i + 1] == best.second) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(syms[i]);
        }
      }
      syms = std::move(next);
      account(w, +1);
    }
    occurs.erase(best);
  }
  return model;
}

BpeModel BpeModel::replay(
    const std::vector<std::string>& base_chars,
    const std::vector<std::pair<std::string, std::string>>& merges,
    double character_coverage) {
  BpeModel model;
  model.coverage_ = character_coverage;
  model.add_piece(std::string(kUnkPiece));
  for (const auto& ch : base_chars) model.add_piece(ch);
  model.base_size_ = model.pieces_.size();
  for (const auto& [l, r] : merges) {
    auto li = model.find(l);
    auto ri = model.find(r);
    if (!li || !ri) throw DataError("merge (" + l + ", " + r + ") has unknown parts");
    model.add_merge(*li, *ri);
  }
  return model;
}

Encoding BpeModel::encode(std::string_view word) const {
  Encoding enc;
  for (const auto& ch : utf8_chars(word)) {
    auto id = find(ch);
    if (id && *id < static_cast<int>(base_size_)) {
      enc.ids.push_back(*id);
    } else {
      enc.ids.push_back(kUnkId);
      enc.has_unk = true;
    }
  }
  auto& syms = enc.ids;
  for (;;) {
    int best_rank = -1;
    std::size_t best_pos = 0;
    int best_result = 0;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = merge_table_.find({syms[i], syms[i + 1]});
      if (it == merge_table_.end()) continue;
      if (best_rank < 0 || it->second.first < best_rank) {
        best_rank = it->second.first;
        best_pos = i;
        best_result = it->second.second;
      }
    }
    if (best_rank < 0) break;
    syms[best_pos] = best_result;
    syms.erase(syms.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
  }
  return enc;
}

std::string BpeModel::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) out += piece(id);
  return out;
}

const std::string& BpeModel::piece(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) {
    throw IdOutOfRange(id, pieces_.size());
  }
  return pieces_[id];
}

std::optional<int> BpeModel::find(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string BpeModel::serialize() const {
  std::ostringstream out;
  out.precision(17);
  out << "hiersurp-bpe 1\n";
  out << "coverage " << coverage_ << "\n";
  out << "base " << base_size_ << "\n";
  out << "vocab " << pieces_.size() << "\n";
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    out << i << '\t' << pieces_[i] << '\n';
  }
  out << "merges " << merges_.size() << "\n";
  for (const auto& [l, r] : merges_) out << l << '\t' << r << '\n';
  return out.str();
}

BpeModel BpeModel::deserialize(std::string_view text) {
  const auto lines = split_lines(text);
  std::size_t at = 0;
  auto next_line = [&]() -> std::string_view {
    if (at >= lines.size()) throw DataError("truncated BPE model");
    return lines[at++];
  };
  auto header_value = [&](std::string_view key) {
    const std::string_view line = next_line();
    if (line.substr(0, key.size()) != key) {
      throw DataError("BPE model: expected '" + std::string(key) + "'");
    }
    return std::string(line.substr(key.size() + 1));
  };
  if (next_line() != "hiersurp-bpe 1") throw DataError("unsupported BPE model version");
  const double coverage = std::stod(header_value("coverage"));
  const std::size_t base = std::stoul(header_value("base"));
  const std::size_t vocab = std::stoul(header_value("vocab"));
  std::vector<std::string> pieces;
  for (std::size_t i = 0; i < vocab; ++i) {
    const std::string_view line = next_line();
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos || std::stoul(std::string(line.substr(0, tab))) != i) {
      throw DataError("BPE model: malformed vocab entry " + std::to_string(i));
    }
    pieces.emplace_back(line.substr(tab + 1));
  }
  const std::size_t n_merges = std::stoul(header_value("merges"));
  std::vector<std::pair<std::string, std::string>> merges;
  for (std::size_t i = 0; i < n_merges; ++i) {
    const std::string_view line = next_line();
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos) throw DataError("BPE model: malformed merge");
    merges.emplace_back(std::string(line.substr(0, tab)),
                        std::string(line.substr(tab + 1)));
  }
  if (base == 0 || base > pieces.size()) throw DataError("BPE model: bad base size");
  std::vector<std::string> base_chars(pieces.begin() + 1,
                                      pieces.begin() + static_cast<std::ptrdiff_t>(base));
  BpeModel model = replay(base_chars, merges, coverage);
  if (model.pieces_ != pieces) {
    throw DataError("BPE model: merge replay does not reproduce the vocabulary");
  }
  return model;
}

void BpeModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << serialize();
}

BpeModel BpeModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

}  // namespace hiersurp
