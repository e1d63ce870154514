#ifndef HIERSURP_BPE_H_
#define HIERSURP_BPE_H_

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hiersurp/common.h"

namespace hiersurp {

class VocabTooSmall : public DataError {
 public:
  VocabTooSmall(std::size_t base, std::size_t requested)
      : DataError("base inventory of " + std::to_string(base) +
                  " symbols exceeds vocabulary size " +
                  std::to_string(requested)),
        base_(base) {}
  std::size_t base_inventory() const { return base_; }

 private:
  std::size_t base_;
};

// The corpus runs out of mergeable pairs before the target size is reached.
class VocabTooLarge : public DataError {
 public:
  VocabTooLarge(std::size_t reachable, std::size_t requested)
      : DataError("corpus supports at most " + std::to_string(reachable) +
                  " subwords, requested " + std::to_string(requested)),
        reachable_(reachable) {}
  std::size_t reachable() const { return reachable_; }

 private:
  std::size_t reachable_;
};

struct BpeOptions {
  std::size_t vocab_size = 8000;
  double character_coverage = 0.9995;
  // Stop early instead of throwing VocabTooLarge.
  bool clamp_to_corpus = false;
};

struct Encoding {
  std::vector<int> ids;
  bool has_unk = false;
};

// Splits UTF-8 text into code points; stray bytes become one-byte symbols.
std::vector<std::string> utf8_chars(std::string_view text);

// Byte-pair-encoding model. Id 0 is the unknown symbol, followed by the
// retained characters, followed by merge products in merge order. Merges
// never cross terminal boundaries because every word is encoded alone.
class BpeModel {
 public:
  static constexpr int kUnkId = 0;
  static constexpr std::string_view kUnkPiece = "<unk>";

  static BpeModel train(const std::vector<std::vector<std::string>>& sentences,
                        const BpeOptions& options);

  // Rebuilds the vocabulary by replaying merges over the base characters.
  static BpeModel replay(const std::vector<std::string>& base_chars,
                         const std::vector<std::pair<std::string, std::string>>&
                             merges,
                         double character_coverage);

  Encoding encode(std::string_view word) const;
  std::string decode(std::span<const int> ids) const;

  std::size_t size() const { return pieces_.size(); }
  int unk_id() const { return kUnkId; }
  const std::string& piece(int id) const;
  std::optional<int> find(std::string_view piece) const;
  const std::vector<std::string>& pieces() const { return pieces_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const {
    return merges_;
  }
  std::size_t base_size() const { return base_size_; }
  double character_coverage() const { return coverage_; }

  std::string serialize() const;
  static BpeModel deserialize(std::string_view text);
  void save(const std::string& path) const;
  static BpeModel load(const std::string& path);

  friend bool operator==(const BpeModel& a, const BpeModel& b) {
    return a.pieces_ == b.pieces_ && a.merges_ == b.merges_ &&
           a.base_size_ == b.base_size_;
  }

 private:
  int add_piece(const std::string& piece);
  void add_merge(int left, int right);

  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::pair<std::string, std::string>> merges_;
  // (left id, right id) -> (rank, result id)
  std::map<std::pair<int, int>, std::pair<int, int>> merge_table_;
  std::size_t base_size_ = 1;
  double coverage_ = 1.0;
};

}  // namespace hiersurp

#endif  // HIERSURP_BPE_H_
