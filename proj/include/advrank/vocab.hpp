#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "advrank/error.hpp"
#include "advrank/graph.hpp"

namespace advrank {

/// Lowercase, split on any non-alphanumeric byte, drop empty tokens.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Token table with two reserved ids: 0 = pad, 1 = unk. Built from training
/// text with deterministic ordering (frequency desc, token asc).
class Vocabulary {
 public:
  static constexpr std::size_t kPadId = 0;
  static constexpr std::size_t kUnkId = 1;

  Vocabulary() : tokens_{"<pad>", "<unk>"} { reindex(); }

  static Vocabulary build(const std::vector<std::string>& texts, std::size_t max_size = 0) {
    std::map<std::string, std::size_t> freq;
    for (const std::string& t : texts) {
      for (std::string& tok : tokenize(t)) ++freq[tok];
    }
    std::vector<std::pair<std::string, std::size_t>> order(freq.begin(), freq.end());
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocabulary v;
    for (const auto& [tok, cnt] : order) {
      if (max_size > 0 && v.tokens_.size() >= max_size) break;
      v.tokens_.push_back(tok);
    }
    v.reindex();
    return v;
  }

  /// Rebuild from a serialized token list; the two reserved entries must
  /// lead it.
  static Vocabulary from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>") {
      throw DataError("vocabulary: token list must start with <pad>, <unk>");
    }
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    v.reindex();
    return v;
  }

  std::size_t size() const { return tokens_.size(); }

  std::size_t id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
  }

  const std::string& token_of(std::size_t id) const {
    if (id >= tokens_.size()) throw DataError("vocabulary: id " + std::to_string(id) + " out of range");
    return tokens_[id];
  }

  /// Tokenize and map to ids; out-of-vocabulary tokens become unk.
  std::vector<std::size_t> encode(const std::string& text) const {
    std::vector<std::size_t> ids;
    for (const std::string& tok : tokenize(text)) ids.push_back(id_of(tok));
    return ids;
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> index_;

  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], i).second) {
        throw DataError("vocabulary: duplicate token '" + tokens_[i] + "'");
      }
    }
  }
};

/// FNV-1a over the three characters of a trigraph.
inline std::uint64_t trigraph_hash(char a, char b, char c) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : {static_cast<unsigned char>(a), static_cast<unsigned char>(b),
                           static_cast<unsigned char>(c)}) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Character trigraphs of "#token#" hashed into [0, buckets); counts merge
/// per bucket and entries come out sorted by bucket id.
inline TokenBag token_trigraph_bag(const std::string& token, std::size_t buckets) {
  if (buckets == 0) throw ConfigError("trigraph bag: bucket count must be positive");
  std::string marked = "#" + token + "#";
  std::map<std::size_t, double> counts;
  for (std::size_t i = 0; i + 2 < marked.size(); ++i) {
    counts[trigraph_hash(marked[i], marked[i + 1], marked[i + 2]) % buckets] += 1.0;
  }
  TokenBag bag;
  bag.reserve(counts.size());
  for (const auto& [bucket, count] : counts) bag.push_back({bucket, count});
  return bag;
}

/// Per-id trigraph bags for a vocabulary. The pad id maps to an empty bag
/// (zero contribution); the unk id hashes the literal token "unk".
inline std::vector<TokenBag> build_bag_table(const Vocabulary& vocab, std::size_t buckets) {
  std::vector<TokenBag> table(vocab.size());
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    if (id == Vocabulary::kPadId) continue;
    if (id == Vocabulary::kUnkId) {
      table[id] = token_trigraph_bag("unk", buckets);
    } else {
      table[id] = token_trigraph_bag(vocab.token_of(id), buckets);
    }
  }
  return table;
}

}  // namespace advrank
