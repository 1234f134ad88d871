#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "capsfuse/tensor.hpp"

namespace capsfuse {

// Symmetric k x k cosine-similarity matrix between named categories.
struct SimilarityMatrix {
  std::vector<std::string> names;
  Tensor values;

  std::size_t size() const { return names.size(); }
  double at(std::size_t i, std::size_t j) const { return values.at(i, j); }
  // Symmetric and unit-diagonal within tol, entries in [-1, 1]. Throws ValidationError.
  void validate(double tol = 1e-9) const;
};

// Per-category lists of document compound sentiment scores in [-1, 1].
struct SentimentTable {
  std::vector<std::pair<std::string, std::vector<double>>> categories;
};

std::vector<std::pair<std::string, double>> aggregate_sentiment(const SentimentTable& table);

// Pairwise cosines between category embeddings; the diagonal is exactly 1.
SimilarityMatrix cosine_matrix(const std::vector<std::pair<std::string, std::vector<double>>>& embeddings);

enum class SelectionRule { AnchorDistinct, MinPair };
std::string_view to_string(SelectionRule r);

struct CategoryPair {
  std::string first;
  std::string second;
  double similarity = 0.0;
};

struct SelectionReport {
  SelectionRule rule = SelectionRule::AnchorDistinct;
  CategoryPair selected;
  // Mean similarity to the other categories, in matrix order.
  std::vector<std::pair<std::string, double>> mean_similarity;
  CategoryPair max_pair;
  CategoryPair min_pair;
};

// anchor_distinct: anchor = highest mean off-diagonal similarity, partner =
// lowest among the rest. min_pair: least similar unordered pair. Ties go to
// the lexicographically smaller name (pair).
SelectionReport select_categories(const SimilarityMatrix& m, SelectionRule rule);

// CSV readers. Similarity: header `,<name>...` then `<name>,<values>...`.
// Embeddings: header `category,...` then `<name>,<values>...`.
// Sentiment: header of category names, one document score per row, blank
// cells where a category has fewer documents.
SimilarityMatrix parse_similarity_csv(std::string_view text);
std::vector<std::pair<std::string, std::vector<double>>> parse_embeddings_csv(std::string_view text);
SentimentTable parse_sentiment_csv(std::string_view text);

}  // namespace capsfuse
