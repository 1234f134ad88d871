#include "capsfuse/text_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "capsfuse/errors.hpp"

namespace capsfuse {

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell += ch;
    }
  }
  out.push_back(cell);
  for (auto& c : out) {
    while (!c.empty() && c.front() == ' ') c.erase(c.begin());
    while (!c.empty() && c.back() == ' ') c.pop_back();
  }
  return out;
}

std::vector<std::vector<std::string>> csv_rows(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(split_csv_line(line));
  }
  return rows;
}

double to_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(where + ": cannot parse '" + s + "'");
  }
}

std::pair<std::string, std::string> ordered(const std::string& a, const std::string& b) {
  return a < b ? std::pair{a, b} : std::pair{b, a};
}

}  // namespace

void SimilarityMatrix::validate(double tol) const {
  const std::size_t k = names.size();
  if (values.rank() != 2 || values.dim(0) != k || values.dim(1) != k)
    throw ValidationError("similarity matrix must be " + std::to_string(k) + "x" + std::to_string(k));
  for (std::size_t i = 0; i < k; ++i) {
    if (std::abs(values.at(i, i) - 1.0) > tol)
      throw ValidationError("similarity matrix diagonal at '" + names[i] + "' is not 1");
    for (std::size_t j = 0; j < k; ++j) {
      const double v = values.at(i, j);
      if (!std::isfinite(v) || v < -1.0 - tol || v > 1.0 + tol)
        throw ValidationError("similarity value out of [-1, 1] at (" + names[i] + ", " + names[j] + ")");
      if (std::abs(v - values.at(j, i)) > tol)
        throw ValidationError("similarity matrix is not symmetric at (" + names[i] + ", " + names[j] + ")");
    }
  }
}

std::vector<std::pair<std::string, double>> aggregate_sentiment(const SentimentTable& table) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [name, scores] : table.categories) {
    if (scores.empty()) throw ValidationError("sentiment category '" + name + "' has no documents");
    double total = 0.0;
    for (double s : scores) {
      if (!(s >= -1.0 && s <= 1.0)) throw ValidationError("sentiment score out of [-1, 1] in '" + name + "'");
      total += s;
    }
    out.emplace_back(name, total / static_cast<double>(scores.size()));
  }
  return out;
}

SimilarityMatrix cosine_matrix(const std::vector<std::pair<std::string, std::vector<double>>>& embeddings) {
  const std::size_t k = embeddings.size();
  if (k == 0) throw ValidationError("no category embeddings");
  const std::size_t dim = embeddings[0].second.size();
  std::vector<double> norms;
  for (const auto& [name, v] : embeddings) {
    if (v.size() != dim || dim == 0) throw ValidationError("embedding for '" + name + "' has the wrong width");
    double sq = 0.0;
    for (double x : v) sq += x * x;
    if (sq == 0.0) throw ValidationError("embedding for '" + name + "' is the zero vector");
    norms.push_back(std::sqrt(sq));
  }
  SimilarityMatrix m;
  m.values = Tensor({k, k}, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    m.names.push_back(embeddings[i].first);
    m.values.at(i, i) = 1.0;
    for (std::size_t j = i + 1; j < k; ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += embeddings[i].second[d] * embeddings[j].second[d];
      const double c = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      m.values.at(i, j) = c;
      m.values.at(j, i) = c;
    }
  }
  return m;
}

std::string_view to_string(SelectionRule r) {
  return r == SelectionRule::AnchorDistinct ? "anchor_distinct" : "min_pair";
}

SelectionReport select_categories(const SimilarityMatrix& m, SelectionRule rule) {
  const std::size_t k = m.size();
  if (k < 2) throw ValidationError("category selection needs at least two categories");
  SelectionReport report;
  report.rule = rule;

  for (std::size_t i = 0; i < k; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      if (j != i) total += m.at(i, j);
    report.mean_similarity.emplace_back(m.names[i], total / static_cast<double>(k - 1));
  }

  bool first = true;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      const double v = m.at(i, j);
      const auto key = ordered(m.names[i], m.names[j]);
      auto better = [&](const CategoryPair& cur, bool want_max) {
        if (first) return true;
        if (v != cur.similarity) return want_max ? v > cur.similarity : v < cur.similarity;
        return key < ordered(cur.first, cur.second);
      };
      const bool take_max = better(report.max_pair, true);
      const bool take_min = better(report.min_pair, false);
      if (take_max) report.max_pair = {m.names[i], m.names[j], v};
      if (take_min) report.min_pair = {m.names[i], m.names[j], v};
      first = false;
    }

  if (rule == SelectionRule::MinPair) {
    report.selected = report.min_pair;
    return report;
  }

  auto pick = [&](bool want_max, std::size_t skip) {
    std::size_t best = k;
    for (std::size_t i = 0; i < k; ++i) {
      if (i == skip) continue;
      if (best == k) {
        best = i;
        continue;
      }
      const double v = report.mean_similarity[i].second;
      const double b = report.mean_similarity[best].second;
      if (v != b ? (want_max ? v > b : v < b) : m.names[i] < m.names[best]) best = i;
    }
    return best;
  };
  const std::size_t anchor = pick(true, k);
  const std::size_t partner = pick(false, anchor);
  report.selected = {m.names[anchor], m.names[partner], m.at(anchor, partner)};
  return report;
}

SimilarityMatrix parse_similarity_csv(std::string_view text) {
  const auto rows = csv_rows(text);
  if (rows.size() < 2) throw ValidationError("similarity CSV needs a header and at least one row");
  SimilarityMatrix m;
  m.names.assign(rows[0].begin() + 1, rows[0].end());
  const std::size_t k = m.names.size();
  if (rows.size() - 1 != k) throw ValidationError("similarity CSV must have one row per header category");
  m.values = Tensor({k, k}, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const auto& row = rows[i + 1];
    if (row.size() != k + 1) throw ValidationError("similarity CSV row " + std::to_string(i) + " has wrong width");
    if (row[0] != m.names[i])
      throw ValidationError("similarity CSV row '" + row[0] + "' does not match header '" + m.names[i] + "'");
    for (std::size_t j = 0; j < k; ++j) m.values.at(i, j) = to_double(row[j + 1], "similarity row " + row[0]);
  }
  return m;
}

std::vector<std::pair<std::string, std::vector<double>>> parse_embeddings_csv(std::string_view text) {
  const auto rows = csv_rows(text);
  if (rows.size() < 2) throw ValidationError("embeddings CSV needs a header and at least one row");
  std::vector<std::pair<std::string, std::vector<double>>> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    std::vector<double> v;
    for (std::size_t c = 1; c < rows[r].size(); ++c) v.push_back(to_double(rows[r][c], "embedding " + rows[r][0]));
    out.emplace_back(rows[r][0], std::move(v));
  }
  return out;
}

SentimentTable parse_sentiment_csv(std::string_view text) {
  const auto rows = csv_rows(text);
  if (rows.empty()) throw ValidationError("sentiment CSV is empty");
  SentimentTable table;
  for (const auto& name : rows[0]) table.categories.emplace_back(name, std::vector<double>{});
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() > rows[0].size()) throw ValidationError("sentiment CSV row " + std::to_string(r) + " too wide");
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (rows[r][c].empty()) continue;
      table.categories[c].second.push_back(to_double(rows[r][c], "sentiment column " + rows[0][c]));
    }
  }
  return table;
}

}  // namespace capsfuse
