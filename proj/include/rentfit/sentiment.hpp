#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "rentfit/dataset.hpp"

namespace rentfit {

/// Token polarity table with a single-token negation window.
/// Lookup is case-insensitive (ASCII folding only).
struct Lexicon {
  std::unordered_map<std::string, double> entries;
  std::unordered_set<std::string> negators;
  double intensity_cap = 1.0;
};

// Tokenizing on non-alphanumerics splits "isn't" into "isn" + "t", so the
// bare "t" is the token that immediately precedes the sentiment word in
// negated contractions and is treated as a negator.
inline std::unordered_set<std::string> default_negators() {
  return {"not",     "no",     "never",   "neither", "nor",      "cannot",
          "cant",    "dont",   "doesnt",  "didnt",   "isnt",     "wasnt",
          "arent",   "werent", "wont",    "wouldnt", "couldnt",  "shouldnt",
          "hardly",  "barely", "rarely",  "without", "lacks",    "lacking",
          "t"};
}

/// Loads a lexicon file: one `token<TAB>polarity` per line, `#` comments.
inline Lexicon load_lexicon(std::istream& in) {
  Lexicon lex;
  lex.negators = default_negators();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("lexicon: missing tab on line " + std::to_string(line_no));
    std::string token = line.substr(0, tab);
    double polarity = std::strtod(line.c_str() + tab + 1, nullptr);
    if (polarity < -1.0 || polarity > 1.0)
      throw std::runtime_error("lexicon: polarity out of [-1,1] on line " +
                               std::to_string(line_no));
    for (char& c : token)
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    lex.entries[token] = polarity;
  }
  return lex;
}

inline Lexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read lexicon " + path);
  return load_lexicon(in);
}

namespace detail {

inline std::vector<std::string> tokenize_lower(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
      cur.push_back(c);
    } else if (c >= 'A' && c <= 'Z') {
      cur.push_back(static_cast<char>(c - 'A' + 'a'));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

}  // namespace detail

/// Mean polarity over matched tokens; a match immediately preceded by a
/// negator flips sign. No matches scores 0. Result clamped to [-1, 1].
inline double score_text(const std::string& text, const Lexicon& lexicon) {
  auto tokens = detail::tokenize_lower(text);
  double sum = 0.0;
  std::size_t matched = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto it = lexicon.entries.find(tokens[i]);
    if (it == lexicon.entries.end()) continue;
    double polarity = it->second;
    if (i > 0 && lexicon.negators.count(tokens[i - 1])) polarity = -polarity;
    sum += polarity;
    ++matched;
  }
  if (matched == 0) return 0.0;
  double score = sum / static_cast<double>(matched);
  return std::clamp(score, -lexicon.intensity_cap, lexicon.intensity_cap);
}

struct ReviewSet {
  std::string listing_id;
  std::vector<std::string> reviews;
};

/// Arithmetic mean of per-review scores; zero reviews scores neutral 0.
inline double listing_sentiment(const ReviewSet& reviews, const Lexicon& lexicon) {
  if (reviews.reviews.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : reviews.reviews) sum += score_text(r, lexicon);
  return sum / static_cast<double>(reviews.reviews.size());
}

/// Loads a reviews CSV with (listing_id, comments) columns and scores each
/// listing by averaging over its reviews.
inline std::map<std::string, double> score_reviews_csv(std::istream& in,
                                                       const Lexicon& lexicon) {
  RawTable t = parse_csv(in);
  int id_ci = t.column_index("listing_id");
  int text_ci = t.column_index("comments");
  if (id_ci < 0 || text_ci < 0)
    throw std::runtime_error("reviews csv: need listing_id and comments columns");
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (std::size_t r = 0; r < t.row_count; ++r) {
    const std::string& id = t.columns[static_cast<std::size_t>(id_ci)].cells[r];
    const std::string& text = t.columns[static_cast<std::size_t>(text_ci)].cells[r];
    auto& [sum, n] = acc[id];
    sum += score_text(text, lexicon);
    ++n;
  }
  std::map<std::string, double> scores;
  for (const auto& [id, sn] : acc)
    scores[id] = sn.first / static_cast<double>(sn.second);
  return scores;
}

inline std::map<std::string, double> score_reviews_csv(const std::string& path,
                                                       const Lexicon& lexicon) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read reviews " + path);
  return score_reviews_csv(in, lexicon);
}

/// Appends the raw (un-normalized) sentiment column; rows whose id is absent
/// from the score map get a neutral 0.
inline Dataset append_sentiment_column(const Dataset& data,
                                       const std::map<std::string, double>& scores,
                                       const std::string& column_name = "review_sentiment") {
  if (data.ids.size() != static_cast<std::size_t>(data.rows()))
    throw std::invalid_argument("append_sentiment_column: dataset rows carry no ids");
  Dataset out;
  out.y = data.y;
  out.ids = data.ids;
  out.feature_names = data.feature_names;
  out.feature_names.push_back(column_name);
  out.X.resize(data.rows(), data.cols() + 1);
  out.X.leftCols(data.cols()) = data.X;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    auto it = scores.find(data.ids[static_cast<std::size_t>(i)]);
    out.X(i, data.cols()) = it == scores.end() ? 0.0 : it->second;
  }
  return out;
}

struct SentimentAttachment {
  SplitDataset data;
  double mean = 0;    // training-split statistics used to normalize the column
  double stddev = 1;
};

/// Appends the sentiment feature to all three splits and z-scores it with
/// training-split statistics, like any other plan feature.
inline SentimentAttachment attach_sentiment(const SplitDataset& splits,
                                            const std::map<std::string, double>& scores) {
  SentimentAttachment out;
  out.data.seed = splits.seed;
  out.data.train = append_sentiment_column(splits.train, scores);
  out.data.val = append_sentiment_column(splits.val, scores);
  out.data.test = append_sentiment_column(splits.test, scores);

  Eigen::Index col = out.data.train.cols() - 1;
  const auto m = static_cast<double>(out.data.train.rows());
  double mean = out.data.train.X.col(col).mean();
  double var = (out.data.train.X.col(col).array() - mean).square().sum() / m;
  double sd = var > 0 ? std::sqrt(var) : 0.0;
  out.mean = mean;
  out.stddev = sd == 0.0 ? 1.0 : sd;
  for (Dataset* d : {&out.data.train, &out.data.val, &out.data.test})
    d->X.col(col) = (d->X.col(col).array() - out.mean) / out.stddev;
  return out;
}

}  // namespace rentfit
