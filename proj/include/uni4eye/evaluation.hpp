// SPDX-License-Identifier: Apache-2.0
/**
 * @file   evaluation.hpp
 * @brief  Classification metrics: AUC, accuracy, precision, recall, F1 and
 *         Cohen's kappa, reported as percentages, plus bootstrap intervals.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "uni4eye/common.hpp"

namespace uni4eye {

struct PredictionSet {
  std::vector<std::vector<double>> probabilities; ///< N x K, rows sum to 1
  std::vector<int> labels;
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  int num_classes() const {
    return probabilities.empty() ? 0
                                 : static_cast<int>(probabilities[0].size());
  }

  void check() const {
    if (labels.empty())
      throw Error("prediction set is empty");
    if (probabilities.size() != labels.size())
      throw ShapeError("prediction set: probabilities/labels length mismatch");
    const int k = num_classes();
    if (k < 2)
      throw ShapeError("prediction set: need at least two classes");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto &row = probabilities[i];
      if (static_cast<int>(row.size()) != k)
        throw ShapeError("prediction set: ragged probability rows");
      double s = std::accumulate(row.begin(), row.end(), 0.0);
      if (std::abs(s - 1.0) > 1e-6)
        throw Error("prediction set: row " + std::to_string(i) +
                    " does not sum to 1");
      if (labels[i] < 0 || labels[i] >= k)
        throw ShapeError("prediction set: label out of range");
    }
  }
};

/// Index of the largest probability; ties resolve to the lowest index.
inline int argmax(const std::vector<double> &row) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(row.size()); ++c)
    if (row[c] > row[best])
      best = c;
  return best;
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;
  long support = 0;
};

struct MetricsReport {
  std::optional<double> auc; ///< percent; absent when undefined
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double kappa = 0.0;
  std::string averaging = "macro";
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<long>> confusion; ///< [true][predicted]
  std::vector<std::string> warnings;
};

/// Mann-Whitney AUC of `scores` for the positive set; ties count 0.5.
/// Returns nullopt when either group is empty.
inline std::optional<double> rank_auc(const std::vector<double> &scores,
                                      const std::vector<bool> &positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]])
      ++j;
    double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      rank[order[k]] = avg;
    i = j + 1;
  }
  double n_pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (positive[i]) {
      n_pos += 1;
      rank_sum += rank[i];
    }
  double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0)
    return std::nullopt;
  return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

inline std::vector<std::vector<long>> confusion_matrix(const PredictionSet &p) {
  const int k = p.num_classes();
  std::vector<std::vector<long>> cm(k, std::vector<long>(k, 0));
  for (std::size_t i = 0; i < p.size(); ++i)
    ++cm[p.labels[i]][argmax(p.probabilities[i])];
  return cm;
}

/// Cohen's kappa from a confusion matrix; 0 when chance agreement is 1.
inline double cohen_kappa(const std::vector<std::vector<long>> &cm) {
  const std::size_t k = cm.size();
  double n = 0, diag = 0;
  std::vector<double> rows(k, 0), cols(k, 0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      n += cm[i][j];
      rows[i] += cm[i][j];
      cols[j] += cm[i][j];
      if (i == j)
        diag += cm[i][j];
    }
  if (n == 0)
    return 0.0;
  double po = diag / n;
  double pe = 0;
  for (std::size_t c = 0; c < k; ++c)
    pe += rows[c] * cols[c];
  pe /= n * n;
  if (pe >= 1.0)
    return 0.0;
  return (po - pe) / (1.0 - pe);
}

inline MetricsReport compute_metrics(const PredictionSet &p) {
  p.check();
  const int k = p.num_classes();
  MetricsReport r;
  r.confusion = confusion_matrix(p);
  const double n = static_cast<double>(p.size());

  double correct = 0;
  for (int c = 0; c < k; ++c)
    correct += r.confusion[c][c];
  r.accuracy = 100.0 * correct / n;
  r.kappa = 100.0 * cohen_kappa(r.confusion);

  r.per_class.resize(k);
  double auc_sum = 0;
  int auc_count = 0;
  for (int c = 0; c < k; ++c) {
    double tp = r.confusion[c][c], fp = 0, fn = 0;
    for (int o = 0; o < k; ++o)
      if (o != c) {
        fp += r.confusion[o][c];
        fn += r.confusion[c][o];
      }
    auto &m = r.per_class[c];
    m.support = static_cast<long>(tp + fn);
    m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0
               ? 2 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    std::vector<double> scores(p.size());
    std::vector<bool> pos(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      scores[i] = p.probabilities[i][c];
      pos[i] = p.labels[i] == c;
    }
    m.auc = rank_auc(scores, pos);
    if (m.auc) {
      *m.auc *= 100.0;
      if (k > 2 || c == 1) {
        auc_sum += *m.auc;
        ++auc_count;
      }
    }
    r.precision += m.precision;
    r.recall += m.recall;
    r.f1 += m.f1;
  }
  r.precision = 100.0 * r.precision / k;
  r.recall = 100.0 * r.recall / k;
  r.f1 = 100.0 * r.f1 / k;

  std::vector<int> present(p.labels);
  std::sort(present.begin(), present.end());
  present.erase(std::unique(present.begin(), present.end()), present.end());
  if (present.size() < 2) {
    r.warnings.push_back("AUC undefined: only one class present in labels");
  } else if (auc_count > 0) {
    r.auc = auc_sum / auc_count;
    if (k > 2 && auc_count < k)
      r.warnings.push_back("AUC averaged over " + std::to_string(auc_count) +
                           " of " + std::to_string(k) +
                           " classes (others absent from labels)");
  }
  return r;
}

inline std::optional<double> metric_value(const MetricsReport &r,
                                          const std::string &name) {
  if (name == "auc")
    return r.auc;
  if (name == "accuracy")
    return r.accuracy;
  if (name == "precision")
    return r.precision;
  if (name == "recall")
    return r.recall;
  if (name == "f1")
    return r.f1;
  if (name == "kappa")
    return r.kappa;
  throw ConfigError("unknown metric '" + name + "'");
}

struct ConfidenceInterval {
  double low = 0.0;
  double high = 0.0;
  int resamples = 0; ///< resamples that produced a value
  int skipped = 0;   ///< degenerate resamples (metric undefined)
};

/// Type-7 (linear interpolation) quantile of sorted data.
inline double quantile_sorted(const std::vector<double> &v, double q) {
  double h = (static_cast<double>(v.size()) - 1.0) * q;
  auto lo = static_cast<std::size_t>(std::floor(h));
  auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Percentile 95% interval over seeded resamples with replacement.
inline ConfidenceInterval bootstrap_ci(const PredictionSet &p,
                                       const std::string &metric,
                                       int n_resamples, std::uint64_t seed) {
  p.check();
  if (p.size() < 10)
    throw Error("bootstrap_ci: need at least 10 predictions");
  if (n_resamples < 1)
    throw ConfigError("bootstrap_ci: n_resamples must be positive");
  metric_value(MetricsReport{}, metric); // validates the name
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
  std::vector<double> values;
  ConfidenceInterval ci;
  PredictionSet rs;
  rs.class_names = p.class_names;
  for (int b = 0; b < n_resamples; ++b) {
    rs.probabilities.clear();
    rs.labels.clear();
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto j = pick(rng);
      rs.probabilities.push_back(p.probabilities[j]);
      rs.labels.push_back(p.labels[j]);
    }
    auto v = metric_value(compute_metrics(rs), metric);
    if (!v) {
      ++ci.skipped;
      continue;
    }
    values.push_back(*v);
  }
  ci.resamples = static_cast<int>(values.size());
  if (values.empty())
    throw Error("bootstrap_ci: every resample was degenerate");
  std::sort(values.begin(), values.end());
  ci.low = quantile_sorted(values, 0.025);
  ci.high = quantile_sorted(values, 0.975);
  return ci;
}

inline std::string format_percent(std::optional<double> v) {
  if (!v)
    return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", *v);
  return buf;
}

inline double round2(double v) { return std::round(v * 100.0) / 100.0; }

inline nlohmann::json to_json(const MetricsReport &r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto &c : r.per_class)
    per.push_back({{"precision", round2(100 * c.precision)},
                   {"recall", round2(100 * c.recall)},
                   {"f1", round2(100 * c.f1)},
                   {"auc", c.auc ? nlohmann::json(round2(*c.auc))
                                 : nlohmann::json(nullptr)},
                   {"support", c.support}});
  return {{"auc", r.auc ? nlohmann::json(round2(*r.auc)) : nlohmann::json(nullptr)},
          {"accuracy", round2(r.accuracy)},
          {"precision", round2(r.precision)},
          {"recall", round2(r.recall)},
          {"f1", round2(r.f1)},
          {"kappa", round2(r.kappa)},
          {"averaging", r.averaging},
          {"per_class", per},
          {"confusion", r.confusion},
          {"warnings", r.warnings}};
}

/// Aligned six-column table (AUC, Accuracy, Precision, Recall, F1-score,
/// Kappa); one row per named report.
inline std::string
format_table(const std::vector<std::pair<std::string, MetricsReport>> &rows) {
  std::size_t name_w = 6;
  for (const auto &[name, _] : rows)
    name_w = std::max(name_w, name.size());
  auto pad = [](std::string s, std::size_t w, bool left) {
    if (s.size() < w)
      s = left ? s + std::string(w - s.size(), ' ')
               : std::string(w - s.size(), ' ') + s;
    return s;
  };
  const char *cols[] = {"AUC", "Accuracy", "Precision", "Recall", "F1-score",
                        "Kappa"};
  std::string out = pad("Method", name_w, true);
  for (const char *c : cols)
    out += "  " + pad(c, 9, false);
  out += "\n";
  for (const auto &[name, r] : rows) {
    out += pad(name, name_w, true);
    for (auto v : {r.auc, std::optional<double>(r.accuracy),
                   std::optional<double>(r.precision),
                   std::optional<double>(r.recall), std::optional<double>(r.f1),
                   std::optional<double>(r.kappa)})
      out += "  " + pad(format_percent(v), 9, false);
    out += "\n";
  }
  return out;
}

} // namespace uni4eye
