#pragma once

// ROC sweeps, AUC, operating thresholds and the result table layout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqnd/common.hpp"
#include "seqnd/corpus.hpp"

namespace seqnd {

/// Higher score means more novel.
struct ScoredLabel {
  double score = 0.0;
  bool novel = false;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // predict novel iff score >= threshold
};

namespace detail {

struct Sweep {
  std::vector<std::uint64_t> fp, tp;  // cumulative counts, starting at 0
  std::vector<double> thresholds;     // +inf first
  std::uint64_t positives = 0, negatives = 0;
};

inline Sweep sweep(std::vector<ScoredLabel> s) {
  std::sort(s.begin(), s.end(), [](const ScoredLabel& a, const ScoredLabel& b) { return a.score > b.score; });
  Sweep sw;
  sw.fp.push_back(0);
  sw.tp.push_back(0);
  sw.thresholds.push_back(std::numeric_limits<double>::infinity());
  std::uint64_t fp = 0, tp = 0;
  for (std::size_t i = 0; i < s.size();) {
    const double thr = s[i].score;
    for (; i < s.size() && s[i].score == thr; ++i) (s[i].novel ? tp : fp) += 1;
    sw.fp.push_back(fp);
    sw.tp.push_back(tp);
    sw.thresholds.push_back(thr);
  }
  sw.positives = tp;
  sw.negatives = fp;
  return sw;
}

inline void require_both_classes(const Sweep& sw) {
  if (sw.positives == 0 || sw.negatives == 0) throw InvalidArgument("AUC needs both normal and novel samples");
}

}  // namespace detail

inline std::vector<RocPoint> roc_curve(const std::vector<ScoredLabel>& scores) {
  auto sw = detail::sweep(scores);
  detail::require_both_classes(sw);
  std::vector<RocPoint> out;
  for (std::size_t i = 0; i < sw.fp.size(); ++i)
    out.push_back({static_cast<double>(sw.fp[i]) / static_cast<double>(sw.negatives),
                   static_cast<double>(sw.tp[i]) / static_cast<double>(sw.positives), sw.thresholds[i]});
  return out;
}

/// Trapezoidal area under the ROC sweep. Accumulated in integer units of
/// 1/(2·P·N), so it equals the Mann-Whitney statistic with half-credited
/// ties exactly.
inline double auc(const std::vector<ScoredLabel>& scores) {
  auto sw = detail::sweep(scores);
  detail::require_both_classes(sw);
  std::uint64_t twice_area = 0;
  for (std::size_t i = 1; i < sw.fp.size(); ++i) twice_area += (sw.fp[i] - sw.fp[i - 1]) * (sw.tp[i] + sw.tp[i - 1]);
  return static_cast<double>(twice_area) / (2.0 * static_cast<double>(sw.positives) * static_cast<double>(sw.negatives));
}

/// Threshold maximizing Youden's J = tpr - fpr; the highest such threshold
/// wins ties.
inline double youden_threshold(const std::vector<ScoredLabel>& scores) {
  auto roc = roc_curve(scores);
  std::size_t best = 0;
  for (std::size_t i = 1; i < roc.size(); ++i)
    if (roc[i].tpr - roc[i].fpr > roc[best].tpr - roc[best].fpr) best = i;
  return roc[best].threshold;
}

struct OperatingPoint {
  double threshold = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};

inline OperatingPoint operating_point(const std::vector<ScoredLabel>& scores, double threshold) {
  std::size_t tp = 0, pos = 0, tn = 0, neg = 0;
  for (const auto& s : scores) {
    if (s.novel) {
      ++pos;
      tp += s.score >= threshold;
    } else {
      ++neg;
      tn += s.score < threshold;
    }
  }
  return {threshold, pos ? static_cast<double>(tp) / static_cast<double>(pos) : 0.0,
          neg ? static_cast<double>(tn) / static_cast<double>(neg) : 0.0};
}

struct ClusterRow {
  std::size_t cluster = 0;
  std::size_t size = 0;
  std::optional<double> auc;         // undefined when a class is missing
  std::optional<double> global_auc;
};

struct EvalReport {
  std::string method;
  std::vector<RocPoint> roc;
  double auc = 0.0;
  double threshold = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  std::string threshold_policy;
  std::vector<ClusterRow> per_cluster;
};

/// AUC over `test`; the operating threshold is chosen by Youden's J on
/// `validation` when given, otherwise on `test` itself.
inline EvalReport evaluate(const std::vector<ScoredLabel>& test, const std::vector<ScoredLabel>& validation = {},
                           std::string method = "") {
  EvalReport r;
  r.method = std::move(method);
  r.roc = roc_curve(test);
  r.auc = auc(test);
  if (!validation.empty()) {
    r.threshold = youden_threshold(validation);
    r.threshold_policy = "youden-validation";
  } else {
    r.threshold = youden_threshold(test);
    r.threshold_policy = "youden-test";
  }
  auto op = operating_point(test, r.threshold);
  r.sensitivity = op.sensitivity;
  r.specificity = op.specificity;
  return r;
}

/// AUC, or nullopt when either class is absent.
inline std::optional<double> auc_if_defined(const std::vector<ScoredLabel>& scores) {
  bool pos = false, neg = false;
  for (const auto& s : scores) (s.novel ? pos : neg) = true;
  if (!pos || !neg) return std::nullopt;
  return auc(scores);
}

inline nlohmann::json threshold_json(double t) {
  if (std::isinf(t)) return t > 0 ? "inf" : "-inf";
  return t;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json roc = nlohmann::json::array();
  for (const auto& p : r.roc) roc.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}, {"threshold", threshold_json(p.threshold)}});
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : r.per_cluster) {
    nlohmann::json row = {{"cluster", c.cluster}, {"size", c.size}};
    row["auc"] = c.auc ? nlohmann::json(*c.auc) : nlohmann::json("undefined");
    row["global_auc"] = c.global_auc ? nlohmann::json(*c.global_auc) : nlohmann::json("undefined");
    rows.push_back(std::move(row));
  }
  return {{"method", r.method},
          {"auc", r.auc},
          {"sensitivity", r.sensitivity},
          {"specificity", r.specificity},
          {"threshold", threshold_json(r.threshold)},
          {"threshold_policy", r.threshold_policy},
          {"roc", roc},
          {"per_cluster", rows}};
}

/// Method / AUC / Sens. / Spec. table.
inline std::string format_table(const std::vector<EvalReport>& reports) {
  std::size_t width = 6;
  for (const auto& r : reports) width = std::max(width, r.method.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width) + 2) << "Method" << std::setw(7) << "AUC" << std::setw(7)
     << "Sens." << "Spec." << '\n';
  os << std::string(width + 2 + 7 + 7 + 5, '-') << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& r : reports)
    os << std::left << std::setw(static_cast<int>(width) + 2) << r.method << std::setw(7) << r.auc << std::setw(7)
       << r.sensitivity << r.specificity << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Splits

struct Split {
  std::vector<std::size_t> train, validation, test;
};

/// Label-stratified split with the given train/validation fractions; the
/// remainder goes to test.
inline Split stratified_split(const Corpus& corpus, double train_frac = 0.7, double validation_frac = 0.15,
                              std::uint64_t seed = 0) {
  if (train_frac < 0.0 || validation_frac < 0.0 || train_frac + validation_frac > 1.0)
    throw InvalidArgument("split fractions must be non-negative and sum to at most 1");
  Rng rng(seed);
  Split sp;
  for (Label l : {Label::Normal, Label::Novel, Label::Unlabeled}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < corpus.size(); ++i)
      if (corpus.sequences[i].label == l) idx.push_back(i);
    shuffle_in_place(idx, rng);
    const auto n = static_cast<double>(idx.size());
    const auto n_train = static_cast<std::size_t>(std::round(n * train_frac));
    const auto n_val = std::min(idx.size() - n_train, static_cast<std::size_t>(std::round(n * validation_frac)));
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < n_train ? sp.train : i < n_train + n_val ? sp.validation : sp.test).push_back(idx[i]);
  }
  for (auto* v : {&sp.train, &sp.validation, &sp.test}) std::sort(v->begin(), v->end());
  return sp;
}

}  // namespace seqnd
