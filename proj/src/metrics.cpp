#include <algorithm>
#include <cmath>
#include <numeric>

#include "iman/experiment.hpp"

namespace iman {

double auc_score(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ParamError("auc: scores and labels differ in length");
  std::size_t positives = 0, negatives = 0;
  for (int l : labels) {
    if (l == 1)
      ++positives;
    else if (l == 0)
      ++negatives;
    else
      throw ParamError("auc: labels must be 0 or 1");
  }
  if (positives == 0 || negatives == 0)
    throw MetricError("auc undefined: inputs contain a single class");

  // Average ranks over ties; AUC = (rank_sum_pos - P(P+1)/2) / (P*N).
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const double p = static_cast<double>(positives);
  const double n = static_cast<double>(negatives);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n);
}

EvalReport evaluate_scores(std::span<const double> scores, std::span<const int> labels,
                           double threshold) {
  if (scores.size() != labels.size())
    throw ParamError("evaluate: scores and labels differ in length");
  if (scores.empty()) throw ParamError("evaluate: empty inputs");
  EvalReport r;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] > threshold;
    if (labels[i] == 1) {
      predicted ? ++r.tp : ++r.fn;
    } else {
      predicted ? ++r.fp : ++r.tn;
    }
  }
  const double total = static_cast<double>(scores.size());
  r.accuracy = static_cast<double>(r.tp + r.tn) / total;
  r.precision =
      (r.tp + r.fp) > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
  r.recall = (r.tp + r.fn) > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  try {
    r.auc = auc_score(scores, labels);
  } catch (const MetricError&) {
    r.auc = std::nullopt;
  }
  return r;
}

EvalReport evaluate(const ImanModel& model, const Dataset& dataset, Split split,
                    double threshold) {
  const auto& indices = dataset.split_indices(split);
  if (indices.empty()) throw ParamError("evaluate: empty split");
  NoGradGuard no_grad;
  std::vector<double> scores;
  std::vector<int> labels;
  scores.reserve(indices.size());
  labels.reserve(indices.size());
  for (std::size_t i : indices) {
    const PatientSample& sample = dataset.samples[i];
    const Tensor logit = model.forward(sample, PresencePattern::of_sample(sample));
    scores.push_back(sigmoid(logit).item());
    labels.push_back(sample.label);
  }
  return evaluate_scores(scores, labels, threshold);
}

}  // namespace iman
