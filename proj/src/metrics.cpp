#include "embrank/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "embrank/errors.hpp"

namespace embrank {

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("roc_auc: size mismatch");
  const std::size_t n = scores.size();

  std::uint64_t n_pos = 0, n_neg = 0;
  for (int y : labels) {
    if (y == 1)
      ++n_pos;
    else if (y == 0)
      ++n_neg;
    else
      throw DataError("roc_auc: label outside {0,1}");
  }
  if (n_pos == 0 || n_neg == 0)
    throw InvalidArgument("roc_auc: need at least one positive and one negative");

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return scores[a] < scores[b]; });

  // Doubled average ranks stay integral under ties: tied block [lo, hi]
  // (0-based) gets 2*avg_rank = lo + hi + 2.
  std::vector<std::uint64_t> rank2(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const std::uint64_t doubled = i + j + 2;
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = doubled;
    i = j + 1;
  }

  std::uint64_t pos_rank2_sum = 0;
  for (std::size_t k = 0; k < n; ++k)
    if (labels[k] == 1) pos_rank2_sum += rank2[k];

  // 2U = sum(2*ranks of positives) - n_pos*(n_pos+1); AUC = 2U / (2*n_pos*n_neg).
  const std::uint64_t two_u = pos_rank2_sum - n_pos * (n_pos + 1);
  return static_cast<double>(two_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double quantile(std::vector<double> samples, double q) {
  if (samples.empty()) return 0.0;
  std::sort(samples.begin(), samples.end());
  const double pos = q * static_cast<double>(samples.size());
  std::size_t idx = pos <= 0.0 ? 0 : static_cast<std::size_t>(std::ceil(pos)) - 1;
  if (idx >= samples.size()) idx = samples.size() - 1;
  return samples[idx];
}

}  // namespace embrank
