#pragma once

#include <span>
#include <vector>

namespace embrank {

// ROC AUC via the rank statistic: probability that a random positive outscores
// a random negative, ties counting 1/2. Tied scores get averaged ranks; the
// numerator and denominator are exact integers, so the result matches
// brute-force pairwise counting bit for bit. Throws InvalidArgument unless
// both classes are present; throws DataError on labels outside {0,1}.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Nearest-rank quantile (q in [0,1]) of an unsorted sample; empty -> 0.
double quantile(std::vector<double> samples, double q);

}  // namespace embrank
