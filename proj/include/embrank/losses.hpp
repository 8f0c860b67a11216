#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "embrank/errors.hpp"

namespace embrank {

// Loss kernels are templated on the scalar type: trainers run them in double
// against float-stored rows, and the gradient tests run them in double against
// central finite differences.

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
T l2_norm(std::span<const T> a) {
  return std::sqrt(dot(a, a));
}

template <typename T>
struct InfoNceResult {
  T loss = 0;
  std::vector<T> grad_anchor;
  std::vector<T> grad_positive;
  std::vector<std::vector<T>> grad_negatives;
};

// InfoNCE with dot-product similarity:
//   loss = -log( exp(a.p/tau) / (exp(a.p/tau) + sum_k exp(a.n_k/tau)) )
// Log-sum-exp stabilized; finite inputs never produce non-finite outputs.
template <typename T>
InfoNceResult<T> infonce_loss(std::span<const T> anchor, std::span<const T> positive,
                              std::span<const std::vector<T>> negatives, T temperature) {
  const std::size_t dim = anchor.size();
  if (positive.size() != dim) throw InvalidArgument("infonce_loss: dimension mismatch");
  if (negatives.empty()) throw InvalidArgument("infonce_loss: at least one negative required");
  for (const auto& n : negatives)
    if (n.size() != dim) throw InvalidArgument("infonce_loss: dimension mismatch");
  if (!(temperature > 0)) throw InvalidArgument("infonce_loss: temperature must be positive");

  const std::size_t k = negatives.size();
  std::vector<T> logits(k + 1);
  logits[0] = dot(anchor, positive) / temperature;
  for (std::size_t i = 0; i < k; ++i)
    logits[i + 1] = dot(anchor, std::span<const T>(negatives[i])) / temperature;

  const T max_logit = *std::max_element(logits.begin(), logits.end());
  T denom = 0;
  std::vector<T> weights(k + 1);
  for (std::size_t i = 0; i <= k; ++i) {
    weights[i] = std::exp(logits[i] - max_logit);
    denom += weights[i];
  }
  for (std::size_t i = 0; i <= k; ++i) weights[i] /= denom;  // softmax

  InfoNceResult<T> out;
  out.loss = -(logits[0] - max_logit) + std::log(denom);
  out.grad_anchor.assign(dim, 0);
  out.grad_positive.assign(dim, 0);
  out.grad_negatives.assign(k, std::vector<T>(dim, 0));

  // dL/ds_p = (w_p - 1)/tau, dL/ds_k = w_k/tau; chain through the dot products.
  const T coef_p = (weights[0] - 1) / temperature;
  for (std::size_t j = 0; j < dim; ++j) {
    out.grad_positive[j] = coef_p * anchor[j];
    out.grad_anchor[j] = coef_p * positive[j];
  }
  for (std::size_t i = 0; i < k; ++i) {
    const T coef_n = weights[i + 1] / temperature;
    for (std::size_t j = 0; j < dim; ++j) {
      out.grad_negatives[i][j] = coef_n * anchor[j];
      out.grad_anchor[j] += coef_n * negatives[i][j];
    }
  }
  return out;
}

// TransE plausibility: -||h + r - t||_2 (higher is more plausible).
template <typename T>
T transe_score(std::span<const T> head, std::span<const T> relation, std::span<const T> tail) {
  if (head.size() != relation.size() || head.size() != tail.size())
    throw InvalidArgument("transe_score: dimension mismatch");
  T acc = 0;
  for (std::size_t j = 0; j < head.size(); ++j) {
    const T d = head[j] + relation[j] - tail[j];
    acc += d * d;
  }
  return -std::sqrt(acc);
}

template <typename T>
struct MarginRankResult {
  T loss = 0;
  std::vector<T> grad_head, grad_relation, grad_tail, grad_neg_head, grad_neg_tail;
};

// Margin ranking loss over a positive triple (h, r, t) and its corruption
// (h', r, t'): max(0, margin + ||h+r-t|| - ||h'+r-t'||). Subgradient 0 at the
// hinge and at zero-norm differences.
template <typename T>
MarginRankResult<T> margin_ranking_loss(std::span<const T> head, std::span<const T> relation,
                                        std::span<const T> tail, std::span<const T> neg_head,
                                        std::span<const T> neg_tail, T margin) {
  const std::size_t dim = head.size();
  if (relation.size() != dim || tail.size() != dim || neg_head.size() != dim ||
      neg_tail.size() != dim)
    throw InvalidArgument("margin_ranking_loss: dimension mismatch");
  if (!(margin > 0)) throw InvalidArgument("margin_ranking_loss: margin must be positive");

  std::vector<T> diff_pos(dim), diff_neg(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    diff_pos[j] = head[j] + relation[j] - tail[j];
    diff_neg[j] = neg_head[j] + relation[j] - neg_tail[j];
  }
  const T d_pos = l2_norm(std::span<const T>(diff_pos));
  const T d_neg = l2_norm(std::span<const T>(diff_neg));

  MarginRankResult<T> out;
  out.grad_head.assign(dim, 0);
  out.grad_relation.assign(dim, 0);
  out.grad_tail.assign(dim, 0);
  out.grad_neg_head.assign(dim, 0);
  out.grad_neg_tail.assign(dim, 0);

  const T pre = margin + d_pos - d_neg;
  if (pre <= 0) return out;  // inactive hinge: loss 0, zero gradients
  out.loss = pre;

  if (d_pos > 0) {
    for (std::size_t j = 0; j < dim; ++j) {
      const T g = diff_pos[j] / d_pos;
      out.grad_head[j] += g;
      out.grad_relation[j] += g;
      out.grad_tail[j] -= g;
    }
  }
  if (d_neg > 0) {
    for (std::size_t j = 0; j < dim; ++j) {
      const T g = diff_neg[j] / d_neg;
      out.grad_neg_head[j] -= g;
      out.grad_relation[j] -= g;
      out.grad_neg_tail[j] += g;
    }
  }
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace embrank
