#pragma once

// Explicit-sum double-precision references for both contrastive terms,
// written straight from the definitions with no shared code paths.

#include <cmath>
#include <vector>

#include "facegcd/loss.hpp"
#include "facegcd/tensor.hpp"

namespace loss_reference {

inline double dot_rows(const facegcd::Tensor& z, int i, int j) {
  const int e = z.dim(1);
  double acc = 0.0;
  for (int c = 0; c < e; ++c)
    acc += static_cast<double>(z.at({i, c})) * static_cast<double>(z.at({j, c}));
  return acc;
}

inline double unsup(const facegcd::Tensor& z, double temperature) {
  const int n = z.dim(0), b = n / 2;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int j = (i + b) % n;
    double denom = 0.0;
    for (int k = 0; k < n; ++k)
      if (k != i) denom += std::exp(dot_rows(z, i, k) / temperature);
    total += -std::log(std::exp(dot_rows(z, i, j) / temperature) / denom);
  }
  return total / n;
}

inline double sup(const facegcd::Tensor& z, const std::vector<int>& labels, double temperature) {
  const int n = z.dim(0);
  double total = 0.0;
  int contributing = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[static_cast<size_t>(i)] < 0) continue;
    std::vector<int> pos;
    for (int p = 0; p < n; ++p)
      if (p != i && labels[static_cast<size_t>(p)] == labels[static_cast<size_t>(i)])
        pos.push_back(p);
    if (pos.empty()) continue;
    double denom = 0.0;
    for (int k = 0; k < n; ++k)
      if (k != i) denom += std::exp(dot_rows(z, i, k) / temperature);
    double anchor = 0.0;
    for (int p : pos) anchor += -std::log(std::exp(dot_rows(z, i, p) / temperature) / denom);
    total += anchor / static_cast<double>(pos.size());
    ++contributing;
  }
  return contributing == 0 ? 0.0 : total / contributing;
}

inline double total(const facegcd::Tensor& z, const std::vector<int>& labels,
                    const facegcd::LossConfig& cfg) {
  return (1.0 - cfg.lambda) * unsup(z, cfg.temperature) + cfg.lambda * sup(z, labels, cfg.temperature);
}

}  // namespace loss_reference
