#pragma once

#include <algorithm>
#include <random>
#include <vector>

#include "logicdiff/scheduler.hpp"

namespace oracle {

// Sort everything by (score, position), keep the first k, report by position.
inline std::vector<logicdiff::Position> full_sort_select(std::vector<logicdiff::ScoredPosition> s,
                                                         std::size_t k) {
  std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score < b.score : a.pos < b.pos;
  });
  std::vector<logicdiff::Position> out;
  for (std::size_t i = 0; i < std::min(k, s.size()); ++i) out.push_back(s[i].pos);
  std::sort(out.begin(), out.end());
  return out;
}

// Distinct positions; scores drawn from a coarse grid half the time so ties
// are common.
inline std::vector<logicdiff::ScoredPosition> random_scores(std::mt19937_64& rng) {
  const std::size_t n = std::uniform_int_distribution<std::size_t>(0, 64)(rng);
  std::vector<logicdiff::Position> pool(200);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  std::shuffle(pool.begin(), pool.end(), rng);
  const bool coarse = std::bernoulli_distribution(0.5)(rng);
  std::vector<logicdiff::ScoredPosition> s;
  for (std::size_t i = 0; i < n; ++i) {
    double v = std::uniform_real_distribution<double>(0, 1)(rng);
    if (coarse) v = std::floor(v * 5) / 5;
    s.push_back({pool[i], v});
  }
  return s;
}

}  // namespace oracle
