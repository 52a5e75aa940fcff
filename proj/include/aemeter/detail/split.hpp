#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace aemeter {

template <typename T>
Split<T> split_train_test(const std::vector<T>& records, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("split_train_test: test_fraction must be in (0,1)");
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng() % i]);
  }
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(records.size())));
  Split<T> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_test ? out.test : out.train).push_back(records[order[i]]);
  }
  return out;
}

}  // namespace aemeter
