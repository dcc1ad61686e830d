#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "prunekit/rng.hpp"

namespace prunekit {

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

// Deterministic disjoint shuffle-split. Fractions must sum to <= 1; the test
// split absorbs rounding so every sample lands somewhere when they sum to 1.
inline SplitIndices make_splits(std::size_t n, double train_frac, double val_frac,
                                std::uint64_t seed) {
    if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0 + 1e-12)
        throw std::invalid_argument("make_splits: bad fractions");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    const std::size_t n_train = static_cast<std::size_t>(train_frac * static_cast<double>(n));
    const std::size_t n_val = static_cast<std::size_t>(val_frac * static_cast<double>(n));
    SplitIndices s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    return s;
}

}  // namespace prunekit
