#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "i2i/tensor.hpp"

namespace i2i {

using Rng = std::mt19937_64;

/// Independent stream derived from (master seed, stream name, index). Streams
/// never share state, so drawing from one cannot shift another.
Rng make_stream(std::uint64_t master_seed, std::string_view stream, std::uint64_t index = 0);

std::vector<double> normal_values(Rng& rng, std::size_t count, double stddev = 1.0);
Tensor normal_tensor(Rng& rng, Shape shape, double stddev = 1.0, bool requires_grad = false);
Tensor uniform_tensor(Rng& rng, Shape shape, double lo, double hi, bool requires_grad = false);

}  // namespace i2i
