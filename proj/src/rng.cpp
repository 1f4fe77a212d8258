#include "i2i/rng.hpp"

namespace i2i {

namespace {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

Rng make_stream(std::uint64_t master_seed, std::string_view stream, std::uint64_t index) {
  const std::uint64_t name = fnv1a(stream);
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(name),        static_cast<std::uint32_t>(name >> 32),
                    static_cast<std::uint32_t>(index),       static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

std::vector<double> normal_values(Rng& rng, std::size_t count, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> out(count);
  for (auto& v : out) v = dist(rng);
  return out;
}

Tensor normal_tensor(Rng& rng, Shape shape, double stddev, bool requires_grad) {
  auto values = normal_values(rng, shape_numel(shape), stddev);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor uniform_tensor(Rng& rng, Shape shape, double lo, double hi, bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

}  // namespace i2i
