#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Core>

namespace dptrav {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based stream splitting: the stream for (seed, k1, k2, ...) is a
/// pure function of the key path, so adding keys elsewhere never shifts it.
///   h0 = splitmix64(seed);  h_{i+1} = splitmix64(h_i ^ splitmix64(k_i + 1))
inline std::uint64_t stream_key(std::uint64_t seed,
                                std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t h = splitmix64(seed);
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 1));
  return h;
}

inline Rng derive_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  return Rng(stream_key(seed, keys));
}

/// Stream tags used by the pipeline.
enum class StreamTag : std::uint64_t {
  kTrial = 1,
  kStage1 = 2,
  kStage2 = 3,
  kReference = 4,
  kObservation = 5,
  kEndpoints = 6,
  kCodec = 7,
  kVerify = 8,
};

inline std::uint64_t tag(StreamTag t) { return static_cast<std::uint64_t>(t); }

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  return n01(rng);
}

inline void fill_standard_normal(Eigen::Ref<Eigen::VectorXd> out, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = n01(rng);
}

inline Eigen::VectorXd standard_normal_vector(Eigen::Index n, Rng& rng) {
  Eigen::VectorXd v(n);
  fill_standard_normal(v, rng);
  return v;
}

}  // namespace dptrav
