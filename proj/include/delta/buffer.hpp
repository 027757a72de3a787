#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "delta/stream.hpp"

namespace delta {

/// Fixed-capacity exemplar memory with reservoir update and uniform retrieval.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::uint64_t seed);

  /// Reservoir sampling (Algorithm R): the n-th offered sample is appended
  /// while n ≤ capacity, otherwise it replaces a uniformly chosen slot with
  /// probability capacity / n.
  void reservoir_update(std::span<const LabeledVector> batch);

  /// min(count, size()) stored samples, uniformly without replacement.
  /// Contents are unchanged; only the generator advances.
  Samples random_retrieve(std::size_t count);

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return slots_.size(); }
  std::uint64_t seen_count() const noexcept { return seen_; }
  const Samples& slots() const noexcept { return slots_; }

  /// Hash of stored samples and seen_count (generator state excluded).
  std::uint64_t content_hash() const;

  /// Per-class counts of stored samples; vector sized to the largest label + 1.
  std::vector<std::size_t> class_histogram() const;

 private:
  std::size_t capacity_;
  std::uint64_t seen_ = 0;
  Samples slots_;
  std::mt19937_64 rng_;
};

struct PairingConfig {
  /// Exemplars retrieved per incoming stream sample.
  std::size_t exemplars_per_input = 1;
};

/// Retrieves m·|input| exemplars (clamped to occupancy).
Samples pair_exemplars(std::span<const LabeledVector> input_batch, ReplayBuffer& buffer,
                       const PairingConfig& cfg);

enum class Origin : std::uint8_t { stream, buffer };

struct Provenance {
  Origin origin = Origin::stream;
  bool augmented = false;
  /// Index in the combined batch of the other view of the same sample.
  std::size_t partner = 0;
};

/// G_t: stream inputs, their augmented views, retrieved exemplars and their
/// augmented views, in that order.
struct CombinedBatch {
  Samples samples;
  std::vector<Provenance> provenance;

  std::size_t size() const noexcept { return samples.size(); }
  std::size_t count(Origin origin, bool augmented) const;
};

CombinedBatch compose_combined_batch(std::span<const LabeledVector> stream_batch,
                                     std::span<const LabeledVector> exemplars,
                                     Augmenter& augmenter);

/// Dumps the stored samples as label,features... rows.
void write_buffer_snapshot(const std::filesystem::path& path, const ReplayBuffer& buffer);

}  // namespace delta
