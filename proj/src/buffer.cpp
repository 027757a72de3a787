#include "delta/buffer.hpp"

#include <algorithm>
#include <numeric>

#include "delta/error.hpp"

namespace delta {

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t seed)
    : capacity_(capacity), rng_(mix_seed(seed, 0x627566ULL)) {
  if (capacity == 0) throw ConfigError("buffer_size", "must be at least 1");
  slots_.reserve(capacity);
}

void ReplayBuffer::reservoir_update(std::span<const LabeledVector> batch) {
  for (const auto& sample : batch) {
    ++seen_;
    if (slots_.size() < capacity_) {
      slots_.push_back(sample);
      continue;
    }
    std::uniform_int_distribution<std::uint64_t> pick(0, seen_ - 1);
    const std::uint64_t j = pick(rng_);
    if (j < capacity_) slots_[j] = sample;
  }
}

Samples ReplayBuffer::random_retrieve(std::size_t count) {
  const std::size_t n = std::min(count, slots_.size());
  if (n == 0) return {};
  std::vector<std::size_t> idx(slots_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: the first n positions become the draw.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng_)]);
  }
  Samples out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(slots_[idx[i]]);
  return out;
}

std::uint64_t ReplayBuffer::content_hash() const {
  std::uint64_t h = mix_seed(seen_, slots_.size());
  for (const auto& s : slots_) {
    h = mix_seed(h, s.label);
    h = delta::content_hash(Matrix(1, s.features.size(), s.features), h);
  }
  return h;
}

std::vector<std::size_t> ReplayBuffer::class_histogram() const {
  std::vector<std::size_t> hist;
  for (const auto& s : slots_) {
    if (s.label >= hist.size()) hist.resize(s.label + 1, 0);
    ++hist[s.label];
  }
  return hist;
}

Samples pair_exemplars(std::span<const LabeledVector> input_batch, ReplayBuffer& buffer,
                       const PairingConfig& cfg) {
  return buffer.random_retrieve(cfg.exemplars_per_input * input_batch.size());
}

std::size_t CombinedBatch::count(Origin origin, bool augmented) const {
  return static_cast<std::size_t>(
      std::count_if(provenance.begin(), provenance.end(), [&](const Provenance& p) {
        return p.origin == origin && p.augmented == augmented;
      }));
}

CombinedBatch compose_combined_batch(std::span<const LabeledVector> stream_batch,
                                     std::span<const LabeledVector> exemplars,
                                     Augmenter& augmenter) {
  CombinedBatch g;
  g.samples.reserve(2 * (stream_batch.size() + exemplars.size()));
  g.provenance.reserve(g.samples.capacity());

  auto append = [&](std::span<const LabeledVector> originals, Origin origin) {
    const std::size_t base = g.samples.size();
    const std::size_t n = originals.size();
    Samples views = augmenter(originals);
    for (std::size_t i = 0; i < n; ++i) {
      g.samples.push_back(originals[i]);
      g.provenance.push_back({origin, false, base + n + i});
    }
    for (std::size_t i = 0; i < n; ++i) {
      g.samples.push_back(std::move(views[i]));
      g.provenance.push_back({origin, true, base + i});
    }
  };
  append(stream_batch, Origin::stream);
  append(exemplars, Origin::buffer);
  return g;
}

void write_buffer_snapshot(const std::filesystem::path& path, const ReplayBuffer& buffer) {
  write_csv_dataset(path, buffer.slots());
}

}  // namespace delta
