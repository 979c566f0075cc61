#pragma once

// Balanced task-dataset construction (Algorithm 2) over stored sample pools.

#include "adaptids/ingest.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

namespace adaptids::sampling {

inline constexpr std::size_t kDefaultPoolCap = 5000;

/// A class-pure pool with reservoir bookkeeping.
struct Pool {
    ingest::LabeledDataset data;
    std::uint64_t seen = 0;  // samples ever offered, for reservoir replacement
};

struct SamplePools {
    Pool benign;
    std::map<std::uint32_t, Pool> attacks;  // A_1..A_{t-1} keyed by label
    std::size_t cap = kDefaultPoolCap;       // 0 = unbounded
};

struct ClassDraw {
    std::uint32_t label = 0;
    std::size_t available = 0;
    std::size_t drawn = 0;
    bool with_replacement = false;
};

struct SamplingReport {
    std::size_t t = 0;
    std::size_t s_a = 0;
    std::size_t s_b = 0;
    std::size_t new_benign = 0;       // |B_t|
    std::size_t new_benign_used = 0;  // B_t is subsampled when it exceeds t * s_A
    bool benign_with_replacement = false;
    std::vector<ClassDraw> previous;
};

struct TaskDataset {
    ingest::LabeledDataset data;  // D_t
    SamplingReport report;
    SamplePools pools;            // input pools with A_t appended
};

/// D_t = A_t + s_A draws from every previous attack pool + B_t + s_B benign
/// draws, with s_B = max(0, t * s_A - |B_t|).
TaskDataset build_task_dataset(const ingest::LabeledDataset& raw, const SamplePools& pools,
                               std::uint64_t seed);

/// Offers samples to a pool, keeping at most cap of them (seeded reservoir).
void append_to_pool(Pool& pool, const ingest::LabeledDataset& samples, std::size_t cap,
                    std::uint64_t seed);

/// Directory of dataset containers plus manifest.json.
void save_pools(const std::filesystem::path& dir, const SamplePools& pools);
SamplePools load_pools(const std::filesystem::path& dir);

}  // namespace adaptids::sampling
