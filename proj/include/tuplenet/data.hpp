#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tuplenet/tensor.hpp"

namespace tuplenet {

// One multi-channel recording segment (channels x samples).
struct Trial {
    std::string subject_id;
    int stimulus_id = 0;
    int block = 1;
    double sample_rate = 64.0;
    Tensor data;
    std::size_t original_length = 0;

    [[nodiscard]] std::size_t channels() const { return data.dim(0); }
    [[nodiscard]] std::size_t samples() const { return data.dim(1); }
};

struct ManifestRecord {
    std::string subject_id;
    int stimulus_id = 0;
    int block = 1;
    double sample_rate = 64.0;
    std::size_t n_channels = 0;
    std::size_t n_samples = 0;
    std::uint64_t byte_offset = 0;
    std::size_t original_length = 0;
};

// Immutable trial collection. (subject, stimulus, block) is unique.
class TrialStore {
public:
    TrialStore() = default;
    explicit TrialStore(std::vector<Trial> trials);

    [[nodiscard]] std::size_t size() const { return trials_.size(); }
    [[nodiscard]] bool empty() const { return trials_.empty(); }
    [[nodiscard]] const Trial& operator[](std::size_t i) const { return trials_[i]; }
    [[nodiscard]] const std::vector<Trial>& trials() const { return trials_; }
    [[nodiscard]] auto begin() const { return trials_.begin(); }
    [[nodiscard]] auto end() const { return trials_.end(); }

    [[nodiscard]] std::vector<ManifestRecord> manifest() const;

    // Sorted distinct stimulus ids; class index = position in this list.
    [[nodiscard]] const std::vector<int>& stimuli() const { return stimuli_; }
    [[nodiscard]] const std::vector<std::string>& subjects() const { return subjects_; }
    [[nodiscard]] std::size_t num_classes() const { return stimuli_.size(); }
    [[nodiscard]] std::size_t class_of(std::size_t trial) const { return class_of_[trial]; }
    [[nodiscard]] std::size_t subject_index(std::size_t trial) const { return subject_of_[trial]; }
    [[nodiscard]] std::size_t class_index(int stimulus_id) const;

    [[nodiscard]] TrialStore subset(const std::vector<std::size_t>& indices) const;
    [[nodiscard]] std::vector<std::size_t> indices_of_subject(const std::string& subject) const;

private:
    std::vector<Trial> trials_;
    std::vector<int> stimuli_;
    std::vector<std::string> subjects_;
    std::vector<std::size_t> class_of_;
    std::vector<std::size_t> subject_of_;
};

// Directory layout: manifest.json + trials.bin (float32 LE, channel-major).
void save_store(const std::filesystem::path& dir, const TrialStore& store);
TrialStore load_store(const std::filesystem::path& dir);

// Imports <subject>_<stimulus>_<block>.csv files (rows = channels, optional header).
TrialStore import_csv_dir(const std::filesystem::path& dir, double sample_rate);

// Per channel: subtract the mean, divide by the max absolute deviation.
// Constant channels become all-zero and are reported via constant_channels.
Trial normalize_trial(const Trial& trial, std::vector<std::size_t>* constant_channels = nullptr);
TrialStore normalize_store(const TrialStore& store, std::size_t* constant_channel_count = nullptr);

// Samples kept when cropping to the shortest stimulus (440 @ 64 Hz, 3520 @ 512 Hz).
std::size_t crop_length_for_rate(double sample_rate);
TrialStore crop_trials(const TrialStore& store, double sample_rate);
TrialStore crop_to(const TrialStore& store, std::size_t samples);

Trial zero_pad(const Trial& trial, std::size_t target_samples);
TrialStore pad_to_longest(const TrialStore& store);

// Test block plus leave-one-subject-out folds over the remaining blocks.
struct Fold {
    std::string subject;  // validation subject
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

struct SplitPlan {
    std::vector<std::size_t> test;
    std::vector<Fold> folds;
    std::vector<std::size_t> training_pool;  // union of all fold train+validation
};

SplitPlan make_split(const TrialStore& store, int test_block = 3);

// Planted-channel synthetic benchmark.
struct SynthParams {
    std::uint64_t seed = 1;
    std::size_t n_subjects = 9;
    std::size_t n_classes = 12;
    std::size_t channels = 64;
    std::size_t samples = 440;
    std::size_t blocks = 5;
    double snr = 1.0;
    double sample_rate = 64.0;
};

struct SyntheticDataset {
    TrialStore store;
    std::vector<std::size_t> planted_channels;  // per subject, in store.subjects() order
    std::vector<std::vector<double>> waveforms;  // per class
};

SyntheticDataset synth_generate(const SynthParams& params);

}  // namespace tuplenet
