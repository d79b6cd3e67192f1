#pragma once

// Experiment configuration in a TOML subset: [section] headers, key = value
// lines, '#' comments, strings, numbers, booleans and single-line arrays.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tuplenet/data.hpp"
#include "tuplenet/schemes.hpp"
#include "tuplenet/train.hpp"
#include "tuplenet/tuples.hpp"

namespace tuplenet {

class ConfigError : public InvalidArgument {
public:
    ConfigError(const std::string& source, std::size_t line, const std::string& what)
        : InvalidArgument(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
    [[nodiscard]] std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

struct DatasetSection {
    std::string path;          // empty = generate synthetic data
    SynthParams synth;
    int test_block = 3;
    bool crop = false;         // crop to the common length for the sample rate
    bool normalize = true;     // applied after cropping
};

struct PretrainSection {
    std::string scheme = "sce";  // cae | cte | sce
    BankShape shape;
    PretrainConfig config;
    std::size_t arity = 3;                           // sce tuple size
    PairScope scope = PairScope::cross_subject;      // sce/cte pair scope
    bool hydra = true;                               // cte: run the per-subject stage
    std::size_t stage2_epochs = 100;
};

struct TrainSection {
    OptimizerConfig optimizer;
    ModelSpec model;
};

struct EvalSection {
    AggregationMode mode = AggregationMode::avg;
};

struct SweepSection {
    std::string strategy = "grid";  // grid | random
    std::size_t budget = 10;
    std::vector<std::string> log_keys;
    // [train] keys; grid: candidate values, random: [lo, hi].
    std::map<std::string, std::vector<double>> values;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    DatasetSection dataset;
    PretrainSection pretrain;
    TrainSection train;
    EvalSection eval;
    SweepSection sweep;
};

ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

// TUPLENET_SEED, when set, replaces the seed.
void apply_env_overrides(ExperimentConfig& cfg);

// Every field, including defaults; parse_config(to_toml(c)) reproduces c.
std::string to_toml(const ExperimentConfig& cfg);

// Short hex digest of the resolved config text.
std::string config_hash(const ExperimentConfig& cfg);

// Sets [train] keys from a sweep point.
void apply_train_values(ExperimentConfig& cfg, const SweepPoint& point);
std::vector<SweepPoint> sweep_points(const ExperimentConfig& cfg);

}  // namespace tuplenet
