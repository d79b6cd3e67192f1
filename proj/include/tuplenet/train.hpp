#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tuplenet/data.hpp"
#include "tuplenet/evalstat.hpp"
#include "tuplenet/hydra.hpp"
#include "tuplenet/model.hpp"
#include "tuplenet/optim.hpp"

namespace tuplenet {

struct ConvSpec {
    std::size_t filters = 1;
    std::size_t width = 1;
    std::size_t stride = 1;
    Activation activation = Activation::tanh;
};

// Two time-convolution layers (the second optional), dropout, and a linear
// hinge-loss output layer over the flattened feature maps.
struct ModelSpec {
    std::size_t channels = 64;
    std::size_t samples = 440;
    std::size_t classes = 12;
    ConvSpec layer1{1, 5, 1, Activation::tanh};
    std::optional<ConvSpec> layer2 = ConvSpec{4, 10, 1, Activation::tanh};
};

// A pre-trained first layer, frozen during supervised training.
using PretrainedLayer = std::variant<std::monostate, ConvFilterBank, HydraLayer>;

Model build_model(const ModelSpec& spec, double dropout_rate, std::uint64_t seed,
                  const PretrainedLayer& pretrained = std::monostate{});

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double validation_loss = 0.0;
    double validation_accuracy = 0.0;
};

struct FoldReport {
    std::string fold_id;  // validation subject
    Model best_model;
    std::size_t best_epoch = 0;  // 0 = initialization
    double best_validation_accuracy = 0.0;
    double best_validation_loss = 0.0;
    EpochRecord initial;
    std::vector<EpochRecord> history;  // one entry per epoch run
    std::size_t n_train = 0, n_validation = 0;
};

// Mean squared-hinge loss and accuracy of a model over a set of trials.
std::pair<double, double> evaluate_model(Model& model, const TrialStore& store, const std::vector<std::size_t>& indices);

// Trains `init` on fold.train, keeping the snapshot with the lowest validation
// error (ties broken by lower validation loss).
FoldReport train_supervised(const TrialStore& store, const Fold& fold, const Model& init, const OptimizerConfig& cfg,
                            std::uint64_t seed);

// One report per fold, all folds starting from the same initialization.
// jobs > 1 trains folds concurrently; results do not depend on jobs.
std::vector<FoldReport> crossval_run(const TrialStore& store, const SplitPlan& split, const Model& init,
                                     const OptimizerConfig& cfg, std::uint64_t seed, std::size_t jobs = 1);

enum class AggregationMode { avg, maj };
AggregationMode aggregation_mode_from_string(const std::string& s);
const char* to_string(AggregationMode m);

// Modal class; ties go to the lowest class index.
std::size_t majority_vote(std::span<const std::size_t> votes, std::size_t classes);

class AggregatedModel final : public Classifier {
public:
    AggregatedModel(AggregationMode mode, std::vector<Model> members);

    [[nodiscard]] AggregationMode mode() const { return mode_; }
    [[nodiscard]] std::size_t num_classes() const override { return classes_; }
    std::size_t predict(const Trial& trial, std::span<const std::size_t> allowed = {}) override;

    // avg: the parameter-averaged model; maj: the first member.
    [[nodiscard]] Model& model() { return members_.front(); }
    [[nodiscard]] std::vector<Model>& members() { return members_; }

private:
    AggregationMode mode_;
    std::vector<Model> members_;
    std::size_t classes_ = 0;
};

AggregatedModel aggregate(const std::vector<Model>& models, AggregationMode mode);
AggregatedModel aggregate(const std::vector<FoldReport>& reports, AggregationMode mode);

double test_accuracy(Classifier& clf, const TrialStore& store, const std::vector<std::size_t>& indices);

// --- hyper-parameter sweep -------------------------------------------------

using SweepPoint = std::map<std::string, double>;

struct SweepOutcome {
    std::vector<double> fold_validation_accuracy;
    double test_accuracy_avg = 0.0;
    double test_accuracy_maj = 0.0;
};

struct SweepResult {
    std::size_t rank = 0;  // 1 = best
    std::size_t index = 0; // position in the evaluated list
    SweepPoint point;
    SweepOutcome outcome;
    double median_validation_accuracy = 0.0;
};

struct ParamRange {
    double lo = 0.0, hi = 1.0;
    bool log_scale = false;
    bool integer = false;
};

std::vector<SweepPoint> grid_points(const std::map<std::string, std::vector<double>>& grid);
std::vector<SweepPoint> random_points(const std::map<std::string, ParamRange>& ranges, std::size_t budget,
                                      std::uint64_t seed);

double median(std::vector<double> v);

// Evaluates every point and ranks by median fold validation accuracy
// (descending; ties keep evaluation order).
std::vector<SweepResult> sweep(const std::vector<SweepPoint>& points,
                               const std::function<SweepOutcome(const SweepPoint&)>& evaluate, std::size_t jobs = 1);

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepResult>& results);

}  // namespace tuplenet
