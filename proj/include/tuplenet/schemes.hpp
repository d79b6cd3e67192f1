#pragma once

// Pre-training schemes for the first convolution layer:
//   * convolutional auto-encoding with tied de-convolution (CAE)
//   * cross-trial encoding: reconstruct a different same-class trial (CTE),
//     optionally with per-subject hydra pathways
//   * similarity-constraint encoding over trial tuples (SCE)

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tuplenet/data.hpp"
#include "tuplenet/hydra.hpp"
#include "tuplenet/model.hpp"
#include "tuplenet/optim.hpp"
#include "tuplenet/tuples.hpp"

namespace tuplenet {

struct BankShape {
    std::size_t filters = 1;
    std::size_t width = 1;
    std::size_t channels = 64;
    Activation activation = Activation::tanh;
};

enum class TupleLoss { softmax_nll, margin_hinge };
TupleLoss tuple_loss_from_string(const std::string& s);

struct PretrainConfig {
    OptimizerConfig optimizer{0.01, 0.9, 0.99, 0.0, 128, 1000, 0.0};
    std::size_t patience = 20;       // epochs without improvement before stopping
    double min_improvement = 1e-6;   // relative improvement that resets patience
    std::size_t batches_per_epoch = 0;  // 0 = one full shuffled pass
    std::size_t eval_limit = 0;      // tuples/pairs used for the per-epoch error, 0 = all
    std::uint64_t seed = 1;
    double init_scale = 0.0;         // 0 = 1/sqrt(w*c)
    HydraStrategy strategy = HydraStrategy::masked_all;
    TupleLoss tuple_loss = TupleLoss::softmax_nll;
};

struct EpochLog {
    std::size_t epoch = 0;
    double loss = 0.0;       // full training error after this epoch
    double best_loss = 0.0;  // best so far (non-increasing)
    double accuracy = 0.0;   // constraint accuracy (SCE only)
};

struct PretrainResult {
    ConvFilterBank bank;
    std::vector<EpochLog> history;
    double best_loss = 0.0;
    std::size_t best_epoch = 0;  // 0 = initialization
    double constraint_accuracy = 0.0;
};

// --- convolutional auto-encoder -------------------------------------------

struct ReconstructionMetrics {
    double msre = 0.0;
    double mcc = 0.0;
};

Tensor cae_reconstruct(const ConvFilterBank& bank, const Tensor& input);
ReconstructionMetrics cae_evaluate(const ConvFilterBank& bank, const TrialStore& store);

// Trials of differing length are zero-padded to the longest one.
PretrainResult cae_train(const TrialStore& store, const ConvFilterBank& init, const PretrainConfig& cfg);
PretrainResult cae_train(const TrialStore& store, const BankShape& shape, const PretrainConfig& cfg);
ConvFilterBank cae_adapt_individual(const ConvFilterBank& global, const TrialStore& store, const std::string& subject,
                                    const PretrainConfig& cfg);

// --- cross-trial encoder ----------------------------------------------------

// Loss for one pair: -(1/N) sum recon(a) . b over N samples.
double cte_pair_loss(const ConvFilterBank& bank, const Tensor& input, const Tensor& target);

PretrainResult cte_train_stage1(const TrialStore& store, const TupleIndex& pairs, const ConvFilterBank& init,
                                const PretrainConfig& cfg);
PretrainResult cte_train_stage1(const TrialStore& store, const TupleIndex& pairs, const BankShape& shape,
                                const PretrainConfig& cfg);
// Continues training a copy of the stage-1 bank on one subject's within-subject pairs.
ConvFilterBank cte_adapt_individual(const ConvFilterBank& global, const TrialStore& store, const std::string& subject,
                                    const PretrainConfig& cfg);

struct HydraResult {
    HydraLayer layer;
    std::vector<EpochLog> history;
    double best_loss = 0.0;
    std::size_t best_epoch = 0;
};

// Encoder pathway chosen by the input trial's subject, decoder pathway by the
// target trial's subject; both use the same per-subject weights.
HydraResult cte_train_stage2(const TrialStore& store, const TupleIndex& cross_pairs,
                             const std::map<std::string, ConvFilterBank>& init, const PretrainConfig& cfg);
double cte_hydra_loss(const HydraLayer& layer, const TrialStore& store, const TupleIndex& pairs, std::size_t limit = 0);

// One stage-2 mini-batch step (forward, backward, accumulate); returns mean loss.
// Exposed for routing and strategy-equivalence checks.
double cte_hydra_batch_gradients(HydraLayer& layer, const TrialStore& store, const std::vector<TupleEntry>& batch);

// --- similarity-constraint encoder -------------------------------------------

// score[i] = <f(ref), f(companion_i)> for the k-1 companions.
Tensor sce_forward(const ConvFilterBank& encoder, std::span<const Tensor> tuple);
// Constraint holds iff score[0] is strictly greater than every other score.
bool sce_constraint_satisfied(std::span<const float> scores);

struct SceEvaluation {
    double loss = 0.0;
    double constraint_accuracy = 0.0;
    std::size_t evaluated = 0;
};
SceEvaluation sce_evaluate(const ConvFilterBank& encoder, const TrialStore& store, const TupleIndex& tuples,
                           TupleLoss loss = TupleLoss::softmax_nll, std::size_t limit = 0);

// Mini-batch gradient of the mean tuple loss w.r.t. the encoder weights.
// Returns the mean loss.
double sce_batch_gradients(Parameter& weights, Activation act, std::size_t stride, const TrialStore& store,
                           const std::vector<TupleEntry>& batch, TupleLoss loss);

PretrainResult sce_train(const TrialStore& store, const TupleIndex& tuples, const ConvFilterBank& init,
                         const PretrainConfig& cfg);
PretrainResult sce_train(const TrialStore& store, const TupleIndex& tuples, const BankShape& shape,
                         const PretrainConfig& cfg);

// --- filter export ---------------------------------------------------------------

// One row per (filter, time offset): filter_index, time_offset, then one
// column per input channel.
void write_filter_csv(const std::filesystem::path& path, const ConvFilterBank& bank);

}  // namespace tuplenet
