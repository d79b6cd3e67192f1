#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tuplenet/data.hpp"
#include "tuplenet/model.hpp"

namespace tuplenet {

// Squared Euclidean distance over channels, averaged over time samples.
double msre(const Tensor& input, const Tensor& recon);

// Mean over channels of Pearson r between a channel and its reconstruction.
// Constant channels contribute 0 and are counted in constant_channels.
double mcc(const Tensor& input, const Tensor& recon, std::size_t* constant_channels = nullptr);

// P(X >= k) for X ~ Binomial(n, p0), summed exactly in log space.
double binomial_p(std::size_t n, std::size_t k, double p0);

struct ZTest {
    double z = 0.0;
    double p = 1.0;  // two-sided; halve for a one-sided test
};

// Pooled two-proportion z-test.
ZTest two_proportion_z(double acc_a, std::size_t n_a, double acc_b, std::size_t n_b);

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

    void add(std::size_t truth, std::size_t predicted) { ++counts_.at(truth * classes_ + predicted); }
    [[nodiscard]] std::size_t operator()(std::size_t truth, std::size_t predicted) const {
        return counts_[truth * classes_ + predicted];
    }
    [[nodiscard]] std::size_t classes() const { return classes_; }
    [[nodiscard]] std::size_t total() const;
    [[nodiscard]] std::size_t trace() const;
    [[nodiscard]] double accuracy() const;
    [[nodiscard]] std::vector<std::size_t> row_sums() const;

private:
    std::size_t classes_;
    std::vector<std::size_t> counts_;
};

// Anything that predicts a class for a trial; `allowed` restricts the argmax
// to a subset of classes (empty = all classes).
class Classifier {
public:
    virtual ~Classifier() = default;
    [[nodiscard]] virtual std::size_t num_classes() const = 0;
    virtual std::size_t predict(const Trial& trial, std::span<const std::size_t> allowed = {}) = 0;
};

class ModelClassifier final : public Classifier {
public:
    explicit ModelClassifier(Model model);
    [[nodiscard]] std::size_t num_classes() const override { return classes_; }
    std::size_t predict(const Trial& trial, std::span<const std::size_t> allowed = {}) override;
    [[nodiscard]] Model& model() { return model_; }

private:
    Model model_;
    std::size_t classes_;
};

std::size_t restricted_argmax(std::span<const float> scores, std::span<const std::size_t> allowed);

ConfusionMatrix confusion(Classifier& clf, const TrialStore& store, const std::vector<std::size_t>& indices);

struct BinaryConfusion {
    std::size_t class_a = 0, class_b = 0;
    std::size_t counts[2][2] = {{0, 0}, {0, 0}};  // rows = truth (a, b), cols = predicted
    [[nodiscard]] std::size_t total() const { return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1]; }
    [[nodiscard]] std::size_t correct() const { return counts[0][0] + counts[1][1]; }
    [[nodiscard]] double accuracy() const;
    [[nodiscard]] double p_value() const;  // binomial vs chance 0.5
};

BinaryConfusion binary_confusion(Classifier& clf, const TrialStore& store, const std::vector<std::size_t>& indices,
                                 std::size_t class_a, std::size_t class_b);
std::vector<BinaryConfusion> binary_confusion_grid(Classifier& clf, const TrialStore& store,
                                                   const std::vector<std::size_t>& indices);

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& m, const std::vector<int>& labels);
void write_binary_grid_csv(const std::filesystem::path& path, const std::vector<BinaryConfusion>& grid,
                           const std::vector<int>& labels);

// Principal components of the channel covariance of time-concatenated trials.
struct PcaBasis {
    Eigen::MatrixXd components;  // k x channels, orthonormal rows
    Eigen::VectorXd mean;        // per channel
    std::vector<double> explained_variance_ratio;

    [[nodiscard]] std::size_t k() const { return static_cast<std::size_t>(components.rows()); }
};

PcaBasis pca_fit(const TrialStore& store, std::size_t k);
Tensor pca_reconstruct(const PcaBasis& basis, const Tensor& trial);
// Mean per-trial MSRE of the rank-k projection.
double pca_msre(const PcaBasis& basis, const TrialStore& store);

}  // namespace tuplenet
