#include "tuplenet/evalstat.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace tuplenet {

double msre(const Tensor& input, const Tensor& recon) {
    require_shape(recon.shape(), input.shape(), "msre");
    if (input.rank() != 2) throw ShapeError("msre expects [channels x samples] tensors");
    double acc = 0.0;
    for (std::size_t i = 0; i < input.size(); ++i) {
        const double d = static_cast<double>(recon[i]) - input[i];
        acc += d * d;
    }
    return acc / static_cast<double>(input.dim(1));
}

double mcc(const Tensor& input, const Tensor& recon, std::size_t* constant_channels) {
    require_shape(recon.shape(), input.shape(), "mcc");
    if (input.rank() != 2) throw ShapeError("mcc expects [channels x samples] tensors");
    const std::size_t nc = input.dim(0), ns = input.dim(1);
    double total = 0.0;
    std::size_t constant = 0;
    for (std::size_t c = 0; c < nc; ++c) {
        const float* x = &input(c, 0);
        const float* y = &recon(c, 0);
        double mx = 0.0, my = 0.0;
        for (std::size_t t = 0; t < ns; ++t) {
            mx += x[t];
            my += y[t];
        }
        mx /= static_cast<double>(ns);
        my /= static_cast<double>(ns);
        double sxy = 0.0, sxx = 0.0, syy = 0.0;
        for (std::size_t t = 0; t < ns; ++t) {
            const double dx = x[t] - mx, dy = y[t] - my;
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
        if (sxx == 0.0 || syy == 0.0) {
            ++constant;
            continue;
        }
        total += sxy / std::sqrt(sxx * syy);
    }
    if (constant_channels) *constant_channels = constant;
    return nc ? total / static_cast<double>(nc) : 0.0;
}

double binomial_p(std::size_t n, std::size_t k, double p0) {
    if (k > n) throw InvalidArgument("binomial_p: successes exceed trials");
    if (!(p0 > 0.0 && p0 < 1.0)) throw InvalidArgument("binomial_p: chance rate must lie in (0, 1)");
    if (k == 0) return 1.0;
    if (n <= 1000) {
        // Direct long-double terms; exact whenever p0 and the coefficients are representable.
        long double c = 1.0L;
        for (std::size_t j = 0; j < k; ++j) c = c * static_cast<long double>(n - j) / static_cast<long double>(j + 1);
        const long double p = p0, q = 1.0L - p;
        std::vector<long double> terms;
        terms.reserve(n - k + 1);
        long double t = c * std::pow(p, static_cast<long double>(k)) * std::pow(q, static_cast<long double>(n - k));
        for (std::size_t i = k; i <= n; ++i) {
            terms.push_back(t);
            t = t * static_cast<long double>(n - i) / static_cast<long double>(i + 1) * p / q;
        }
        long double s = 0.0L;
        for (auto it = terms.rbegin(); it != terms.rend(); ++it) s += *it;
        return std::min(1.0, static_cast<double>(s));
    }
    const double lp = std::log(p0), lq = std::log1p(-p0);
    const double lgn = std::lgamma(static_cast<double>(n) + 1.0);
    std::vector<double> terms;
    terms.reserve(n - k + 1);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = k; i <= n; ++i) {
        const double di = static_cast<double>(i);
        const double lt = lgn - std::lgamma(di + 1.0) - std::lgamma(static_cast<double>(n - i) + 1.0) + di * lp +
                          static_cast<double>(n - i) * lq;
        terms.push_back(lt);
        mx = std::max(mx, lt);
    }
    double s = 0.0;
    for (double lt : terms) s += std::exp(lt - mx);
    return std::min(1.0, std::exp(mx + std::log(s)));
}

ZTest two_proportion_z(double acc_a, std::size_t n_a, double acc_b, std::size_t n_b) {
    if (n_a == 0 || n_b == 0) throw InvalidArgument("two_proportion_z: sample sizes must be positive");
    const double na = static_cast<double>(n_a), nb = static_cast<double>(n_b);
    const double pooled = (acc_a * na + acc_b * nb) / (na + nb);
    const double se = std::sqrt(pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb));
    if (se == 0.0) {
        if (acc_a == acc_b) return {0.0, 1.0};
        throw InvalidArgument("two_proportion_z: zero pooled variance with unequal proportions");
    }
    ZTest r;
    r.z = (acc_a - acc_b) / se;
    r.p = std::erfc(std::abs(r.z) / std::sqrt(2.0));
    return r;
}

// ---------------------------------------------------------------------------

std::size_t ConfusionMatrix::total() const {
    std::size_t s = 0;
    for (auto c : counts_) s += c;
    return s;
}

std::size_t ConfusionMatrix::trace() const {
    std::size_t s = 0;
    for (std::size_t i = 0; i < classes_; ++i) s += (*this)(i, i);
    return s;
}

double ConfusionMatrix::accuracy() const {
    const auto t = total();
    return t ? static_cast<double>(trace()) / static_cast<double>(t) : 0.0;
}

std::vector<std::size_t> ConfusionMatrix::row_sums() const {
    std::vector<std::size_t> r(classes_, 0);
    for (std::size_t i = 0; i < classes_; ++i)
        for (std::size_t j = 0; j < classes_; ++j) r[i] += (*this)(i, j);
    return r;
}

std::size_t restricted_argmax(std::span<const float> scores, std::span<const std::size_t> allowed) {
    if (allowed.empty()) return argmax(scores);
    std::size_t best = allowed[0];
    for (auto c : allowed)
        if (scores[c] > scores[best] || (scores[c] == scores[best] && c < best)) best = c;
    return best;
}

ModelClassifier::ModelClassifier(Model model) : model_(std::move(model)) {
    if (model_.size() == 0 || model_.layer(model_.size() - 1).kind() != "output")
        throw InvalidArgument("classifier model must end with an output layer");
    classes_ = static_cast<const OutputLayer&>(model_.layer(model_.size() - 1)).classes();
}

std::size_t ModelClassifier::predict(const Trial& trial, std::span<const std::size_t> allowed) {
    const auto s = model_.scores(trial.data, trial.subject_id);
    return restricted_argmax(s, allowed);
}

ConfusionMatrix confusion(Classifier& clf, const TrialStore& store, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw InvalidArgument("confusion: empty trial set");
    ConfusionMatrix m(clf.num_classes());
    for (auto i : indices) m.add(store.class_of(i), clf.predict(store[i]));
    return m;
}

double BinaryConfusion::accuracy() const {
    return total() ? static_cast<double>(correct()) / static_cast<double>(total()) : 0.0;
}

double BinaryConfusion::p_value() const { return binomial_p(total(), correct(), 0.5); }

BinaryConfusion binary_confusion(Classifier& clf, const TrialStore& store, const std::vector<std::size_t>& indices,
                                 std::size_t class_a, std::size_t class_b) {
    BinaryConfusion bc;
    bc.class_a = class_a;
    bc.class_b = class_b;
    const std::size_t allowed[2] = {class_a, class_b};
    for (auto i : indices) {
        const auto truth = store.class_of(i);
        if (truth != class_a && truth != class_b) continue;
        const auto pred = clf.predict(store[i], allowed);
        ++bc.counts[truth == class_a ? 0 : 1][pred == class_a ? 0 : 1];
    }
    if (bc.total() == 0) throw InvalidArgument("binary_confusion: no trials of either class");
    return bc;
}

std::vector<BinaryConfusion> binary_confusion_grid(Classifier& clf, const TrialStore& store,
                                                   const std::vector<std::size_t>& indices) {
    std::vector<BinaryConfusion> out;
    const std::size_t c = clf.num_classes();
    for (std::size_t a = 0; a < c; ++a)
        for (std::size_t b = a + 1; b < c; ++b) out.push_back(binary_confusion(clf, store, indices, a, b));
    return out;
}

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& m, const std::vector<int>& labels) {
    std::ofstream out(path);
    out << "true\\predicted";
    for (std::size_t j = 0; j < m.classes(); ++j) out << ',' << (j < labels.size() ? labels[j] : static_cast<int>(j));
    out << '\n';
    for (std::size_t i = 0; i < m.classes(); ++i) {
        out << (i < labels.size() ? labels[i] : static_cast<int>(i));
        for (std::size_t j = 0; j < m.classes(); ++j) out << ',' << m(i, j);
        out << '\n';
    }
    if (!out) throw Error("failed to write " + path.string());
}

void write_binary_grid_csv(const std::filesystem::path& path, const std::vector<BinaryConfusion>& grid,
                           const std::vector<int>& labels) {
    std::ofstream out(path);
    out << "stimulus_a,stimulus_b,a_as_a,a_as_b,b_as_a,b_as_b,n,correct,accuracy,p_value\n";
    out.precision(10);
    for (const auto& bc : grid) {
        out << labels.at(bc.class_a) << ',' << labels.at(bc.class_b) << ',' << bc.counts[0][0] << ','
            << bc.counts[0][1] << ',' << bc.counts[1][0] << ',' << bc.counts[1][1] << ',' << bc.total() << ','
            << bc.correct() << ',' << bc.accuracy() << ',' << bc.p_value() << '\n';
    }
    if (!out) throw Error("failed to write " + path.string());
}

// ---------------------------------------------------------------------------

PcaBasis pca_fit(const TrialStore& store, std::size_t k) {
    if (store.empty()) throw InvalidArgument("pca_fit: empty store");
    const std::size_t nc = store[0].channels();
    if (k == 0 || k > nc)
        throw InvalidArgument("pca_fit: k = " + std::to_string(k) + " must lie in [1, " + std::to_string(nc) + "]");

    Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nc));
    Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nc), static_cast<Eigen::Index>(nc));
    double total = 0.0;
    for (const auto& t : store) {
        if (t.channels() != nc) throw ShapeError("pca_fit: trials have differing channel counts");
        Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
            t.data.data().data(), static_cast<Eigen::Index>(nc), static_cast<Eigen::Index>(t.samples()));
        const Eigen::MatrixXd xd = x.cast<double>();
        sum += xd.rowwise().sum();
        scatter.noalias() += xd * xd.transpose();
        total += static_cast<double>(t.samples());
    }
    PcaBasis basis;
    basis.mean = sum / total;
    const Eigen::MatrixXd cov = scatter / total - basis.mean * basis.mean.transpose();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw Error("pca_fit: eigendecomposition failed");
    // Eigen returns ascending eigenvalues.
    const Eigen::VectorXd evals = es.eigenvalues().cwiseMax(0.0);
    const double trace = evals.sum();
    basis.components.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(nc));
    for (std::size_t i = 0; i < k; ++i) {
        const auto col = static_cast<Eigen::Index>(nc - 1 - i);
        basis.components.row(static_cast<Eigen::Index>(i)) = es.eigenvectors().col(col).transpose();
        basis.explained_variance_ratio.push_back(trace > 0.0 ? evals(col) / trace : 0.0);
    }
    return basis;
}

Tensor pca_reconstruct(const PcaBasis& basis, const Tensor& trial) {
    const auto nc = static_cast<Eigen::Index>(trial.dim(0)), ns = static_cast<Eigen::Index>(trial.dim(1));
    if (nc != basis.components.cols()) throw ShapeError("pca_reconstruct: channel count mismatch");
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(trial.data().data(), nc,
                                                                                              ns);
    Eigen::MatrixXd centered = x.cast<double>().colwise() - basis.mean;
    Eigen::MatrixXd rec = basis.components.transpose() * (basis.components * centered);
    rec.colwise() += basis.mean;
    Tensor out(trial.shape());
    for (Eigen::Index c = 0; c < nc; ++c)
        for (Eigen::Index t = 0; t < ns; ++t) out(static_cast<std::size_t>(c), static_cast<std::size_t>(t)) =
            static_cast<float>(rec(c, t));
    return out;
}

double pca_msre(const PcaBasis& basis, const TrialStore& store) {
    double acc = 0.0;
    for (const auto& t : store) {
        const auto nc = static_cast<Eigen::Index>(t.channels()), ns = static_cast<Eigen::Index>(t.samples());
        Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(t.data.data().data(),
                                                                                                  nc, ns);
        Eigen::MatrixXd centered = x.cast<double>().colwise() - basis.mean;
        Eigen::MatrixXd resid = centered - basis.components.transpose() * (basis.components * centered);
        acc += resid.squaredNorm() / static_cast<double>(ns);
    }
    return store.empty() ? 0.0 : acc / static_cast<double>(store.size());
}

}  // namespace tuplenet
