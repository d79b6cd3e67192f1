#include "doctest.h"
#include "helpers.hpp"

#include <fstream>
#include <numeric>
#include <set>

#include "tuplenet/evalstat.hpp"

using namespace tuplenet;
using testutil::random_tensor;

namespace {

// Exact binomial tail by direct pmf summation in long double.
long double binomial_tail_oracle(unsigned n, unsigned k, long double p) {
    long double total = 0;
    for (unsigned i = k; i <= n; ++i) {
        long double c = 1;
        for (unsigned j = 1; j <= i; ++j) c = c * (n - i + j) / j;
        total += c * std::pow(p, static_cast<long double>(i)) * std::pow(1 - p, static_cast<long double>(n - i));
    }
    return total;
}

// Predicts the true class, or a fixed wrong class for chosen stimuli.
class ScriptedClassifier final : public Classifier {
public:
    ScriptedClassifier(const TrialStore& store, std::map<int, std::size_t> overrides = {})
        : store_(store), overrides_(std::move(overrides)) {}
    [[nodiscard]] std::size_t num_classes() const override { return store_.num_classes(); }
    std::size_t predict(const Trial& t, std::span<const std::size_t> allowed) override {
        const auto& stim = store_.stimuli();
        std::size_t c = static_cast<std::size_t>(std::find(stim.begin(), stim.end(), t.stimulus_id) - stim.begin());
        if (auto it = overrides_.find(t.stimulus_id); it != overrides_.end()) c = it->second;
        if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), c) == allowed.end()) return allowed.back();
        return c;
    }

private:
    const TrialStore& store_;
    std::map<int, std::size_t> overrides_;
};

TrialStore test_block_store() {
    std::vector<Trial> trials;
    for (int s = 0; s < 9; ++s)
        for (int c = 1; c <= 12; ++c) {
            Trial t;
            t.subject_id = "S" + std::to_string(s);
            t.stimulus_id = c;
            t.block = 3;
            t.sample_rate = 64;
            t.data = Tensor({1, 1});
            trials.push_back(std::move(t));
        }
    return TrialStore(std::move(trials));
}

std::vector<std::size_t> all_indices(const TrialStore& s) {
    std::vector<std::size_t> v(s.size());
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

Trial as_trial(Tensor data) {
    Trial t;
    t.subject_id = "S0";
    t.stimulus_id = 1;
    t.block = 1;
    t.data = std::move(data);
    return t;
}

}  // namespace

TEST_SUITE("reconstruction metrics") {
    TEST_CASE("msre examples") {
        std::mt19937_64 rng(1);
        const Tensor x = random_tensor<float>({4, 9}, rng);
        CHECK(msre(x, x) == 0.0);
        CHECK(msre(Tensor({1, 1}, {3.0f}), Tensor({1, 1}, {1.0f})) == 4.0);
        CHECK_THROWS_AS(msre(x, Tensor({4, 8})), ShapeError);
    }

    TEST_CASE("msre matches a two-loop oracle") {
        std::mt19937_64 rng(2);
        for (int rep = 0; rep < 20; ++rep) {
            const Tensor a = random_tensor<float>({5, 13}, rng), b = random_tensor<float>({5, 13}, rng);
            double total = 0;
            for (std::size_t t = 0; t < 13; ++t)
                for (std::size_t c = 0; c < 5; ++c) total += std::pow(double(a(c, t)) - b(c, t), 2);
            CHECK(msre(a, b) == doctest::Approx(total / 13).epsilon(1e-12));
        }
    }

    TEST_CASE("mcc examples") {
        std::mt19937_64 rng(3);
        const Tensor x = random_tensor<float>({3, 20}, rng);
        Tensor neg = x, affine = x;
        for (auto& v : neg.data()) v = -v;
        for (auto& v : affine.data()) v = 2 * v + 3;
        CHECK(mcc(x, x) == doctest::Approx(1.0));
        CHECK(mcc(x, neg) == doctest::Approx(-1.0));
        CHECK(mcc(x, affine) == doctest::Approx(1.0));
    }

    TEST_CASE("mcc: constant channels count as zero and are reported") {
        Tensor x({2, 4}, {1, 2, 3, 4, 5, 5, 5, 5});
        std::size_t constant = 0;
        CHECK(mcc(x, x, &constant) == doctest::Approx(0.5));
        CHECK(constant == 1);
    }

    TEST_CASE("mcc is invariant under positive affine maps per channel") {
        std::mt19937_64 rng(4);
        std::uniform_real_distribution<double> scale(0.1, 5.0), shift(-3, 3);
        for (int rep = 0; rep < 20; ++rep) {
            const Tensor a = random_tensor<float>({4, 30}, rng), b = random_tensor<float>({4, 30}, rng);
            Tensor a2 = a, b2 = b;
            for (std::size_t c = 0; c < 4; ++c) {
                const double sa = scale(rng), ta = shift(rng), sb = scale(rng), tb = shift(rng);
                for (std::size_t t = 0; t < 30; ++t) {
                    a2(c, t) = static_cast<float>(sa * a(c, t) + ta);
                    b2(c, t) = static_cast<float>(sb * b(c, t) + tb);
                }
            }
            CHECK(mcc(a2, b2) == doctest::Approx(mcc(a, b)).epsilon(1e-4));
        }
    }
}

TEST_SUITE("significance") {
    TEST_CASE("k = 0 is certain") {
        CHECK(binomial_p(108, 0, 1.0 / 12) == 1.0);
        CHECK(binomial_p(1, 0, 0.5) == 1.0);
    }

    TEST_CASE("n = 10, p0 = 0.5, k = 8 is 56/1024") {
        // C(10,8) + C(10,9) + C(10,10) = 45 + 10 + 1
        CHECK(binomial_p(10, 8, 0.5) == 56.0 / 1024.0);
        std::size_t enumerated = 0;
        for (unsigned m = 0; m < 1024; ++m) enumerated += __builtin_popcount(m) >= 8;
        CHECK(enumerated == 56);
    }

    TEST_CASE("large n stays accurate") {
        for (unsigned n : {1001u, 1500u, 3000u})
            for (double p : {0.5, 1.0 / 12})
                for (unsigned k : {1u, static_cast<unsigned>(n * p), static_cast<unsigned>(n * p * 1.2)}) {
                    const double oracle = static_cast<double>(binomial_tail_oracle(n, k, p));
                    CHECK(binomial_p(n, k, p) == doctest::Approx(oracle).epsilon(1e-9));
                }
    }

    TEST_CASE("agrees with direct summation") {
        for (unsigned n : {1u, 7u, 18u, 50u, 108u})
            for (double p : {0.5, 1.0 / 12, 0.3})
                for (unsigned k = 0; k <= n; k += std::max(1u, n / 9)) {
                    const double oracle = static_cast<double>(binomial_tail_oracle(n, k, p));
                    CHECK(binomial_p(n, k, p) == doctest::Approx(oracle).epsilon(1e-10));
                }
    }

    TEST_CASE("18 of 18 at chance 0.5") {
        CHECK(binomial_p(18, 18, 0.5) == std::pow(2.0, -18));
    }

    TEST_CASE("19 of 108 at chance 1/12") {
        const double oracle = static_cast<double>(binomial_tail_oracle(108, 19, 1.0L / 12));
        CHECK(binomial_p(108, 19, 1.0 / 12) == doctest::Approx(oracle).epsilon(1e-10));
        CHECK(oracle == doctest::Approx(0.0014687).epsilon(1e-4));
    }

    TEST_CASE("non-increasing in k") {
        for (double p : {0.01, 1.0 / 12, 0.5, 0.9}) {
            double prev = 2.0;
            for (std::size_t k = 0; k <= 108; ++k) {
                const double v = binomial_p(108, k, p);
                CHECK(v <= prev);
                CHECK(v >= 0.0);
                prev = v;
            }
        }
    }

    TEST_CASE("invalid bounds") {
        CHECK_THROWS_AS(binomial_p(10, 11, 0.5), InvalidArgument);
        CHECK_THROWS_AS(binomial_p(10, 3, 0.0), InvalidArgument);
        CHECK_THROWS_AS(binomial_p(10, 3, 1.0), InvalidArgument);
    }

    TEST_CASE("z-test examples") {
        const auto same = two_proportion_z(0.3, 50, 0.3, 80);
        CHECK(same.z == 0.0);
        CHECK(same.p == doctest::Approx(1.0));

        const auto r = two_proportion_z(0.241, 108, 0.148, 108);
        const double pooled = (0.241 + 0.148) / 2;
        const double z = (0.241 - 0.148) / std::sqrt(pooled * (1 - pooled) * (2.0 / 108));
        CHECK(r.z == doctest::Approx(z));
        CHECK(r.p == doctest::Approx(std::erfc(z / std::sqrt(2.0))));
        CHECK(r.p < 0.1);

        const auto s = two_proportion_z(0.148, 108, 0.241, 108);
        CHECK(s.z == doctest::Approx(-r.z));
        CHECK(s.p == doctest::Approx(r.p));
        CHECK_THROWS_AS(two_proportion_z(0.5, 0, 0.5, 10), InvalidArgument);
    }
}

TEST_SUITE("confusion") {
    TEST_CASE("a perfect predictor gives a diagonal matrix over 108 trials") {
        const TrialStore s = test_block_store();
        ScriptedClassifier clf(s);
        const auto m = confusion(clf, s, all_indices(s));
        CHECK(m.total() == 108);
        CHECK(m.trace() == 108);
        CHECK(m.accuracy() == 1.0);
        for (std::size_t i = 0; i < 12; ++i)
            for (std::size_t j = 0; j < 12; ++j) CHECK(m(i, j) == (i == j ? 9u : 0u));
    }

    TEST_CASE("row sums are the per-class trial counts") {
        const TrialStore s = test_block_store();
        ScriptedClassifier clf(s, {{2, 5}, {7, 0}, {12, 0}});
        const auto m = confusion(clf, s, all_indices(s));
        CHECK(m.total() == 108);
        for (auto r : m.row_sums()) CHECK(r == 9);
        CHECK(m(1, 5) == 9);
        CHECK(m.accuracy() == doctest::Approx(81.0 / 108));
        CHECK_THROWS_AS(confusion(clf, s, {}), InvalidArgument);
    }

    TEST_CASE("binary restriction: 18 of 18 correct") {
        const TrialStore s = test_block_store();
        ScriptedClassifier clf(s);
        const auto b = binary_confusion(clf, s, all_indices(s), 0, 1);
        CHECK(b.total() == 18);
        CHECK(b.correct() == 18);
        CHECK(b.p_value() == doctest::Approx(std::pow(2.0, -18)));
    }

    TEST_CASE("binary restriction only considers the two classes' scores") {
        // stimulus 1 is always predicted as class 7, outside the pair {0, 1}
        const TrialStore s = test_block_store();
        ScriptedClassifier clf(s, {{1, 7}});
        const auto b = binary_confusion(clf, s, all_indices(s), 0, 1);
        CHECK(b.total() == 18);
        CHECK(b.counts[0][1] == 9);  // restricted argmax falls back inside the pair
        CHECK(b.counts[1][1] == 9);
    }

    TEST_CASE("binary grid covers the 66 class pairs") {
        const TrialStore s = test_block_store();
        ScriptedClassifier clf(s);
        const auto grid = binary_confusion_grid(clf, s, all_indices(s));
        CHECK(grid.size() == 66);
        std::set<std::pair<std::size_t, std::size_t>> pairs;
        for (const auto& g : grid) {
            CHECK(g.class_a < g.class_b);
            CHECK(g.total() == 18);
            pairs.insert({g.class_a, g.class_b});
        }
        CHECK(pairs.size() == 66);
    }

    TEST_CASE("restricted argmax") {
        const float scores[] = {0.1f, 0.9f, 0.5f, 0.9f};
        CHECK(restricted_argmax(scores, {}) == 1);
        const std::size_t allowed[] = {0, 2};
        CHECK(restricted_argmax(scores, allowed) == 2);
    }

    TEST_CASE("csv export") {
        const TrialStore s = test_block_store();
        ScriptedClassifier clf(s);
        const auto path = std::filesystem::temp_directory_path() / "tuplenet_confusion.csv";
        write_confusion_csv(path, confusion(clf, s, all_indices(s)), s.stimuli());
        std::ifstream in(path);
        std::string line;
        std::size_t lines = 0;
        while (std::getline(in, line)) ++lines;
        CHECK(lines == 13);
    }
}

TEST_SUITE("pca") {
    TEST_CASE("data on one channel gives that channel's unit vector") {
        std::mt19937_64 rng(5);
        std::vector<Trial> t;
        for (int i = 0; i < 4; ++i) {
            Tensor x({6, 50});
            for (std::size_t j = 0; j < 50; ++j) x(2, j) = random_tensor<float>({1}, rng)[0];
            t.push_back(as_trial(x));
            t.back().stimulus_id = i + 1;
        }
        const auto b = pca_fit(TrialStore(t), 1);
        CHECK(std::abs(b.components(0, 2)) == doctest::Approx(1.0));
        CHECK(b.explained_variance_ratio[0] == doctest::Approx(1.0));
    }

    TEST_CASE("isotropic data spreads the variance evenly") {
        std::mt19937_64 rng(6);
        std::normal_distribution<float> n01;
        std::vector<Trial> t;
        const std::size_t T = 4000;
        for (int i = 0; i < 16; ++i) {
            Tensor x({64, T});
            for (auto& v : x.data()) v = n01(rng);
            t.push_back(as_trial(std::move(x)));
            t.back().stimulus_id = i + 1;
        }
        const auto b = pca_fit(TrialStore(t), 64);
        // sample eigenvalues lie in the Marchenko-Pastur band (1 +- sqrt(64 / T_total))^2
        const double c = std::sqrt(64.0 / (16.0 * T));
        for (double r : b.explained_variance_ratio) {
            CHECK(r >= (1 - c) * (1 - c) / 64 * 0.95);
            CHECK(r <= (1 + c) * (1 + c) / 64 * 1.05);
        }
    }

    TEST_CASE("components are orthonormal, ratios sorted, MSRE falls with k") {
        std::mt19937_64 rng(7);
        std::vector<Trial> t;
        for (int i = 0; i < 5; ++i) {
            Tensor x = random_tensor<float>({10, 40}, rng);
            for (std::size_t j = 0; j < 40; ++j) x(0, j) += 3 * x(1, j);
            t.push_back(as_trial(std::move(x)));
            t.back().stimulus_id = i + 1;
        }
        const TrialStore s(t);
        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t k = 1; k <= 10; ++k) {
            const auto b = pca_fit(s, k);
            const Eigen::MatrixXd g = b.components * b.components.transpose();
            CHECK((g - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() < 1e-6);
            for (std::size_t i = 0; i < k; ++i) {
                CHECK(b.explained_variance_ratio[i] >= 0.0);
                CHECK(b.explained_variance_ratio[i] <= 1.0);
                if (i) CHECK(b.explained_variance_ratio[i] <= b.explained_variance_ratio[i - 1]);
            }
            const double m = pca_msre(b, s);
            CHECK(m <= prev + 1e-9);
            prev = m;
        }
        CHECK(prev < 1e-9);  // complete basis reconstructs exactly
        const auto full = pca_fit(s, 10);
        for (const auto& tr : s) {
            const Tensor r = pca_reconstruct(full, tr.data);
            for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i] == doctest::Approx(tr.data[i]).epsilon(1e-4));
        }
    }

    TEST_CASE("too many components is an error") {
        std::vector<Trial> t{as_trial(Tensor({3, 5}))};
        CHECK_THROWS_AS(pca_fit(TrialStore(t), 4), InvalidArgument);
    }
}
