#include "doctest.h"
#include "helpers.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "tuplenet/data.hpp"
#include "tuplenet/evalstat.hpp"

using namespace tuplenet;
using testutil::random_tensor;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("tuplenet_data_" + name);
    fs::remove_all(p);
    return p;
}

Trial make_trial(std::string subject, int stimulus, int block, Tensor data, double rate = 64.0) {
    Trial t;
    t.subject_id = std::move(subject);
    t.stimulus_id = stimulus;
    t.block = block;
    t.sample_rate = rate;
    t.original_length = data.dim(1);
    t.data = std::move(data);
    return t;
}

// Full subject x stimulus x block grid with random content.
TrialStore grid_store(std::size_t subjects, std::size_t classes, std::size_t blocks, std::size_t samples,
                      std::uint64_t seed = 1, std::size_t channels = 2) {
    std::mt19937_64 rng(seed);
    std::vector<Trial> trials;
    for (std::size_t s = 0; s < subjects; ++s)
        for (std::size_t c = 0; c < classes; ++c)
            for (std::size_t b = 1; b <= blocks; ++b)
                trials.push_back(make_trial("S" + std::to_string(s + 1), static_cast<int>(c + 1), static_cast<int>(b),
                                            random_tensor<float>({channels, samples}, rng)));
    return TrialStore(std::move(trials));
}

double pearson(std::span<const float> a, std::span<const double> b) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
    ma /= a.size();
    mb /= b.size();
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_SUITE("store") {
    TEST_CASE("duplicate (subject, stimulus, block) is rejected") {
        std::vector<Trial> t{make_trial("A", 1, 1, Tensor({1, 2})), make_trial("A", 1, 1, Tensor({1, 2}))};
        CHECK_THROWS_AS(TrialStore(std::move(t)), InvalidArgument);
    }

    TEST_CASE("class index follows sorted stimulus ids") {
        std::vector<Trial> t{make_trial("B", 24, 1, Tensor({1, 2})), make_trial("A", 3, 1, Tensor({1, 2})),
                             make_trial("A", 11, 2, Tensor({1, 2}))};
        TrialStore s(std::move(t));
        CHECK(s.stimuli() == std::vector<int>{3, 11, 24});
        CHECK(s.class_of(0) == 2);
        CHECK(s.class_of(1) == 0);
        CHECK(s.subjects() == std::vector<std::string>{"A", "B"});
        CHECK(s.subject_index(0) == 1);
    }

    TEST_CASE("empty manifest loads as an empty store") {
        const auto dir = scratch("empty");
        save_store(dir, TrialStore{});
        CHECK(load_store(dir).empty());
    }

    TEST_CASE("save then load is byte exact") {
        const auto dir = scratch("roundtrip");
        std::mt19937_64 rng(3);
        std::vector<Trial> t;
        for (int i = 0; i < 3; ++i) t.push_back(make_trial("S" + std::to_string(i), 7 + i, 1 + i, random_tensor<float>({3, 5 + i}, rng)));
        t[1].data[2] = -0.0f;
        t[2].data[0] = 1e-38f;
        const TrialStore s(t);
        save_store(dir, s);
        const TrialStore r = load_store(dir);
        REQUIRE(r.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(r[i].subject_id == s[i].subject_id);
            CHECK(r[i].stimulus_id == s[i].stimulus_id);
            CHECK(r[i].block == s[i].block);
            REQUIRE(r[i].data.shape() == s[i].data.shape());
            for (std::size_t j = 0; j < s[i].data.size(); ++j)
                CHECK(std::bit_cast<std::uint32_t>(r[i].data[j]) == std::bit_cast<std::uint32_t>(s[i].data[j]));
        }
        // trials.bin holds exactly the float payload
        CHECK(fs::file_size(dir / "trials.bin") == 4 * (15 + 18 + 21));
    }

    TEST_CASE("short blob names the offending trial") {
        const auto dir = scratch("short");
        std::vector<Trial> t{make_trial("S1", 1, 1, Tensor({64, 440})), make_trial("S2", 4, 2, Tensor({64, 440}))};
        save_store(dir, TrialStore(t));
        fs::resize_file(dir / "trials.bin", fs::file_size(dir / "trials.bin") - 4);
        CHECK_THROWS_WITH_AS(load_store(dir), doctest::Contains("S2"), LoadError);
    }

    TEST_CASE("manifest declaring more samples than stored is an error") {
        const auto dir = scratch("declared");
        save_store(dir, TrialStore({make_trial("S9", 5, 3, Tensor({1, 439}))}));
        std::ifstream in(dir / "manifest.json");
        auto j = nlohmann::json::parse(in);
        j[0]["n_samples"] = 440;
        std::ofstream(dir / "manifest.json") << j.dump();
        CHECK_THROWS_WITH_AS(load_store(dir), doctest::Contains("S9"), LoadError);
    }

    TEST_CASE("non-finite values and missing files are load errors") {
        const auto dir = scratch("nan");
        Tensor d({1, 3});
        d[1] = std::numeric_limits<float>::quiet_NaN();
        save_store(dir, TrialStore({make_trial("S1", 1, 1, d)}));
        CHECK_THROWS_AS(load_store(dir), LoadError);
        fs::remove(dir / "trials.bin");
        CHECK_THROWS_AS(load_store(dir), LoadError);
        CHECK_THROWS_AS(load_store(scratch("missing")), LoadError);
    }

    TEST_CASE("csv import reads metadata from file names") {
        const auto dir = scratch("csv");
        fs::create_directories(dir);
        std::ofstream(dir / "P01_12_3.csv") << "t0,t1,t2\n1,2,3\n4,5,6\n";
        std::ofstream(dir / "P02_1_1.csv") << "0.5,0.25,0\n-1,-2,-3\n";
        const TrialStore s = import_csv_dir(dir, 512.0);
        REQUIRE(s.size() == 2);
        const auto& a = s[s[0].subject_id == "P01" ? 0 : 1];
        CHECK(a.stimulus_id == 12);
        CHECK(a.block == 3);
        CHECK(a.sample_rate == 512.0);
        CHECK(a.data == Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
        std::ofstream(dir / "bad_name.csv") << "1\n";
        CHECK_THROWS_AS(import_csv_dir(dir, 64.0), LoadError);
    }
}

TEST_SUITE("normalize") {
    TEST_CASE("[0, 2, 4] becomes [-1, 0, 1]") {
        const Trial t = normalize_trial(make_trial("A", 1, 1, Tensor({1, 3}, {0, 2, 4})));
        CHECK(t.data == Tensor({1, 3}, {-1, 0, 1}));
    }

    TEST_CASE("normalizing twice changes nothing") {
        std::mt19937_64 rng(5);
        const Trial once = normalize_trial(make_trial("A", 1, 1, random_tensor<float>({4, 50}, rng, 7.0)));
        const Trial twice = normalize_trial(once);
        for (std::size_t i = 0; i < once.data.size(); ++i) CHECK(std::abs(once.data[i] - twice.data[i]) < 1e-6);
    }

    TEST_CASE("random trials: zero mean and unit peak per channel") {
        std::mt19937_64 rng(6);
        for (int rep = 0; rep < 20; ++rep) {
            Tensor d = random_tensor<float>({8, 100}, rng, 50.0);
            for (std::size_t j = 0; j < 100; ++j) d(3, j) = 2.5f;  // constant channel
            std::vector<std::size_t> constant;
            const Trial t = normalize_trial(make_trial("A", 1, 1, d), &constant);
            CHECK(constant == std::vector<std::size_t>{3});
            for (std::size_t ch = 0; ch < 8; ++ch) {
                double mean = 0, peak = 0;
                for (std::size_t j = 0; j < 100; ++j) {
                    mean += t.data(ch, j);
                    peak = std::max(peak, double(std::abs(t.data(ch, j))));
                }
                CHECK(std::abs(mean / 100) < 1e-5);
                CHECK((peak == 0.0 || std::abs(peak - 1.0) < 1e-6));
                if (ch == 3) CHECK(peak == 0.0);
            }
        }
    }
}

TEST_SUITE("crop and pad") {
    TEST_CASE("crop lengths follow the sample rate") {
        CHECK(crop_length_for_rate(64) == 440);
        CHECK(crop_length_for_rate(512) == 3520);
        CHECK(64 * crop_length_for_rate(64) == 28160);
        CHECK(64 * crop_length_for_rate(512) == 225280);
    }

    TEST_CASE("cropping real-rate stores") {
        std::vector<Trial> a{make_trial("A", 1, 1, Tensor({2, 500})), make_trial("A", 2, 1, Tensor({2, 440}))};
        const TrialStore c = crop_trials(TrialStore(a), 64);
        for (const auto& t : c) CHECK(t.data.dim(1) == 440);
        CHECK(c[1].data == a[1].data);
        CHECK(c[0].original_length == 500);

        std::vector<Trial> b{make_trial("A", 1, 1, Tensor({1, 4000}), 512)};
        CHECK(crop_trials(TrialStore(b), 512)[0].data.dim(1) == 3520);

        std::vector<Trial> shortt{make_trial("A", 1, 1, Tensor({1, 400}))};
        CHECK_THROWS_AS(crop_trials(TrialStore(shortt), 64), InvalidArgument);
    }

    TEST_CASE("zero padding appends zeros and keeps the original length") {
        const Trial t = make_trial("A", 1, 1, Tensor({1, 3}, {1, 2, 3}));
        const Trial p = zero_pad(t, 5);
        CHECK(p.data == Tensor({1, 5}, {1, 2, 3, 0, 0}));
        CHECK(p.original_length == 3);
        CHECK(zero_pad(t, 3).data == t.data);
        CHECK(msre(p.data, p.data) == 0.0);
        CHECK_THROWS_AS(zero_pad(t, 2), InvalidArgument);
    }

    TEST_CASE("pad to longest") {
        std::vector<Trial> a{make_trial("A", 1, 1, Tensor({2, 7})), make_trial("A", 2, 1, Tensor({2, 4}))};
        const TrialStore p = pad_to_longest(TrialStore(a));
        CHECK(p[0].data.dim(1) == 7);
        CHECK(p[1].data.dim(1) == 7);
        CHECK(p[1].original_length == 4);
    }
}

TEST_SUITE("split") {
    TEST_CASE("full store: 108 test trials and 9 folds of 384/48") {
        const TrialStore s = grid_store(9, 12, 5, 3);
        const SplitPlan plan = make_split(s);
        CHECK(plan.test.size() == 108);
        REQUIRE(plan.folds.size() == 9);
        std::set<std::size_t> test(plan.test.begin(), plan.test.end());
        std::set<std::size_t> all_validation;
        for (const auto& f : plan.folds) {
            CHECK(f.train.size() == 384);
            CHECK(f.validation.size() == 48);
            for (auto i : f.validation) {
                CHECK(s[i].subject_id == f.subject);
                CHECK(all_validation.insert(i).second);  // pairwise disjoint
                CHECK_FALSE(test.count(i));
            }
            for (auto i : f.train) {
                CHECK(s[i].subject_id != f.subject);
                CHECK_FALSE(test.count(i));
            }
        }
        CHECK(all_validation.size() == 432);
        CHECK(plan.training_pool.size() == 432);
        for (auto i : plan.test) CHECK(s[i].block == 3);
    }

    TEST_CASE("missing trials are listed") {
        std::vector<Trial> t = grid_store(2, 2, 5, 2).trials();
        t.erase(t.begin() + 7);  // S1, stimulus 2, block 3
        CHECK_THROWS_WITH_AS(make_split(TrialStore(t)), doctest::Contains("S1"), InvalidArgument);
    }
}

TEST_SUITE("synthetic") {
    TEST_CASE("shape of the benchmark") {
        SynthParams p;
        p.samples = 32;
        const auto ds = synth_generate(p);
        CHECK(ds.store.size() == 540);
        CHECK(ds.store.subjects().size() == 9);
        CHECK(ds.store.num_classes() == 12);
        CHECK(ds.store[0].data.shape() == Shape{64, 32});
        std::set<std::size_t> planted(ds.planted_channels.begin(), ds.planted_channels.end());
        CHECK(planted.size() == 9);
    }

    TEST_CASE("same seed gives bitwise identical stores") {
        SynthParams p;
        p.samples = 16;
        p.seed = 7;
        const auto a = synth_generate(p), b = synth_generate(p);
        REQUIRE(a.store.size() == b.store.size());
        for (std::size_t i = 0; i < a.store.size(); ++i) CHECK(a.store[i].data == b.store[i].data);
        p.seed = 8;
        CHECK_FALSE(synth_generate(p).store[0].data == a.store[0].data);
    }

    TEST_CASE("snr 0 carries no class signal") {
        SynthParams p;
        p.samples = 64;
        p.snr = 0.0;
        const auto ds = synth_generate(p);
        // planted channel correlates with its waveform no better than chance
        double mean_abs_r = 0.0;
        for (std::size_t i = 0; i < ds.store.size(); ++i) {
            const auto& t = ds.store[i];
            const std::size_t ch = ds.planted_channels[ds.store.subject_index(i)];
            mean_abs_r += std::abs(pearson(std::span<const float>(&t.data(ch, 0), 64), ds.waveforms[ds.store.class_of(i)]));
        }
        mean_abs_r /= static_cast<double>(ds.store.size());
        CHECK(mean_abs_r < 0.15);  // E|r| for independent white noise, n = 64, is about 0.1
    }

    TEST_CASE("snr 2: planted channel correlates best with its class waveform") {
        SynthParams p;
        p.samples = 440;
        p.snr = 2.0;
        p.seed = 3;
        const auto ds = synth_generate(p);
        std::size_t wins = 0;
        for (std::size_t i = 0; i < ds.store.size(); ++i) {
            const auto& t = ds.store[i];
            const auto& wave = ds.waveforms[ds.store.class_of(i)];
            const std::size_t planted = ds.planted_channels[ds.store.subject_index(i)];
            double best_other = -2.0;
            double r_planted = 0.0;
            for (std::size_t ch = 0; ch < 64; ++ch) {
                const double r = pearson(std::span<const float>(&t.data(ch, 0), 440), wave);
                if (ch == planted) r_planted = r;
                else best_other = std::max(best_other, r);
            }
            wins += r_planted > best_other;
        }
        CHECK(static_cast<double>(wins) >= 0.99 * static_cast<double>(ds.store.size()));
    }
}
