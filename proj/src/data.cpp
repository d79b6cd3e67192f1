#include "tuplenet/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

namespace tuplenet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trial_label(const std::string& subject, int stimulus, int block) {
    return "subject " + subject + ", stimulus " + std::to_string(stimulus) + ", block " + std::to_string(block);
}

void put_f32_le(std::string& out, float v) {
    auto u = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFFu));
}

float get_f32_le(const unsigned char* p) {
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<float>(u);
}

}  // namespace

// ---------------------------------------------------------------------------
// TrialStore
// ---------------------------------------------------------------------------

TrialStore::TrialStore(std::vector<Trial> trials) : trials_(std::move(trials)) {
    std::set<std::tuple<std::string, int, int>> seen;
    std::set<int> stim;
    std::set<std::string> subj;
    for (auto& t : trials_) {
        if (t.data.rank() != 2) throw ShapeError("trial data must be [channels x samples]: " +
                                                 trial_label(t.subject_id, t.stimulus_id, t.block));
        if (!seen.emplace(t.subject_id, t.stimulus_id, t.block).second)
            throw InvalidArgument("duplicate trial (" + trial_label(t.subject_id, t.stimulus_id, t.block) + ")");
        if (t.original_length == 0) t.original_length = t.data.dim(1);
        stim.insert(t.stimulus_id);
        subj.insert(t.subject_id);
    }
    stimuli_.assign(stim.begin(), stim.end());
    subjects_.assign(subj.begin(), subj.end());
    class_of_.reserve(trials_.size());
    subject_of_.reserve(trials_.size());
    for (const auto& t : trials_) {
        class_of_.push_back(class_index(t.stimulus_id));
        subject_of_.push_back(static_cast<std::size_t>(
            std::lower_bound(subjects_.begin(), subjects_.end(), t.subject_id) - subjects_.begin()));
    }
}

std::size_t TrialStore::class_index(int stimulus_id) const {
    auto it = std::lower_bound(stimuli_.begin(), stimuli_.end(), stimulus_id);
    if (it == stimuli_.end() || *it != stimulus_id)
        throw InvalidArgument("unknown stimulus id " + std::to_string(stimulus_id));
    return static_cast<std::size_t>(it - stimuli_.begin());
}

std::vector<ManifestRecord> TrialStore::manifest() const {
    std::vector<ManifestRecord> out;
    std::uint64_t offset = 0;
    for (const auto& t : trials_) {
        out.push_back({t.subject_id, t.stimulus_id, t.block, t.sample_rate, t.channels(), t.samples(), offset,
                       t.original_length});
        offset += static_cast<std::uint64_t>(t.data.size()) * 4;
    }
    return out;
}

TrialStore TrialStore::subset(const std::vector<std::size_t>& indices) const {
    std::vector<Trial> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(trials_.at(i));
    return TrialStore(std::move(out));
}

std::vector<std::size_t> TrialStore::indices_of_subject(const std::string& subject) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < trials_.size(); ++i)
        if (trials_[i].subject_id == subject) out.push_back(i);
    return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

void save_store(const fs::path& dir, const TrialStore& store) {
    fs::create_directories(dir);
    json manifest = json::array();
    std::string blob;
    for (const auto& rec : store.manifest()) {
        json r = {{"subject_id", rec.subject_id},   {"stimulus_id", rec.stimulus_id}, {"block", rec.block},
                  {"sample_rate", rec.sample_rate}, {"n_channels", rec.n_channels},   {"n_samples", rec.n_samples},
                  {"byte_offset", rec.byte_offset}};
        if (rec.original_length != rec.n_samples) r["original_length"] = rec.original_length;
        manifest.push_back(std::move(r));
    }
    for (const auto& t : store)
        for (float v : t.data.data()) put_f32_le(blob, v);

    std::ofstream m(dir / "manifest.json");
    m << manifest.dump(2) << '\n';
    std::ofstream b(dir / "trials.bin", std::ios::binary);
    b.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!m || !b) throw Error("failed to write trial store to " + dir.string());
}

TrialStore load_store(const fs::path& dir) {
    const auto mpath = dir / "manifest.json", bpath = dir / "trials.bin";
    if (!fs::exists(mpath)) throw LoadError("missing " + mpath.string());
    if (!fs::exists(bpath)) throw LoadError("missing " + bpath.string());

    json manifest;
    try {
        std::ifstream in(mpath);
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw LoadError("malformed " + mpath.string() + ": " + e.what());
    }
    if (!manifest.is_array()) throw LoadError(mpath.string() + " must hold a JSON array");

    std::ifstream bin(bpath, std::ios::binary);
    std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

    std::vector<Trial> trials;
    trials.reserve(manifest.size());
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        const auto& r = manifest[i];
        Trial t;
        std::size_t nc = 0, ns = 0;
        std::uint64_t off = 0;
        try {
            t.subject_id = r.at("subject_id").get<std::string>();
            t.stimulus_id = r.at("stimulus_id").get<int>();
            t.block = r.at("block").get<int>();
            t.sample_rate = r.at("sample_rate").get<double>();
            nc = r.at("n_channels").get<std::size_t>();
            ns = r.at("n_samples").get<std::size_t>();
            off = r.at("byte_offset").get<std::uint64_t>();
            t.original_length = r.value("original_length", ns);
        } catch (const json::exception& e) {
            throw LoadError("manifest record " + std::to_string(i) + ": " + e.what());
        }
        const std::string label = "trial " + std::to_string(i) + " (" + trial_label(t.subject_id, t.stimulus_id, t.block) + ")";
        const std::uint64_t bytes = static_cast<std::uint64_t>(nc) * ns * 4;
        if (off + bytes > blob.size()) {
            const std::uint64_t avail = off < blob.size() ? (blob.size() - off) / 4 / std::max<std::size_t>(nc, 1) : 0;
            throw LoadError(label + " declares " + std::to_string(nc) + " x " + std::to_string(ns) +
                            " samples but trials.bin holds only " + std::to_string(avail) + " samples per channel");
        }
        t.data = Tensor({nc, ns});
        const unsigned char* p = blob.data() + off;
        for (std::size_t k = 0; k < t.data.size(); ++k) {
            const float v = get_f32_le(p + 4 * k);
            if (!std::isfinite(v)) throw LoadError(label + " contains a non-finite value at element " + std::to_string(k));
            t.data[k] = v;
        }
        trials.push_back(std::move(t));
    }
    return TrialStore(std::move(trials));
}

TrialStore import_csv_dir(const fs::path& dir, double sample_rate) {
    if (!fs::is_directory(dir)) throw LoadError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());

    std::vector<Trial> trials;
    for (const auto& f : files) {
        const std::string stem = f.stem().string();
        const auto p2 = stem.rfind('_');
        const auto p1 = p2 == std::string::npos || p2 == 0 ? std::string::npos : stem.rfind('_', p2 - 1);
        if (p1 == std::string::npos || p1 == 0)
            throw LoadError(f.filename().string() + ": expected <subject>_<stimulus>_<block>.csv");
        Trial t;
        t.subject_id = stem.substr(0, p1);
        try {
            t.stimulus_id = std::stoi(stem.substr(p1 + 1, p2 - p1 - 1));
            t.block = std::stoi(stem.substr(p2 + 1));
        } catch (const std::exception&) {
            throw LoadError(f.filename().string() + ": stimulus and block must be integers");
        }
        t.sample_rate = sample_rate;

        std::ifstream in(f);
        std::string line;
        std::vector<std::vector<float>> rows;
        bool first = true;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            std::vector<float> row;
            std::stringstream ss(line);
            std::string cell;
            bool numeric = true;
            while (std::getline(ss, cell, ',')) {
                try {
                    std::size_t used = 0;
                    float v = std::stof(cell, &used);
                    row.push_back(v);
                } catch (const std::exception&) {
                    numeric = false;
                    break;
                }
            }
            if (!numeric) {
                if (first) {
                    first = false;
                    continue;  // header
                }
                throw LoadError(f.filename().string() + ":" + std::to_string(lineno) + ": non-numeric cell");
            }
            first = false;
            if (!rows.empty() && row.size() != rows.front().size())
                throw LoadError(f.filename().string() + ":" + std::to_string(lineno) + ": ragged row");
            rows.push_back(std::move(row));
        }
        if (rows.empty()) throw LoadError(f.filename().string() + ": no data rows");
        t.data = Tensor({rows.size(), rows.front().size()});
        for (std::size_t c = 0; c < rows.size(); ++c)
            std::copy(rows[c].begin(), rows[c].end(), &t.data(c, 0));
        t.original_length = t.samples();
        trials.push_back(std::move(t));
    }
    return TrialStore(std::move(trials));
}

// ---------------------------------------------------------------------------
// Normalization, cropping, padding
// ---------------------------------------------------------------------------

Trial normalize_trial(const Trial& trial, std::vector<std::size_t>* constant_channels) {
    Trial out = trial;
    const std::size_t nc = trial.channels(), ns = trial.samples();
    for (std::size_t c = 0; c < nc; ++c) {
        float* row = &out.data(c, 0);
        double mean = 0.0;
        for (std::size_t t = 0; t < ns; ++t) mean += row[t];
        mean /= static_cast<double>(ns);
        double maxdev = 0.0;
        for (std::size_t t = 0; t < ns; ++t) maxdev = std::max(maxdev, std::abs(row[t] - mean));
        if (maxdev == 0.0) {
            std::fill(row, row + ns, 0.0f);
            if (constant_channels) constant_channels->push_back(c);
            continue;
        }
        for (std::size_t t = 0; t < ns; ++t) row[t] = static_cast<float>((row[t] - mean) / maxdev);
    }
    return out;
}

TrialStore normalize_store(const TrialStore& store, std::size_t* constant_channel_count) {
    std::vector<Trial> out;
    out.reserve(store.size());
    std::vector<std::size_t> constant;
    for (const auto& t : store) out.push_back(normalize_trial(t, &constant));
    if (constant_channel_count) *constant_channel_count = constant.size();
    return TrialStore(std::move(out));
}

std::size_t crop_length_for_rate(double sample_rate) {
    // 6.875 s of signal: 28,160 inputs over 64 channels at 64 Hz.
    const double samples = 440.0 * sample_rate / 64.0;
    if (sample_rate <= 0.0 || samples != std::floor(samples))
        throw InvalidArgument("no crop length defined for sample rate " + std::to_string(sample_rate));
    return static_cast<std::size_t>(samples);
}

TrialStore crop_to(const TrialStore& store, std::size_t samples) {
    std::vector<Trial> out;
    out.reserve(store.size());
    for (const auto& t : store) {
        if (t.samples() < samples)
            throw InvalidArgument("trial (" + trial_label(t.subject_id, t.stimulus_id, t.block) + ") has " +
                                  std::to_string(t.samples()) + " samples, fewer than the crop length " +
                                  std::to_string(samples));
        Trial c = t;
        c.data = Tensor({t.channels(), samples});
        for (std::size_t ch = 0; ch < t.channels(); ++ch)
            std::copy_n(&t.data(ch, 0), samples, &c.data(ch, 0));
        c.original_length = t.original_length;
        out.push_back(std::move(c));
    }
    return TrialStore(std::move(out));
}

TrialStore crop_trials(const TrialStore& store, double sample_rate) {
    for (const auto& t : store)
        if (t.sample_rate != sample_rate)
            throw InvalidArgument("trial (" + trial_label(t.subject_id, t.stimulus_id, t.block) + ") is sampled at " +
                                  std::to_string(t.sample_rate) + " Hz, expected " + std::to_string(sample_rate));
    return crop_to(store, crop_length_for_rate(sample_rate));
}

Trial zero_pad(const Trial& trial, std::size_t target_samples) {
    if (target_samples < trial.samples())
        throw InvalidArgument("zero_pad target " + std::to_string(target_samples) + " is shorter than the trial (" +
                              std::to_string(trial.samples()) + " samples)");
    Trial out = trial;
    out.data = Tensor({trial.channels(), target_samples});
    for (std::size_t ch = 0; ch < trial.channels(); ++ch)
        std::copy_n(&trial.data(ch, 0), trial.samples(), &out.data(ch, 0));
    out.original_length = trial.original_length ? trial.original_length : trial.samples();
    return out;
}

TrialStore pad_to_longest(const TrialStore& store) {
    std::size_t longest = 0;
    for (const auto& t : store) longest = std::max(longest, t.samples());
    std::vector<Trial> out;
    out.reserve(store.size());
    for (const auto& t : store) out.push_back(zero_pad(t, longest));
    return TrialStore(std::move(out));
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

SplitPlan make_split(const TrialStore& store, int test_block) {
    std::set<int> blocks;
    std::set<std::tuple<std::string, int, int>> present;
    for (const auto& t : store) {
        blocks.insert(t.block);
        present.emplace(t.subject_id, t.stimulus_id, t.block);
    }
    if (!blocks.count(test_block))
        throw InvalidArgument("store has no trials in test block " + std::to_string(test_block));

    std::vector<std::string> gaps;
    for (const auto& s : store.subjects())
        for (int stim : store.stimuli())
            for (int b : blocks)
                if (!present.count({s, stim, b})) gaps.push_back("(" + trial_label(s, stim, b) + ")");
    if (!gaps.empty()) {
        std::string msg = "incomplete design, missing " + std::to_string(gaps.size()) + " trial(s):";
        for (std::size_t i = 0; i < gaps.size() && i < 20; ++i) msg += " " + gaps[i];
        if (gaps.size() > 20) msg += " ...";
        throw InvalidArgument(msg);
    }

    SplitPlan plan;
    for (std::size_t i = 0; i < store.size(); ++i)
        (store[i].block == test_block ? plan.test : plan.training_pool).push_back(i);
    for (const auto& s : store.subjects()) {
        Fold f;
        f.subject = s;
        for (auto i : plan.training_pool) (store[i].subject_id == s ? f.validation : f.train).push_back(i);
        plan.folds.push_back(std::move(f));
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Synthetic planted-channel data
// ---------------------------------------------------------------------------

SyntheticDataset synth_generate(const SynthParams& p) {
    if (!(p.snr >= 0.0)) throw InvalidArgument("snr must be >= 0");
    if (p.samples == 0 || p.channels == 0 || p.n_subjects == 0 || p.n_classes == 0 || p.blocks == 0)
        throw InvalidArgument("synthetic dataset dimensions must be positive");

    std::mt19937_64 rng(p.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    SyntheticDataset ds;
    ds.waveforms.assign(p.n_classes, std::vector<double>(p.samples));
    for (auto& w : ds.waveforms)
        for (auto& v : w) v = gauss(rng);

    std::vector<std::size_t> perm(p.channels);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t s = 0; s < p.n_subjects; ++s) ds.planted_channels.push_back(perm[s % p.channels]);

    const int width = p.n_subjects >= 10 ? 3 : 2;
    std::vector<Trial> trials;
    trials.reserve(p.n_subjects * p.n_classes * p.blocks);
    for (std::size_t s = 0; s < p.n_subjects; ++s) {
        std::string sid = std::to_string(s + 1);
        sid = "S" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(sid.size()))), '0') + sid;
        for (std::size_t k = 0; k < p.n_classes; ++k) {
            for (std::size_t b = 0; b < p.blocks; ++b) {
                Trial t;
                t.subject_id = sid;
                t.stimulus_id = static_cast<int>(k + 1);
                t.block = static_cast<int>(b + 1);
                t.sample_rate = p.sample_rate;
                t.data = Tensor({p.channels, p.samples});
                for (auto& v : t.data.data()) v = static_cast<float>(gauss(rng));
                float* row = &t.data(ds.planted_channels[s], 0);
                for (std::size_t i = 0; i < p.samples; ++i)
                    row[i] = static_cast<float>(row[i] + p.snr * ds.waveforms[k][i]);
                t.original_length = p.samples;
                trials.push_back(normalize_trial(t));
            }
        }
    }
    ds.store = TrialStore(std::move(trials));
    return ds;
}

}  // namespace tuplenet
