#include "tuplenet/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>

namespace tuplenet {

Model build_model(const ModelSpec& spec, double dropout_rate, std::uint64_t seed, const PretrainedLayer& pretrained) {
    std::mt19937_64 rng(seed);
    Model m;
    Shape shape{spec.channels, spec.samples};

    if (const auto* bank = std::get_if<ConvFilterBank>(&pretrained)) {
        if (bank->channels() != spec.channels)
            throw ShapeError("pre-trained bank expects " + std::to_string(bank->channels()) + " channels, model has " +
                             std::to_string(spec.channels));
        m.add(std::make_unique<ConvLayer>(*bank, true));
    } else if (const auto* hydra = std::get_if<HydraLayer>(&pretrained)) {
        if (hydra->bank_shape()[2] != spec.channels)
            throw ShapeError("pre-trained hydra layer does not match the model's channel count");
        m.add(std::make_unique<HydraConvLayer>(*hydra, true));
    } else {
        const auto& l1 = spec.layer1;
        m.add(std::make_unique<ConvLayer>(
            ConvFilterBank::random(l1.filters, l1.width, spec.channels, l1.activation, rng(), 0.0, l1.stride), false));
    }
    shape = m.layer(0).output_shape(shape);

    if (spec.layer2) {
        const auto& l2 = *spec.layer2;
        m.add(std::make_unique<ConvLayer>(
            ConvFilterBank::random(l2.filters, l2.width, shape[0], l2.activation, rng(), 0.0, l2.stride), false));
        shape = m.layer(1).output_shape(shape);
    }
    if (dropout_rate > 0.0) m.add(std::make_unique<DropoutLayer>(dropout_rate, rng()));
    m.add(std::make_unique<OutputLayer>(shape_numel(shape), spec.classes, rng()));
    return m;
}

namespace {

void reseed_dropout(Model& m, std::uint64_t seed) {
    for (std::size_t i = 0; i < m.size(); ++i)
        if (auto* d = dynamic_cast<DropoutLayer*>(&m.layer(i))) d->reseed(seed + i);
}

struct FeatureCache {
    std::size_t prefix = 0;
    std::vector<Tensor> features;  // indexed by trial
    std::vector<bool> ready;
};

const Tensor& cached(Model& model, FeatureCache& cache, const TrialStore& store, std::size_t i) {
    if (!cache.ready[i]) {
        const Trial& t = store[i];
        cache.features[i] = cache.prefix ? model.forward_range(t.data, 0, cache.prefix, {false, t.subject_id}) : t.data;
        cache.ready[i] = true;
    }
    return cache.features[i];
}

std::pair<double, double> evaluate_cached(Model& model, FeatureCache& cache, const TrialStore& store,
                                          const std::vector<std::size_t>& indices) {
    if (indices.empty()) return {0.0, 0.0};
    double loss = 0.0;
    std::size_t correct = 0;
    for (auto i : indices) {
        const Tensor& x = cached(model, cache, store, i);
        const Tensor s = model.forward_range(x, cache.prefix, model.size(), {false, store[i].subject_id});
        loss += l2svm_loss(s, store.class_of(i)).loss;
        correct += argmax(s.data()) == store.class_of(i) ? 1 : 0;
    }
    const double n = static_cast<double>(indices.size());
    return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

std::pair<double, double> evaluate_model(Model& model, const TrialStore& store, const std::vector<std::size_t>& indices) {
    FeatureCache cache{0, std::vector<Tensor>(store.size()), std::vector<bool>(store.size(), false)};
    return evaluate_cached(model, cache, store, indices);
}

FoldReport train_supervised(const TrialStore& store, const Fold& fold, const Model& init, const OptimizerConfig& cfg,
                            std::uint64_t seed) {
    cfg.validate();
    if (fold.train.empty()) throw InvalidArgument("train_supervised: empty training set for fold " + fold.subject);
    Model model = init;
    model.zero_grad();
    for (auto* p : model.parameters()) p->momentum.fill(0.0f);
    reseed_dropout(model, seed);

    FeatureCache cache{model.frozen_prefix(), std::vector<Tensor>(store.size()), std::vector<bool>(store.size(), false)};
    if (cache.prefix == model.size()) throw InvalidArgument("train_supervised: every layer is frozen");
    const auto trainable = model.trainable_parameters();

    FoldReport rep;
    rep.fold_id = fold.subject;
    rep.n_train = fold.train.size();
    rep.n_validation = fold.validation.size();
    {
        const auto [tl, ta] = evaluate_cached(model, cache, store, fold.train);
        const auto [vl, va] = evaluate_cached(model, cache, store, fold.validation);
        rep.initial = {0, tl, ta, vl, va};
    }
    rep.best_model = model;
    rep.best_validation_accuracy = rep.initial.validation_accuracy;
    rep.best_validation_loss = rep.initial.validation_loss;

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order = fold.train;
    const std::size_t bs = cfg.batch_size;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t stop = std::min(order.size(), start + bs);
            const float scale = 1.0f / static_cast<float>(stop - start);
            model.zero_grad();
            for (std::size_t k = start; k < stop; ++k) {
                const std::size_t i = order[k];
                const Tensor& x = cached(model, cache, store, i);
                const Tensor s = model.forward_range(x, cache.prefix, model.size(), {true, store[i].subject_id});
                auto lg = l2svm_loss(s, store.class_of(i));
                if (!std::isfinite(lg.loss))
                    throw TrainingError("fold " + fold.subject + ": non-finite loss in epoch " + std::to_string(epoch));
                loss_sum += lg.loss;
                correct += argmax(s.data()) == store.class_of(i) ? 1 : 0;
                for (auto& g : lg.grad.data()) g *= scale;
                model.backward(lg.grad);
            }
            sgd_step(trainable, cfg, epoch - 1);
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        std::tie(rec.validation_loss, rec.validation_accuracy) = evaluate_cached(model, cache, store, fold.validation);
        rep.history.push_back(rec);

        const bool better = rec.validation_accuracy > rep.best_validation_accuracy ||
                            (rec.validation_accuracy == rep.best_validation_accuracy &&
                             rec.validation_loss < rep.best_validation_loss);
        if (better) {
            rep.best_model = model;
            rep.best_epoch = epoch;
            rep.best_validation_accuracy = rec.validation_accuracy;
            rep.best_validation_loss = rec.validation_loss;
        }
    }
    rep.best_model.zero_grad();
    return rep;
}

std::vector<FoldReport> crossval_run(const TrialStore& store, const SplitPlan& split, const Model& init,
                                     const OptimizerConfig& cfg, std::uint64_t seed, std::size_t jobs) {
    if (split.folds.empty()) throw InvalidArgument("crossval_run: split has no folds");
    std::vector<std::optional<FoldReport>> slots(split.folds.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
        for (std::size_t f = next++; f < split.folds.size(); f = next++) {
            try {
                slots[f] = train_supervised(store, split.folds[f], init, cfg, seed + 7919 * (f + 1));
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    jobs = std::clamp<std::size_t>(jobs, 1, split.folds.size());
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    std::vector<FoldReport> out;
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

AggregationMode aggregation_mode_from_string(const std::string& s) {
    if (s == "avg") return AggregationMode::avg;
    if (s == "maj") return AggregationMode::maj;
    throw InvalidArgument("unknown aggregation mode '" + s + "' (expected avg or maj)");
}

const char* to_string(AggregationMode m) { return m == AggregationMode::avg ? "avg" : "maj"; }

std::size_t majority_vote(std::span<const std::size_t> votes, std::size_t classes) {
    if (votes.empty()) throw InvalidArgument("majority_vote: no votes");
    std::vector<std::size_t> counts(classes, 0);
    for (auto v : votes) ++counts.at(v);
    return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

AggregatedModel::AggregatedModel(AggregationMode mode, std::vector<Model> members)
    : mode_(mode), members_(std::move(members)) {
    if (members_.empty()) throw InvalidArgument("aggregated model needs at least one member");
    auto& last = members_.front().layer(members_.front().size() - 1);
    if (last.kind() != "output") throw InvalidArgument("aggregated members must end with an output layer");
    classes_ = static_cast<OutputLayer&>(last).classes();
}

std::size_t AggregatedModel::predict(const Trial& trial, std::span<const std::size_t> allowed) {
    if (mode_ == AggregationMode::avg) return restricted_argmax(members_.front().scores(trial.data, trial.subject_id), allowed);
    std::vector<std::size_t> votes;
    votes.reserve(members_.size());
    for (auto& m : members_) votes.push_back(restricted_argmax(m.scores(trial.data, trial.subject_id), allowed));
    return majority_vote(votes, classes_);
}

AggregatedModel aggregate(const std::vector<Model>& models, AggregationMode mode) {
    if (models.empty()) throw InvalidArgument("aggregate: no models");
    std::vector<Model> copies(models.begin(), models.end());
    const auto ref = copies.front().describe();
    for (std::size_t i = 1; i < copies.size(); ++i)
        if (copies[i].describe() != ref)
            throw ShapeError("aggregate: model " + std::to_string(i) + " differs structurally from model 0");
    if (mode == AggregationMode::maj) return AggregatedModel(mode, std::move(copies));

    Model avg = copies.front();
    auto target = avg.parameters();
    std::vector<std::vector<Parameter*>> params;
    for (auto& m : copies) params.push_back(m.parameters());
    std::vector<float> vals(copies.size());
    for (std::size_t p = 0; p < target.size(); ++p) {
        for (const auto& ps : params)
            if (ps[p]->value.shape() != target[p]->value.shape())
                throw ShapeError("aggregate: parameter '" + target[p]->name + "' differs in shape");
        for (std::size_t e = 0; e < target[p]->value.size(); ++e) {
            for (std::size_t m = 0; m < copies.size(); ++m) vals[m] = params[m][p]->value[e];
            // Summing in sorted order makes the mean independent of fold order.
            std::sort(vals.begin(), vals.end());
            double s = 0.0;
            for (float v : vals) s += v;
            target[p]->value[e] = static_cast<float>(s / static_cast<double>(copies.size()));
        }
        target[p]->grad.fill(0.0f);
        target[p]->momentum.fill(0.0f);
    }
    std::vector<Model> one;
    one.push_back(std::move(avg));
    return AggregatedModel(mode, std::move(one));
}

AggregatedModel aggregate(const std::vector<FoldReport>& reports, AggregationMode mode) {
    std::vector<Model> models;
    models.reserve(reports.size());
    for (const auto& r : reports) models.push_back(r.best_model);
    return aggregate(models, mode);
}

double test_accuracy(Classifier& clf, const TrialStore& store, const std::vector<std::size_t>& indices) {
    return confusion(clf, store, indices).accuracy();
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

std::vector<SweepPoint> grid_points(const std::map<std::string, std::vector<double>>& grid) {
    if (grid.empty()) throw InvalidArgument("sweep grid is empty");
    std::vector<SweepPoint> pts{SweepPoint{}};
    for (const auto& [key, values] : grid) {
        if (values.empty()) throw InvalidArgument("sweep grid entry '" + key + "' has no values");
        std::vector<SweepPoint> next;
        for (const auto& p : pts)
            for (double v : values) {
                auto q = p;
                q[key] = v;
                next.push_back(std::move(q));
            }
        pts = std::move(next);
    }
    return pts;
}

std::vector<SweepPoint> random_points(const std::map<std::string, ParamRange>& ranges, std::size_t budget,
                                      std::uint64_t seed) {
    if (ranges.empty()) throw InvalidArgument("random sweep has no parameter ranges");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<SweepPoint> pts;
    for (std::size_t i = 0; i < budget; ++i) {
        SweepPoint p;
        for (const auto& [key, r] : ranges) {
            if (r.log_scale && !(r.lo > 0.0)) throw InvalidArgument("log-scale range for '" + key + "' must be positive");
            double v = r.log_scale ? std::exp(std::log(r.lo) + u(rng) * (std::log(r.hi) - std::log(r.lo)))
                                   : r.lo + u(rng) * (r.hi - r.lo);
            if (r.integer) v = std::round(v);
            p[key] = v;
        }
        pts.push_back(std::move(p));
    }
    return pts;
}

double median(std::vector<double> v) {
    if (v.empty()) throw InvalidArgument("median of an empty list");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<SweepResult> sweep(const std::vector<SweepPoint>& points,
                               const std::function<SweepOutcome(const SweepPoint&)>& evaluate, std::size_t jobs) {
    if (points.empty()) throw InvalidArgument("sweep: no configurations to evaluate");
    std::vector<SweepResult> results(points.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
        for (std::size_t i = next++; i < points.size(); i = next++) {
            try {
                results[i].index = i;
                results[i].point = points[i];
                results[i].outcome = evaluate(points[i]);
                results[i].median_validation_accuracy = median(results[i].outcome.fold_validation_accuracy);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    jobs = std::clamp<std::size_t>(jobs, 1, points.size());
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    std::stable_sort(results.begin(), results.end(), [](const SweepResult& a, const SweepResult& b) {
        return a.median_validation_accuracy > b.median_validation_accuracy;
    });
    for (std::size_t i = 0; i < results.size(); ++i) results[i].rank = i + 1;
    return results;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepResult>& results) {
    std::ofstream out(path);
    std::vector<std::string> keys;
    if (!results.empty())
        for (const auto& [k, v] : results.front().point) keys.push_back(k);
    out << "rank";
    for (const auto& k : keys) out << ',' << k;
    out << ",median_validation_accuracy,test_accuracy_avg,test_accuracy_maj\n";
    out.precision(10);
    for (const auto& r : results) {
        out << r.rank;
        for (const auto& k : keys) out << ',' << r.point.at(k);
        out << ',' << r.median_validation_accuracy << ',' << r.outcome.test_accuracy_avg << ','
            << r.outcome.test_accuracy_maj << '\n';
    }
    if (!out) throw Error("failed to write " + path.string());
}

}  // namespace tuplenet
