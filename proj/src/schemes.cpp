#include "tuplenet/schemes.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_map>

#include "tuplenet/evalstat.hpp"

namespace tuplenet {

TupleLoss tuple_loss_from_string(const std::string& s) {
    if (s == "softmax" || s == "softmax_nll") return TupleLoss::softmax_nll;
    if (s == "hinge" || s == "margin_hinge") return TupleLoss::margin_hinge;
    throw InvalidArgument("unknown tuple loss '" + s + "' (expected softmax or hinge)");
}

namespace {

// ---------------------------------------------------------------------------
// Shared epoch loop with training-error early stopping.
// ---------------------------------------------------------------------------

struct LoopHooks {
    std::uint64_t items = 0;
    std::vector<Parameter*> params;
    // Accumulates the gradient of the mean loss over `batch`; returns that loss.
    std::function<double(const std::vector<std::uint64_t>& batch)> batch;
    // Full training error (and accuracy, when meaningful).
    std::function<std::pair<double, double>()> evaluate;
    std::function<void()> snapshot;
    std::string what;
};

struct LoopOutcome {
    std::vector<EpochLog> history;
    double best_loss = 0.0;
    double best_accuracy = 0.0;
    std::size_t best_epoch = 0;
};

// Lazy pseudo-shuffle of [0, n): rank -> (a * rank + b) mod n with gcd(a, n) = 1.
struct AffineOrder {
    std::uint64_t n, a, b;
    AffineOrder(std::uint64_t n_, std::mt19937_64& rng) : n(n_), a(1), b(0) {
        if (n <= 1) return;
        std::uniform_int_distribution<std::uint64_t> u(1, n - 1);
        do {
            a = u(rng);
        } while (std::gcd(a, n) != 1);
        b = u(rng);
    }
    std::uint64_t operator()(std::uint64_t r) const {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(a) * r + b) % n);
    }
};

LoopOutcome run_loop(const PretrainConfig& cfg, LoopHooks& hooks) {
    cfg.optimizer.validate();
    if (hooks.items == 0) throw InvalidArgument(hooks.what + ": no training items");
    std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);

    LoopOutcome out;
    auto [loss0, acc0] = hooks.evaluate();
    if (!std::isfinite(loss0)) throw TrainingError(hooks.what + ": non-finite training error at initialization");
    out.best_loss = loss0;
    out.best_accuracy = acc0;
    hooks.snapshot();

    const std::size_t bs = cfg.optimizer.batch_size;
    const std::uint64_t full_batches = (hooks.items + bs - 1) / bs;
    std::size_t stale = 0;
    for (std::size_t epoch = 1; epoch <= cfg.optimizer.max_epochs; ++epoch) {
        const std::size_t lr_epoch = epoch - 1;
        std::vector<std::uint64_t> batch;
        batch.reserve(bs);
        auto step = [&](std::uint64_t b_index) {
            const double loss = hooks.batch(batch);
            if (!std::isfinite(loss))
                throw TrainingError(hooks.what + ": loss became non-finite in epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(b_index));
            sgd_step(hooks.params, cfg.optimizer, lr_epoch);
        };
        if (cfg.batches_per_epoch == 0) {
            AffineOrder order(hooks.items, rng);
            for (std::uint64_t b = 0; b < full_batches; ++b) {
                batch.clear();
                for (std::uint64_t r = b * bs; r < std::min<std::uint64_t>(hooks.items, (b + 1) * bs); ++r)
                    batch.push_back(order(r));
                for (auto* p : hooks.params) p->zero_grad();
                step(b);
            }
        } else {
            std::uniform_int_distribution<std::uint64_t> pick(0, hooks.items - 1);
            for (std::size_t b = 0; b < cfg.batches_per_epoch; ++b) {
                batch.clear();
                for (std::size_t i = 0; i < bs; ++i) batch.push_back(pick(rng));
                for (auto* p : hooks.params) p->zero_grad();
                step(b);
            }
        }

        auto [loss, acc] = hooks.evaluate();
        if (!std::isfinite(loss))
            throw TrainingError(hooks.what + ": training error became non-finite after epoch " + std::to_string(epoch) +
                                " (lr " + std::to_string(epoch_learning_rate(cfg.optimizer, lr_epoch)) + ")");
        const bool significant = loss < out.best_loss - cfg.min_improvement * std::abs(out.best_loss);
        if (loss < out.best_loss) {
            out.best_loss = loss;
            out.best_accuracy = acc;
            out.best_epoch = epoch;
            hooks.snapshot();
        }
        stale = significant ? 0 : stale + 1;
        out.history.push_back({epoch, loss, out.best_loss, acc});
        if (stale >= cfg.patience) break;
    }
    return out;
}

std::vector<std::uint64_t> eval_ranks(std::uint64_t n, std::size_t limit) {
    std::vector<std::uint64_t> r;
    if (limit == 0 || limit >= n) {
        r.resize(n);
        std::iota(r.begin(), r.end(), std::uint64_t{0});
        return r;
    }
    const double step = static_cast<double>(n) / static_cast<double>(limit);
    for (std::size_t i = 0; i < limit; ++i) r.push_back(static_cast<std::uint64_t>(static_cast<double>(i) * step));
    return r;
}

void require_equal_lengths(const TrialStore& store, const char* what) {
    for (const auto& t : store)
        if (t.data.shape() != store[0].data.shape())
            throw InvalidArgument(std::string(what) + " needs equal-length (cropped) trials; got " +
                                  shape_str(t.data.shape()) + " vs " + shape_str(store[0].data.shape()));
}

void require_channels(const TrialStore& store, const ConvFilterBank& bank, const char* what) {
    if (store.empty()) throw InvalidArgument(std::string(what) + ": empty store");
    if (store[0].channels() != bank.channels())
        throw ShapeError(std::string(what) + ": store has " + std::to_string(store[0].channels()) +
                         " channels, bank expects " + std::to_string(bank.channels()));
    if (bank.stride != 1) throw InvalidArgument(std::string(what) + ": tied de-convolution needs stride 1");
}

ConvFilterBank random_bank(const BankShape& s, const PretrainConfig& cfg) {
    return ConvFilterBank::random(s.filters, s.width, s.channels, s.activation, cfg.seed, cfg.init_scale);
}

// Encoder + tied decoder on one trial, accumulating into weights.grad.
// `loss` maps the reconstruction to (loss, grad).
template <class LossFn>
double autoencode_step(Parameter& w, Activation act, const Tensor& input, float scale, LossFn&& loss) {
    const Tensor code = conv_time_forward(input, w.value, act, 1);
    const Tensor recon = deconv_time_tied_forward(code, w.value, act);
    LossGrad<float> lg = loss(recon);
    for (auto& g : lg.grad.data()) g *= scale;
    const Tensor g_code = deconv_time_tied_backward(code, w.value, act, recon, lg.grad, &w.grad);
    conv_time_backward(input, w.value, act, 1, code, g_code, &w.grad, false);
    w.touched = true;
    return lg.loss;
}

}  // namespace

// ---------------------------------------------------------------------------
// CAE
// ---------------------------------------------------------------------------

Tensor cae_reconstruct(const ConvFilterBank& bank, const Tensor& input) {
    return deconv_time_tied_forward(conv_time_forward(input, bank), bank);
}

ReconstructionMetrics cae_evaluate(const ConvFilterBank& bank, const TrialStore& store) {
    ReconstructionMetrics m;
    for (const auto& t : store) {
        const Tensor r = cae_reconstruct(bank, t.data);
        m.msre += msre(t.data, r);
        m.mcc += mcc(t.data, r);
    }
    if (!store.empty()) {
        m.msre /= static_cast<double>(store.size());
        m.mcc /= static_cast<double>(store.size());
    }
    return m;
}

PretrainResult cae_train(const TrialStore& input_store, const ConvFilterBank& init, const PretrainConfig& cfg) {
    require_channels(input_store, init, "cae_train");
    const TrialStore store = pad_to_longest(input_store);
    Parameter w("cae.weights", init.weights);
    const Activation act = init.activation;
    ConvFilterBank best = init;

    LoopHooks hooks;
    hooks.what = "cae_train";
    hooks.items = store.size();
    hooks.params = {&w};
    hooks.batch = [&](const std::vector<std::uint64_t>& batch) {
        const float scale = 1.0f / static_cast<float>(batch.size());
        double total = 0.0;
        for (auto i : batch)
            total += autoencode_step(w, act, store[i].data, scale,
                                     [&](const Tensor& r) { return msre_loss(r, store[i].data); });
        return total / static_cast<double>(batch.size());
    };
    hooks.evaluate = [&]() {
        ConvFilterBank b(w.value, act);
        double total = 0.0;
        for (const auto& t : store) total += msre(t.data, cae_reconstruct(b, t.data));
        return std::make_pair(total / static_cast<double>(store.size()), 0.0);
    };
    hooks.snapshot = [&]() { best.weights = w.value; };

    const auto out = run_loop(cfg, hooks);
    return {best, out.history, out.best_loss, out.best_epoch, 0.0};
}

PretrainResult cae_train(const TrialStore& store, const BankShape& shape, const PretrainConfig& cfg) {
    return cae_train(store, random_bank(shape, cfg), cfg);
}

ConvFilterBank cae_adapt_individual(const ConvFilterBank& global, const TrialStore& store, const std::string& subject,
                                    const PretrainConfig& cfg) {
    const auto idx = store.indices_of_subject(subject);
    if (idx.empty()) throw InvalidArgument("unknown subject '" + subject + "'");
    if (cfg.optimizer.max_epochs == 0) return global;
    return cae_train(store.subset(idx), global, cfg).bank;
}

// ---------------------------------------------------------------------------
// CTE
// ---------------------------------------------------------------------------

double cte_pair_loss(const ConvFilterBank& bank, const Tensor& input, const Tensor& target) {
    return neg_dot_loss(cae_reconstruct(bank, input), target).loss;
}

PretrainResult cte_train_stage1(const TrialStore& store, const TupleIndex& pairs, const ConvFilterBank& init,
                                const PretrainConfig& cfg) {
    require_channels(store, init, "cte_train_stage1");
    require_equal_lengths(store, "cross-trial encoding");
    if (pairs.arity() != 2) throw InvalidArgument("cte_train_stage1 expects a pair index");
    if (pairs.store_size() != store.size()) throw InvalidArgument("pair index was built for a different store");

    Parameter w("cte.weights", init.weights);
    const Activation act = init.activation;
    ConvFilterBank best = init;
    const auto ranks = eval_ranks(pairs.size(), cfg.eval_limit);

    LoopHooks hooks;
    hooks.what = "cte_train_stage1";
    hooks.items = pairs.size();
    hooks.params = {&w};
    hooks.batch = [&](const std::vector<std::uint64_t>& batch) {
        const float scale = 1.0f / static_cast<float>(batch.size());
        double total = 0.0;
        std::size_t ab[2];
        for (auto r : batch) {
            pairs.at(r, ab);
            const Tensor& target = store[ab[1]].data;
            total += autoencode_step(w, act, store[ab[0]].data, scale,
                                     [&](const Tensor& rec) { return neg_dot_loss(rec, target); });
        }
        return total / static_cast<double>(batch.size());
    };
    hooks.evaluate = [&]() {
        // The reconstruction depends on the input trial only.
        ConvFilterBank b(w.value, act);
        std::unordered_map<std::size_t, Tensor> recon;
        double total = 0.0;
        std::size_t ab[2];
        for (auto r : ranks) {
            pairs.at(r, ab);
            auto it = recon.find(ab[0]);
            if (it == recon.end()) it = recon.emplace(ab[0], cae_reconstruct(b, store[ab[0]].data)).first;
            total += neg_dot_loss(it->second, store[ab[1]].data).loss;
        }
        return std::make_pair(total / static_cast<double>(ranks.size()), 0.0);
    };
    hooks.snapshot = [&]() { best.weights = w.value; };

    const auto out = run_loop(cfg, hooks);
    return {best, out.history, out.best_loss, out.best_epoch, 0.0};
}

PretrainResult cte_train_stage1(const TrialStore& store, const TupleIndex& pairs, const BankShape& shape,
                                const PretrainConfig& cfg) {
    return cte_train_stage1(store, pairs, random_bank(shape, cfg), cfg);
}

ConvFilterBank cte_adapt_individual(const ConvFilterBank& global, const TrialStore& store, const std::string& subject,
                                    const PretrainConfig& cfg) {
    const auto idx = store.indices_of_subject(subject);
    if (idx.empty()) throw InvalidArgument("unknown subject '" + subject + "'");
    if (cfg.optimizer.max_epochs == 0) return global;
    const TrialStore sub = store.subset(idx);
    const auto pairs = TupleIndex::pairs(sub, PairScope::within_subject);
    return cte_train_stage1(sub, pairs, global, cfg).bank;
}

double cte_hydra_batch_gradients(HydraLayer& layer, const TrialStore& store, const std::vector<TupleEntry>& batch) {
    std::vector<Tensor> inputs, targets;
    std::vector<std::string> enc_sel, dec_sel;
    for (const auto& e : batch) {
        inputs.push_back(store[e.trials[0]].data);
        targets.push_back(store[e.trials[1]].data);
        enc_sel.push_back(store[e.trials[0]].subject_id);
        dec_sel.push_back(store[e.trials[1]].subject_id);
    }
    HydraLayer::Tape enc_tape, dec_tape;
    const auto codes = layer.conv_forward(inputs, enc_sel, &enc_tape);
    const auto recons = layer.deconv_forward(codes, dec_sel, &dec_tape);
    const float scale = 1.0f / static_cast<float>(batch.size());
    std::vector<Tensor> grads;
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto lg = neg_dot_loss(recons[i], targets[i]);
        for (auto& g : lg.grad.data()) g *= scale;
        total += lg.loss;
        grads.push_back(std::move(lg.grad));
    }
    const auto g_codes = layer.backward(dec_tape, grads, true);
    layer.backward(enc_tape, g_codes, false);
    return total / static_cast<double>(batch.size());
}

double cte_hydra_loss(const HydraLayer& layer, const TrialStore& store, const TupleIndex& pairs, std::size_t limit) {
    std::map<std::pair<std::size_t, std::string>, Tensor> recon;
    std::unordered_map<std::size_t, Tensor> codes;
    double total = 0.0;
    const auto ranks = eval_ranks(pairs.size(), limit);
    std::size_t ab[2];
    for (auto r : ranks) {
        pairs.at(r, ab);
        const auto& dec = store[ab[1]].subject_id;
        auto it = recon.find({ab[0], dec});
        if (it == recon.end()) {
            auto cit = codes.find(ab[0]);
            if (cit == codes.end())
                cit = codes.emplace(ab[0], conv_time_forward(store[ab[0]].data, layer.bank(store[ab[0]].subject_id)))
                          .first;
            it = recon.emplace(std::make_pair(ab[0], dec), deconv_time_tied_forward(cit->second, layer.bank(dec))).first;
        }
        total += neg_dot_loss(it->second, store[ab[1]].data).loss;
    }
    return ranks.empty() ? 0.0 : total / static_cast<double>(ranks.size());
}

HydraResult cte_train_stage2(const TrialStore& store, const TupleIndex& cross_pairs,
                             const std::map<std::string, ConvFilterBank>& init, const PretrainConfig& cfg) {
    require_equal_lengths(store, "cross-trial encoding");
    if (cross_pairs.arity() != 2) throw InvalidArgument("cte_train_stage2 expects a pair index");
    if (cross_pairs.store_size() != store.size()) throw InvalidArgument("pair index was built for a different store");
    for (const auto& s : store.subjects())
        if (!init.count(s)) throw InvalidArgument("no hydra pathway for subject '" + s + "'");
    require_channels(store, init.begin()->second, "cte_train_stage2");

    HydraLayer layer(init, cfg.strategy);
    HydraLayer best = layer;

    LoopHooks hooks;
    hooks.what = "cte_train_stage2";
    hooks.items = cross_pairs.size();
    hooks.params = layer.parameters();
    hooks.batch = [&](const std::vector<std::uint64_t>& ranks) {
        std::vector<TupleEntry> batch;
        batch.reserve(ranks.size());
        for (auto r : ranks) batch.push_back(cross_pairs.at(r));
        return cte_hydra_batch_gradients(layer, store, batch);
    };
    hooks.evaluate = [&]() { return std::make_pair(cte_hydra_loss(layer, store, cross_pairs, cfg.eval_limit), 0.0); };
    hooks.snapshot = [&]() { best = layer; };

    const auto out = run_loop(cfg, hooks);
    best.zero_grad();
    for (auto* p : best.parameters()) p->momentum.fill(0.0f);
    return {best, out.history, out.best_loss, out.best_epoch};
}

// ---------------------------------------------------------------------------
// SCE
// ---------------------------------------------------------------------------

namespace {

LossGrad<double> tuple_loss(const TensorD& scores, TupleLoss kind) {
    return kind == TupleLoss::softmax_nll ? softmax_nll(scores, 0) : tuple_margin_hinge(scores);
}

double dot_double(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

TensorD scores_from_encodings(const std::vector<const Tensor*>& enc) {
    TensorD s({enc.size() - 1});
    for (std::size_t i = 1; i < enc.size(); ++i)
        s[i - 1] = dot_double(enc[0]->data(), enc[i]->data());
    return s;
}

}  // namespace

Tensor sce_forward(const ConvFilterBank& encoder, std::span<const Tensor> tuple) {
    if (tuple.size() < 3) throw InvalidArgument("similarity-constraint tuples need arity >= 3, got " +
                                                std::to_string(tuple.size()));
    std::vector<Tensor> enc;
    enc.reserve(tuple.size());
    for (const auto& t : tuple) enc.push_back(conv_time_forward(t, encoder));
    Tensor scores({tuple.size() - 1});
    for (std::size_t i = 1; i < enc.size(); ++i) scores[i - 1] = static_cast<float>(dot_double(enc[0].data(), enc[i].data()));
    return scores;
}

bool sce_constraint_satisfied(std::span<const float> scores) {
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (!(scores[0] > scores[i])) return false;
    return true;
}

SceEvaluation sce_evaluate(const ConvFilterBank& encoder, const TrialStore& store, const TupleIndex& tuples,
                           TupleLoss loss, std::size_t limit) {
    if (tuples.arity() < 3) throw InvalidArgument("sce_evaluate expects tuples of arity >= 3");
    std::vector<Tensor> enc;
    enc.reserve(store.size());
    for (const auto& t : store) enc.push_back(conv_time_forward(t.data, encoder));

    SceEvaluation ev;
    const auto ranks = eval_ranks(tuples.size(), limit);
    std::vector<std::size_t> ids(tuples.arity());
    std::vector<const Tensor*> e(tuples.arity());
    std::size_t satisfied = 0;
    for (auto r : ranks) {
        tuples.at(r, ids);
        for (std::size_t i = 0; i < ids.size(); ++i) e[i] = &enc[ids[i]];
        const TensorD s = scores_from_encodings(e);
        ev.loss += tuple_loss(s, loss).loss;
        const Tensor sf = s.cast<float>();
        satisfied += sce_constraint_satisfied(sf.data()) ? 1 : 0;
    }
    ev.evaluated = ranks.size();
    if (!ranks.empty()) {
        ev.loss /= static_cast<double>(ranks.size());
        ev.constraint_accuracy = static_cast<double>(satisfied) / static_cast<double>(ranks.size());
    }
    return ev;
}

double sce_batch_gradients(Parameter& weights, Activation act, std::size_t stride, const TrialStore& store,
                           const std::vector<TupleEntry>& batch, TupleLoss loss) {
    // Encode every distinct trial of the batch once; per-tuple gradients are
    // summed into the encodings before a single backward per trial.
    std::unordered_map<std::size_t, std::size_t> slot;
    std::vector<std::size_t> trials;
    for (const auto& e : batch)
        for (auto t : e.trials)
            if (slot.emplace(t, trials.size()).second) trials.push_back(t);
    std::vector<Tensor> enc, grad;
    enc.reserve(trials.size());
    for (auto t : trials) {
        enc.push_back(conv_time_forward(store[t].data, weights.value, act, stride));
        grad.emplace_back(enc.back().shape());
    }

    const double scale = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    std::vector<const Tensor*> e;
    for (const auto& entry : batch) {
        e.clear();
        for (auto t : entry.trials) e.push_back(&enc[slot[t]]);
        const TensorD s = scores_from_encodings(e);
        const auto lg = tuple_loss(s, loss);
        total += lg.loss;
        Tensor& g_ref = grad[slot[entry.trials[0]]];
        for (std::size_t i = 1; i < entry.trials.size(); ++i) {
            const float ds = static_cast<float>(lg.grad[i - 1] * scale);
            if (ds == 0.0f) continue;
            Tensor& g_cmp = grad[slot[entry.trials[i]]];
            const auto a = e[0]->data();
            const auto b = e[i]->data();
            for (std::size_t k = 0; k < a.size(); ++k) {
                g_ref[k] += ds * b[k];
                g_cmp[k] += ds * a[k];
            }
        }
    }
    for (std::size_t i = 0; i < trials.size(); ++i)
        conv_time_backward(store[trials[i]].data, weights.value, act, stride, enc[i], grad[i], &weights.grad, false);
    weights.touched = true;
    return total / static_cast<double>(batch.size());
}

PretrainResult sce_train(const TrialStore& store, const TupleIndex& tuples, const ConvFilterBank& init,
                         const PretrainConfig& cfg) {
    if (tuples.arity() < 3) throw InvalidArgument("sce_train expects tuples of arity >= 3");
    if (tuples.store_size() != store.size()) throw InvalidArgument("tuple index was built for a different store");
    require_equal_lengths(store, "similarity-constraint encoding");
    if (store.empty() || store[0].channels() != init.channels())
        throw ShapeError("sce_train: store channels do not match the encoder");

    Parameter w("sce.weights", init.weights);
    const Activation act = init.activation;
    const std::size_t stride = init.stride;
    ConvFilterBank best = init;

    LoopHooks hooks;
    hooks.what = "sce_train";
    hooks.items = tuples.size();
    hooks.params = {&w};
    hooks.batch = [&](const std::vector<std::uint64_t>& ranks) {
        std::vector<TupleEntry> batch;
        batch.reserve(ranks.size());
        for (auto r : ranks) batch.push_back(tuples.at(r));
        return sce_batch_gradients(w, act, stride, store, batch, cfg.tuple_loss);
    };
    hooks.evaluate = [&]() {
        const auto ev = sce_evaluate(ConvFilterBank(w.value, act, stride), store, tuples, cfg.tuple_loss, cfg.eval_limit);
        return std::make_pair(ev.loss, ev.constraint_accuracy);
    };
    hooks.snapshot = [&]() { best.weights = w.value; };

    const auto out = run_loop(cfg, hooks);
    return {best, out.history, out.best_loss, out.best_epoch, out.best_accuracy};
}

PretrainResult sce_train(const TrialStore& store, const TupleIndex& tuples, const BankShape& shape,
                         const PretrainConfig& cfg) {
    return sce_train(store, tuples, random_bank(shape, cfg), cfg);
}

// ---------------------------------------------------------------------------

void write_filter_csv(const std::filesystem::path& path, const ConvFilterBank& bank) {
    std::ofstream out(path);
    out << "filter_index,time_offset";
    for (std::size_t c = 0; c < bank.channels(); ++c) out << ",ch" << c;
    out << '\n';
    out.precision(9);
    for (std::size_t f = 0; f < bank.filters(); ++f)
        for (std::size_t j = 0; j < bank.width(); ++j) {
            out << f << ',' << j;
            for (std::size_t c = 0; c < bank.channels(); ++c) out << ',' << bank.weights(f, j, c);
            out << '\n';
        }
    if (!out) throw Error("failed to write " + path.string());
}

}  // namespace tuplenet
