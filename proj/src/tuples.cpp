#include "tuplenet/tuples.hpp"

#include <algorithm>
#include <limits>
#include <map>

namespace tuplenet {

PairScope pair_scope_from_string(const std::string& s) {
    if (s == "within" || s == "within_subject") return PairScope::within_subject;
    if (s == "cross" || s == "cross_subject") return PairScope::cross_subject;
    throw InvalidArgument("unknown pair scope '" + s + "' (expected within or cross)");
}

std::uint64_t binomial_coefficient(std::uint64_t n, std::uint64_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    unsigned __int128 r = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        r = r * (n - k + i) / i;
        if (r > std::numeric_limits<std::uint64_t>::max())
            throw InvalidArgument("binomial coefficient overflows 64 bits");
    }
    return static_cast<std::uint64_t>(r);
}

TupleIndex TupleIndex::pairs(const TrialStore& store, PairScope scope, bool include_identity) {
    TupleIndex idx;
    idx.arity_ = 2;
    idx.scope_ = scope;
    idx.include_identity_ = include_identity;
    idx.build(store);
    return idx;
}

TupleIndex TupleIndex::tuples(const TrialStore& store, std::size_t arity, PairScope scope) {
    if (arity < 3) throw InvalidArgument("tuples need arity >= 3 (use pairs() for arity 2)");
    TupleIndex idx;
    idx.arity_ = arity;
    idx.scope_ = scope;
    idx.build(store);
    return idx;
}

void TupleIndex::build(const TrialStore& store) {
    const std::size_t n = store.size();
    const std::size_t nclass = store.num_classes();
    subjects_ = store.subjects();
    class_of_.resize(n);
    subject_of_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        class_of_[i] = store.class_of(i);
        subject_of_[i] = store.subject_index(i);
    }
    const bool within = scope_ == PairScope::within_subject;

    std::map<std::pair<std::size_t, std::size_t>, std::size_t> group_ids;
    group_of_.resize(n);
    pos_in_group_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto key = std::make_pair(class_of_[i], within ? subject_of_[i] : std::size_t{0});
        auto [it, inserted] = group_ids.emplace(key, groups_.size());
        if (inserted) groups_.emplace_back();
        group_of_[i] = it->second;
        pos_in_group_[i] = groups_[it->second].size();
        groups_[it->second].push_back(i);
    }

    if (arity_ >= 3) {
        const std::size_t nscopes = within ? subjects_.size() : 1;
        scope_order_.assign(nscopes, {});
        class_start_.assign(nscopes, std::vector<std::size_t>(nclass, 0));
        class_count_.assign(nscopes, std::vector<std::size_t>(nclass, 0));
        scope_of_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            scope_of_[i] = within ? subject_of_[i] : 0;
            scope_order_[scope_of_[i]].push_back(i);
        }
        for (std::size_t s = 0; s < nscopes; ++s) {
            auto& order = scope_order_[s];
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return class_of_[a] < class_of_[b]; });
            for (auto i : order) ++class_count_[s][class_of_[i]];
            std::size_t acc = 0;
            for (std::size_t c = 0; c < nclass; ++c) {
                class_start_[s][c] = acc;
                acc += class_count_[s][c];
            }
        }
    }

    offsets_.assign(1, 0);
    offsets_.reserve(n + 1);
    for (std::size_t a = 0; a < n; ++a) {
        const std::uint64_t group = groups_[group_of_[a]].size();
        std::uint64_t positives = include_identity_ ? group : group - 1;
        std::uint64_t combos = 1;
        if (arity_ >= 3) {
            const std::size_t s = scope_of_[a];
            const std::uint64_t negatives = scope_order_[s].size() - class_count_[s][class_of_[a]];
            combos = binomial_coefficient(negatives, arity_ - 2);
        }
        const unsigned __int128 count = static_cast<unsigned __int128>(positives) * combos;
        const unsigned __int128 total = count + offsets_.back();
        if (total > std::numeric_limits<std::uint64_t>::max()) throw InvalidArgument("tuple count overflows 64 bits");
        offsets_.push_back(static_cast<std::uint64_t>(total));
    }
}

void TupleIndex::at(std::uint64_t rank, std::span<std::size_t> out) const {
    if (rank >= size()) throw InvalidArgument("tuple rank " + std::to_string(rank) + " out of range");
    if (out.size() != arity_) throw ShapeError("tuple output span has wrong arity");
    const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), rank);
    const std::size_t a = static_cast<std::size_t>(it - offsets_.begin()) - 1;
    std::uint64_t r = rank - offsets_[a];

    std::uint64_t combos = 1, negatives = 0;
    std::size_t s = 0;
    if (arity_ >= 3) {
        s = scope_of_[a];
        negatives = scope_order_[s].size() - class_count_[s][class_of_[a]];
        combos = binomial_coefficient(negatives, arity_ - 2);
    }
    std::uint64_t p = r / combos;
    std::uint64_t q = r % combos;

    const auto& group = groups_[group_of_[a]];
    if (!include_identity_ && p >= pos_in_group_[a]) ++p;
    out[0] = a;
    out[1] = group[p];
    if (arity_ < 3) return;

    // Unrank q as a lexicographic (arity-2)-combination of [0, negatives).
    const std::size_t m = arity_ - 2;
    const std::size_t cstart = class_start_[s][class_of_[a]];
    const std::size_t ccount = class_count_[s][class_of_[a]];
    std::uint64_t x = 0;
    for (std::size_t slot = 0; slot < m; ++slot) {
        if (slot + 1 == m) {
            x += q;  // last slot: one combination per remaining candidate
            q = 0;
        }
        for (;; ++x) {
            const std::uint64_t with_x = binomial_coefficient(negatives - x - 1, m - slot - 1);
            if (q < with_x) break;
            q -= with_x;
        }
        const std::size_t pos = static_cast<std::size_t>(x) < cstart ? static_cast<std::size_t>(x)
                                                                      : static_cast<std::size_t>(x) + ccount;
        out[2 + slot] = scope_order_[s][pos];
        ++x;
    }
    if (m > 1) std::sort(out.begin() + 2, out.end());
}

TupleEntry TupleIndex::at(std::uint64_t rank) const {
    TupleEntry e;
    e.trials.resize(arity_);
    at(rank, e.trials);
    return e;
}

std::vector<TupleEntry> TupleIndex::batch(std::uint64_t start, std::size_t count) const {
    std::vector<TupleEntry> out;
    const std::uint64_t stop = std::min<std::uint64_t>(size(), start + count);
    for (std::uint64_t r = start; r < stop; ++r) out.push_back(at(r));
    return out;
}

std::vector<std::string> TupleIndex::selectors(const TupleEntry& e) const {
    std::vector<std::string> out;
    out.reserve(e.trials.size());
    for (auto t : e.trials) out.push_back(selector(t));
    return out;
}

std::size_t TupleIndex::memory_footprint() const {
    std::size_t bytes = sizeof(*this);
    auto vec = [](const auto& v) { return v.capacity() * sizeof(typename std::decay_t<decltype(v)>::value_type); };
    bytes += vec(class_of_) + vec(subject_of_) + vec(group_of_) + vec(pos_in_group_) + vec(scope_of_) + vec(offsets_);
    for (const auto& g : groups_) bytes += vec(g);
    for (const auto& g : scope_order_) bytes += vec(g);
    for (const auto& g : class_start_) bytes += vec(g);
    for (const auto& g : class_count_) bytes += vec(g);
    for (const auto& s : subjects_) bytes += s.capacity();
    return bytes;
}

TupleIndex::iterator::iterator(const TupleIndex* idx, std::uint64_t pos) : idx_(idx), pos_(pos) {
    current_.trials.resize(idx->arity());
    load();
}

void TupleIndex::iterator::load() {
    if (pos_ < idx_->size()) idx_->at(pos_, current_.trials);
}

TupleIndex::iterator& TupleIndex::iterator::operator++() {
    ++pos_;
    load();
    return *this;
}

}  // namespace tuplenet
