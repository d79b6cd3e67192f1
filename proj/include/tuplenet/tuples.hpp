#pragma once

#include <cstdint>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "tuplenet/data.hpp"

namespace tuplenet {

enum class PairScope { within_subject, cross_subject };

inline const char* to_string(PairScope s) { return s == PairScope::within_subject ? "within" : "cross"; }
PairScope pair_scope_from_string(const std::string& s);

// Trial indices of one tuple. Position 0 is the reference, position 1 is a
// same-class companion, positions >= 2 are different-class companions.
struct TupleEntry {
    std::vector<std::size_t> trials;
};

std::uint64_t binomial_coefficient(std::uint64_t n, std::uint64_t k);

// Lazy index over pairs / triplets / k-tuples of a TrialStore. Only per-trial
// bookkeeping is stored (O(store size)); entries are computed on demand from
// their rank, so iteration never materializes the tuple list.
//
// For arity k >= 3 the different-class companions of one tuple are a
// (k-2)-combination (increasing trial order) of the candidates in scope.
class TupleIndex {
public:
    static TupleIndex pairs(const TrialStore& store, PairScope scope, bool include_identity = false);
    static TupleIndex tuples(const TrialStore& store, std::size_t arity, PairScope scope);

    [[nodiscard]] std::size_t arity() const { return arity_; }
    [[nodiscard]] PairScope scope() const { return scope_; }
    [[nodiscard]] bool include_identity() const { return include_identity_; }
    [[nodiscard]] std::uint64_t size() const { return offsets_.back(); }
    [[nodiscard]] std::size_t store_size() const { return class_of_.size(); }

    [[nodiscard]] TupleEntry at(std::uint64_t rank) const;
    void at(std::uint64_t rank, std::span<std::size_t> out) const;
    [[nodiscard]] std::vector<TupleEntry> batch(std::uint64_t start, std::size_t count) const;

    // Subject id of a trial, used to route hydra pathways.
    [[nodiscard]] const std::string& selector(std::size_t trial) const { return subjects_[subject_of_[trial]]; }
    [[nodiscard]] std::vector<std::string> selectors(const TupleEntry& e) const;
    [[nodiscard]] std::size_t class_of(std::size_t trial) const { return class_of_[trial]; }

    // Bytes held by the index itself (independent of size()).
    [[nodiscard]] std::size_t memory_footprint() const;

    class iterator {
    public:
        using iterator_category = std::forward_iterator_tag;
        using value_type = TupleEntry;
        using difference_type = std::ptrdiff_t;
        using pointer = const TupleEntry*;
        using reference = const TupleEntry&;

        iterator() = default;
        iterator(const TupleIndex* idx, std::uint64_t pos);
        reference operator*() const { return current_; }
        pointer operator->() const { return &current_; }
        iterator& operator++();
        iterator operator++(int) {
            auto tmp = *this;
            ++*this;
            return tmp;
        }
        friend bool operator==(const iterator& a, const iterator& b) { return a.pos_ == b.pos_; }

    private:
        void load();
        const TupleIndex* idx_ = nullptr;
        std::uint64_t pos_ = 0;
        TupleEntry current_;
    };

    [[nodiscard]] iterator begin() const { return {this, 0}; }
    [[nodiscard]] iterator end() const { return {this, size()}; }

private:
    TupleIndex() = default;
    void build(const TrialStore& store);

    std::size_t arity_ = 2;
    PairScope scope_ = PairScope::within_subject;
    bool include_identity_ = false;

    std::vector<std::size_t> class_of_, subject_of_;
    std::vector<std::string> subjects_;

    // Positive groups (same class, plus same subject for within scope).
    std::vector<std::vector<std::size_t>> groups_;
    std::vector<std::size_t> group_of_, pos_in_group_;

    // Negative candidates: per scope (subject or whole store), trials ordered
    // by class with per-class start/count.
    std::vector<std::vector<std::size_t>> scope_order_;
    std::vector<std::vector<std::size_t>> class_start_, class_count_;
    std::vector<std::size_t> scope_of_;

    std::vector<std::uint64_t> offsets_{0};
};

}  // namespace tuplenet
