#pragma once

#include <bit>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>

#include "field.hpp"

namespace cilab {

// t ↦ field with a memo keyed by the exact bits of t; zero outside [t_lo, t_hi].
// The memo keeps at most `capacity` entries, oldest evicted first; 0 disables it.
template <class F>
class TimeField {
public:
    using Eval = std::function<F(double)>;

    TimeField() = default;
    TimeField(Grid g, double lo, double hi, Eval e, std::size_t capacity = 8)
        : grid_(g), lo_(lo), hi_(hi), eval_(std::move(e)), memo_(std::make_shared<Memo>()) {
        memo_->capacity = capacity;
    }

    std::shared_ptr<const F> get(double t) const {
        if (t < lo_ || t > hi_) {
            std::lock_guard<std::mutex> lk(memo_->m);
            if (!memo_->zero) memo_->zero = std::make_shared<const F>(grid_);
            return memo_->zero;
        }
        std::uint64_t key = std::bit_cast<std::uint64_t>(t);
        {
            std::lock_guard<std::mutex> lk(memo_->m);
            auto it = memo_->cache.find(key);
            if (it != memo_->cache.end()) return it->second;
        }
        auto val = std::make_shared<const F>(eval_(t));
        std::lock_guard<std::mutex> lk(memo_->m);
        if (memo_->capacity == 0) return val;
        auto [it, fresh] = memo_->cache.emplace(key, val);
        if (fresh) {
            memo_->order.push_back(key);
            while (memo_->order.size() > memo_->capacity) {
                memo_->cache.erase(memo_->order.front());
                memo_->order.pop_front();
            }
        }
        return it->second;
    }

    F operator()(double t) const { return *get(t); }

    double support_lo() const { return lo_; }
    double support_hi() const { return hi_; }
    const Grid& grid() const { return grid_; }
    void clear() const {
        std::lock_guard<std::mutex> lk(memo_->m);
        memo_->cache.clear();
        memo_->order.clear();
    }
    std::size_t cached() const {
        std::lock_guard<std::mutex> lk(memo_->m);
        return memo_->cache.size();
    }

private:
    struct Memo {
        std::mutex m;
        std::map<std::uint64_t, std::shared_ptr<const F>> cache;
        std::deque<std::uint64_t> order;
        std::size_t capacity = 8;
        std::shared_ptr<const F> zero;
    };
    Grid grid_;
    double lo_ = 0, hi_ = 0;
    Eval eval_;
    std::shared_ptr<Memo> memo_;
};

}  // namespace cilab
