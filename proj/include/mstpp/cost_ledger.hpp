#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace mstpp {

/// Multiply-accumulate counts keyed by layer path ("body.0/encoder.0/msa/core").
/// One MAC is one multiply-accumulate; FLOPs are reported as 2 x MACs.
class CostLedger {
   public:
    void record(const std::string& path, std::uint64_t macs) { macs_[path] += macs; }

    std::uint64_t total() const {
        std::uint64_t sum = 0;
        for (const auto& [_, v] : macs_) sum += v;
        return sum;
    }

    /// Sum over every path whose last segment equals `leaf`.
    std::uint64_t total_with_leaf(std::string_view leaf) const {
        std::uint64_t sum = 0;
        for (const auto& [k, v] : macs_) {
            const auto pos = k.rfind('/');
            const std::string_view last = pos == std::string::npos ? std::string_view(k)
                                                                   : std::string_view(k).substr(pos + 1);
            if (last == leaf) sum += v;
        }
        return sum;
    }

    /// Sum over every path starting with `prefix`.
    std::uint64_t total_with_prefix(std::string_view prefix) const {
        std::uint64_t sum = 0;
        for (const auto& [k, v] : macs_)
            if (std::string_view(k).substr(0, prefix.size()) == prefix) sum += v;
        return sum;
    }

    const std::map<std::string, std::uint64_t>& entries() const { return macs_; }
    bool empty() const { return macs_.empty(); }
    void clear() { macs_.clear(); }

   private:
    std::map<std::string, std::uint64_t> macs_;
};

namespace detail {

struct CostContext {
    CostLedger* ledger = nullptr;
    std::vector<std::string> path;
};

inline CostContext& cost_context() {
    thread_local CostContext ctx;
    return ctx;
}

inline std::string current_cost_path() {
    const auto& p = cost_context().path;
    if (p.empty()) return "root";
    std::string out = p.front();
    for (std::size_t i = 1; i < p.size(); ++i) out += "/" + p[i];
    return out;
}

}  // namespace detail

/// Attaches a ledger to the calling thread for the lifetime of the guard.
class LedgerScope {
   public:
    explicit LedgerScope(CostLedger& ledger) : prev_(detail::cost_context().ledger) {
        detail::cost_context().ledger = &ledger;
    }
    ~LedgerScope() { detail::cost_context().ledger = prev_; }
    LedgerScope(const LedgerScope&) = delete;
    LedgerScope& operator=(const LedgerScope&) = delete;

   private:
    CostLedger* prev_;
};

/// Pushes one path segment onto the current layer path.
class CostScope {
   public:
    explicit CostScope(std::string name) { detail::cost_context().path.push_back(std::move(name)); }
    ~CostScope() { detail::cost_context().path.pop_back(); }
    CostScope(const CostScope&) = delete;
    CostScope& operator=(const CostScope&) = delete;
};

inline void record_macs(std::uint64_t macs) {
    auto& ctx = detail::cost_context();
    if (ctx.ledger != nullptr) ctx.ledger->record(detail::current_cost_path(), macs);
}

}  // namespace mstpp
