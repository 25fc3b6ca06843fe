#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mcss {

/// Finite sentinel standing in for an absent (-infinity) obstacle.
/// Reflection short-circuits on it; it is never fed into a driver.
inline constexpr double no_obstacle = -1e300;

inline bool is_no_obstacle(double v) { return v <= no_obstacle * 0.5; }

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto exit codes: validation/config -> 1,
// scheme/CFL/numeric -> 2.
// ---------------------------------------------------------------------------

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad inputs: domain violations, dimension mismatches, inconsistent rules.
struct validation_error : error {
    using error::error;
};

/// Bad configuration files or parameter sets.
struct config_error : validation_error {
    using validation_error::validation_error;
};

/// Stability/CFL violations and non-converging iterations. Messages state the
/// offending quantity and, where applicable, the maximal admissible step.
struct scheme_error : error {
    using error::error;
};

/// NaN/Inf produced by user coefficients or drivers.
struct numeric_error : error {
    using error::error;
};

// ---------------------------------------------------------------------------
// Logging, gated by the MCSS_LOG environment variable
// (error|warn|info|debug; default warn). Goes to stderr so that stdout stays
// reserved for machine-readable summaries.
// ---------------------------------------------------------------------------

enum class log_level : int { error = 0, warn = 1, info = 2, debug = 3 };

inline log_level log_threshold() {
    static const log_level lvl = [] {
        const char* env = std::getenv("MCSS_LOG");
        if (!env) return log_level::warn;
        std::string s(env);
        if (s == "error") return log_level::error;
        if (s == "warn") return log_level::warn;
        if (s == "info") return log_level::info;
        if (s == "debug") return log_level::debug;
        std::fprintf(stderr, "[mcss] unknown MCSS_LOG value '%s', using warn\n", env);
        return log_level::warn;
    }();
    return lvl;
}

inline void log(log_level lvl, const std::string& msg) {
    if (static_cast<int>(lvl) > static_cast<int>(log_threshold())) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::fprintf(stderr, "[mcss:%s] %s\n", names[static_cast<int>(lvl)], msg.c_str());
}

inline void log_info(const std::string& m) { log(log_level::info, m); }
inline void log_warn(const std::string& m) { log(log_level::warn, m); }
inline void log_debug(const std::string& m) { log(log_level::debug, m); }

// ---------------------------------------------------------------------------
// Deterministic parallelism. Work items write disjoint slots, so the result
// is bit-identical for every thread count; any reduction happens sequentially
// afterwards.
// ---------------------------------------------------------------------------

inline void parallel_for(std::size_t n, int n_threads, const std::function<void(std::size_t)>& body) {
    if (n == 0) return;
    if (n_threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(n_threads), n);
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::exception_ptr first_error;
    std::mutex err_mu;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            const std::size_t chunk = 16;
            for (;;) {
                std::size_t begin = next.fetch_add(chunk);
                if (begin >= n) return;
                std::size_t end = std::min(n, begin + chunk);
                try {
                    for (std::size_t i = begin; i < end; ++i) body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Small numeric helpers
// ---------------------------------------------------------------------------

inline void require_finite(double v, const char* what, const std::string& where) {
    if (!std::isfinite(v))
        throw numeric_error(std::string("non-finite ") + what + " at " + where);
}

inline double sqr(double x) { return x * x; }

/// Format with 17 significant digits: round-trippable doubles for CSV.
inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

/// Closest known key within edit distance 3, for "did you mean" hints.
inline std::string nearest_key(const std::string& key, const std::vector<std::string>& known) {
    std::string best;
    std::size_t best_d = 4;
    for (const auto& cand : known) {
        const std::size_t d = edit_distance(key, cand);
        if (d < best_d) {
            best_d = d;
            best = cand;
        }
    }
    return best;
}

}  // namespace mcss
