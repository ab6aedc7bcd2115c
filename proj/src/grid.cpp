#include "hybres/grid.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include "hybres/error.hpp"

namespace hybres {

void GridSpec::validate() const {
    if (nx < 3 || ny < 3) {
        throw InvalidInput("grid needs at least 3 points per axis");
    }
    if (!(x_max > x_min) || !(y_max > y_min)) {
        throw InvalidInput("grid ranges must be increasing");
    }
}

bool GridSpec::periodic() const {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    return std::abs((x_max - x_min) - two_pi) < 1e-9 && std::abs((y_max - y_min) - two_pi) < 1e-9;
}

double wrap_angle(double angle, double lo) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double w = std::fmod(angle - lo, two_pi);
    if (w < 0.0) {
        w += two_pi;
    }
    return lo + w;
}

int thread_count_from_env() {
    if (const char* env = std::getenv("HYBRES_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) {
            return n;
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || count < 2) {
        for (std::size_t k = 0; k < count; ++k) {
            fn(k);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= count) {
                return;
            }
            try {
                fn(k);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
                next.store(count);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const auto n = static_cast<std::size_t>(threads) < count ? static_cast<std::size_t>(threads) : count;
    pool.reserve(n);
    for (std::size_t t = 0; t < n; ++t) {
        pool.emplace_back(worker);
    }
    for (auto& th : pool) {
        th.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

}  // namespace hybres
