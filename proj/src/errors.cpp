#include "tvsurv/errors.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace tvsurv {

namespace {
std::atomic<bool> g_warnings{true};
std::mutex g_warn_mutex;
}  // namespace

void warn(const std::string& msg) {
    if (!g_warnings.load()) return;
    std::lock_guard lock(g_warn_mutex);
    std::cerr << "warning: " << msg << '\n';
}

void set_warnings_enabled(bool enabled) { g_warnings.store(enabled); }

}  // namespace tvsurv
