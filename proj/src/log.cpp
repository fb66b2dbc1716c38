// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tsse/log.hpp"

#include <atomic>

namespace tsse::log {
namespace {
std::atomic<Level> g_threshold{Level::kInfo};
std::mutex g_mu;
constexpr std::string_view kNames[] = {"debug", "info", "warn", "error"};
}  // namespace

Level threshold() { return g_threshold.load(); }
void set_threshold(Level level) { g_threshold.store(level); }

Line::~Line() {
  if (level_ < threshold() || level_ == Level::kOff) return;
  std::lock_guard<std::mutex> lock(g_mu);
  std::cerr << "[" << kNames[static_cast<int>(level_)] << "] " << buf_.str() << '\n';
}

}  // namespace tsse::log
