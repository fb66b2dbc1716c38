// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <iostream>
#include <mutex>
#include <sstream>
#include <string_view>

namespace tsse::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

Level threshold();
void set_threshold(Level level);

/// Collects one line and writes it to stderr on destruction.
class Line {
 public:
  explicit Line(Level level) : level_(level) {}
  ~Line();
  Line(const Line&) = delete;
  Line& operator=(const Line&) = delete;

  template <typename T>
  Line& operator<<(const T& v) {
    if (level_ >= threshold()) buf_ << v;
    return *this;
  }

 private:
  Level level_;
  std::ostringstream buf_;
};

inline Line debug() { return Line(Level::kDebug); }
inline Line info() { return Line(Level::kInfo); }
inline Line warn() { return Line(Level::kWarn); }
inline Line error() { return Line(Level::kError); }

}  // namespace tsse::log
