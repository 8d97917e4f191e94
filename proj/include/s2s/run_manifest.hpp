#pragma once

#include <chrono>
#include <fstream>
#include <sstream>
#include <type_traits>
#include <string>
#include <utility>
#include <vector>

#include "s2s/error.hpp"

namespace s2s {

/// Plain-text key=value record of one CLI run, appended to `<output>.manifest`.
class RunManifest {
 public:
  explicit RunManifest(std::string command) { set("command", std::move(command)); }

  template <typename V>
  void set(const std::string& key, const V& value) {
    std::ostringstream os;
    os.precision(10);
    os << value;
    for (auto& [k, v] : entries_)
      if (k == key) {
        v = os.str();
        return;
      }
    entries_.emplace_back(key, os.str());
  }

  /// Records wall-clock seconds of a phase under "time_<phase>_s".
  template <typename F>
  auto timed(const std::string& phase, F&& fn) {
    const auto start = std::chrono::steady_clock::now();
    auto finish = [&] {
      set("time_" + phase + "_s",
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    };
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      finish();
    } else {
      auto result = fn();
      finish();
      return result;
    }
  }

  [[nodiscard]] std::string to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : entries_) os << k << '=' << v << '\n';
    return os.str();
  }

  [[nodiscard]] const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  void append_to(const std::string& path) const {
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot append run manifest: " + path);
    out << "[run]\n" << to_text() << '\n';
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace s2s
