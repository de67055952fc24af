#pragma once

#include <chrono>
#include <cstdio>
#include <string>

namespace reasonlens::acceptance {

// One line per criterion: PASS / FAIL / BLOCKED, then the criterion and a detail.
class Report {
 public:
  void pass(const std::string& name, const std::string& detail) { line("PASS", name, detail); }
  void fail(const std::string& name, const std::string& detail) {
    ++failed_;
    line("FAIL", name, detail);
  }
  void check(bool ok, const std::string& name, const std::string& detail) {
    ok ? pass(name, detail) : fail(name, detail);
  }
  void blocked(const std::string& name, const std::string& reason) {
    ++blocked_;
    line("BLOCKED", name, reason);
  }
  void info(const std::string& text) { std::printf("  info: %s\n", text.c_str()); std::fflush(stdout); }

  int failed() const { return failed_; }
  int blocked() const { return blocked_; }
  int ran() const { return ran_; }

 private:
  void line(const char* status, const std::string& name, const std::string& detail) {
    if (std::string(status) != "BLOCKED") ++ran_;
    std::printf("%-7s %s | %s\n", status, name.c_str(), detail.c_str());
    std::fflush(stdout);
  }
  int failed_ = 0, blocked_ = 0, ran_ = 0;
};

inline std::string fmt(const char* spec, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, spec, a);
  return buf;
}

inline std::string fmt(const char* spec, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, spec, a, b);
  return buf;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace reasonlens::acceptance
