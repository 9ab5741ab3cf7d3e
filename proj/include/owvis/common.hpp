#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace owvis {

// All library failures carry a short machine-checkable code plus a human
// message. The CLI maps error categories to exit codes.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

// Bad command-line usage or bad config. Exit code 1.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (files, checkpoints, datasets).
// Exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

// A numeric verification check failed. Exit code 3.
class VerifyError : public Error {
 public:
  using Error::Error;
};

// Thread budget for embarrassingly parallel work (per-video evaluation and
// generation). Honors the OWVIS_THREADS environment variable as a cap.
int thread_budget(int jobs);

// Runs fn(i) for i in [0, n) across at most thread_budget(n) threads.
// fn must only touch state owned by index i; results are merged by the
// caller in index order so output is deterministic.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace owvis
