#pragma once

#include <iosfwd>
#include <memory>
#include <string_view>

namespace ostk::cli {

// Timestamped diagnostics on an arbitrary stream. Kept free of tensor
// headers so the logging backend builds against its own fmt.
class Logger {
 public:
  explicit Logger(std::ostream& sink);
  ~Logger();

  void info(std::string_view message);
  void warn(std::string_view message);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ostk::cli
