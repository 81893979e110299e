#include "log.hpp"

#include <spdlog/logger.h>
#include <spdlog/sinks/ostream_sink.h>

namespace ostk::cli {

struct Logger::Impl {
  std::shared_ptr<spdlog::logger> logger;
};

Logger::Logger(std::ostream& sink) : impl_(std::make_unique<Impl>()) {
  auto s = std::make_shared<spdlog::sinks::ostream_sink_mt>(sink, /*force_flush=*/true);
  impl_->logger = std::make_shared<spdlog::logger>("ostk", std::move(s));
  impl_->logger->set_pattern("[%H:%M:%S] %^%l%$ %v");
}

Logger::~Logger() = default;

void Logger::info(std::string_view message) { impl_->logger->info(message); }
void Logger::warn(std::string_view message) { impl_->logger->warn(message); }

}  // namespace ostk::cli
