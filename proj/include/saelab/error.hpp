#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace saelab {

enum class ErrorCode {
  backend,
  hook,
  intervention,
  numeric,
  shape,
  format,
  io,
  divergence,
  spec,
  capability,
  suite,
  corpus,
  report,
  provider,
  insufficient_data,
  precondition,
  ingest,
  stale_cache,
  query,
  import,
  render,
  not_found,
  busy,
  config,
};

inline std::string_view code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::backend: return "backend_error";
    case ErrorCode::hook: return "hook_error";
    case ErrorCode::intervention: return "intervention_error";
    case ErrorCode::numeric: return "numeric_error";
    case ErrorCode::shape: return "shape_error";
    case ErrorCode::format: return "format_error";
    case ErrorCode::io: return "io_error";
    case ErrorCode::divergence: return "divergence_error";
    case ErrorCode::spec: return "spec_error";
    case ErrorCode::capability: return "capability_error";
    case ErrorCode::suite: return "suite_error";
    case ErrorCode::corpus: return "corpus_error";
    case ErrorCode::report: return "report_error";
    case ErrorCode::provider: return "provider_error";
    case ErrorCode::insufficient_data: return "insufficient_data";
    case ErrorCode::precondition: return "precondition_violation";
    case ErrorCode::ingest: return "ingest_error";
    case ErrorCode::stale_cache: return "stale_cache";
    case ErrorCode::query: return "query_error";
    case ErrorCode::import: return "import_error";
    case ErrorCode::render: return "render_error";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::busy: return "busy";
    case ErrorCode::config: return "config_error";
  }
  return "error";
}

// Every failure the library reports carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Non-finite values appeared in the forward pass; `step` is the generation
// step (0 = prompt processing) at which it happened.
class NumericError : public Error {
 public:
  NumericError(std::size_t step, const std::string& message)
      : Error(ErrorCode::numeric, message), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class ProviderError : public Error {
 public:
  ProviderError(const std::string& message, int attempts, std::optional<int> http_status)
      : Error(ErrorCode::provider, message), attempts_(attempts), http_status_(http_status) {}

  int attempts() const noexcept { return attempts_; }
  std::optional<int> http_status() const noexcept { return http_status_; }

 private:
  int attempts_;
  std::optional<int> http_status_;
};

}  // namespace saelab
