#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mkelab {

enum class Errc {
  invalid_architecture,
  shape,
  numeric,
  tape,
  invalid_transform,
  invalid_size,
  split,
  degenerate_split,
  training,
  config,
  eval,
  invalid_subset,
  estimation,
  pairing,
  domain,
  io,
  usage,
};

constexpr std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_architecture: return "invalid-architecture";
    case Errc::shape: return "shape";
    case Errc::numeric: return "numeric";
    case Errc::tape: return "tape";
    case Errc::invalid_transform: return "invalid-transform";
    case Errc::invalid_size: return "invalid-size";
    case Errc::split: return "split";
    case Errc::degenerate_split: return "degenerate-split";
    case Errc::training: return "training";
    case Errc::config: return "config";
    case Errc::eval: return "eval";
    case Errc::invalid_subset: return "invalid-subset";
    case Errc::estimation: return "estimation";
    case Errc::pairing: return "pairing";
    case Errc::domain: return "domain";
    case Errc::io: return "io";
    case Errc::usage: return "usage";
  }
  return "unknown";
}

/// Single exception type for the library; `code()` tells callers which
/// contract was violated.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + " error: " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace mkelab
