#pragma once

// Perturbation specifications used by consistency regularization.

#include <cmath>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "mkelab/error.hpp"

namespace mkelab {

/// Additive N(0, variance * I) noise on the network input.
struct InputGaussian {
  double variance = 0.0;
};

/// Additive N(0, variance * I) noise on the post-activation output of one
/// hidden layer. `layer` is 0-based over hidden layers (0 = first hidden).
struct HiddenGaussian {
  double variance = 0.0;
  int layer = 0;
};

/// Inverted dropout after one hidden layer (`layer` >= 0, 0-based) or after
/// every hidden layer (`layer` == -1): units are zeroed with probability
/// `rate`, survivors scaled by 1 / (1 - rate).
struct Dropout {
  double rate = 0.0;
  int layer = 0;
};

using TransformPart = std::variant<InputGaussian, HiddenGaussian, Dropout>;

/// A perturbation T. An empty part list is the identity ("none"); more than
/// one part is a composite, applied in network order.
class Transform {
 public:
  Transform() = default;

  static Transform none() { return {}; }
  static Transform input_gaussian(double v0) { return Transform({InputGaussian{v0}}); }
  static Transform hidden_gaussian(double v1, int layer = 0) {
    return Transform({HiddenGaussian{v1, layer}});
  }
  static Transform dropout(double r0, int layer = 0) { return Transform({Dropout{r0, layer}}); }
  static Transform composite(std::vector<TransformPart> parts) {
    return Transform(std::move(parts));
  }

  const std::vector<TransformPart>& parts() const { return parts_; }
  bool is_none() const { return parts_.empty(); }

  /// True when every part is a no-op: zero variances and zero dropout rate.
  bool is_identity() const {
    for (const auto& p : parts_) {
      bool noop = std::visit(
          [](const auto& x) {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Dropout>) return x.rate == 0.0;
            else return x.variance == 0.0;
          },
          p);
      if (!noop) return false;
    }
    return true;
  }

  /// Throws invalid_transform unless all parameters are in range for a
  /// network with `hidden_layers` hidden layers.
  void validate(int hidden_layers) const {
    for (const auto& p : parts_) {
      if (const auto* g = std::get_if<InputGaussian>(&p)) {
        if (!(g->variance >= 0.0) || !std::isfinite(g->variance))
          throw Error(Errc::invalid_transform, "input_gaussian variance must be >= 0");
      } else if (const auto* h = std::get_if<HiddenGaussian>(&p)) {
        if (!(h->variance >= 0.0) || !std::isfinite(h->variance))
          throw Error(Errc::invalid_transform, "hidden_gaussian variance must be >= 0");
        if (h->layer < 0 || h->layer >= hidden_layers)
          throw Error(Errc::invalid_transform,
                      "hidden_gaussian layer " + std::to_string(h->layer) +
                          " outside hidden range [0," + std::to_string(hidden_layers) + ")");
      } else if (const auto* d = std::get_if<Dropout>(&p)) {
        if (!(d->rate >= 0.0 && d->rate < 1.0))
          throw Error(Errc::invalid_transform, "dropout rate must lie in [0,1)");
        if (d->layer < -1 || d->layer >= hidden_layers)
          throw Error(Errc::invalid_transform,
                      "dropout layer " + std::to_string(d->layer) + " outside hidden range");
      }
    }
  }

  /// Short name of the transform family: none, input_gaussian,
  /// hidden_gaussian, dropout or composite.
  std::string kind_name() const {
    if (parts_.empty()) return "none";
    if (parts_.size() > 1) return "composite";
    return std::visit(
        [](const auto& x) -> std::string {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, InputGaussian>) return "input_gaussian";
          else if constexpr (std::is_same_v<T, HiddenGaussian>) return "hidden_gaussian";
          else return "dropout";
        },
        parts_.front());
  }

  /// The single strength parameter (variance or rate); 0 for none and the
  /// first part's parameter for composites.
  double strength() const {
    if (parts_.empty()) return 0.0;
    return std::visit(
        [](const auto& x) {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, Dropout>) return x.rate;
          else return x.variance;
        },
        parts_.front());
  }

  friend bool operator==(const Transform& a, const Transform& b) {
    if (a.parts_.size() != b.parts_.size()) return false;
    for (std::size_t i = 0; i < a.parts_.size(); ++i) {
      const auto& x = a.parts_[i];
      const auto& y = b.parts_[i];
      if (x.index() != y.index()) return false;
      if (const auto* g = std::get_if<InputGaussian>(&x)) {
        if (g->variance != std::get<InputGaussian>(y).variance) return false;
      } else if (const auto* h = std::get_if<HiddenGaussian>(&x)) {
        const auto& o = std::get<HiddenGaussian>(y);
        if (h->variance != o.variance || h->layer != o.layer) return false;
      } else {
        const auto& d = std::get<Dropout>(x);
        const auto& o = std::get<Dropout>(y);
        if (d.rate != o.rate || d.layer != o.layer) return false;
      }
    }
    return true;
  }

 private:
  explicit Transform(std::vector<TransformPart> parts) : parts_(std::move(parts)) {}

  std::vector<TransformPart> parts_;
};

}  // namespace mkelab
