#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lode/errors.hpp"
#include "lode/numcore.hpp"

namespace lode {

/// Observations x_i at strictly increasing times t_i.
struct TimedSequence {
  std::vector<Vector> x;
  std::vector<double> t;

  std::size_t size() const { return x.size(); }
  bool empty() const { return x.empty(); }
  std::size_t dim() const { return x.empty() ? 0 : x.front().size(); }

  void push_back(Vector value, double time) {
    x.push_back(std::move(value));
    t.push_back(time);
  }

  /// Throws SpecError unless timestamps strictly increase and dimensions agree.
  void validate() const {
    if (x.size() != t.size()) throw SpecError("TimedSequence: value/time count mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].size() != dim()) {
        throw SpecError("TimedSequence: point " + std::to_string(i) + " has dimension " +
                        std::to_string(x[i].size()) + ", expected " + std::to_string(dim()));
      }
      if (i > 0 && !(t[i] > t[i - 1])) {
        throw SpecError("TimedSequence: timestamps not strictly increasing at index " +
                        std::to_string(i));
      }
    }
  }

  /// Points [first, first + count).
  TimedSequence slice(std::size_t first, std::size_t count) const {
    TimedSequence out;
    out.x.assign(x.begin() + first, x.begin() + first + count);
    out.t.assign(t.begin() + first, t.begin() + first + count);
    return out;
  }
};

}  // namespace lode
