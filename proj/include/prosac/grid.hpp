#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace prosac {

using Point = std::vector<double>;

struct GridAxis {
  std::string name;
  std::vector<double> values;
};

/// Finite attacker configuration set: the Cartesian product of named axes,
/// indexed lexicographically (last axis varies fastest).
class HyperGrid {
 public:
  HyperGrid() = default;

  explicit HyperGrid(std::vector<GridAxis> axes) : axes_(std::move(axes)) {
    if (axes_.empty()) throw std::invalid_argument("HyperGrid: at least one axis required");
    size_ = 1;
    for (const auto& axis : axes_) {
      if (axis.values.empty()) {
        throw std::invalid_argument("HyperGrid: axis '" + axis.name + "' has no values");
      }
      for (double v : axis.values) {
        if (!std::isfinite(v)) {
          throw std::invalid_argument("HyperGrid: axis '" + axis.name + "' has a non-finite value");
        }
      }
      size_ *= axis.values.size();
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return size_; }
  [[nodiscard]] std::size_t dims() const noexcept { return axes_.size(); }
  [[nodiscard]] bool empty() const noexcept { return size_ == 0; }
  [[nodiscard]] const std::vector<GridAxis>& axes() const noexcept { return axes_; }

  [[nodiscard]] Point point(std::size_t index) const {
    if (index >= size_) throw std::out_of_range("HyperGrid: point index out of range");
    Point p(axes_.size());
    for (std::size_t d = axes_.size(); d-- > 0;) {
      const auto& vals = axes_[d].values;
      p[d] = vals[index % vals.size()];
      index /= vals.size();
    }
    return p;
  }

  /// Coordinates min-max scaled to [0,1] per axis; single-valued axes map to 0.
  [[nodiscard]] Point normalized_point(std::size_t index) const {
    Point p = point(index);
    for (std::size_t d = 0; d < p.size(); ++d) {
      const auto [lo, hi] = std::minmax_element(axes_[d].values.begin(), axes_[d].values.end());
      const double span = *hi - *lo;
      p[d] = span > 0.0 ? (p[d] - *lo) / span : 0.0;
    }
    return p;
  }

  /// Index of the grid point equal to lambda (per-coordinate tolerance 1e-12
  /// relative), or nullopt.
  [[nodiscard]] std::optional<std::size_t> index_of(std::span<const double> lambda) const {
    if (lambda.size() != axes_.size()) return std::nullopt;
    std::size_t index = 0;
    for (std::size_t d = 0; d < axes_.size(); ++d) {
      const auto& vals = axes_[d].values;
      auto it = std::find_if(vals.begin(), vals.end(), [&](double v) {
        return std::abs(v - lambda[d]) <= 1e-12 * std::max(1.0, std::abs(v));
      });
      if (it == vals.end()) return std::nullopt;
      index = index * vals.size() + static_cast<std::size_t>(it - vals.begin());
    }
    return index;
  }

 private:
  std::vector<GridAxis> axes_;
  std::size_t size_ = 0;
};

inline std::string format_point(std::span<const double> p) {
  std::string out = "(";
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(p[i]);
  }
  return out + ")";
}

}  // namespace prosac
