#include "distill/grid.hpp"

#include <cmath>

namespace distill {

ProbabilityMap::ProbabilityMap(int height, int width, float fill)
    : Grid<float>(height, width, fill) {
  validate();
}

ProbabilityMap::ProbabilityMap(int height, int width, std::vector<float> values)
    : Grid<float>(height, width, std::move(values)) {
  validate();
}

ProbabilityMap::ProbabilityMap(Grid<float> grid) : Grid<float>(std::move(grid)) { validate(); }

void ProbabilityMap::validate() const {
  for (float v : values()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw DomainError("probability map value outside [0,1]: " + std::to_string(v));
    }
  }
}

}  // namespace distill
