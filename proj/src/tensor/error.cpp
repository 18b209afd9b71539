#include "homofm/error.hpp"

#include <sstream>

namespace homofm {

namespace {

std::string point_message(std::size_t index, double x, double y) {
  std::ostringstream os;
  os << "degenerate point #" << index << " (" << x << ", " << y
     << "): homogeneous denominator vanishes";
  return os.str();
}

}  // namespace

DegeneratePointError::DegeneratePointError(std::size_t index, double x, double y)
    : DegeneracyError(point_message(index, x, y)), index_(index) {}

NumericError::NumericError(const std::string& what, std::size_t step)
    : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

FormatError::FormatError(const std::string& what, std::size_t offset)
    : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}

TrainingError::TrainingError(const std::string& what, std::size_t iteration)
    : Error(what + " at iteration " + std::to_string(iteration)), iteration_(iteration) {}

}  // namespace homofm
