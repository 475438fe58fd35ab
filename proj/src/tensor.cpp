#include "vqcpc/tensor.hpp"

#include <sstream>

namespace vqcpc {
namespace detail {

namespace {
thread_local std::size_t g_alloc_high_water = 0;
}

void note_allocation(std::size_t elements) {
  if (elements > g_alloc_high_water) g_alloc_high_water = elements;
}

std::size_t allocation_high_water() { return g_alloc_high_water; }

void reset_allocation_high_water() { g_alloc_high_water = 0; }

}  // namespace detail

std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

}  // namespace vqcpc
