#include "emoe/tensor.hpp"

#include <cmath>
#include <sstream>

namespace emoe {

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void check_finite(const Tensor& t, const char* where) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(t[i])) {
            std::ostringstream os;
            os << where << ": non-finite value " << t[i] << " at flat index " << i;
            throw std::runtime_error(os.str());
        }
    }
}

}  // namespace emoe
