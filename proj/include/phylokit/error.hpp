#pragma once

#include <stdexcept>
#include <string>

namespace phylokit {

// Data or model error: bad input, inadmissible parameters, failed numerics.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace phylokit
