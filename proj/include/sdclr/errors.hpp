#pragma once

#include <stdexcept>
#include <string>

namespace sdclr {

/// A declarative recipe (profile, split, config field) is malformed.
struct InvalidSpec : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A numeric argument is outside its admissible range.
struct InvalidParameter : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// The source data cannot supply what a profile asks for.
struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shapes or key sets passed between components disagree.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Training produced a non-finite loss.
struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace sdclr
