#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace specstg {

// Each error category maps to one CLI exit code (see exit_code_for in
// commands.hpp).

struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint and dataset disagree on the node count.
struct NodeMismatchError : std::runtime_error {
  NodeMismatchError(std::size_t checkpoint_nodes, std::size_t data_nodes)
      : std::runtime_error("node count mismatch: checkpoint has " +
                           std::to_string(checkpoint_nodes) + " nodes, dataset has " +
                           std::to_string(data_nodes)),
        checkpoint(checkpoint_nodes),
        data(data_nodes) {}
  std::size_t checkpoint;
  std::size_t data;
};

// Forecast and truth files do not describe the same windows.
struct AlignmentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace specstg
