// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace moesep {

// Categorized runtime error. The CLI maps `category` to its one-line
// machine-parsable error output; library code uses plain std exceptions
// where no category applies.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}

  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

enum class Mode { kTrain, kEval };

// Class of a training minibatch for multi-gate routing. kUnspecified is
// valid for single-gate models and for all inference calls.
enum class BatchClass { kOverlap, kNonOverlap, kUnspecified };

using Rng = std::mt19937_64;

}  // namespace moesep
