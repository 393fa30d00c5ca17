#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "stsc/model.hpp"

namespace stsc {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitGradcheck = 5,
};

/// Pads bottom and right by mirror reflection (edge not repeated) up to the
/// next multiple of `multiple`.
Tensor reflect_pad(const Tensor& image, std::int64_t multiple);
/// Top-left h x w window.
Tensor crop_top_left(const Tensor& image, std::int64_t h, std::int64_t w);
/// Reflect-pads to a multiple of 16, enhances, and crops back.
Tensor enhance_image(const Model& model, const Tensor& image);

/// Entry point of the `stsc` tool. Argument 0 is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stsc
