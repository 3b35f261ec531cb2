#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "verse/eval.hpp"

namespace verse {

/// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Text overlay of a prediction against ground truth: '#' hit, 'o' missed,
/// 'x' false positive, '.' background, '+'/'-' clicks. Wide images are subsampled.
std::string ascii_overlay(const Mask& pred, const Mask& gt, const std::vector<Click>& clicks, int max_width = 64);

}  // namespace verse
