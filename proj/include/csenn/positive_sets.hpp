#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace csenn {

// positives[i] lists pool rows treated as positives of anchor i. The pool is
// laid out as rows [0, B) for originals and [B, 2B) for their masked twins.
using PositiveSets = std::vector<std::vector<std::int64_t>>;

// P_i = {j != i : labels_j == labels_i} together with the masked twins of
// those j and the masked twin of i itself. Labels compare as whole k-bit
// vectors. Sets are sorted ascending.
PositiveSets build_positive_sets(const torch::Tensor& action_labels);

}  // namespace csenn
