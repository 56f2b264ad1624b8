#include "csenn/positive_sets.hpp"

#include <algorithm>

#include "csenn/common.hpp"

namespace csenn {

PositiveSets build_positive_sets(const torch::Tensor& action_labels) {
  if (action_labels.dim() != 2) throw ShapeError("build_positive_sets: labels must be B x k");
  const auto b = action_labels.size(0);
  auto labels = action_labels.to(torch::kCPU, torch::kInt64).contiguous();
  auto acc = labels.accessor<std::int64_t, 2>();
  const auto k = labels.size(1);
  auto same = [&](std::int64_t i, std::int64_t j) {
    for (std::int64_t c = 0; c < k; ++c)
      if (acc[i][c] != acc[j][c]) return false;
    return true;
  };

  PositiveSets sets(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) {
    auto& p = sets[static_cast<std::size_t>(i)];
    for (std::int64_t j = 0; j < b; ++j)
      if (j != i && same(i, j)) p.push_back(j);
    const auto originals = p.size();
    for (std::size_t n = 0; n < originals; ++n) p.push_back(p[n] + b);
    p.push_back(i + b);
    std::sort(p.begin(), p.end());
  }
  return sets;
}

}  // namespace csenn
