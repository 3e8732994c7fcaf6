#pragma once

#include <string>

#include "medkg/tensor.hpp"

namespace medkg::ag {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed parameter set; parameters with no gradient this step
// contribute zero gradient (moments still decay). Returns false and skips
// the whole step when any gradient is non-finite.
class Adam {
 public:
  Adam(const ParamStore& params, AdamConfig cfg = {});

  bool step(ParamStore& params);
  long steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

// Checkpoint: <path> holds row-major float64 blocks back to back, <path>.idx
// is a text index of "name rows cols byte_offset" lines.
void save_checkpoint(const ParamStore& params, const std::string& path);
void load_checkpoint(ParamStore& params, const std::string& path);

}  // namespace medkg::ag
