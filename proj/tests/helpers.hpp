#pragma once

#include <string>

#include "cnnscale/calibration.hpp"
#include "cnnscale/cost.hpp"
#include "cnnscale/model.hpp"

namespace testutil {

inline std::string data_path(const std::string& name) { return std::string(CNNSCALE_DATA_DIR) + "/" + name; }

/// One flat tier big enough for anything the tests build; ring only.
inline cnnscale::SystemDescriptor flat_system(double alpha, double beta, int delta = 4) {
  cnnscale::SystemDescriptor s;
  s.tiers = {{"all", 1 << 20, alpha, beta}};
  s.pe_memory_capacity = 1e18;
  s.delta = delta;
  s.gamma = 1.0;
  s.ring_tree_threshold = 0.0;
  return s;
}

inline cnnscale::CalibrationProfile uniform_profile(double fw, double bw, double wu) {
  cnnscale::CalibrationProfile p;
  p.default_timing = cnnscale::LayerTiming{fw, bw, wu};
  return p;
}

/// A stack of `n` 1-D eltwise-free convolutions over X=[x] with C=F=c and K=1.
inline std::string conv_stack(int n, int c, int x, int d, int b) {
  std::string s = "dataset D=" + std::to_string(d) + " B=" + std::to_string(b) + " E=1\n";
  for (int i = 1; i <= n; ++i)
    s += "c" + std::to_string(i) + " conv C=" + std::to_string(c) + " F=" + std::to_string(c) +
         " X=" + std::to_string(x) + " K=1 bias=0\n";
  return s;
}

}  // namespace testutil
