#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace trainspeed {

struct TraceEntry {
  double t = 0.0;
  double estimate = 0.0;  // m/s
};

/// Speed estimates of one estimator over one run.
struct SpeedEstimateTrace {
  std::string run_id;
  std::string estimator;  // akf | single2d | single1d | multibranch | wheel-baseline | gps-baseline
  std::vector<TraceEntry> entries;
};

}  // namespace trainspeed
