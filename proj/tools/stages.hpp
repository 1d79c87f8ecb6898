// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "pipeline_config.hpp"

namespace tinyllm::cli {

const std::vector<std::string>& stage_names();

struct StageOptions {
  bool force = false;  // ignore up-to-date stamps
};

// Runs one stage. Data and reports go to `out`, progress to the log.
void run_stage(const std::string& stage, const PipelineConfig& cfg, const StageOptions& opt, std::ostream& out);

}  // namespace tinyllm::cli
