#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "headsplat/config.hpp"
#include "headsplat/data_pipeline.hpp"

namespace headsplat {

enum class Study { Regions, Blocks, Prune, Features, Gan };

Study parse_study(const std::string& text);
std::string to_string(Study study);

struct AblationRecord {
    std::string study;
    std::string label;
    std::string region;
    std::vector<int> blocks;
    double psnr = 0.0;
    double lpips = 0.0;
    std::int64_t iterations = 0;
};

struct AblationOptions {
    /// Passes over the training split for each short run.
    std::int64_t epochs = 10;
};

/// Runs one study against a finished training run (`run` holds stage1,
/// stage2, stage3 and pti). Training studies start from the stage-2
/// checkpoint and the inverted generator; the prune study only evaluates the
/// stage-3 checkpoint with injection restricted to block subsets. Scores are
/// computed on the test split.
///
///   regions   R1, R2, R3, R4, R3+R4 at all blocks
///   blocks    R3 at each single block
///   prune     all blocks, then each block left out
///   features  ours, w/o triplane, w/o cross-atten, w/o z_tmp, w/o init
///   gan       ours, w/o ADA, w/o Discri, full-tune
std::vector<AblationRecord> run_ablation(Study study, const AvatarDataset& data, const TrainConfig& config,
                                         const std::filesystem::path& run, const AblationOptions& options = {});

nlohmann::json to_json(const std::vector<AblationRecord>& records);

} // namespace headsplat
