#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "headsplat/config.hpp"
#include "headsplat/data_pipeline.hpp"
#include "headsplat/model.hpp"
#include "headsplat/optimizer.hpp"

namespace headsplat {

struct StageReport {
    int stage = 0;
    std::int64_t first_iteration = 0;
    std::vector<LossReport> trace;
    std::filesystem::path checkpoint;
    double seconds = 0.0;
};

struct CheckpointInfo {
    int stage = 0;
    std::int64_t iteration = 0; // iterations completed
};

/// Which image a frame evaluation uses.
enum class OutputKind {
    Canonical, // posed canonical cloud, no deformation
    Deformed,  // deformer active
    Synthesized,
};

/// Stage runner. Stage 1 fits the canonical cloud, stage 2 the deformation
/// networks, stage 3 the encoder and injection layers in front of the frozen
/// generator (preceded by inversion of the generator on extreme-pose frames).
/// Every iteration draws its randomness from (seed, stage, iteration), so a
/// resumed run continues exactly where the original would have.
class Trainer {
public:
    Trainer(const AvatarDataset& dataset, TrainConfig config);

    AvatarModel& model() { return *model_; }
    const TrainConfig& config() const { return config_; }

    /// Names of the tensors trained in `stage`.
    std::vector<std::string> trainable(int stage) const;

    /// Sets requires_grad for the stage and builds its optimizers.
    void begin_stage(int stage);
    LossReport step(std::int64_t iteration);

    /// Runs iterations [start, start + count) of `stage`, writing the trace
    /// and a checkpoint to `dir` (skipped when `dir` is empty).
    StageReport run_stage(int stage, const std::filesystem::path& dir, std::int64_t start = 0,
                          std::int64_t count = -1);

    /// Inverts the generator on the configured (or extreme-pose) training
    /// frames and stores the pivot in the model.
    PtiResult run_pti(const std::filesystem::path& dir = {});
    std::vector<std::int64_t> pti_views() const;

    /// stage1 → stage2 → inversion → stage3 under `out`.
    std::vector<StageReport> run_all(const std::filesystem::path& out);

    void save_checkpoint(const std::filesystem::path& dir, int stage, std::int64_t iteration) const;
    /// Restores model state; optimizer moments are applied by the next
    /// begin_stage() of the same stage.
    CheckpointInfo load_checkpoint(const std::filesystem::path& dir);

    int active_stage() const { return stage_; }

private:
    std::mt19937_64 iteration_rng(std::int64_t iteration) const;
    std::vector<std::pair<std::string, torch::Tensor>> stage_parameters(int stage) const;
    void check_frozen() const;

    const AvatarDataset& data_;
    TrainConfig config_;
    std::unique_ptr<AvatarModel> model_;
    int stage_ = 0;
    std::unique_ptr<Adam> opt_;
    std::unique_ptr<Adam> d_opt_;
    std::optional<TensorStore> pending_optimizer_;
    int pending_stage_ = 0;
    std::vector<torch::Tensor> frozen_;
};

/// Output image (H×W×3) for one frame.
torch::Tensor frame_output(AvatarModel& model, const FrameConditioning& cond, OutputKind kind,
                           double expression_scale = 1.0);

/// Mean PSNR over `frames` against the dataset images.
double mean_psnr(AvatarModel& model, const AvatarDataset& data, const std::vector<std::int64_t>& frames,
                 OutputKind kind);

/// Mean RoI-aligned L1 inside the mouth box over `frames`.
double mean_mouth_l1(AvatarModel& model, const AvatarDataset& data, const std::vector<std::int64_t>& frames,
                     OutputKind kind);

/// Checkpoint directory of a stage inside a run directory.
std::filesystem::path stage_dir(const std::filesystem::path& run, int stage);

} // namespace headsplat
