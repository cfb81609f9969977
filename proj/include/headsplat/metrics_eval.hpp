#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <torch/torch.h>

#include "headsplat/deformer.hpp"
#include "headsplat/objectives.hpp"

#include <nlohmann/json.hpp>

namespace headsplat {

inline constexpr double kPsnrCap = 99.0;

/// Peak signal-to-noise ratio in dB for images in [0,1]; 99 when identical.
double psnr(const torch::Tensor& a, const torch::Tensor& b);

/// Gaussian-window SSIM (11×11, σ 1.5, K = (0.01, 0.03), L = 1), averaged
/// over valid window positions and channels. Images are H×W×C.
double ssim(const torch::Tensor& a, const torch::Tensor& b);

/// Perceptual distance (see loss_perceptual).
double lpips(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor* extractor);

using Landmarks = std::vector<Eigen::Vector2d>;

/// Mean Euclidean distance between corresponding landmarks, in pixels.
double f_lmd(const Landmarks& pred, const Landmarks& gt);

/// Mean |G_a - G_b| where G = |∂x I| + |∂y I| from forward differences.
double sharpness_difference(const torch::Tensor& a, const torch::Tensor& b);

/// Source of facial landmarks for an image.
class LandmarkProvider {
public:
    virtual ~LandmarkProvider() = default;
    virtual Landmarks detect(const torch::Tensor& image, const std::optional<LandmarkBoxes>& boxes) = 0;
};

/// Centroids of dark pixels inside the landmark boxes: left eye, right eye,
/// mouth. Falls back to the box centre when a box holds no dark pixel.
class DarkBlobLandmarks : public LandmarkProvider {
public:
    explicit DarkBlobLandmarks(double threshold = 0.25) : threshold_(threshold) {}
    Landmarks detect(const torch::Tensor& image, const std::optional<LandmarkBoxes>& boxes) override;

private:
    double threshold_;
};

struct MetricReport {
    std::string dataset;
    std::string method;
    double flmd = 0.0;
    double sd = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    double lpips = 0.0;
    std::map<std::string, std::vector<double>> per_frame;
    std::vector<std::string> metrics; // metrics that were computed

    nlohmann::json to_json() const;
};

/// Markdown table with the columns Method | F-LMD↓ | SD(×10⁻¹)↓ | PSNR↑ |
/// LPIPS(×10²)↓; SD is divided by 10⁻¹ and LPIPS multiplied by 10².
std::string markdown_table(const std::vector<MetricReport>& rows);

struct EvalOptions {
    std::vector<std::string> metrics{"psnr", "ssim", "lpips", "flmd", "sd"};
    std::string method = "ours";
    std::string dataset = "";
};

/// Evaluates aligned frame lists. Throws FrameCountMismatch when the lists
/// differ in length.
MetricReport evaluate(const std::vector<torch::Tensor>& pred, const std::vector<torch::Tensor>& gt,
                      const std::vector<std::optional<LandmarkBoxes>>& boxes, const EvalOptions& options,
                      FeatureExtractor* extractor, LandmarkProvider* landmarks);

/// Same over two directories of PNG frames, paired by sorted file name.
MetricReport evaluate_dirs(const std::filesystem::path& pred, const std::filesystem::path& gt,
                           const EvalOptions& options, FeatureExtractor* extractor, LandmarkProvider* landmarks);

} // namespace headsplat
