#include "headsplat/metrics_eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "headsplat/errors.hpp"
#include "headsplat/image_io.hpp"

namespace headsplat {

namespace {

torch::Tensor as_double_hwc(const torch::Tensor& t) {
    require(t.dim() == 3, ErrorCode::ShapeMismatch, "expected an H×W×C image");
    return t.detach().to(torch::kFloat64).contiguous();
}

void require_same(const torch::Tensor& a, const torch::Tensor& b) {
    require(a.sizes() == b.sizes(), ErrorCode::ShapeMismatch, "images differ in shape");
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / double(v.size());
}

} // namespace

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
    auto x = a.detach().to(torch::kFloat64);
    auto y = b.detach().to(torch::kFloat64);
    require_same(x, y);
    const double mse = (x - y).pow(2).mean().item<double>();
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const torch::Tensor& a, const torch::Tensor& b) {
    auto x = as_double_hwc(a);
    auto y = as_double_hwc(b);
    require_same(x, y);
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    require(x.size(0) >= kWin && x.size(1) >= kWin, ErrorCode::ShapeMismatch, "SSIM needs images of at least 11×11");
    std::vector<double> g(kWin);
    double gs = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - kWin / 2;
        g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
        gs += g[i];
    }
    for (auto& v : g) v /= gs;
    auto g1 = torch::tensor(g, torch::kFloat64);
    const auto c = x.size(2);
    auto kernel = torch::outer(g1, g1).view({1, 1, kWin, kWin}).expand({c, 1, kWin, kWin}).contiguous();
    auto filt = [&](const torch::Tensor& t) {
        return torch::conv2d(t.permute({2, 0, 1}).unsqueeze(0), kernel, torch::Tensor(), torch::IntArrayRef{1}, torch::IntArrayRef{0}, torch::IntArrayRef{1}, c);
    };
    const double c1 = 0.01 * 0.01;
    const double c2 = 0.03 * 0.03;
    auto mx = filt(x);
    auto my = filt(y);
    auto sxx = filt(x * x) - mx * mx;
    auto syy = filt(y * y) - my * my;
    auto sxy = filt(x * y) - mx * my;
    auto ssim_map = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    return ssim_map.mean().item<double>();
}

double lpips(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor* extractor) {
    torch::NoGradGuard guard;
    return loss_perceptual(a.detach(), b.detach(), extractor).item<double>();
}

double f_lmd(const Landmarks& pred, const Landmarks& gt) {
    require(pred.size() == gt.size(), ErrorCode::ShapeMismatch, "landmark sets differ in size");
    if (pred.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        total += (pred[i] - gt[i]).norm();
    }
    return total / double(pred.size());
}

double sharpness_difference(const torch::Tensor& a, const torch::Tensor& b) {
    auto x = as_double_hwc(a);
    auto y = as_double_hwc(b);
    require_same(x, y);
    auto grad = [](const torch::Tensor& t) {
        const auto h = t.size(0);
        const auto w = t.size(1);
        auto gx = (t.slice(1, 1, w) - t.slice(1, 0, w - 1)).abs().slice(0, 0, h - 1);
        auto gy = (t.slice(0, 1, h) - t.slice(0, 0, h - 1)).abs().slice(1, 0, w - 1);
        return gx + gy;
    };
    require(x.size(0) >= 2 && x.size(1) >= 2, ErrorCode::ShapeMismatch, "sharpness needs at least 2×2 pixels");
    return (grad(x) - grad(y)).abs().mean().item<double>();
}

Landmarks DarkBlobLandmarks::detect(const torch::Tensor& image, const std::optional<LandmarkBoxes>& boxes) {
    require(boxes.has_value(), ErrorCode::MissingLandmarks, "dark-blob landmarks need landmark boxes");
    auto img = as_double_hwc(image);
    auto lum = img.slice(2, 0, 3).mean(2);
    const auto h = lum.size(0);
    const auto w = lum.size(1);
    auto acc = lum.accessor<double, 2>();
    auto centroid = [&](double x0, double y0, double x1, double y1) {
        double sx = 0, sy = 0, n = 0;
        const auto ix0 = std::max<std::int64_t>(0, std::int64_t(std::floor(x0)));
        const auto iy0 = std::max<std::int64_t>(0, std::int64_t(std::floor(y0)));
        const auto ix1 = std::min<std::int64_t>(w, std::int64_t(std::ceil(x1)));
        const auto iy1 = std::min<std::int64_t>(h, std::int64_t(std::ceil(y1)));
        for (auto yy = iy0; yy < iy1; ++yy) {
            for (auto xx = ix0; xx < ix1; ++xx) {
                if (acc[yy][xx] < threshold_) {
                    sx += double(xx);
                    sy += double(yy);
                    n += 1;
                }
            }
        }
        if (n == 0) return Eigen::Vector2d(0.5 * (x0 + x1) - 0.5, 0.5 * (y0 + y1) - 0.5);
        return Eigen::Vector2d(sx / n, sy / n);
    };
    const auto& e = boxes->eyes;
    const auto& m = boxes->mouth;
    const double mid = 0.5 * (e.x0 + e.x1);
    return {centroid(e.x0, e.y0, mid, e.y1), centroid(mid, e.y0, e.x1, e.y1), centroid(m.x0, m.y0, m.x1, m.y1)};
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json j;
    j["dataset"] = dataset;
    j["method"] = method;
    j["metrics"] = metrics;
    j["flmd"] = flmd;
    j["sd"] = sd;
    j["psnr"] = psnr;
    j["ssim"] = ssim;
    j["lpips"] = lpips;
    j["scaled"] = {{"sd_x10^-1", sd / 0.1}, {"lpips_x10^2", lpips * 100.0}};
    j["per_frame"] = per_frame;
    return j;
}

std::string markdown_table(const std::vector<MetricReport>& rows) {
    std::ostringstream out;
    out << "| Method | F-LMD↓ | SD(×10⁻¹)↓ | PSNR↑ | LPIPS(×10²)↓ |\n";
    out << "|---|---|---|---|---|\n";
    out << std::fixed << std::setprecision(2);
    for (const auto& r : rows) {
        out << "| " << r.method << " | " << r.flmd << " | " << r.sd / 0.1 << " | " << r.psnr << " | "
            << r.lpips * 100.0 << " |\n";
    }
    return out.str();
}

MetricReport evaluate(const std::vector<torch::Tensor>& pred, const std::vector<torch::Tensor>& gt,
                      const std::vector<std::optional<LandmarkBoxes>>& boxes, const EvalOptions& options,
                      FeatureExtractor* extractor, LandmarkProvider* landmarks) {
    require(pred.size() == gt.size(), ErrorCode::FrameCountMismatch,
            "prediction has " + std::to_string(pred.size()) + " frames, reference has " + std::to_string(gt.size()));
    MetricReport report;
    report.method = options.method;
    report.dataset = options.dataset;
    report.metrics = options.metrics;
    auto wants = [&](const std::string& m) {
        return std::find(options.metrics.begin(), options.metrics.end(), m) != options.metrics.end();
    };
    for (const auto& m : options.metrics) {
        require(m == "psnr" || m == "ssim" || m == "lpips" || m == "flmd" || m == "sd", ErrorCode::InvalidArgument,
                "unknown metric '" + m + "'");
    }
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto& p = pred[i];
        const auto& g = gt[i];
        if (wants("psnr")) report.per_frame["psnr"].push_back(psnr(p, g));
        if (wants("ssim")) report.per_frame["ssim"].push_back(ssim(p, g));
        if (wants("lpips")) report.per_frame["lpips"].push_back(lpips(p, g, extractor));
        if (wants("sd")) report.per_frame["sd"].push_back(sharpness_difference(p, g));
        if (wants("flmd")) {
            require(landmarks != nullptr, ErrorCode::MissingLandmarks, "no landmark provider");
            const auto b = i < boxes.size() ? boxes[i] : std::nullopt;
            report.per_frame["flmd"].push_back(f_lmd(landmarks->detect(p, b), landmarks->detect(g, b)));
        }
    }
    report.psnr = mean_of(report.per_frame["psnr"]);
    report.ssim = mean_of(report.per_frame["ssim"]);
    report.lpips = mean_of(report.per_frame["lpips"]);
    report.sd = mean_of(report.per_frame["sd"]);
    report.flmd = mean_of(report.per_frame["flmd"]);
    for (auto it = report.per_frame.begin(); it != report.per_frame.end();) {
        it = it->second.empty() ? report.per_frame.erase(it) : std::next(it);
    }
    return report;
}

namespace {

std::vector<std::filesystem::path> png_files(const std::filesystem::path& dir) {
    require(std::filesystem::is_directory(dir), ErrorCode::Io, "not a directory: " + dir.string());
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

MetricReport evaluate_dirs(const std::filesystem::path& pred, const std::filesystem::path& gt,
                           const EvalOptions& options, FeatureExtractor* extractor, LandmarkProvider* landmarks) {
    const auto pf = png_files(pred);
    const auto gf = png_files(gt);
    require(pf.size() == gf.size(), ErrorCode::FrameCountMismatch,
            pred.string() + " has " + std::to_string(pf.size()) + " frames, " + gt.string() + " has " +
                std::to_string(gf.size()));
    std::vector<torch::Tensor> p, g;
    for (const auto& f : pf) p.push_back(read_png(f));
    for (const auto& f : gf) g.push_back(read_png(f));

    // Landmark boxes come from a sibling boxes.json when present.
    std::vector<std::optional<LandmarkBoxes>> boxes(pf.size());
    const auto boxes_file = gt / "boxes.json";
    if (std::filesystem::exists(boxes_file)) {
        std::ifstream in(boxes_file);
        auto j = nlohmann::json::parse(in);
        for (std::size_t i = 0; i < boxes.size() && i < j.size(); ++i) {
            auto e = j[i].at("eyes").get<std::vector<double>>();
            auto m = j[i].at("mouth").get<std::vector<double>>();
            boxes[i] = LandmarkBoxes{{e[0], e[1], e[2], e[3]}, {m[0], m[1], m[2], m[3]}};
        }
    }
    auto opts = options;
    if (!std::filesystem::exists(boxes_file)) {
        opts.metrics.erase(std::remove(opts.metrics.begin(), opts.metrics.end(), "flmd"), opts.metrics.end());
    }
    return evaluate(p, g, boxes, opts, extractor, landmarks);
}

} // namespace headsplat
