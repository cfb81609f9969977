#include "headsplat/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include <Eigen/Geometry>

#include "headsplat/errors.hpp"
#include "headsplat/image_io.hpp"

#include <nlohmann/json.hpp>

namespace headsplat {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// AvatarDataset

std::int64_t AvatarDataset::width() const {
    require(!frames.empty(), ErrorCode::InvalidArgument, "empty dataset");
    return frames.front().cond.camera.width;
}

std::int64_t AvatarDataset::height() const {
    require(!frames.empty(), ErrorCode::InvalidArgument, "empty dataset");
    return frames.front().cond.camera.height;
}

std::int64_t AvatarDataset::expression_dim() const {
    require(!frames.empty(), ErrorCode::InvalidArgument, "empty dataset");
    return static_cast<std::int64_t>(frames.front().cond.expression.size());
}

bool AvatarDataset::has_uv() const {
    return !frames.empty() && (frames.front().uv_path.has_value() ||
                               (uvs_.size() == frames.size() && uvs_.front().defined()));
}

const torch::Tensor& AvatarDataset::image(std::int64_t i) const {
    require(i >= 0 && i < size(), ErrorCode::InvalidArgument, "frame " + std::to_string(i) + " out of range");
    images_.resize(frames.size());
    auto& slot = images_[static_cast<std::size_t>(i)];
    if (!slot.defined()) {
        slot = read_png(frames[static_cast<std::size_t>(i)].image_path);
    }
    return slot;
}

const torch::Tensor& AvatarDataset::uv(std::int64_t i) const {
    require(i >= 0 && i < size(), ErrorCode::InvalidArgument, "frame " + std::to_string(i) + " out of range");
    uvs_.resize(frames.size());
    auto& slot = uvs_[static_cast<std::size_t>(i)];
    if (!slot.defined()) {
        const auto& f = frames[static_cast<std::size_t>(i)];
        slot = f.uv_path ? read_png(*f.uv_path) : torch::zeros({height(), width(), 3});
    }
    return slot;
}

void AvatarDataset::set_image(std::int64_t i, torch::Tensor image) const {
    images_.resize(frames.size());
    images_.at(static_cast<std::size_t>(i)) = std::move(image);
}

void AvatarDataset::set_uv(std::int64_t i, torch::Tensor uv) const {
    uvs_.resize(frames.size());
    uvs_.at(static_cast<std::size_t>(i)) = std::move(uv);
}

void AvatarDataset::validate() const {
    require(!frames.empty(), ErrorCode::InvalidArgument, "dataset has no frames");
    const auto e = expression_dim();
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto& f = frames[i];
        require(f.index == static_cast<std::int64_t>(i), ErrorCode::InvalidArgument,
                "frame ids must be contiguous from 0; found " + std::to_string(f.index) + " at " + std::to_string(i));
        require(static_cast<std::int64_t>(f.cond.expression.size()) == e, ErrorCode::ShapeMismatch,
                "frame " + std::to_string(i) + " has a different expression size");
        require(f.cond.camera.width == width() && f.cond.camera.height == height(), ErrorCode::ShapeMismatch,
                "frame " + std::to_string(i) + " has a different image size");
        f.cond.validate();
    }
}

// ---------------------------------------------------------------------------
// Split

std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> split(std::int64_t n, double fraction,
                                                                      std::uint64_t seed, bool random) {
    require(n >= 0 && fraction >= 0.0 && fraction <= 1.0, ErrorCode::InvalidArgument, "invalid split request");
    const auto n_train = static_cast<std::int64_t>(std::llround(fraction * double(n)));
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    if (random) {
        std::mt19937_64 rng(seed);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i - 1);
            std::swap(order[i - 1], order[pick(rng)]);
        }
    }
    std::vector<std::int64_t> train(order.begin(), order.begin() + n_train);
    std::vector<std::int64_t> test(order.begin() + n_train, order.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {train, test};
}

// ---------------------------------------------------------------------------
// Ingest / serialize

namespace {

std::string frame_name(std::int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06lld.png", static_cast<long long>(i));
    return buf;
}

PixelBox parse_box(const json& j) {
    auto v = j.get<std::vector<double>>();
    require(v.size() == 4, ErrorCode::SchemaMismatch, "boxes need four numbers");
    return {v[0], v[1], v[2], v[3]};
}

json box_json(const PixelBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

AvatarDataset ingest(const fs::path& root) {
    const auto tracking_path = root / "tracking.json";
    require(fs::exists(tracking_path), ErrorCode::MissingTracking, "no tracking.json in " + root.string());
    json tracking;
    {
        std::ifstream in(tracking_path);
        try {
            tracking = json::parse(in);
        } catch (const json::exception& e) {
            fail(ErrorCode::SchemaMismatch, "tracking.json: " + std::string(e.what()));
        }
    }
    require(tracking.is_array(), ErrorCode::SchemaMismatch, "tracking.json must be an array");

    const auto images = sorted_pngs(root / "frames");
    require(images.size() == tracking.size(), ErrorCode::FrameCountMismatch,
            std::to_string(tracking.size()) + " tracking records for " + std::to_string(images.size()) + " frames");
    const auto uvs = sorted_pngs(root / "uv");
    require(uvs.empty() || uvs.size() == images.size(), ErrorCode::FrameCountMismatch,
            std::to_string(uvs.size()) + " UV maps for " + std::to_string(images.size()) + " frames");

    AvatarDataset ds;
    ds.root = root;
    std::int64_t width = 0;
    std::int64_t height = 0;
    torch::Tensor first;
    if (!images.empty()) {
        first = read_png(images.front());
        height = first.size(0);
        width = first.size(1);
    }
    for (std::size_t i = 0; i < tracking.size(); ++i) {
        const auto& r = tracking[i];
        FrameRecord f;
        try {
            f.index = r.at("frame").get<std::int64_t>();
            f.image_path = images[i];
            if (!uvs.empty()) f.uv_path = uvs[i];
            f.cond.frame_id = f.index;
            f.cond.expression = r.at("expression").get<std::vector<double>>();
            auto q = r.at("pose").at("quat").get<std::vector<double>>();
            auto t = r.at("pose").at("trans").get<std::vector<double>>();
            require(q.size() == 4 && t.size() == 3, ErrorCode::SchemaMismatch, "pose needs quat[4] and trans[3]");
            f.cond.pose.rotation = Eigen::Vector4d(q[0], q[1], q[2], q[3]);
            f.cond.pose.translation = Eigen::Vector3d(t[0], t[1], t[2]);
            const auto& c = r.at("camera");
            f.cond.camera.fx = c.at("fx").get<double>();
            f.cond.camera.fy = c.at("fy").get<double>();
            f.cond.camera.cx = c.at("cx").get<double>();
            f.cond.camera.cy = c.at("cy").get<double>();
            auto m = c.at("w2c").get<std::vector<double>>();
            require(m.size() == 16, ErrorCode::SchemaMismatch, "w2c needs 16 numbers");
            for (int k = 0; k < 16; ++k) f.cond.camera.world_to_camera(k / 4, k % 4) = m[static_cast<std::size_t>(k)];
            f.cond.camera.width = width;
            f.cond.camera.height = height;
            if (r.contains("boxes")) {
                f.cond.boxes = LandmarkBoxes{parse_box(r["boxes"].at("eyes")), parse_box(r["boxes"].at("mouth"))};
            }
            if (r.contains("landmarks")) {
                for (const auto& p : r["landmarks"]) {
                    f.landmarks.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
                }
            }
        } catch (const json::exception& e) {
            fail(ErrorCode::SchemaMismatch, "tracking record " + std::to_string(i) + ": " + e.what());
        }
        if (f.cond.boxes) {
            for (const auto* b : {&f.cond.boxes->eyes, &f.cond.boxes->mouth}) {
                require(b->width() > 0 && b->height() > 0 && b->inside(width, height), ErrorCode::BadBox,
                        "landmark box outside image in frame " + std::to_string(f.index));
            }
        }
        ds.frames.push_back(std::move(f));
    }
    if (first.defined() && !ds.frames.empty()) ds.set_image(0, first);
    if (fs::exists(root / "mesh.obj")) {
        ds.mesh = read_obj(root / "mesh.obj");
    }
    ds.validate();
    std::tie(ds.train, ds.test) = split(ds.size());
    return ds;
}

void serialize(const AvatarDataset& dataset, const fs::path& root) {
    fs::create_directories(root / "frames");
    json tracking = json::array();
    const bool uv = dataset.has_uv();
    if (uv) fs::create_directories(root / "uv");
    for (const auto& f : dataset.frames) {
        write_png(root / "frames" / frame_name(f.index), dataset.image(f.index));
        if (uv) write_png(root / "uv" / frame_name(f.index), dataset.uv(f.index));
        json r;
        r["frame"] = f.index;
        r["expression"] = f.cond.expression;
        const auto& p = f.cond.pose;
        r["pose"] = {{"quat", {p.rotation[0], p.rotation[1], p.rotation[2], p.rotation[3]}},
                     {"trans", {p.translation[0], p.translation[1], p.translation[2]}}};
        std::vector<double> m;
        for (int k = 0; k < 16; ++k) m.push_back(f.cond.camera.world_to_camera(k / 4, k % 4));
        r["camera"] = {{"fx", f.cond.camera.fx}, {"fy", f.cond.camera.fy}, {"cx", f.cond.camera.cx},
                       {"cy", f.cond.camera.cy}, {"w2c", m}};
        if (f.cond.boxes) {
            r["boxes"] = {{"eyes", box_json(f.cond.boxes->eyes)}, {"mouth", box_json(f.cond.boxes->mouth)}};
        }
        if (!f.landmarks.empty()) {
            json l = json::array();
            for (const auto& q : f.landmarks) l.push_back({q.x(), q.y()});
            r["landmarks"] = l;
        }
        tracking.push_back(r);
    }
    std::ofstream(root / "tracking.json") << tracking.dump(1) << '\n';
    if (!dataset.mesh.vertices.empty()) {
        write_obj(root / "mesh.obj", dataset.mesh);
    }
}

// ---------------------------------------------------------------------------
// Synthetic head

namespace synth {

double mouth_half_height(double e0) { return 0.04 + 0.16 * std::clamp(e0, 0.0, 1.0); }

double yaw_degrees(std::int64_t frame, std::int64_t frames) {
    return kMaxYawDegrees * std::sin(2.0 * M_PI * double(frame) / double(frames));
}

double expression0(std::int64_t frame) { return 0.5 - 0.5 * std::cos(2.0 * M_PI * double(frame) / 8.0); }

Camera camera(std::int64_t resolution) {
    return Camera::look_at({0, 0, kCameraDistance}, {0, 0, 0}, {0, 1, 0}, double(resolution), resolution, resolution);
}

HeadPose pose_for_yaw(double yaw_degrees) {
    const double half = 0.5 * yaw_degrees * M_PI / 180.0;
    HeadPose p;
    p.rotation = Eigen::Vector4d(std::cos(half), 0.0, std::sin(half), 0.0);
    return p;
}

namespace {

Eigen::Matrix3d pose_matrix(const HeadPose& pose) {
    Eigen::Quaterniond q(pose.rotation[0], pose.rotation[1], pose.rotation[2], pose.rotation[3]);
    return q.normalized().toRotationMatrix();
}

struct Hit {
    Eigen::Vector3d local;
    bool ok = false;
};

Hit intersect(const Eigen::Vector3d& origin_local, const Eigen::Vector3d& dir_local) {
    const Eigen::Vector3d o = origin_local.cwiseQuotient(kSemiAxes);
    const Eigen::Vector3d d = dir_local.cwiseQuotient(kSemiAxes);
    const double a = d.squaredNorm();
    const double b = 2.0 * o.dot(d);
    const double c = o.squaredNorm() - 1.0;
    const double disc = b * b - 4 * a * c;
    if (disc < 0) return {};
    const double t = (-b - std::sqrt(disc)) / (2 * a);
    if (t <= 0) return {};
    return {origin_local + t * dir_local, true};
}

Eigen::Vector3d shade(const Eigen::Vector3d& p, const Eigen::Matrix3d& rot, double e0, double phase) {
    const Eigen::Vector3d n_local = p.cwiseQuotient(kSemiAxes.cwiseProduct(kSemiAxes)).normalized();
    const Eigen::Vector3d n = rot * n_local;
    const Eigen::Vector3d light = Eigen::Vector3d(0.3, 0.5, 1.0).normalized();
    const double lambert = 0.55 + 0.45 * std::max(0.0, n.dot(light));
    Eigen::Vector3d color(0.88, 0.68, 0.55);
    color *= 1.0 + 0.06 * std::sin(4.0 * p.x() + phase) * std::cos(3.0 * p.y());
    if (p.y() > kHairY) {
        color = Eigen::Vector3d(0.30, 0.18, 0.10);
    }
    if (p.z() > 0) {
        for (double ex : {-kEyeX, kEyeX}) {
            if (std::hypot(p.x() - ex, p.y() - kEyeY) < kEyeRadius) {
                color = Eigen::Vector3d(0.05, 0.05, 0.07);
            }
        }
        if (std::abs(p.x()) < kMouthHalfWidth && std::abs(p.y() - kMouthY) < mouth_half_height(e0)) {
            color = Eigen::Vector3d(0.35, 0.05, 0.08);
        }
    }
    return color * lambert;
}

Eigen::Vector2d project_point(const Camera& cam, const Eigen::Vector3d& world) {
    const Eigen::Vector3d p = cam.rotation() * world + cam.translation();
    return {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
}

Eigen::Vector3d surface_point(double x, double y) {
    const double r = 1.0 - (x * x) / (kSemiAxes.x() * kSemiAxes.x()) - (y * y) / (kSemiAxes.y() * kSemiAxes.y());
    return {x, y, kSemiAxes.z() * std::sqrt(std::max(r, 0.0))};
}

PixelBox bound(const Camera& cam, const HeadPose& pose, const std::vector<Eigen::Vector2d>& outline) {
    const auto rot = pose_matrix(pose);
    double x0 = 1e30, y0 = 1e30, x1 = -1e30, y1 = -1e30;
    for (const auto& q : outline) {
        const auto uv = project_point(cam, rot * surface_point(q.x(), q.y()) + pose.translation);
        x0 = std::min(x0, uv.x());
        y0 = std::min(y0, uv.y());
        x1 = std::max(x1, uv.x());
        y1 = std::max(y1, uv.y());
    }
    constexpr double kPad = 2.0;
    // Centre coordinates to edge coordinates (+0.5), padded and clipped.
    return {std::max(0.0, x0 + 0.5 - kPad), std::max(0.0, y0 + 0.5 - kPad),
            std::min(double(cam.width), x1 + 0.5 + kPad), std::min(double(cam.height), y1 + 0.5 + kPad)};
}

} // namespace

Rendered render(const Camera& cam, const HeadPose& pose, double e0, std::int64_t supersample, std::uint64_t seed) {
    require(supersample >= 1, ErrorCode::InvalidArgument, "supersample must be >= 1");
    const auto w = cam.width;
    const auto h = cam.height;
    const auto rot = pose_matrix(pose);
    const Eigen::Matrix3d cam_rot = cam.rotation();
    const Eigen::Vector3d eye = -cam_rot.transpose() * cam.translation();
    const Eigen::Vector3d origin_local = rot.transpose() * (eye - pose.translation);
    const double phase = double(seed % 1000) * 0.001 * 2.0 * M_PI;

    auto image = torch::zeros({h, w, 3}, torch::kFloat64);
    auto uv = torch::zeros({h, w, 3}, torch::kFloat64);
    auto ia = image.accessor<double, 3>();
    auto ua = uv.accessor<double, 3>();
    const double inv = 1.0 / double(supersample * supersample);
    for (std::int64_t v = 0; v < h; ++v) {
        for (std::int64_t u = 0; u < w; ++u) {
            Eigen::Vector3d color = Eigen::Vector3d::Zero();
            Eigen::Vector3d coord = Eigen::Vector3d::Zero();
            for (std::int64_t sy = 0; sy < supersample; ++sy) {
                for (std::int64_t sx = 0; sx < supersample; ++sx) {
                    const double px = double(u) + (double(sx) + 0.5) / double(supersample) - 0.5;
                    const double py = double(v) + (double(sy) + 0.5) / double(supersample) - 0.5;
                    const Eigen::Vector3d dir_cam((px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0);
                    const Eigen::Vector3d dir_local = rot.transpose() * (cam_rot.transpose() * dir_cam);
                    const auto hit = intersect(origin_local, dir_local);
                    if (!hit.ok) continue;
                    color += shade(hit.local, rot, e0, phase);
                    coord += Eigen::Vector3d(std::atan2(hit.local.x(), hit.local.z()) / (2 * M_PI) + 0.5,
                                             0.5 * (hit.local.y() / kSemiAxes.y() + 1.0), 1.0);
                }
            }
            for (int c = 0; c < 3; ++c) {
                ia[v][u][c] = color[c] * inv;
                ua[v][u][c] = coord[c] * inv;
            }
        }
    }
    // Quantize to 8 bits so in-memory frames equal their PNG round trip.
    auto q = [](const torch::Tensor& t) { return (t.clamp(0, 1) * 255.0).round().div(255.0).to(torch::kFloat32); };
    return {q(image), q(uv)};
}

LandmarkBoxes boxes(const Camera& cam, const HeadPose& pose) {
    std::vector<Eigen::Vector2d> eyes;
    for (int k = 0; k < 48; ++k) {
        const double a = 2.0 * M_PI * k / 48.0;
        for (double ex : {-kEyeX, kEyeX}) {
            eyes.emplace_back(ex + kEyeRadius * std::cos(a), kEyeY + kEyeRadius * std::sin(a));
        }
    }
    std::vector<Eigen::Vector2d> mouth;
    const double hmax = mouth_half_height(1.0);
    for (int k = 0; k <= 32; ++k) {
        const double x = -kMouthHalfWidth + 2.0 * kMouthHalfWidth * k / 32.0;
        mouth.emplace_back(x, kMouthY - hmax);
        mouth.emplace_back(x, kMouthY + hmax);
        const double y = kMouthY - hmax + 2.0 * hmax * k / 32.0;
        mouth.emplace_back(-kMouthHalfWidth, y);
        mouth.emplace_back(kMouthHalfWidth, y);
    }
    return {bound(cam, pose, eyes), bound(cam, pose, mouth)};
}

Landmarks landmarks(const Camera& cam, const HeadPose& pose, double e0) {
    const auto rot = pose_matrix(pose);
    auto at = [&](double x, double y) { return project_point(cam, rot * surface_point(x, y) + pose.translation); };
    Landmarks eyes{at(-kEyeX, kEyeY), at(kEyeX, kEyeY)};
    std::sort(eyes.begin(), eyes.end(), [](const auto& a, const auto& b) { return a.x() < b.x(); });
    return {eyes[0], eyes[1], at(0.0, kMouthY)};
}

TriangleMesh mesh(int stacks, int slices) {
    TriangleMesh m;
    m.vertices.emplace_back(0.0, kSemiAxes.y(), 0.0);
    for (int i = 1; i < stacks; ++i) {
        const double theta = M_PI * i / stacks;
        for (int j = 0; j < slices; ++j) {
            const double phi = 2.0 * M_PI * j / slices;
            m.vertices.emplace_back(kSemiAxes.x() * std::sin(theta) * std::sin(phi), kSemiAxes.y() * std::cos(theta),
                                    kSemiAxes.z() * std::sin(theta) * std::cos(phi));
        }
    }
    m.vertices.emplace_back(0.0, -kSemiAxes.y(), 0.0);
    const std::int64_t bottom = static_cast<std::int64_t>(m.vertices.size()) - 1;
    auto ring = [&](int i, int j) -> std::int64_t { return 1 + (i - 1) * slices + (j % slices); };
    for (int j = 0; j < slices; ++j) {
        m.faces.push_back({0, ring(1, j + 1), ring(1, j)});
        m.faces.push_back({bottom, ring(stacks - 1, j), ring(stacks - 1, j + 1)});
    }
    for (int i = 1; i + 1 < stacks; ++i) {
        for (int j = 0; j < slices; ++j) {
            m.faces.push_back({ring(i, j), ring(i, j + 1), ring(i + 1, j + 1)});
            m.faces.push_back({ring(i, j), ring(i + 1, j + 1), ring(i + 1, j)});
        }
    }
    return m;
}

} // namespace synth

AvatarDataset synth_generate(const SynthSpec& spec) {
    require(spec.frames >= 2, ErrorCode::InvalidArgument, "synthetic clip needs at least two frames");
    require(spec.resolution >= 16 && spec.expression_dim >= 1, ErrorCode::InvalidArgument,
            "synthetic clip needs resolution >= 16 and at least one expression coefficient");
    AvatarDataset ds;
    ds.mesh = synth::mesh();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
    std::vector<double> phases(static_cast<std::size_t>(spec.expression_dim));
    for (auto& p : phases) p = phase(rng);

    const auto cam = synth::camera(spec.resolution);
    for (std::int64_t i = 0; i < spec.frames; ++i) {
        FrameRecord f;
        f.index = i;
        f.image_path = fs::path("frames") / frame_name(i);
        f.uv_path = fs::path("uv") / frame_name(i);
        f.cond.frame_id = i;
        f.cond.camera = cam;
        f.cond.pose = synth::pose_for_yaw(synth::yaw_degrees(i, spec.frames));
        const double e0 = synth::expression0(i);
        f.cond.expression.resize(static_cast<std::size_t>(spec.expression_dim));
        f.cond.expression[0] = e0;
        // The remaining coefficients drift smoothly and have no visual effect.
        for (std::int64_t k = 1; k < spec.expression_dim; ++k) {
            f.cond.expression[static_cast<std::size_t>(k)] =
                0.1 * std::sin(0.3 * double(i) + phases[static_cast<std::size_t>(k)]);
        }
        f.cond.boxes = synth::boxes(cam, f.cond.pose);
        f.landmarks = synth::landmarks(cam, f.cond.pose, e0);
        ds.frames.push_back(std::move(f));
    }
    for (std::int64_t i = 0; i < spec.frames; ++i) {
        const auto& f = ds.frames[static_cast<std::size_t>(i)];
        auto r = synth::render(cam, f.cond.pose, f.cond.expression[0], spec.supersample, spec.seed);
        ds.set_image(i, r.image);
        ds.set_uv(i, r.uv);
    }
    std::tie(ds.train, ds.test) = split(ds.size());
    ds.validate();
    return ds;
}

} // namespace headsplat
