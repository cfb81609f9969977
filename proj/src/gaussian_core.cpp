#include "headsplat/gaussian_core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Geometry>

#include "headsplat/errors.hpp"

namespace headsplat {

// ---------------------------------------------------------------------------
// TriangleMesh

void TriangleMesh::validate() const {
    const auto nv = static_cast<std::int64_t>(vertices.size());
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const auto& face = faces[f];
        for (auto idx : face) {
            require(idx >= 0 && idx < nv, ErrorCode::InvalidArgument,
                    "face " + std::to_string(f) + " references vertex " + std::to_string(idx) + " out of range");
        }
        require(face[0] != face[1] && face[1] != face[2] && face[0] != face[2], ErrorCode::InvalidArgument,
                "face " + std::to_string(f) + " references fewer than 3 distinct vertices");
    }
    require(face_uvs.empty() || face_uvs.size() == faces.size(), ErrorCode::InvalidArgument,
            "face UVs must be given for every face or none");
}

double TriangleMesh::face_area(std::size_t face) const {
    const auto& f = faces[face];
    const Eigen::Vector3d& a = vertices[f[0]];
    const Eigen::Vector3d& b = vertices[f[1]];
    const Eigen::Vector3d& c = vertices[f[2]];
    return 0.5 * (b - a).cross(c - a).norm();
}

double TriangleMesh::total_area() const {
    double total = 0.0;
    for (std::size_t f = 0; f < faces.size(); ++f) {
        total += face_area(f);
    }
    return total;
}

namespace {

// OBJ indices are 1-based; negative values count back from the end.
std::int64_t resolve_index(std::int64_t raw, std::size_t count) {
    return raw < 0 ? static_cast<std::int64_t>(count) + raw : raw - 1;
}

} // namespace

TriangleMesh read_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::Io, "cannot open mesh " + path.string());

    TriangleMesh mesh;
    std::vector<Eigen::Vector2d> uvs;
    std::vector<std::array<std::int64_t, 3>> uv_faces;
    bool every_face_has_uv = true;

    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            Eigen::Vector3d v;
            ls >> v.x() >> v.y() >> v.z();
            mesh.vertices.push_back(v);
        } else if (tag == "vt") {
            Eigen::Vector2d t;
            ls >> t.x() >> t.y();
            uvs.push_back(t);
        } else if (tag == "f") {
            std::vector<std::int64_t> vi;
            std::vector<std::int64_t> ti;
            std::string token;
            while (ls >> token) {
                const auto slash = token.find('/');
                vi.push_back(resolve_index(std::stoll(token.substr(0, slash)), mesh.vertices.size()));
                if (slash != std::string::npos && slash + 1 < token.size() && token[slash + 1] != '/') {
                    ti.push_back(resolve_index(std::stoll(token.substr(slash + 1)), uvs.size()));
                }
            }
            require(vi.size() >= 3, ErrorCode::InvalidArgument, "face with fewer than 3 vertices in " + path.string());
            const bool has_uv = ti.size() == vi.size();
            every_face_has_uv = every_face_has_uv && has_uv;
            for (std::size_t k = 1; k + 1 < vi.size(); ++k) {
                mesh.faces.push_back({vi[0], vi[k], vi[k + 1]});
                if (has_uv) {
                    uv_faces.push_back({ti[0], ti[k], ti[k + 1]});
                }
            }
        }
    }

    if (every_face_has_uv && !mesh.faces.empty()) {
        for (const auto& tf : uv_faces) {
            std::array<Eigen::Vector2d, 3> corner;
            for (int k = 0; k < 3; ++k) {
                require(tf[k] >= 0 && tf[k] < static_cast<std::int64_t>(uvs.size()), ErrorCode::InvalidArgument,
                        "texture index out of range in " + path.string());
                corner[k] = uvs[tf[k]];
            }
            mesh.face_uvs.push_back(corner);
        }
    }
    mesh.validate();
    return mesh;
}

void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), ErrorCode::Io, "cannot write mesh " + path.string());
    out.precision(17);
    for (const auto& v : mesh.vertices) {
        out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    }
    for (const auto& corner : mesh.face_uvs) {
        for (const auto& t : corner) {
            out << "vt " << t.x() << ' ' << t.y() << '\n';
        }
    }
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& face = mesh.faces[f];
        out << 'f';
        for (int k = 0; k < 3; ++k) {
            out << ' ' << face[k] + 1;
            if (!mesh.face_uvs.empty()) {
                out << '/' << 3 * f + k + 1;
            }
        }
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// GaussianCloud

void GaussianCloud::validate() const {
    require(positions.defined() && positions.dim() == 2 && positions.size(1) == 3, ErrorCode::ShapeMismatch,
            "positions must be N×3");
    const auto n = positions.size(0);
    require(n >= 1, ErrorCode::InvalidArgument, "cloud must hold at least one Gaussian");
    auto check = [n](const torch::Tensor& t, std::int64_t cols, const char* name) {
        require(t.defined() && t.dim() == 2 && t.size(0) == n && (cols < 0 || t.size(1) == cols),
                ErrorCode::ShapeMismatch, std::string(name) + " has wrong shape");
    };
    check(rotations, 4, "rotations");
    check(log_scales, 3, "log_scales");
    check(opacity_logits, 1, "opacity_logits");
    check(features, -1, "features");
    require(features.size(1) >= 1, ErrorCode::ShapeMismatch, "features need at least one channel");
}

GaussianCloud GaussianCloud::clone() const {
    return {positions.clone(), rotations.clone(), log_scales.clone(), opacity_logits.clone(), features.clone()};
}

GaussianCloud GaussianCloud::detach() const {
    return {positions.detach(), rotations.detach(), log_scales.detach(), opacity_logits.detach(), features.detach()};
}

GaussianCloud GaussianCloud::to(torch::ScalarType dtype) const {
    return {positions.to(dtype), rotations.to(dtype), log_scales.to(dtype), opacity_logits.to(dtype),
            features.to(dtype)};
}

TensorMap GaussianCloud::to_tensors(const std::string& prefix) const {
    return {{prefix + "positions", positions},
            {prefix + "rotations", rotations},
            {prefix + "log_scales", log_scales},
            {prefix + "opacity_logits", opacity_logits},
            {prefix + "features", features}};
}

GaussianCloud GaussianCloud::from_tensors(const TensorStore& store, const std::string& prefix) {
    GaussianCloud cloud{store.at(prefix + "positions").clone(), store.at(prefix + "rotations").clone(),
                        store.at(prefix + "log_scales").clone(), store.at(prefix + "opacity_logits").clone(),
                        store.at(prefix + "features").clone()};
    cloud.validate();
    return cloud;
}

double mean_nearest_neighbor_distance(const std::vector<Eigen::Vector3d>& points) {
    const std::size_t n = points.size();
    if (n < 2) {
        return 0.0;
    }
    // Sweep over points sorted by x; stop scanning once the x-gap alone
    // exceeds the best distance found so far.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return points[a].x() < points[b].x(); });

    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& p = points[order[k]];
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = k + 1; j < n; ++j) {
            const auto& q = points[order[j]];
            const double dx = q.x() - p.x();
            if (dx * dx >= best) break;
            best = std::min(best, (q - p).squaredNorm());
        }
        for (std::size_t j = k; j-- > 0;) {
            const auto& q = points[order[j]];
            const double dx = p.x() - q.x();
            if (dx * dx >= best) break;
            best = std::min(best, (q - p).squaredNorm());
        }
        sum += std::sqrt(best);
    }
    return sum / static_cast<double>(n);
}

namespace {

GaussianCloud cloud_from_points(const std::vector<Eigen::Vector3d>& points, double fallback_spacing,
                                std::int64_t channels, torch::ScalarType dtype) {
    require(channels >= 3, ErrorCode::InvalidArgument, "need at least 3 feature channels");
    const auto n = static_cast<std::int64_t>(points.size());
    auto positions = torch::empty({n, 3}, torch::kFloat64);
    auto acc = positions.accessor<double, 2>();
    for (std::int64_t i = 0; i < n; ++i) {
        for (int d = 0; d < 3; ++d) {
            acc[i][d] = points[i][d];
        }
    }
    double spacing = n > 1 ? mean_nearest_neighbor_distance(points) : fallback_spacing;
    if (!(spacing > 0.0)) {
        spacing = fallback_spacing;
    }

    auto opts = torch::TensorOptions().dtype(dtype);
    GaussianCloud cloud;
    cloud.positions = positions.to(dtype);
    cloud.rotations = torch::zeros({n, 4}, opts);
    cloud.rotations.select(1, 0).fill_(1.0);
    cloud.log_scales = torch::full({n, 3}, std::log(0.5 * spacing), opts);
    cloud.opacity_logits = torch::zeros({n, 1}, opts); // logit(0.5)
    cloud.features = torch::zeros({n, channels}, opts);
    cloud.features.slice(1, 0, 3).fill_(0.5);
    return cloud;
}

} // namespace

GaussianCloud init_from_mesh(const TriangleMesh& mesh, std::int64_t n, std::uint64_t seed, std::int64_t channels,
                             torch::ScalarType dtype) {
    mesh.validate();
    require(n >= 1, ErrorCode::InvalidArgument, "n must be >= 1");

    std::vector<double> areas(mesh.faces.size());
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        areas[f] = mesh.face_area(f);
    }
    const double total = std::accumulate(areas.begin(), areas.end(), 0.0);
    require(total > 0.0, ErrorCode::AllFacesDegenerate, "mesh has zero total area");

    std::mt19937_64 rng(seed);
    std::discrete_distribution<std::size_t> pick_face(areas.begin(), areas.end());
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<Eigen::Vector3d> points;
    points.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& face = mesh.faces[pick_face(rng)];
        double u = unit(rng);
        double v = unit(rng);
        if (u + v > 1.0) {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        const Eigen::Vector3d& a = mesh.vertices[face[0]];
        const Eigen::Vector3d& b = mesh.vertices[face[1]];
        const Eigen::Vector3d& c = mesh.vertices[face[2]];
        points.push_back(a + u * (b - a) + v * (c - a));
    }
    return cloud_from_points(points, std::sqrt(total), channels, dtype);
}

GaussianCloud init_random(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi, std::int64_t n, std::uint64_t seed,
                          std::int64_t channels, torch::ScalarType dtype) {
    require(n >= 1, ErrorCode::InvalidArgument, "n must be >= 1");
    require((hi.array() > lo.array()).all(), ErrorCode::InvalidArgument, "empty sampling box");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Eigen::Vector3d> points(static_cast<std::size_t>(n));
    for (auto& p : points) {
        for (int d = 0; d < 3; ++d) {
            p[d] = lo[d] + unit(rng) * (hi[d] - lo[d]);
        }
    }
    return cloud_from_points(points, (hi - lo).norm(), channels, dtype);
}

torch::Tensor normalize_quaternions(const torch::Tensor& q) {
    auto norm = q.norm(2, -1, /*keepdim=*/true);
    auto safe = torch::where(norm > 0, norm, torch::ones_like(norm));
    auto identity = torch::zeros_like(q);
    identity.select(-1, 0).fill_(1.0);
    return torch::where(norm > 0, q / safe, identity);
}

GaussianCloud normalize_rotations(const GaussianCloud& cloud) {
    torch::NoGradGuard guard;
    GaussianCloud out = cloud.clone();
    out.rotations = normalize_quaternions(cloud.rotations);
    return out;
}

torch::Tensor quaternion_to_matrix(const torch::Tensor& q) {
    auto w = q.select(-1, 0);
    auto x = q.select(-1, 1);
    auto y = q.select(-1, 2);
    auto z = q.select(-1, 3);
    auto r00 = 1 - 2 * (y * y + z * z);
    auto r01 = 2 * (x * y - w * z);
    auto r02 = 2 * (x * z + w * y);
    auto r10 = 2 * (x * y + w * z);
    auto r11 = 1 - 2 * (x * x + z * z);
    auto r12 = 2 * (y * z - w * x);
    auto r20 = 2 * (x * z - w * y);
    auto r21 = 2 * (y * z + w * x);
    auto r22 = 1 - 2 * (x * x + y * y);
    auto row0 = torch::stack({r00, r01, r02}, -1);
    auto row1 = torch::stack({r10, r11, r12}, -1);
    auto row2 = torch::stack({r20, r21, r22}, -1);
    return torch::stack({row0, row1, row2}, -2);
}

torch::Tensor quaternion_multiply(const torch::Tensor& a, const torch::Tensor& b) {
    auto aw = a.select(-1, 0), ax = a.select(-1, 1), ay = a.select(-1, 2), az = a.select(-1, 3);
    auto bw = b.select(-1, 0), bx = b.select(-1, 1), by = b.select(-1, 2), bz = b.select(-1, 3);
    return torch::stack({aw * bw - ax * bx - ay * by - az * bz,
                         aw * bx + ax * bw + ay * bz - az * by,
                         aw * by - ax * bz + ay * bw + az * bx,
                         aw * bz + ax * by - ay * bx + az * bw},
                        -1);
}

torch::Tensor covariances(const torch::Tensor& rotations, const torch::Tensor& log_scales) {
    auto rot = quaternion_to_matrix(normalize_quaternions(rotations));
    auto var = torch::exp(2.0 * log_scales);
    // R·diag(s²)·Rᵀ == (R * s²) · Rᵀ with s² broadcast over columns.
    return torch::matmul(rot * var.unsqueeze(-2), rot.transpose(-1, -2));
}

Eigen::Matrix3d covariance(const GaussianCloud& cloud, std::int64_t index) {
    require(index >= 0 && index < cloud.size(), ErrorCode::InvalidArgument, "Gaussian index out of range");
    torch::NoGradGuard guard;
    auto cov = covariances(cloud.rotations.slice(0, index, index + 1).to(torch::kFloat64),
                           cloud.log_scales.slice(0, index, index + 1).to(torch::kFloat64))
                   .squeeze(0)
                   .contiguous();
    Eigen::Matrix3d out;
    auto acc = cov.accessor<double, 2>();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            out(r, c) = acc[r][c];
        }
    }
    return out;
}

} // namespace headsplat
