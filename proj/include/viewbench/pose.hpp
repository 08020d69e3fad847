#pragma once

// Camera extrinsics from COLMAP text reconstructions and the relative
// rotation angle between two views.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "viewbench/error.hpp"

namespace viewbench {

using RotationMatrix = Eigen::Matrix3d;
using Vector3 = Eigen::Vector3d;

/// Hamilton quaternion, scalar first (COLMAP order).
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

  Quaternion normalized() const {
    const double n = norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw DomainError("quaternion has zero or non-finite norm");
    }
    return {w / n, x / n, y / n, z / n};
  }
};

struct CameraPose {
  std::int64_t image_id = 0;
  std::string image_name;
  std::int64_t camera_id = 0;
  Quaternion quaternion;  // normalized, world -> camera
  RotationMatrix rotation = RotationMatrix::Identity();
  Vector3 translation = Vector3::Zero();
};

struct RelativeAngle {
  std::int64_t frame = 0;
  double theta_deg = 0.0;
};

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

inline RotationMatrix quat_to_rotation(const Quaternion& q_in) {
  const Quaternion q = q_in.normalized();
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  RotationMatrix r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

/// Inverse of quat_to_rotation (Shepperd's method); returns w >= 0.
inline Quaternion rotation_to_quat(const RotationMatrix& r) {
  const double trace = r.trace();
  Quaternion q;
  if (trace > 0) {
    const double s = 2.0 * std::sqrt(trace + 1.0);
    q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
  } else if (r(1, 1) > r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
    q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s};
  } else {
    const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
    q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s};
  }
  if (q.w < 0) q = {-q.w, -q.x, -q.y, -q.z};
  return q.normalized();
}

/// Rotation of `angle_deg` about the (not necessarily unit) axis.
inline RotationMatrix axis_angle(const Vector3& axis, double angle_deg) {
  const Vector3 u = axis.normalized();
  const double half = deg_to_rad(angle_deg) / 2.0;
  const double s = std::sin(half);
  return quat_to_rotation({std::cos(half), u.x() * s, u.y() * s, u.z() * s});
}

inline bool is_rotation(const RotationMatrix& r, double tol = 1e-6) {
  const RotationMatrix gram = r.transpose() * r;
  return (gram - RotationMatrix::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

/// Camera-to-camera rotation taking the reference view onto view i.
inline RotationMatrix relative_rotation(const CameraPose& pose, const CameraPose& reference) {
  return pose.rotation * reference.rotation.transpose();
}

/// Rotation angle of `r_rel` in degrees, in [0, 180].
inline double angular_deviation(const RotationMatrix& r_rel) {
  const double c = std::clamp((r_rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  return rad_to_deg(std::acos(c));
}

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

inline double parse_double(const std::string& s, std::size_t line) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParseError("expected a number, got '" + s + "'", line);
  }
  if (used != s.size()) throw ParseError("expected a number, got '" + s + "'", line);
  return v;
}

inline std::int64_t parse_int(const std::string& s, std::size_t line) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    throw ParseError("expected an integer, got '" + s + "'", line);
  }
  if (used != s.size()) throw ParseError("expected an integer, got '" + s + "'", line);
  return v;
}

inline bool is_blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace detail

/// Reads a COLMAP `images.txt`. Every image occupies two lines; the second
/// (2D observations, possibly empty) is skipped.
inline std::vector<CameraPose> parse_colmap_images(std::istream& in) {
  std::vector<CameraPose> poses;
  std::unordered_set<std::int64_t> seen;
  std::string line;
  std::size_t lineno = 0;
  bool expect_points = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line.front() == '#') continue;
    if (expect_points) {
      expect_points = false;
      continue;
    }
    if (detail::is_blank(line)) continue;

    const auto tok = detail::split_ws(line);
    if (tok.size() != 10) {
      throw ParseError("expected 10 fields (IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME), got " +
                           std::to_string(tok.size()),
                       lineno);
    }
    CameraPose pose;
    pose.image_id = detail::parse_int(tok[0], lineno);
    const Quaternion raw{detail::parse_double(tok[1], lineno), detail::parse_double(tok[2], lineno),
                         detail::parse_double(tok[3], lineno), detail::parse_double(tok[4], lineno)};
    pose.translation = {detail::parse_double(tok[5], lineno), detail::parse_double(tok[6], lineno),
                        detail::parse_double(tok[7], lineno)};
    pose.camera_id = detail::parse_int(tok[8], lineno);
    pose.image_name = tok[9];
    try {
      pose.quaternion = raw.normalized();
    } catch (const DomainError& e) {
      throw ParseError(e.what(), lineno);
    }
    pose.rotation = quat_to_rotation(pose.quaternion);
    if (!seen.insert(pose.image_id).second) {
      throw StructuralError("duplicate IMAGE_ID " + std::to_string(pose.image_id) + " at line " +
                            std::to_string(lineno));
    }
    poses.push_back(std::move(pose));
    expect_points = true;
  }
  return poses;
}

inline std::vector<CameraPose> parse_colmap_images(const std::string& text) {
  std::istringstream in(text);
  return parse_colmap_images(in);
}

/// Writes poses in `images.txt` form with an empty observation line each.
inline void write_colmap_images(std::ostream& out, const std::vector<CameraPose>& poses) {
  out << "# Image list with two lines of data per image:\n"
      << "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n"
      << "#   POINTS2D[] as (X, Y, POINT3D_ID)\n";
  out << std::setprecision(17);
  for (const auto& p : poses) {
    const auto& q = p.quaternion;
    out << p.image_id << ' ' << q.w << ' ' << q.x << ' ' << q.y << ' ' << q.z << ' '
        << p.translation.x() << ' ' << p.translation.y() << ' ' << p.translation.z() << ' '
        << p.camera_id << ' ' << p.image_name << "\n\n";
  }
}

/// Angle of every pose relative to `reference`, in input order.
inline std::vector<RelativeAngle> relative_angles(const std::vector<CameraPose>& poses,
                                                  const CameraPose& reference) {
  std::vector<RelativeAngle> out;
  out.reserve(poses.size());
  for (const auto& p : poses) {
    out.push_back({p.image_id, angular_deviation(relative_rotation(p, reference))});
  }
  return out;
}

/// The pose with the smallest image id.
inline const CameraPose& reference_pose(const std::vector<CameraPose>& poses) {
  if (poses.empty()) throw DomainError("no poses to choose a reference from");
  return *std::min_element(poses.begin(), poses.end(),
                           [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
}

}  // namespace viewbench
