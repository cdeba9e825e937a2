#pragma once

// Small value types shared by every module: 3-vectors, 3x3 matrices, rigid
// poses, the error hierarchy, a portable seeded RNG and a deterministic
// parallel-for. All lengths are millimeters.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace posekit {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or unreadable input file.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Input file could not be opened at all.
class IoError : public ParseError {
public:
    using ParseError::ParseError;
};

/// An operation was called outside its documented domain.
class PreconditionError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Vec3 / Mat3
// ---------------------------------------------------------------------------

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr Vec3() = default;
    constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    constexpr double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }

    constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    constexpr Vec3 operator-() const { return {-x, -y, -z}; }
    constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    constexpr Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    constexpr Vec3& operator-=(const Vec3& o) {
        x -= o.x;
        y -= o.y;
        z -= o.z;
        return *this;
    }
    constexpr Vec3& operator*=(double s) {
        x *= s;
        y *= s;
        z *= s;
        return *this;
    }
    constexpr bool operator==(const Vec3&) const = default;

    constexpr double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    constexpr Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    constexpr double squared_norm() const { return x * x + y * y + z * z; }
    double norm() const { return std::sqrt(squared_norm()); }
    Vec3 normalized() const {
        const double n = norm();
        return n > 0.0 ? *this / n : Vec3{};
    }
    bool is_finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

/// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{0, 0, 0, 0, 0, 0, 0, 0, 0};

    static constexpr Mat3 identity() { return Mat3{{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }
    static constexpr Mat3 zero() { return Mat3{}; }
    static constexpr Mat3 diagonal(double a, double b, double c) {
        return Mat3{{a, 0, 0, 0, b, 0, 0, 0, c}};
    }
    static constexpr Mat3 from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
        return Mat3{{r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z}};
    }
    static constexpr Mat3 outer(const Vec3& a, const Vec3& b) {
        return Mat3{{a.x * b.x, a.x * b.y, a.x * b.z, a.y * b.x, a.y * b.y, a.y * b.z,
                     a.z * b.x, a.z * b.y, a.z * b.z}};
    }

    constexpr double operator()(std::size_t r, std::size_t c) const { return m[r * 3 + c]; }
    constexpr double& operator()(std::size_t r, std::size_t c) { return m[r * 3 + c]; }

    constexpr Vec3 row(std::size_t r) const { return {m[r * 3], m[r * 3 + 1], m[r * 3 + 2]}; }
    constexpr Vec3 col(std::size_t c) const { return {m[c], m[3 + c], m[6 + c]}; }

    constexpr Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    constexpr Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j)
                r.m[i * 3 + j] = m[i * 3] * o.m[j] + m[i * 3 + 1] * o.m[3 + j] +
                                 m[i * 3 + 2] * o.m[6 + j];
        return r;
    }
    constexpr Mat3 operator+(const Mat3& o) const {
        Mat3 r;
        for (std::size_t i = 0; i < 9; ++i) r.m[i] = m[i] + o.m[i];
        return r;
    }
    constexpr Mat3 operator-(const Mat3& o) const {
        Mat3 r;
        for (std::size_t i = 0; i < 9; ++i) r.m[i] = m[i] - o.m[i];
        return r;
    }
    constexpr Mat3 operator*(double s) const {
        Mat3 r;
        for (std::size_t i = 0; i < 9; ++i) r.m[i] = m[i] * s;
        return r;
    }
    constexpr Mat3& operator+=(const Mat3& o) {
        for (std::size_t i = 0; i < 9; ++i) m[i] += o.m[i];
        return *this;
    }
    constexpr bool operator==(const Mat3&) const = default;

    constexpr Mat3 transpose() const {
        return Mat3{{m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}};
    }
    constexpr double trace() const { return m[0] + m[4] + m[8]; }
    constexpr double determinant() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }
    double frobenius_norm() const {
        double s = 0.0;
        for (double v : m) s += v * v;
        return std::sqrt(s);
    }
    double max_abs() const {
        double s = 0.0;
        for (double v : m) s = std::max(s, std::abs(v));
        return s;
    }
    bool is_finite() const {
        return std::all_of(m.begin(), m.end(), [](double v) { return std::isfinite(v); });
    }
};

/// Largest absolute entry of RᵀR − I.
inline double orthonormality_error(const Mat3& r) {
    return (r.transpose() * r - Mat3::identity()).max_abs();
}

/// Rotation of `angle_rad` about `axis` (need not be normalized).
inline Mat3 axis_angle(const Vec3& axis, double angle_rad) {
    const Vec3 a = axis.normalized();
    const double c = std::cos(angle_rad);
    const double s = std::sin(angle_rad);
    const double t = 1.0 - c;
    return Mat3{{t * a.x * a.x + c, t * a.x * a.y - s * a.z, t * a.x * a.z + s * a.y,
                 t * a.x * a.y + s * a.z, t * a.y * a.y + c, t * a.y * a.z - s * a.x,
                 t * a.x * a.z - s * a.y, t * a.y * a.z + s * a.x, t * a.z * a.z + c}};
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
inline Mat3 quaternion_to_matrix(double w, double x, double y, double z) {
    return Mat3{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
                 2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
                 2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
}

/// Geodesic angle of a rotation in degrees, argument of acos clamped to [-1, 1].
/// Rotation angle in degrees, atan2(2 sin, 2 cos) instead of acos((tr - 1) / 2)
/// to stay accurate near 0 and 180 degrees.
inline double rotation_angle_deg(const Mat3& r) {
    const auto& m = r.m;
    const double sx = m[7] - m[5], sy = m[2] - m[6], sz = m[3] - m[1];
    const double s2 = std::sqrt(sx * sx + sy * sy + sz * sz);
    const double c2 = std::clamp(r.trace() - 1.0, -2.0, 2.0);
    return std::atan2(s2, c2) * 180.0 / kPi;
}

/// Nearest rotation (polar factor) by Newton iteration X <- (X + X^-T)/2.
/// Input must be nonsingular with positive determinant.
inline Mat3 nearest_rotation(const Mat3& m) {
    if (!(m.determinant() > 0.0))
        throw PreconditionError("nearest_rotation: matrix determinant is not positive");
    Mat3 x = m;
    for (int it = 0; it < 100; ++it) {
        const Mat3& a = x;
        const double det = a.determinant();
        // inverse transpose = cofactor / det
        Mat3 cof{{a.m[4] * a.m[8] - a.m[5] * a.m[7], a.m[5] * a.m[6] - a.m[3] * a.m[8],
                  a.m[3] * a.m[7] - a.m[4] * a.m[6], a.m[2] * a.m[7] - a.m[1] * a.m[8],
                  a.m[0] * a.m[8] - a.m[2] * a.m[6], a.m[1] * a.m[6] - a.m[0] * a.m[7],
                  a.m[1] * a.m[5] - a.m[2] * a.m[4], a.m[2] * a.m[3] - a.m[0] * a.m[5],
                  a.m[0] * a.m[4] - a.m[1] * a.m[3]}};
        Mat3 next = (x + cof * (1.0 / det)) * 0.5;
        const double delta = (next - x).max_abs();
        x = next;
        if (delta < 1e-15) break;
    }
    return x;
}

// ---------------------------------------------------------------------------
// Pose
// ---------------------------------------------------------------------------

/// Rigid transform x -> R x + t. Used for model-to-camera poses, camera
/// extrinsics and symmetry transforms alike.
struct Pose {
    Mat3 rotation = Mat3::identity();
    Vec3 translation{};

    static Pose identity() { return {}; }

    constexpr Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

    /// (a * b)(x) = a(b(x))
    Pose operator*(const Pose& o) const {
        return {rotation * o.rotation, rotation * o.translation + translation};
    }
    Pose inverse() const {
        const Mat3 rt = rotation.transpose();
        return {rt, -(rt * translation)};
    }
    bool operator==(const Pose&) const = default;

    bool is_valid(double tol = 1e-6) const {
        return rotation.is_finite() && translation.is_finite() &&
               orthonormality_error(rotation) <= tol &&
               std::abs(rotation.determinant() - 1.0) <= tol;
    }
    void validate(double tol = 1e-6) const {
        if (!is_valid(tol)) throw PreconditionError("pose rotation is not a proper rotation");
    }
};

// ---------------------------------------------------------------------------
// Deterministic randomness
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// mt19937_64 with distribution code written out so streams are identical
/// across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi], unbiased by rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(engine_());
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t v;
        do v = engine_();
        while (v >= limit);
        return lo + static_cast<std::int64_t>(v % span);
    }

    double normal() {
        // Box-Muller, one value per call
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    /// Uniform rotation via Shoemake's unit-quaternion construction.
    Mat3 rotation() {
        const double u1 = uniform(), u2 = uniform(), u3 = uniform();
        const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
        return quaternion_to_matrix(a * std::sin(2 * kPi * u2), a * std::cos(2 * kPi * u2),
                                    b * std::sin(2 * kPi * u3), b * std::cos(2 * kPi * u3));
    }

private:
    std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Parallelism
// ---------------------------------------------------------------------------

inline std::atomic<unsigned>& default_jobs_storage() {
    static std::atomic<unsigned> jobs{std::max(1u, std::thread::hardware_concurrency())};
    return jobs;
}
inline unsigned default_jobs() { return default_jobs_storage().load(); }
inline void set_default_jobs(unsigned jobs) { default_jobs_storage().store(std::max(1u, jobs)); }

/// Runs fn(i) for i in [0, n). Work is split in contiguous chunks; callers
/// write results by index, so output does not depend on the thread count.
/// `grain` is the minimum number of items per extra worker.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, unsigned jobs = 0, std::size_t grain = 256) {
    if (jobs == 0) jobs = default_jobs();
    const std::size_t workers = std::min<std::size_t>({jobs, n, n / std::max<std::size_t>(grain, 1) + 1});
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    threads.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        threads.emplace_back([&, begin, end] {
            try {
                for (std::size_t i = begin; i < end; ++i) fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace posekit
