#pragma once

// Eigenvalues of symmetric 3x3 matrices.
//
// The closed-form trigonometric solution of the characteristic cubic is used
// when the eigenvalues are well separated. When two or three eigenvalues
// (nearly) coincide, acos() loses about half the significant digits, so the
// solver switches to cyclic Jacobi rotations instead.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "posekit/core.hpp"

namespace posekit {

/// Descending eigenvalues (l1 >= l2 >= l3).
using Eigenvalues3 = std::array<double, 3>;

namespace detail {

inline Eigenvalues3 sorted_descending(double a, double b, double c) {
    Eigenvalues3 e{a, b, c};
    std::sort(e.begin(), e.end(), [](double x, double y) { return x > y; });
    return e;
}

/// Cyclic Jacobi on a symmetric matrix; accurate to a few ulps of ||A||.
inline Eigenvalues3 jacobi_eigenvalues(Mat3 a) {
    for (int sweep = 0; sweep < 64; ++sweep) {
        const double off = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
        if (off == 0.0) break;
        const double diag = a(0, 0) * a(0, 0) + a(1, 1) * a(1, 1) + a(2, 2) * a(2, 2);
        if (off <= 1e-36 * diag) break;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                // A <- Jᵀ A J with J the (p, q) Givens rotation
                for (int k = 0; k < 3; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < 3; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    return sorted_descending(a(0, 0), a(1, 1), a(2, 2));
}

}  // namespace detail

/// Eigenvalues of a symmetric matrix in descending order.
/// Throws PreconditionError when |C(i,j) - C(j,i)| > 1e-9 for some i != j.
inline Eigenvalues3 eigen3_sym(const Mat3& c) {
    if (!c.is_finite()) throw PreconditionError("eigen3_sym: matrix has non-finite entries");
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            if (std::abs(c(i, j) - c(j, i)) > 1e-9)
                throw PreconditionError("eigen3_sym: matrix is not symmetric (entry " +
                                        std::to_string(i) + "," + std::to_string(j) + ")");

    Mat3 a = c;
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) a(i, j) = a(j, i) = 0.5 * (c(i, j) + c(j, i));

    const double p1 = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
    if (p1 == 0.0) return detail::sorted_descending(a(0, 0), a(1, 1), a(2, 2));

    const double q = a.trace() / 3.0;
    const double d0 = a(0, 0) - q, d1 = a(1, 1) - q, d2 = a(2, 2) - q;
    const double p2 = d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * p1;
    const double p = std::sqrt(p2 / 6.0);
    if (!(p > 0.0)) return detail::jacobi_eigenvalues(a);

    const Mat3 b = (a - Mat3::identity() * q) * (1.0 / p);
    const double r = b.determinant() / 2.0;
    // |r| -> 1 means a repeated root of the characteristic cubic
    if (1.0 - std::abs(r) < 1e-4) return detail::jacobi_eigenvalues(a);

    const double phi = std::acos(r) / 3.0;
    const double l1 = q + 2.0 * p * std::cos(phi);
    const double l3 = q + 2.0 * p * std::cos(phi + 2.0 * kPi / 3.0);
    const double l2 = 3.0 * q - l1 - l3;
    return detail::sorted_descending(l1, l2, l3);
}

}  // namespace posekit
