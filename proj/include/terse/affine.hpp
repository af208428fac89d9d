#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace terse {

// Parameter order everywhere: rotation, tx, ty, shear, sx, sy.
enum AffineIndex { kRot = 0, kTx = 1, kTy = 2, kShear = 3, kSx = 4, kSy = 5 };

template <typename T>
struct AffineParamsT {
    T rot = 0, tx = 0, ty = 0, shear = 0, sx = 1, sy = 1;

    T& operator[](int i) { return (&rot)[i]; }
    const T& operator[](int i) const { return (&rot)[i]; }

    static AffineParamsT identity() { return {}; }
};

using AffineParams = AffineParamsT<double>;

// Per-parameter clamp intervals. Identity must lie strictly inside every
// interval so an untrained synthesizer head starts at a usable transform.
struct ClampRanges {
    std::array<double, 6> lo{-0.3490658503988659, -0.2, -0.2, -0.2, 0.8, 0.8};  // rot = +-20 deg
    std::array<double, 6> hi{0.3490658503988659, 0.2, 0.2, 0.2, 1.2, 1.2};

    void validate() const {
        static const char* names[6] = {"rotation", "tx", "ty", "shear", "sx", "sy"};
        const AffineParams id = AffineParams::identity();
        for (int i = 0; i < 6; ++i) {
            if (!(lo[i] < hi[i]))
                throw std::invalid_argument(std::string("clamp range ") + names[i] + ": min " +
                                            std::to_string(lo[i]) + " not below max " +
                                            std::to_string(hi[i]));
            if (id[i] < lo[i] || id[i] > hi[i])
                throw std::invalid_argument(std::string("clamp range ") + names[i] +
                                            " excludes the identity transform");
        }
        if (lo[kSx] <= 0 || lo[kSy] <= 0)
            throw std::invalid_argument("scale clamp ranges must be positive");
    }

    template <typename T>
    bool contains(const AffineParamsT<T>& p, double tol = 1e-9) const {
        for (int i = 0; i < 6; ++i)
            if (p[i] < lo[i] - tol || p[i] > hi[i] + tol) return false;
        return true;
    }
};

// Row-major 2x3 matrix [a b tx; c d ty] acting on center-origin normalized
// coordinates in [-1,1]^2.
template <typename T>
struct Mat23 {
    T a = 1, b = 0, tx = 0;
    T c = 0, d = 1, ty = 0;

    T det() const { return a * d - b * c; }

    Mat23 inverse() const {
        const T dt = det();
        if (std::abs(static_cast<double>(dt)) < 1e-8)
            throw std::invalid_argument("affine matrix is singular (|det| = " +
                                        std::to_string(std::abs(static_cast<double>(dt))) + ")");
        Mat23 inv;
        inv.a = d / dt;
        inv.b = -b / dt;
        inv.c = -c / dt;
        inv.d = a / dt;
        inv.tx = -(inv.a * tx + inv.b * ty);
        inv.ty = -(inv.c * tx + inv.d * ty);
        return inv;
    }
};

// M = T(tx,ty) . R(rot) . Sh(shear) . Sc(sx,sy); the composition order is
// fixed project-wide. Sh is an x-shear.
template <typename T>
Mat23<T> affine_to_matrix(const AffineParamsT<T>& p) {
    const T cs = std::cos(p.rot), sn = std::sin(p.rot);
    Mat23<T> m;
    m.a = cs * p.sx;
    m.b = (cs * p.shear - sn) * p.sy;
    m.c = sn * p.sx;
    m.d = (sn * p.shear + cs) * p.sy;
    m.tx = p.tx;
    m.ty = p.ty;
    return m;
}

// Analytic partials dM/dparam, same parameter order as AffineIndex.
template <typename T>
std::array<Mat23<T>, 6> affine_matrix_partials(const AffineParamsT<T>& p) {
    const T cs = std::cos(p.rot), sn = std::sin(p.rot);
    std::array<Mat23<T>, 6> d;
    for (auto& m : d) m = Mat23<T>{0, 0, 0, 0, 0, 0};

    d[kRot].a = -sn * p.sx;
    d[kRot].b = (-sn * p.shear - cs) * p.sy;
    d[kRot].c = cs * p.sx;
    d[kRot].d = (cs * p.shear - sn) * p.sy;

    d[kTx].tx = 1;
    d[kTy].ty = 1;

    d[kShear].b = cs * p.sy;
    d[kShear].d = sn * p.sy;

    d[kSx].a = cs;
    d[kSx].c = sn;

    d[kSy].b = cs * p.shear - sn;
    d[kSy].d = sn * p.shear + cs;
    return d;
}

}  // namespace terse
