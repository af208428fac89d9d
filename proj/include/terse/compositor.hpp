#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

#include "terse/affine.hpp"
#include "terse/tensor.hpp"

namespace terse {

constexpr int kImageSize = 40;

// ---------------------------------------------------------------------------
// Grid generation (inverse warp). For each output pixel with normalized
// coordinate q the grid holds M^-1 q, so the object moves forward by M. The
// grid tensor is (H, W, 2) with (x, y) source coordinates in [-1,1] units.
// ---------------------------------------------------------------------------
template <typename T>
struct GridResult {
    Tensor<T> grid;
    Mat23<T> inv;  // kept for the backward pass
};

template <typename T>
GridResult<T> make_grid(const Mat23<T>& m, int out_h, int out_w) {
    GridResult<T> r;
    r.inv = m.inverse();  // throws on |det| < 1e-8
    r.grid = Tensor<T>({out_h, out_w, 2});
    const T sx = T(2.0 / (out_w - 1)), sy = T(2.0 / (out_h - 1));
    for (int i = 0; i < out_h; ++i) {
        const T qy = T(-1) + sy * i;
        for (int j = 0; j < out_w; ++j) {
            const T qx = T(-1) + sx * j;
            T* g = r.grid.ptr() + (static_cast<std::size_t>(i) * out_w + j) * 2;
            g[0] = r.inv.a * qx + r.inv.b * qy + r.inv.tx;
            g[1] = r.inv.c * qx + r.inv.d * qy + r.inv.ty;
        }
    }
    return r;
}

// Accumulates d loss / d M from a gradient over the grid.
// src = A (q - t) with A = L^-1 gives dsrc/dL = -A dL src and dsrc/dt = -A dt,
// so with h = A^T g:  dL = -sum h src^T,  dt = -sum h.
template <typename T>
Mat23<T> make_grid_backward(const GridResult<T>& r, const Tensor<T>& ggrid) {
    const int H = r.grid.dim(0), W = r.grid.dim(1);
    double h00 = 0, h01 = 0, h10 = 0, h11 = 0, hx = 0, hy = 0;
    for (int i = 0; i < H * W; ++i) {
        const T* g = ggrid.ptr() + static_cast<std::size_t>(i) * 2;
        const T* s = r.grid.ptr() + static_cast<std::size_t>(i) * 2;
        const double ha = r.inv.a * g[0] + r.inv.c * g[1];  // (A^T g)_x
        const double hb = r.inv.b * g[0] + r.inv.d * g[1];  // (A^T g)_y
        h00 += ha * s[0];
        h01 += ha * s[1];
        h10 += hb * s[0];
        h11 += hb * s[1];
        hx += ha;
        hy += hb;
    }
    Mat23<T> dm;
    dm.a = T(-h00);
    dm.b = T(-h01);
    dm.c = T(-h10);
    dm.d = T(-h11);
    dm.tx = T(-hx);
    dm.ty = T(-hy);
    return dm;
}

// ---------------------------------------------------------------------------
// Bilinear sampling with zero (border) padding. Sample positions within 1e-9
// of a lattice point are snapped so an identity warp reproduces the input
// bit-for-bit.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& image, const Tensor<T>& grid) {
    if (image.ndim() != 2) throw std::invalid_argument("bilinear: image must be HxW, got " + image.shape_str());
    const int H = image.dim(0), W = image.dim(1);
    const int OH = grid.dim(0), OW = grid.dim(1);
    Tensor<T> out({OH, OW});
    for (int i = 0; i < OH * OW; ++i) {
        const T* g = grid.ptr() + static_cast<std::size_t>(i) * 2;
        if (!std::isfinite(static_cast<double>(g[0])) || !std::isfinite(static_cast<double>(g[1])))
            throw std::invalid_argument("bilinear: non-finite grid coordinate");
        double px = (static_cast<double>(g[0]) + 1.0) * 0.5 * (W - 1);
        double py = (static_cast<double>(g[1]) + 1.0) * 0.5 * (H - 1);
        if (std::abs(px - std::round(px)) < 1e-9) px = std::round(px);
        if (std::abs(py - std::round(py)) < 1e-9) py = std::round(py);
        const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
        const double fx = px - x0, fy = py - y0;
        auto pix = [&](int y, int x) -> double {
            return (x >= 0 && x < W && y >= 0 && y < H)
                       ? static_cast<double>(image.ptr()[static_cast<std::size_t>(y) * W + x])
                       : 0.0;
        };
        const double v = (1 - fy) * ((1 - fx) * pix(y0, x0) + fx * pix(y0, x0 + 1)) +
                         fy * ((1 - fx) * pix(y0 + 1, x0) + fx * pix(y0 + 1, x0 + 1));
        out[static_cast<std::size_t>(i)] = T(v);
    }
    return out;
}

// Backward pass: gradients w.r.t. the image and the grid coordinates.
template <typename T>
void bilinear_sample_backward(const Tensor<T>& image, const Tensor<T>& grid, const Tensor<T>& gout,
                              Tensor<T>* gimage, Tensor<T>* ggrid) {
    const int H = image.dim(0), W = image.dim(1);
    const int OH = grid.dim(0), OW = grid.dim(1);
    if (gimage) *gimage = Tensor<T>({H, W});
    if (ggrid) *ggrid = Tensor<T>({OH, OW, 2});
    for (int i = 0; i < OH * OW; ++i) {
        const T* g = grid.ptr() + static_cast<std::size_t>(i) * 2;
        double px = (static_cast<double>(g[0]) + 1.0) * 0.5 * (W - 1);
        double py = (static_cast<double>(g[1]) + 1.0) * 0.5 * (H - 1);
        if (std::abs(px - std::round(px)) < 1e-9) px = std::round(px);
        if (std::abs(py - std::round(py)) < 1e-9) py = std::round(py);
        const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
        const double fx = px - x0, fy = py - y0;
        const double go = gout[static_cast<std::size_t>(i)];
        auto pix = [&](int y, int x) -> double {
            return (x >= 0 && x < W && y >= 0 && y < H)
                       ? static_cast<double>(image.ptr()[static_cast<std::size_t>(y) * W + x])
                       : 0.0;
        };
        auto add = [&](int y, int x, double v) {
            if (gimage && x >= 0 && x < W && y >= 0 && y < H)
                gimage->ptr()[static_cast<std::size_t>(y) * W + x] += T(v);
        };
        add(y0, x0, go * (1 - fy) * (1 - fx));
        add(y0, x0 + 1, go * (1 - fy) * fx);
        add(y0 + 1, x0, go * fy * (1 - fx));
        add(y0 + 1, x0 + 1, go * fy * fx);
        if (ggrid) {
            const double dpx = (1 - fy) * (pix(y0, x0 + 1) - pix(y0, x0)) +
                               fy * (pix(y0 + 1, x0 + 1) - pix(y0 + 1, x0));
            const double dpy = (1 - fx) * (pix(y0 + 1, x0) - pix(y0, x0)) +
                               fx * (pix(y0 + 1, x0 + 1) - pix(y0, x0 + 1));
            T* gg = ggrid->ptr() + static_cast<std::size_t>(i) * 2;
            gg[0] = T(go * dpx * 0.5 * (W - 1));
            gg[1] = T(go * dpy * 0.5 * (H - 1));
        }
    }
}

// ---------------------------------------------------------------------------
// Mask cleanup: alpha = blur(normalize(relu(mask - mu))), mu = 1 - 1e-7.
// Resampling speckle below mu is removed; normalize maps the max to 1 and
// leaves an all-zero mask all-zero. 3x3 Gaussian, sigma 0.8, unit sum.
// ---------------------------------------------------------------------------
constexpr double kMaskMu = 1.0 - 1e-7;

inline const std::array<double, 9>& gaussian3x3() {
    static const std::array<double, 9> k = [] {
        std::array<double, 9> w{};
        const double s2 = 2.0 * 0.8 * 0.8;
        double sum = 0;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const double v = std::exp(-(dx * dx + dy * dy) / s2);
                w[static_cast<std::size_t>((dy + 1) * 3 + dx + 1)] = v;
                sum += v;
            }
        for (double& v : w) v /= sum;
        return w;
    }();
    return k;
}

template <typename T>
Tensor<T> blur3x3(const Tensor<T>& img) {
    const int H = img.dim(0), W = img.dim(1);
    const auto& k = gaussian3x3();
    Tensor<T> out({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double acc = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                    acc += k[static_cast<std::size_t>((dy + 1) * 3 + dx + 1)] *
                           static_cast<double>(img.ptr()[static_cast<std::size_t>(yy) * W + xx]);
                }
            out.ptr()[static_cast<std::size_t>(y) * W + x] = T(acc);
        }
    return out;
}

template <typename T>
struct CleanMaskFrame {
    Tensor<T> raw;     // relu(mask - mu)
    std::size_t argmax = 0;
    T maxval = 0;
};

template <typename T>
Tensor<T> clean_mask(const Tensor<T>& mask, CleanMaskFrame<T>* frame = nullptr) {
    const int H = mask.dim(0), W = mask.dim(1);
    Tensor<T> raw({H, W});
    T mx = 0;
    std::size_t argmax = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const T v = mask[i] > T(kMaskMu) ? mask[i] - T(kMaskMu) : T(0);
        raw[i] = v;
        if (v > mx) {  // first index wins ties
            mx = v;
            argmax = i;
        }
    }
    Tensor<T> normed({H, W});
    if (mx > T(0))
        for (std::size_t i = 0; i < raw.size(); ++i) normed[i] = raw[i] / mx;
    if (frame) {
        frame->raw = raw;
        frame->argmax = argmax;
        frame->maxval = mx;
    }
    return blur3x3(normed);
}

template <typename T>
Tensor<T> clean_mask_backward(const Tensor<T>& mask, const CleanMaskFrame<T>& f, const Tensor<T>& gout) {
    // blur kernel is symmetric: the adjoint is the same correlation
    Tensor<T> gnorm = blur3x3(gout);
    Tensor<T> gmask(mask.shape);
    if (f.maxval <= T(0)) return gmask;  // all-zero mask: zero gradient
    const double m = f.maxval;
    double dot = 0;
    for (std::size_t i = 0; i < gnorm.size(); ++i) dot += static_cast<double>(gnorm[i]) * f.raw[i];
    for (std::size_t i = 0; i < gnorm.size(); ++i) {
        double g = gnorm[i] / m;
        if (i == f.argmax) g -= dot / (m * m);
        gmask[i] = mask[i] > T(kMaskMu) ? T(g) : T(0);
    }
    return gmask;
}

// ---------------------------------------------------------------------------
// Alpha blending: out = alpha * fg + (1 - alpha) * bg.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> alpha_blend(const Tensor<T>& bg, const Tensor<T>& fg, const Tensor<T>& alpha) {
    if (!(bg.same_shape(fg) && bg.same_shape(alpha)))
        throw std::invalid_argument("alpha blend: extents differ: bg " + bg.shape_str() + " fg " +
                                    fg.shape_str() + " alpha " + alpha.shape_str());
    Tensor<T> out(bg.shape);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = alpha[i] * fg[i] + (T(1) - alpha[i]) * bg[i];
    return out;
}

template <typename T>
void alpha_blend_backward(const Tensor<T>& bg, const Tensor<T>& fg, const Tensor<T>& alpha,
                          const Tensor<T>& gout, Tensor<T>* gbg, Tensor<T>* gfg, Tensor<T>* galpha) {
    if (gbg) *gbg = Tensor<T>(bg.shape);
    if (gfg) *gfg = Tensor<T>(bg.shape);
    if (galpha) *galpha = Tensor<T>(bg.shape);
    for (std::size_t i = 0; i < bg.size(); ++i) {
        const T g = gout[i];
        if (gbg) (*gbg)[i] = g * (T(1) - alpha[i]);
        if (gfg) (*gfg)[i] = g * alpha[i];
        if (galpha) (*galpha)[i] = g * (fg[i] - bg[i]);
    }
}

// ---------------------------------------------------------------------------
// Full differentiable composite for one sample:
//   M(params) -> grid -> warped = sample(digit) -> alpha = clean_mask(warped)
//   -> out = blend(bg, warped, alpha)
// backward() folds the gradient back to the six affine parameters.
// ---------------------------------------------------------------------------
template <typename T>
struct CompositeOp {
    // forward state
    AffineParamsT<T> params;
    GridResult<T> gr;
    Tensor<T> digit, bg, warped, alpha;
    CleanMaskFrame<T> mask_frame;

    Tensor<T> forward(const Tensor<T>& digit_in, const Tensor<T>& bg_in,
                      const AffineParamsT<T>& p) {
        params = p;
        digit = digit_in;
        bg = bg_in;
        gr = make_grid(affine_to_matrix(p), bg.dim(0), bg.dim(1));
        warped = bilinear_sample(digit, gr.grid);
        alpha = clean_mask(warped, &mask_frame);
        return alpha_blend(bg, warped, alpha);
    }

    std::array<T, 6> backward(const Tensor<T>& gout) {
        Tensor<T> gwarp_direct, galpha;
        alpha_blend_backward<T>(bg, warped, alpha, gout, nullptr, &gwarp_direct, &galpha);
        Tensor<T> gwarp_mask = clean_mask_backward(warped, mask_frame, galpha);
        for (std::size_t i = 0; i < gwarp_direct.size(); ++i) gwarp_direct[i] += gwarp_mask[i];
        Tensor<T> ggrid;
        bilinear_sample_backward<T>(digit, gr.grid, gwarp_direct, nullptr, &ggrid);
        const Mat23<T> dm = make_grid_backward(gr, ggrid);
        const auto partials = affine_matrix_partials(params);
        std::array<T, 6> dp{};
        for (int k = 0; k < 6; ++k) {
            const Mat23<T>& pm = partials[static_cast<std::size_t>(k)];
            dp[static_cast<std::size_t>(k)] = dm.a * pm.a + dm.b * pm.b + dm.c * pm.c +
                                              dm.d * pm.d + dm.tx * pm.tx + dm.ty * pm.ty;
        }
        return dp;
    }
};

// Warp a grayscale image by an affine matrix (grid + sampling, no blending).
template <typename T>
Tensor<T> warp_by_matrix(const Tensor<T>& image, const Mat23<T>& m) {
    return bilinear_sample(image, make_grid(m, image.dim(0), image.dim(1)).grid);
}

// ---------------------------------------------------------------------------
// Background artifact injection: a mask-shaped region of a donor background is
// blended into the target background at an integer placement. Pixels where
// the blurred alpha is exactly zero pass through bit-unchanged.
// ---------------------------------------------------------------------------
struct MaskSupport {
    int y0 = 0, x0 = 0, y1 = -1, x1 = -1;  // inclusive; empty if y1 < y0
    bool empty() const { return y1 < y0; }
};

template <typename T>
MaskSupport mask_support(const Tensor<T>& mask, T threshold = T(0)) {
    const int H = mask.dim(0), W = mask.dim(1);
    MaskSupport s;
    s.y0 = H;
    s.x0 = W;
    s.y1 = -1;
    s.x1 = -1;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (mask.ptr()[static_cast<std::size_t>(y) * W + x] > threshold) {
                s.y0 = std::min(s.y0, y);
                s.x0 = std::min(s.x0, x);
                s.y1 = std::max(s.y1, y);
                s.x1 = std::max(s.x1, x);
            }
    return s;
}

template <typename T>
Tensor<T> inject_blending_artifact(const Tensor<T>& target_bg, const Tensor<T>& donor_bg,
                                   const Tensor<T>& mask, int offset_y, int offset_x) {
    if (!target_bg.same_shape(donor_bg) || !target_bg.same_shape(mask))
        throw std::invalid_argument("artifact injection: extents differ: target " +
                                    target_bg.shape_str() + " donor " + donor_bg.shape_str() +
                                    " mask " + mask.shape_str());
    const int H = target_bg.dim(0), W = target_bg.dim(1);
    const MaskSupport s = mask_support(mask);
    if (!s.empty()) {
        // blur spreads alpha one pixel beyond the thresholded support
        if (s.y0 + offset_y < 1 || s.y1 + offset_y > H - 2 || s.x0 + offset_x < 1 ||
            s.x1 + offset_x > W - 2)
            throw std::invalid_argument("artifact injection: placement (" + std::to_string(offset_y) +
                                        "," + std::to_string(offset_x) + ") pushes mask support out of frame");
    }
    Tensor<T> shifted({H, W});
    for (int y = 0; y < H; ++y) {
        const int sy = y - offset_y;
        if (sy < 0 || sy >= H) continue;
        for (int x = 0; x < W; ++x) {
            const int sx = x - offset_x;
            if (sx < 0 || sx >= W) continue;
            shifted.ptr()[static_cast<std::size_t>(y) * W + x] =
                mask.ptr()[static_cast<std::size_t>(sy) * W + sx];
        }
    }
    const Tensor<T> alpha = clean_mask(shifted);
    Tensor<T> out = target_bg;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (alpha[i] != T(0))
            out[i] = alpha[i] * donor_bg[i] + (T(1) - alpha[i]) * target_bg[i];
    return out;
}

}  // namespace terse
