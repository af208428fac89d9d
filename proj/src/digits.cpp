#include "terse/digits.hpp"

#include <algorithm>
#include <cmath>

#include "terse/rng.hpp"

namespace terse {

namespace {

struct Vec2 {
    double x, y;
};

using Stroke = std::vector<Vec2>;

void arc(Stroke& s, double cx, double cy, double rx, double ry, double a0, double a1, int n = 14) {
    for (int i = 0; i <= n; ++i) {
        const double a = a0 + (a1 - a0) * i / n;
        s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    }
}

// Skeletons in a unit box, x right, y down.
std::vector<Stroke> glyph(int digit) {
    const double pi = 3.14159265358979323846;
    std::vector<Stroke> g;
    switch (digit) {
        case 0: {
            Stroke s;
            arc(s, 0.50, 0.50, 0.26, 0.36, 0, 2 * pi, 24);
            g.push_back(s);
            break;
        }
        case 1:
            g.push_back({{0.36, 0.30}, {0.54, 0.14}});
            g.push_back({{0.54, 0.14}, {0.54, 0.86}});
            break;
        case 2: {
            Stroke s;
            arc(s, 0.50, 0.32, 0.24, 0.20, pi, 2 * pi + 0.9);
            s.push_back({0.26, 0.86});
            g.push_back(s);
            g.push_back({{0.26, 0.86}, {0.76, 0.86}});
            break;
        }
        case 3: {
            Stroke a3;
            arc(a3, 0.42, 0.30, 0.26, 0.17, -2.07, pi / 2);
            g.push_back(a3);
            Stroke b3;
            arc(b3, 0.42, 0.66, 0.28, 0.20, -pi / 2, 2.0);
            g.push_back(b3);
            break;
        }
        case 4:
            g.push_back({{0.62, 0.12}, {0.24, 0.58}});
            g.push_back({{0.24, 0.58}, {0.80, 0.58}});
            g.push_back({{0.62, 0.12}, {0.62, 0.88}});
            break;
        case 5: {
            g.push_back({{0.72, 0.14}, {0.32, 0.14}});
            g.push_back({{0.32, 0.14}, {0.30, 0.44}});
            Stroke s;
            arc(s, 0.47, 0.63, 0.24, 0.22, -1.9, 2.8);
            g.push_back(s);
            break;
        }
        case 6: {
            g.push_back({{0.66, 0.13}, {0.52, 0.25}, {0.42, 0.42}, {0.36, 0.58}});
            Stroke s;
            arc(s, 0.52, 0.68, 0.17, 0.17, 0, 2 * pi, 20);
            g.push_back(s);
            break;
        }
        case 7:
            g.push_back({{0.24, 0.15}, {0.78, 0.15}});
            g.push_back({{0.78, 0.15}, {0.44, 0.88}});
            break;
        case 8: {
            Stroke a8;
            arc(a8, 0.50, 0.30, 0.19, 0.17, 0, 2 * pi, 20);
            g.push_back(a8);
            Stroke b8;
            arc(b8, 0.50, 0.68, 0.22, 0.19, 0, 2 * pi, 20);
            g.push_back(b8);
            break;
        }
        case 9: {
            Stroke a9;
            arc(a9, 0.48, 0.32, 0.19, 0.18, 0, 2 * pi, 20);
            g.push_back(a9);
            g.push_back({{0.67, 0.32}, {0.66, 0.55}, {0.60, 0.88}});
            break;
        }
        default:
            throw std::invalid_argument("digit class must be 0..9");
    }
    return g;
}

double dist_to_segment(double px, double py, const Vec2& a, const Vec2& b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

TensorF render_digit(int digit_class, std::uint64_t seed, std::uint64_t sample_key) {
    Rng rng(derive_seed(seed, 0x64696769u + static_cast<std::uint64_t>(digit_class), sample_key));
    std::vector<Stroke> strokes = glyph(digit_class);

    // mild pose jitter applied to the skeleton control points (in 28px units)
    const double rot = rng.uniform(-0.12, 0.12);
    const double sx = rng.uniform(0.90, 1.10), sy = rng.uniform(0.90, 1.10);
    const double shear = rng.uniform(-0.06, 0.06);
    const double tx = rng.uniform(-1.4, 1.4), ty = rng.uniform(-1.4, 1.4);
    const double cs = std::cos(rot), sn = std::sin(rot);
    for (Stroke& s : strokes)
        for (Vec2& p : s) {
            double x = (p.x - 0.5) * 28.0, y = (p.y - 0.5) * 28.0;
            x += shear * y;
            x *= sx;
            y *= sy;
            const double xr = cs * x - sn * y, yr = sn * x + cs * y;
            x = xr + tx + rng.normal() * 0.30;
            y = yr + ty + rng.normal() * 0.30;
            p = {x + 14.0, y + 14.0};
        }

    const double half_width = rng.uniform(0.95, 1.75);
    const double aa = 0.9;  // anti-alias falloff in pixels

    TensorF img({28, 28});
    for (int y = 0; y < 28; ++y)
        for (int x = 0; x < 28; ++x) {
            double d = 1e9;
            for (const Stroke& s : strokes)
                for (std::size_t i = 0; i + 1 < s.size(); ++i)
                    d = std::min(d, dist_to_segment(x + 0.5, y + 0.5, s[i], s[i + 1]));
            const double ink = std::clamp((half_width - d) / aa + 0.5, 0.0, 1.0);
            img.at2(y, x) = static_cast<float>(ink);
        }
    return img;
}

DatasetSplit make_digit_corpus(int n_total, std::uint64_t seed) {
    DatasetSplit split;
    split.images.resize(static_cast<std::size_t>(n_total));
    split.labels.resize(static_cast<std::size_t>(n_total));
    for (int i = 0; i < n_total; ++i) {
        const int cls = i % 10;
        split.images[static_cast<std::size_t>(i)] =
            render_digit(cls, seed, static_cast<std::uint64_t>(i / 10));
        split.labels[static_cast<std::size_t>(i)] = cls;
    }
    return split;
}

std::vector<TensorF> make_gray_backgrounds(int n, std::uint64_t seed, float level,
                                           float noise_sigma) {
    std::vector<TensorF> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, 0x67726179u, static_cast<std::uint64_t>(i)));
        TensorF bg({40, 40});
        for (std::size_t p = 0; p < bg.size(); ++p)
            bg[p] = std::clamp(level + noise_sigma * static_cast<float>(rng.normal()), 0.0f, 1.0f);
        out.push_back(std::move(bg));
    }
    return out;
}

}  // namespace terse
