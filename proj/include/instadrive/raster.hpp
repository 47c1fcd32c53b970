#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "geometry.hpp"

namespace instadrive {

inline double cross2(Vec2 o, Vec2 a, Vec2 b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Counter-clockwise convex hull (in a y-up sense of the cross product) with
// collinear points dropped. Fewer than 3 returned points means zero area.
inline std::vector<Vec2> convex_hull(std::span<const Vec2> input) {
    std::vector<Vec2> pts(input.begin(), input.end());
    std::sort(pts.begin(), pts.end(), [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    pts.erase(std::unique(pts.begin(), pts.end(), [](Vec2 a, Vec2 b) { return a.x == b.x && a.y == b.y; }),
              pts.end());
    if (pts.size() < 3) return pts;
    std::vector<Vec2> hull(2 * pts.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        while (k >= 2 && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

// Closed containment test against a hull from convex_hull().
inline bool hull_contains(std::span<const Vec2> hull, Vec2 p) {
    if (hull.size() < 3) return false;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const Vec2 a = hull[i], b = hull[(i + 1) % hull.size()];
        if (cross2(a, b, p) < 0) return false;
    }
    return true;
}

// Calls fn(x, y) for every pixel of a width x height grid whose center
// (x + 0.5, y + 0.5) lies in the closed hull.
template <class Fn>
void fill_hull(std::span<const Vec2> hull, int width, int height, Fn&& fn) {
    if (hull.size() < 3) return;
    double lo_x = hull[0].x, hi_x = hull[0].x, lo_y = hull[0].y, hi_y = hull[0].y;
    for (Vec2 p : hull) {
        lo_x = std::min(lo_x, p.x);
        hi_x = std::max(hi_x, p.x);
        lo_y = std::min(lo_y, p.y);
        hi_y = std::max(hi_y, p.y);
    }
    auto clamp_px = [](double v, int n) { return static_cast<int>(std::clamp(v, -1.0, double(n))); };
    const int x0 = std::max(0, clamp_px(std::floor(lo_x - 0.5), width));
    const int x1 = std::min(width - 1, clamp_px(std::ceil(hi_x - 0.5), width));
    const int y0 = std::max(0, clamp_px(std::floor(lo_y - 0.5), height));
    const int y1 = std::min(height - 1, clamp_px(std::ceil(hi_y - 0.5), height));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if (hull_contains(hull, {x + 0.5, y + 0.5})) fn(x, y);
}

// Clips segment a-b to the rectangle [0, w) x [0, h) (Liang-Barsky).
inline bool clip_segment(Vec2& a, Vec2& b, double w, double h) {
    double t0 = 0.0, t1 = 1.0;
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double hi_x = std::nextafter(w, 0.0), hi_y = std::nextafter(h, 0.0);
    const double p[4] = {-dx, dx, -dy, dy};
    const double q[4] = {a.x, hi_x - a.x, a.y, hi_y - a.y};
    for (int i = 0; i < 4; ++i) {
        if (p[i] == 0.0) {
            if (q[i] < 0) return false;
            continue;
        }
        const double r = q[i] / p[i];
        if (p[i] < 0) {
            if (r > t1) return false;
            t0 = std::max(t0, r);
        } else {
            if (r < t0) return false;
            t1 = std::min(t1, r);
        }
    }
    const Vec2 s = a;
    a = {s.x + t0 * dx, s.y + t0 * dy};
    b = {s.x + t1 * dx, s.y + t1 * dy};
    return true;
}

// 1-pixel line between continuous image points; pixels outside the grid are skipped.
template <class Fn>
void draw_segment(Vec2 a, Vec2 b, int width, int height, Fn&& fn) {
    if (!clip_segment(a, b, width, height)) return;
    int x0 = static_cast<int>(std::floor(a.x)), y0 = static_cast<int>(std::floor(a.y));
    const int x1 = static_cast<int>(std::floor(b.x)), y1 = static_cast<int>(std::floor(b.y));
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        if (x0 >= 0 && y0 >= 0 && x0 < width && y0 < height) fn(x0, y0);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

}  // namespace instadrive
