#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace vgold {

struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

/// Axis-aligned box in pixels: (x, y) is the top-left corner.
struct BoundingBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    [[nodiscard]] double right() const { return x + w; }
    [[nodiscard]] double bottom() const { return y + h; }
    [[nodiscard]] double area() const { return w * h; }
    [[nodiscard]] Point center() const { return {x + w / 2.0, y + h / 2.0}; }

    [[nodiscard]] bool valid() const {
        return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h) && w > 0.0 &&
               h > 0.0;
    }

    [[nodiscard]] bool contains(Point p) const { return p.x >= x && p.x <= right() && p.y >= y && p.y <= bottom(); }

    [[nodiscard]] std::array<double, 4> as_array() const { return {x, y, w, h}; }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline BoundingBox box_from_edges(double left, double top, double right, double bottom) {
    return {left, top, right - left, bottom - top};
}

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
    const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
    const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    return iw * ih;
}

/// Intersection over union on continuous rectangles.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
    if (a == b && a.valid()) return 1.0;
    const double inter = intersection_area(a, b);
    if (inter <= 0.0) return 0.0;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return std::min(1.0, inter / uni);
}

/// Clips a box to [0,width]x[0,height]. The result may be degenerate.
inline BoundingBox clamp_to_extent(const BoundingBox& b, double width, double height) {
    const double l = std::clamp(b.x, 0.0, width);
    const double t = std::clamp(b.y, 0.0, height);
    const double r = std::clamp(b.right(), 0.0, width);
    const double btm = std::clamp(b.bottom(), 0.0, height);
    return box_from_edges(l, t, r, btm);
}

inline bool within_extent(const BoundingBox& b, double width, double height) {
    return b.x >= 0.0 && b.y >= 0.0 && b.right() <= width && b.bottom() <= height;
}

} // namespace vgold
