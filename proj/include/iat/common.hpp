#ifndef IAT_COMMON_HPP_
#define IAT_COMMON_HPP_

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace iat {

// Error taxonomy shared by all modules. Callers catch by category; the
// message carries the offending entity (video id, candidate index, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

inline void check_contract(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}
inline void check_config(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

// Axis-aligned box, center-size convention (cx, cy, w, h), pixel units
// unless a function says otherwise.
struct Box {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    double x0() const { return cx - 0.5 * w; }
    double y0() const { return cy - 0.5 * h; }
    double x1() const { return cx + 0.5 * w; }
    double y1() const { return cy + 0.5 * h; }
    double area() const { return w * h; }

    static Box from_corners(double x0, double y0, double x1, double y1) {
        return Box{0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
    }
    static Box from_xywh(double x, double y, double w, double h) {
        return Box{x + 0.5 * w, y + 0.5 * h, w, h};
    }

    Box scaled(double s) const { return Box{cx * s, cy * s, w * s, h * s}; }

    // Clips the box to [0,W]x[0,H], keeping a positive extent.
    Box clipped(double width, double height, double min_size = 1.0) const {
        double nx0 = std::clamp(x0(), 0.0, width - min_size);
        double ny0 = std::clamp(y0(), 0.0, height - min_size);
        double nx1 = std::clamp(x1(), nx0 + min_size, width);
        double ny1 = std::clamp(y1(), ny0 + min_size, height);
        return from_corners(nx0, ny0, nx1, ny1);
    }

    bool inside(double width, double height) const {
        return x0() >= 0.0 && y0() >= 0.0 && x1() <= width && y1() <= height && w > 0.0 && h > 0.0;
    }
};

inline bool operator==(const Box& a, const Box& b) {
    return a.cx == b.cx && a.cy == b.cy && a.w == b.w && a.h == b.h;
}

}  // namespace iat

#endif  // IAT_COMMON_HPP_
