#include "iat/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <thread>

namespace iat {

Tensor crop_resize(const Image8& frame, double center_x, double center_y, double side, int out_size) {
    check_contract(frame.h > 0 && frame.w > 0, "crop_resize: empty frame");
    check_contract(side > 0.0 && out_size > 0, "crop_resize: bad crop geometry");
    Tensor out({3, out_size, out_size});
    double left = center_x - 0.5 * side;
    double top = center_y - 0.5 * side;
    double step = side / out_size;
    for (int v = 0; v < out_size; ++v) {
        double sy = top + (v + 0.5) * step - 0.5;  // sample in pixel-center coords
        double fy = std::clamp(sy, 0.0, static_cast<double>(frame.h - 1));
        int iy = std::min(static_cast<int>(std::floor(fy)), std::max(0, frame.h - 2));
        double ty = frame.h > 1 ? fy - iy : 0.0;
        for (int u = 0; u < out_size; ++u) {
            double sx = left + (u + 0.5) * step - 0.5;
            double fx = std::clamp(sx, 0.0, static_cast<double>(frame.w - 1));
            int ix = std::min(static_cast<int>(std::floor(fx)), std::max(0, frame.w - 2));
            double tx = frame.w > 1 ? fx - ix : 0.0;
            const uint8_t* p00 = frame.px(iy, ix);
            const uint8_t* p01 = frame.px(iy, std::min(ix + 1, frame.w - 1));
            const uint8_t* p10 = frame.px(std::min(iy + 1, frame.h - 1), ix);
            const uint8_t* p11 = frame.px(std::min(iy + 1, frame.h - 1), std::min(ix + 1, frame.w - 1));
            for (int c = 0; c < 3; ++c) {
                double val = (1 - ty) * ((1 - tx) * p00[c] + tx * p01[c]) +
                             ty * ((1 - tx) * p10[c] + tx * p11[c]);
                out.at(c, v, u) = val / 255.0;
            }
        }
    }
    return out;
}

Box box_to_crop(const Box& box, double center_x, double center_y, double side, int out_size) {
    double s = out_size / side;
    double left = center_x - 0.5 * side;
    double top = center_y - 0.5 * side;
    return Box{(box.cx - left) * s, (box.cy - top) * s, box.w * s, box.h * s};
}

Box box_from_crop(const Box& box_in_crop, double center_x, double center_y, double side, int out_size) {
    double s = side / out_size;
    double left = center_x - 0.5 * side;
    double top = center_y - 0.5 * side;
    return Box{left + box_in_crop.cx * s, top + box_in_crop.cy * s, box_in_crop.w * s, box_in_crop.h * s};
}

Tensor hflip(const Tensor& img) {
    check_contract(img.ndim() == 3, "hflip: expects [C,H,W]");
    int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(ch, y, x) = img.at(ch, y, w - 1 - x);
    return out;
}

Tensor shift(const Tensor& img, int dx, int dy) {
    check_contract(img.ndim() == 3, "shift: expects [C,H,W]");
    int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int sy = std::clamp(y - dy, 0, h - 1);
                int sx = std::clamp(x - dx, 0, w - 1);
                out.at(ch, y, x) = img.at(ch, sy, sx);
            }
    return out;
}

Tensor box_blur3(const Tensor& img) {
    check_contract(img.ndim() == 3, "box_blur3: expects [C,H,W]");
    int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int ky = -1; ky <= 1; ++ky)
                    for (int kx = -1; kx <= 1; ++kx)
                        s += img.at(ch, std::clamp(y + ky, 0, h - 1), std::clamp(x + kx, 0, w - 1));
                out.at(ch, y, x) = s / 9.0;
            }
    return out;
}

void write_png(const std::string& path, const Image8& img) {
    check_contract(img.h > 0 && img.w > 0, "write_png: empty image");
    cv::Mat bgr(img.h, img.w, CV_8UC3);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const uint8_t* p = img.px(y, x);
            bgr.at<cv::Vec3b>(y, x) = cv::Vec3b(p[2], p[1], p[0]);
        }
    std::vector<int> opts = {cv::IMWRITE_PNG_COMPRESSION, 3};
    if (!cv::imwrite(path, bgr, opts)) throw IoError("write_png: failed to write " + path);
}

Image8 read_png(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw IoError("read_png: failed to read " + path);
    Image8 img(bgr.rows, bgr.cols);
    for (int y = 0; y < bgr.rows; ++y)
        for (int x = 0; x < bgr.cols; ++x) {
            cv::Vec3b v = bgr.at<cv::Vec3b>(y, x);
            uint8_t* p = img.px(y, x);
            p[0] = v[2];
            p[1] = v[1];
            p[2] = v[0];
        }
    return img;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    int nw = std::min(threads, n);
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(nw));
    for (int t = 0; t < nw; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!err) err = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace iat
