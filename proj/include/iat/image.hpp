#ifndef IAT_IMAGE_HPP_
#define IAT_IMAGE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "iat/common.hpp"
#include "iat/tensor.hpp"

namespace iat {

// 8-bit RGB frame. Generated frames are quantized to this grid so that the
// PNG round trip is bit-exact.
struct Image8 {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> rgb;  // h*w*3, row-major, RGB

    Image8() = default;
    Image8(int height, int width) : h(height), w(width), rgb(static_cast<size_t>(height) * width * 3, 0) {}

    uint8_t* px(int y, int x) { return rgb.data() + (static_cast<size_t>(y) * w + x) * 3; }
    const uint8_t* px(int y, int x) const { return rgb.data() + (static_cast<size_t>(y) * w + x) * 3; }
};

inline bool operator==(const Image8& a, const Image8& b) {
    return a.h == b.h && a.w == b.w && a.rgb == b.rgb;
}

// Bilinear crop of a square window (center, side in image pixels) resized
// to out_size x out_size, returned as [3, out_size, out_size] in [0,1].
// Samples outside the frame replicate the nearest edge pixel.
Tensor crop_resize(const Image8& frame, double center_x, double center_y, double side, int out_size);

// Maps an image-space box into the crop's pixel coordinates.
Box box_to_crop(const Box& box, double center_x, double center_y, double side, int out_size);
// Inverse of box_to_crop.
Box box_from_crop(const Box& box_in_crop, double center_x, double center_y, double side, int out_size);

// Tensor-image ([3,S,S]) transforms used for online target-model augmentation.
Tensor hflip(const Tensor& img);
Tensor shift(const Tensor& img, int dx, int dy);  // edge replicate
Tensor box_blur3(const Tensor& img);

// PNG I/O (lossless, deterministic encoder settings).
void write_png(const std::string& path, const Image8& img);
Image8 read_png(const std::string& path);

// Deterministic parallel map: runs fn(0..n-1) on up to `threads` workers.
// Results ordering / reductions are the caller's job.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace iat

#endif  // IAT_IMAGE_HPP_
