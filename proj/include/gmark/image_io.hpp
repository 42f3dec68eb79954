#pragma once

#include <string>
#include <vector>

#include "gmark/tensor.hpp"

namespace gmark {

// interleaved RGB, 8 bits per channel
struct Image {
    int width = 0;
    int height = 0;
    std::vector<unsigned char> pixels;

    static Image blank(int width, int height, unsigned char value = 0);
    unsigned char* at(int x, int y) { return pixels.data() + 3 * (static_cast<size_t>(y) * width + x); }
    const unsigned char* at(int x, int y) const {
        return pixels.data() + 3 * (static_cast<size_t>(y) * width + x);
    }
};

// format picked by magic bytes (PNG signature or PPM "P6")
Image read_image(const std::string& path);
// format picked by extension: .png or .ppm
void write_image(const Image& img, const std::string& path);

Image decode_png(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_png(const Image& img);
Image decode_ppm(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_ppm(const Image& img);

Image resize_bilinear(const Image& img, int out_width, int out_height);

// [3,H,W] float in [0,1] <-> RGB8
Tensor<float> image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor<float>& t);

}  // namespace gmark
