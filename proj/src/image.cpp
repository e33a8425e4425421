#include "pseudocam/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "pseudocam/error.hpp"

namespace pseudocam {

namespace {

class HeaderReader {
 public:
  HeaderReader(const std::vector<unsigned char>& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  long next_int() {
    skip_space_and_comments();
    long value = 0;
    bool any = false;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000) throw IoError(path_ + ": header value too large");
      ++pos_;
      any = true;
    }
    if (!any) throw IoError(path_ + ": malformed PNM header");
    return value;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 2 || bytes[0] != 'P') throw IoError(path.string() + ": not a PNM file");
  const char kind = static_cast<char>(bytes[1]);
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6') {
    throw IoError(path.string() + ": unsupported PNM variant P" + std::string(1, kind));
  }
  const std::size_t channels = (kind == '3' || kind == '6') ? 3 : 1;
  const bool raw = kind == '5' || kind == '6';

  HeaderReader header(bytes, path.string());
  header.advance(2);
  const long width = header.next_int();
  const long height = header.next_int();
  const long maxval = header.next_int();
  if (width <= 0 || height <= 0) throw IoError(path.string() + ": empty image");
  if (maxval <= 0 || maxval > 255) throw IoError(path.string() + ": only 8-bit images are supported");

  const std::size_t w = static_cast<std::size_t>(width), h = static_cast<std::size_t>(height);
  const std::size_t count = w * h * channels;
  std::vector<long> samples;
  samples.reserve(count);
  if (raw) {
    const std::size_t start = header.pos() + 1;  // single whitespace after maxval
    if (bytes.size() < start + count) throw IoError(path.string() + ": truncated pixel data");
    for (std::size_t i = 0; i < count; ++i) samples.push_back(bytes[start + i]);
  } else {
    for (std::size_t i = 0; i < count; ++i) samples.push_back(header.next_int());
  }

  Tensor patch({channels, h, w});
  const double scale = static_cast<double>(maxval);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        const long s = samples[(y * w + x) * channels + c];
        if (s > maxval) throw IoError(path.string() + ": sample exceeds maxval");
        patch[(c * h + y) * w + x] = static_cast<double>(s) / scale;
      }
    }
  }
  return patch;
}

void write_pnm(const std::filesystem::path& path, const Tensor& patch, std::string_view comment) {
  if (patch.rank() != 3 || (patch.dim(0) != 1 && patch.dim(0) != 3)) {
    throw ShapeError("write_pnm needs a [1|3, H, W] patch, got " + to_string(patch.shape()));
  }
  const std::size_t c_count = patch.dim(0), h = patch.dim(1), w = patch.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << (c_count == 3 ? "P6" : "P5") << '\n';
  if (!comment.empty()) out << "# " << comment << '\n';
  out << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> data(h * w * c_count);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < c_count; ++c) {
        const double v = std::clamp(patch[(c * h + y) * w + x], 0.0, 1.0);
        data[(y * w + x) * c_count + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

void quantize_8bit(Tensor& patch) {
  for (double& v : patch.values()) {
    v = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;
  }
}

}  // namespace pseudocam
