#include "aemeter/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace aemeter {

namespace fs = std::filesystem;

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void png_flush_noop(png_structp) {}

struct ReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void png_read_from_vector(png_structp png, png_bytep data, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + len > cur->bytes->size()) png_error(png, "truncated PNG stream");
  std::memcpy(data, cur->bytes->data() + cur->pos, len);
  cur->pos += len;
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

ImagePlane quantize8(const ImagePlane& img) {
  ImagePlane out = img;
  for (double& v : out.values) v = to_byte(v) / 255.0;
  return out;
}

std::vector<std::uint8_t> encode_png(const ImagePlane& img) {
  if (img.space != ColorSpace::Encoded) throw std::invalid_argument("png: only encoded images are written");
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 3);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  if (!png) throw std::runtime_error("png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  // libpng reports errors by longjmp; every C++ object is constructed above.
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: encode failed");
  }
  {
    png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(x) * 3 + c] = to_byte(img.at(c, y, x));
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

ImagePlane decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw std::runtime_error("png: bad signature");
  ReadCursor cur{&bytes, 0};
  std::vector<std::uint8_t> raster;
  std::size_t rowbytes = 0;
  int w = 0, h = 0, channels = 0;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  if (!png) throw std::runtime_error("png: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: decode failed (corrupt or truncated stream)");
  }
  png_set_read_fn(png, &cur, png_read_from_vector);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  channels = png_get_channels(png, info);
  rowbytes = png_get_rowbytes(png, info);
  raster.resize(rowbytes * static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) png_read_row(png, raster.data() + rowbytes * y, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (channels != 3) throw std::runtime_error("png: unsupported channel layout");
  ImagePlane img(w, h, ColorSpace::Encoded);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = raster[rowbytes * y + static_cast<std::size_t>(x) * 3 + c] / 255.0;
  return img;
}

std::vector<std::uint8_t> encode_ppm(const ImagePlane& img) {
  if (img.space != ColorSpace::Encoded) throw std::invalid_argument("ppm: only encoded images are written");
  std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.pixels() * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.push_back(to_byte(img.at(c, y, x)));
  return out;
}

ImagePlane decode_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_ws();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw std::runtime_error("ppm: malformed header");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw std::runtime_error("ppm: not a binary P6 file");
  pos = 2;
  const long w = read_int();
  const long h = read_int();
  const long maxval = read_int();
  if (w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error("ppm: unsupported dimensions or maxval");
  ++pos;  // single whitespace before raster
  const std::size_t need = static_cast<std::size_t>(w * h * 3);
  if (bytes.size() < pos + need) throw std::runtime_error("ppm: truncated raster");
  ImagePlane img(static_cast<int>(w), static_cast<int>(h), ColorSpace::Encoded);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = bytes[pos++] / 255.0;
  return img;
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ImagePlane read_png(const fs::path& path) { return decode_png(read_file_bytes(path)); }
ImagePlane read_ppm(const fs::path& path) { return decode_ppm(read_file_bytes(path)); }

ImagePlane read_image(const fs::path& path) {
  const std::string e = lower_ext(path);
  if (e == ".png") return read_png(path);
  if (e == ".ppm") return read_ppm(path);
  throw std::invalid_argument("unsupported image extension: " + path.string());
}

void write_png(const ImagePlane& img, const fs::path& path) { write_file_atomic(path, encode_png(img)); }
void write_ppm(const ImagePlane& img, const fs::path& path) { write_file_atomic(path, encode_ppm(img)); }

void write_image(const ImagePlane& img, const fs::path& path) {
  const std::string e = lower_ext(path);
  if (e == ".png") return write_png(img, path);
  if (e == ".ppm") return write_ppm(img, path);
  throw std::invalid_argument("unsupported image extension: " + path.string());
}

void write_file_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  write_file_atomic(path, std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
}

}  // namespace aemeter
