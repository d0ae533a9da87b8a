#include "mcc/imageio.hpp"

#include <zlib.h>

#include <cctype>
#include <fstream>
#include <stdexcept>

#include "mcc/dataset.hpp"

namespace mcc {

namespace {

void put_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

void append_chunk(std::string& out, const char type[4], const std::string& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  const auto crc = crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

std::string zlib_compress(const std::string& raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::string out(bound, '\0');
  const int rc = compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                           reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                           Z_BEST_COMPRESSION);
  if (rc != Z_OK) throw std::runtime_error("write_png: zlib compression failed");
  out.resize(bound);
  return out;
}

void write_png(const std::string& path, int width, int height, int color_type,
               const std::vector<std::uint8_t>& pixels,
               const std::vector<std::array<std::uint8_t, 3>>* palette) {
  if (width < 1 || height < 1) throw std::invalid_argument("write_png: empty image");
  if (pixels.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("write_png: pixel buffer size mismatch");

  std::string raw;
  raw.reserve(static_cast<std::size_t>(height) * (width + 1));
  for (int y = 0; y < height; ++y) {
    raw.push_back('\0');  // filter type 0 (none)
    raw.append(reinterpret_cast<const char*>(pixels.data() + static_cast<std::size_t>(y) * width),
               static_cast<std::size_t>(width));
  }

  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(width));
  put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(static_cast<char>(color_type));
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace
  append_chunk(png, "IHDR", ihdr);
  if (palette) {
    std::string plte;
    for (const auto& e : *palette) {
      plte.push_back(static_cast<char>(e[0]));
      plte.push_back(static_cast<char>(e[1]));
      plte.push_back(static_cast<char>(e[2]));
    }
    append_chunk(png, "PLTE", plte);
  }
  append_chunk(png, "IDAT", zlib_compress(raw));
  append_chunk(png, "IEND", "");

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  f.write(png.data(), static_cast<std::streamsize>(png.size()));
  if (!f) throw std::runtime_error("write_png: short write to " + path);
}

}  // namespace

void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& pixels) {
  write_png(path, width, height, 0, pixels, nullptr);
}

void write_png_indexed(const std::string& path, int width, int height,
                       const std::vector<std::uint8_t>& indices,
                       const std::vector<std::array<std::uint8_t, 3>>& palette) {
  if (palette.empty() || palette.size() > 256)
    throw std::invalid_argument("write_png_indexed: palette must hold 1..256 entries");
  write_png(path, width, height, 3, indices, &palette);
}

std::vector<std::array<std::uint8_t, 3>> label_palette(int num_classes) {
  if (num_classes < 1 || num_classes > 6)
    throw std::invalid_argument("label_palette: class count out of range");
  std::vector<std::array<std::uint8_t, 3>> pal(256, {0, 0, 0});
  for (int c = 1; c <= num_classes; ++c) {
    double rgb[3];
    class_hue(c, rgb);
    for (int ch = 0; ch < 3; ++ch)
      pal[static_cast<std::size_t>(c)][static_cast<std::size_t>(ch)] =
          static_cast<std::uint8_t>(rgb[ch] * 255.0 + 0.5);
  }
  pal[255] = {255, 255, 255};
  return pal;
}

void write_ppm(const std::string& path, const RgbImage& img) {
  if (img.width < 1 || img.height < 1 ||
      img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3)
    throw std::invalid_argument("write_ppm: malformed image");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw std::runtime_error("write_ppm: short write to " + path);
}

RgbImage read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path);

  auto next_token = [&f, &path]() {
    std::string tok;
    while (true) {
      const int c = f.get();
      if (c == EOF) throw std::runtime_error("read_ppm: truncated header in " + path);
      if (c == '#') {  // comment to end of line
        while (f.good() && f.get() != '\n') {
        }
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
  };

  if (next_token() != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path);
  RgbImage img;
  img.width = std::stoi(next_token());
  img.height = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (img.width < 1 || img.height < 1) throw std::runtime_error("read_ppm: bad dimensions in " + path);
  if (maxval != 255) throw std::runtime_error("read_ppm: only maxval 255 supported: " + path);
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw std::runtime_error("read_ppm: truncated pixel data in " + path);
  return img;
}

}  // namespace mcc
