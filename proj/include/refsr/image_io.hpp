#ifndef REFSR_IMAGE_IO_HPP_
#define REFSR_IMAGE_IO_HPP_

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "refsr/binary_io.hpp"
#include "refsr/error.hpp"
#include "refsr/image.hpp"

namespace refsr {

// Interleaved 8-bit raster with 1 (gray) or 3 (RGB) channels.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;
};

namespace detail {

inline std::uint8_t to_u8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline std::string lower_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

inline int pnm_read_int(std::istream& is) {
  int c = is.peek();
  while (c != EOF) {
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
    c = is.peek();
  }
  int v = -1;
  if (!(is >> v) || v < 0) throw FormatError("PNM: malformed header");
  return v;
}

inline Image8 read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[2];
  is.read(magic, 2);
  if (is.gcount() != 2 || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw FormatError("PNM: only binary P5/P6 supported: " + path.string());
  Image8 img;
  img.channels = magic[1] == '5' ? 1 : 3;
  img.width = pnm_read_int(is);
  img.height = pnm_read_int(is);
  const int maxval = pnm_read_int(is);
  if (img.width < 1 || img.height < 1 || maxval != 255)
    throw FormatError("PNM: unsupported dimensions or maxval: " + path.string());
  is.get();  // single whitespace after maxval
  img.data.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  is.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (is.gcount() != static_cast<std::streamsize>(img.data.size()))
    throw FormatError("PNM: truncated pixel data: " + path.string());
  return img;
}

inline void write_pnm(const std::filesystem::path& path, const Image8& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

inline Image8 read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw FormatError("PNG: " + std::string(image.message) + ": " + path.string());
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 img;
  img.width = static_cast<int>(image.width);
  img.height = static_cast<int>(image.height);
  img.channels = color ? 3 : 1;
  img.data.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.data.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("PNG: " + msg + ": " + path.string());
  }
  return img;
}

inline void write_png(const std::filesystem::path& path, const Image8& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.data.data(), 0, nullptr))
    throw IoError("PNG: " + std::string(image.message) + ": " + path.string());
}

}  // namespace detail

// Dispatches on file content: PNG signature or P5/P6 header.
inline Image8 read_image8(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open " + path.string());
  unsigned char sig[8] = {};
  probe.read(reinterpret_cast<char*>(sig), 8);
  probe.close();
  if (sig[0] == 0x89 && sig[1] == 'P' && sig[2] == 'N' && sig[3] == 'G') return detail::read_png(path);
  if (sig[0] == 'P' && (sig[1] == '5' || sig[1] == '6')) return detail::read_pnm(path);
  throw FormatError("unrecognized image format: " + path.string());
}

// Format chosen by extension: .pgm/.ppm/.pnm write binary PNM, anything else PNG.
inline void write_image8(const std::filesystem::path& path, const Image8& img) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")
    detail::write_pnm(path, img);
  else
    detail::write_png(path, img);
}

inline ImagePlane plane_from8(const Image8& img, int channel) {
  ImagePlane p(img.width, img.height);
  auto s = p.samples();
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = img.data[i * img.channels + channel] / 255.0f;
  return p;
}

inline ColorImage color_from8(const Image8& img) {
  if (img.channels == 1) {
    ImagePlane g = plane_from8(img, 0);
    return {{g, g, g}, ColorSpace::rgb};
  }
  return {{plane_from8(img, 0), plane_from8(img, 1), plane_from8(img, 2)}, ColorSpace::rgb};
}

// Gray images load directly; RGB images are reduced to BT.601 luma.
inline ImagePlane read_luma(const std::filesystem::path& path) {
  const Image8 img = read_image8(path);
  if (img.channels == 1) return plane_from8(img, 0);
  return to_luma_chroma(color_from8(img)).planes[0];
}

inline ColorImage read_color(const std::filesystem::path& path) {
  return color_from8(read_image8(path));
}

inline void write_plane(const std::filesystem::path& path, const ImagePlane& plane) {
  Image8 img{plane.width(), plane.height(), 1, std::vector<std::uint8_t>(plane.size())};
  auto s = plane.samples();
  for (std::size_t i = 0; i < s.size(); ++i) img.data[i] = detail::to_u8(s[i]);
  write_image8(path, img);
}

inline void write_color(const std::filesystem::path& path, const ColorImage& image) {
  const ColorImage rgb = image.space == ColorSpace::rgb ? image : to_rgb(image);
  Image8 img{rgb.width(), rgb.height(), 3,
             std::vector<std::uint8_t>(rgb.planes[0].size() * 3)};
  for (int c = 0; c < 3; ++c) {
    auto s = rgb.planes[c].samples();
    for (std::size_t i = 0; i < s.size(); ++i) img.data[i * 3 + c] = detail::to_u8(s[i]);
  }
  write_image8(path, img);
}

// ---------------------------------------------------------------------------
// HF maps: "HFM1", u32 width, u32 height, u32 reserved, then f32 samples.

inline void write_hf_map(std::ostream& os, const ImagePlane& map) {
  binary::write_magic(os, "HFM1");
  binary::write_u32(os, static_cast<std::uint32_t>(map.width()));
  binary::write_u32(os, static_cast<std::uint32_t>(map.height()));
  binary::write_u32(os, 0);
  for (float v : map.samples()) binary::write_f32(os, v);
}

inline ImagePlane read_hf_map(std::istream& is) {
  binary::expect_magic(is, "HFM1", "HF map");
  const auto w = binary::read_u32(is, "HF map");
  const auto h = binary::read_u32(is, "HF map");
  binary::read_u32(is, "HF map");
  if (w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16))
    throw FormatError("HF map: invalid dimensions");
  std::vector<float> samples(static_cast<std::size_t>(w) * h);
  for (float& v : samples) v = binary::read_f32(is, "HF map");
  return ImagePlane(static_cast<int>(w), static_cast<int>(h), std::move(samples));
}

inline void save_hf_map(const std::filesystem::path& path, const ImagePlane& map) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  write_hf_map(os, map);
}

inline ImagePlane load_hf_map(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_hf_map(is);
}

}  // namespace refsr

#endif  // REFSR_IMAGE_IO_HPP_
