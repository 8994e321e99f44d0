#include <dip/exp/image_io.hpp>
#include <dip/io.hpp>

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <vector>

namespace dip::exp {

namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

std::vector<unsigned char> to_rgb8(const Image& image) {
  require(image.channels == 1 || image.channels == 3, "write_image: only 1 or 3 channels");
  require(image.values.size() == image.height * image.width * image.channels, "write_image: value count mismatch");
  std::vector<unsigned char> rgb(static_cast<std::size_t>(image.height * image.width * 3));
  for (Index p = 0; p < image.height * image.width; ++p)
    for (Index c = 0; c < 3; ++c) {
      const Index src = p * image.channels + (image.channels == 3 ? c : 0);
      rgb[static_cast<std::size_t>(p * 3 + c)] = static_cast<unsigned char>(value_to_pixel(image.values(src)));
    }
  return rgb;
}

Image from_rgb8(Index height, Index width, const unsigned char* rgb) {
  Image image{height, width, 3, VectorXd(height * width * 3)};
  for (Index i = 0; i < image.values.size(); ++i) image.values(i) = pixel_to_value(rgb[i]);
  return image;
}

Image read_png(const std::string& bytes, const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw InvalidParameter("read_image: " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> rgb(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, rgb.data(), 0, nullptr)) {
    const std::string message = img.message;
    png_image_free(&img);
    throw InvalidParameter("read_image: " + path.string() + ": " + message);
  }
  return from_rgb8(img.height, img.width, rgb.data());
}

std::string write_png(const Image& image) {
  const auto rgb = to_rgb8(image);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, rgb.data(), 0, nullptr))
    throw InvalidParameter(std::string("write_image: ") + img.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, rgb.data(), 0, nullptr))
    throw InvalidParameter(std::string("write_image: ") + img.message);
  out.resize(size);
  return out;
}

// Header tokens are whitespace separated; '#' starts a comment to end of line.
std::size_t next_token(const std::string& bytes, std::size_t pos, std::string& token) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  token.clear();
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) && bytes[pos] != '#')
    token += bytes[pos++];
  return pos;
}

Image read_ppm(const std::string& bytes, const std::filesystem::path& path) {
  auto fail = [&](const std::string& why) { return InvalidParameter("read_image: " + path.string() + ": " + why); };
  std::string magic, w, h, maxval;
  std::size_t pos = next_token(bytes, 0, magic);
  if (magic != "P6") throw fail("not a binary PPM (P6)");
  pos = next_token(bytes, pos, w);
  pos = next_token(bytes, pos, h);
  pos = next_token(bytes, pos, maxval);
  Index width = 0, height = 0;
  try {
    width = std::stol(w);
    height = std::stol(h);
    if (std::stol(maxval) != 255) throw fail("only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw fail("corrupt header");
  }
  if (width <= 0 || height <= 0) throw fail("corrupt header");
  ++pos;  // single whitespace byte before the raster
  const auto need = static_cast<std::size_t>(width * height * 3);
  if (pos + need > bytes.size()) throw fail("truncated raster");
  return from_rgb8(height, width, reinterpret_cast<const unsigned char*>(bytes.data() + pos));
}

std::string write_ppm(const Image& image) {
  const auto rgb = to_rgb8(image);
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(rgb.data()), rgb.size());
  return out;
}

}  // namespace

double pixel_to_value(unsigned pixel) { return static_cast<double>(pixel) / 127.5 - 1.0; }

unsigned value_to_pixel(double value) {
  const double v = std::clamp(std::isnan(value) ? -1.0 : value, -1.0, 1.0);
  return static_cast<unsigned>(std::round((v + 1.0) * 127.5));
}

Image read_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext != ".png" && ext != ".ppm") throw InvalidParameter("read_image: unsupported format '" + ext + "'");
  const std::string bytes = read_file(path);
  return ext == ".png" ? read_png(bytes, path) : read_ppm(bytes, path);
}

void write_image(const Image& image, const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png")
    atomic_write(path, write_png(image));
  else if (ext == ".ppm")
    atomic_write(path, write_ppm(image));
  else
    throw InvalidParameter("write_image: unsupported format '" + ext + "'");
}

}  // namespace dip::exp
