#include "plroad/image_io.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <string>

#include "plroad/checkpoint.hpp"
#include "plroad/errors.hpp"

namespace plroad {

namespace {

class HeaderParser {
 public:
  HeaderParser(const std::vector<std::uint8_t>& bytes, const std::string& origin)
      : bytes_(bytes), origin_(origin) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw IoError(origin_ + ": " + msg + " at byte offset " + std::to_string(pos_));
  }

  std::string magic() {
    if (bytes_.size() < 2) fail("truncated header");
    std::string m{static_cast<char>(bytes_[0]), static_cast<char>(bytes_[1])};
    pos_ = 2;
    return m;
  }

  void skip_space() {
    while (pos_ < bytes_.size()) {
      const char c = static_cast<char>(bytes_[pos_]);
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string token() {
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) ++pos_;
    if (start == pos_) fail("truncated header");
    return std::string(bytes_.begin() + static_cast<long>(start), bytes_.begin() + static_cast<long>(pos_));
  }

  std::size_t positive_int(const char* what) {
    const auto t = token();
    std::size_t value = 0;
    for (char c : t) {
      if (!std::isdigit(static_cast<unsigned char>(c)) || value > 1'000'000) {
        fail(std::string("invalid ") + what + " '" + t + "'");
      }
      value = value * 10 + static_cast<std::size_t>(c - '0');
    }
    if (value == 0) fail(std::string("zero ") + what);
    return value;
  }

  // Exactly one whitespace byte separates the header from the raster.
  void end_header() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("missing header terminator");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }
  void require_payload(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      fail("truncated raster: need " + std::to_string(n) + " bytes, have " +
           std::to_string(bytes_.size() - pos_));
    }
    if (bytes_.size() - pos_ > n) fail("trailing bytes after raster");
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  const std::string& origin_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> encode_netpbm(const char* magic, const ByteImage& image, std::size_t channels) {
  if (image.channels != channels || image.data.size() != image.width * image.height * channels) {
    throw ConfigError(std::string("netpbm ") + magic + ": inconsistent image buffer");
  }
  const std::string header = std::string(magic) + "\n" + std::to_string(image.width) + " " +
                             std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.data.begin(), image.data.end());
  return out;
}

ByteImage decode_netpbm(const std::vector<std::uint8_t>& bytes, const std::string& origin,
                        const char* magic, std::size_t channels) {
  HeaderParser p(bytes, origin);
  if (p.magic() != magic) p.fail(std::string("bad magic (expected ") + magic + ")");
  ByteImage img;
  img.channels = channels;
  img.width = p.positive_int("width");
  img.height = p.positive_int("height");
  if (p.positive_int("maxval") != 255) p.fail("maxval must be 255");
  p.end_header();
  const std::size_t n = img.width * img.height * channels;
  p.require_payload(n);
  img.data.assign(bytes.begin() + static_cast<long>(p.pos()), bytes.end());
  return img;
}

}  // namespace

std::vector<std::uint8_t> encode_ppm(const ByteImage& image) { return encode_netpbm("P6", image, 3); }
std::vector<std::uint8_t> encode_pgm(const ByteImage& image) { return encode_netpbm("P5", image, 1); }

ByteImage decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  return decode_netpbm(bytes, origin, "P6", 3);
}

ByteImage decode_pgm(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  return decode_netpbm(bytes, origin, "P5", 1);
}

std::vector<std::uint8_t> encode_pfm(const FloatImage& image) {
  static_assert(std::endian::native == std::endian::little);
  if (image.data.size() != image.width * image.height) throw ConfigError("pfm: inconsistent image buffer");
  const std::string header =
      "Pf\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n-1.0\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.data.size() * 4);
  for (std::size_t r = image.height; r-- > 0;) {
    const auto* row = reinterpret_cast<const std::uint8_t*>(image.data.data() + r * image.width);
    out.insert(out.end(), row, row + image.width * 4);
  }
  return out;
}

FloatImage decode_pfm(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  HeaderParser p(bytes, origin);
  if (p.magic() != "Pf") p.fail("bad magic (expected grayscale Pf)");
  FloatImage img;
  img.width = p.positive_int("width");
  img.height = p.positive_int("height");
  const auto scale_text = p.token();
  double scale = 0.0;
  try {
    scale = std::stod(scale_text);
  } catch (const std::exception&) {
    p.fail("invalid scale '" + scale_text + "'");
  }
  if (!(scale < 0.0)) p.fail("only little-endian PFM (negative scale) is supported");
  p.end_header();
  p.require_payload(img.width * img.height * 4);
  img.data.resize(img.width * img.height);
  const std::uint8_t* src = bytes.data() + p.pos();
  for (std::size_t r = img.height; r-- > 0;) {
    std::memcpy(img.data.data() + r * img.width, src, img.width * 4);
    src += img.width * 4;
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const ByteImage& image) {
  write_file_atomic(path, encode_ppm(image));
}
void write_pgm(const std::filesystem::path& path, const ByteImage& image) {
  write_file_atomic(path, encode_pgm(image));
}
void write_pfm(const std::filesystem::path& path, const FloatImage& image) {
  write_file_atomic(path, encode_pfm(image));
}
ByteImage read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file_bytes(path), path.string()); }
ByteImage read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file_bytes(path), path.string()); }
FloatImage read_pfm(const std::filesystem::path& path) { return decode_pfm(read_file_bytes(path), path.string()); }

}  // namespace plroad
