#include "csvt/io.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace csvt {

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

uint32_t get_be32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
  put_be32(out, uint32_t(data.size()));
  const size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + type_at, uInt(4 + data.size()));
  put_be32(out, crc);
}

std::vector<uint8_t> zlib_inflate(const uint8_t* data, size_t size, size_t expected) {
  std::vector<uint8_t> out(expected);
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw std::runtime_error("png: inflateInit failed");
  zs.next_in = const_cast<Bytef*>(data);
  zs.avail_in = uInt(size);
  zs.next_out = out.data();
  zs.avail_out = uInt(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.avail_out != 0) throw std::runtime_error("png: corrupt compressed stream");
  return out;
}

std::vector<uint8_t> zlib_deflate(const uint8_t* data, size_t size) {
  uLongf bound = compressBound(uLong(size));
  std::vector<uint8_t> out(bound);
  if (compress2(out.data(), &bound, data, uLong(size), 6) != Z_OK)
    throw std::runtime_error("png: deflate failed");
  out.resize(bound);
  return out;
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

// PPM/PGM token reader skipping whitespace and # comments.
struct PnmReader {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;
  explicit PnmReader(const std::vector<uint8_t>& b) : buf(b) {}
  std::string token() {
    while (pos < buf.size()) {
      if (std::isspace(buf[pos])) {
        ++pos;
      } else if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < buf.size() && !std::isspace(buf[pos])) t.push_back(char(buf[pos++]));
    return t;
  }
};

}  // namespace

void write_file_atomic(const std::string& path, const void* data, size_t size) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(static_cast<const char*>(data), std::streamsize(size));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  fs::rename(tmp, target);
}

void write_text_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

RawImage read_ppm(const std::string& path) {
  const auto buf = read_file(path);
  PnmReader rd(buf);
  if (rd.token() != "P6") throw std::runtime_error("ppm: not a binary P6 file: " + path);
  RawImage img;
  img.width = std::stoi(rd.token());
  img.height = std::stoi(rd.token());
  const int maxval = std::stoi(rd.token());
  if (maxval != 255) throw std::runtime_error("ppm: only maxval 255 supported: " + path);
  if (img.width <= 0 || img.height <= 0) throw std::runtime_error("ppm: bad dimensions: " + path);
  ++rd.pos;  // single whitespace after maxval
  img.channels = 3;
  const size_t need = size_t(img.width) * img.height * 3;
  if (buf.size() - rd.pos < need) throw std::runtime_error("ppm: truncated pixel data: " + path);
  img.bytes.assign(buf.begin() + std::ptrdiff_t(rd.pos), buf.begin() + std::ptrdiff_t(rd.pos + need));
  return img;
}

void write_ppm(const std::string& path, const RawImage& img) {
  if (img.channels != 3) throw std::invalid_argument("ppm: rgb images only");
  char header[64];
  const int n = std::snprintf(header, sizeof header, "P6\n%d %d\n255\n", img.width, img.height);
  std::vector<uint8_t> out(header, header + n);
  out.insert(out.end(), img.bytes.begin(), img.bytes.end());
  write_file_atomic(path, out.data(), out.size());
}

void write_pgm(const std::string& path, int width, int height, const std::vector<uint8_t>& gray) {
  if (gray.size() != size_t(width) * height) throw std::invalid_argument("pgm: size mismatch");
  char header[64];
  const int n = std::snprintf(header, sizeof header, "P5\n%d %d\n255\n", width, height);
  std::vector<uint8_t> out(header, header + n);
  out.insert(out.end(), gray.begin(), gray.end());
  write_file_atomic(path, out.data(), out.size());
}

RawImage read_png(const std::string& path) {
  const auto buf = read_file(path);
  static const uint8_t kSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (buf.size() < 8 || std::memcmp(buf.data(), kSig, 8) != 0)
    throw std::runtime_error("png: bad signature: " + path);

  RawImage img;
  int bit_depth = 0, color_type = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  bool done = false;
  while (pos + 12 <= buf.size() && !done) {
    const uint32_t len = get_be32(buf.data() + pos);
    if (pos + 12 + len > buf.size()) throw std::runtime_error("png: truncated chunk: " + path);
    const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
    const uint8_t* data = buf.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw std::runtime_error("png: bad IHDR");
      img.width = int(get_be32(data));
      img.height = int(get_be32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      if (data[10] != 0 || data[11] != 0) throw std::runtime_error("png: unsupported compression/filter method");
      if (data[12] != 0) throw std::runtime_error("png: interlaced images not supported");
      if (bit_depth != 8 || (color_type != 2 && color_type != 6))
        throw std::runtime_error("png: only 8-bit RGB/RGBA supported: " + path);
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      done = true;
    }
    pos += 12 + len;
  }
  if (img.width <= 0 || img.height <= 0 || idat.empty()) throw std::runtime_error("png: missing image data: " + path);

  img.channels = color_type == 2 ? 3 : 4;
  const int bpp = img.channels;
  const size_t stride = size_t(img.width) * bpp;
  const size_t raw_size = (stride + 1) * img.height;
  const auto raw = zlib_inflate(idat.data(), idat.size(), raw_size);

  img.bytes.resize(stride * img.height);
  std::vector<uint8_t> prev(stride, 0);
  for (int y = 0; y < img.height; ++y) {
    const uint8_t filter = raw[size_t(y) * (stride + 1)];
    const uint8_t* src = raw.data() + size_t(y) * (stride + 1) + 1;
    uint8_t* dst = img.bytes.data() + size_t(y) * stride;
    for (size_t x = 0; x < stride; ++x) {
      const int a = x >= size_t(bpp) ? dst[x - bpp] : 0;
      const int b = prev[x];
      const int c = x >= size_t(bpp) ? prev[x - bpp] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw std::runtime_error("png: unknown filter type");
      }
      dst[x] = uint8_t(v);
    }
    std::memcpy(prev.data(), dst, stride);
  }
  return img;
}

void write_png(const std::string& path, const RawImage& img) {
  if (img.channels != 3 && img.channels != 4) throw std::invalid_argument("png: rgb or rgba images only");
  std::vector<uint8_t> out = {137, 80, 78, 71, 13, 10, 26, 10};

  std::vector<uint8_t> ihdr;
  put_be32(ihdr, uint32_t(img.width));
  put_be32(ihdr, uint32_t(img.height));
  ihdr.push_back(8);
  ihdr.push_back(img.channels == 3 ? 2 : 6);
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(out, "IHDR", ihdr);

  const size_t stride = size_t(img.width) * img.channels;
  std::vector<uint8_t> raw((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw[size_t(y) * (stride + 1)] = 0;  // filter: none
    std::memcpy(raw.data() + size_t(y) * (stride + 1) + 1, img.bytes.data() + size_t(y) * stride, stride);
  }
  append_chunk(out, "IDAT", zlib_deflate(raw.data(), raw.size()));
  append_chunk(out, "IEND", {});
  write_file_atomic(path, out.data(), out.size());
}

RawImage read_image(const std::string& path) {
  const auto dot = path.find_last_of('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".ppm") return read_ppm(path);
  if (ext == ".png") return read_png(path);
  throw std::runtime_error("read_image: unsupported extension (need .ppm or .png): " + path);
}

void write_image(const std::string& path, const RawImage& img) {
  const auto dot = path.find_last_of('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".ppm") return write_ppm(path, img);
  if (ext == ".png") return write_png(path, img);
  throw std::runtime_error("write_image: unsupported extension (need .ppm or .png): " + path);
}

}  // namespace csvt
