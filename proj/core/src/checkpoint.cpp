#include "csvt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "csvt/io.hpp"

namespace csvt {

namespace {

void put_le_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  out.push_back(char(bits & 0xff));
  out.push_back(char((bits >> 8) & 0xff));
  out.push_back(char((bits >> 16) & 0xff));
  out.push_back(char((bits >> 24) & 0xff));
}

float get_le_f32(const char* p) {
  const auto b = reinterpret_cast<const unsigned char*>(p);
  const uint32_t bits = uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::string shape_token(const Shape& s) {
  std::string t;
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) t += 'x';
    t += std::to_string(s[i]);
  }
  return t.empty() ? "1" : t;
}

Shape parse_shape_token(const std::string& t) {
  Shape s;
  size_t pos = 0;
  while (pos < t.size()) {
    size_t next = t.find('x', pos);
    if (next == std::string::npos) next = t.size();
    s.push_back(std::stoi(t.substr(pos, next - pos)));
    pos = next + 1;
  }
  return s;
}

}  // namespace

void save_checkpoint_blobs(const std::string& path, const std::vector<TensorBlob>& blobs) {
  std::string manifest = "CSVT1\n";
  uint64_t offset = 0;
  for (const auto& b : blobs) {
    if (b.name.find(' ') != std::string::npos || b.name.empty())
      throw std::invalid_argument("checkpoint: tensor name must be non-empty and space-free: '" + b.name + "'");
    if (shape_numel(b.shape) != b.f32.size())
      throw std::invalid_argument("checkpoint: shape/payload mismatch for " + b.name);
    const uint64_t length = uint64_t(b.f32.size()) * 4;
    manifest += b.name + " f32 " + shape_token(b.shape) + " " + std::to_string(offset) + " " +
                std::to_string(length) + "\n";
    offset += length;
  }
  manifest += "\n";

  std::string payload;
  payload.reserve(offset);
  for (const auto& b : blobs)
    for (float v : b.f32) put_le_f32(payload, v);

  std::string out = manifest + payload;
  write_file_atomic(path, out.data(), out.size());
}

std::vector<TensorBlob> load_checkpoint_blobs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  size_t pos = contents.find('\n');
  if (pos == std::string::npos || contents.substr(0, pos) != "CSVT1")
    throw std::runtime_error("checkpoint " + path + ": missing CSVT1 magic");
  ++pos;

  struct Rec {
    std::string name;
    Shape shape;
    uint64_t offset, length;
  };
  std::vector<Rec> recs;
  while (pos < contents.size()) {
    const size_t eol = contents.find('\n', pos);
    if (eol == std::string::npos) throw std::runtime_error("checkpoint " + path + ": truncated manifest");
    const std::string line = contents.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) break;  // blank separator
    std::istringstream ls(line);
    std::string name, dtype, shape_tok;
    uint64_t off = 0, len = 0;
    if (!(ls >> name >> dtype >> shape_tok >> off >> len))
      throw std::runtime_error("checkpoint " + path + ": bad manifest line: " + line);
    if (dtype != "f32") throw std::runtime_error("checkpoint " + path + ": unsupported dtype " + dtype);
    recs.push_back({name, parse_shape_token(shape_tok), off, len});
  }

  const size_t payload_start = pos;
  std::vector<TensorBlob> blobs;
  blobs.reserve(recs.size());
  for (const auto& r : recs) {
    const size_t numel = shape_numel(r.shape);
    if (r.length != numel * 4)
      throw std::runtime_error("checkpoint " + path + ": length/shape mismatch for " + r.name);
    if (payload_start + r.offset + r.length > contents.size())
      throw std::runtime_error("checkpoint " + path + ": payload out of range for " + r.name);
    TensorBlob b;
    b.name = r.name;
    b.shape = r.shape;
    b.f32.resize(numel);
    const char* src = contents.data() + payload_start + r.offset;
    for (size_t i = 0; i < numel; ++i) b.f32[i] = get_le_f32(src + i * 4);
    blobs.push_back(std::move(b));
  }
  return blobs;
}

}  // namespace csvt
