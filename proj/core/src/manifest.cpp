#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "csvt/config.hpp"
#include "csvt/data.hpp"
#include "csvt/io.hpp"

namespace csvt {

const std::array<std::string, 4>& label_names() {
  static const std::array<std::string, 4> names = {"Control", "Low", "Medium", "High"};
  return names;
}

int label_index(const std::string& name) {
  const auto& names = label_names();
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return int(i);
  throw std::invalid_argument("manifest: unknown label '" + name + "' (Control, Low, Medium, High)");
}

std::string directory_of(const std::string& path) {
  const auto p = std::filesystem::path(path).parent_path();
  return p.empty() ? "." : p.string();
}

std::string resolve_data_path(const std::string& manifest_dir, const std::string& rel) {
  if (std::filesystem::path(rel).is_absolute()) return rel;
  if (const char* base = std::getenv("CSVT_DATA_DIR"); base && *base)
    return (std::filesystem::path(base) / rel).string();
  return (std::filesystem::path(manifest_dir) / rel).string();
}

Manifest Manifest::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("manifest " + path + ": empty file");
  if (line != "path,label,fold")
    throw std::runtime_error("manifest " + path + ": expected header 'path,label,fold', got '" + line + "'");
  Manifest m;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string p, label, fold;
    if (!std::getline(ls, p, ',') || !std::getline(ls, label, ',') || !std::getline(ls, fold))
      throw std::runtime_error("manifest " + path + ":" + std::to_string(lineno) + ": bad row '" + line + "'");
    ManifestRecord rec;
    rec.path = p;
    rec.label = label_index(label);
    rec.fold = std::stoi(fold);
    m.records.push_back(std::move(rec));
  }
  return m;
}

void Manifest::write(const std::string& path) const {
  std::string out = "path,label,fold\n";
  for (const auto& r : records)
    out += r.path + "," + label_names()[size_t(r.label)] + "," + std::to_string(r.fold) + "\n";
  write_text_atomic(path, out);
}

Manifest kfold_split(const Manifest& manifest, int k, uint64_t seed) {
  if (k < 1) throw std::invalid_argument("kfold_split: k must be >= 1");
  std::map<int, std::vector<size_t>> by_class;
  for (size_t i = 0; i < manifest.records.size(); ++i) by_class[manifest.records[i].label].push_back(i);
  for (const auto& [cls, idx] : by_class)
    if (idx.size() < size_t(k))
      throw std::invalid_argument("kfold_split: class " + label_names()[size_t(cls)] + " has " +
                                  std::to_string(idx.size()) + " samples, need at least " + std::to_string(k));
  Manifest out = manifest;
  for (auto& [cls, idx] : by_class) {
    Rng rng(Rng::mix(seed, uint64_t(cls)));
    for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[size_t(rng.uniform_int(int64_t(i)))]);
    for (size_t i = 0; i < idx.size(); ++i) out.records[idx[i]].fold = int(i % size_t(k));
  }
  return out;
}

void SynthSpec::validate() const {
  if (image_size < 16) throw std::invalid_argument("synth: image_size must be >= 16");
  if (samples_per_class < 0) throw std::invalid_argument("synth: samples_per_class must be >= 0");
  if (hue_std <= 0) throw std::invalid_argument("synth: hue_std must be positive");
  for (int c = 0; c + 1 < 4; ++c) {
    const double gap = hue_means[size_t(c + 1)] - hue_means[size_t(c)];
    if (gap < 2.0 * hue_std)
      throw std::invalid_argument("synth: class hue means overlap (need separation >= 2 x hue_std); gap " +
                                  std::to_string(gap) + " vs std " + std::to_string(hue_std));
  }
  if (sat_lo > sat_hi || val_lo > val_hi) throw std::invalid_argument("synth: bad saturation/value range");
  if (format != "ppm" && format != "png") throw std::invalid_argument("synth: format must be ppm or png");
  if (folds < 1) throw std::invalid_argument("synth: folds must be >= 1");
}

SynthSpec SynthSpec::from_file(const std::string& path) {
  SynthSpec spec;
  const KvFile kv = KvFile::parse_file(path);
  auto to_int = [](const std::string& v) { return std::stoi(v); };
  auto to_dbl = [](const std::string& v) { return std::stod(v); };
  auto to_arr = [](const std::string& v) {
    std::array<double, 4> a{};
    std::istringstream ss(v);
    std::string tok;
    for (int i = 0; i < 4; ++i) {
      if (!std::getline(ss, tok, ',')) throw std::invalid_argument("synth: expected four comma-separated values");
      a[size_t(i)] = std::stod(tok);
    }
    return a;
  };
  for (const auto& [key, value] : kv.items) {
    if (key == "image_size")
      spec.image_size = to_int(value);
    else if (key == "samples_per_class")
      spec.samples_per_class = to_int(value);
    else if (key == "hue_means")
      spec.hue_means = to_arr(value);
    else if (key == "hue_std")
      spec.hue_std = to_dbl(value);
    else if (key == "sat_lo")
      spec.sat_lo = to_dbl(value);
    else if (key == "sat_hi")
      spec.sat_hi = to_dbl(value);
    else if (key == "val_lo")
      spec.val_lo = to_dbl(value);
    else if (key == "val_hi")
      spec.val_hi = to_dbl(value);
    else if (key == "stem_density")
      spec.stem_density = to_arr(value);
    else if (key == "texture_freq")
      spec.texture_freq = to_dbl(value);
    else if (key == "texture_amp")
      spec.texture_amp = to_dbl(value);
    else if (key == "noise_level")
      spec.noise_level = to_dbl(value);
    else if (key == "folds")
      spec.folds = to_int(value);
    else if (key == "format")
      spec.format = value;
    else
      throw std::invalid_argument("synth spec: unknown key '" + key + "'");
  }
  spec.validate();
  return spec;
}

void hsv_to_rgb(double h, double s, double v, double* r, double* g, double* b) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = std::min(5, int(hh));
  const double f = hh - sector;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: *r = v; *g = t; *b = p; break;
    case 1: *r = q; *g = v; *b = p; break;
    case 2: *r = p; *g = v; *b = t; break;
    case 3: *r = p; *g = q; *b = v; break;
    case 4: *r = t; *g = p; *b = v; break;
    default: *r = v; *g = p; *b = q; break;
  }
}

Manifest synth_generate(const SynthSpec& spec, const std::string& out_dir, uint64_t seed) {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  Manifest manifest;
  int image_index = 0;
  for (int cls = 0; cls < 4; ++cls)
    for (int i = 0; i < spec.samples_per_class; ++i, ++image_index) {
      Rng rng(Rng::mix(seed, uint64_t(image_index)));
      const auto img = synth_image<float>(spec, cls, rng);
      char name[64];
      std::snprintf(name, sizeof name, "%s_%04d.%s", label_names()[size_t(cls)].c_str(), i, spec.format.c_str());
      write_image((std::filesystem::path(out_dir) / name).string(), tensor_to_image(img));
      ManifestRecord rec;
      rec.path = name;
      rec.label = cls;
      manifest.records.push_back(std::move(rec));
    }
  if (!manifest.records.empty()) manifest = kfold_split(manifest, spec.folds, seed);
  manifest.write((std::filesystem::path(out_dir) / "manifest.csv").string());
  return manifest;
}

}  // namespace csvt
