#include "csvt/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace csvt {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

int to_int(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

}  // namespace

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true" || value == "on" || value == "1") return true;
  if (value == "false" || value == "off" || value == "0") return false;
  throw std::invalid_argument("config: key '" + key + "' expects a boolean, got '" + value + "'");
}

KvFile KvFile::parse_text(const std::string& text, const std::string& origin) {
  KvFile kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": empty key");
    kv.items.emplace_back(key, value);
  }
  return kv;
}

KvFile KvFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_text(text, path);
}

void RunConfig::apply_preset(const std::string& name) {
  if (name == "paper" || name.empty()) {
    preset = "paper";
    return;
  }
  if (name != "desk") throw std::invalid_argument("config: unknown preset '" + name + "' (paper, desk)");
  preset = "desk";
  image_size = 64;
  embed_dim = 64;
  num_layers = 4;
  num_heads = 2;
  batch_size = 16;
  epochs = 30;
  warmup_epochs = 5;
  ssl_epochs = 20;
  ssl_warmup_epochs = 2;
  global_size = 64;
  local_size = 32;
  proj_bottleneck = 64;
}

void RunConfig::apply_kv(const std::string& key, const std::string& value) {
  if (key == "preset") {
    apply_preset(value);
  } else if (key == "image_size") {
    image_size = to_int(value, key);
  } else if (key == "patch_size") {
    patch_size = to_int(value, key);
  } else if (key == "embed_dim") {
    embed_dim = to_int(value, key);
  } else if (key == "num_layers") {
    num_layers = to_int(value, key);
  } else if (key == "num_heads") {
    num_heads = to_int(value, key);
  } else if (key == "mlp_ratio") {
    mlp_ratio = to_double(value, key);
  } else if (key == "num_classes") {
    num_classes = to_int(value, key);
  } else if (key == "class_token_last_block") {
    class_token_last_block = parse_bool(value, key);
  } else if (key == "batch_size") {
    batch_size = to_int(value, key);
  } else if (key == "epochs") {
    epochs = to_int(value, key);
  } else if (key == "warmup_epochs") {
    warmup_epochs = to_int(value, key);
  } else if (key == "lr") {
    lr = to_double(value, key);
  } else if (key == "weight_decay") {
    weight_decay = to_double(value, key);
  } else if (key == "mixup_alpha") {
    mixup_alpha = to_double(value, key);
  } else if (key == "label_smooth") {
    label_smooth = to_double(value, key);
  } else if (key == "hflip_prob") {
    hflip_prob = to_double(value, key);
  } else if (key == "ssl_epochs") {
    ssl_epochs = to_int(value, key);
  } else if (key == "ssl_warmup_epochs") {
    ssl_warmup_epochs = to_int(value, key);
  } else if (key == "ssl_lr") {
    ssl_lr = to_double(value, key);
  } else if (key == "wd_start") {
    wd_start = to_double(value, key);
  } else if (key == "wd_end") {
    wd_end = to_double(value, key);
  } else if (key == "local_crops") {
    local_crops = to_int(value, key);
  } else if (key == "global_size") {
    global_size = to_int(value, key);
  } else if (key == "local_size") {
    local_size = to_int(value, key);
  } else if (key == "teacher_temp") {
    teacher_temp = to_double(value, key);
  } else if (key == "student_temp") {
    student_temp = to_double(value, key);
  } else if (key == "center_momentum") {
    center_momentum = to_double(value, key);
  } else if (key == "clip_norm") {
    clip_norm = to_double(value, key);
  } else if (key == "proj_hidden") {
    proj_hidden = to_int(value, key);
  } else if (key == "proj_bottleneck") {
    proj_bottleneck = to_int(value, key);
  } else if (key == "proj_dim") {
    proj_dim = to_int(value, key);
  } else if (key == "centering") {
    centering = parse_bool(value, key);
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

void RunConfig::apply_file(const std::string& path) {
  const KvFile kv = KvFile::parse_file(path);
  for (const auto& [k, v] : kv.items) apply_kv(k, v);
  validate();
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (patch_size < 1) fail("patch_size must be >= 1");
  if (image_size < patch_size || image_size % patch_size != 0) fail("image_size must be a positive multiple of patch_size");
  if (embed_dim < 1 || num_heads < 1 || embed_dim % num_heads != 0) fail("embed_dim must be divisible by num_heads");
  if (num_layers < 1) fail("num_layers must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (mlp_ratio <= 0) fail("mlp_ratio must be positive");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (global_size % patch_size != 0 || local_size % patch_size != 0)
    fail("global_size and local_size must be multiples of patch_size");
  if (local_crops < 0) fail("local_crops must be >= 0");
  if (teacher_temp <= 0 || student_temp <= 0) fail("temperatures must be positive");
  if (center_momentum < 0 || center_momentum > 1) fail("center_momentum must be in [0,1]");
  if (proj_hidden < 1 || proj_bottleneck < 1 || proj_dim < 2) fail("projection head dims must be positive");
}

std::string RunConfig::resolved_text() const {
  std::ostringstream os;
  os << "preset = " << (preset.empty() ? "paper" : preset) << "\n";
  os << "image_size = " << image_size << "\n";
  os << "patch_size = " << patch_size << "\n";
  os << "embed_dim = " << embed_dim << "\n";
  os << "num_layers = " << num_layers << "\n";
  os << "num_heads = " << num_heads << "\n";
  os << "mlp_ratio = " << mlp_ratio << "\n";
  os << "num_classes = " << num_classes << "\n";
  os << "class_token_last_block = " << (class_token_last_block ? "true" : "false") << "\n";
  os << "batch_size = " << batch_size << "\n";
  os << "epochs = " << epochs << "\n";
  os << "warmup_epochs = " << warmup_epochs << "\n";
  os << "lr = " << lr << "\n";
  os << "weight_decay = " << weight_decay << "\n";
  os << "mixup_alpha = " << mixup_alpha << "\n";
  os << "label_smooth = " << label_smooth << "\n";
  os << "hflip_prob = " << hflip_prob << "\n";
  os << "ssl_epochs = " << ssl_epochs << "\n";
  os << "ssl_warmup_epochs = " << ssl_warmup_epochs << "\n";
  os << "ssl_lr = " << ssl_lr << "\n";
  os << "wd_start = " << wd_start << "\n";
  os << "wd_end = " << wd_end << "\n";
  os << "local_crops = " << local_crops << "\n";
  os << "global_size = " << global_size << "\n";
  os << "local_size = " << local_size << "\n";
  os << "teacher_temp = " << teacher_temp << "\n";
  os << "student_temp = " << student_temp << "\n";
  os << "center_momentum = " << center_momentum << "\n";
  os << "clip_norm = " << clip_norm << "\n";
  os << "proj_hidden = " << proj_hidden << "\n";
  os << "proj_bottleneck = " << proj_bottleneck << "\n";
  os << "proj_dim = " << proj_dim << "\n";
  os << "centering = " << (centering ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace csvt
