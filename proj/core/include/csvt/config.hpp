#pragma once

#include <string>
#include <utility>
#include <vector>

namespace csvt {

// Line-based "key = value" file; '#' starts a comment, blank lines skipped.
struct KvFile {
  std::vector<std::pair<std::string, std::string>> items;
  static KvFile parse_text(const std::string& text, const std::string& origin);
  static KvFile parse_file(const std::string& path);
};

// One flat config drives every command; each command reads its slice. The
// defaults are the full-scale recipe, `preset = desk` switches to dimensions
// that finish on a laptop CPU.
struct RunConfig {
  // architecture
  int image_size = 224;
  int patch_size = 8;
  int embed_dim = 384;
  int num_layers = 12;
  int num_heads = 4;
  double mlp_ratio = 4.0;
  int num_classes = 4;
  bool class_token_last_block = true;

  // supervised fine-tuning
  int batch_size = 64;
  int epochs = 100;
  int warmup_epochs = 20;
  double lr = 0.001;
  double weight_decay = 0.05;
  double mixup_alpha = 0.2;
  double label_smooth = 0.1;
  double hflip_prob = 0.5;

  // self-distillation pretraining
  int ssl_epochs = 100;
  int ssl_warmup_epochs = 10;
  double ssl_lr = 0.0005;
  double wd_start = 0.04;
  double wd_end = 0.4;
  int local_crops = 6;
  int global_size = 224;
  int local_size = 96;
  double teacher_temp = 0.04;
  double student_temp = 0.1;
  double center_momentum = 0.9;
  double clip_norm = 3.0;
  int proj_hidden = 512;
  int proj_bottleneck = 256;
  int proj_dim = 256;
  bool centering = true;

  std::string preset;

  void apply_preset(const std::string& name);
  void apply_kv(const std::string& key, const std::string& value);  // unknown keys rejected
  void apply_file(const std::string& path);
  void validate() const;
  std::string resolved_text() const;
};

bool parse_bool(const std::string& value, const std::string& key);

}  // namespace csvt
