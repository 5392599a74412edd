#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "csvt/tensor.hpp"

namespace csvt {

// CSVT1 container: an ASCII magic line, a UTF-8 manifest block with one
// record per tensor (name, dtype, shape, byte offset, byte length), a blank
// line, then raw little-endian payloads in manifest order. Offsets are
// relative to the first payload byte. Round-trips are bit-exact.
struct TensorBlob {
  std::string name;
  Shape shape;
  std::vector<float> f32;
};

void save_checkpoint_blobs(const std::string& path, const std::vector<TensorBlob>& blobs);
std::vector<TensorBlob> load_checkpoint_blobs(const std::string& path);

template <class T>
void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, const Tensor<T>*>>& tensors) {
  std::vector<TensorBlob> blobs;
  blobs.reserve(tensors.size());
  for (const auto& [name, t] : tensors) {
    TensorBlob b;
    b.name = name;
    b.shape = t->shape();
    b.f32.resize(t->numel());
    for (size_t i = 0; i < t->numel(); ++i) b.f32[i] = static_cast<float>((*t)[i]);
    blobs.push_back(std::move(b));
  }
  save_checkpoint_blobs(path, blobs);
}

// Copies every matching name into the destination tensors. Shape conflicts
// are collected into one report so the caller sees the whole diff at once.
// strict additionally requires the name sets to match exactly.
template <class T>
void load_checkpoint_into(const std::string& path,
                          const std::vector<std::pair<std::string, Tensor<T>*>>& tensors, bool strict) {
  const auto blobs = load_checkpoint_blobs(path);
  std::map<std::string, const TensorBlob*> by_name;
  for (const auto& b : blobs) by_name[b.name] = &b;

  std::string diff;
  size_t matched = 0;
  for (const auto& [name, t] : tensors) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      if (strict) diff += "  missing in checkpoint: " + name + " " + shape_str(t->shape()) + "\n";
      continue;
    }
    if (it->second->shape != t->shape()) {
      diff += "  shape mismatch: " + name + " expected " + shape_str(t->shape()) + " found " +
              shape_str(it->second->shape) + "\n";
      continue;
    }
    ++matched;
  }
  if (strict) {
    std::map<std::string, bool> wanted;
    for (const auto& [name, t] : tensors) wanted[name] = true;
    for (const auto& b : blobs)
      if (!wanted.count(b.name)) diff += "  unexpected in checkpoint: " + b.name + " " + shape_str(b.shape) + "\n";
  }
  if (!diff.empty()) throw std::runtime_error("checkpoint " + path + " does not fit the model:\n" + diff);
  if (matched == 0) throw std::runtime_error("checkpoint " + path + ": no tensor names matched the model");

  for (const auto& [name, t] : tensors) {
    auto it = by_name.find(name);
    if (it == by_name.end()) continue;
    auto& dst = t->values_mut();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->f32[i]);
  }
}

}  // namespace csvt
