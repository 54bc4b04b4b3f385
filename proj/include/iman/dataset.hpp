#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "iman/tensor.hpp"

namespace iman {

// Fixed modality order used everywhere: two diagnostic fields followed by
// three image volumes.
inline constexpr std::size_t kNumModalities = 5;
inline constexpr std::array<const char*, kNumModalities> kModalityNames = {"ebv", "normal", "t1",
                                                                           "t1c", "t2"};
inline constexpr std::size_t kNumFieldModalities = 2;
inline constexpr std::size_t kNumImageModalities = 3;

enum class Split { Train, Val, Test };
const char* split_name(Split s);

struct PatientSample {
  std::int64_t id = 0;
  int label = 0;  // binary outcome
  Tensor ebv;     // [ebv_dim]
  Tensor normal;  // [normal_dim]
  std::array<Tensor, kNumImageModalities> images;  // each [C,H,W]
  std::array<bool, kNumModalities> present = {true, true, true, true, true};

  const Tensor& modality(std::size_t k) const;
};

struct Dataset {
  std::vector<PatientSample> samples;
  std::vector<std::size_t> train_idx, val_idx, test_idx;
  Shape image_shape;
  std::size_t ebv_dim = 0;
  std::size_t normal_dim = 0;

  const std::vector<std::size_t>& split_indices(Split s) const;
};

// Directory layout: meta.csv (id, label, split, presence bits), table.csv
// (missingness bits, 1 = absent), and one SAMPLE_<id>.bin blob per sample
// with an IMSM header followed by little-endian 64-bit reals in modality
// order.
void save_dataset(const std::string& dir, const Dataset& dataset);
Dataset load_dataset(const std::string& dir);

}  // namespace iman
