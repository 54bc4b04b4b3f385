#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "iman/dataset.hpp"
#include "iman/rng.hpp"
#include "iman/tensor.hpp"

namespace iman {

// N x M binary matrix, entry 1 marking an absent modality. Every row keeps
// at least one present modality.
struct MissingnessTable {
  std::size_t rows = 0;
  std::vector<std::uint8_t> bits;  // rows * kNumModalities

  std::uint8_t at(std::size_t row, std::size_t modality) const {
    return bits[row * kNumModalities + modality];
  }
  std::array<std::uint8_t, kNumModalities> row(std::size_t r) const;
};

// Column k receives exactly round(n * rate_k) ones on uniformly chosen
// rows; resampling (with a swap-repair fallback at boundary-feasible rates)
// enforces the at-least-one-present invariant. Integer-only randomness,
// so tables are identical across platforms for a fixed generator.
MissingnessTable build_table(std::size_t n, std::span<const double> rates, Rng rng);

double missing_rate(const MissingnessTable& table, std::size_t modality);

void save_table_csv(const std::string& path, const MissingnessTable& table);
MissingnessTable load_table_csv(const std::string& path);

// Per-sample presence, true = present.
struct PresencePattern {
  std::array<bool, kNumModalities> bits = {true, true, true, true, true};

  static PresencePattern all_present() { return {}; }
  static PresencePattern of_sample(const PatientSample& sample);
  // Complement of a missingness-table row.
  static PresencePattern from_table_row(const MissingnessTable& table, std::size_t row);
  std::size_t count() const;
};

// Masks a sample with a missingness-table row: absent modalities have their
// stored values zeroed and presence bits cleared; the label and the present
// modalities are untouched. Idempotent.
PatientSample apply_missing(const PatientSample& sample,
                            const std::array<std::uint8_t, kNumModalities>& absent);

// One learnable (present, absent) token block per modality.
struct PromptBank {
  std::size_t prompt_len = 0;
  std::size_t d_model = 0;
  std::array<Tensor, kNumModalities> present_blocks;  // each [prompt_len, d_model]
  std::array<Tensor, kNumModalities> absent_blocks;

  static PromptBank init(std::size_t prompt_len, std::size_t d_model, Rng& rng);
};

// Concatenation, in fixed modality order, of the block selected by each
// presence bit: [(M * prompt_len), d_model]. Depends only on the pattern.
Tensor select_prompts(const PresencePattern& pattern, const PromptBank& bank);

}  // namespace iman
