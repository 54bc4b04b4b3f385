#include "iman/missingness.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace iman {

std::array<std::uint8_t, kNumModalities> MissingnessTable::row(std::size_t r) const {
  std::array<std::uint8_t, kNumModalities> out{};
  for (std::size_t k = 0; k < kNumModalities; ++k) out[k] = at(r, k);
  return out;
}

namespace {

std::size_t present_count(const MissingnessTable& t, std::size_t r) {
  std::size_t c = 0;
  for (std::size_t k = 0; k < kNumModalities; ++k) c += t.at(r, k) == 0 ? 1 : 0;
  return c;
}

void sample_columns(MissingnessTable& t, std::size_t n,
                    const std::array<std::size_t, kNumModalities>& counts, Rng& rng) {
  std::fill(t.bits.begin(), t.bits.end(), std::uint8_t{0});
  for (std::size_t k = 0; k < kNumModalities; ++k) {
    for (std::size_t r : rng.sample_without_replacement(n, counts[k]))
      t.bits[r * kNumModalities + k] = 1;
  }
}

bool all_rows_valid(const MissingnessTable& t) {
  for (std::size_t r = 0; r < t.rows; ++r)
    if (present_count(t, r) == 0) return false;
  return true;
}

// Moves one absent bit from a fully-missing row to a donor row with at
// least two present modalities. Column counts are preserved exactly.
void repair_rows(MissingnessTable& t, Rng& rng) {
  for (std::size_t r = 0; r < t.rows; ++r) {
    if (present_count(t, r) > 0) continue;
    // Columns in random order; take the first with a usable donor.
    std::vector<std::size_t> cols(kNumModalities);
    for (std::size_t k = 0; k < kNumModalities; ++k) cols[k] = k;
    rng.shuffle(cols);
    bool repaired = false;
    for (std::size_t k : cols) {
      std::vector<std::size_t> donors;
      for (std::size_t d = 0; d < t.rows; ++d)
        if (t.at(d, k) == 0 && present_count(t, d) >= 2) donors.push_back(d);
      if (donors.empty()) continue;
      const std::size_t donor = donors[rng.next_below(donors.size())];
      t.bits[r * kNumModalities + k] = 0;
      t.bits[donor * kNumModalities + k] = 1;
      repaired = true;
      break;
    }
    if (!repaired)
      throw ConstraintError("missingness table repair failed: no donor row available");
  }
}

}  // namespace

MissingnessTable build_table(std::size_t n, std::span<const double> rates, Rng rng) {
  if (rates.size() != kNumModalities)
    throw ParamError("build_table expects one rate per modality (" +
                     std::to_string(kNumModalities) + "), got " + std::to_string(rates.size()));
  if (n == 0) throw ParamError("build_table needs at least one row");

  std::array<std::size_t, kNumModalities> counts{};
  std::size_t total = 0;
  for (std::size_t k = 0; k < kNumModalities; ++k) {
    if (rates[k] < 0.0 || rates[k] > 1.0)
      throw ParamError(std::string("missing rate for ") + kModalityNames[k] +
                       " outside [0,1]: " + std::to_string(rates[k]));
    counts[k] = static_cast<std::size_t>(std::llround(rates[k] * static_cast<double>(n)));
    total += counts[k];
  }
  // Every row must keep one present modality, so at most n*(M-1) cells may
  // be missing overall.
  if (total > n * (kNumModalities - 1))
    throw ConstraintError("infeasible rates: " + std::to_string(total) +
                          " missing cells exceed the row bound of " +
                          std::to_string(n * (kNumModalities - 1)));

  MissingnessTable t;
  t.rows = n;
  t.bits.assign(n * kNumModalities, 0);

  for (int attempt = 0; attempt < 64; ++attempt) {
    sample_columns(t, n, counts, rng);
    if (all_rows_valid(t)) return t;
  }
  // Rates near the feasibility boundary make pure rejection hopeless; fix
  // the violating rows directly while preserving the exact column counts.
  sample_columns(t, n, counts, rng);
  repair_rows(t, rng);
  return t;
}

double missing_rate(const MissingnessTable& table, std::size_t modality) {
  if (modality >= kNumModalities)
    throw ParamError("modality index " + std::to_string(modality) + " out of range");
  std::size_t ones = 0;
  for (std::size_t r = 0; r < table.rows; ++r) ones += table.at(r, modality);
  return static_cast<double>(ones) / static_cast<double>(table.rows);
}

void save_table_csv(const std::string& path, const MissingnessTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "sample_id";
  for (const char* name : kModalityNames) out << "," << name;
  out << "\n";
  for (std::size_t r = 0; r < table.rows; ++r) {
    out << r;
    for (std::size_t k = 0; k < kNumModalities; ++k) out << "," << int(table.at(r, k));
    out << "\n";
  }
}

MissingnessTable load_table_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty missingness table: " + path);
  MissingnessTable t;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');  // sample_id
    for (std::size_t k = 0; k < kNumModalities; ++k) {
      if (!std::getline(row, cell, ','))
        throw IoError("short row in missingness table: " + line);
      t.bits.push_back(cell == "1" ? 1 : 0);
    }
    ++t.rows;
  }
  return t;
}

PresencePattern PresencePattern::of_sample(const PatientSample& sample) {
  PresencePattern p;
  p.bits = sample.present;
  return p;
}

PresencePattern PresencePattern::from_table_row(const MissingnessTable& table, std::size_t row) {
  PresencePattern p;
  for (std::size_t k = 0; k < kNumModalities; ++k) p.bits[k] = table.at(row, k) == 0;
  return p;
}

std::size_t PresencePattern::count() const {
  std::size_t c = 0;
  for (bool b : bits) c += b ? 1 : 0;
  return c;
}

PatientSample apply_missing(const PatientSample& sample,
                            const std::array<std::uint8_t, kNumModalities>& absent) {
  PatientSample out = sample;
  std::size_t kept = 0;
  for (std::size_t k = 0; k < kNumModalities; ++k)
    kept += (sample.present[k] && absent[k] == 0) ? 1 : 0;
  if (kept == 0) throw ConstraintError("mask would leave sample with zero present modalities");

  for (std::size_t k = 0; k < kNumModalities; ++k) {
    if (absent[k] == 0 || !out.present[k]) {
      if (absent[k] != 0) out.present[k] = false;
      continue;
    }
    out.present[k] = false;
    // Stored values of absent modalities are zeroed; downstream code must
    // key off the presence bit, never these values.
    switch (k) {
      case 0:
        out.ebv = Tensor::zeros(sample.ebv.shape());
        break;
      case 1:
        out.normal = Tensor::zeros(sample.normal.shape());
        break;
      default:
        out.images[k - kNumFieldModalities] =
            Tensor::zeros(sample.images[k - kNumFieldModalities].shape());
        break;
    }
  }
  return out;
}

PromptBank PromptBank::init(std::size_t prompt_len, std::size_t d_model, Rng& rng) {
  if (prompt_len == 0 || d_model == 0) throw ConfigError("prompt bank dims must be positive");
  PromptBank bank;
  bank.prompt_len = prompt_len;
  bank.d_model = d_model;
  for (std::size_t k = 0; k < kNumModalities; ++k) {
    bank.present_blocks[k] =
        Tensor::param({prompt_len, d_model}, rng.normal_vector(prompt_len * d_model, 0.02));
    bank.absent_blocks[k] =
        Tensor::param({prompt_len, d_model}, rng.normal_vector(prompt_len * d_model, 0.02));
  }
  return bank;
}

Tensor select_prompts(const PresencePattern& pattern, const PromptBank& bank) {
  std::vector<Tensor> blocks;
  blocks.reserve(kNumModalities);
  for (std::size_t k = 0; k < kNumModalities; ++k)
    blocks.push_back(pattern.bits[k] ? bank.present_blocks[k] : bank.absent_blocks[k]);
  return concat_rows(blocks);
}

}  // namespace iman
