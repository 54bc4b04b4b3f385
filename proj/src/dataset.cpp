#include "iman/dataset.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "iman/missingness.hpp"

namespace iman {

const char* split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    default:
      return "test";
  }
}

const Tensor& PatientSample::modality(std::size_t k) const {
  switch (k) {
    case 0:
      return ebv;
    case 1:
      return normal;
    case 2:
    case 3:
    case 4:
      return images[k - kNumFieldModalities];
    default:
      throw ParamError("modality index " + std::to_string(k) + " out of range");
  }
}

const std::vector<std::size_t>& Dataset::split_indices(Split s) const {
  switch (s) {
    case Split::Train:
      return train_idx;
    case Split::Val:
      return val_idx;
    default:
      return test_idx;
  }
}

namespace {

void write_f64_le(std::ostream& out, const std::vector<double>& values) {
  for (double v : values) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, 8);
    unsigned char raw[8];
    for (int i = 0; i < 8; ++i) raw[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(raw), 8);
  }
}

std::vector<double> read_f64_le(std::istream& in, std::size_t count, const std::string& context) {
  std::vector<double> values(count);
  std::vector<unsigned char> raw(count * 8);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IoError("truncated real block in " + context);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(raw[i * 8 + b]) << (8 * b);
    std::memcpy(&values[i], &bits, 8);
  }
  return values;
}

void save_sample_blob(const std::string& path, const PatientSample& sample) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "IMSM 1\n" << kNumModalities << "\n";
  for (std::size_t k = 0; k < kNumModalities; ++k) {
    const Tensor& t = sample.modality(k);
    out << kModalityNames[k] << " " << t.ndim();
    for (std::size_t i = 0; i < t.ndim(); ++i) out << " " << t.dim(i);
    out << "\n";
  }
  for (std::size_t k = 0; k < kNumModalities; ++k) write_f64_le(out, sample.modality(k).data());
}

void load_sample_blob(const std::string& path, PatientSample& sample) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "IMSM" || version != 1)
    throw IoError("bad sample blob header in " + path + ": " + magic);
  std::size_t modalities = 0;
  in >> modalities;
  if (modalities != kNumModalities)
    throw IoError("sample blob declares " + std::to_string(modalities) + " modalities");
  std::vector<Shape> shapes(kNumModalities);
  for (std::size_t k = 0; k < kNumModalities; ++k) {
    std::string name;
    std::size_t ndims = 0;
    in >> name >> ndims;
    if (name != kModalityNames[k]) throw IoError("unexpected modality order in " + path);
    shapes[k].resize(ndims);
    for (auto& d : shapes[k]) in >> d;
  }
  in.ignore(1);  // newline before the raw block
  if (!in) throw IoError("truncated header in " + path);
  for (std::size_t k = 0; k < kNumModalities; ++k) {
    std::size_t n = 1;
    for (auto d : shapes[k]) n *= d;
    Tensor t = Tensor::from(shapes[k], read_f64_le(in, n, path));
    switch (k) {
      case 0:
        sample.ebv = std::move(t);
        break;
      case 1:
        sample.normal = std::move(t);
        break;
      default:
        sample.images[k - kNumFieldModalities] = std::move(t);
        break;
    }
  }
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& dataset) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  // meta.csv
  {
    std::ofstream meta(dir + "/meta.csv", std::ios::binary);
    if (!meta) throw IoError("cannot write " + dir + "/meta.csv");
    meta << "sample_id,label,split";
    for (const char* name : kModalityNames) meta << "," << name << "_present";
    meta << "\n";
    std::vector<const char*> split_of(dataset.samples.size(), "test");
    for (std::size_t i : dataset.train_idx) split_of[i] = "train";
    for (std::size_t i : dataset.val_idx) split_of[i] = "val";
    for (std::size_t i : dataset.test_idx) split_of[i] = "test";
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
      const auto& s = dataset.samples[i];
      meta << s.id << "," << s.label << "," << split_of[i];
      for (bool p : s.present) meta << "," << (p ? 1 : 0);
      meta << "\n";
    }
  }

  // table.csv: complement of the presence bits.
  {
    MissingnessTable t;
    t.rows = dataset.samples.size();
    t.bits.reserve(t.rows * kNumModalities);
    for (const auto& s : dataset.samples)
      for (bool p : s.present) t.bits.push_back(p ? 0 : 1);
    save_table_csv(dir + "/table.csv", t);
  }

  for (const auto& s : dataset.samples)
    save_sample_blob(dir + "/SAMPLE_" + std::to_string(s.id) + ".bin", s);
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream meta(dir + "/meta.csv", std::ios::binary);
  if (!meta) throw IoError("cannot read " + dir + "/meta.csv");
  Dataset ds;
  std::string line;
  if (!std::getline(meta, line)) throw IoError("empty meta.csv in " + dir);
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    PatientSample sample;
    std::getline(row, cell, ',');
    sample.id = std::stoll(cell);
    std::getline(row, cell, ',');
    sample.label = std::stoi(cell);
    std::getline(row, cell, ',');
    const std::string split = cell;
    for (std::size_t k = 0; k < kNumModalities; ++k) {
      if (!std::getline(row, cell, ',')) throw IoError("short meta row: " + line);
      sample.present[k] = cell == "1";
    }
    load_sample_blob(dir + "/SAMPLE_" + std::to_string(sample.id) + ".bin", sample);
    const std::size_t index = ds.samples.size();
    if (split == "train")
      ds.train_idx.push_back(index);
    else if (split == "val")
      ds.val_idx.push_back(index);
    else if (split == "test")
      ds.test_idx.push_back(index);
    else
      throw IoError("unknown split '" + split + "' in meta.csv");
    ds.samples.push_back(std::move(sample));
  }
  if (ds.samples.empty()) throw IoError("dataset at " + dir + " has no samples");
  ds.image_shape = ds.samples[0].images[0].shape();
  ds.ebv_dim = ds.samples[0].ebv.numel();
  ds.normal_dim = ds.samples[0].normal.numel();
  return ds;
}

}  // namespace iman
