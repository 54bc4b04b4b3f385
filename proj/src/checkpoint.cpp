#include <cstring>
#include <fstream>

#include "iman/model.hpp"

namespace iman {

namespace {

void write_f64_block(std::ostream& out, const std::vector<double>& values) {
  for (double v : values) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, 8);
    unsigned char raw[8];
    for (int i = 0; i < 8; ++i) raw[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(raw), 8);
  }
}

std::vector<double> read_f64_block(std::istream& in, std::size_t count, const std::string& ctx) {
  std::vector<unsigned char> raw(count * 8);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IoError("truncated parameter block: " + ctx);
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(raw[i * 8 + b]) << (8 * b);
    std::memcpy(&values[i], &bits, 8);
  }
  return values;
}

}  // namespace

void save_checkpoint(const std::string& path, const ImanModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  const auto config = model.cfg.kv();  // std::map iterates key-sorted
  const auto params = model.parameters();

  out << "IMAN 1\n";
  out << "config " << config.size() << "\n";
  for (const auto& [key, value] : config) out << key << " = " << value << "\n";
  out << "params " << params.size() << "\n";
  for (const auto& [name, tensor] : params) {
    out << name << "\n" << tensor.ndim();
    for (std::size_t i = 0; i < tensor.ndim(); ++i) out << " " << tensor.dim(i);
    out << "\n";
    write_f64_block(out, tensor.data());
  }
  if (!out) throw IoError("write failure on checkpoint " + path);
}

ImanModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "IMAN" || version != 1)
    throw IoError("bad checkpoint header in " + path + ": '" + magic + "'");

  std::string section;
  std::size_t config_lines = 0;
  in >> section >> config_lines;
  if (section != "config") throw IoError("expected config section in " + path);
  ModelConfig cfg;
  for (std::size_t i = 0; i < config_lines; ++i) {
    std::string key, eq, value;
    in >> key >> eq >> value;
    if (eq != "=") throw IoError("malformed config line in " + path);
    if (!cfg.set(key, value)) throw IoError("unknown checkpoint config key: " + key);
  }
  cfg.validate();

  std::size_t param_count = 0;
  in >> section >> param_count;
  if (section != "params") throw IoError("expected params section in " + path);
  in.ignore(1);

  ImanModel model = ImanModel::init(cfg, Rng(0));
  auto params = model.parameters();
  if (params.size() != param_count)
    throw IoError("checkpoint declares " + std::to_string(param_count) + " parameters, model has " +
                  std::to_string(params.size()));
  for (auto& [name, tensor] : params) {
    std::string stored_name;
    if (!std::getline(in, stored_name)) throw IoError("missing parameter block in " + path);
    if (stored_name != name)
      throw IoError("parameter order mismatch: expected '" + name + "', found '" + stored_name +
                    "'");
    std::size_t ndims = 0;
    in >> ndims;
    Shape shape(ndims);
    for (auto& d : shape) in >> d;
    in.ignore(1);
    if (shape != tensor.shape())
      throw IoError("shape mismatch for " + name + ": checkpoint " + shape_str(shape) +
                    ", model " + shape_str(tensor.shape()));
    tensor.mutable_data() = read_f64_block(in, tensor.numel(), name);
  }
  return model;
}

}  // namespace iman
