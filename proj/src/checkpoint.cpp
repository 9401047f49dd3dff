#include "sucode/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sucode/errors.hpp"
#include "sucode/image.hpp"

namespace sucode {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are little-endian");

namespace {

constexpr char kMagic[4] = {'S', 'C', 'A', 'R'};
constexpr const char* kManifestHeader = "name,shape,dtype,frozen,stage_of_origin";

torch::ScalarType dtype_from_name(const std::string& s) {
  if (s == "float32") return torch::kFloat32;
  if (s == "float64") return torch::kFloat64;
  if (s == "int64") return torch::kInt64;
  throw CheckpointCorrupt("unknown dtype " + s);
}

std::string shape_string(const std::vector<std::int64_t>& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

std::vector<std::int64_t> parse_shape(const std::string& s) {
  std::vector<std::int64_t> shape;
  if (s.empty()) return shape;
  std::stringstream ss(s);
  std::string dim;
  while (std::getline(ss, dim, 'x')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoll(dim, &used);
      if (used != dim.size() || v < 0) throw CheckpointCorrupt("bad shape " + s);
      shape.push_back(v);
    } catch (const std::logic_error&) {
      throw CheckpointCorrupt("bad shape " + s);
    }
  }
  return shape;
}

fs::path array_path(const fs::path& dir, const std::string& name) {
  return dir / "arrays" / (name + ".bin");
}

std::string encode_array(const torch::Tensor& t) {
  auto c = t.contiguous().cpu();
  std::string out(kMagic, 4);
  const auto dtype = dtype_name(c.scalar_type());
  const std::uint8_t code = dtype == "float32" ? 0 : dtype == "float64" ? 1 : 2;
  out.push_back(static_cast<char>(code));
  const auto rank = static_cast<std::uint32_t>(c.dim());
  out.append(reinterpret_cast<const char*>(&rank), sizeof(rank));
  for (auto d : c.sizes()) {
    const std::int64_t v = d;
    out.append(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  out.append(static_cast<const char*>(c.data_ptr()), c.numel() * c.element_size());
  return out;
}

torch::Tensor decode_array(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointCorrupt("missing array file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) throw CheckpointCorrupt("truncated array " + path.string());
  };
  need(4 + 1 + 4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointCorrupt("bad magic in " + path.string());
  pos = 4;
  const auto code = static_cast<std::uint8_t>(bytes[pos++]);
  std::uint32_t rank = 0;
  std::memcpy(&rank, bytes.data() + pos, sizeof(rank));
  pos += sizeof(rank);
  if (code > 2 || rank > 16) throw CheckpointCorrupt("bad header in " + path.string());
  std::vector<std::int64_t> shape(rank);
  need(rank * sizeof(std::int64_t));
  for (auto& d : shape) {
    std::memcpy(&d, bytes.data() + pos, sizeof(d));
    pos += sizeof(d);
    if (d < 0) throw CheckpointCorrupt("negative dim in " + path.string());
  }
  const auto dtype = code == 0 ? torch::kFloat32 : code == 1 ? torch::kFloat64 : torch::kInt64;
  auto t = torch::empty(shape, dtype);
  const std::size_t payload = static_cast<std::size_t>(t.numel()) * t.element_size();
  if (bytes.size() - pos != payload) throw CheckpointCorrupt("payload size mismatch in " + path.string());
  std::memcpy(t.data_ptr(), bytes.data() + pos, payload);
  return t;
}

}  // namespace

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    default: throw CheckpointCorrupt(std::string("unsupported dtype ") + c10::toString(t));
  }
}

void CheckpointBundle::put(const std::string& name, const torch::Tensor& array, bool frozen,
                           int stage_of_origin) {
  auto stored = array.detach().contiguous().clone();
  ManifestEntry e{name, stored.sizes().vec(), dtype_name(stored.scalar_type()), frozen, stage_of_origin};
  arrays[name] = stored;
  for (auto& m : manifest) {
    if (m.name == name) {
      m = e;
      return;
    }
  }
  manifest.push_back(std::move(e));
}

const torch::Tensor& CheckpointBundle::at(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw CheckpointIncomplete("missing array " + name);
  return it->second;
}

const ManifestEntry& CheckpointBundle::entry(const std::string& name) const {
  for (const auto& m : manifest)
    if (m.name == name) return m;
  throw CheckpointIncomplete("missing manifest entry " + name);
}

std::vector<std::string> CheckpointBundle::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& m : manifest)
    if (m.name.rfind(prefix, 0) == 0) out.push_back(m.name);
  return out;
}

void CheckpointBundle::validate() const {
  for (const auto& m : manifest) {
    auto it = arrays.find(m.name);
    if (it == arrays.end()) throw CheckpointCorrupt("manifest entry without array: " + m.name);
    if (it->second.sizes().vec() != m.shape)
      throw CheckpointCorrupt("shape mismatch for " + m.name + ": manifest " + shape_string(m.shape) +
                              ", array " + shape_string(it->second.sizes().vec()));
    if (dtype_name(it->second.scalar_type()) != m.dtype)
      throw CheckpointCorrupt("dtype mismatch for " + m.name);
  }
  if (arrays.size() != manifest.size()) throw CheckpointCorrupt("array without manifest entry");
}

void save_checkpoint(const CheckpointBundle& bundle, const fs::path& dir) {
  bundle.validate();
  const fs::path tmp = dir.string() + ".tmp";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp / "arrays");

  std::string manifest = std::string(kManifestHeader) + "\n";
  for (const auto& m : bundle.manifest) {
    if (m.name.find(',') != std::string::npos || m.name.find("..") != std::string::npos)
      throw CheckpointCorrupt("illegal array name " + m.name);
    manifest += m.name + "," + shape_string(m.shape) + "," + m.dtype + "," + (m.frozen ? "1" : "0") +
                "," + std::to_string(m.stage_of_origin) + "\n";
    write_file_atomic(array_path(tmp, m.name), encode_array(bundle.arrays.at(m.name)));
  }
  write_file_atomic(tmp / "manifest.txt", manifest);
  write_file_atomic(tmp / "config.yaml", config_to_yaml(bundle.config_snapshot));
  write_file_atomic(tmp / "rng_state.bin", bundle.rng_state);

  const fs::path old = dir.string() + ".old";
  fs::remove_all(old, ec);
  if (fs::exists(dir)) fs::rename(dir, old);
  fs::rename(tmp, dir);
  fs::remove_all(old, ec);
}

CheckpointBundle load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw CheckpointCorrupt("no manifest in " + dir.string());
  CheckpointBundle b;
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) throw CheckpointCorrupt("bad manifest header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (line.back() == ',') fields.emplace_back();
    if (fields.size() != 5) throw CheckpointCorrupt("bad manifest row: " + line);
    ManifestEntry e;
    e.name = fields[0];
    e.shape = parse_shape(fields[1]);
    e.dtype = fields[2];
    dtype_from_name(e.dtype);
    if (fields[3] != "0" && fields[3] != "1") throw CheckpointCorrupt("bad frozen flag: " + line);
    e.frozen = fields[3] == "1";
    try {
      e.stage_of_origin = std::stoi(fields[4]);
    } catch (const std::logic_error&) {
      throw CheckpointCorrupt("bad stage_of_origin: " + line);
    }
    b.arrays[e.name] = decode_array(array_path(dir, e.name));
    b.manifest.push_back(std::move(e));
  }
  {
    std::ifstream cfg(dir / "config.yaml");
    if (!cfg) throw CheckpointCorrupt("no config snapshot in " + dir.string());
    std::stringstream ss;
    ss << cfg.rdbuf();
    try {
      b.config_snapshot = parse_config_text(ss.str());
    } catch (const ConfigInvalid& e) {
      throw CheckpointCorrupt(std::string("config snapshot: ") + e.what());
    }
  }
  {
    std::ifstream rng(dir / "rng_state.bin", std::ios::binary);
    if (rng) b.rng_state.assign(std::istreambuf_iterator<char>(rng), std::istreambuf_iterator<char>());
  }
  b.validate();
  return b;
}

}  // namespace sucode
