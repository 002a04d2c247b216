#include "twist/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace twist {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'T', 'W', 'C', 'K'};
constexpr uint16_t kVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<const ParameterSet<float>*>& sets,
                     const json& spec) {
  json manifest;
  manifest["version"] = kVersion;
  manifest["spec"] = spec;
  json params = json::object();
  uint64_t offset = 0;
  for (const auto* set : sets) {
    for (const auto& p : *set) {
      require(!params.contains(p->name), ErrorKind::config,
              "save_checkpoint: duplicate parameter " + p->name);
      params[p->name] = {{"dtype", "f32"},
                         {"shape", {p->value.rows(), p->value.cols()}},
                         {"offset", offset}};
      offset += sizeof(float) * static_cast<uint64_t>(p->value.size());
    }
  }
  manifest["params"] = params;
  std::string mstr = manifest.dump();

  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::data, "cannot open for write: " + path);
  f.write(kMagic, 4);
  uint16_t version = kVersion;
  f.write(reinterpret_cast<const char*>(&version), 2);
  uint32_t mlen = static_cast<uint32_t>(mstr.size());
  f.write(reinterpret_cast<const char*>(&mlen), 4);
  f.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  for (const auto* set : sets)
    for (const auto& p : *set)
      f.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(float) * p->value.size()));
  require(f.good(), ErrorKind::data, "write failed: " + path);
}

CheckpointData load_checkpoint_raw(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::data, "cannot open: " + path);
  auto read_exact = [&](void* p, size_t n, uint64_t at) {
    f.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(f.gcount()) != n)
      fail(ErrorKind::format,
           path + ": truncated at byte offset " +
               std::to_string(at + static_cast<uint64_t>(f.gcount())));
  };
  char magic[4];
  read_exact(magic, 4, 0);
  require(std::memcmp(magic, kMagic, 4) == 0, ErrorKind::format,
          path + ": bad magic at byte offset 0");
  uint16_t version;
  read_exact(&version, 2, 4);
  require(version == kVersion, ErrorKind::format,
          path + ": unsupported TWCK version " + std::to_string(version));
  uint32_t mlen;
  read_exact(&mlen, 4, 6);
  std::string mstr(mlen, '\0');
  read_exact(mstr.data(), mlen, 10);
  json manifest;
  try {
    manifest = json::parse(mstr);
  } catch (const json::exception& e) {
    fail(ErrorKind::format, path + ": manifest parse error: " + e.what());
  }

  const uint64_t payload_base = 10ull + mlen;
  CheckpointData data;
  data.spec = manifest.value("spec", json::object());
  // read in offset order so the stream only moves forward
  std::vector<std::pair<uint64_t, std::string>> order;
  for (auto it = manifest.at("params").begin();
       it != manifest.at("params").end(); ++it)
    order.emplace_back(it.value().at("offset").get<uint64_t>(), it.key());
  std::sort(order.begin(), order.end());
  for (const auto& [offset, name] : order) {
    const json& meta = manifest.at("params").at(name);
    require(meta.at("dtype") == "f32", ErrorKind::format,
            path + ": unsupported dtype for " + name);
    auto shape = meta.at("shape");
    MatF m(shape.at(0).get<Eigen::Index>(), shape.at(1).get<Eigen::Index>());
    f.seekg(static_cast<std::streamoff>(payload_base + offset));
    read_exact(m.data(), sizeof(float) * m.size(), payload_base + offset);
    data.params.emplace_back(name, std::move(m));
  }
  return data;
}

json load_checkpoint_into(ParameterSet<float>& ps, const std::string& path) {
  CheckpointData data = load_checkpoint_raw(path);
  size_t found = 0;
  for (auto& p : ps) {
    bool ok = false;
    for (auto& [name, value] : data.params) {
      if (name != p->name) continue;
      require(value.rows() == p->value.rows() &&
                  value.cols() == p->value.cols(),
              ErrorKind::format,
              path + ": shape mismatch for parameter " + p->name);
      p->value = value;
      ok = true;
      ++found;
      break;
    }
    require(ok, ErrorKind::format,
            path + ": missing parameter " + p->name);
  }
  (void)found;
  return data.spec;
}

uint64_t file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::data, "cannot open: " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<uint8_t>(buf[i]);
      h *= 1099511628211ull;
    }
    if (f.eof()) break;
  }
  return h;
}

}  // namespace twist
