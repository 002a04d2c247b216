#include "twist/dataset.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace twist {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'T', 'W', 'D', 'S'};
constexpr uint16_t kVersion = 1;

static_assert(sizeof(float) == 4, "TWDS assumes 32-bit floats");

// All payloads are little-endian; this is asserted once at load/save time so
// the format stays portable.
bool little_endian() {
  const uint16_t probe = 1;
  return *reinterpret_cast<const uint8_t*>(&probe) == 1;
}

struct Writer {
  std::ofstream f;
  uint64_t offset = 0;  // within payload once header is done

  void bytes(const void* p, size_t n) {
    f.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
    offset += n;
  }
  template <typename T>
  void pod(const T& v) {
    bytes(&v, sizeof(T));
  }
};

struct Reader {
  std::ifstream f;
  uint64_t offset = 0;
  std::string path;

  void bytes(void* p, size_t n) {
    f.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(f.gcount()) != n)
      fail(ErrorKind::format, path + ": truncated at byte offset " +
                                  std::to_string(offset + f.gcount()));
    offset += n;
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
};

// Fixed 28-byte on-disk record for one step's DrParams.
void write_dr(Writer& w, const DrParams& dr) {
  w.pod<int32_t>(dr.texture_id);
  w.pod<uint8_t>(dr.split == DrSplit::train ? 0 : 1);
  w.pod<int8_t>(static_cast<int8_t>(dr.jitter_x));
  w.pod<int8_t>(static_cast<int8_t>(dr.jitter_y));
  w.pod<uint8_t>(0);
  w.pod<float>(dr.bg_r);
  w.pod<float>(dr.bg_g);
  w.pod<float>(dr.bg_b);
  w.pod<float>(dr.object_hue_shift);
  w.pod<float>(dr.brightness);
}

DrParams read_dr(Reader& r) {
  DrParams dr;
  dr.texture_id = r.pod<int32_t>();
  dr.split = r.pod<uint8_t>() == 0 ? DrSplit::train : DrSplit::heldout;
  dr.jitter_x = r.pod<int8_t>();
  dr.jitter_y = r.pod<int8_t>();
  r.pod<uint8_t>();
  dr.bg_r = r.pod<float>();
  dr.bg_g = r.pod<float>();
  dr.bg_b = r.pod<float>();
  dr.object_hue_shift = r.pod<float>();
  dr.brightness = r.pod<float>();
  return dr;
}

}  // namespace

void EpisodeRecord::validate() const {
  const int t = length();
  require(t > 0, ErrorKind::data, "EpisodeRecord: empty episode");
  require(actions.rows() == t, ErrorKind::data,
          "EpisodeRecord: actions length does not match states");
  require(rewards.size() == t, ErrorKind::data,
          "EpisodeRecord: rewards length does not match states");
  require(static_cast<int>(dr_trace.size()) == t, ErrorKind::data,
          "EpisodeRecord: dr trace length does not match states");
  require(obs_h > 0 && obs_w > 0, ErrorKind::data,
          "EpisodeRecord: missing observation dimensions");
  require(observations.size() ==
              static_cast<size_t>(t) * obs_h * obs_w * 3,
          ErrorKind::data,
          "EpisodeRecord: observation buffer does not match T*H*W*3");
  require((actions.array() >= -1.0f).all() && (actions.array() <= 1.0f).all(),
          ErrorKind::data, "EpisodeRecord: actions outside [-1,1]");
}

void EpisodeStore::append_episode(EpisodeRecord ep) {
  ep.validate();
  episodes_.push_back(std::move(ep));
}

int64_t EpisodeStore::total_steps() const {
  int64_t n = 0;
  for (const auto& ep : episodes_) n += ep.length();
  return n;
}

std::vector<SubTrajectory> EpisodeStore::sample_subtrajectories(
    int length, int batch, Rng& rng) const {
  require(length >= 1 && batch >= 1, ErrorKind::config,
          "sample_subtrajectories: length and batch must be positive");
  std::vector<int64_t> cumulative;
  int64_t total = 0;
  for (const auto& ep : episodes_) {
    int64_t starts = std::max(0, ep.length() - length + 1);
    total += starts;
    cumulative.push_back(total);
  }
  require(total > 0, ErrorKind::data,
          "sample_subtrajectories: insufficient data, no episode of length >= " +
              std::to_string(length));
  std::vector<SubTrajectory> out;
  out.reserve(batch);
  for (int i = 0; i < batch; ++i) {
    int64_t u = static_cast<int64_t>(rng.uniform_int(
        static_cast<uint64_t>(total)));
    size_t ep = std::upper_bound(cumulative.begin(), cumulative.end(), u) -
                cumulative.begin();
    int64_t before = ep == 0 ? 0 : cumulative[ep - 1];
    out.push_back(SubTrajectory{static_cast<int>(ep),
                                static_cast<int>(u - before), length});
  }
  return out;
}

void EpisodeStore::save(const std::string& path) const {
  require(little_endian(), ErrorKind::format,
          "TWDS I/O requires a little-endian host");
  json manifest;
  manifest["version"] = kVersion;
  manifest["episode_count"] = episodes_.size();
  json eps = json::array();
  uint64_t offset = 0;
  for (const auto& ep : episodes_) {
    const int t = ep.length();
    json e;
    e["seed"] = ep.episode_seed;
    e["T"] = t;
    e["state_dim"] = ep.states.cols();
    e["action_dim"] = ep.actions.cols();
    e["obs_h"] = ep.obs_h;
    e["obs_w"] = ep.obs_w;
    e["offset"] = offset;
    offset += sizeof(float) * static_cast<uint64_t>(t) * ep.states.cols();
    offset += ep.observations.size();
    offset += sizeof(float) * static_cast<uint64_t>(t) * ep.actions.cols();
    offset += sizeof(float) * static_cast<uint64_t>(t);
    offset += 28ull * t;
    eps.push_back(e);
  }
  manifest["episodes"] = eps;
  std::string mstr = manifest.dump();

  Writer w;
  w.f.open(path, std::ios::binary);
  require(w.f.good(), ErrorKind::data, "cannot open for write: " + path);
  w.bytes(kMagic, 4);
  w.pod<uint16_t>(kVersion);
  w.pod<uint32_t>(static_cast<uint32_t>(mstr.size()));
  w.bytes(mstr.data(), mstr.size());
  for (const auto& ep : episodes_) {
    w.bytes(ep.states.data(), sizeof(float) * ep.states.size());
    w.bytes(ep.observations.data(), ep.observations.size());
    w.bytes(ep.actions.data(), sizeof(float) * ep.actions.size());
    w.bytes(ep.rewards.data(), sizeof(float) * ep.rewards.size());
    for (const auto& dr : ep.dr_trace) write_dr(w, dr);
  }
  require(w.f.good(), ErrorKind::data, "write failed: " + path);
}

EpisodeStore EpisodeStore::load(const std::string& path) {
  require(little_endian(), ErrorKind::format,
          "TWDS I/O requires a little-endian host");
  Reader r;
  r.path = path;
  r.f.open(path, std::ios::binary);
  require(r.f.good(), ErrorKind::data, "cannot open: " + path);

  char magic[4];
  r.bytes(magic, 4);
  require(std::memcmp(magic, kMagic, 4) == 0, ErrorKind::format,
          path + ": bad magic at byte offset 0");
  uint16_t version = r.pod<uint16_t>();
  require(version == kVersion, ErrorKind::format,
          path + ": unsupported TWDS version " + std::to_string(version) +
              " at byte offset 4");
  uint32_t mlen = r.pod<uint32_t>();
  std::string mstr(mlen, '\0');
  r.bytes(mstr.data(), mlen);
  json manifest;
  try {
    manifest = json::parse(mstr);
  } catch (const json::exception& e) {
    fail(ErrorKind::format, path + ": manifest parse error: " + e.what());
  }

  EpisodeStore store;
  for (const auto& e : manifest.at("episodes")) {
    EpisodeRecord ep;
    const int t = e.at("T").get<int>();
    const int sd = e.at("state_dim").get<int>();
    const int ad = e.at("action_dim").get<int>();
    ep.obs_h = e.at("obs_h").get<int>();
    ep.obs_w = e.at("obs_w").get<int>();
    ep.episode_seed = e.at("seed").get<uint64_t>();
    ep.states.resize(t, sd);
    r.bytes(ep.states.data(), sizeof(float) * ep.states.size());
    ep.observations.resize(static_cast<size_t>(t) * ep.obs_h * ep.obs_w * 3);
    r.bytes(ep.observations.data(), ep.observations.size());
    ep.actions.resize(t, ad);
    r.bytes(ep.actions.data(), sizeof(float) * ep.actions.size());
    ep.rewards.resize(t);
    r.bytes(ep.rewards.data(), sizeof(float) * ep.rewards.size());
    ep.dr_trace.reserve(t);
    for (int i = 0; i < t; ++i) ep.dr_trace.push_back(read_dr(r));
    store.append_episode(std::move(ep));
  }
  require(manifest.at("episode_count").get<size_t>() == store.size(),
          ErrorKind::format, path + ": episode count mismatch");
  return store;
}

}  // namespace twist
