#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <map>

#include "twist/checkpoint.hpp"
#include "twist/dataset.hpp"

using namespace twist;

namespace {

EpisodeRecord make_episode(int t, int state_dim, int action_dim, int img,
                           uint64_t seed) {
  Rng rng(seed);
  EpisodeRecord ep;
  ep.episode_seed = seed;
  ep.obs_h = img;
  ep.obs_w = img;
  ep.states.resize(t, state_dim);
  ep.actions.resize(t, action_dim);
  ep.rewards.resize(t);
  ep.observations.resize(static_cast<size_t>(t) * img * img * 3);
  for (auto& b : ep.observations)
    b = static_cast<uint8_t>(rng.uniform_int(256));
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < state_dim; ++j)
      ep.states(i, j) = static_cast<float>(rng.uniform(-1, 1));
    for (int j = 0; j < action_dim; ++j)
      ep.actions(i, j) = static_cast<float>(rng.uniform(-1, 1));
    ep.rewards(i) = static_cast<float>(rng.uniform(-1, 0));
    DrParams dr;
    dr.texture_id = static_cast<int>(rng.uniform_int(48));
    dr.bg_r = static_cast<float>(rng.uniform());
    dr.bg_g = static_cast<float>(rng.uniform());
    dr.bg_b = static_cast<float>(rng.uniform());
    dr.object_hue_shift = static_cast<float>(rng.uniform());
    dr.brightness = static_cast<float>(rng.uniform(0.5, 1.5));
    ep.dr_trace.push_back(dr);
  }
  return ep;
}

std::string temp_path(const char* name) {
  return std::string("/tmp/twist_test_") + name;
}

}  // namespace

TEST_CASE("append increments the episode count and step bookkeeping") {
  EpisodeStore store;
  CHECK(store.size() == 0);
  store.append_episode(make_episode(100, 8, 2, 8, 1));
  CHECK(store.size() == 1);
  for (int i = 1; i < 100; ++i)
    store.append_episode(make_episode(100, 8, 2, 8, i + 1));
  CHECK(store.size() == 100);
  CHECK(store.total_steps() == 10000);
}

TEST_CASE("append rejects episodes with mismatched leading dimensions") {
  EpisodeStore store;
  EpisodeRecord ep = make_episode(10, 8, 2, 8, 3);
  ep.rewards.resize(9);
  CHECK_THROWS_AS(store.append_episode(std::move(ep)), Error);

  EpisodeRecord ep2 = make_episode(10, 8, 2, 8, 4);
  ep2.actions.resize(11, 2);
  CHECK_THROWS_AS(store.append_episode(std::move(ep2)), Error);
}

TEST_CASE("the only valid slice of a full-length episode is start zero") {
  EpisodeStore store;
  store.append_episode(make_episode(50, 4, 1, 8, 5));
  Rng rng(0);
  auto batch = store.sample_subtrajectories(50, 8, rng);
  for (const auto& st : batch) {
    CHECK(st.episode == 0);
    CHECK(st.start == 0);
    CHECK(st.length == 50);
  }
}

TEST_CASE("seeded sampling is deterministic") {
  EpisodeStore store;
  for (int i = 0; i < 5; ++i) store.append_episode(make_episode(60, 4, 1, 8, i));
  Rng r1(42), r2(42);
  auto b1 = store.sample_subtrajectories(20, 16, r1);
  auto b2 = store.sample_subtrajectories(20, 16, r2);
  for (size_t i = 0; i < b1.size(); ++i) {
    CHECK(b1[i].episode == b2[i].episode);
    CHECK(b1[i].start == b2[i].start);
  }
}

TEST_CASE("slices never cross episode boundaries") {
  EpisodeStore store;
  store.append_episode(make_episode(30, 4, 1, 8, 1));
  store.append_episode(make_episode(80, 4, 1, 8, 2));
  Rng rng(9);
  auto batch = store.sample_subtrajectories(25, 500, rng);
  for (const auto& st : batch) {
    int t = store.episode(st.episode).length();
    CHECK(st.start >= 0);
    CHECK(st.start + st.length <= t);
  }
}

TEST_CASE("episode selection frequency is proportional to valid start counts") {
  EpisodeStore store;
  store.append_episode(make_episode(100, 4, 1, 8, 1));  // 51 starts
  store.append_episode(make_episode(100, 4, 1, 8, 2));  // 51 starts
  Rng rng(1234);
  const int n = 100000;
  int count0 = 0;
  std::map<int, int> start_hist;
  auto batch = store.sample_subtrajectories(50, n, rng);
  for (const auto& st : batch) {
    if (st.episode == 0) ++count0;
    ++start_hist[st.start];
  }
  // counting oracle: both episodes expose 51 starts -> 50% each within 2%
  CHECK(std::abs(static_cast<double>(count0) / n - 0.5) < 0.02);
  // every valid start appears; none outside [0, 50]
  for (const auto& [start, cnt] : start_hist) {
    CHECK(start >= 0);
    CHECK(start <= 50);
  }
  CHECK(start_hist.size() == 51);
}

TEST_CASE("sampling without a long-enough episode raises insufficient data") {
  EpisodeStore store;
  store.append_episode(make_episode(10, 4, 1, 8, 1));
  Rng rng(0);
  try {
    store.sample_subtrajectories(11, 1, rng);
    FAIL("expected data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
    CHECK(e.exit_code() == 3);
  }
}

TEST_CASE("save/load round trip is bit exact") {
  EpisodeStore store;
  for (int i = 0; i < 3; ++i)
    store.append_episode(make_episode(40 + i, 8, 2, 8, 1000 + i));
  std::string path = temp_path("roundtrip.twds");
  store.save(path);
  EpisodeStore loaded = EpisodeStore::load(path);
  REQUIRE(loaded.size() == store.size());
  for (size_t i = 0; i < store.size(); ++i) {
    const auto& a = store.episode(i);
    const auto& b = loaded.episode(i);
    CHECK(a.episode_seed == b.episode_seed);
    CHECK(std::memcmp(a.states.data(), b.states.data(),
                      sizeof(float) * a.states.size()) == 0);
    CHECK(a.observations == b.observations);
    CHECK(std::memcmp(a.actions.data(), b.actions.data(),
                      sizeof(float) * a.actions.size()) == 0);
    CHECK(std::memcmp(a.rewards.data(), b.rewards.data(),
                      sizeof(float) * a.rewards.size()) == 0);
    for (int t = 0; t < a.length(); ++t) {
      CHECK(a.dr_trace[t].texture_id == b.dr_trace[t].texture_id);
      CHECK(a.dr_trace[t].brightness == b.dr_trace[t].brightness);
      CHECK(a.dr_trace[t].object_hue_shift == b.dr_trace[t].object_hue_shift);
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("truncated files are rejected with a byte offset, nothing returned") {
  EpisodeStore store;
  store.append_episode(make_episode(20, 4, 1, 8, 7));
  std::string path = temp_path("trunc.twds");
  store.save(path);
  // chop the tail off
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  out.close();
  try {
    EpisodeStore::load(path);
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::format);
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("corrupt magic is rejected") {
  std::string path = temp_path("magic.twds");
  std::ofstream out(path, std::ios::binary);
  out.write("NOPE\x01\x00", 6);
  out.close();
  try {
    EpisodeStore::load(path);
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::format);
  }
  std::remove(path.c_str());
}

TEST_CASE("the on-disk float encoding is little-endian") {
  EpisodeStore store;
  EpisodeRecord ep = make_episode(1, 1, 1, 2, 9);
  ep.states(0, 0) = 1.0f;
  store.append_episode(std::move(ep));
  std::string path = temp_path("endian.twds");
  store.save(path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  // payload starts after magic(4) + version(2) + len(4) + manifest
  uint32_t mlen;
  std::memcpy(&mlen, bytes.data() + 6, 4);
  size_t payload = 10 + mlen;
  // 1.0f little-endian: 00 00 80 3f
  CHECK(static_cast<uint8_t>(bytes[payload + 0]) == 0x00);
  CHECK(static_cast<uint8_t>(bytes[payload + 1]) == 0x00);
  CHECK(static_cast<uint8_t>(bytes[payload + 2]) == 0x80);
  CHECK(static_cast<uint8_t>(bytes[payload + 3]) == 0x3f);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint round trip restores exact parameter bits") {
  ParameterSet<float> ps;
  Rng rng(5);
  ps.add("wm/enc/W", glorot_uniform<float>(4, 6, rng));
  ps.add("wm/enc/b", MatF::Zero(1, 6));
  ps.add("actor/l0/W", glorot_uniform<float>(3, 2, rng));
  nlohmann::json spec = {{"role", "teacher"}, {"groups", 8}};
  std::string path = temp_path("ckpt.twck");
  save_checkpoint(path, {&ps}, spec);

  ParameterSet<float> loaded;
  loaded.add("wm/enc/W", MatF::Zero(4, 6));
  loaded.add("wm/enc/b", MatF::Ones(1, 6));
  loaded.add("actor/l0/W", MatF::Zero(3, 2));
  nlohmann::json spec2 = load_checkpoint_into(loaded, path);
  CHECK(spec2.at("role") == "teacher");
  CHECK(std::memcmp(loaded.at("wm/enc/W").value.data(),
                    ps.at("wm/enc/W").value.data(),
                    sizeof(float) * 24) == 0);
  CHECK(loaded.at("wm/enc/b").value.cwiseAbs().maxCoeff() == 0.0f);

  // shape mismatch is a format error
  ParameterSet<float> wrong;
  wrong.add("wm/enc/W", MatF::Zero(4, 5));
  CHECK_THROWS_AS(load_checkpoint_into(wrong, path), Error);

  // missing parameter is a format error
  ParameterSet<float> missing;
  missing.add("wm/other/W", MatF::Zero(1, 1));
  CHECK_THROWS_AS(load_checkpoint_into(missing, path), Error);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint magic and truncation are rejected") {
  std::string path = temp_path("bad.twck");
  std::ofstream out(path, std::ios::binary);
  out.write("TWCK\x01\x00\xff\xff\xff\x0f", 10);
  out.close();
  try {
    load_checkpoint_raw(path);
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::format);
  }
  std::remove(path.c_str());
}
