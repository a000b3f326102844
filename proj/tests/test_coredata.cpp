#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "nsda/io.hpp"
#include "nsda/rng.hpp"
#include "nsda/types.hpp"

using namespace nsda;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "nsda_test_coredata";
  fs::create_directories(dir);
  return dir;
}

Recording make_recording(int channels, double rate, std::size_t n, std::uint64_t seed = 7) {
  Recording rec;
  rec.patient_id = "pX";
  rec.sample_rate_hz = rate;
  Rng rng(seed);
  for (int c = 0; c < channels; ++c) {
    rec.channels.push_back("ch" + std::to_string(c));
    std::vector<double> x(n);
    // float-representable values so the f32 payload round-trips bit-exactly
    for (auto& v : x) v = static_cast<double>(static_cast<float>(rng.next_normal() * 10.0));
    rec.samples.push_back(std::move(x));
  }
  return rec;
}

}  // namespace

TEST_CASE("recording sidecar round trip is bit exact") {
  const auto dir = temp_dir();
  const auto rec = make_recording(3, 256.0, 256);
  write_recording(dir / "r1.json", rec);
  const auto back = load_recording(dir / "r1.json");
  CHECK(back.patient_id == rec.patient_id);
  CHECK(back.sample_rate_hz == rec.sample_rate_hz);
  CHECK(back.channels == rec.channels);
  REQUIRE(back.samples.size() == 3);
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 256; ++i) CHECK(back.samples[c][i] == rec.samples[c][i]);
  CHECK(back.duration_s() == doctest::Approx(1.0));
}

TEST_CASE("load_recording accepts stem, .json or .f32 path") {
  const auto dir = temp_dir();
  const auto rec = make_recording(1, 32.0, 64);
  write_recording(dir / "r2", rec);
  CHECK(load_recording(dir / "r2").samples_per_channel() == 64);
  CHECK(load_recording(dir / "r2.json").samples_per_channel() == 64);
  CHECK(load_recording(dir / "r2.f32").samples_per_channel() == 64);
}

TEST_CASE("truncated payload is a payload length mismatch") {
  const auto dir = temp_dir();
  write_recording(dir / "r3.json", make_recording(3, 256.0, 256));
  const auto size = fs::file_size(dir / "r3.f32");
  fs::resize_file(dir / "r3.f32", size - 4);
  CHECK_THROWS_WITH_AS(load_recording(dir / "r3.json"),
                       doctest::Contains("payload length mismatch"), DataError);
}

TEST_CASE("zero sample rate in the header is rejected") {
  const auto dir = temp_dir();
  write_recording(dir / "r4.json", make_recording(1, 32.0, 32));
  {
    std::ofstream h(dir / "r4.json");
    h << R"({"patient_id":"pX","sample_rate_hz":0,"channels":["ch0"],"samples_per_channel":32})";
  }
  CHECK_THROWS_WITH_AS(load_recording(dir / "r4.json"), doctest::Contains("invalid sample rate"),
                       DataError);
}

TEST_CASE("malformed header and non-finite payload are rejected") {
  const auto dir = temp_dir();
  write_recording(dir / "r5.json", make_recording(1, 32.0, 2));
  {
    std::ofstream h(dir / "r5b.json");
    h << "{not json";
    std::ofstream p(dir / "r5b.f32", std::ios::binary);
  }
  CHECK_THROWS_AS(load_recording(dir / "r5b.json"), DataError);

  // patch one float to NaN
  {
    std::fstream p(dir / "r5.f32", std::ios::in | std::ios::out | std::ios::binary);
    const std::uint32_t nan_bits = 0x7fc00000u;
    p.write(reinterpret_cast<const char*>(&nan_bits), 4);
  }
  CHECK_THROWS_WITH_AS(load_recording(dir / "r5.json"), doctest::Contains("non-finite"), DataError);
}

TEST_CASE("recording invariants") {
  Recording rec = make_recording(2, 32.0, 16);
  rec.samples[1].pop_back();
  CHECK_THROWS_AS(rec.validate(), DataError);

  rec = make_recording(2, 32.0, 16);
  rec.channels[1] = rec.channels[0];
  CHECK_THROWS_AS(rec.validate(), DataError);

  rec = make_recording(2, 32.0, 16);
  rec.sample_rate_hz = -1.0;
  CHECK_THROWS_AS(rec.validate(), DataError);
}

TEST_CASE("seeded rng determinism") {
  Rng a(0), b(0), c(1);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    all_equal = all_equal && va == b.next_u64();
    any_diff = any_diff || va != c.next_u64();
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("rng draws are well formed") {
  Rng rng(42);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.next_below(7) < 7);
  }
  // derive_seed separates streams and is reproducible
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
  CHECK(derive_seed(1, 2, 3) != derive_seed(2, 2, 3));
}

TEST_CASE("shuffle is a permutation and seed-stable") {
  std::vector<int> v1 = {1, 2, 3, 4, 5, 6, 7, 8};
  auto v2 = v1;
  Rng a(9), b(9);
  a.shuffle(v1);
  b.shuffle(v2);
  CHECK(v1 == v2);
  std::sort(v1.begin(), v1.end());
  CHECK(v1 == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8});
}

TEST_CASE("segment grid arithmetic") {
  CHECK(segment_count_for_duration(3600.0) == 897);
  CHECK(segment_count_for_duration(16.0) == 1);
  CHECK(segment_count_for_duration(15.9) == 0);
  CHECK(segment_count_for_duration(20.0) == 2);
  CHECK(segment_count_for_duration(19.9) == 1);
}

TEST_CASE("prediction matrix invariants") {
  PredictionMatrix m;
  m.segment_ids = {"a", "b"};
  m.detector_ids = {"d0", "d1"};
  m.probs = {0.5, 0.4999, 1.0, 0.0};
  m.validate();
  CHECK(m.hard_label(0, 0) == 1);  // inclusive threshold
  CHECK(m.hard_label(0, 1) == 0);
  CHECK(m.hard_label(1, 0) == 1);
  const auto labels = m.hard_labels();
  CHECK(labels.n == 2);
  CHECK(labels.r == 2);
  CHECK(labels.at(1, 1) == 0);

  m.probs[2] = 1.5;
  CHECK_THROWS_AS(m.validate(), DataError);
  m.probs = {0.1, 0.2};
  CHECK_THROWS_AS(m.validate(), DataError);
}

TEST_CASE("event timeline merging") {
  auto tl = EventTimeline::merged("x", {{5, 7}, {1, 3}, {2, 4}, {9, 9}, {7, 8}});
  REQUIRE(tl.events.size() == 2);
  CHECK(tl.events[0] == std::pair<double, double>{1, 4});
  CHECK(tl.events[1] == std::pair<double, double>{5, 8});
  CHECK(tl.total_duration_s() == doctest::Approx(6.0));
}

TEST_CASE("annotations csv round trip") {
  const auto dir = temp_dir();
  std::vector<AnnotationTrack> tracks = {
      {"p0", "e0", {0, 1, 1, 0}},
      {"p0", "e1", {1, 1, 0, 0}},
      {"p1", "e0", {0, 0, 0, 1}},
  };
  write_annotations_csv(dir / "ann.csv", tracks);
  const auto back = load_annotations_csv(dir / "ann.csv");
  REQUIRE(back.size() == 3);
  for (const auto& t : back) {
    bool found = false;
    for (const auto& orig : tracks)
      if (orig.patient_id == t.patient_id && orig.expert_id == t.expert_id) {
        CHECK(orig.labels == t.labels);
        found = true;
      }
    CHECK(found);
  }
}

TEST_CASE("predictions csv round trip keeps 9+ significant digits") {
  const auto dir = temp_dir();
  PredictionMatrix m;
  m.segment_ids = {"p0:0", "p0:4", "p0:8"};
  m.detector_ids = {"d0", "d1"};
  Rng rng(3);
  m.probs.resize(6);
  for (auto& p : m.probs) p = rng.next_double();
  write_predictions_csv(dir / "pred.csv", m);
  const auto back = load_predictions_csv(dir / "pred.csv");
  REQUIRE(back.rows() == 3);
  REQUIRE(back.cols() == 2);
  CHECK(back.segment_ids == m.segment_ids);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(back.at(i, j) == doctest::Approx(m.at(i, j)).epsilon(1e-10));
}

TEST_CASE("missing prediction cells are rejected") {
  const auto dir = temp_dir();
  {
    std::ofstream out(dir / "ragged.csv");
    out << "segment_id,detector_id,probability\n";
    out << "s0,d0,0.5\ns0,d1,0.25\ns1,d0,0.75\n";  // s1,d1 missing
  }
  CHECK_THROWS_WITH_AS(load_predictions_csv(dir / "ragged.csv"), doctest::Contains("missing"),
                       DataError);
}
