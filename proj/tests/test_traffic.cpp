#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "support.hpp"
#include "v2n/rng.hpp"
#include "v2n/traffic.hpp"

using namespace v2n;

namespace {

IntensityTable constant_table(int pops, int windows, double rate, double window_s = 300.0) {
  IntensityTable t;
  t.window_seconds = window_s;
  for (int p = 0; p < pops; ++p)
    for (int w = 0; w < windows; ++w) t.entries.push_back({w * window_s, p, rate});
  return t;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("intensity csv ingest") {
  test::TempDir dir;
  write_file(dir / "ok.csv", "window_start_s,pop_id,lambda_veh_per_hour\n0,0,10\n0,1,20\n300,0,10\n300,1,0\n600,0,1\n600,1,2\n");
  const auto t = load_intensity_csv(dir / "ok.csv");
  CHECK(t.entries.size() == 6);
  CHECK(t.pop_count() == 2);

  write_file(dir / "neg.csv", "window_start_s,pop_id,lambda_veh_per_hour\n0,0,-1\n");
  CHECK_THROWS(load_intensity_csv(dir / "neg.csv"));
  write_file(dir / "gap.csv", "window_start_s,pop_id,lambda_veh_per_hour\n0,0,10\n0,1,10\n300,0,10\n600,0,10\n600,1,10\n");
  CHECK_THROWS(load_intensity_csv(dir / "gap.csv"));
  write_file(dir / "hdr.csv", "start,pop,rate\n0,0,10\n");
  CHECK_THROWS(load_intensity_csv(dir / "hdr.csv"));
  write_file(dir / "bad.csv", "window_start_s,pop_id,lambda_veh_per_hour\n0,0,abc\n");
  CHECK_THROWS(load_intensity_csv(dir / "bad.csv"));

  write_intensity_csv(t, dir / "rt.csv");
  const auto back = load_intensity_csv(dir / "rt.csv");
  CHECK(back.digest() == t.digest());
}

TEST_CASE("synth_intensity shapes") {
  SynthParams p;
  p.pops = 1;
  p.days = 1;
  CHECK(synth_intensity(p).entries.size() == 288);

  p.pops = 3;
  p.days = 2;
  p.peak_veh_per_hour = p.trough_veh_per_hour = 50.0;
  p.noise = 0.0;
  const auto flat = synth_intensity(p);
  CHECK(flat.entries.size() == 3 * 576);
  for (const auto& e : flat.entries) CHECK(e.vehicles_per_hour == doctest::Approx(50.0));

  SynthParams q;
  q.pops = 3;
  q.phase_per_pop_hours = 0.0;
  q.noise = 0.0;
  const auto same = synth_intensity(q);
  const std::size_t n = same.entries.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(same.entries[i].vehicles_per_hour == same.entries[n + i].vehicles_per_hour);
    CHECK(same.entries[i].vehicles_per_hour == same.entries[2 * n + i].vehicles_per_hour);
  }
  CHECK(synth_intensity(q).digest() == same.digest());
  q.peak_veh_per_hour = 10.0;
  q.trough_veh_per_hour = 20.0;
  CHECK_THROWS(synth_intensity(q));
}

TEST_CASE("generate_arrivals examples") {
  CHECK(generate_arrivals(constant_table(3, 4, 0.0), 1).empty());

  const auto busy = generate_arrivals(constant_table(1, 12, 3600.0), 42);
  CHECK(std::abs(static_cast<double>(busy.size()) - 3600.0) <= 180.0);

  const auto table = constant_table(2, 6, 120.0);
  const auto a = generate_arrivals(table, 7);
  const auto b = generate_arrivals(table, 7);
  const auto c = generate_arrivals(table, 8);
  CHECK(a.digest() == b.digest());
  CHECK(a.digest() != c.digest());
  CHECK(a.seed == 7);
  CHECK(a.source_hash == table.digest());
}

TEST_CASE("traces are sorted and respect their windows") {
  SynthParams p;
  p.pops = 4;
  p.peak_veh_per_hour = 200.0;
  const auto table = synth_intensity(p);
  const auto t = generate_arrivals(table, 3);
  REQUIRE(!t.empty());
  for (std::size_t i = 1; i < t.size(); ++i) {
    CHECK(t.events[i - 1].t_s <= t.events[i].t_s);
    if (t.events[i - 1].t_s == t.events[i].t_s) CHECK(t.events[i - 1].pop <= t.events[i].pop);
  }
  // Window discipline: a window with zero intensity gets no events.
  IntensityTable holes = constant_table(2, 4, 500.0);
  for (auto& e : holes.entries)
    if (e.window_start_s == 300.0 && e.pop == 1) e.vehicles_per_hour = 0.0;
  const auto h = generate_arrivals(holes, 5);
  for (const auto& ev : h.events) {
    CHECK(ev.pop >= 0);
    CHECK(ev.pop < 2);
    CHECK(ev.t_s < 1200.0);
    CHECK(!(ev.pop == 1 && ev.t_s >= 300.0 && ev.t_s < 600.0));
  }
}

TEST_CASE("replicate") {
  const auto table = constant_table(2, 3, 60.0);
  const auto reps = replicate(table, 100, 40);
  CHECK(reps.size() == 40);
  std::set<std::uint64_t> digests;
  for (int i = 0; i < 40; ++i) {
    CHECK(reps[i].seed == 100u + static_cast<unsigned>(i));
    digests.insert(reps[i].digest());
  }
  CHECK(digests.size() == 40);
  const auto one = replicate(table, 9, 1);
  CHECK(one.size() == 1);
  CHECK(one[0].digest() == generate_arrivals(table, 9).digest());
  const auto serial = replicate_serial(table, 100, 40);
  for (int i = 0; i < 40; ++i) CHECK(serial[i].digest() == reps[i].digest());
  CHECK_THROWS(replicate(table, 1, 0));
}

TEST_CASE("trace csv round trip") {
  test::TempDir dir;
  const auto t = generate_arrivals(constant_table(3, 4, 300.0), 11);
  write_trace(t, dir / "t.csv");
  const auto back = read_trace(dir / "t.csv");
  REQUIRE(back.size() == t.size());
  CHECK(back.seed == t.seed);
  CHECK(back.source_hash == t.source_hash);
  CHECK(back.pop_count == t.pop_count);
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(back.events[i].pop == t.events[i].pop);
    CHECK(std::abs(back.events[i].t_s - t.events[i].t_s) <= 1e-6);
  }
  // Written traces are already at file precision, so a second round trip is exact.
  write_trace(back, dir / "u.csv");
  CHECK(read_trace(dir / "u.csv").digest() == back.digest());

  TrafficTrace empty;
  empty.pop_count = 2;
  write_trace(empty, dir / "e.csv");
  const auto e = read_trace(dir / "e.csv");
  CHECK(e.empty());
  CHECK(e.pop_count == 2);

  write_file(dir / "unsorted.csv", "t_s,pop_id\n2.0,0\n1.0,0\n");
  CHECK_THROWS(read_trace(dir / "unsorted.csv"));
  write_file(dir / "junk.csv", "t_s,pop_id\n1.0\n");
  CHECK_THROWS(read_trace(dir / "junk.csv"));
}

TEST_CASE("window and prefix") {
  const auto t = generate_arrivals(constant_table(2, 4, 600.0), 2);
  const auto w = t.window(300.0, 600.0);
  for (const auto& e : w.events) {
    CHECK(e.t_s >= 300.0);
    CHECK(e.t_s < 600.0);
  }
  CHECK(w.pop_count == 2);
  CHECK(t.prefix(5).size() == std::min<std::size_t>(5, t.size()));
}

TEST_CASE("seed derivation is stable") {
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
}
