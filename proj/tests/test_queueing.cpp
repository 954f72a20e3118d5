#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "doctest.h"
#include "support.hpp"
#include "v2n/queueing.hpp"

using namespace v2n;
using doctest::Approx;

TEST_CASE("service_rate follows the decode and analyze table") {
  const auto prof = default_profile();
  CHECK(service_rate(prof, 1) == Approx(1.0 / (8.47 + 37.0)).epsilon(1e-12));
  CHECK(service_rate(prof, 1) == Approx(0.021993).epsilon(1e-4));
  CHECK(service_rate(prof, 5) == Approx(0.106045).epsilon(1e-5));
  CHECK(service_rate(prof, 0) == 0.0);
  CHECK_THROWS_AS(service_rate(prof, 6), std::domain_error);
  CHECK_THROWS_AS(service_rate(prof, -1), std::domain_error);

  // Two-decimal display row.
  const double row[] = {0.02, 0.04, 0.07, 0.09, 0.11};
  for (int c = 1; c <= 5; ++c) {
    CHECK(std::round(service_rate(prof, c) * 100.0) / 100.0 == Approx(row[c - 1]));
    CHECK(service_rate(prof, c) > service_rate(prof, c - 1));
  }
}

TEST_CASE("processing_delay and load examples") {
  const auto prof = default_profile();
  CHECK(processing_delay(prof, 2, 1) == Approx(70.676065).epsilon(1e-7));
  CHECK(is_overload(processing_delay(prof, 1, 1)));
  CHECK(processing_delay(prof, 5, 0) == Approx(9.43).epsilon(1e-9));
  CHECK(is_overload(processing_delay(prof, 0, 0)));
  CHECK(load(prof, 2, 1) == Approx(0.675845).epsilon(1e-7));
  CHECK(load(prof, 3, 0) == 0.0);
  CHECK(is_overload(load(prof, 0, 3)));
  CHECK(load(prof, 0, 0) == 0.0);
}

TEST_CASE("delay monotonicity and the stability boundary") {
  const auto prof = default_profile();
  for (int n = 0; n <= 6; ++n)
    for (int c = 1; c < prof.max_cpus(); ++c) {
      const double a = processing_delay(prof, c, n), b = processing_delay(prof, c + 1, n);
      CHECK((is_overload(a) || b <= a));
    }
  for (int c = 1; c <= prof.max_cpus(); ++c)
    for (int n = 0; n < 6; ++n) {
      const double a = processing_delay(prof, c, n), b = processing_delay(prof, c, n + 1);
      if (!is_overload(b)) CHECK(b > a);
    }
  for (int c = 0; c <= prof.max_cpus(); ++c)
    for (int n = 1; n <= 6; ++n) {
      const double rho = load(prof, c, n);
      CHECK(is_overload(processing_delay(prof, c, n)) == (is_overload(rho) || rho >= 1.0));
    }
}

TEST_CASE("profile validation and csv") {
  auto bad = default_profile();
  bad.analyze_ms_per_frame[2] = bad.analyze_ms_per_frame[1] + 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = default_profile();
  bad.task_rate_per_vehicle = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK(default_profile().truncated(2).max_cpus() == 2);
  CHECK_THROWS(default_profile().truncated(6));

  test::TempDir dir;
  {
    std::ofstream out(dir / "p.csv");
    out << "cpus,decode_ms_per_frame,analyze_ms_per_frame\n1,10,20\n2,6,12\n";
  }
  const auto p = load_profile_csv(dir / "p.csv");
  CHECK(p.max_cpus() == 2);
  CHECK(service_rate(p, 2) == Approx(1.0 / 18.0));
  {
    std::ofstream out(dir / "q.csv");
    out << "cpus,decode_ms_per_frame,analyze_ms_per_frame\n1,10,20\n3,6,12\n";
  }
  CHECK_THROWS(load_profile_csv(dir / "q.csv"));
}

TEST_CASE("PopQueue admit, expire and derived fields") {
  auto prof = test::profile_ptr();
  PopQueue q(0, prof, 2);
  CHECK(q.n_vehicles() == 0);
  q.admit(1, 10.0, false);
  CHECK(q.n_vehicles() == 1);
  CHECK(q.load() == Approx(0.675845).epsilon(1e-7));
  q.admit(2, 20.0, true);
  q.admit(3, 30.0, false);
  CHECK(q.n_vehicles() == 3);
  CHECK(q.n_remote() == 1);
  CHECK(q.remote_fraction() == Approx(1.0 / 3.0));
  CHECK(is_overload(q.proc_delay()));
  CHECK_THROWS_AS(q.admit(2, 40.0, false), std::logic_error);

  q.expire(5.0);
  CHECK(q.n_vehicles() == 3);
  q.expire(15.0);
  CHECK(q.n_vehicles() == 2);
  q.expire(25.0);
  CHECK(q.n_vehicles() == 1);
  CHECK(q.n_remote() == 0);
  q.expire(100.0);
  CHECK(q.n_vehicles() == 0);
  CHECK(q.load() == 0.0);

  q.scale_by(10);
  CHECK(q.cpus() == 5);
  q.scale_by(-9);
  CHECK(q.cpus() == 0);
  CHECK_THROWS_AS(q.set_cpus(6), std::domain_error);
}

TEST_CASE("simulate_ps_queue basics") {
  CHECK_THROWS_AS(simulate_ps_queue(ServiceDiscipline::kExponential, 0.2, 5.0, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(simulate_ps_queue(ServiceDiscipline::kExponential, 0.1, 5.0, 0, 1), std::invalid_argument);

  const auto a = simulate_ps_queue(ServiceDiscipline::kExponential, 0.05, 10.0, 1000, 9);
  const auto b = simulate_ps_queue(ServiceDiscipline::kExponential, 0.05, 10.0, 1000, 9);
  CHECK(a == b);
  CHECK(a.size() == 1000);

  // Nearly empty system: deterministic service is never shared.
  const auto lone = simulate_ps_queue(ServiceDiscipline::kDeterministic, 1e-7, 10.0, 200, 3);
  for (double s : lone) CHECK(s == Approx(10.0).epsilon(1e-9));

  const auto half = simulate_ps_queue(ServiceDiscipline::kExponential, 0.05, 10.0, 100000, 5);
  const double mean = std::accumulate(half.begin(), half.end(), 0.0) / static_cast<double>(half.size());
  CHECK(mean == Approx(20.0).epsilon(0.05));
}
