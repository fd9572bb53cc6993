#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "photoion/ctmc.hpp"
#include "photoion/events.hpp"

using namespace photoion;

namespace {

struct MeanSe {
  double mean;
  double se;
};

MeanSe mean_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1) / n)};
}

RateParams chain(double ge, double gi, double gni, double nr) {
  RateParams p;
  p.gamma_e_per_power = ge;
  p.gamma_i = gi;
  p.gamma_ni = gni;
  p.reset_spontaneous = 0.5 * nr;
  p.reset_per_power = 0.5 * nr;
  return p;
}

}  // namespace

TEST(Automaton, LegalAndIllegalTransitions) {
  using S = SystemState;
  using T = Transition;
  EXPECT_EQ(apply(S::GroundNeutral, T::Excite), S::ExcitedNeutral);
  EXPECT_EQ(apply(S::ExcitedNeutral, T::DecayIonising), S::GroundIonised);
  EXPECT_EQ(apply(S::ExcitedNeutral, T::DecayNonIonising), S::GroundNeutral);
  EXPECT_EQ(apply(S::GroundIonised, T::Reset), S::GroundNeutral);
  EXPECT_FALSE(apply(S::GroundNeutral, T::Reset));
  EXPECT_FALSE(apply(S::GroundIonised, T::Excite));
  EXPECT_FALSE(apply(S::ExcitedNeutral, T::Excite));
  EXPECT_TRUE(trap_occupied(S::ExcitedNeutral));
  EXPECT_FALSE(trap_occupied(S::GroundIonised));
  for (auto t : {T::Excite, T::DecayNonIonising, T::DecayIonising, T::Reset})
    EXPECT_EQ(transition_from_string(to_string(t)), t);
  EXPECT_FALSE(transition_from_string("bogus"));
}

TEST(EventLog, ValidityChecks) {
  EventLog log;
  log.duration = 1.0;
  log.events = {{0.1, Transition::Excite}, {0.2, Transition::DecayIonising}, {0.3, Transition::Reset}};
  EXPECT_TRUE(log.valid());
  EXPECT_EQ(log.state_at(0.05), SystemState::GroundNeutral);
  EXPECT_EQ(log.state_at(0.25), SystemState::GroundIonised);
  auto bad = log;
  bad.events[2].time = 0.2;
  EXPECT_FALSE(bad.valid());
  bad = log;
  bad.events.erase(bad.events.begin());
  EXPECT_FALSE(bad.valid());
  bad = log;
  bad.events.push_back({1.5, Transition::Excite});
  EXPECT_FALSE(bad.valid());
}

TEST(ExcitationRate, LorentzianProfile) {
  RateParams p;
  p.gamma_e_per_power = 2080.0;
  const double peak = excitation_rate(0.0, 1.0, 0.496, 0.0, p);
  EXPECT_NEAR(peak, 1.03e3, 0.01 * 1.03e3);
  EXPECT_DOUBLE_EQ(excitation_rate(16e6, 1.0, 0.496, 0.0, p), 0.5 * peak);
  EXPECT_DOUBLE_EQ(excitation_rate(5e6, 1.0, 0.496, 5e6, p), peak);
  EXPECT_EQ(excitation_rate(0.0, 0.0, 0.5, 0.0, p), 0.0);
  EXPECT_EQ(excitation_rate(0.0, 3.0, 0.0, 0.0, p), 0.0);
  EXPECT_THROW(excitation_rate(0.0, -1.0, 0.5, 0.0, p), DomainError);
  EXPECT_THROW(excitation_rate(0.0, 1.0, 1.3, 0.0, p), DomainError);
  EXPECT_DOUBLE_EQ(excitation_rate(1e6, 2.0, 0.5, 0.0, p), 2.0 * excitation_rate(1e6, 1.0, 0.5, 0.0, p));
}

TEST(ReduceRates, LimitsAndDarkReset) {
  RateParams p;
  const auto dark = reduce_rates(p, 0.0, 0.5, 0.0);
  EXPECT_EQ(dark.ionisation, 0.0);
  EXPECT_EQ(dark.reset, p.reset_spontaneous);
  p.gamma_e_per_power = 1e12;
  EXPECT_NEAR(reduce_rates(p, 1.0, 1.0, 0.0).ionisation, p.gamma_i, 1e-3 * p.gamma_i);
  p.gamma_e_per_power = 10.0;
  const auto weak = reduce_rates(p, 1.0, 1.0, 0.0);
  EXPECT_NEAR(weak.ionisation, 10.0 * p.ionising_fraction(), 1e-4 * 10.0);
}

TEST(Diffusion, DisabledIsZero) {
  DiffusionParams d;
  d.sigma_per_power = 1e6;
  Rng rng(1);
  EXPECT_EQ(step_diffusion(5e6, 1e-6, 10.0, d, rng), 0.0);
}

TEST(Diffusion, StationaryVarianceWithinFivePercent) {
  DiffusionParams d{1e6, 1e-6, true};
  Rng rng(31);
  const double power = 10.0;
  const double sigma = d.sigma(power);
  double x = 0.0, s2 = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    x = step_diffusion(x, 0.5e-6, power, d, rng);
    s2 += x * x;
  }
  EXPECT_NEAR(s2 / n / (sigma * sigma), 1.0, 0.05);
}

TEST(Diffusion, LongStepForgetsStart) {
  DiffusionParams d{1e6, 1e-6, true};
  Rng rng(8);
  double s = 0, s2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = step_diffusion(1e9, 100e-6, 1.0, d, rng);
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 5e6 / std::sqrt(n));
  EXPECT_NEAR(s2 / n / 1e12, 1.0, 0.02);
}

TEST(Simulate, ZeroExcitationGivesEmptyLog) {
  RateParams p;
  DiffusionParams d{7e5, 0.2e-6, true};
  for (auto drive : {LaserDrive::continuous(1.0, 0.0, 0.5, 0.0), LaserDrive::continuous(1.0, 5.0, 0.0, 0.0)}) {
    const auto log = simulate(p, d, drive, 3);
    EXPECT_TRUE(log.events.empty());
    EXPECT_EQ(log.duration, 1.0);
  }
}

TEST(Simulate, RejectsBadDrive) {
  RateParams p;
  DiffusionParams d;
  EXPECT_THROW(simulate(p, d, LaserDrive{}, 1), DomainError);
  EXPECT_THROW(simulate(p, d, LaserDrive::continuous(1.0, 1.0, 1.3, 0.0), 1), ConfigError);
  EXPECT_THROW(simulate(p, d, LaserDrive::continuous(-1.0, 1.0, 0.5, 0.0), 1), ConfigError);
}

TEST(Simulate, DeterministicForSeed) {
  RateParams p;
  DiffusionParams d{7e5, 0.2e-6, true};
  const auto drive = LaserDrive::continuous(0.5, 1.1, 0.496, 1e6);
  EXPECT_EQ(simulate(p, d, drive, 42), simulate(p, d, drive, 42));
  EXPECT_NE(simulate(p, d, drive, 42).events, simulate(p, d, drive, 43).events);
}

TEST(Simulate, LogsReplayThroughAutomatonForRandomParameters) {
  Rng draw(2718);
  for (int trial = 0; trial < 40; ++trial) {
    RateParams p;
    p.gamma_e_per_power = std::pow(10.0, 2.0 + 4.0 * draw.uniform());
    p.homogeneous_fwhm = std::pow(10.0, 6.0 + 2.0 * draw.uniform());
    p.gamma_i = std::pow(10.0, 4.0 + 2.0 * draw.uniform());
    p.gamma_ni = std::pow(10.0, 4.0 + 2.0 * draw.uniform());
    p.reset_spontaneous = 1000.0 * draw.uniform();
    p.reset_per_power = 1.0 + 5000.0 * draw.uniform();
    DiffusionParams d{1e7 * draw.uniform(), 1e-7 + 1e-5 * draw.uniform(), draw.uniform() < 0.5};
    LaserDrive drive;
    const int nseg = 1 + static_cast<int>(draw.uniform() * 4);
    for (int s = 0; s < nseg; ++s)
      drive.segments.push_back({1e-4 + 1e-2 * draw.uniform(), 50.0 * draw.uniform(), draw.uniform(),
                                (draw.uniform() - 0.5) * 1e8});
    drive.repeat_count = 1 + static_cast<std::size_t>(draw.uniform() * 5);
    const auto log = simulate(p, d, drive, draw.next_u64());
    ASSERT_TRUE(log.valid()) << "trial " << trial;
    ASSERT_NEAR(log.duration, drive.total_duration(), 1e-15);
  }
}

TEST(Simulate, SegmentsAndRepeatsRespectDarkIntervals) {
  RateParams p;
  DiffusionParams d;
  LaserDrive drive{{{1e-3, 50.0, 1.0, 0.0}, {4e-3, 0.0, 0.0, 0.0}}, 200};
  const auto log = simulate(p, d, drive, 5);
  ASSERT_TRUE(log.valid());
  std::size_t excitations = 0;
  for (const auto& e : log.events) {
    if (e.transition != Transition::Excite) continue;
    ++excitations;
    const double phase = std::fmod(e.time, 5e-3);
    EXPECT_LT(phase, 1e-3 + 1e-12);
  }
  EXPECT_GT(excitations, 0u);
}

// First-passage times of the full chain against the two-state reduction,
// over a grid spanning three decades of each rate.
TEST(Simulate, DwellMeansMatchReducedRates) {
  struct Case {
    double ge, gi, gni, nr;
  };
  const Case grid[] = {{1e3, 625e3, 625e3, 929.0},   {1e4, 625e3, 625e3, 2e3},    {1e5, 1e5, 1e6, 1e4},
                       {1e6, 1e6, 1e5, 1e5},         {3e3, 1e4, 1e4, 300.0},      {5e4, 2e6, 2e5, 3e4}};
  std::uint64_t seed = 100;
  for (const auto& c : grid) {
    const auto p = chain(c.ge, c.gi, c.gni, c.nr);
    const auto red = reduce_rates(p, 1.0, 1.0, 0.0);
    ASSERT_DOUBLE_EQ(red.reset, c.nr);
    const double duration = 1.05e4 * (1.0 / red.ionisation + 1.0 / red.reset);
    const auto log = simulate(p, DiffusionParams{}, LaserDrive::continuous(duration, 1.0, 1.0, 0.0), ++seed);
    const auto rec = dwells_from_log(log);
    ASSERT_GE(rec.ionisation_times.size(), 10000u);
    const auto ti = mean_se(rec.ionisation_times);
    const auto tr = mean_se(rec.reset_times);
    EXPECT_NEAR(ti.mean, 1.0 / red.ionisation, 3.0 * ti.se) << "ge=" << c.ge;
    EXPECT_NEAR(tr.mean, 1.0 / red.reset, 3.0 * tr.se) << "nr=" << c.nr;
  }
}

TEST(Simulate, IonisationRateLinearWellBelowSaturation) {
  RateParams base;
  std::vector<double> ge{1e3, 3e3, 1e4, 3e4, 6e4};
  std::vector<double> x, y, yerr;
  for (std::size_t k = 0; k < ge.size(); ++k) {
    auto p = chain(ge[k], 625e3, 625e3, 1e5);
    const auto red = reduce_rates(p, 1.0, 1.0, 0.0);
    const double duration = 1.05e4 / red.ionisation;
    const auto log = simulate(p, DiffusionParams{}, LaserDrive::continuous(duration, 1.0, 1.0, 0.0), 900 + k);
    const auto ti = mean_se(dwells_from_log(log).ionisation_times);
    x.push_back(ge[k]);
    y.push_back(1.0 / ti.mean);
    yerr.push_back(ti.se / (ti.mean * ti.mean));
  }
  double sw = 0, swx = 0, swxx = 0, swy = 0, swxy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double w = 1.0 / (yerr[k] * yerr[k]);
    sw += w;
    swx += w * x[k];
    swxx += w * x[k] * x[k];
    swy += w * y[k];
    swxy += w * x[k] * y[k];
  }
  const double slope = (sw * swxy - swx * swy) / (sw * swxx - swx * swx);
  EXPECT_NEAR(slope, base.ionising_fraction(), 0.05 * base.ionising_fraction());
}

TEST(Simulate, DiffusionBroadensDetunedExcitation) {
  // far off resonance the excitation count grows when the line wanders
  RateParams p;
  const auto drive = LaserDrive::continuous(2.0, 40.0, 0.5, 150e6);
  const auto still = simulate(p, DiffusionParams{}, drive, 11);
  const auto wander = simulate(p, DiffusionParams{3e6, 0.2e-6, true}, drive, 11);
  auto count = [](const EventLog& l) {
    return std::count_if(l.events.begin(), l.events.end(), [](const Event& e) { return e.transition == Transition::Excite; });
  };
  EXPECT_GT(count(wander), 2 * count(still));
}
