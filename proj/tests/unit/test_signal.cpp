#include <gtest/gtest.h>

#include <cmath>

#include "photoion/ctmc.hpp"
#include "photoion/events.hpp"
#include "photoion/protocols.hpp"
#include "photoion/signal.hpp"

using namespace photoion;

namespace {

/// Log alternating occupied and ionised intervals of the given lengths,
/// starting occupied at t = 0.
EventLog square_log(const std::vector<double>& lengths, double tail) {
  EventLog log;
  double t = 0.0;
  bool high = true;
  for (double len : lengths) {
    t += len;
    if (high) {
      log.events.push_back({t - 1e-9, Transition::Excite});
      log.events.push_back({t, Transition::DecayIonising});
    } else {
      log.events.push_back({t, Transition::Reset});
    }
    high = !high;
  }
  log.duration = t + tail;
  return log;
}

}  // namespace

TEST(Synthesize, EmptyLogNoNoiseIsConstantHighLevel) {
  EventLog log;
  log.duration = 0.05;
  TraceParams tp;
  tp.noise_sigma = 0.0;
  tp.level_high = 2.5;
  const auto tr = synthesize(log, tp, 1);
  ASSERT_EQ(tr.size(), 5000u);
  for (float v : tr.samples) ASSERT_EQ(v, 2.5f);
}

TEST(Synthesize, StepCrossesMidpointAfterLn2Tau) {
  const double t0 = 1e-3;
  EventLog log;
  log.duration = 2e-3;
  log.events = {{t0 - 1e-9, Transition::Excite}, {t0, Transition::DecayIonising}};
  TraceParams tp;
  tp.noise_sigma = 0.0;
  tp.sample_rate = 10e6;
  const auto tr = synthesize(log, tp, 1);
  double crossing = -1;
  for (std::size_t k = 1; k < tr.size(); ++k) {
    if (tr.samples[k - 1] >= 0.5f && tr.samples[k] < 0.5f) {
      const double f = (tr.samples[k - 1] - 0.5) / (tr.samples[k - 1] - tr.samples[k]);
      crossing = tr.time_at(k - 1) + f * tr.dt;
      break;
    }
  }
  ASSERT_GT(crossing, 0);
  EXPECT_NEAR(crossing - t0, std::log(2.0) * tp.time_constant(), 0.1e-6);
  EXPECT_NEAR(std::log(2.0) * tp.time_constant(), 11.03e-6, 0.01e-6);
}

TEST(Synthesize, SettlesToLevelsAndStaysBounded) {
  const double tau = TraceParams{}.time_constant();
  const auto log = square_log({20 * tau, 20 * tau, 3 * tau, 0.5 * tau, 20 * tau}, 20 * tau);
  TraceParams tp;
  tp.noise_sigma = 0.0;
  const auto tr = synthesize(log, tp, 1);
  for (float v : tr.samples) {
    ASSERT_GE(v, tp.level_low);
    ASSERT_LE(v, tp.level_high);
  }
  // late in the first low plateau and at the end of the final high plateau
  const auto k_low = static_cast<std::size_t>(39 * tau / tr.dt);
  EXPECT_LT(std::abs(tr.samples[k_low] - tp.level_low), 0.01);
  EXPECT_LT(std::abs(tr.samples.back() - tp.level_low), 0.01);
  EXPECT_EQ(synthesize(log, tp, 1), tr);
}

TEST(Synthesize, UnitDcGain) {
  EventLog log;
  log.duration = 0.2;
  log.events = {{0.01, Transition::Excite}, {0.011, Transition::DecayIonising}};
  TraceParams tp;
  tp.noise_sigma = 0.0;
  tp.level_low = -3.0;
  const auto tr = synthesize(log, tp, 1);
  EXPECT_FLOAT_EQ(tr.samples.back(), -3.0f);
}

TEST(Synthesize, NoiseIsSeededAndHasConfiguredSigma) {
  EventLog log;
  log.duration = 1.0;
  TraceParams tp;
  tp.noise_sigma = 0.2;
  const auto a = synthesize(log, tp, 9);
  EXPECT_EQ(a, synthesize(log, tp, 9));
  EXPECT_NE(a.samples, synthesize(log, tp, 10).samples);
  double s = 0, s2 = 0;
  for (float v : a.samples) {
    s += v - 1.0;
    s2 += (v - 1.0) * (v - 1.0);
  }
  const double n = static_cast<double>(a.size());
  EXPECT_NEAR(std::sqrt(s2 / n), 0.2, 0.002);
  EXPECT_NEAR(robust_noise_sigma(a.samples), 0.2, 0.004);
}

TEST(Synthesize, WindowedRenderingMatchesWholeRun) {
  RateParams p;
  const auto log = simulate(p, DiffusionParams{}, LaserDrive::continuous(0.05, 20.0, 1.0, 0.0), 4);
  TraceParams tp;
  tp.noise_sigma = 0.0;
  const auto whole = synthesize(log, tp, 1);
  const auto part = synthesize(log, tp, 1, 0.02, 0.03);
  EXPECT_EQ(part.size(), 1000u);
  // both settle to the same filtered value once the window start is forgotten
  for (std::size_t k = 500; k < part.size(); ++k)
    EXPECT_NEAR(part.samples[k], whole.samples[2000 + k], 1e-5);
}

TEST(Synthesize, RejectsBadParameters) {
  EventLog log;
  log.duration = 1.0;
  TraceParams tp;
  tp.sample_rate = 20e3;
  EXPECT_THROW(synthesize(log, tp, 1), ConfigError);
  tp = TraceParams{};
  tp.level_low = 2.0;
  EXPECT_THROW(synthesize(log, tp, 1), ConfigError);
  tp = TraceParams{};
  tp.noise_sigma = -1;
  EXPECT_THROW(synthesize(log, tp, 1), ConfigError);
  EXPECT_THROW(synthesize(log, TraceParams{}, 1, 0.5, 0.5), DomainError);
}

TEST(Synthesize, DetectionRecoversIntervalStructureOfSlowDwells) {
  const TraceParams base;
  const double tau = base.time_constant();
  Rng rng(17);
  std::vector<double> lengths;
  for (int i = 0; i < 400; ++i) lengths.push_back(10.0 * tau + rng.exponential(1.0 / (20.0 * tau)));
  const auto log = square_log(lengths, 30 * tau);
  ASSERT_TRUE(log.valid());
  const auto truth = dwells_from_log(log);
  // the detector drops the partial first interval
  const std::vector<double> true_high(truth.ionisation_times.begin() + 1, truth.ionisation_times.end());

  for (double noise : {0.0, 0.1}) {
    TraceParams tp;
    tp.noise_sigma = noise;
    const auto tr = synthesize(log, tp, 23);
    const auto plan = plan_detection(tr, tp, DetectionSettings{});
    const auto rec = detect_events(tr, plan.threshold, plan.hysteresis, plan.resolution);
    ASSERT_EQ(rec.ionisation_times.size(), true_high.size()) << "noise " << noise;
    ASSERT_EQ(rec.reset_times.size(), truth.reset_times.size()) << "noise " << noise;
    EXPECT_EQ(rec.excluded, 0u);
    if (noise == 0.0) {
      for (std::size_t i = 0; i < true_high.size(); ++i) EXPECT_NEAR(rec.ionisation_times[i], true_high[i], tr.dt);
      for (std::size_t i = 0; i < truth.reset_times.size(); ++i)
        EXPECT_NEAR(rec.reset_times[i], truth.reset_times[i], tr.dt);
    }
  }
}
