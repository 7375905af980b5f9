#include "test_support.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

using namespace beaconloc;
using beaconloc::testing::make_scenario;
using beaconloc::testing::office_targets;
using beaconloc::testing::office_testbed;

namespace {

TestbedConfig s1_testbed() {
  TestbedConfig tb;
  tb.speed_of_sound = 340.0;
  tb.bounds = {make_vector(-1, -1), make_vector(20, 5)};
  tb.anchors = {{1, make_vector(0, 0), 0.0}, {2, make_vector(17, 0), 0.0}, {3, make_vector(5, 4), 0.0}};
  return tb;
}

std::vector<BeaconObservation> received_by(const SimulationResult& sim, ReceiverKind kind) {
  std::vector<BeaconObservation> out;
  for (const auto& o : sim.observations) {
    if (o.receiver_kind == kind) out.push_back(o);
  }
  auto by_key = [](const BeaconObservation& a, const BeaconObservation& b) { return a.key() < b.key(); };
  std::sort(out.begin(), out.end(), by_key);
  return out;
}

// Mean error of the all-pairs robust variant over `windows` single-window runs at the office points.
double mean_error(const NoiseModel& noise, int windows, int* fixes = nullptr) {
  const auto tb = office_testbed();
  const auto targets = office_targets();
  double sum = 0.0;
  int n = 0;
  for (int w = 0; w < windows; ++w) {
    const auto& target = targets[static_cast<std::size_t>(w) % targets.size()];
    const auto sim = simulate(make_scenario(tb, {target}, 18.0, noise, 1000 + static_cast<std::uint64_t>(w)));
    ObservationWindow win;
    win.observations = sim.observations;
    if (auto fix = locate(win, tb, SolverParams{})) {
      sum += (fix->position - target.position).norm();
      ++n;
    }
  }
  if (fixes != nullptr) *fixes = n;
  return n == 0 ? 0.0 : sum / n;
}

}  // namespace

TEST(GenerateSchedule, EightAnchorsEighteenSeconds) {
  const std::vector<int> ids = {1, 2, 3, 4, 5, 6, 7, 8};
  const auto e = generate_schedule(ScheduleConfig{}, ids, 18.0, 1);
  ASSERT_EQ(e.size(), 16u);
  for (std::size_t k = 0; k < e.size(); ++k) {
    EXPECT_EQ(e[k].anchor_id, ids[k % 8]);
    EXPECT_EQ(e[k].seqno, k / 8);
    EXPECT_EQ(e[k].time, static_cast<double>(k));
  }
}

TEST(GenerateSchedule, SingleAnchor) {
  ScheduleConfig cfg;
  cfg.slot_length = 0.5;
  cfg.beacon_duration = 0.2;
  const auto e = generate_schedule(cfg, {4}, 3.0, 1);
  ASSERT_EQ(e.size(), 6u);
  for (std::size_t k = 0; k < e.size(); ++k) {
    EXPECT_EQ(e[k].anchor_id, 4);
    EXPECT_EQ(e[k].seqno, k);
    EXPECT_EQ(e[k].time, 0.5 * static_cast<double>(k));
  }
}

TEST(GenerateSchedule, BackoffIsDeterministicAndBounded) {
  ScheduleConfig cfg;
  cfg.mode = ScheduleMode::random_backoff;
  cfg.backoff_max = 0.3;
  const std::vector<int> ids = {1, 2, 3, 4};
  const auto a = generate_schedule(cfg, ids, 40.0, 17);
  const auto b = generate_schedule(cfg, ids, 40.0, 17);
  const auto other = generate_schedule(cfg, ids, 40.0, 18);
  ASSERT_EQ(a.size(), 40u);
  bool differs = false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].time, b[k].time);
    const double slot_start = static_cast<double>(k);
    EXPECT_GE(a[k].time, slot_start);
    EXPECT_LT(a[k].time, slot_start + 0.3);
    differs = differs || a[k].time != other[k].time;
  }
  EXPECT_TRUE(differs);
}

TEST(GenerateSchedule, OnlyFullRounds) {
  EXPECT_EQ(generate_schedule(ScheduleConfig{}, {1, 2, 3}, 8.9, 1).size(), 6u);
  EXPECT_TRUE(generate_schedule(ScheduleConfig{}, {1, 2, 3}, 2.0, 1).empty());
}

TEST(Simulate, TwoAnchorTestbedsSimulateButCannotLocate) {
  auto tb = s1_testbed();
  tb.anchors.pop_back();
  EXPECT_THROW(tb.validate(), std::invalid_argument);
  const auto sim = simulate(make_scenario(tb, {{1, "T", make_vector(3, 3)}}, 2.0));
  EXPECT_EQ(sim.observations.size(), 2u * 3u);
  EXPECT_THROW(simulate(make_scenario(TestbedConfig{{}, tb.bounds}, {}, 2.0)), std::invalid_argument);
}

TEST(Simulate, PropagationDelay) {
  auto tb = s1_testbed();
  const auto sim = simulate(make_scenario(tb, {{1, "T", make_vector(17, 0)}}, 3.0));
  for (const auto& o : sim.observations) {
    if (o.receiver_kind == ReceiverKind::target && o.source_anchor_id == 1) {
      EXPECT_NEAR(o.timestamp, 0.05, 1e-15);
    }
    if (o.receiver_kind == ReceiverKind::anchor && o.source_anchor_id == 1 && o.receiver_id == 1) {
      EXPECT_EQ(o.timestamp, 0.0);
    }
  }
}

TEST(Simulate, SelfReceptionCrossesTheSeparation) {
  auto tb = s1_testbed();
  tb.anchors[1].mic_speaker_separation = 0.17;
  const auto sim = simulate(make_scenario(tb, {}, 3.0));
  for (const auto& o : sim.observations) {
    if (o.receiver_id == 2 && o.source_anchor_id == 2) {
      EXPECT_NEAR(o.timestamp, 1.0 + 0.17 / 340.0, 1e-15);
    }
  }
}

TEST(Simulate, TargetClockOffsetShiftsTargetTimestampsOnly) {
  const auto tb = office_testbed();
  const auto target = office_targets()[1];
  const auto base = simulate(make_scenario(tb, {target}, 18.0));
  NoiseModel shifted = NoiseModel::noiseless();
  shifted.clock_offset[{ReceiverKind::target, target.id}] = 5.0;
  const auto moved = simulate(make_scenario(tb, {target}, 18.0, shifted));

  const auto t0 = received_by(base, ReceiverKind::target);
  const auto t1 = received_by(moved, ReceiverKind::target);
  ASSERT_EQ(t0.size(), t1.size());
  for (std::size_t k = 0; k < t0.size(); ++k) EXPECT_EQ(t1[k].timestamp, t0[k].timestamp + 5.0);
  EXPECT_EQ(received_by(base, ReceiverKind::anchor), received_by(moved, ReceiverKind::anchor));

  ObservationWindow w0, w1;
  w0.observations = base.observations;
  w1.observations = moved.observations;
  const auto f0 = locate(w0, tb, SolverParams{});
  const auto f1 = locate(w1, tb, SolverParams{});
  ASSERT_TRUE(f0 && f1);
  EXPECT_LE((f0->position - f1->position).norm(), 1e-9);
}

TEST(Simulate, NlosBiasDelaysOnlyThatLink) {
  const auto tb = office_testbed();
  const auto target = office_targets()[3];
  const auto base = simulate(make_scenario(tb, {target}, 18.0));
  NoiseModel biased = NoiseModel::noiseless();
  biased.nlos_bias[{5, NodeId{ReceiverKind::target, target.id}}] = 3e-3;
  const auto late = simulate(make_scenario(tb, {target}, 18.0, biased));

  const auto t0 = received_by(base, ReceiverKind::target);
  const auto t1 = received_by(late, ReceiverKind::target);
  ASSERT_EQ(t0.size(), t1.size());
  for (std::size_t k = 0; k < t0.size(); ++k) {
    EXPECT_EQ(t1[k].timestamp, t0[k].source_anchor_id == 5 ? t0[k].timestamp + 3e-3 : t0[k].timestamp);
  }
  EXPECT_EQ(received_by(base, ReceiverKind::anchor), received_by(late, ReceiverKind::anchor));
}

TEST(Simulate, SelfReceptionsAreNeverMissedOrBiased) {
  NoiseModel noise = NoiseModel::noiseless();
  noise.miss_detect_prob = 0.9;
  for (int a = 1; a <= 8; ++a) noise.nlos_bias[{a, NodeId{ReceiverKind::anchor, a}}] = 1.0;
  const auto tb = office_testbed();
  const auto sim = simulate(make_scenario(tb, {office_targets()[0]}, 36.0, noise, 5));
  std::size_t self = 0;
  for (const auto& o : sim.observations) {
    if (o.receiver_kind == ReceiverKind::anchor && o.receiver_id == o.source_anchor_id) {
      ++self;
      const auto& e = sim.truth.emissions[o.seqno * 8 + static_cast<std::size_t>(o.source_anchor_id - 1)];
      EXPECT_EQ(o.timestamp, e.time);
    }
  }
  EXPECT_EQ(self, sim.truth.emissions.size());
}

TEST(Simulate, MissDetectionRateMatchesProbability) {
  NoiseModel noise = NoiseModel::noiseless();
  noise.miss_detect_prob = 0.3;
  const auto tb = office_testbed();
  const auto sim = simulate(make_scenario(tb, {office_targets()[0]}, 1800.0, noise, 11));
  const double links = static_cast<double>(sim.truth.emissions.size()) * 8.0;  // 7 peers + 1 target
  std::size_t heard = 0;
  for (const auto& o : sim.observations) heard += o.receiver_id != o.source_anchor_id || o.receiver_kind == ReceiverKind::target;
  const double rate = 1.0 - static_cast<double>(heard) / links;
  EXPECT_NEAR(rate, 0.3, 0.015);  // ~4.5 standard errors at n = 12800
}

TEST(Simulate, IdenticalSeedGivesIdenticalStream) {
  NoiseModel noise;
  noise.miss_detect_prob = 0.1;
  noise.clock_offset[{ReceiverKind::anchor, 4}] = 12.0;
  const auto sc = make_scenario(office_testbed(), office_targets(), 54.0, noise, 77);
  std::ostringstream a, b, c;
  write_observations(a, simulate(sc).observations);
  write_observations(b, simulate(sc).observations);
  auto other = sc;
  other.seed = 78;
  write_observations(c, simulate(other).observations);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str(), c.str());
}

TEST(Simulate, RejectsInvalidScenarios) {
  auto sc = make_scenario(office_testbed(), {{1, "out", make_vector(20, 1)}}, 18.0);
  EXPECT_THROW(simulate(sc), std::invalid_argument);
  sc = make_scenario(office_testbed(), office_targets(), 0.0);
  EXPECT_THROW(simulate(sc), std::invalid_argument);
  NoiseModel bad;
  bad.miss_detect_prob = 1.5;
  sc = make_scenario(office_testbed(), office_targets(), 18.0, bad);
  EXPECT_THROW(simulate(sc), std::invalid_argument);
  bad = NoiseModel{};
  bad.nlos_bias[{1, NodeId{ReceiverKind::target, 1}}] = -1e-3;
  sc = make_scenario(office_testbed(), office_targets(), 18.0, bad);
  EXPECT_THROW(simulate(sc), std::invalid_argument);
}

TEST(OracleTdoa, Examples) {
  const auto sim = simulate(make_scenario(s1_testbed(), {}, 3.0));
  EXPECT_EQ(oracle_tdoa(sim.truth, 1, 2, make_vector(8.5, 3.0)), 0.0);
  EXPECT_NEAR(oracle_tdoa(sim.truth, 1, 2, make_vector(0, 0)), 0.05, 1e-15);
  EXPECT_NEAR(oracle_tdoa(sim.truth, 1, 2, make_vector(17, 0)), -0.05, 1e-15);
}

TEST(Simulate, SeparationsStayExactThroughThePipeline) {
  auto tb = office_testbed();
  for (auto& a : tb.anchors) a.mic_speaker_separation = 0.02 * a.id;
  for (const auto& target : office_targets()) {
    NoiseModel noise = NoiseModel::noiseless();
    noise.clock_offset[{ReceiverKind::anchor, 3}] = -61.0;
    noise.clock_offset[{ReceiverKind::target, target.id}] = 88.0;
    const auto sim = simulate(make_scenario(tb, {target}, 18.0, noise));
    ObservationWindow w;
    w.observations = sim.observations;
    const auto sel = select_per_anchor(w);
    const auto truth = ground_truth_distances(tb);
    for (int b = 2; b <= 8; ++b) {
      const auto p = pair_intervals(sel.at(1), sel.at(b), 0.02, 0.02 * b);
      ASSERT_TRUE(p);
      EXPECT_NEAR(estimate_anchor_distance(*p, tb.speed_of_sound), truth.at({1, b}), 1e-9);
    }
    const auto fix = locate(w, tb, SolverParams{});
    ASSERT_TRUE(fix);
    EXPECT_LT((fix->position - target.position).norm(), 1e-6);
  }
}

TEST(Simulate, ErrorGrowsWithJitter) {
  double previous = 0.0;
  for (double sigma : {10e-6, 20e-6, 50e-6, 100e-6}) {
    NoiseModel noise = NoiseModel::noiseless();
    noise.timestamp_jitter_sigma = sigma;
    int fixes = 0;
    const double err = mean_error(noise, 102, &fixes);
    EXPECT_GE(fixes, 100);
    EXPECT_GT(err, previous) << "sigma " << sigma;
    previous = err;
  }
}

TEST(Simulate, MissDetectionDegradesGracefully) {
  for (double p : {0.1, 0.2}) {
    NoiseModel noise;
    noise.miss_detect_prob = p;
    int fixes = 0;
    mean_error(noise, 120, &fixes);
    EXPECT_GE(fixes, 0.9 * 120) << "miss probability " << p;
  }
}
