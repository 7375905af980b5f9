#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace beaconloc;
using beaconloc::testing::make_scenario;
using beaconloc::testing::office_targets;
using beaconloc::testing::office_testbed;

namespace {

BeaconObservation target_obs(double t, int src = 1, std::uint64_t seq = 0) {
  return {1, ReceiverKind::target, src, seq, t};
}

}  // namespace

TEST(Distance, Examples) {
  EXPECT_DOUBLE_EQ(distance(make_vector(0, 0), make_vector(3, 4)), 5.0);
  EXPECT_DOUBLE_EQ(distance(make_vector(1.5, -2), make_vector(1.5, -2)), 0.0);
  EXPECT_DOUBLE_EQ(distance(make_vector(0, 0, 0), make_vector(1, 2, 2)), 3.0);
}

TEST(Distance, DimensionMismatchThrows) {
  EXPECT_THROW(distance(make_vector(0, 0), make_vector(0, 0, 0)), std::invalid_argument);
}

TEST(Distance, MetricProperties) {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto p = make_vector(u(gen), u(gen), u(gen));
    const auto q = make_vector(u(gen), u(gen), u(gen));
    const auto r = make_vector(u(gen), u(gen), u(gen));
    EXPECT_EQ(distance(p, q), distance(q, p));
    EXPECT_GT(distance(p, q), 0.0);
    EXPECT_EQ(distance(p, p), 0.0);
    EXPECT_LE(distance(p, r), distance(p, q) + distance(q, r) + 1e-12);
  }
}

TEST(TestbedConfig, ValidationRejectsBadConfigs) {
  auto tb = office_testbed();
  EXPECT_NO_THROW(tb.validate());

  auto dup = tb;
  dup.anchors[1].id = dup.anchors[0].id;
  EXPECT_THROW(dup.validate(), std::invalid_argument);

  auto outside = tb;
  outside.anchors[0].position(0) = 20.0;
  EXPECT_THROW(outside.validate(), std::invalid_argument);

  auto slow = tb;
  slow.speed_of_sound = 0.0;
  EXPECT_THROW(slow.validate(), std::invalid_argument);

  auto few = tb;
  few.anchors.resize(2);
  EXPECT_THROW(few.validate(), std::invalid_argument);

  auto negative_sep = tb;
  negative_sep.anchors[0].mic_speaker_separation = -0.1;
  EXPECT_THROW(negative_sep.validate(), std::invalid_argument);
}

TEST(TestbedConfig, TwoDimensionalModeDropsZ) {
  const auto tb = office_testbed();
  EXPECT_EQ(tb.position(1).size(), 2);
  EXPECT_DOUBLE_EQ(tb.position(1)(0), 4.90);
  EXPECT_EQ(tb.num_anchors_req(), 3);
}

TEST(SolverParams, Validation) {
  SolverParams p;
  EXPECT_NO_THROW(p.validate());
  p.num_anchors_req = 5;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.ddoa_err_thr = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(WindowObservations, SingleWindow) {
  const std::vector<BeaconObservation> s = {target_obs(0.5, 1, 0), target_obs(17.9, 2, 0)};
  const auto w = window_observations(s, 18.0, 0.0);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].start_time, 0.0);
  EXPECT_EQ(w[0].observations.size(), 2u);
}

TEST(WindowObservations, BoundaryCase) {
  const std::vector<BeaconObservation> s = {target_obs(0.5, 1, 0), target_obs(18.1, 2, 0)};
  const auto w = window_observations(s, 18.0, 0.0);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[1].start_time, 18.0);
}

TEST(WindowObservations, DefaultOriginIsFirstTargetTimestamp) {
  const std::vector<BeaconObservation> s = {target_obs(100.5, 1, 0), target_obs(118.4, 2, 0), target_obs(118.6, 3, 0)};
  const auto w = window_observations(s, 18.0);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].start_time, 100.5);
  EXPECT_EQ(w[0].observations.size(), 2u);
}

TEST(WindowObservations, EmptyStream) {
  EXPECT_TRUE(window_observations({}, 18.0).empty());
}

TEST(WindowObservations, AnchorSideJoinsBySeqnoNotTime) {
  // The anchor's clock runs 1000 s ahead; its record still lands with the target's reception.
  const std::vector<BeaconObservation> s = {
      {3, ReceiverKind::anchor, 3, 41, 1020.0}, target_obs(20.01, 3, 41), target_obs(2.0, 2, 7)};
  const auto w = window_observations(s, 18.0, 0.0);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[1].observations.size(), 2u);
  EXPECT_EQ(w[1].observations[0].receiver_kind, ReceiverKind::anchor);
}

TEST(WindowObservations, RejectsMultipleTargets) {
  const std::vector<BeaconObservation> s = {target_obs(1.0), {2, ReceiverKind::target, 1, 0, 1.0}};
  EXPECT_THROW(window_observations(s, 18.0), std::invalid_argument);
}

TEST(WindowObservations, NineSlotCycleGivesTwoBeaconsPerAnchor) {
  auto sc = make_scenario(office_testbed(), {office_targets()[0]}, 36.0);
  sc.schedule.cycle_slots = 9;
  const auto sim = simulate(sc);
  const auto windows = window_observations(sim.observations, 18.0, 0.0);
  ASSERT_EQ(windows.size(), 2u);
  for (const auto& w : windows) {
    std::map<int, std::set<std::uint64_t>> beacons;
    for (const auto& o : w.observations) {
      if (o.receiver_kind == ReceiverKind::target) beacons[o.source_anchor_id].insert(o.seqno);
    }
    ASSERT_EQ(beacons.size(), 8u);
    for (const auto& [id, seqs] : beacons) EXPECT_EQ(seqs.size(), 2u) << "anchor " << id;
  }
  const auto sel = select_per_anchor(windows[0]);
  ASSERT_EQ(sel.size(), 8u);
  for (const auto& [id, b] : sel) EXPECT_EQ(b.seqno, 1u);
}

TEST(WindowObservations, PartitionProperty) {
  NoiseModel noise;
  noise.miss_detect_prob = 0.3;
  noise.clock_offset[{ReceiverKind::anchor, 2}] = 40.0;
  noise.clock_offset[{ReceiverKind::target, 1}] = -7.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto sc = make_scenario(office_testbed(), {office_targets()[seed % 6]}, 80.0, noise, seed);
    const auto sim = simulate(sc);
    const auto windows = window_observations(sim.observations, 18.0);
    std::vector<BeaconObservation> joined;
    for (const auto& w : windows) {
      for (const auto& o : w.observations) {
        joined.push_back(o);
        if (o.receiver_kind == ReceiverKind::target) {
          EXPECT_GE(o.timestamp, w.start_time);
          EXPECT_LT(o.timestamp, w.start_time + w.length);
        }
      }
    }
    auto by_key = [](const BeaconObservation& a, const BeaconObservation& b) { return a.key() < b.key(); };
    auto original = sim.observations;
    std::sort(original.begin(), original.end(), by_key);
    std::sort(joined.begin(), joined.end(), by_key);
    EXPECT_EQ(joined, original);
  }
}

TEST(SplitByTarget, SharesAnchorObservations) {
  const std::vector<BeaconObservation> s = {{1, ReceiverKind::anchor, 1, 0, 0.0},
                                            {1, ReceiverKind::target, 1, 0, 0.1},
                                            {2, ReceiverKind::target, 1, 0, 0.2}};
  const auto split = split_by_target(s);
  ASSERT_EQ(split.size(), 2u);
  EXPECT_EQ(split.at(1).size(), 2u);
  EXPECT_EQ(split.at(2).size(), 2u);
}

TEST(SelectPerAnchor, LatestCompleteBeaconWins) {
  ObservationWindow w;
  w.observations = {{3, ReceiverKind::anchor, 3, 41, 1.0}, {1, ReceiverKind::target, 3, 41, 1.01},
                    {3, ReceiverKind::anchor, 3, 42, 9.0}, {1, ReceiverKind::target, 3, 42, 9.01}};
  const auto sel = select_per_anchor(w);
  ASSERT_EQ(sel.size(), 1u);
  EXPECT_EQ(sel.at(3).seqno, 42u);
  EXPECT_EQ(sel.at(3).target_timestamp, 9.01);
}

TEST(SelectPerAnchor, BeaconMissedByTargetIsExcluded) {
  ObservationWindow w;
  w.observations = {{5, ReceiverKind::anchor, 5, 1, 1.0}, {4, ReceiverKind::anchor, 5, 1, 1.02},
                    {4, ReceiverKind::anchor, 4, 1, 2.0}, {1, ReceiverKind::target, 4, 1, 2.01}};
  const auto sel = select_per_anchor(w);
  EXPECT_FALSE(sel.contains(5));
  EXPECT_TRUE(sel.contains(4));
}

TEST(SelectPerAnchor, BeaconWithoutSelfDecodeIsExcluded) {
  ObservationWindow w;
  w.observations = {{4, ReceiverKind::anchor, 5, 1, 1.02}, {1, ReceiverKind::target, 5, 1, 1.01}};
  EXPECT_TRUE(select_per_anchor(w).empty());
}

TEST(SelectPerAnchor, MatchesBruteForceEnumeration) {
  NoiseModel noise = NoiseModel::noiseless();
  noise.miss_detect_prob = 0.5;
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const auto sim = simulate(make_scenario(office_testbed(), {office_targets()[2]}, 18.0, noise, seed));
    ObservationWindow w;
    w.observations = sim.observations;
    const auto sel = select_per_anchor(w);

    // Enumerate every (anchor, seqno) and test completeness directly on the raw records.
    std::map<int, SelectedBeacon> expected;
    for (const auto& e : sim.truth.emissions) {
      const BeaconObservation* self = nullptr;
      const BeaconObservation* tgt = nullptr;
      std::map<int, double> heard;
      for (const auto& o : sim.observations) {
        if (o.source_anchor_id != e.anchor_id || o.seqno != e.seqno) continue;
        if (o.receiver_kind == ReceiverKind::target) tgt = &o;
        if (o.receiver_kind == ReceiverKind::anchor) {
          heard[o.receiver_id] = o.timestamp;
          if (o.receiver_id == e.anchor_id) self = &o;
        }
      }
      if (self == nullptr || tgt == nullptr) continue;
      auto it = expected.find(e.anchor_id);
      if (it == expected.end() || it->second.seqno < e.seqno) {
        expected[e.anchor_id] = SelectedBeacon{e.anchor_id, e.seqno, tgt->timestamp, heard};
      }
    }
    ASSERT_EQ(sel.size(), expected.size()) << "seed " << seed;
    for (const auto& [id, b] : expected) {
      EXPECT_EQ(sel.at(id).seqno, b.seqno);
      EXPECT_EQ(sel.at(id).target_timestamp, b.target_timestamp);
      EXPECT_EQ(sel.at(id).heard_by, b.heard_by);
    }
  }
}

TEST(SelectPerAnchor, IdempotentAndOrderIndependent) {
  NoiseModel noise;
  noise.miss_detect_prob = 0.2;
  const auto sim = simulate(make_scenario(office_testbed(), {office_targets()[4]}, 18.0, noise, 99));
  ObservationWindow w;
  w.observations = sim.observations;
  const auto reference = select_per_anchor(w);

  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto shuffled = w;
    std::shuffle(shuffled.observations.begin(), shuffled.observations.end(), gen);
    // duplicates must not matter either
    shuffled.observations.insert(shuffled.observations.end(), w.observations.begin(), w.observations.begin() + 20);
    const auto sel = select_per_anchor(shuffled);
    ASSERT_EQ(sel.size(), reference.size());
    for (const auto& [id, b] : reference) {
      EXPECT_EQ(sel.at(id).seqno, b.seqno);
      EXPECT_EQ(sel.at(id).heard_by, b.heard_by);
      EXPECT_EQ(sel.at(id).target_timestamp, b.target_timestamp);
    }
  }
}
