// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "stglow/data.hpp"
#include "stglow/errors.hpp"

namespace stglow {
namespace {

std::string track_rows(std::int64_t ped, std::int64_t first_frame, int count, std::int64_t step = 10,
                       double vx = 0.5, double vy = 0.1) {
  std::ostringstream out;
  out.precision(17);
  for (int i = 0; i < count; ++i) {
    out << first_frame + i * step << ' ' << ped << ' ' << 1.0 + vx * i << ' ' << -2.0 + vy * i << '\n';
  }
  return out.str();
}

std::vector<RawTrack> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_eth_ucy(in, "test.txt");
}

TEST(Parse, TwoRowsMakeOneTrack) {
  const auto tracks = parse("10 3 1.5 2.5\n20 3 1.7 2.4\n");
  ASSERT_EQ(tracks.size(), 1u);
  EXPECT_EQ(tracks[0].ped_id, 3);
  EXPECT_EQ(tracks[0].frames, (std::vector<std::int64_t>{10, 20}));
  EXPECT_DOUBLE_EQ(tracks[0].positions(1, 0), 1.7);
}

TEST(Parse, EmptyInputGivesNoTracks) {
  EXPECT_TRUE(parse("").empty());
  EXPECT_TRUE(parse("\n  \n").empty());
}

TEST(Parse, FloatFormattedIdsAndTabs) {
  const auto tracks = parse("1.0000000e+01\t2.0\t0.5\t-0.5\n");
  ASSERT_EQ(tracks.size(), 1u);
  EXPECT_EQ(tracks[0].frames[0], 10);
  EXPECT_EQ(tracks[0].ped_id, 2);
}

TEST(Parse, MalformedRowsNameTheLine) {
  for (const std::string bad : {"1 2 3\n", "1 2 x 4\n", "1 2 3 4 5\n", "1.5 2 3 4\n"}) {
    try {
      parse("0 1 0 0\n" + bad);
      FAIL() << "no error for: " << bad;
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find("test.txt:2"), std::string::npos) << e.what();
    }
  }
}

TEST(Parse, DuplicateObservationRaises) {
  EXPECT_THROW(parse("10 1 0 0\n10 1 1 1\n"), ParseError);
}

TEST(Parse, ShuffledRowsGiveSameTracks) {
  const std::string text = track_rows(1, 0, 25) + track_rows(2, 30, 25) + track_rows(7, 0, 12);
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  std::mt19937_64 rng(4);
  std::shuffle(lines.begin(), lines.end(), rng);
  std::string shuffled;
  for (const auto& l : lines) shuffled += l + "\n";
  const auto a = parse(text), b = parse(shuffled);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].ped_id, b[i].ped_id);
    EXPECT_EQ(a[i].frames, b[i].frames);
    EXPECT_EQ(a[i].positions, b[i].positions);
  }
}

TEST(Parse, MissingFileRaises) {
  EXPECT_THROW(load_eth_ucy("/nonexistent/file.txt"), DataError);
}

TEST(AnnotationStep, IsGcdOfFrameGaps) {
  EXPECT_EQ(annotation_step(parse(track_rows(1, 0, 5, 10) + track_rows(2, 0, 3, 20))), 10);
  EXPECT_EQ(annotation_step(parse("5 1 0 0\n")), 1);
}

TEST(Windows, TwentyFramesGiveOneWindow) {
  const auto w = window_scenes(parse(track_rows(1, 0, 20)), 8, 12);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].obs_len(), 8);
  EXPECT_EQ(w[0].pred_len(), 12);
}

TEST(Windows, TwentyOneFramesGiveTwoWindows) {
  const auto w = window_scenes(parse(track_rows(1, 0, 21)), 8, 12);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[1].start_frame - w[0].start_frame, 10);
  EXPECT_EQ(window_scenes(parse(track_rows(1, 0, 21)), 8, 12, 2).size(), 1u);
}

TEST(Windows, OneWindowPerTarget) {
  const auto w = window_scenes(parse(track_rows(1, 0, 20) + track_rows(2, 0, 20, 10, -0.3, 0.2)), 8, 12);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].target, 0);
  EXPECT_EQ(w[1].target, 1);
  EXPECT_EQ(w[0].pedestrians(), 2);
}

TEST(Windows, PedestrianWithMissingFrameIsExcluded) {
  std::string gappy;
  {
    std::istringstream in(track_rows(2, 0, 20));
    int i = 0;
    for (std::string l; std::getline(in, l); ++i)
      if (i != 9) gappy += l + "\n";
  }
  const auto w = window_scenes(parse(track_rows(1, 0, 20) + gappy), 8, 12);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].ped_ids, (std::vector<std::int64_t>{1}));
  EXPECT_TRUE(window_scenes(parse(gappy), 8, 12).empty());
}

TEST(Windows, TargetLastObservedIsOriginAndDenormalizeRestores) {
  const auto tracks = parse(track_rows(1, 0, 22) + track_rows(4, 0, 22, 10, -0.2, 0.4));
  for (const auto& w : window_scenes(tracks, 8, 12)) {
    EXPECT_EQ(w.obs[w.target].row(7), Eigen::RowVector2d::Zero());
    for (Index j = 0; j < w.pedestrians(); ++j) {
      const auto& track = tracks[static_cast<std::size_t>(j)];
      const auto first = std::find(track.frames.begin(), track.frames.end(), w.start_frame) - track.frames.begin();
      const Matrix world = denormalize(w.obs[j], w.origin);
      EXPECT_LT((world - track.positions.middleRows(first, 8)).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_EQ(normalize(world, w.origin), w.obs[j]);
    }
  }
}

TEST(Windows, InvalidLengthsRaise) {
  EXPECT_THROW(window_scenes({}, 0, 12), ContractError);
  EXPECT_THROW(window_scenes({}, 8, 12, 0), ContractError);
}

TEST(Windows, NoPedestrianHasMissingSteps) {
  std::string text;
  std::mt19937_64 rng(9);
  for (int p = 0; p < 6; ++p) {
    std::istringstream in(track_rows(p, (p % 3) * 10, 30, 10, 0.1 * p, 0.2));
    for (std::string l; std::getline(in, l);)
      if (rng() % 10 != 0) text += l + "\n";
  }
  for (const auto& w : window_scenes(parse(text), 8, 12)) {
    for (Index j = 0; j < w.pedestrians(); ++j) {
      EXPECT_EQ(w.obs[j].rows(), 8);
      EXPECT_EQ(w.fut[j].rows(), 12);
      // Constant-velocity tracks stay evenly spaced when complete.
      const Matrix full = (Matrix(20, 2) << w.obs[j], w.fut[j]).finished();
      for (Index t = 1; t < 20; ++t)
        EXPECT_NEAR((full.row(t) - full.row(t - 1)).norm(), (full.row(1) - full.row(0)).norm(), 1e-9);
    }
  }
}

TEST(Retarget, ShiftsEveryTrajectory) {
  const auto w = window_scenes(parse(track_rows(1, 0, 20) + track_rows(2, 0, 20, 10, -0.3, 0.2)), 8, 12)[0];
  const SceneWindow r = retarget(w, 1);
  EXPECT_EQ(r.obs[1].row(7), Eigen::RowVector2d::Zero());
  EXPECT_LT((denormalize(r.fut[0], r.origin) - denormalize(w.fut[0], w.origin)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LeaveOneOut, HoldsOutNamedScene) {
  std::vector<NamedScene> scenes;
  std::size_t total = 0;
  for (const std::string name : {"eth", "hotel", "univ", "zara1", "zara2"}) {
    NamedScene s{name, window_scenes(parse(track_rows(1, 0, 20 + static_cast<int>(name.size()))), 8, 12, 1, name)};
    total += s.windows.size();
    scenes.push_back(s);
  }
  const auto [train, test] = leave_one_out_split("eth", scenes);
  EXPECT_EQ(train.size() + test.size(), total);
  std::set<std::string> train_names;
  for (const auto& w : train) train_names.insert(w.scene);
  EXPECT_EQ(train_names.size(), 4u);
  EXPECT_EQ(train_names.count("eth"), 0u);
  for (const auto& w : test) EXPECT_EQ(w.scene, "eth");
  EXPECT_THROW(leave_one_out_split("nope", scenes), ConfigError);
}

TEST(WriteReload, PositionsSurviveTo1e6) {
  SynthSpec spec;
  spec.kinds = {SynthKind::kCrossingPair, SynthKind::kGroupParallel, SynthKind::kTurn};
  spec.count = 9;
  spec.seed = 3;
  const auto windows = synth_scenes(spec);
  std::stringstream text;
  write_eth_ucy(text, windows);
  const auto reloaded = window_scenes(parse_eth_ucy(text, "mem"), 8, 12);
  // Every (window, target) pair reappears; match by world-frame position.
  Index matched = 0;
  for (const auto& w : windows) {
    const Matrix world = denormalize(w.obs[w.target], w.origin);
    for (const auto& r : reloaded) {
      const Matrix other = denormalize(r.obs[r.target], r.origin);
      if ((world - other).cwiseAbs().maxCoeff() < 1e-6) {
        EXPECT_LT((denormalize(w.fut[w.target], w.origin) - denormalize(r.fut[r.target], r.origin))
                      .cwiseAbs()
                      .maxCoeff(),
                  1e-6);
        EXPECT_EQ(r.pedestrians(), w.pedestrians());
        ++matched;
        break;
      }
    }
  }
  EXPECT_EQ(matched, static_cast<Index>(windows.size()));
}

TEST(Synth, StraightNoiselessIsLinearExtrapolation) {
  const auto w = synth_scenes(parse_synth_spec("synth:straight,count=5,seed=1,noise=0,speed_min=1,speed_max=1"));
  ASSERT_EQ(w.size(), 5u);
  for (const auto& s : w) {
    const Matrix& o = s.obs[0];
    const Eigen::RowVector2d v = o.row(7) - o.row(6);
    EXPECT_NEAR(v.norm(), 1.0, 1e-12);
    for (Index t = 0; t < 12; ++t) EXPECT_LT((s.fut[0].row(t) - (t + 1.0) * v).norm(), 1e-9);
  }
}

TEST(Synth, CrossingPairPathsMeet) {
  const auto w = synth_scenes(parse_synth_spec("synth:crossing_pair,count=20,seed=5"));
  for (const auto& s : w) {
    ASSERT_GE(s.pedestrians(), 2);
    double closest = 1e9;
    for (Index t = 0; t < 20; ++t) {
      const auto at = [&](Index j) -> Eigen::RowVector2d { return t < 8 ? s.obs[j].row(t) : s.fut[j].row(t - 8); };
      closest = std::min(closest, (at(0) - at(1)).norm());
    }
    EXPECT_LT(closest, 0.5);
  }
}

TEST(Synth, SameSeedSameScenes) {
  const SynthSpec spec = parse_synth_spec("synth:straight+turn+stop_and_go,count=6,seed=11");
  const auto a = synth_scenes(spec), b = synth_scenes(spec);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (Index j = 0; j < a[i].pedestrians(); ++j) {
      EXPECT_EQ(a[i].obs[j], b[i].obs[j]);
      EXPECT_EQ(a[i].fut[j], b[i].fut[j]);
    }
  SynthSpec other = spec;
  other.seed = 12;
  EXPECT_NE(synth_scenes(other)[0].fut[0], a[0].fut[0]);
}

TEST(Synth, KindsCycleAndTargetIsCentered) {
  const auto w = synth_scenes(parse_synth_spec("synth:group_parallel+straight,count=4,seed=2,neighbors=2"));
  ASSERT_EQ(w.size(), 4u);
  for (const auto& s : w) EXPECT_EQ(s.obs[s.target].row(7), Eigen::RowVector2d::Zero());
  EXPECT_EQ(w[1].pedestrians(), 3);  // straight walker plus two bystanders
}

TEST(Synth, HeadingRangeIsRespected) {
  const auto w = synth_scenes(parse_synth_spec("synth:straight,count=30,seed=3,noise=0,heading_min=0.2,heading_max=0.4"));
  for (const auto& s : w) {
    const Eigen::RowVector2d v = s.obs[0].row(7) - s.obs[0].row(6);
    const double heading = std::atan2(v(1), v(0));
    EXPECT_GE(heading, 0.2 - 1e-12);
    EXPECT_LE(heading, 0.4 + 1e-12);
  }
}

TEST(SynthSpecText, ParseFormatRoundTrip) {
  const SynthSpec s = parse_synth_spec("synth:turn+crossing_pair,count=7,seed=9,noise=0.1,obs_len=6,pred_len=4");
  EXPECT_EQ(s.kinds, (std::vector<SynthKind>{SynthKind::kTurn, SynthKind::kCrossingPair}));
  EXPECT_EQ(s.count, 7);
  EXPECT_EQ(s.obs_len, 6);
  const SynthSpec again = parse_synth_spec(format_synth_spec(s));
  EXPECT_EQ(again.kinds, s.kinds);
  EXPECT_EQ(again.seed, s.seed);
  EXPECT_DOUBLE_EQ(again.noise, s.noise);
  EXPECT_EQ(synth_scenes(again)[0].obs_len(), 6);
}

TEST(SynthSpecText, Errors) {
  EXPECT_THROW(parse_synth_kind("moonwalk"), ConfigError);
  EXPECT_THROW(parse_synth_spec("synth:straight,bogus=1"), ConfigError);
  EXPECT_THROW(parse_synth_spec("synth:straight,count=abc"), ConfigError);
  EXPECT_TRUE(is_synth_spec("synth:turn"));
  EXPECT_FALSE(is_synth_spec("data/eth.txt"));
  for (auto k : {SynthKind::kStraight, SynthKind::kTurn, SynthKind::kCrossingPair, SynthKind::kGroupParallel,
                 SynthKind::kStopAndGo})
    EXPECT_EQ(parse_synth_kind(synth_kind_name(k)), k);
}

}  // namespace
}  // namespace stglow
