#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <random>

#include "test_support.hpp"

using namespace smsd;

namespace {

double cents(double hz, double ref) { return 1200.0 * std::log2(hz / ref); }

ConditioningFeatures make_features(std::vector<double> f0, std::vector<double> conf, std::vector<double> loud) {
  ConditioningFeatures f;
  f.f0_hz = FrameSeries(std::move(f0), 1, kFrameRate);
  f.f0_confidence = FrameSeries(std::move(conf), 1, kFrameRate);
  f.loudness_db = FrameSeries(std::move(loud), 1, kFrameRate);
  return f;
}

ConditioningFeatures random_features(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pitch(45.0, 75.0), conf(0.0, 1.0), loud(-100.0, -5.0);
  std::vector<double> f0(n), c(n), l(n);
  for (std::size_t i = 0; i < n; ++i) {
    f0[i] = midi_to_hz(pitch(rng));
    c[i] = conf(rng);
    l[i] = i % 17 == 0 ? -120.0 : loud(rng);
  }
  return make_features(f0, c, l);
}

}  // namespace

TEST(PitchTracker, SineWithinTwentyCents) {
  const auto track = track_f0(fixtures::sine(440.0, 1.0));
  ASSERT_EQ(track.f0_hz.frames(), 250u);
  for (std::size_t t = 8; t + 8 < track.f0_hz.frames(); ++t) {
    EXPECT_LT(std::abs(cents(track.f0_hz.at(t), 440.0)), 20.0) << t;
    EXPECT_GT(track.confidence.at(t), 0.9) << t;
  }
}

TEST(PitchTracker, TracksRangeEnds) {
  for (double hz : {55.0, 110.0, 1000.0, 1760.0}) {
    const auto track = track_f0(fixtures::sawtooth(hz, 0.5));
    for (std::size_t t = 16; t + 16 < track.f0_hz.frames(); ++t)
      EXPECT_LT(std::abs(cents(track.f0_hz.at(t), hz)), 20.0) << hz << " Hz frame " << t;
  }
}

TEST(PitchTracker, WhiteNoiseHasLowConfidence) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<double> x(16000);
  for (auto& v : x) v = u(rng);
  const auto track = track_f0(AudioBuffer(x, kSampleRate));
  double mean = 0.0;
  for (double c : track.confidence.data) mean += c;
  mean /= double(track.confidence.frames());
  EXPECT_LT(mean, 0.3);
}

TEST(PitchTracker, SilenceHasZeroConfidence) {
  const auto track = track_f0(fixtures::silence(0.5));
  for (double c : track.confidence.data) EXPECT_EQ(c, 0.0);
  for (double f : track.f0_hz.data) EXPECT_GE(f, 0.0);
}

TEST(PitchTracker, UnvoicedFramesHoldLastVoicedPitch) {
  auto a = fixtures::sine(330.0, 0.5);
  const auto tail = fixtures::silence(0.5);
  a.samples.insert(a.samples.end(), tail.samples.begin(), tail.samples.end());
  const auto track = track_f0(a);
  const std::size_t n = track.f0_hz.frames();
  EXPECT_LT(track.confidence.at(n - 1), 0.5);
  std::size_t last_voiced = 0;
  for (std::size_t t = 0; t < n; ++t)
    if (track.confidence.at(t) >= 0.5) last_voiced = t;
  ASSERT_GT(last_voiced, 100u);
  ASSERT_LT(last_voiced, n - 50);
  for (std::size_t t = last_voiced + 1; t < n; ++t) EXPECT_EQ(track.f0_hz.at(t), track.f0_hz.at(last_voiced)) << t;
  EXPECT_LT(std::abs(cents(track.f0_hz.at(100), 330.0)), 20.0);
}

TEST(ExtractFeatures, FrameCounts) {
  const auto f = extract_features(fixtures::sine(220.0, 2.0), true);
  EXPECT_EQ(f.f0_hz.frames(), 500u);
  EXPECT_EQ(f.f0_confidence.frames(), 500u);
  EXPECT_EQ(f.loudness_db.frames(), 500u);
  ASSERT_TRUE(f.mfcc.has_value());
  EXPECT_EQ(f.mfcc->frames(), 250u);
  EXPECT_EQ(f.mfcc->dim, 30u);
}

TEST(ExtractFeatures, MfccAbsentWhenNotRequested) {
  EXPECT_FALSE(extract_features(fixtures::sine(220.0, 0.5), false).mfcc.has_value());
}

TEST(ExtractFeatures, SidecarPassthrough) {
  const auto dir = fixtures::temp_dir("sidecar");
  const auto audio = fixtures::sine(220.0, 0.5);
  auto f = random_features(125, 4);
  write_sidecar(dir / "a.features.txt", f);
  const auto sc = read_sidecar(dir / "a.features.txt");
  const auto out = extract_features(audio, false, sc);
  EXPECT_EQ(out.f0_hz.data, f.f0_hz.data);
  EXPECT_EQ(out.f0_confidence.data, f.f0_confidence.data);
  EXPECT_EQ(out.loudness_db.data, f.loudness_db.data);
}

TEST(ExtractFeatures, MfccFileRoundTripsExactly) {
  const auto dir = fixtures::temp_dir("mfccfile");
  const auto m = mfcc(fixtures::synthetic_voice(0.5));
  write_mfcc_file(dir / "a.mfcc.txt", m);
  EXPECT_EQ(read_mfcc_file(dir / "a.mfcc.txt"), m);
}

TEST(DatasetStatsTest, ConstantA4IsMidi69) {
  const auto f = make_features(std::vector<double>(100, 440.0), std::vector<double>(100, 0.95), std::vector<double>(100, -20.0));
  EXPECT_DOUBLE_EQ(compute_dataset_stats({f}).mean_midi_pitch, 69.0);
}

TEST(DatasetStatsTest, OctavesAroundA4AverageTo69) {
  std::vector<double> f0(100);
  for (std::size_t i = 0; i < f0.size(); ++i) f0[i] = i < 50 ? 220.0 : 880.0;
  const auto f = make_features(f0, std::vector<double>(100, 0.9), std::vector<double>(100, -30.0));
  EXPECT_NEAR(compute_dataset_stats({f}).mean_midi_pitch, 69.0, 1e-12);
}

TEST(DatasetStatsTest, MatchesBruteForce) {
  std::vector<ConditioningFeatures> corpus = {random_features(300, 1), random_features(77, 2), random_features(512, 3)};
  // Independent two-pass oracle.
  std::vector<double> pitches, louds;
  for (const auto& f : corpus)
    for (std::size_t t = 0; t < f.frames(); ++t) {
      if (f.f0_confidence.at(t) > 0.8) pitches.push_back(69.0 + 12.0 * std::log2(f.f0_hz.at(t) / 440.0));
      if (f.loudness_db.at(t) > -119.0) louds.push_back(f.loudness_db.at(t));
    }
  double pm = 0.0, lm = 0.0, lv = 0.0;
  for (double p : pitches) pm += p;
  pm /= double(pitches.size());
  for (double l : louds) lm += l;
  lm /= double(louds.size());
  for (double l : louds) lv += (l - lm) * (l - lm);
  const double ls = std::sqrt(lv / double(louds.size()));
  const auto s = compute_dataset_stats(corpus);
  EXPECT_NEAR(s.mean_midi_pitch, pm, 1e-9);
  EXPECT_NEAR(s.mean_loudness_db, lm, 1e-9);
  EXPECT_NEAR(s.std_loudness_db, ls, 1e-9);
  EXPECT_GE(s.std_loudness_db, 0.0);
}

TEST(DatasetStatsTest, PermutationInvariant) {
  std::vector<ConditioningFeatures> corpus = {random_features(50, 7), random_features(60, 8), random_features(70, 9)};
  const auto a = compute_dataset_stats(corpus);
  std::reverse(corpus.begin(), corpus.end());
  const auto b = compute_dataset_stats(corpus);
  EXPECT_NEAR(a.mean_midi_pitch, b.mean_midi_pitch, 1e-12);
  EXPECT_NEAR(a.mean_loudness_db, b.mean_loudness_db, 1e-12);
  EXPECT_NEAR(a.std_loudness_db, b.std_loudness_db, 1e-12);
}

TEST(DatasetStatsTest, Errors) {
  EXPECT_THROW(compute_dataset_stats({}), Error);
  const auto f = make_features(std::vector<double>(10, 440.0), std::vector<double>(10, 0.1), std::vector<double>(10, -20.0));
  EXPECT_THROW(compute_dataset_stats({f}), Error);
}

TEST(Precondition, TransferDefaults) {
  const auto d = PreconditionOptions::transfer_defaults();
  EXPECT_TRUE(d.use_statistics);
  EXPECT_EQ(d.mask_threshold, 1.0);
  EXPECT_EQ(d.quiet, 20.0);
  EXPECT_EQ(d.autotune, 0.0);
  EXPECT_EQ(d.octave_shift, 1);
  EXPECT_EQ(d.loudness_shift, -10.0);
}

TEST(Precondition, OctaveShiftMovesMeanPitchByTwelve) {
  // Melody with mean MIDI pitch 51.30.
  std::vector<double> midi = {49.0, 50.5, 51.3, 52.1, 53.6, 51.3, 50.3};
  double sum = 0.0;
  for (double m : midi) sum += m;
  midi.push_back(51.30 * double(midi.size() + 1) - sum);
  std::vector<double> f0;
  for (double m : midi) f0.push_back(midi_to_hz(m));
  const auto f = make_features(f0, std::vector<double>(f0.size(), 0.9), std::vector<double>(f0.size(), -20.0));
  EXPECT_NEAR(mean_midi_pitch(f.f0_hz), 51.30, 1e-9);
  PreconditionOptions o;
  o.octave_shift = 1;
  EXPECT_NEAR(mean_midi_pitch(precondition(f, o, std::nullopt).f0_hz), 63.30, 1e-9);
}

TEST(Precondition, OctaveShiftIsExactPowerOfTwo) {
  const auto f = random_features(200, 5);
  for (int s : {-2, -1, 1, 3}) {
    PreconditionOptions o;
    o.octave_shift = s;
    const auto out = precondition(f, o, std::nullopt);
    for (std::size_t t = 0; t < f.frames(); ++t) EXPECT_EQ(out.f0_hz.at(t), f.f0_hz.at(t) * std::exp2(s));
  }
}

TEST(Precondition, IdentityChainIsByteExact) {
  auto f = random_features(300, 6);
  f.mfcc = FrameSeries(std::vector<double>(150 * 30, 0.25), 30, kMfccFrameRate);
  const auto out = precondition(f, PreconditionOptions::identity(), std::nullopt);
  EXPECT_EQ(out, f);
  EXPECT_EQ(std::memcmp(out.f0_hz.data.data(), f.f0_hz.data.data(), f.f0_hz.data.size() * sizeof(double)), 0);
  EXPECT_EQ(std::memcmp(out.loudness_db.data.data(), f.loudness_db.data.data(), f.loudness_db.data.size() * sizeof(double)), 0);
}

TEST(Precondition, AutotuneSnapsDriftToA4) {
  std::vector<double> f0;
  for (int i = 0; i < 61; ++i) f0.push_back(440.0 * std::exp2((-30.0 + i) / 1200.0));
  const auto f = make_features(f0, std::vector<double>(f0.size(), 0.9), std::vector<double>(f0.size(), -20.0));
  PreconditionOptions o;
  o.autotune = 1.0;
  for (double v : precondition(f, o, std::nullopt).f0_hz.data) EXPECT_NEAR(v, 440.0, 1e-9);
}

TEST(Precondition, AutotuneIdempotentAtFullStrength) {
  const auto f = random_features(200, 12);
  PreconditionOptions o;
  o.autotune = 1.0;
  const auto once = precondition(f, o, std::nullopt);
  const auto twice = precondition(once, o, std::nullopt);
  for (std::size_t t = 0; t < f.frames(); ++t) EXPECT_NEAR(twice.f0_hz.at(t), once.f0_hz.at(t), 1e-9);
}

TEST(Precondition, StatisticsMatchDatasetMoments) {
  const auto f = random_features(400, 13);
  const DatasetStats target{60.0, -30.0, 6.0};
  PreconditionOptions o;
  o.use_statistics = true;
  const auto out = precondition(f, o, target);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < f.frames(); ++t)
    if (f.loudness_db.at(t) > -119.0) {
      sum += out.loudness_db.at(t);
      ++n;
    }
  const double mean = sum / double(n);
  for (std::size_t t = 0; t < f.frames(); ++t)
    if (f.loudness_db.at(t) > -119.0) sq += std::pow(out.loudness_db.at(t) - mean, 2);
  EXPECT_NEAR(mean, -30.0, 1e-9);
  EXPECT_NEAR(std::sqrt(sq / double(n)), 6.0, 1e-9);
  EXPECT_THROW(precondition(f, o, std::nullopt), Error);
}

TEST(Precondition, MaskingOnlyAttenuatesLowScoreFrames) {
  const auto f = random_features(300, 14);
  PreconditionOptions o;
  o.mask_threshold = 1.0;
  o.quiet = 20.0;
  const auto out = precondition(f, o, std::nullopt);
  EXPECT_EQ(out.f0_hz, f.f0_hz);
  EXPECT_EQ(out.f0_confidence, f.f0_confidence);
  const auto scores = masking_scores(f);
  const double med = median(scores);
  std::size_t attenuated = 0;
  for (std::size_t t = 0; t < f.frames(); ++t) {
    if (scores[t] < med) {
      EXPECT_EQ(out.loudness_db.at(t), f.loudness_db.at(t) - 20.0);
      ++attenuated;
    } else {
      EXPECT_EQ(out.loudness_db.at(t), f.loudness_db.at(t));
    }
  }
  EXPECT_GT(attenuated, 100u);
}

TEST(Precondition, LoudnessShiftIsAdditive) {
  const auto f = random_features(50, 15);
  PreconditionOptions o;
  o.loudness_shift = -10.0;
  const auto out = precondition(f, o, std::nullopt);
  for (std::size_t t = 0; t < f.frames(); ++t) EXPECT_EQ(out.loudness_db.at(t), f.loudness_db.at(t) - 10.0);
}

TEST(Precondition, RejectsInvalidOptions) {
  const auto f = random_features(10, 16);
  PreconditionOptions o;
  o.quiet = -1.0;
  EXPECT_THROW(precondition(f, o, std::nullopt), Error);
  o = {};
  o.autotune = 1.5;
  EXPECT_THROW(precondition(f, o, std::nullopt), Error);
}

TEST(Median, EvenAndOdd) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 3.0, 2.0}), 2.5);
}
