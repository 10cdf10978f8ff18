#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace smsd;
using namespace smsd::fixtures;

namespace {

const std::filesystem::path kConfigs = SMSD_CONFIG_DIR;

Example quarter_second_clip(bool with_mfcc) {
  auto audio = synthetic_voice(0.25);
  return {audio, extract_features(audio, with_mfcc), "clip"};
}

void expect_within(const ad::GradCheckReport& report, double tolerance) {
  for (const auto& [name, c] : report) {
    EXPECT_LT(c.max_rel_error, tolerance) << name << " (" << c.checked << " coords)";
  }
}

}  // namespace

// Decoder, synthesizers, reverb and multi-scale loss, 64 coordinates per tensor.

TEST(FullGraph, Float32GradientMatchesFiniteDifferences) {
  const auto cfg = ConfigFile::load(kConfigs / "desk.conf").to_train_config().model;
  ad::GradCheckOptions opts;
  opts.eps = kFullGraphEps;
  expect_within(full_graph_grad_check<float, double>(cfg, quarter_second_clip(false), 0, opts), 1e-3);
}

TEST(FullGraph, Float64GradientMatchesFiniteDifferences) {
  const auto cfg = ConfigFile::load(kConfigs / "desk.conf").to_train_config().model;
  ad::GradCheckOptions opts;
  opts.eps = kFullGraphEps;
  expect_within(full_graph_grad_check<double, long double>(cfg, quarter_second_clip(false), 0, opts), 1e-5);
}
