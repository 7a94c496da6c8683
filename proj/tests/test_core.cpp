#include <gtest/gtest.h>

#include "lfd/config.hpp"
#include "lfd/core_data.hpp"
#include "lfd/sim2d.hpp"

using namespace lfd;

namespace {

json two_frame_corpus() {
  return json::parse(R"({
    "header": {"dt": 0.01, "feature_names": ["dx", "dy", "force"], "workspace": {"min": [0, 0], "max": [1, 1]}},
    "demos": [{"id": 4, "frames": [
      {"t": 0.0, "s": [0.1, 0.2], "f": [0.0, 1.0, 0.0]},
      {"t": 0.01, "s": [0.15, 0.2], "f": [2.0, 1.0, 3.0]},
      {"t": 0.02, "s": [0.2, 0.25], "f": [4.0, 1.0, 6.0]}]}]
  })");
}

}  // namespace

TEST(CoreData, MissingActionsAreStateDeltas) {
  const ObservationSet set = corpus_from_json(two_frame_corpus());
  const auto& fr = set.demos.at(0).frames;
  EXPECT_NEAR(fr[0].a(0), 0.05, 1e-15);
  EXPECT_NEAR(fr[1].a(1), 0.05, 1e-15);
  EXPECT_EQ(fr[2].a, Vec::Zero(2));
}

TEST(CoreData, CorpusRoundTripIsByteIdentical) {
  const ObservationSet set = sim::make_corpus(std::vector<sim::LabeledDemo>{sim::scripted_demo(3, 0.5, 1)});
  const std::string once = corpus_to_json(set).dump();
  EXPECT_EQ(corpus_to_json(corpus_from_json(json::parse(once))).dump(), once);
}

TEST(CoreData, RejectsInvalidDemonstrations) {
  json j = two_frame_corpus();
  j["demos"][0]["frames"].erase(1);
  j["demos"][0]["frames"].erase(1);
  EXPECT_THROW(corpus_from_json(j), ValidationError);

  j = two_frame_corpus();
  j["demos"][0]["frames"][1]["t"] = 0.0;
  EXPECT_THROW(corpus_from_json(j), ValidationError);

  j = two_frame_corpus();
  j["demos"][0]["frames"][2]["s"] = {1.5, 0.2};
  EXPECT_THROW(corpus_from_json(j), ValidationError);

  j = two_frame_corpus();
  j["demos"][0]["frames"][2]["f"] = {1.0, 2.0};
  EXPECT_THROW(corpus_from_json(j), ValidationError);

  Demonstration d = corpus_from_json(two_frame_corpus()).demos[0];
  d.frames[1].f(0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(validate_demo(d, 3), ValidationError);
}

TEST(CoreData, RejectsMalformedDocuments) {
  EXPECT_THROW(corpus_from_json(json::object()), SchemaError);
  json j = two_frame_corpus();
  j["demos"][0]["frames"][0]["s"] = {"a", 0.2};
  EXPECT_THROW(corpus_from_json(j), SchemaError);
  j = two_frame_corpus();
  j["demos"][0].erase("id");
  EXPECT_THROW(corpus_from_json(j), SchemaError);
  EXPECT_THROW(labels_from_json(json::parse(R"({"x": [1, 2]})")), SchemaError);
}

TEST(CoreData, NormalizationCentresAndScalesEachFeature) {
  const auto [norm, p] = normalize_features(corpus_from_json(two_frame_corpus()));
  EXPECT_TRUE(p.constant[1]);
  EXPECT_FALSE(p.constant[0]);
  const auto& fr = norm.demos[0].frames;
  EXPECT_DOUBLE_EQ(fr[0].f(0), (0.0 - 2.0) / 4.0);
  EXPECT_DOUBLE_EQ(fr[2].f(2), (6.0 - 3.0) / 6.0);
  EXPECT_DOUBLE_EQ(fr[1].f(1), 1.0);
  ASSERT_TRUE(norm.norm.has_value());
  EXPECT_TRUE(norm_from_json(norm_to_json(p)) == p);
}

TEST(CoreData, LabelsRoundTrip) {
  const LabelMap labels{{1, {1, 1, 2}}, {7, {3}}};
  EXPECT_EQ(labels_from_json(labels_to_json(labels)), labels);
}

TEST(Config, DefaultsRoundTripAndUnknownFieldsAreRejected) {
  const EngineConfig c;
  EXPECT_EQ(config_to_json(config_from_json(config_to_json(c))).dump(), config_to_json(c).dump());
  EXPECT_THROW(config_from_json(json::parse(R"({"sampler": {"iters": 5}})")), SchemaError);
  EXPECT_THROW(config_from_json(json::parse(R"({"extra": 1})")), SchemaError);
  EXPECT_THROW(config_from_json(json::parse(R"({"sampler": {"gamma": 1.0}})")), ValidationError);
  const EngineConfig t = config_from_json(json::parse(R"({"sampler": {"iterations": 7, "mode": "bnirl"}, "motion": {"components": 3}})"));
  EXPECT_EQ(t.sampler.iterations, 7);
  EXPECT_EQ(t.sampler.mode, SegMode::bnirl);
  EXPECT_EQ(t.motion.components, 3);
  EXPECT_EQ(t.motion.eps_cycles, c.motion.eps_cycles);
}
