#include <gtest/gtest.h>

#include <bit>

#include "fixtures.hpp"
#include "hybrid/cascade.hpp"
#include "hybrid/model.hpp"

using namespace hybrid;

namespace {

LearnerParams small_params() {
  LearnerParams p;
  p.head.epochs = 5;
  p.forest.n_trees = 12;
  p.ada.n_estimators = 20;
  p.gbdt.n_iters = 15;
  return p;
}

std::vector<std::vector<float>> probes(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<float>> out(100, std::vector<float>(d));
  for (auto& x : out) {
    for (auto& v : x) v = static_cast<float>(rng.uniform(-4, 6));
  }
  return out;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

}  // namespace

class KindRoundTrip : public ::testing::TestWithParam<LearnerKind> {};

TEST_P(KindRoundTrip, SaveLoadPredictIsBitExact) {
  const auto ds = fixtures::make_blobs(150, 5, 3, 2.0, 31);
  const auto model = fit_classifier(GetParam(), ds, small_params());
  const std::string text = dump_json(to_json(model));
  const auto loaded = classifier_from_json(json::parse(text));
  EXPECT_EQ(loaded.kind(), model.kind());
  EXPECT_EQ(dump_json(to_json(loaded)), text);
  for (const auto& x : probes(5, 4)) {
    ASSERT_TRUE(bit_equal(predict_proba(model, x), predict_proba(loaded, x)));
  }
}

INSTANTIATE_TEST_SUITE_P(Models, KindRoundTrip,
                         ::testing::Values(LearnerKind::softmax_head, LearnerKind::gaussian_nb, LearnerKind::knn,
                                           LearnerKind::cart, LearnerKind::random_forest, LearnerKind::adaboost,
                                           LearnerKind::gbdt_leaf, LearnerKind::gbdt_level));

TEST(CascadeIo, FileRoundTrip) {
  const auto ds = fixtures::make_blobs(200, 4, 3, 2.0, 6);
  CascadeSpec spec;
  spec.base = LearnerKind::adaboost;
  spec.params = small_params();
  spec.scope = RefineScope::uncertain_only;
  const auto fit = fit_cascade(ds, spec);
  const auto dir = fixtures::scratch_dir("cascade_io");
  save_model(fit.model, dir / "m.json");
  const auto loaded = load_model(dir / "m.json");
  EXPECT_EQ(loaded.tau, fit.model.tau);
  EXPECT_EQ(loaded.scope, RefineScope::uncertain_only);
  EXPECT_EQ(loaded.train_base_fraction, fit.model.train_base_fraction);
  for (const auto& x : probes(4, 9)) {
    const auto a = cascade_predict(fit.model, x), b = cascade_predict(loaded, x);
    ASSERT_EQ(a.route, b.route);
    ASSERT_EQ(a.label, b.label);
    ASSERT_TRUE(bit_equal(a.probabilities, b.probabilities));
    ASSERT_EQ(std::bit_cast<std::uint64_t>(a.confidence), std::bit_cast<std::uint64_t>(b.confidence));
  }
  save_model(loaded, dir / "again.json");
  EXPECT_EQ(io::read_file(dir / "m.json"), io::read_file(dir / "again.json"));
}

TEST(CascadeIo, SingleLearnerDocumentLoadsAsCascade) {
  const auto ds = fixtures::make_blobs(90, 3, 3, 2.0, 2);
  const auto model = std::make_shared<const Classifier>(fit_classifier(LearnerKind::gaussian_nb, ds, {}));
  const auto dir = fixtures::scratch_dir("single_io");
  save_model(single_model_cascade(model), dir / "gnb.json");
  const auto doc = parse_json_file(dir / "gnb.json");
  EXPECT_EQ(doc["kind"], "gaussian_nb");
  const auto loaded = load_model(dir / "gnb.json");
  EXPECT_TRUE(loaded.single_learner);
  for (const auto& x : probes(3, 1)) ASSERT_EQ(cascade_predict(loaded, x).label, predict(*model, x));
}

TEST(ModelIo, RejectsMalformedDocuments) {
  const auto ds = fixtures::make_blobs(60, 2, 2, 2.0, 2);
  auto doc = to_json(fit_classifier(LearnerKind::cart, ds, {}));
  auto bad = doc;
  bad["schema_version"] = 99;
  EXPECT_THROW(classifier_from_json(bad), FormatError);
  bad = doc;
  bad["kind"] = "svm";
  EXPECT_THROW(classifier_from_json(bad), FormatError);
  bad = doc;
  bad["K"] = 5;
  EXPECT_THROW(classifier_from_json(bad), FormatError);
  bad = doc;
  bad["params"].erase(bad["params"].begin());
  EXPECT_THROW(classifier_from_json(bad), FormatError);
  EXPECT_THROW(classifier_from_json(json::array()), FormatError);

  const auto dir = fixtures::scratch_dir("bad_json");
  io::write_file(dir / "x.json", "{not json");
  EXPECT_THROW(load_model(dir / "x.json"), FormatError);
  EXPECT_THROW(load_model(dir / "missing.json"), IoError);
}
