#include <gtest/gtest.h>

#include <future>
#include <sstream>
#include <thread>

#include "cli.hpp"
#include "fixtures.hpp"
#include "serve.hpp"

using namespace hybrid;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_command(args, out, err, {});
  return {code, out.str(), err.str()};
}

std::string p(const fs::path& path) { return path.string(); }

std::vector<float> row(const Dataset& ds, std::size_t i) { return {ds.row(i).begin(), ds.row(i).end()}; }

}  // namespace

TEST(Cli, SplitHonoursContract) {
  const auto dir = fixtures::scratch_dir("cli_split");
  const auto all = fixtures::make_blobs(0, 3, 3, 2.0, 1, {30, 20, 11});
  write_feature_file(all, dir / "all.fvec");
  const auto r = run({"split", "--in", p(dir / "all.fvec"), "--ratio", "0.8", "--seed", "7", "--train-out",
                      p(dir / "tr.fvec"), "--holdout-out", p(dir / "va.fvec")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto tr = read_feature_file(dir / "tr.fvec"), va = read_feature_file(dir / "va.fvec");
  EXPECT_EQ(tr.class_counts(), (std::vector<std::size_t>{24, 16, 9}));
  EXPECT_EQ(va.class_counts(), (std::vector<std::size_t>{6, 4, 2}));
  EXPECT_TRUE(r.out.empty());
}

TEST(Cli, BalanceUndersamples) {
  const auto dir = fixtures::scratch_dir("cli_balance");
  write_feature_file(fixtures::make_blobs(0, 2, 3, 2.0, 1, {5, 9, 14}), dir / "in.fvec");
  ASSERT_EQ(run({"balance", "--in", p(dir / "in.fvec"), "--out", p(dir / "out.fvec")}).code, 0);
  EXPECT_EQ(read_feature_file(dir / "out.fvec").class_counts(), (std::vector<std::size_t>{5, 5, 5}));
}

TEST(Cli, TrainEvalPredictPipeline) {
  const auto dir = fixtures::scratch_dir("cli_pipeline");
  const auto all = fixtures::make_blobs(300, 4, 3, 2.5, 3);
  const auto split = stratified_split(all, 0.8, 1);
  write_feature_file(split.train, dir / "tr.fvec");
  write_feature_file(split.holdout, dir / "va.fvec");
  auto r = run({"train", "--features", p(dir / "tr.fvec"), "--base", "ada", "--refine", "gbdt-leaf", "--tau", "0.8",
                "--gbdt-iters", "20", "--out", p(dir / "model.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "model.json.timing.json"));

  r = run({"eval", "--model", p(dir / "model.json"), "--features", p(dir / "va.fvec"), "--report",
           p(dir / "r.json"), "--matrix-text", p(dir / "r.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = parse_json_file(dir / "r.json");
  for (const char* key : {"accuracy", "per_class", "weighted"}) EXPECT_TRUE(report["metrics"].contains(key)) << key;
  for (const char* key : {"precision", "recall", "f1"}) EXPECT_TRUE(report["metrics"]["weighted"].contains(key));
  for (const char* key : {"train_s", "infer_total_s", "infer_per_sample_s"}) EXPECT_TRUE(report["timing"].contains(key));
  EXPECT_GT(report["timing"]["train_s"].get<double>(), 0.0);
  EXPECT_TRUE(report.contains("cascade"));
  EXPECT_EQ(report["config"]["train"]["base"], "ada");
  EXPECT_EQ(report["config"]["train"]["tau"], 0.8);
  EXPECT_TRUE(report["training"]["refine"].contains("loss_history"));
  EXPECT_TRUE(fs::exists(dir / "r.txt"));

  r = run({"predict", "--model", p(dir / "model.json"), "--features", p(dir / "va.fvec"), "--out",
           p(dir / "preds.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto model = load_model(dir / "model.json");
  const auto direct = cascade_predict_batch(model, split.holdout);
  std::istringstream csv(io::read_file(dir / "preds.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "index,label,confidence,route");
  std::size_t i = 0;
  while (std::getline(csv, line)) {
    ASSERT_LT(i, direct.size());
    const auto f = detail::split_csv_line(line);
    ASSERT_EQ(f.size(), 4u);
    EXPECT_EQ(f[0], std::to_string(i));
    EXPECT_EQ(f[1], model.class_names[direct[i].label]);
    EXPECT_EQ(std::stod(f[2]), direct[i].confidence);
    EXPECT_EQ(f[3], route_name(direct[i].route));
    ++i;
  }
  EXPECT_EQ(i, split.holdout.n());
}

TEST(Cli, BaseOnlyModelAndUnlabelledPredict) {
  const auto dir = fixtures::scratch_dir("cli_base_only");
  const auto ds = fixtures::make_blobs(90, 3, 3, 2.5, 3);
  write_feature_file(ds, dir / "tr.fvec");
  write_feature_file(Dataset::unlabelled(3, {0, 0, 0, 1, 1, 1}), dir / "q.fvec");
  ASSERT_EQ(run({"train", "--features", p(dir / "tr.fvec"), "--base", "gnb", "--refine", "none", "--out",
                 p(dir / "m.json")}).code, 0);
  EXPECT_EQ(parse_json_file(dir / "m.json")["kind"], "gaussian_nb");
  ASSERT_EQ(run({"predict", "--model", p(dir / "m.json"), "--features", p(dir / "q.fvec"), "--out",
                 p(dir / "p.csv")}).code, 0);
  const auto text = io::read_file(dir / "p.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  EXPECT_NE(text.find(",base\n"), std::string::npos);
  ASSERT_EQ(run({"eval", "--model", p(dir / "m.json"), "--features", p(dir / "tr.fvec"), "--report",
                 p(dir / "r.json")}).code, 0);
  const auto report = parse_json_file(dir / "r.json");
  EXPECT_EQ(report["model_kind"], "gaussian_nb");
  EXPECT_FALSE(report.contains("cascade"));
}

TEST(Cli, ExitCodes) {
  const auto dir = fixtures::scratch_dir("cli_exit");
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  auto r = run({"split", "--bogus"});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(run({"split", "--in", p(dir / "none.fvec"), "--train-out", "a", "--holdout-out", "b"}).code, 2);
  io::write_file(dir / "junk.fvec", "JUNKJUNKJUNKJUNK");
  EXPECT_EQ(run({"balance", "--in", p(dir / "junk.fvec"), "--out", p(dir / "o.fvec")}).code, 2);
  write_feature_file(fixtures::make_blobs(30, 2, 3, 2.0, 1), dir / "ok.fvec");
  EXPECT_EQ(run({"train", "--features", p(dir / "ok.fvec"), "--base", "svm", "--out", p(dir / "m.json")}).code, 1);
  EXPECT_EQ(run({"train", "--features", p(dir / "ok.fvec"), "--tau", "1.5", "--out", p(dir / "m.json")}).code, 1);
  EXPECT_EQ(run({"split", "--in", p(dir / "ok.fvec"), "--ratio", "1.0", "--train-out", "a", "--holdout-out", "b"}).code,
            1);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, ConfigFilePrecedence) {
  const auto dir = fixtures::scratch_dir("cli_config");
  write_feature_file(fixtures::make_blobs(60, 2, 3, 2.5, 1), dir / "tr.fvec");
  io::write_file(dir / "run.conf",
                 "# training settings\nbase = gnb\nrefine = none\ntau = 0.6\nseed = 12\nout = " +
                     p(dir / "from_config.json") + "\nfeatures = " + p(dir / "tr.fvec") + "\n");
  auto r = run({"train", "--config", p(dir / "run.conf"), "--tau", "0.7"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = parse_json_file(dir / "from_config.json");
  EXPECT_EQ(doc["kind"], "gaussian_nb");
  EXPECT_EQ(doc["provenance"]["tau"], 0.7);   // flag beats file
  EXPECT_EQ(doc["provenance"]["seed"], 12);   // file beats default
  EXPECT_EQ(doc["provenance"]["epochs"], 30); // default
}

TEST(Cli, ExtractFromImagesAndMaps) {
  const auto dir = fixtures::scratch_dir("cli_extract");
  Rng rng(8);
  std::string manifest = "path,label\n";
  for (int i = 0; i < 6; ++i) {
    Image img(5 + i, 7, 3);
    for (auto& v : img.pixels) v = static_cast<float>(rng.below(256));
    const std::string name = "img" + std::to_string(i) + ".ppm";
    write_pnm(img, dir / name);
    manifest += name + "," + (i % 2 ? "healthy" : "anthracnose") + "\n";
  }
  io::write_file(dir / "m.csv", manifest);
  ASSERT_EQ(run({"extract", "--manifest", p(dir / "m.csv"), "--side", "32", "--out", p(dir / "a.fvec"),
                 "--workers", "1"}).code, 0);
  ASSERT_EQ(run({"extract", "--manifest", p(dir / "m.csv"), "--side", "32", "--out", p(dir / "b.fvec"),
                 "--workers", "4"}).code, 0);
  EXPECT_EQ(io::read_file(dir / "a.fvec"), io::read_file(dir / "b.fvec"));
  const auto ds = read_feature_file(dir / "a.fvec");
  EXPECT_EQ(ds.d(), 102u);
  EXPECT_EQ(ds.class_names(), (std::vector<std::string>{"anthracnose", "healthy"}));
  EXPECT_EQ(ds.label(1), 1u);

  FeatureMapSet maps;
  maps.labelled = true;
  maps.class_names = {"x", "y"};
  maps.maps = {FeatureMap(2, 2, 4, 1.0f), FeatureMap(2, 2, 4, 3.0f)};
  maps.labels = {0, 1};
  write_feature_map_file(maps, dir / "f.fmap");
  ASSERT_EQ(run({"extract", "--fmap", p(dir / "f.fmap"), "--out", p(dir / "c.fvec")}).code, 0);
  EXPECT_EQ(row(read_feature_file(dir / "c.fvec"), 1), std::vector<float>(4, 3.0f));
  EXPECT_EQ(run({"extract", "--out", p(dir / "d.fvec")}).code, 1);
}

// ---------------------------------------------------------------------------
// Service

namespace {

const CascadeModel& service_model() {
  static const CascadeModel model = [] {
    const auto ds = fixtures::make_blobs(150, 3, 3, 2.0, 4);
    CascadeSpec spec;
    spec.base = LearnerKind::random_forest;
    spec.params.forest.n_trees = 10;
    spec.params.gbdt.n_iters = 10;
    return fit_cascade(ds, spec).model;
  }();
  return model;
}

}  // namespace

TEST(Service, PredictDelegatesToCascade) {
  const auto& model = service_model();
  const std::vector<float> x{0.5f, 1.25f, -0.75f};
  const auto r = handle_predict_request(&model, R"({"features": [0.5, 1.25, -0.75]})");
  ASSERT_EQ(r.status, 200) << r.body;
  const auto body = nlohmann::json::parse(r.body);
  const auto direct = cascade_predict(model, x);
  EXPECT_EQ(body["class_id"], direct.label);
  EXPECT_EQ(body["label"], model.class_names[direct.label]);
  EXPECT_EQ(body["confidence"].get<double>(), direct.confidence);
  EXPECT_EQ(body["route"], route_name(direct.route));
  EXPECT_EQ(body["probabilities"].get<std::vector<double>>(), direct.probabilities);
}

TEST(Service, Errors) {
  const auto& model = service_model();
  EXPECT_EQ(handle_predict_request(&model, R"({"features": [0.5, 1.25]})").status, 400);
  EXPECT_EQ(handle_predict_request(&model, "{oops").status, 400);
  EXPECT_EQ(handle_predict_request(&model, R"({"features": [1, "a", 2]})").status, 400);
  EXPECT_EQ(handle_predict_request(&model, R"([1, 2, 3])").status, 400);
  EXPECT_EQ(handle_predict_request(nullptr, R"({"features": [1, 2, 3]})").status, 503);
  const auto h = handle_health(&model);
  EXPECT_EQ(h.status, 200);
  EXPECT_EQ(nlohmann::json::parse(h.body)["d"], 3);
  EXPECT_EQ(handle_health(nullptr).status, 503);
}

TEST(Service, ConcurrentHandlerCallsAgree) {
  const auto& model = service_model();
  const std::string body = R"({"features": [0.1, 0.2, 0.3]})";
  std::vector<std::future<HttpResponse>> futures;
  for (int i = 0; i < 100; ++i) {
    futures.push_back(std::async(std::launch::async, [&] { return handle_predict_request(&model, body); }));
  }
  const auto first = futures.front().get();
  ASSERT_EQ(first.status, 200);
  for (std::size_t i = 1; i < futures.size(); ++i) {
    const auto r = futures[i].get();
    EXPECT_EQ(r.status, first.status);
    EXPECT_EQ(r.body, first.body);
  }
}

TEST(Service, ConcurrentHttpRequestsAgree) {
  const auto& model = service_model();
  httplib::Server server;
  cli::install_routes(server, model);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const std::string body = R"({"features": [0.1, 0.2, 0.3]})";
  std::vector<std::future<std::pair<int, std::string>>> futures;
  for (int i = 0; i < 100; ++i) {
    futures.push_back(std::async(std::launch::async, [&] {
      httplib::Client client("127.0.0.1", port);
      const auto res = client.Post("/v1/predict", body, "application/json");
      return res ? std::pair{res->status, res->body} : std::pair{-1, httplib::to_string(res.error())};
    }));
  }
  std::vector<std::pair<int, std::string>> responses;
  for (auto& f : futures) responses.push_back(f.get());
  httplib::Client client("127.0.0.1", port);
  const auto health = client.Get("/healthz");
  const auto short_body = client.Post("/v1/predict", R"({"features": [1]})", "application/json");
  server.stop();
  listener.join();

  ASSERT_EQ(responses.front().first, 200);
  EXPECT_EQ(responses.front().second, handle_predict_request(&model, body).body);
  for (const auto& r : responses) EXPECT_EQ(r, responses.front());
  ASSERT_TRUE(health);
  EXPECT_EQ(nlohmann::json::parse(health->body)["model_kind"], "cascade");
  ASSERT_TRUE(short_body);
  EXPECT_EQ(short_body->status, 400);
}
