#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "run_fixture.hpp"

using namespace ras;
namespace fs = std::filesystem;

namespace {

Json cluster(double acc, double rob, std::vector<int> spectrum) {
  spectrum.resize(10, 0);
  return {{"model", 1}, {"accuracy", acc}, {"robustness", rob}, {"spectrum", spectrum}};
}

Json first_generation() {
  return {{"type", "generation"},
          {"generation", 0},
          {"config_hash", "abc"},
          {"clusters", {cluster(0.5, 0.1, {2, 4, 1, 3}), cluster(0.3, 0.3, {1, 3, 0, 2})}}};
}

std::string hand_log() {
  const Json g0 = first_generation();
  const Json g1{
      {"type", "generation"}, {"generation", 1}, {"config_hash", "abc"}, {"clusters", {cluster(0.9, 0.05, {4, 8, 3, 10})}}};
  return Json{{"type", "run_start"}}.dump() + "\n" + g0.dump() + "\n" +
         Json{{"type", "child"}, {"generation", 1}}.dump() + "\n" + g1.dump() + "\n";
}

// One CIFAR-10 binary record: label byte then R, G, B planes of 32x32.
std::string cifar_record(int label, unsigned char r, unsigned char g, unsigned char b) {
  std::string rec(1 + 3 * 1024, '\0');
  rec[0] = static_cast<char>(label);
  std::fill(rec.begin() + 1, rec.begin() + 1025, static_cast<char>(r));
  std::fill(rec.begin() + 1025, rec.begin() + 2049, static_cast<char>(g));
  std::fill(rec.begin() + 2049, rec.end(), static_cast<char>(b));
  return rec;
}

std::vector<Json> records(const fs::path& log) {
  std::vector<Json> out;
  std::istringstream in(read_text_file(log.string()));
  std::string line;
  while (std::getline(in, line)) out.push_back(Json::parse(line));
  return out;
}

}  // namespace

TEST_SUITE("runner") {
  TEST_CASE("config parsing") {
    const RunConfig d = config_from_json(Json::object());
    CHECK(d.population == 25);
    CHECK(d.generations == 20);
    CHECK(d.schedule == EvalSchedule{10, 10, 500, 10});

    const RunConfig c = config_from_json(Json::parse(
        R"({"seed": 9, "caps": {"layer": 50}, "schedule": {"subset_size": 64}, "external": {"command": ["x"]}})"));
    CHECK(c.seed == 9);
    CHECK(c.caps.layer_cap == 50);
    CHECK(c.schedule.subset_size == 64);
    REQUIRE(c.external);
    CHECK(c.external->command == std::vector<std::string>{"x"});
    CHECK(config_hash(config_from_json(config_to_json(c))) == config_hash(c));
    CHECK(config_hash(c) != config_hash(d));

    CHECK_THROWS_AS(config_from_json(Json::parse(R"({"sead": 1})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(Json::parse(R"({"train": {"lr": 1}})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(Json::parse(R"({"seed": "one"})")), ConfigError);

    RunConfig bad = d;
    bad.population = 1;
    CHECK_THROWS_AS(validate(bad), ConfigError);
    bad = d;
    bad.dataset.source = "imagenet";
    CHECK_THROWS_AS(validate(bad), ConfigError);
  }

  TEST_CASE("stats rows from a hand-built log") {
    const auto rows = stats_from_log(hand_log());
    REQUIRE(rows.size() == 2);
    const StatsRow& a = rows[0];
    CHECK(a.clusters == 2);
    CHECK(a.mean_fitness == doctest::Approx(0.6));
    CHECK(a.max_fitness == doctest::Approx(0.6));
    CHECK(a.mean_accuracy == doctest::Approx(0.4));
    CHECK(a.max_accuracy == doctest::Approx(0.5));
    CHECK(a.mean_robustness == doctest::Approx(0.2));
    CHECK(a.max_robustness == doctest::Approx(0.3));
    CHECK(a.mean_blocks == doctest::Approx(1.5));
    CHECK(a.mean_layers == doctest::Approx(3.5));
    CHECK(a.mean_block_conns == doctest::Approx(0.5));
    CHECK(a.mean_layer_conns == doctest::Approx(2.5));
    CHECK(a.mean_layers_per_block == doctest::Approx(2.5));
    CHECK(a.mean_conns_per_block == doctest::Approx(1.75));
    CHECK(a.config_hash == "abc");
    CHECK(rows[1].mean_fitness == doctest::Approx(0.95));
    CHECK(rows[1].mean_conns_per_block == doctest::Approx(2.5));

    const std::string csv = stats_csv(rows);
    CHECK(csv.rfind("generation,clusters,mean_fitness,", 0) == 0);
    CHECK(csv.find("\n0,2,0.600000,0.600000,0.400000,0.500000,") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

    const std::string table = clusters_csv(hand_log());
    CHECK(std::count(table.begin(), table.end(), '\n') == 4);
    CHECK(table.find("\n1,0,1,0.900000,0.050000,0.950000,4,8,3,10,") != std::string::npos);
  }

  TEST_CASE("corrupt log lines are located") {
    std::string log = hand_log();
    log.insert(log.find('\n') + 1, "{\"type\": \"generation\", \n");
    try {
      stats_from_log(log, "events.jsonl");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("events.jsonl:2") != std::string::npos);
    }
    CHECK_THROWS_AS(stats_from_log("{\"generation\": 0}\n"), ParseError);
    CHECK_THROWS_AS(stats_from_log(R"({"type": "generation", "generation": 0, "clusters": []})"), ParseError);
    const std::string backwards = hand_log() + first_generation().dump() + "\n";
    CHECK_THROWS_AS(stats_from_log(backwards), ParseError);
  }

  TEST_CASE("cifar binary batches") {
    const fs::path dir = testing::temp_dir("runner_cifar");
    write_text_file((dir / "data_batch_1.bin").string(),
                    cifar_record(0, 255, 0, 51) + cifar_record(5, 1, 2, 3) + cifar_record(1, 0, 255, 0));
    write_text_file((dir / "test_batch.bin").string(), cifar_record(1, 10, 20, 30));

    const Dataset all = load_cifar10_binary({(dir / "data_batch_1.bin").string()}, {10, 0, 0});
    CHECK(all.size() == 3);
    CHECK(all.labels == std::vector<int>{0, 5, 1});
    CHECK(all.image(0)[0] == 1.0f);
    CHECK(all.image(0)[1024] == 0.0f);
    CHECK(all.image(0)[2048] == doctest::Approx(0.2));

    const Dataset two = load_cifar10_binary({(dir / "data_batch_1.bin").string()}, {2, 8, 0});
    CHECK(two.labels == std::vector<int>{0, 1});
    CHECK(two.height == 8);
    CHECK(two.image(1)[64] == 1.0f);

    RunConfig c;
    c.dataset.source = "cifar10-binary";
    c.dataset.path = dir.string();
    c.dataset.n_classes = 2;
    c.dataset.downscale = 8;
    const Datasets d = load_datasets(c.dataset);
    CHECK(d.train.size() == 2);
    CHECK(d.test.size() == 1);
    CHECK(d.test.image(0)[0] == doctest::Approx(10 / 255.0));

    write_text_file((dir / "bad.bin").string(), cifar_record(12, 0, 0, 0));
    CHECK_THROWS_AS(load_cifar10_binary({(dir / "bad.bin").string()}, {}), ParseError);
    write_text_file((dir / "short.bin").string(), cifar_record(1, 0, 0, 0).substr(0, 100));
    CHECK_THROWS_AS(load_cifar10_binary({(dir / "short.bin").string()}, {}), ParseError);
  }

  TEST_CASE("zero generations still writes the initial row") {
    const fs::path dir = testing::temp_dir("runner_zero");
    RunConfig c = testing::tiny_run(dir);
    c.generations = 0;
    const RunSummary s = run_evolve(c, (dir / "run").string());
    CHECK(s.finished);
    CHECK(s.generation == 0);
    const std::string csv = read_text_file((dir / "run" / kStatsFile).string());
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
    CHECK(fs::exists(dir / "run" / kReportFile));
    CHECK(fs::exists(dir / "run" / kBestGraphFile));
    const auto recs = records(dir / "run" / kEventsFile);
    CHECK(recs.front()["type"] == "run_start");
    CHECK(recs.back()["type"] == "generation");
    CHECK(recs.back()["clusters"].size() == 3);
  }

  TEST_CASE("runs are byte-reproducible and resume exactly") {
    const fs::path dir = testing::temp_dir("runner_repro");
    const RunConfig c = testing::tiny_run(dir);
    run_evolve(c, (dir / "a").string());
    run_evolve(c, (dir / "b").string());
    auto bytes = [&](const char* run, const char* file) { return read_text_file((dir / run / file).string()); };
    CHECK(bytes("a", kStatsFile) == bytes("b", kStatsFile));
    CHECK(bytes("a", kEventsFile) == bytes("b", kEventsFile));
    int trained = 0;
    for (const auto& r : records(dir / "a" / kEventsFile))
      trained += r.contains("accuracy") && !r.contains("error") && r["accuracy"].get<double>() > 0.0;
    CHECK(trained >= 5);
    const std::string stats = bytes("a", kStatsFile);
    CHECK(std::count(stats.begin(), stats.end(), '\n') == 5);

    const RunSummary part = run_evolve(c, (dir / "r").string(), {false, 1});
    CHECK_FALSE(part.finished);
    CHECK(part.generation == 1);
    const RunSummary rest = run_evolve(c, (dir / "r").string(), {true, -1});
    CHECK(rest.finished);
    CHECK(bytes("a", kEventsFile) == bytes("r", kEventsFile));
    CHECK(bytes("a", kStatsFile) == bytes("r", kStatsFile));
    CHECK(bytes("a", kCheckpointFile) == bytes("r", kCheckpointFile));

    RunConfig other = c;
    other.seed = 99;
    CHECK_THROWS_AS(run_evolve(other, (dir / "r").string(), {true, -1}), ConfigError);
  }

  TEST_CASE("a logged evaluation replays from the checkpoint") {
    const fs::path dir = testing::temp_dir("runner_replay");
    const RunConfig c = testing::tiny_run(dir);
    run_evolve(c, (dir / "run").string());
    const auto recs = records(dir / "run" / kEventsFile);
    const Json& last = recs.back();
    const Json* logged = nullptr;
    GeneId rep = 0;
    for (const auto& cl : last["clusters"]) {
      const GeneId id = cl["model"].get<GeneId>();
      for (const auto& r : recs) {
        const bool match = (r["type"] == "evaluation" && r["model"] == id) || (r["type"] == "child" && r["child"] == id);
        if (match && !r.contains("error") && r["accuracy"].get<double>() > 0.0) logged = &r, rep = id;
      }
      if (logged) break;
    }
    REQUIRE(logged);
    const LoadedModel genome = load_genome((dir / "run" / kCheckpointFile).string(), rep);
    const FitnessReport again = evaluate_one(genome, c, (*logged)["generation"].get<int>());
    CHECK(again.accuracy == (*logged)["accuracy"].get<double>());
    CHECK(again.robustness == (*logged)["robustness"].get<double>());
    CHECK(again.train_epochs_used == (*logged)["epochs"].get<int>());

    write_text_file((dir / "snap.json").string(), model_snapshot(genome.pool.model(genome.model_id), genome.pool).dump());
    const LoadedModel from_snapshot = load_genome((dir / "snap.json").string());
    CHECK(structural_key(from_snapshot.pool.model(from_snapshot.model_id), from_snapshot.pool) ==
          structural_key(genome.pool.model(genome.model_id), genome.pool));
    CHECK_THROWS(load_genome((dir / "run" / kCheckpointFile).string(), GeneId{999999}));
  }

  TEST_CASE("external requests are served line by line") {
    const fs::path dir = testing::temp_dir("runner_serve");
    const RunConfig c = testing::tiny_run(dir);
    GenePool pool;
    const GeneId m = testing::add_model(pool, {testing::add_block(pool, {LayerGene::conv(3, 8, 1)}, {})}, {});
    ExternalRequest req;
    req.genome = model_snapshot(pool.model(m), pool);
    req.input_shape = TensorShape::spatial(8, 8, 3);
    req.n_classes = 3;
    req.schedule = c.schedule;
    req.generation = 1;
    req.seed = 4;
    req.bank_path = c.bank_path;
    std::istringstream in(request_to_json(req).dump() + "\nnot json\n");
    std::ostringstream out;
    serve_requests(c, in, out);
    std::istringstream lines(out.str());
    std::string first, second;
    std::getline(lines, first);
    std::getline(lines, second);
    const Json a = Json::parse(first), b = Json::parse(second);
    CHECK(a.contains("accuracy"));
    CHECK_MESSAGE(!a.contains("error"), first);
    CHECK(b.contains("error"));
    CHECK(b["accuracy"] == 0.0);
  }
}
