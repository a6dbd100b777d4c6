// End-to-end acceptance gate: one PASS/FAIL line per criterion, nonzero exit
// when any fails.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

#include "helpers.hpp"
#include "oracles.hpp"
#include "ras/runner.hpp"

using namespace ras;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<double> uniform_vec(std::size_t n, Rng& rng) {
  std::vector<double> x(n);
  for (auto& v : x) v = uniform_real(rng, -1.0, 1.0);
  return x;
}

std::vector<int> random_labels(int n, int k, Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = uniform_int(rng, 0, k - 1);
  return y;
}

// --- 1: gradients ---------------------------------------------------------------

std::vector<CompiledGraph> op_graphs() {
  std::vector<CompiledGraph> out;
  auto head = [&out](GraphBuilder& b, int at, int classes) {
    const int feat = b.shape(at).is_spatial() ? b.global_avg_pool(at) : at;
    b.softmax(b.dense(feat, classes));
    out.push_back(std::move(b).finish(classes, 0));
  };
  {
    GraphBuilder b(TensorShape::spatial(5, 5, 2));
    head(b, b.conv(b.conv(b.input(), 3, 3, 1), 5, 2, 2), 3);
  }
  {
    GraphBuilder b(TensorShape::spatial(3, 3, 2));
    head(b, b.dense(b.flatten(b.input()), 5), 2);
  }
  {
    GraphBuilder b(TensorShape::spatial(4, 4, 2));
    head(b, b.batchnorm(b.relu(b.conv(b.input(), 3, 3, 1))), 3);
  }
  {
    GraphBuilder b(TensorShape::spatial(5, 5, 1));
    const int a = b.conv(b.input(), 3, 2, 1);
    const int c = b.conv(b.input(), 1, 2, 2);
    const int d = b.dense(b.flatten(b.input()), 3);
    head(b, b.merge({a, c, d}), 2);
  }
  {
    GraphBuilder b(TensorShape::spatial(2, 2, 2));
    const int f = b.flatten(b.input());
    head(b, b.merge({b.dense(f, 3), b.dense(f, 4)}), 3);
  }
  {
    GraphBuilder b(TensorShape::spatial(3, 3, 2));
    head(b, b.batchnorm(b.relu(b.dense(b.flatten(b.input()), 4))), 2);
  }
  return out;
}

Verdict gradients() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  std::vector<CompiledGraph> graphs = op_graphs();
  const std::size_t per_op = graphs.size();
  for (int i = 0; i < 20; ++i) graphs.push_back(testing::random_small_graph(rng, 5000));
  double worst = 0.0;
  std::size_t checked = 0;
  std::int64_t largest = 0;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    Network<double> net(graphs[i], i + 1);
    largest = std::max<std::int64_t>(largest, graphs[i].param_count);
    const int n = 3;
    const auto r = testing::check_gradients(net, uniform_vec(n * net.input_size(), rng),
                                            random_labels(n, graphs[i].n_classes, rng));
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
  }
  const double secs = seconds_since(t0);
  const bool pass = worst <= 1e-4 && largest <= 5000 && secs <= 120.0;
  return {pass, std::to_string(per_op) + " op graphs + 20 random (max " + std::to_string(largest) + " params), " +
                    std::to_string(checked) + " partials, max rel err " + fmt("%.2e", worst) + ", " +
                    fmt("%.1f", secs) + " s"};
}

// --- 2: shapes --------------------------------------------------------------------

Verdict shapes() {
  const auto t0 = Clock::now();
  Rng rng(77);
  int matched = 0, exceptions = 0;
  for (int i = 0; i < 200; ++i) {
    GenePool pool;
    try {
      const ModelGene m = random_model(rng, pool);
      Network<float> net(compile(m, pool, TensorShape::spatial(8, 8, 3), 3), i);
      if (testing::check_execution(net, 2, rng).shapes_match) ++matched;
    } catch (const std::exception& e) {
      ++exceptions;
      std::cerr << "  genome " << i << ": " << e.what() << "\n";
    }
  }
  const double secs = seconds_since(t0);
  return {matched == 200 && exceptions == 0 && secs <= 120.0,
          std::to_string(matched) + "/200 genomes match at every node, " + std::to_string(exceptions) +
              " exceptions, " + fmt("%.1f", secs) + " s"};
}

// --- 5: bookkeeping fuzz ------------------------------------------------------------

class NoisyEvaluator : public ModelEvaluator {
 public:
  explicit NoisyEvaluator(std::uint64_t seed) : rng_(seed) {}
  std::vector<EvalOutcome> evaluate(const std::vector<GeneId>& models, const GenePool& pool, int) override {
    std::vector<EvalOutcome> out;
    for (GeneId id : models) {
      // Bigger models score slightly better so the pool keeps growing.
      const double size = spectrum(pool.model(id), pool).n_layers_total;
      out.push_back({Fitness{uniform_real(rng_, 0.0, 0.5) + size / 200.0, 0.0}, "", 1, "subset"});
    }
    return out;
  }

 private:
  Rng rng_;
};

Verdict bookkeeping() {
  GenePool pool(PopulationCaps{100, 100});
  ClusterPopulation clusters;
  Rng rng(5150);
  for (int i = 0; i < 25; ++i) clusters.representatives.push_back(random_model(rng, pool).id);
  NoisyEvaluator evaluator(9);
  evaluate_representatives(clusters, pool, evaluator);

  std::size_t over_layer = 0, over_block = 0, children = 0;
  std::string failure;
  NichingOptions options;
  options.make_child = [&](const ModelGene& parent, GenePool& p, Rng& r) {
    const auto legal = legal_mutations(parent, p);
    const bool layer_over = p.layers().size() > p.caps().layer_cap;
    const bool block_over = p.blocks().size() > p.caps().block_cap;
    over_layer += layer_over;
    over_block += block_over;
    ++children;
    for (MutationKind k : legal) {
      if (layer_over && is_layer_mutation(k) && k != MutationKind::SwapLayer && failure.empty())
        failure = "layer mutation " + std::string(to_string(k)) + " legal above the layer cap";
      if (block_over && is_block_mutation(k) && k != MutationKind::SwapBlock && failure.empty())
        failure = "block mutation " + std::string(to_string(k)) + " legal above the block cap";
    }
    return make_child(parent, p, r);
  };

  std::size_t peak_layers = 0, peak_blocks = 0;
  for (int g = 0; g < 50 && failure.empty(); ++g) {
    evolve_generation(clusters, pool, evaluator, rng, options);
    try {
      check_integrity(pool);
    } catch (const IntegrityError& e) {
      failure = "generation " + std::to_string(g + 1) + ": " + e.what();
    }
    const auto usage = usage_counts(pool);
    for (const auto& [id, l] : pool.layers())
      if (!usage.count(id) || usage.at(id) == 0) failure = "unused layer " + std::to_string(id);
    for (const auto& [id, b] : pool.blocks())
      if (!usage.count(id) || usage.at(id) == 0) failure = "unused block " + std::to_string(id);
    if (pool.models().size() != clusters.representatives.size()) failure = "stray models after a generation";
    peak_layers = std::max(peak_layers, pool.layers().size());
    peak_blocks = std::max(peak_blocks, pool.blocks().size());
  }
  const bool exercised = over_layer > 0;
  return {failure.empty() && exercised && clusters.generation == 50,
          (failure.empty() ? std::string() : failure + "; ") + std::to_string(children) + " children over " +
              std::to_string(clusters.generation) + " generations, " + std::to_string(over_layer) +
              " above the layer cap, " + std::to_string(over_block) + " above the block cap, peak pool " +
              std::to_string(peak_layers) + " layers / " + std::to_string(peak_blocks) + " blocks"};
}

// --- 7: robustness oracles -----------------------------------------------------------

// 2x2x3 images where class c lights channel c.
Dataset channel_set(int per_class, std::uint64_t seed) {
  Dataset d;
  d.channels = 3;
  d.height = d.width = 2;
  d.n_classes = 3;
  Rng rng(seed);
  for (int i = 0; i < per_class * 3; ++i) {
    const int label = (i * 7 + i / 3) % 3;
    std::vector<float> img(12);
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < 4; ++p)
        img[c * 4 + p] = static_cast<float>((c == label ? 0.8 : 0.2) + uniform_real(rng, -0.1, 0.1));
    d.append(img, label);
  }
  return d;
}

Network<float> gap_head(TensorShape in, int classes, const std::vector<float>& w, const std::vector<float>& bias) {
  GraphBuilder b(in);
  b.softmax(b.dense(b.global_avg_pool(b.input()), classes));
  Network<float> net(std::move(b).finish(classes, 0), 1);
  const int head = static_cast<int>(net.graph().nodes.size()) - 2;
  net.parameters()[net.param_index(head)].value = w;
  net.parameters()[net.param_index(head) + 1].value = bias;
  return net;
}

// Label column of a bank file, read from raw bytes.
std::vector<int> labels_in_file(const std::string& path) {
  const std::string bytes = read_text_file(path);
  std::uint32_t count;
  std::uint16_t h, w, c;
  std::memcpy(&count, bytes.data() + 8, 4);
  std::memcpy(&h, bytes.data() + 12, 2);
  std::memcpy(&w, bytes.data() + 14, 2);
  std::memcpy(&c, bytes.data() + 16, 2);
  const std::size_t rec = static_cast<std::size_t>(h) * w * c * 4 + 6;
  std::vector<int> labels;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t l;
    std::memcpy(&l, bytes.data() + 20 + i * rec + rec - 6, 2);
    labels.push_back(l);
  }
  return labels;
}

Verdict robustness_oracles(const std::string& real_bank_path, const fs::path& dir) {
  const Dataset d = channel_set(20, 3);
  AdversarialBank bank;
  bank.dims = dims_of(d);
  bank.n_classes = 3;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto img = d.image(i);
    bank.records.push_back(
        {std::vector<float>(img.begin(), img.end()), static_cast<std::uint16_t>(d.labels[i]), Norm::Linf, 10});
  }
  const std::string path = (dir / "channel.rasb").string();
  write_bank(path, bank);
  const AdversarialBank stored = read_bank(path);
  Network<float> perfect = gap_head(TensorShape::spatial(2, 2, 3), 3, {10, 0, 0, 0, 10, 0, 0, 0, 10}, {0, 0, 0});
  const double perfect_score = score_robustness(perfect, stored);

  bool constants_ok = true;
  std::string detail;
  for (const std::string& p : {path, real_bank_path}) {
    const AdversarialBank b = read_bank(p);
    const auto labels = labels_in_file(p);
    const int k = b.n_classes;
    const TensorShape in = TensorShape::spatial(b.dims.height, b.dims.width, b.dims.channels);
    for (int cls = 0; cls < k; ++cls) {
      std::vector<float> bias(k, 0.0f);
      bias[cls] = 5.0f;
      Network<float> constant = gap_head(in, k, std::vector<float>(b.dims.channels * k, 0.0f), bias);
      const double expected =
          static_cast<double>(std::count(labels.begin(), labels.end(), cls)) / static_cast<double>(labels.size());
      const double got = score_robustness(constant, b);
      constants_ok &= std::abs(got - expected) <= 1e-12;
      detail += " " + fmt("%.4f", got) + "/" + fmt("%.4f", expected);
    }
  }
  return {perfect_score == 1.0 && constants_ok,
          "perfect model " + fmt("%.4f", perfect_score) + "; constant predictors (got/expected):" + detail};
}

// --- 6: attack effectiveness --------------------------------------------------------

Verdict attack_effectiveness() {
  const auto t0 = Clock::now();
  SyntheticOptions so;
  so.n_classes = 4;
  so.size = 16;
  so.blob_sigma = 3.2;
  so.jitter = 1.6;
  const Dataset all = downscale(make_synthetic(so, 61), 8);
  auto [train_all, test_set] = split(all, 0.8, 62);
  auto [tr, va] = split(train_all, 0.9, 63);
  TrainConfig tc;
  tc.max_epochs = 30;
  tc.seed = 64;
  Victim victim = train_victim("cnn", 0, tr, va, tc);
  const double acc = accuracy(*victim.net, test_set);

  std::vector<std::size_t> chosen;
  const auto pred = predict(*victim.net, test_set.pixels, static_cast<int>(test_set.size()));
  for (std::size_t i = 0; i < test_set.size() && chosen.size() < 100; ++i)
    if (pred[i] == test_set.labels[i]) chosen.push_back(i);

  NetworkClassifier classifier(*victim.net);
  const ImageDims dims = dims_of(test_set);
  std::map<int, int> success;
  for (int th : {1, 3, 10}) {
    AttackSpec spec{Norm::Linf, th};
    for (std::size_t i : chosen) {
      Rng rng(derive_seed(65, static_cast<std::uint64_t>(th), i));
      if (de_attack(classifier, test_set.image(i), dims, test_set.labels[i], spec, rng).adversarial) ++success[th];
    }
  }
  const double secs = seconds_since(t0);
  const double n = static_cast<double>(chosen.size());
  const bool pass = acc >= 0.7 && chosen.size() == 100 && success[10] >= 50 && success[10] >= success[3] &&
                    success[3] >= success[1] && secs <= 1200.0;
  return {pass, "victim accuracy " + fmt("%.3f", acc) + ", success on " + std::to_string(chosen.size()) +
                    " images: th1 " + fmt("%.2f", success[1] / n) + ", th3 " + fmt("%.2f", success[3] / n) +
                    ", th10 " + fmt("%.2f", success[10] / n) + ", " + fmt("%.1f", secs) + " s"};
}

// --- 9: bank round trip -----------------------------------------------------------------

template <typename T>
T read_le(const std::string& bytes, std::size_t at) {
  T v;
  std::memcpy(&v, bytes.data() + at, sizeof v);
  return v;
}

Verdict bank_round_trip(const BankBuildResult& built, const std::string& path) {
  const AdversarialBank bank = read_bank(path);
  const AdversarialBank clean = read_bank(clean_sidecar_path(path));
  const BankVerification v = verify_bank(bank, clean);
  const std::string bytes = read_text_file(path);
  const std::size_t rec = built.bank.dims.size() * 4 + 6;
  const bool header = bytes.compare(0, 4, "RASB") == 0 && read_le<std::uint32_t>(bytes, 4) == 1 &&
                      read_le<std::uint32_t>(bytes, 8) == built.bank.size() &&
                      read_le<std::uint16_t>(bytes, 12) == built.bank.dims.height &&
                      read_le<std::uint16_t>(bytes, 14) == built.bank.dims.width &&
                      read_le<std::uint16_t>(bytes, 16) == built.bank.dims.channels &&
                      read_le<std::uint16_t>(bytes, 18) == built.bank.n_classes &&
                      bytes.size() == 20 + built.bank.size() * rec;
  bool trailer = true;
  for (std::size_t i = 0; i < built.bank.size(); ++i) {
    const std::size_t at = 20 + i * rec + rec - 6;
    const BankRecord& r = built.bank.records[i];
    trailer &= read_le<std::uint16_t>(bytes, at) == r.label &&
               static_cast<std::uint8_t>(bytes[at + 2]) == static_cast<std::uint8_t>(r.norm) &&
               static_cast<std::uint8_t>(bytes[at + 3]) == r.th &&
               static_cast<std::uint8_t>(bytes[at + 4]) == static_cast<std::uint8_t>(r.optimizer) &&
               static_cast<std::uint8_t>(bytes[at + 5]) == r.victim;
  }
  const bool equal = bank == built.bank && clean == built.clean;
  return {equal && header && trailer && v.all_passed() && v.checked == bank.size() && bank.size() > 0,
          std::to_string(v.passed) + "/" + std::to_string(v.checked) + " records re-verified, round trip " +
              (equal ? "equal" : "differs") + ", header " + (header ? "exact" : "wrong") + ", record trailers " +
              (trailer ? "exact" : "wrong")};
}

// --- evolution runs -------------------------------------------------------------------

RunConfig evolution_config(const fs::path& dir, std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.generations = 20;
  c.population = 25;
  c.schedule = {10, 2, 200, 2};
  c.dataset.synthetic.samples = 600;
  c.bank_path = (dir / "bank.rasb").string();
  c.serial_deterministic = true;
  c.max_params = 2000000;
  return c;
}

BankBuildResult build_evolution_bank(const RunConfig& c) {
  const Datasets data = load_datasets(c.dataset);
  auto [tr, va] = split(data.train, 0.9, 71);
  TrainConfig tc;
  tc.max_epochs = 20;
  tc.seed = 72;
  std::vector<Victim> victims{train_victim("cnn", 0, tr, va, tc), train_victim("mlp", 1, tr, va, tc)};
  BankBuildOptions bo;
  bo.quota = 20;
  bo.max_attempts = 80;
  bo.seed = 73;
  BankBuildResult r = build_bank(victims, data.test, {parse_attack_spec("Linf:10"), parse_attack_spec("L0:3")}, bo);
  write_bank(c.bank_path, r.bank);
  write_bank(clean_sidecar_path(c.bank_path), r.clean);
  return r;
}

std::vector<Json> generation_records(const fs::path& run_dir) {
  std::vector<Json> out;
  std::istringstream in(read_text_file((run_dir / kEventsFile).string()));
  std::string line;
  while (std::getline(in, line)) {
    Json j = Json::parse(line);
    if (j["type"] == "generation") out.push_back(std::move(j));
  }
  return out;
}

Verdict determinism(const RunConfig& base, const fs::path& dir) {
  RunConfig c = base;
  c.generations = 3;
  c.population = 5;
  run_evolve(c, (dir / "det_a").string());
  run_evolve(c, (dir / "det_b").string());
  run_evolve(c, (dir / "det_r").string(), {false, 1});
  run_evolve(c, (dir / "det_r").string(), {true, -1});
  auto bytes = [&](const char* run, const char* file) { return read_text_file((dir / run / file).string()); };
  const bool stats = bytes("det_a", kStatsFile) == bytes("det_b", kStatsFile);
  const bool resumed = bytes("det_a", kEventsFile) == bytes("det_r", kEventsFile) &&
                       bytes("det_a", kStatsFile) == bytes("det_r", kStatsFile) &&
                       bytes("det_a", kCheckpointFile) == bytes("det_r", kCheckpointFile);
  return {stats && resumed, std::string("repeat run stats ") + (stats ? "identical" : "differ") +
                                ", resumed trace " + (resumed ? "identical" : "differs")};
}

struct EvolutionVerdicts {
  Verdict improves;
  Verdict diversity;
};

EvolutionVerdicts evolution(const RunConfig& base, const fs::path& dir) {
  const auto t0 = Clock::now();
  int improved = 0;
  bool monotone = true, diverse = true;
  std::string improve_detail, diversity_detail;
  for (std::uint64_t seed : {11, 22, 33}) {
    RunConfig c = base;
    c.seed = seed;
    const fs::path run = dir / ("evolve_" + std::to_string(seed));
    run_evolve(c, run.string());
    const auto rows = stats_from_log(read_text_file((run / kEventsFile).string()));
    const double first = rows.front().mean_fitness, last = rows.back().mean_fitness;
    improved += last > first && rows.back().generation == 20;
    improve_detail += " seed " + std::to_string(seed) + ": " + fmt("%.3f", first) + " -> " + fmt("%.3f", last) + ";";

    const auto gens = generation_records(run);
    for (std::size_t g = 1; g < gens.size(); ++g)
      for (std::size_t i = 0; i < gens[g]["clusters"].size(); ++i) {
        const Json& now = gens[g]["clusters"][i];
        const Json& before = gens[g - 1]["clusters"][i];
        if (now["accuracy"].get<double>() + now["robustness"].get<double>() <
            before["accuracy"].get<double>() + before["robustness"].get<double>())
          monotone = false;
      }
    std::vector<Spectrum> reps;
    for (const auto& cl : gens.back()["clusters"])
      reps.push_back(Spectrum::from_features(cl["spectrum"].get<std::array<int, Spectrum::kFeatures>>()));
    int pairs = 0, distinct = 0;
    for (std::size_t a = 0; a < reps.size(); ++a)
      for (std::size_t b = a + 1; b < reps.size(); ++b) {
        ++pairs;
        distinct += spectrum_distance(reps[a], reps[b]) > 0.0;
      }
    const double share = pairs ? static_cast<double>(distinct) / pairs : 0.0;
    diverse &= share >= 0.6;
    diversity_detail += " seed " + std::to_string(seed) + ": " + fmt("%.2f", share) + ";";
  }
  const double secs = seconds_since(t0);
  return {{improved >= 2 && secs <= 1800.0,
           std::to_string(improved) + "/3 seeds improve mean fitness;" + improve_detail + " " + fmt("%.0f", secs) +
               " s"},
          {diverse && monotone, "distinct representative pairs at the last generation:" + diversity_detail +
                                    " per-niche fitness " + (monotone ? "non-decreasing" : "decreased")}};
}

}  // namespace

int main() {
  const fs::path dir = testing::temp_dir("acceptance");
  std::vector<std::pair<int, Verdict>> results;
  auto report = [&results](int id, const char* name, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << v.detail << std::endl;
    results.emplace_back(id, v);
  };

  report(1, "gradient correctness", gradients);
  report(2, "shape inference", shapes);
  report(5, "population bookkeeping", bookkeeping);
  report(6, "attack effectiveness", attack_effectiveness);

  const RunConfig base = evolution_config(dir, 11);
  BankBuildResult bank;
  std::string bank_error;
  try {
    bank = build_evolution_bank(base);
  } catch (const std::exception& e) {
    bank_error = e.what();
  }
  auto needs_bank = [&bank_error](const std::function<Verdict()>& fn) {
    return [&bank_error, fn] { return bank_error.empty() ? fn() : Verdict{false, "bank build failed: " + bank_error}; };
  };
  report(9, "bank round trip", needs_bank([&] { return bank_round_trip(bank, base.bank_path); }));
  report(7, "robustness oracles", needs_bank([&] { return robustness_oracles(base.bank_path, dir); }));
  report(8, "determinism and resume", needs_bank([&] { return determinism(base, dir); }));

  EvolutionVerdicts evo;
  try {
    if (!bank_error.empty()) throw std::runtime_error("bank build failed: " + bank_error);
    evo = evolution(base, dir);
  } catch (const std::exception& e) {
    evo.improves = evo.diversity = {false, std::string("exception: ") + e.what()};
  }
  report(3, "evolution improves fitness", [&] { return evo.improves; });
  report(4, "niching preserves diversity", [&] { return evo.diversity; });

  const bool all = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.second.pass; });
  std::cout << (all ? "all criteria passed" : "some criteria failed") << std::endl;
  return all ? 0 : 1;
}
