#include "ras/runner.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "ras/graph.hpp"
#include "ras/mutation.hpp"

namespace fs = std::filesystem;

namespace ras {

namespace {

void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("unknown config key " + where + "." + it.key());
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError("config key " + where + "." + key + ": " + e.what());
  }
}

Json synthetic_to_json(const SyntheticOptions& s) {
  return {{"size", s.size},          {"channels", s.channels},     {"samples", s.samples},
          {"amplitude", s.amplitude}, {"blob_sigma", s.blob_sigma}, {"noise", s.noise},
          {"jitter", s.jitter}};
}

SyntheticOptions synthetic_from_json(const Json& j) {
  reject_unknown(j, {"size", "channels", "samples", "amplitude", "blob_sigma", "noise", "jitter"}, "dataset.synthetic");
  SyntheticOptions s;
  const std::string w = "dataset.synthetic";
  read(j, "size", s.size, w);
  read(j, "channels", s.channels, w);
  read(j, "samples", s.samples, w);
  read(j, "amplitude", s.amplitude, w);
  read(j, "blob_sigma", s.blob_sigma, w);
  read(j, "noise", s.noise, w);
  read(j, "jitter", s.jitter, w);
  return s;
}

}  // namespace

RunConfig config_from_json(const Json& j) {
  reject_unknown(j,
                 {"seed", "generations", "population", "caps", "schedule", "dataset", "bank_path", "train",
                  "parallelism", "serial_deterministic", "max_params", "normalize_spectrum",
                  "clean_correct_denominator", "external"},
                 "config");
  RunConfig c;
  read(j, "seed", c.seed, "config");
  read(j, "generations", c.generations, "config");
  read(j, "population", c.population, "config");
  read(j, "bank_path", c.bank_path, "config");
  read(j, "parallelism", c.parallelism, "config");
  read(j, "serial_deterministic", c.serial_deterministic, "config");
  read(j, "max_params", c.max_params, "config");
  read(j, "normalize_spectrum", c.normalize_spectrum, "config");
  read(j, "clean_correct_denominator", c.clean_correct_denominator, "config");
  if (j.contains("caps")) {
    const Json& k = j["caps"];
    reject_unknown(k, {"layer", "block"}, "caps");
    read(k, "layer", c.caps.layer_cap, "caps");
    read(k, "block", c.caps.block_cap, "caps");
  }
  if (j.contains("schedule")) {
    const Json& s = j["schedule"];
    reject_unknown(s, {"full_every", "full_epochs", "subset_size", "subset_epochs"}, "schedule");
    read(s, "full_every", c.schedule.full_every, "schedule");
    read(s, "full_epochs", c.schedule.full_epochs, "schedule");
    read(s, "subset_size", c.schedule.subset_size, "schedule");
    read(s, "subset_epochs", c.schedule.subset_epochs, "schedule");
  }
  if (j.contains("dataset")) {
    const Json& d = j["dataset"];
    reject_unknown(d, {"source", "path", "subset", "downscale", "n_classes", "test_fraction", "synthetic", "seed"},
                   "dataset");
    read(d, "source", c.dataset.source, "dataset");
    read(d, "path", c.dataset.path, "dataset");
    read(d, "subset", c.dataset.subset, "dataset");
    read(d, "downscale", c.dataset.downscale, "dataset");
    read(d, "n_classes", c.dataset.n_classes, "dataset");
    read(d, "test_fraction", c.dataset.test_fraction, "dataset");
    read(d, "seed", c.dataset.seed, "dataset");
    if (d.contains("synthetic")) c.dataset.synthetic = synthetic_from_json(d["synthetic"]);
  }
  if (j.contains("train")) {
    const Json& t = j["train"];
    reject_unknown(t, {"max_epochs", "early_stop_delta", "early_stop_patience", "batch_size", "learning_rate", "momentum"},
                   "train");
    read(t, "max_epochs", c.train.max_epochs, "train");
    read(t, "early_stop_delta", c.train.early_stop_delta, "train");
    read(t, "early_stop_patience", c.train.early_stop_patience, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "learning_rate", c.train.learning_rate, "train");
    read(t, "momentum", c.train.momentum, "train");
  }
  if (j.contains("external") && !j["external"].is_null()) {
    const Json& e = j["external"];
    reject_unknown(e, {"command", "timeout_ms"}, "external");
    ExternalConfig ext;
    read(e, "command", ext.command, "external");
    read(e, "timeout_ms", ext.timeout_ms, "external");
    c.external = ext;
  }
  c.dataset.synthetic.n_classes = c.dataset.n_classes;
  return c;
}

Json config_to_json(const RunConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["generations"] = c.generations;
  j["population"] = c.population;
  j["caps"] = {{"layer", c.caps.layer_cap}, {"block", c.caps.block_cap}};
  j["schedule"] = schedule_to_json(c.schedule);
  j["dataset"] = {{"source", c.dataset.source},
                  {"path", c.dataset.path},
                  {"subset", c.dataset.subset},
                  {"downscale", c.dataset.downscale},
                  {"n_classes", c.dataset.n_classes},
                  {"test_fraction", c.dataset.test_fraction},
                  {"synthetic", synthetic_to_json(c.dataset.synthetic)},
                  {"seed", c.dataset.seed}};
  j["bank_path"] = c.bank_path;
  j["train"] = {{"max_epochs", c.train.max_epochs},
                {"early_stop_delta", c.train.early_stop_delta},
                {"early_stop_patience", c.train.early_stop_patience},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"momentum", c.train.momentum}};
  j["parallelism"] = c.parallelism;
  j["serial_deterministic"] = c.serial_deterministic;
  j["max_params"] = c.max_params;
  j["normalize_spectrum"] = c.normalize_spectrum;
  j["clean_correct_denominator"] = c.clean_correct_denominator;
  if (c.external) j["external"] = {{"command", c.external->command}, {"timeout_ms", c.external->timeout_ms}};
  return j;
}

RunConfig load_config(const std::string& path) { return config_from_json(read_json_file(path)); }

std::string config_hash(const RunConfig& c) { return hex64(fnv1a(config_to_json(c).dump())); }

void validate(const RunConfig& c) {
  if (c.population < 2) throw ConfigError("population must be >= 2");
  if (c.generations < 0) throw ConfigError("generations must be >= 0");
  if (c.parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (c.dataset.n_classes < 2) throw ConfigError("dataset.n_classes must be >= 2");
  if (c.dataset.source != "synthetic" && c.dataset.source != "cifar10-binary")
    throw ConfigError("dataset.source must be 'synthetic' or 'cifar10-binary'");
  if (c.dataset.source == "cifar10-binary" && !fs::is_directory(c.dataset.path))
    throw ConfigError("dataset.path '" + c.dataset.path + "' is not a directory");
  if (!(c.dataset.test_fraction > 0.0 && c.dataset.test_fraction < 1.0))
    throw ConfigError("dataset.test_fraction must be in (0, 1)");
  if (c.external && c.external->command.empty()) throw ConfigError("external.command is empty");
  validate(c.train);
}

Datasets load_datasets(const DatasetConfig& c) {
  Datasets out;
  if (c.source == "synthetic") {
    SyntheticOptions so = c.synthetic;
    so.n_classes = c.n_classes;
    Dataset all = make_synthetic(so, c.seed);
    if (c.downscale > 0 && c.downscale != all.height) all = downscale(all, c.downscale);
    auto [train, test] = split(all, 1.0 - c.test_fraction, derive_seed(c.seed, 0x5350));
    out.train = std::move(train);
    out.test = std::move(test);
  } else {
    std::vector<std::string> train_files;
    for (int i = 1; i <= 5; ++i) {
      const fs::path p = fs::path(c.path) / ("data_batch_" + std::to_string(i) + ".bin");
      if (fs::exists(p)) train_files.push_back(p.string());
    }
    if (train_files.empty()) throw ConfigError("no data_batch_*.bin files in " + c.path);
    CifarOptions co{c.n_classes, c.downscale, c.subset};
    out.train = load_cifar10_binary(train_files, co);
    co.limit = 0;
    out.test = load_cifar10_binary({(fs::path(c.path) / "test_batch.bin").string()}, co);
  }
  if (c.subset > 0 && out.train.size() > c.subset) {
    std::vector<std::size_t> first(c.subset);
    std::iota(first.begin(), first.end(), 0);
    out.train = out.train.select(first);
  }
  return out;
}

LoadedBank load_bank(const std::string& path) {
  if (path.empty()) throw ConfigError("bank_path is not set");
  if (!fs::exists(path)) throw ConfigError("adversarial bank " + path + " does not exist");
  LoadedBank out{read_bank(path), std::nullopt};
  if (out.bank.size() == 0) throw ConfigError("adversarial bank " + path + " is empty");
  const std::string sidecar = clean_sidecar_path(path);
  if (fs::exists(sidecar)) out.clean = read_bank(sidecar);
  return out;
}

LoadedModel load_genome(const std::string& path, std::optional<GeneId> model_id) {
  Json j = read_json_file(path);
  if (j.contains("pool")) {
    Json pool = j["pool"];
    return load_model_snapshot(pool, model_id);
  }
  return load_model_snapshot(j, model_id);
}

// --- evolution -----------------------------------------------------------------

namespace {

struct Context {
  RunConfig config;
  std::string hash;
  Datasets data;
  LoadedBank bank;
  EvalContext eval;
};

Context make_context(const RunConfig& config) {
  validate(config);
  Context ctx{config, config_hash(config), load_datasets(config.dataset), load_bank(config.bank_path), {}};
  const ImageDims dims = dims_of(ctx.data.train);
  if (!(ctx.bank.bank.dims == dims))
    throw ConfigError("bank image shape does not match the dataset (" + std::to_string(ctx.bank.bank.dims.height) +
                      "x" + std::to_string(ctx.bank.bank.dims.width) + "x" +
                      std::to_string(ctx.bank.bank.dims.channels) + ")");
  validate(config.schedule, ctx.data.train.size());
  return ctx;
}

EvalContext eval_context(const Context& ctx) {
  EvalContext e;
  e.train_set = &ctx.data.train;
  e.bank = &ctx.bank.bank;
  e.clean = ctx.bank.clean ? &*ctx.bank.clean : nullptr;
  e.schedule = ctx.config.schedule;
  e.train = ctx.config.train;
  e.compile.max_params = ctx.config.max_params;
  e.robustness.clean_correct_denominator = ctx.config.clean_correct_denominator;
  return e;
}

Json spectrum_json(const Spectrum& s) {
  const auto f = s.features();
  return Json(std::vector<int>(f.begin(), f.end()));
}

Json outcome_fields(Json j, const EvalOutcome& o) {
  const Fitness f = o.fitness.value_or(Fitness{});
  j["accuracy"] = f.accuracy;
  j["robustness"] = f.robustness;
  j["fitness"] = f.total();
  j["epochs"] = o.train_epochs_used;
  j["mode"] = o.mode;
  if (!o.error.empty()) j["error"] = o.error;
  return j;
}

Json generation_record(const ClusterPopulation& clusters, const GenePool& pool, const std::string& hash) {
  Json reps = Json::array();
  for (GeneId id : clusters.representatives) {
    const ModelGene& m = pool.model(id);
    const Fitness f = m.fitness.value_or(Fitness{});
    reps.push_back({{"model", id},
                    {"accuracy", f.accuracy},
                    {"robustness", f.robustness},
                    {"spectrum", spectrum_json(spectrum(m, pool))}});
  }
  return {{"type", "generation"}, {"generation", clusters.generation}, {"config_hash", hash}, {"clusters", reps}};
}

Json archive_to_json(const std::vector<ArchiveEntry>& archive) {
  Json a = Json::array();
  for (const auto& e : archive)
    a.push_back({{"model", e.model},
                 {"generation", e.generation},
                 {"accuracy", e.fitness.accuracy},
                 {"robustness", e.fitness.robustness},
                 {"snapshot", e.snapshot}});
  return a;
}

std::vector<ArchiveEntry> archive_from_json(const Json& a) {
  std::vector<ArchiveEntry> out;
  for (const auto& e : a)
    out.push_back({e.at("model").get<GeneId>(), e.at("generation").get<int>(),
                   Fitness{e.at("accuracy").get<double>(), e.at("robustness").get<double>()}, e.at("snapshot")});
  return out;
}

void update_archive(std::vector<ArchiveEntry>& archive, const ClusterPopulation& clusters, const GenePool& pool) {
  for (GeneId id : clusters.representatives) {
    if (std::any_of(archive.begin(), archive.end(), [id](const ArchiveEntry& e) { return e.model == id; })) continue;
    const ModelGene& m = pool.model(id);
    archive.push_back({id, clusters.generation, m.fitness.value_or(Fitness{}), model_snapshot(m, pool)});
  }
  std::stable_sort(archive.begin(), archive.end(), [](const ArchiveEntry& a, const ArchiveEntry& b) {
    if (a.fitness.total() != b.fitness.total()) return a.fitness.total() > b.fitness.total();
    return a.model < b.model;
  });
  if (archive.size() > kArchiveSize) archive.resize(kArchiveSize);
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_state(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) throw ParseError(kCheckpointFile, "bad RNG state");
  return rng;
}

class EventLog {
 public:
  explicit EventLog(const fs::path& path) : out_(path, std::ios::app | std::ios::binary) {
    if (!out_) throw ConfigError("cannot open event log " + path.string());
  }
  void write(const Json& record) { out_ << record.dump() << '\n'; }
  std::uintmax_t flush() {
    out_.flush();
    if (!out_) throw ConfigError("event log write failed");
    return static_cast<std::uintmax_t>(out_.tellp());
  }

 private:
  std::ofstream out_;
};

void write_checkpoint(const fs::path& dir, const Context& ctx, const ClusterPopulation& clusters, const GenePool& pool,
                      const Rng& rng, std::uintmax_t offset, const std::vector<ArchiveEntry>& archive) {
  Json j{{"config_hash", ctx.hash},
         {"generation", clusters.generation},
         {"representatives", clusters.representatives},
         {"pool", pool_to_json(pool)},
         {"rng", rng_state(rng)},
         {"event_log_offset", offset},
         {"archive", archive_to_json(archive)}};
  write_text_file((dir / kCheckpointFile).string(), j.dump(1) + "\n");
}

void log_trace(EventLog& log, const GenerationTrace& trace) {
  for (const auto& ev : trace.children) {
    for (const auto& m : ev.mutations)
      log.write({{"type", "mutation"},
                 {"generation", trace.generation},
                 {"kind", to_string(m.kind)},
                 {"parent", m.parent_model},
                 {"child", m.child_model},
                 {"created", m.created_genes}});
    Json child{{"type", "child"},
               {"generation", trace.generation},
               {"parent_index", ev.parent_index},
               {"parent", ev.parent},
               {"child", ev.child},
               {"exhausted", ev.exhausted},
               {"nearest", ev.nearest_index},
               {"distance", ev.nearest_distance},
               {"replaced", ev.replaced}};
    if (ev.replaced) child["displaced"] = ev.displaced;
    log.write(outcome_fields(std::move(child), ev.outcome));
  }
}

}  // namespace

RunSummary run_evolve(const RunConfig& config, const std::string& run_dir, const RunOptions& options) {
  Context ctx = make_context(config);
  const EvalContext eval = eval_context(ctx);
  const fs::path dir(run_dir);
  fs::create_directories(dir);
  const fs::path log_path = dir / kEventsFile;

  EvaluationCache cache;
  std::unique_ptr<ModelEvaluator> evaluator;
  if (config.external) {
    ExternalRequest base;
    base.input_shape = input_shape(ctx.data.train);
    base.n_classes = ctx.data.train.n_classes;
    base.schedule = config.schedule;
    base.seed = config.seed;
    base.bank_path = fs::absolute(config.bank_path).string();
    evaluator = std::make_unique<ExternalEvaluator>(config.external->command, base,
                                                    std::chrono::milliseconds(config.external->timeout_ms));
  } else {
    evaluator = std::make_unique<LocalEvaluator>(eval, config.seed, config.serial_deterministic ? 1 : config.parallelism,
                                                 &cache);
  }

  GenePool pool(config.caps);
  ClusterPopulation clusters;
  Rng rng(derive_seed(config.seed, 0x4d55));
  std::vector<ArchiveEntry> archive;

  if (options.resume) {
    const Json cp = read_json_file((dir / kCheckpointFile).string());
    if (cp.at("config_hash").get<std::string>() != ctx.hash)
      throw ConfigError("checkpoint config hash " + cp.at("config_hash").get<std::string>() +
                        " does not match the config (" + ctx.hash + ")");
    pool = pool_from_json(cp.at("pool"));
    clusters.representatives = cp.at("representatives").get<std::vector<GeneId>>();
    clusters.generation = cp.at("generation").get<int>();
    rng = rng_from_state(cp.at("rng").get<std::string>());
    archive = archive_from_json(cp.at("archive"));
    const auto offset = cp.at("event_log_offset").get<std::uintmax_t>();
    if (!fs::exists(log_path) || fs::file_size(log_path) < offset)
      throw ConfigError("event log is shorter than the checkpoint offset");
    fs::resize_file(log_path, offset);
  } else {
    if (fs::exists(log_path)) fs::remove(log_path);
    EventLog log(log_path);
    log.write({{"type", "run_start"}, {"config_hash", ctx.hash}, {"config", config_to_json(config)}});
    Rng init(derive_seed(config.seed, 0x494e));
    for (int i = 0; i < config.population; ++i) clusters.representatives.push_back(random_model(init, pool).id);
    const auto outcomes = evaluate_representatives(clusters, pool, *evaluator);
    for (std::size_t i = 0; i < outcomes.size(); ++i)
      log.write(outcome_fields(
          {{"type", "evaluation"}, {"generation", 0}, {"model", clusters.representatives[i]}}, outcomes[i]));
    log.write(generation_record(clusters, pool, ctx.hash));
    update_archive(archive, clusters, pool);
    write_checkpoint(dir, ctx, clusters, pool, rng, log.flush(), archive);
    export_stats(run_dir);
  }

  NichingOptions niching;
  niching.normalize_spectrum = config.normalize_spectrum;
  while (clusters.generation < config.generations &&
         (options.stop_after < 0 || clusters.generation < options.stop_after)) {
    const GenerationTrace trace = evolve_generation(clusters, pool, *evaluator, rng, niching);
    check_integrity(pool);
    EventLog log(log_path);
    log_trace(log, trace);
    log.write(generation_record(clusters, pool, ctx.hash));
    update_archive(archive, clusters, pool);
    write_checkpoint(dir, ctx, clusters, pool, rng, log.flush(), archive);
    export_stats(run_dir);
  }

  RunSummary summary;
  summary.generation = clusters.generation;
  summary.finished = clusters.generation >= config.generations;
  summary.best = archive;
  summary.cache_hits = cache.hits();
  if (summary.finished && !archive.empty()) {
    const LoadedModel best = load_model_snapshot(archive.front().snapshot);
    std::string dump;
    try {
      dump = dump_text(compile(best.pool.model(best.model_id), best.pool, input_shape(ctx.data.train),
                               ctx.data.train.n_classes, eval.compile));
    } catch (const CompileError& e) {
      dump = std::string("# compile error: ") + e.what() + "\n";
    }
    write_text_file((dir / kBestGraphFile).string(), dump);
    Json best_json = Json::array();
    for (const auto& e : archive)
      best_json.push_back({{"model", e.model},
                           {"generation", e.generation},
                           {"accuracy", e.fitness.accuracy},
                           {"robustness", e.fitness.robustness},
                           {"fitness", e.fitness.total()}});
    Json report{{"config_hash", ctx.hash},
                {"generations", clusters.generation},
                {"best", best_json},
                {"cache_hits", summary.cache_hits}};
    write_text_file((dir / kReportFile).string(), report.dump(1) + "\n");
  }
  return summary;
}

// --- stats -----------------------------------------------------------------------

namespace {

template <typename Fn>
void for_each_record(const std::string& text, const std::string& where, Fn&& fn) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string loc = where + ":" + std::to_string(line_no);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(loc, e.what());
    }
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) throw ParseError(loc, "record without a type");
    try {
      fn(j, loc);
    } catch (const Json::exception& e) {
      throw ParseError(loc, e.what());
    }
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::vector<StatsRow> stats_from_log(const std::string& text, const std::string& where) {
  std::vector<StatsRow> rows;
  for_each_record(text, where, [&](const Json& j, const std::string& loc) {
    if (j["type"] != "generation") return;
    StatsRow r;
    r.generation = j.at("generation").get<int>();
    r.config_hash = j.value("config_hash", "");
    if (!rows.empty() && r.generation <= rows.back().generation)
      throw ParseError(loc, "generation " + std::to_string(r.generation) + " is not after " +
                                std::to_string(rows.back().generation));
    const Json& clusters = j.at("clusters");
    if (!clusters.is_array() || clusters.empty()) throw ParseError(loc, "generation record without clusters");
    r.clusters = clusters.size();
    r.max_fitness = r.max_accuracy = r.max_robustness = -1.0;
    for (const auto& c : clusters) {
      const double acc = c.at("accuracy").get<double>(), rob = c.at("robustness").get<double>();
      const auto f = c.at("spectrum").get<std::vector<int>>();
      if (f.size() != Spectrum::kFeatures) throw ParseError(loc, "spectrum must have 10 features");
      const double fit = acc + rob;
      r.mean_fitness += fit;
      r.mean_accuracy += acc;
      r.mean_robustness += rob;
      r.max_fitness = std::max(r.max_fitness, fit);
      r.max_accuracy = std::max(r.max_accuracy, acc);
      r.max_robustness = std::max(r.max_robustness, rob);
      const double blocks = f[0];
      r.mean_blocks += blocks;
      r.mean_layers += f[1];
      r.mean_block_conns += f[2];
      r.mean_layer_conns += f[3];
      r.mean_layers_per_block += blocks > 0 ? f[1] / blocks : 0.0;
      r.mean_conns_per_block += blocks > 0 ? f[3] / blocks : 0.0;
    }
    const double n = static_cast<double>(r.clusters);
    for (double* v : {&r.mean_fitness, &r.mean_accuracy, &r.mean_robustness, &r.mean_blocks, &r.mean_layers,
                      &r.mean_block_conns, &r.mean_layer_conns, &r.mean_layers_per_block, &r.mean_conns_per_block})
      *v /= n;
    rows.push_back(r);
  });
  return rows;
}

std::string stats_csv(const std::vector<StatsRow>& rows) {
  std::string out =
      "generation,clusters,mean_fitness,max_fitness,mean_accuracy,max_accuracy,mean_robustness,max_robustness,"
      "mean_blocks,mean_layers,mean_block_conns,mean_layer_conns,mean_layers_per_block,mean_conns_per_block,"
      "config_hash\n";
  for (const auto& r : rows) {
    out += std::to_string(r.generation) + "," + std::to_string(r.clusters);
    for (double v : {r.mean_fitness, r.max_fitness, r.mean_accuracy, r.max_accuracy, r.mean_robustness,
                     r.max_robustness, r.mean_blocks, r.mean_layers, r.mean_block_conns, r.mean_layer_conns,
                     r.mean_layers_per_block, r.mean_conns_per_block})
      out += "," + fmt(v);
    out += "," + r.config_hash + "\n";
  }
  return out;
}

std::string clusters_csv(const std::string& text, const std::string& where) {
  std::string out = "generation,cluster,model,accuracy,robustness,fitness";
  for (const char* name : kSpectrumFeatureNames) out += std::string(",") + name;
  out += "\n";
  for_each_record(text, where, [&](const Json& j, const std::string&) {
    if (j["type"] != "generation") return;
    const int g = j.at("generation").get<int>();
    int index = 0;
    for (const auto& c : j.at("clusters")) {
      const double acc = c.at("accuracy").get<double>(), rob = c.at("robustness").get<double>();
      out += std::to_string(g) + "," + std::to_string(index++) + "," + std::to_string(c.at("model").get<GeneId>()) +
             "," + fmt(acc) + "," + fmt(rob) + "," + fmt(acc + rob);
      for (int v : c.at("spectrum").get<std::vector<int>>()) out += "," + std::to_string(v);
      out += "\n";
    }
  });
  return out;
}

std::vector<StatsRow> export_stats(const std::string& run_dir) {
  const fs::path dir(run_dir);
  const fs::path log = dir / kEventsFile;
  if (!fs::exists(log)) throw ConfigError("no event log in " + run_dir);
  const std::string text = read_text_file(log.string());
  auto rows = stats_from_log(text, log.string());
  write_text_file((dir / kStatsFile).string(), stats_csv(rows));
  write_text_file((dir / kClustersFile).string(), clusters_csv(text, log.string()));
  return rows;
}

// --- single evaluations ------------------------------------------------------------

FitnessReport evaluate_one(const LoadedModel& genome, const RunConfig& config, int generation) {
  Context ctx = make_context(config);
  const EvalContext eval = eval_context(ctx);
  return evaluate(genome.pool.model(genome.model_id), genome.pool, eval, generation,
                  evaluation_seed(config.seed, generation));
}

void serve_requests(const RunConfig& config, std::istream& in, std::ostream& out) {
  validate(config);
  const Datasets data = load_datasets(config.dataset);
  std::map<std::string, LoadedBank> banks;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    FitnessReport report;
    try {
      const ExternalRequest req = request_from_json(parse_json_text(line, "request"));
      if (!(req.input_shape == input_shape(data.train)) || req.n_classes != data.train.n_classes)
        throw ConfigError("request shape does not match the configured dataset");
      auto it = banks.find(req.bank_path);
      if (it == banks.end()) it = banks.emplace(req.bank_path, load_bank(req.bank_path)).first;
      EvalContext eval;
      eval.train_set = &data.train;
      eval.bank = &it->second.bank;
      eval.clean = it->second.clean ? &*it->second.clean : nullptr;
      eval.schedule = req.schedule;
      eval.train = config.train;
      eval.compile.max_params = config.max_params;
      eval.robustness.clean_correct_denominator = config.clean_correct_denominator;
      validate(eval.schedule, data.train.size());
      const LoadedModel genome = load_model_snapshot(req.genome);
      report = evaluate(genome.pool.model(genome.model_id), genome.pool, eval, req.generation, req.seed);
    } catch (const std::exception& e) {
      report = FitnessReport{};
      report.error = e.what();
    }
    out << response_line(report) << '\n' << std::flush;
  }
}

}  // namespace ras
