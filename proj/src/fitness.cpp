#include "ras/fitness.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <thread>

namespace ras {

void validate(const EvalSchedule& s, std::size_t training_size) {
  if (s.full_every < 1) throw ConfigError("schedule.full_every must be >= 1");
  if (s.full_epochs < 1 || s.subset_epochs < 1) throw ConfigError("schedule epochs must be >= 1");
  if (s.subset_size < 2) throw ConfigError("schedule.subset_size must be >= 2");
  if (static_cast<std::size_t>(s.subset_size) > training_size)
    throw ConfigError("schedule.subset_size " + std::to_string(s.subset_size) + " exceeds the training set (" +
                      std::to_string(training_size) + ")");
}

Json schedule_to_json(const EvalSchedule& s) {
  return {{"full_every", s.full_every},
          {"full_epochs", s.full_epochs},
          {"subset_size", s.subset_size},
          {"subset_epochs", s.subset_epochs}};
}

EvalSchedule schedule_from_json(const Json& j) {
  EvalSchedule s;
  s.full_every = j.value("full_every", s.full_every);
  s.full_epochs = j.value("full_epochs", s.full_epochs);
  s.subset_size = j.value("subset_size", s.subset_size);
  s.subset_epochs = j.value("subset_epochs", s.subset_epochs);
  return s;
}

std::string to_string(EvalMode mode) { return mode == EvalMode::FullSet ? "full" : "subset"; }

double score_robustness(Network<float>& net, const AdversarialBank& bank, const AdversarialBank* clean,
                        const RobustnessOptions& options) {
  if (bank.size() == 0) throw ConfigError("adversarial bank is empty");
  if (net.input_size() != static_cast<std::int64_t>(bank.dims.size()))
    throw ConfigError("bank images do not match the model input");
  std::vector<float> images;
  images.reserve(bank.size() * bank.dims.size());
  for (const auto& r : bank.records) images.insert(images.end(), r.image.begin(), r.image.end());
  const auto predicted = predict(net, images, static_cast<int>(bank.size()));

  std::vector<bool> counted(bank.size(), true);
  if (options.clean_correct_denominator) {
    if (!clean || clean->size() != bank.size()) throw ConfigError("clean-correct robustness needs the clean sidecar");
    std::vector<float> clean_images;
    for (const auto& r : clean->records) clean_images.insert(clean_images.end(), r.image.begin(), r.image.end());
    const auto clean_pred = predict(net, clean_images, static_cast<int>(clean->size()));
    for (std::size_t i = 0; i < bank.size(); ++i) counted[i] = clean_pred[i] == clean->records[i].label;
  }
  std::size_t total = 0, resisted = 0;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (!counted[i]) continue;
    ++total;
    if (predicted[i] == bank.records[i].label) ++resisted;
  }
  return total == 0 ? 0.0 : static_cast<double>(resisted) / static_cast<double>(total);
}

FitnessReport evaluate(const ModelGene& model, const GenePool& pool, const EvalContext& ctx, int generation,
                       std::uint64_t seed) {
  if (!ctx.train_set || !ctx.bank) throw ConfigError("evaluation context needs a training set and a bank");
  FitnessReport report;
  report.mode = eval_mode(generation, ctx.schedule);
  CompiledGraph graph;
  try {
    graph = compile(model, pool, input_shape(*ctx.train_set), ctx.train_set->n_classes, ctx.compile);
  } catch (const CompileError& e) {
    report.error = std::string("compile: ") + e.what();
    return report;
  }
  report.param_count = graph.param_count;

  Dataset budget;
  int epochs = ctx.schedule.full_epochs;
  if (report.mode == EvalMode::Subset) {
    const auto idx = sample_indices(ctx.train_set->size(), ctx.schedule.subset_size, derive_seed(seed, 1));
    budget = ctx.train_set->select(idx);
    epochs = ctx.schedule.subset_epochs;
  } else {
    budget = *ctx.train_set;
  }
  auto [train_part, val_part] = split(budget, 1.0 - ctx.validation_fraction, derive_seed(seed, 2));
  if (val_part.size() == 0 || train_part.size() == 0) throw ConfigError("training budget too small to hold out validation");

  TrainConfig tc = ctx.train;
  tc.max_epochs = epochs;
  tc.seed = derive_seed(seed, 3);
  Network<float> net(std::move(graph), derive_seed(seed, 4));
  const TrainResult tr = train(net, train_part, val_part, tc);
  report.train_epochs_used = tr.epochs_used;
  if (tr.aborted) {
    report.error = "training diverged";
    return report;
  }
  report.accuracy = tr.val_accuracy;
  report.robustness = score_robustness(net, *ctx.bank, ctx.clean, ctx.robustness);
  return report;
}

std::string EvaluationCache::key(const std::string& structure, std::uint64_t seed, const EvalSchedule& s,
                                 EvalMode mode) {
  return structure + "|" + hex64(seed) + "|" + schedule_to_json(s).dump() + "|" + to_string(mode);
}

std::optional<FitnessReport> EvaluationCache::find(const std::string& key) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  ++hits_;
  return it->second;
}

void EvaluationCache::store(const std::string& key, const FitnessReport& report) {
  std::lock_guard lock(mutex_);
  entries_.emplace(key, report);
}

std::size_t EvaluationCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

EvalOutcome to_outcome(const FitnessReport& r) {
  EvalOutcome o;
  o.fitness = Fitness{r.accuracy, r.robustness};
  o.error = r.error;
  o.train_epochs_used = r.train_epochs_used;
  o.mode = to_string(r.mode);
  return o;
}

LocalEvaluator::LocalEvaluator(EvalContext context, std::uint64_t run_seed, int parallelism, EvaluationCache* cache)
    : context_(context), run_seed_(run_seed), parallelism_(std::max(parallelism, 1)), cache_(cache) {}

std::vector<EvalOutcome> LocalEvaluator::evaluate(const std::vector<GeneId>& models, const GenePool& pool,
                                                  int generation) {
  const std::uint64_t seed = evaluation_seed(run_seed_, generation);
  const EvalMode mode = eval_mode(generation, context_.schedule);
  std::vector<EvalOutcome> out(models.size());

  auto one = [&](std::size_t i) {
    const ModelGene& m = pool.model(models[i]);
    std::string key;
    if (cache_) {
      key = EvaluationCache::key(structural_key(m, pool), seed, context_.schedule, mode);
      if (auto hit = cache_->find(key)) {
        out[i] = to_outcome(*hit);
        return;
      }
    }
    const FitnessReport r = ras::evaluate(m, pool, context_, generation, seed);
    if (cache_) cache_->store(key, r);
    out[i] = to_outcome(r);
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < models.size();) {
      try {
        one(i);
      } catch (const std::exception& e) {
        FitnessReport failed;
        failed.mode = mode;
        failed.error = e.what();
        out[i] = to_outcome(failed);
      }
    }
  };
  const int threads = std::min<int>(parallelism_, static_cast<int>(models.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool_threads;
    for (int t = 0; t < threads; ++t) pool_threads.emplace_back(worker);
    for (auto& t : pool_threads) t.join();
  }
  return out;
}

// --- external evaluator --------------------------------------------------------

Json request_to_json(const ExternalRequest& r) {
  return {{"genome", r.genome},
          {"input_shape", {r.input_shape.h, r.input_shape.w, r.input_shape.c}},
          {"n_classes", r.n_classes},
          {"schedule", schedule_to_json(r.schedule)},
          {"generation", r.generation},
          {"seed", r.seed},
          {"bank_path", r.bank_path}};
}

ExternalRequest request_from_json(const Json& j) {
  try {
    ExternalRequest r;
    r.genome = j.at("genome");
    const auto& shape = j.at("input_shape");
    if (!shape.is_array() || shape.size() != 3) throw ParseError("request.input_shape", "expected [h, w, c]");
    r.input_shape = TensorShape::spatial(shape[0].get<int>(), shape[1].get<int>(), shape[2].get<int>());
    r.n_classes = j.at("n_classes").get<int>();
    r.schedule = schedule_from_json(j.at("schedule"));
    r.generation = j.at("generation").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.bank_path = j.at("bank_path").get<std::string>();
    return r;
  } catch (const Json::exception& e) {
    throw ParseError("request", e.what());
  }
}

std::string response_line(const FitnessReport& r) {
  Json j{{"accuracy", r.accuracy}, {"robustness", r.robustness}, {"train_epochs_used", r.train_epochs_used}};
  if (!r.error.empty()) j["error"] = r.error;
  return j.dump();
}

FitnessReport parse_response_line(const std::string& line) {
  const Json j = parse_json_text(line, "response");
  FitnessReport r;
  try {
    r.accuracy = j.at("accuracy").get<double>();
    r.robustness = j.at("robustness").get<double>();
    r.train_epochs_used = j.at("train_epochs_used").get<int>();
    if (j.contains("error")) r.error = j.at("error").get<std::string>();
  } catch (const Json::exception& e) {
    throw ParseError("response", e.what());
  }
  auto in_unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  if (!in_unit(r.accuracy) || !in_unit(r.robustness)) throw ParseError("response", "fractions must lie in [0, 1]");
  if (r.train_epochs_used < 0) throw ParseError("response", "negative epoch count");
  return r;
}

ExternalEvaluator::ExternalEvaluator(std::vector<std::string> command, ExternalRequest base,
                                     std::chrono::milliseconds timeout)
    : command_(std::move(command)), base_(std::move(base)), timeout_(timeout) {
  if (command_.empty()) throw ConfigError("external evaluator command is empty");
  ::signal(SIGPIPE, SIG_IGN);
}

ExternalEvaluator::~ExternalEvaluator() { stop(); }

void ExternalEvaluator::start() {
  int in_pipe[2], out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw ConfigError(std::string("pipe: ") + std::strerror(errno));
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw ConfigError(std::string("pipe: ") + std::strerror(errno));
  }
  std::vector<char*> argv;
  for (auto& a : command_) argv.push_back(a.data());
  argv.push_back(nullptr);
  const pid_t pid = ::fork();
  if (pid < 0) throw ConfigError(std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::execvp(argv[0], argv.data());
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  pending_.clear();
}

void ExternalEvaluator::stop() {
  if (pid_ < 0) return;
  ::close(to_child_);
  ::close(from_child_);
  ::kill(pid_, SIGKILL);
  ::waitpid(pid_, nullptr, 0);
  pid_ = to_child_ = from_child_ = -1;
}

FitnessReport ExternalEvaluator::request(const ExternalRequest& req) {
  if (pid_ < 0) start();
  const std::string line = request_to_json(req).dump() + "\n";
  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(to_child_, line.data() + written, line.size() - written);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      stop();
      throw ParseError("external evaluator", "child closed its input");
    }
    written += static_cast<std::size_t>(n);
  }

  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  std::size_t newline;
  while ((newline = pending_.find('\n')) == std::string::npos) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      stop();
      throw ParseError("external evaluator", "timed out after " + std::to_string(timeout_.count()) + " ms");
    }
    pollfd pfd{from_child_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (ready < 0 && errno == EINTR) continue;
    if (ready <= 0) continue;
    char buf[4096];
    const ssize_t n = ::read(from_child_, buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      stop();
      throw ParseError("external evaluator", "child exited without a response");
    }
    pending_.append(buf, static_cast<std::size_t>(n));
  }
  const std::string response = pending_.substr(0, newline);
  pending_.erase(0, newline + 1);
  try {
    FitnessReport r = parse_response_line(response);
    r.mode = eval_mode(req.generation, req.schedule);
    return r;
  } catch (const ParseError&) {
    stop();
    throw;
  }
}

std::vector<EvalOutcome> ExternalEvaluator::evaluate(const std::vector<GeneId>& models, const GenePool& pool,
                                                     int generation) {
  std::vector<EvalOutcome> out;
  for (GeneId id : models) {
    ExternalRequest req = base_;
    req.genome = model_snapshot(pool.model(id), pool);
    req.generation = generation;
    req.seed = evaluation_seed(base_.seed, generation);
    FitnessReport r;
    try {
      r = request(req);
    } catch (const ParseError& e) {
      r = FitnessReport{};
      r.mode = eval_mode(generation, req.schedule);
      r.error = e.what();
    }
    out.push_back(to_outcome(r));
  }
  return out;
}

}  // namespace ras
