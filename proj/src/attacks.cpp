#include "ras/attacks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "ras/graph.hpp"

namespace ras {

static_assert(std::endian::native == std::endian::little, "bank I/O assumes a little-endian host");

std::string to_string(Norm norm) { return norm == Norm::L0 ? "L0" : "Linf"; }

std::string to_string(const AttackSpec& spec) { return to_string(spec.norm) + ":" + std::to_string(spec.th); }

AttackSpec parse_attack_spec(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("attack spec '" + text + "' is not NORM:TH");
  AttackSpec spec;
  const std::string norm = text.substr(0, colon);
  if (norm == "L0" || norm == "l0") {
    spec.norm = Norm::L0;
  } else if (norm == "Linf" || norm == "linf" || norm == "Li") {
    spec.norm = Norm::Linf;
  } else {
    throw ConfigError("unknown norm '" + norm + "'");
  }
  try {
    std::size_t used = 0;
    spec.th = std::stoi(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::logic_error&) {
    throw ConfigError("bad threshold in attack spec '" + text + "'");
  }
  if (spec.th < 1 || spec.th > 255) throw ConfigError("attack threshold must be in [1, 255]");
  return spec;
}

SearchSpace encode_perturbation(const AttackSpec& spec, const ImageDims& dims) {
  if (spec.th < 1) throw ConfigError("attack threshold must be positive");
  SearchSpace s;
  if (spec.norm == Norm::L0) {
    for (int t = 0; t < spec.th; ++t) {
      s.lower.push_back(0.0);
      s.upper.push_back(dims.width);
      s.lower.push_back(0.0);
      s.upper.push_back(dims.height);
      for (int c = 0; c < dims.channels; ++c) {
        s.lower.push_back(0.0);
        s.upper.push_back(1.0);
      }
    }
  } else {
    const double eps = spec.th / 255.0;
    s.lower.assign(dims.size(), -eps);
    s.upper.assign(dims.size(), eps);
  }
  return s;
}

void apply_perturbation(const AttackSpec& spec, const ImageDims& dims, std::span<const float> clean,
                        std::span<const double> candidate, std::span<float> out) {
  std::copy(clean.begin(), clean.end(), out.begin());
  const std::size_t plane = static_cast<std::size_t>(dims.height) * dims.width;
  if (spec.norm == Norm::L0) {
    const std::size_t stride = 2 + dims.channels;
    for (int t = 0; t < spec.th; ++t) {
      const double* tuple = candidate.data() + t * stride;
      const int x = std::clamp(static_cast<int>(std::floor(tuple[0])), 0, dims.width - 1);
      const int y = std::clamp(static_cast<int>(std::floor(tuple[1])), 0, dims.height - 1);
      for (int c = 0; c < dims.channels; ++c)
        out[c * plane + y * dims.width + x] = static_cast<float>(std::clamp(tuple[2 + c], 0.0, 1.0));
    }
  } else {
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = std::clamp(static_cast<float>(clean[i] + candidate[i]), 0.0f, 1.0f);
  }
}

void NetworkClassifier::predict_proba(std::span<const float> images, int n, std::span<float> probs) {
  const std::size_t isz = net_.input_size();
  const int k = net_.n_classes();
  constexpr int kChunk = 256;
  for (int start = 0; start < n; start += kChunk) {
    const int count = std::min(kChunk, n - start);
    auto p = net_.forward(images.subspan(start * isz, count * isz), count, Mode::Inference);
    std::copy(p.begin(), p.end(), probs.begin() + static_cast<std::ptrdiff_t>(start) * k);
  }
}

AttackOutcome de_attack(Classifier& victim, std::span<const float> image, const ImageDims& dims, int label,
                        const AttackSpec& spec, Rng& rng) {
  if (image.size() != dims.size()) throw ConfigError("attack image size does not match dimensions");
  const SearchSpace space = encode_perturbation(spec, dims);
  const std::size_t dim = space.dimensions();
  const int k = victim.n_classes();

  AttackOutcome outcome;
  std::vector<float> batch, probs;
  auto objective = [&](std::span<const double> cands, int count, std::span<double> values) {
    batch.resize(static_cast<std::size_t>(count) * image.size());
    probs.resize(static_cast<std::size_t>(count) * k);
    for (int i = 0; i < count; ++i)
      apply_perturbation(spec, dims, image, cands.subspan(i * dim, dim),
                         std::span<float>(batch).subspan(i * image.size(), image.size()));
    victim.predict_proba(batch, count, probs);
    outcome.queries += count;
    for (int i = 0; i < count; ++i) {
      const float* p = probs.data() + static_cast<std::size_t>(i) * k;
      values[i] = p[label];
      const int argmax = static_cast<int>(std::max_element(p, p + k) - p);
      if (argmax != label && !outcome.adversarial) {
        outcome.adversarial.emplace(batch.begin() + static_cast<std::ptrdiff_t>(i * image.size()),
                                    batch.begin() + static_cast<std::ptrdiff_t>((i + 1) * image.size()));
      }
    }
    return outcome.adversarial.has_value();
  };
  differential_evolution(space.lower, space.upper, objective, spec.budget, rng);
  return outcome;
}

// --- bank I/O ----------------------------------------------------------------

namespace {

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  void floats(std::vector<float>& out, std::size_t n) {
    need(n * sizeof(float));
    out.resize(n);
    std::memcpy(out.data(), bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  std::size_t pos() const { return pos_; }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(where_ + "@" + std::to_string(pos_), what);
  }

 private:
  void need(std::size_t n) {
    if (bytes_.size() - pos_ < n) fail("truncated");
  }

  const std::string& bytes_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_bank(const AdversarialBank& bank) {
  std::string out;
  out.append(kBankMagic.data(), kBankMagic.size());
  put<std::uint32_t>(out, kBankVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.records.size()));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(bank.dims.height));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(bank.dims.width));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(bank.dims.channels));
  put<std::uint16_t>(out, bank.n_classes);
  for (const auto& r : bank.records) {
    if (r.image.size() != bank.dims.size()) throw ConfigError("bank record image size does not match header");
    out.append(reinterpret_cast<const char*>(r.image.data()), r.image.size() * sizeof(float));
    put<std::uint16_t>(out, r.label);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.norm));
    put<std::uint8_t>(out, r.th);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.optimizer));
    put<std::uint8_t>(out, r.victim);
  }
  return out;
}

AdversarialBank decode_bank(const std::string& bytes, const std::string& where) {
  Reader in(bytes, where);
  std::array<char, 4> magic{};
  for (auto& ch : magic) ch = in.get<char>();
  if (magic != kBankMagic) in.fail("bad magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kBankVersion) in.fail("unsupported version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>();
  AdversarialBank bank;
  bank.dims.height = in.get<std::uint16_t>();
  bank.dims.width = in.get<std::uint16_t>();
  bank.dims.channels = in.get<std::uint16_t>();
  bank.n_classes = in.get<std::uint16_t>();
  const std::size_t record_bytes = bank.dims.size() * sizeof(float) + 6;
  if (record_bytes * count != bytes.size() - in.pos())
    in.fail("payload size disagrees with header count " + std::to_string(count));
  bank.records.resize(count);
  for (auto& r : bank.records) {
    in.floats(r.image, bank.dims.size());
    r.label = in.get<std::uint16_t>();
    const auto norm = in.get<std::uint8_t>();
    if (norm > 1) in.fail("unknown norm tag " + std::to_string(norm));
    r.norm = static_cast<Norm>(norm);
    r.th = in.get<std::uint8_t>();
    const auto opt = in.get<std::uint8_t>();
    if (opt > 1) in.fail("unknown optimizer tag " + std::to_string(opt));
    r.optimizer = static_cast<OptimizerTag>(opt);
    r.victim = in.get<std::uint8_t>();
    if (bank.n_classes != 0 && r.label >= bank.n_classes) in.fail("label out of range");
  }
  return bank;
}

void write_bank(const std::string& path, const AdversarialBank& bank) { write_text_file(path, encode_bank(bank)); }

AdversarialBank read_bank(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open bank " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_bank(bytes, path);
}

namespace {

std::size_t changed_pixels(std::span<const float> a, std::span<const float> b, const ImageDims& dims) {
  const std::size_t plane = static_cast<std::size_t>(dims.height) * dims.width;
  std::size_t changed = 0;
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < dims.channels; ++c)
      if (a[c * plane + p] != b[c * plane + p]) {
        ++changed;
        break;
      }
  return changed;
}

}  // namespace

bool constraint_satisfied(const BankRecord& adv, std::span<const float> clean, const ImageDims& dims) {
  if (adv.image.size() != clean.size() || clean.size() != dims.size()) return false;
  for (float v : adv.image)
    if (!(v >= 0.0f && v <= 1.0f)) return false;
  if (adv.norm == Norm::L0) return changed_pixels(adv.image, clean, dims) <= adv.th;
  const double eps = adv.th / 255.0 + 1e-6;
  for (std::size_t i = 0; i < clean.size(); ++i)
    if (std::abs(static_cast<double>(adv.image[i]) - clean[i]) > eps) return false;
  return true;
}

BankVerification verify_bank(const AdversarialBank& bank, const AdversarialBank& clean) {
  if (bank.size() != clean.size() || !(bank.dims == clean.dims))
    throw ConfigError("clean sidecar does not match the bank");
  BankVerification v;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    ++v.checked;
    if (constraint_satisfied(bank.records[i], clean.records[i].image, bank.dims)) ++v.passed;
  }
  return v;
}

// --- victims -------------------------------------------------------------------

std::vector<std::string> builtin_victims() { return {"cnn", "mlp"}; }

namespace {

LoadedModel single_block_chain(std::vector<std::vector<LayerGene>> blocks) {
  LoadedModel out;
  ModelGene model;
  for (auto& layers : blocks) {
    BlockGene block;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      block.layer_refs.push_back(out.pool.add_layer(layers[i]));
      if (i > 0) block.layer_edges.insert({static_cast<int>(i) - 1, static_cast<int>(i)});
    }
    const int pos = static_cast<int>(model.block_refs.size());
    model.block_refs.push_back(out.pool.add_block(std::move(block)));
    if (pos > 0) model.block_edges.insert({pos - 1, pos});
  }
  out.model_id = out.pool.add_model(std::move(model));
  return out;
}

}  // namespace

LoadedModel victim_genome(const std::string& name) {
  if (name == "cnn")
    return single_block_chain({{LayerGene::conv(3, 16, 1), LayerGene::conv(3, 32, 2)}, {LayerGene::dense(64)}});
  if (name == "mlp") return single_block_chain({{LayerGene::dense(128), LayerGene::dense(64)}});
  return load_model_snapshot(read_json_file(name));
}

Victim train_victim(const std::string& name, std::uint8_t tag, const Dataset& train_set, const Dataset& val_set,
                    const TrainConfig& config) {
  const LoadedModel genome = victim_genome(name);
  auto graph = compile(genome.pool.model(genome.model_id), genome.pool, input_shape(train_set), train_set.n_classes);
  Victim v;
  v.name = name;
  v.tag = tag;
  v.net = std::make_shared<Network<float>>(std::move(graph), derive_seed(config.seed, 0x5649, tag));
  const TrainResult r = train(*v.net, train_set, val_set, config);
  if (r.aborted) throw ConfigError("victim '" + name + "' diverged during training");
  v.test_accuracy = accuracy(*v.net, val_set);
  return v;
}

BankBuildResult build_bank(std::vector<Victim>& victims, const Dataset& test_set, const std::vector<AttackSpec>& specs,
                           const BankBuildOptions& options) {
  if (test_set.size() == 0) throw ConfigError("bank construction needs a non-empty test set");
  BankBuildResult result;
  const ImageDims dims = dims_of(test_set);
  for (auto* bank : {&result.bank, &result.clean}) {
    bank->dims = dims;
    bank->n_classes = static_cast<std::uint16_t>(test_set.n_classes);
  }

  for (auto& victim : victims) {
    const auto predicted = predict(*victim.net, test_set.pixels, static_cast<int>(test_set.size()));
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < test_set.size(); ++i)
      if (predicted[i] == test_set.labels[i]) eligible.push_back(i);
    NetworkClassifier classifier(*victim.net);

    for (std::size_t s = 0; s < specs.size(); ++s) {
      const AttackSpec& spec = specs[s];
      CellStats cell{victim.tag, to_string(spec), 0, 0};
      std::vector<std::size_t> order = eligible;
      Rng shuffle(derive_seed(options.seed, 0x4f52, victim.tag, s));
      std::shuffle(order.begin(), order.end(), shuffle);
      for (std::size_t idx : order) {
        if (cell.succeeded >= options.quota || cell.attempted >= options.max_attempts) break;
        ++cell.attempted;
        Rng rng(derive_seed(options.seed, 0x4154, victim.tag, s, idx));
        const auto image = test_set.image(idx);
        const int label = test_set.labels[idx];
        AttackOutcome outcome = de_attack(classifier, image, dims, label, spec, rng);
        if (!outcome.adversarial) continue;
        ++cell.succeeded;
        BankRecord rec{std::move(*outcome.adversarial), static_cast<std::uint16_t>(label), spec.norm,
                       static_cast<std::uint8_t>(spec.th), spec.optimizer, victim.tag};
        BankRecord clean = rec;
        clean.image.assign(image.begin(), image.end());
        result.bank.records.push_back(std::move(rec));
        result.clean.records.push_back(std::move(clean));
      }
      result.cells.push_back(cell);
    }
  }
  return result;
}

}  // namespace ras
