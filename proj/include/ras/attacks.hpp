#pragma once

// Black-box L0 / Linf attacks solved with differential evolution, and the
// persistent adversarial bank used for transfer-robustness scoring.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ras/dataset.hpp"
#include "ras/de.hpp"
#include "ras/nn.hpp"
#include "ras/serialize.hpp"

namespace ras {

enum class Norm : std::uint8_t { L0 = 0, Linf = 1 };
enum class OptimizerTag : std::uint8_t { DE = 0, CMAES = 1 };

inline constexpr std::array<int, 4> kThresholds{1, 3, 5, 10};

struct ImageDims {
  int channels = 3;
  int height = 0;
  int width = 0;
  std::size_t size() const { return static_cast<std::size_t>(channels) * height * width; }
  bool operator==(const ImageDims&) const = default;
};

inline ImageDims dims_of(const Dataset& d) { return {d.channels, d.height, d.width}; }

struct AttackSpec {
  Norm norm = Norm::Linf;
  int th = 10;  // pixel count for L0, 0-255 units for Linf
  OptimizerTag optimizer = OptimizerTag::DE;
  DeOptions budget;
  std::uint8_t victim = 0;
};

/// "L0:3", "Linf:10"
std::string to_string(const AttackSpec& spec);
AttackSpec parse_attack_spec(const std::string& text);
std::string to_string(Norm norm);

struct SearchSpace {
  std::vector<double> lower;
  std::vector<double> upper;
  std::size_t dimensions() const { return lower.size(); }
};

/// L0: th tuples (x, y, colour...) with coordinates in [0, extent) and
/// colours in [0, 1]. Linf: one bounded offset per image component.
SearchSpace encode_perturbation(const AttackSpec& spec, const ImageDims& dims);

/// Writes the perturbed image for `candidate` into `out`, clipped to [0, 1].
void apply_perturbation(const AttackSpec& spec, const ImageDims& dims, std::span<const float> clean,
                        std::span<const double> candidate, std::span<float> out);

/// Soft-label oracle used by the black-box attack.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual int n_classes() const = 0;
  /// `images` holds n samples; writes n x n_classes probabilities.
  virtual void predict_proba(std::span<const float> images, int n, std::span<float> probs) = 0;
};

class NetworkClassifier : public Classifier {
 public:
  explicit NetworkClassifier(Network<float>& net) : net_(net) {}
  int n_classes() const override { return net_.n_classes(); }
  void predict_proba(std::span<const float> images, int n, std::span<float> probs) override;

 private:
  Network<float>& net_;
};

struct AttackOutcome {
  std::optional<std::vector<float>> adversarial;
  long queries = 0;
};

/// Minimises the true-class confidence under the norm bound; returns the
/// perturbed image as soon as the predicted class differs from `label`.
AttackOutcome de_attack(Classifier& victim, std::span<const float> image, const ImageDims& dims, int label,
                        const AttackSpec& spec, Rng& rng);

// --- bank ------------------------------------------------------------------

inline constexpr std::array<char, 4> kBankMagic{'R', 'A', 'S', 'B'};
inline constexpr std::uint32_t kBankVersion = 1;

struct BankRecord {
  std::vector<float> image;
  std::uint16_t label = 0;
  Norm norm = Norm::L0;
  std::uint8_t th = 0;
  OptimizerTag optimizer = OptimizerTag::DE;
  std::uint8_t victim = 0;

  bool operator==(const BankRecord&) const = default;
};

struct AdversarialBank {
  ImageDims dims;
  std::uint16_t n_classes = 0;
  std::vector<BankRecord> records;

  std::size_t size() const { return records.size(); }
  bool operator==(const AdversarialBank&) const = default;
};

/// Little-endian: magic, u32 version, u32 count, u16 h, u16 w, u16 c,
/// u16 n_classes, then per record the float image, u16 label, u8 norm,
/// u8 th, u8 optimizer, u8 victim.
std::string encode_bank(const AdversarialBank& bank);
AdversarialBank decode_bank(const std::string& bytes, const std::string& where = "bank");
void write_bank(const std::string& path, const AdversarialBank& bank);
AdversarialBank read_bank(const std::string& path);

/// Re-checks the stored norm claim against the clean image: at most th
/// changed pixel positions (L0) or every component within th/255 (Linf).
bool constraint_satisfied(const BankRecord& adversarial, std::span<const float> clean, const ImageDims& dims);

struct BankVerification {
  std::size_t checked = 0;
  std::size_t passed = 0;
  bool all_passed() const { return checked == passed; }
};
/// `clean` is the sidecar bank, record-aligned with `bank`.
BankVerification verify_bank(const AdversarialBank& bank, const AdversarialBank& clean);

// --- victims and bank construction ------------------------------------------

struct Victim {
  std::string name;
  std::uint8_t tag = 0;
  std::shared_ptr<Network<float>> net;
  double test_accuracy = 0.0;
};

/// Names of the built-in victim architectures ("cnn", "mlp").
std::vector<std::string> builtin_victims();
/// Built-in name or path to a model snapshot; throws on unknown/unreadable input.
LoadedModel victim_genome(const std::string& name_or_path);
Victim train_victim(const std::string& name_or_path, std::uint8_t tag, const Dataset& train_set,
                    const Dataset& val_set, const TrainConfig& config);

struct BankBuildOptions {
  std::size_t quota = 10;          // successes per (victim, spec) cell
  std::size_t max_attempts = 200;  // attacked images per cell
  std::uint64_t seed = 0;
};

struct CellStats {
  std::uint8_t victim = 0;
  std::string spec;
  std::size_t attempted = 0;
  std::size_t succeeded = 0;
};

struct BankBuildResult {
  AdversarialBank bank;
  AdversarialBank clean;  // sidecar, record-aligned
  std::vector<CellStats> cells;
};

BankBuildResult build_bank(std::vector<Victim>& victims, const Dataset& test_set, const std::vector<AttackSpec>& specs,
                           const BankBuildOptions& options);

}  // namespace ras
