#include <cstring>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "ras/attacks.hpp"
#include "ras/fitness.hpp"

using namespace ras;

namespace {

// Softmax over a fixed linear map; exact and cheap.
class LinearVictim : public Classifier {
 public:
  LinearVictim(int classes, std::size_t inputs, Rng& rng) : k_(classes), n_(inputs), w_(classes * inputs), b_(classes) {
    for (auto& v : w_) v = uniform_real(rng, -1.0, 1.0);
  }
  int n_classes() const override { return k_; }
  std::vector<double> logits(std::span<const float> x) const {
    std::vector<double> z(b_);
    for (int c = 0; c < k_; ++c)
      for (std::size_t i = 0; i < n_; ++i) z[c] += w_[c * n_ + i] * x[i];
    return z;
  }
  int argmax(std::span<const float> x) const {
    const auto z = logits(x);
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  void predict_proba(std::span<const float> images, int n, std::span<float> probs) override {
    for (int s = 0; s < n; ++s) {
      const auto z = logits(images.subspan(s * n_, n_));
      const double m = *std::max_element(z.begin(), z.end());
      double sum = 0;
      for (double v : z) sum += std::exp(v - m);
      for (int c = 0; c < k_; ++c) probs[s * k_ + c] = static_cast<float>(std::exp(z[c] - m) / sum);
    }
  }

 private:
  int k_;
  std::size_t n_;
  std::vector<double> w_, b_;
};

// One-pixel adversarial existence by exhaustion: with linear logits the
// region where the label wins is convex in the colour vector, so checking
// every position against every corner of the colour cube is exact.
bool one_pixel_adversarial_exists(const LinearVictim& v, std::span<const float> img, const ImageDims& d, int label) {
  const std::size_t plane = static_cast<std::size_t>(d.height) * d.width;
  std::vector<float> x(img.begin(), img.end());
  for (std::size_t p = 0; p < plane; ++p) {
    for (int corner = 0; corner < (1 << d.channels); ++corner) {
      for (int c = 0; c < d.channels; ++c) x[c * plane + p] = (corner >> c) & 1 ? 1.0f : 0.0f;
      if (v.argmax(x) != label) return true;
    }
    for (int c = 0; c < d.channels; ++c) x[c * plane + p] = img[c * plane + p];
  }
  return false;
}

AdversarialBank sample_bank() {
  AdversarialBank b;
  b.dims = {3, 2, 4};
  b.n_classes = 10;
  for (int i = 0; i < 3; ++i) {
    BankRecord r;
    r.image.assign(b.dims.size(), 0.125f * i);
    r.label = static_cast<std::uint16_t>(i + 7);
    r.norm = i % 2 ? Norm::Linf : Norm::L0;
    r.th = static_cast<std::uint8_t>(i * 3 + 1);
    r.optimizer = OptimizerTag::DE;
    r.victim = static_cast<std::uint8_t>(i);
    b.records.push_back(r);
  }
  return b;
}

template <typename T>
T read_at(const std::string& bytes, std::size_t off) {
  T v;
  std::memcpy(&v, bytes.data() + off, sizeof(T));
  return v;
}

}  // namespace

TEST_SUITE("attacks") {
  TEST_CASE("search space dimensions") {
    AttackSpec l0{Norm::L0, 1};
    CHECK(encode_perturbation(l0, {3, 32, 32}).dimensions() == 5);
    l0.th = 3;
    CHECK(encode_perturbation(l0, {3, 32, 32}).dimensions() == 15);
    const SearchSpace s = encode_perturbation({Norm::Linf, 5}, {3, 8, 8});
    CHECK(s.dimensions() == 192);
    for (std::size_t i = 0; i < s.dimensions(); ++i) {
      CHECK(s.lower[i] == doctest::Approx(-5.0 / 255));
      CHECK(s.upper[i] == doctest::Approx(5.0 / 255));
    }
  }

  TEST_CASE("spec strings") {
    CHECK(to_string(parse_attack_spec("L0:3")) == "L0:3");
    CHECK(to_string(parse_attack_spec("linf:10")) == "Linf:10");
    CHECK_THROWS_AS(parse_attack_spec("L2:3"), ConfigError);
    CHECK_THROWS_AS(parse_attack_spec("L0:0"), ConfigError);
    CHECK_THROWS_AS(parse_attack_spec("L0:3x"), ConfigError);
    CHECK_THROWS_AS(parse_attack_spec("Linf"), ConfigError);
  }

  TEST_CASE("applied perturbations respect their bounds") {
    const ImageDims d{3, 5, 5};
    Rng rng(4);
    std::vector<float> clean(d.size()), out(d.size());
    for (auto& v : clean) v = static_cast<float>(uniform_real(rng, 0, 1));
    for (const AttackSpec spec : {AttackSpec{Norm::L0, 3}, AttackSpec{Norm::Linf, 10}}) {
      const SearchSpace s = encode_perturbation(spec, d);
      for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> cand(s.dimensions());
        for (std::size_t j = 0; j < cand.size(); ++j) cand[j] = uniform_real(rng, s.lower[j], s.upper[j]);
        apply_perturbation(spec, d, clean, cand, out);
        BankRecord r{out, 0, spec.norm, static_cast<std::uint8_t>(spec.th)};
        CHECK(constraint_satisfied(r, clean, d));
      }
    }
    // the coordinate upper bound maps onto the last pixel
    std::vector<double> edge{5.0, 5.0, 0.0, 0.0, 0.0};
    apply_perturbation({Norm::L0, 1}, d, clean, edge, out);
    CHECK(out[24] == 0.0f);
  }

  TEST_CASE("constraint checker rejects violations") {
    const ImageDims d{1, 2, 2};
    const std::vector<float> clean{0.5f, 0.5f, 0.5f, 0.5f};
    BankRecord r{{0.6f, 0.4f, 0.5f, 0.5f}, 0, Norm::L0, 1};
    CHECK_FALSE(constraint_satisfied(r, clean, d));
    r.th = 2;
    CHECK(constraint_satisfied(r, clean, d));
    r.norm = Norm::Linf;
    r.th = 26;
    CHECK(constraint_satisfied(r, clean, d));
    r.th = 25;
    CHECK_FALSE(constraint_satisfied(r, clean, d));
    r.image[3] = 1.5f;
    r.th = 255;
    CHECK_FALSE(constraint_satisfied(r, clean, d));
  }

  TEST_CASE("one-pixel attack agrees with exhaustive search") {
    const ImageDims d{2, 4, 4};
    Rng rng(10);
    LinearVictim victim(3, d.size(), rng);
    int exists = 0, found = 0, unsound = 0;
    for (int i = 0; i < 120; ++i) {
      std::vector<float> img(d.size());
      for (auto& v : img) v = static_cast<float>(uniform_real(rng, 0, 1));
      const int label = victim.argmax(img);
      const bool brute = one_pixel_adversarial_exists(victim, img, d, label);
      AttackSpec spec{Norm::L0, 1};
      spec.budget = {40, 100};
      const AttackOutcome o = de_attack(victim, img, d, label, spec, rng);
      if (o.adversarial) {
        BankRecord r{*o.adversarial, 0, Norm::L0, 1};
        CHECK(constraint_satisfied(r, img, d));
        CHECK(victim.argmax(*o.adversarial) != label);
        if (!brute) ++unsound;
        ++found;
      }
      exists += brute;
    }
    CHECK(unsound == 0);
    REQUIRE(exists >= 10);
    CHECK(found >= exists * 9 / 10);
  }

  TEST_CASE("zero iterations rarely succeed and looser bounds never hurt") {
    const ImageDims d{3, 4, 4};
    Rng rng(21);
    LinearVictim victim(4, d.size(), rng);
    std::vector<std::vector<float>> images;
    std::vector<int> labels;
    for (int i = 0; i < 60; ++i) {
      std::vector<float> img(d.size());
      for (auto& v : img) v = static_cast<float>(uniform_real(rng, 0, 1));
      labels.push_back(victim.argmax(img));
      images.push_back(std::move(img));
    }
    auto success = [&](AttackSpec spec) {
      int n = 0;
      for (std::size_t i = 0; i < images.size(); ++i) {
        Rng r(derive_seed(5, i));
        n += de_attack(victim, images[i], d, labels[i], spec, r).adversarial.has_value();
      }
      return n;
    };
    AttackSpec zero{Norm::Linf, 1};
    zero.budget = {40, 0};
    CHECK(success(zero) <= 3);

    AttackSpec s{Norm::Linf, 1};
    s.budget = {20, 30};
    std::vector<int> rates;
    for (int th : {1, 3, 10, 255}) {
      s.th = th;
      rates.push_back(success(s));
    }
    CHECK(rates[1] >= rates[0]);
    CHECK(rates[2] >= rates[1]);
    CHECK(rates[3] >= rates[2]);
    CHECK(rates[3] > rates[0]);
  }

  TEST_CASE("bank round trip and header layout") {
    const AdversarialBank bank = sample_bank();
    const std::string bytes = encode_bank(bank);
    CHECK(bytes.size() == 20 + 3 * (24 * 4 + 6));
    CHECK(bytes.substr(0, 4) == "RASB");
    CHECK(read_at<std::uint32_t>(bytes, 4) == 1);
    CHECK(read_at<std::uint32_t>(bytes, 8) == 3);
    CHECK(read_at<std::uint16_t>(bytes, 12) == 2);
    CHECK(read_at<std::uint16_t>(bytes, 14) == 4);
    CHECK(read_at<std::uint16_t>(bytes, 16) == 3);
    CHECK(read_at<std::uint16_t>(bytes, 18) == 10);
    const std::size_t rec1 = 20 + (24 * 4 + 6);
    CHECK(read_at<float>(bytes, rec1) == 0.125f);
    CHECK(read_at<std::uint16_t>(bytes, rec1 + 96) == 8);
    CHECK(static_cast<int>(bytes[rec1 + 98]) == 1);
    CHECK(static_cast<int>(bytes[rec1 + 99]) == 4);
    CHECK(static_cast<int>(bytes[rec1 + 100]) == 0);
    CHECK(static_cast<int>(bytes[rec1 + 101]) == 1);

    CHECK(decode_bank(bytes) == bank);
    const auto dir = testing::temp_dir("bank");
    const std::string path = (dir / "b.bin").string();
    write_bank(path, bank);
    CHECK(read_bank(path) == bank);
  }

  TEST_CASE("corrupt banks are rejected with an offset") {
    const std::string good = encode_bank(sample_bank());
    auto fails_at = [](const std::string& bytes) {
      try {
        decode_bank(bytes, "x");
      } catch (const ParseError& e) {
        return e.location;
      }
      return std::string("accepted");
    };
    std::string bad = good;
    bad[0] = 'X';
    CHECK(fails_at(bad) == "x@4");
    bad = good;
    bad[4] = 2;
    CHECK(fails_at(bad) == "x@8");
    CHECK(fails_at(good.substr(0, good.size() - 1)) == "x@20");
    CHECK(fails_at(good.substr(0, 10)).rfind("x@", 0) == 0);
    bad = good;
    bad[20 + 96 + 2] = 7;  // norm tag of record 0
    CHECK(fails_at(bad) == "x@119");
    bad = good;
    bad[20 + 96] = 10;  // label of record 0 == n_classes
    CHECK(fails_at(bad).rfind("x@", 0) == 0);
    CHECK_THROWS_AS(read_bank("/nonexistent/bank.bin"), ConfigError);
  }

  TEST_CASE("verification against the clean sidecar") {
    AdversarialBank bank = sample_bank(), clean = sample_bank();
    for (auto& r : bank.records) r.image[0] = std::min(1.0f, r.image[0] + 0.001f);
    BankVerification v = verify_bank(bank, clean);
    CHECK(v.checked == 3);
    CHECK(v.all_passed());
    bank.records[0].image[1] += 0.5f;
    bank.records[0].image[2] += 0.5f;
    v = verify_bank(bank, clean);
    CHECK(v.passed == 2);
    clean.records.pop_back();
    CHECK_THROWS_AS(verify_bank(bank, clean), ConfigError);
  }

  TEST_CASE("bank construction on a trained victim") {
    SyntheticOptions opt;
    opt.samples = 300;
    const Dataset data = make_synthetic(opt, 9);
    auto [train_set, test_set] = split(data, 0.8, 1);
    auto [tr, va] = split(train_set, 0.9, 2);
    TrainConfig tc;
    tc.max_epochs = 15;
    tc.seed = 3;
    std::vector<Victim> victims{train_victim("mlp", 0, tr, va, tc)};
    CHECK(victims[0].net->graph().input == input_shape(tr));

    AttackSpec spec{Norm::Linf, 10};
    spec.budget = {20, 30};
    BankBuildOptions bo;
    bo.quota = 10;
    bo.max_attempts = 40;
    bo.seed = 4;
    const BankBuildResult r = build_bank(victims, test_set, {spec}, bo);
    CHECK(r.bank.size() <= 10);
    CHECK(r.bank.size() == r.cells[0].succeeded);
    CHECK(r.bank.size() == r.clean.size());
    CHECK(verify_bank(r.bank, r.clean).all_passed());
    for (const auto& rec : r.bank.records) {
      CHECK(rec.th == 10);
      CHECK(rec.norm == Norm::Linf);
      CHECK(predict(*victims[0].net, rec.image, 1)[0] != rec.label);
    }
    CHECK(build_bank(victims, test_set, {spec}, bo).bank == r.bank);

    bo.quota = 0;
    const BankBuildResult empty = build_bank(victims, test_set, {spec}, bo);
    CHECK(empty.bank.size() == 0);
    CHECK_THROWS_AS(score_robustness(*victims[0].net, empty.bank), ConfigError);
  }

  TEST_CASE("victim genomes") {
    for (const auto& name : builtin_victims()) {
      const LoadedModel g = victim_genome(name);
      CHECK_NOTHROW(check_integrity(g.pool));
    }
    CHECK_THROWS(victim_genome("/nonexistent/victim.json"));
  }
}
