#pragma once

#include "malbench/attacks.hpp"
#include "malbench/data.hpp"
#include "malbench/nn.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace malbench::defenses {

/// A hardened predictor interchangeable with a plain Network for the harness.
class Predictor : public nn::Model {
public:
    virtual std::string kind() const = 0;
    /// Seeded prediction: stochastic predictors (RFN) derive their inference
    /// mask from the seed; deterministic predictors ignore it.
    virtual Vec predict_seeded(const Vec& x, std::uint64_t seed) const { return predict(x); }
    /// Attacker's view of the model. RFN returns a view that samples a fresh
    /// mask per gradient query from its own seeded stream (the attacker cannot
    /// fix the defender's mask); nullptr means the predictor itself serves as
    /// the view. Views reference the predictor and are used by one thread.
    virtual std::unique_ptr<nn::Model> attack_view(std::uint64_t seed) const {
        (void)seed;
        return nullptr;
    }
    virtual void save(const std::string& dir) const = 0;
};

std::unique_ptr<Predictor> load_predictor(const std::string& dir);

// ---------------------------------------------------------------------------
// Shared trainer: one canonical init/seed discipline, so that a defense whose
// input transform degenerates to the identity reproduces plain training
// bit-exactly under the same seed.
// ---------------------------------------------------------------------------

nn::Network fit_network(const data::Dataset& ds, const std::vector<nn::LayerSpec>& arch,
                        const nn::TrainConfig& cfg, const nn::BatchHook& hook = nullptr,
                        nn::TrainLog* log = nullptr);

class PlainPredictor final : public Predictor {
public:
    nn::Network net;

    PlainPredictor() = default;
    explicit PlainPredictor(nn::Network n) : net(std::move(n)) {}

    int input_dim() const override { return net.input_dim(); }
    int n_outputs() const override { return net.n_outputs(); }
    Vec predict(const Vec& x) const override { return net.predict(x); }
    Mat input_jacobian(const Vec& x) const override { return net.input_jacobian(x); }
    Vec input_loss_gradient(const Vec& x, int label) const override {
        return net.input_loss_gradient(x, label);
    }
    std::string kind() const override { return "plain"; }
    void save(const std::string& dir) const override;
};

PlainPredictor train_plain(const data::Dataset& train, const std::vector<nn::LayerSpec>& arch,
                           const nn::TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Defensive distillation: teacher at temperature T on hard labels, student of
// the same architecture on the teacher's temperature-T soft labels, deployed
// at temperature 1.
// ---------------------------------------------------------------------------

class DistilledPredictor final : public Predictor {
public:
    nn::Network student;        // temperature forced to 1 at deployment
    double train_temperature = 10.0;

    int input_dim() const override { return student.input_dim(); }
    int n_outputs() const override { return student.n_outputs(); }
    Vec predict(const Vec& x) const override { return student.predict(x); }
    Mat input_jacobian(const Vec& x) const override { return student.input_jacobian(x); }
    Vec input_loss_gradient(const Vec& x, int label) const override {
        return student.input_loss_gradient(x, label);
    }
    std::string kind() const override { return "distill"; }
    void save(const std::string& dir) const override;
};

struct DistillOutputs {
    DistilledPredictor predictor;
    nn::Network teacher;  // still at temperature T
    Mat soft_labels;      // teacher's temperature-T distribution per training row
};

DistillOutputs distill_train(const data::Dataset& train, const std::vector<nn::LayerSpec>& arch,
                             double temperature, const nn::TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Saddle-point adversarial training: each minibatch replaces every malware
// sample with the inner maximizer produced by the configured attack against
// the current parameters; benign samples pass through unchanged.
// ---------------------------------------------------------------------------

class AdvTrainedPredictor final : public Predictor {
public:
    nn::Network net;
    attacks::AttackConfig inner;

    int input_dim() const override { return net.input_dim(); }
    int n_outputs() const override { return net.n_outputs(); }
    Vec predict(const Vec& x) const override { return net.predict(x); }
    Mat input_jacobian(const Vec& x) const override { return net.input_jacobian(x); }
    Vec input_loss_gradient(const Vec& x, int label) const override {
        return net.input_loss_gradient(x, label);
    }
    std::string kind() const override { return "adv_train"; }
    void save(const std::string& dir) const override;
};

AdvTrainedPredictor adversarial_train(const data::Dataset& train,
                                      const std::vector<nn::LayerSpec>& arch,
                                      const attacks::AttackConfig& inner,
                                      const nn::TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Heterogeneous ensemble with mean-probability aggregation (majority vote
// available as a config option).
// ---------------------------------------------------------------------------

enum class Aggregation { mean_probability, majority_vote };

struct EnsembleSpec {
    std::vector<std::vector<int>> member_hidden = {
        {1000, 1000},
        {64, 64, 64, 64, 64, 64, 64, 64},
        {256, 128},
    };
    double dropout = 0.5;
    int epochs = 200;
    Aggregation aggregation = Aggregation::mean_probability;
};

class EnsemblePredictor final : public Predictor {
public:
    std::vector<nn::Network> members;
    Aggregation aggregation = Aggregation::mean_probability;

    int input_dim() const override { return members.front().input_dim(); }
    int n_outputs() const override { return members.front().n_outputs(); }
    Vec predict(const Vec& x) const override;
    /// Gradient of the mean probability (attacker-visible surface).
    Mat input_jacobian(const Vec& x) const override;
    Vec input_loss_gradient(const Vec& x, int label) const override;
    std::string kind() const override { return "ensemble"; }
    void save(const std::string& dir) const override;
};

EnsemblePredictor ensemble_train(const data::Dataset& train, const EnsembleSpec& spec,
                                 const nn::TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Random feature nullification: inputs are multiplied by a random binary mask
// during training and inference.
// ---------------------------------------------------------------------------

struct RFNConfig {
    double p = 0.1;            // nullification rate
    bool bernoulli = false;    // default: exactly floor(p*d) zeros per mask
    int inference_masks = 1;   // >1 averages the forward pass over masks
    std::uint64_t seed = 0;

    void validate() const;  // 0 <= p < 1, inference_masks >= 1
};

/// Binary {0,1} mask with zeros at rate p: exactly floor(p*d) uniform
/// positions by default, per-coordinate Bernoulli(p) when requested.
Vec sample_mask(int d, double p, bool bernoulli, std::mt19937_64& rng);

class RFNPredictor final : public Predictor {
public:
    nn::Network net;
    RFNConfig rfn;

    int input_dim() const override { return net.input_dim(); }
    int n_outputs() const override { return net.n_outputs(); }
    /// Unseeded surface uses the mask stream fixed at construction seed.
    Vec predict(const Vec& x) const override { return predict_seeded(x, rfn.seed); }
    Vec predict_seeded(const Vec& x, std::uint64_t seed) const override;
    Mat input_jacobian(const Vec& x) const override;
    Vec input_loss_gradient(const Vec& x, int label) const override;
    std::unique_ptr<nn::Model> attack_view(std::uint64_t seed) const override;
    std::string kind() const override { return "rfn"; }
    void save(const std::string& dir) const override;
};

RFNPredictor rfn_train(const data::Dataset& train, const std::vector<nn::LayerSpec>& arch,
                       const RFNConfig& rfn, const nn::TrainConfig& cfg);
Vec rfn_predict(const RFNPredictor& pred, const Vec& x, std::uint64_t seed);

}  // namespace malbench::defenses
