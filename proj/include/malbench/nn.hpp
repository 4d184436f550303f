#pragma once

#include "malbench/linalg.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace malbench::nn {

enum class Activation { relu, softmax, sigmoid, linear };

const char* to_string(Activation a);
Activation activation_from_string(std::string_view s);

struct LayerSpec {
    int input_dim = 0;
    int output_dim = 0;
    Activation activation = Activation::relu;
    // Inverted dropout applied to this layer's output during training.
    double dropout_rate = 0.0;
};

/// Validates a layer stack: dimensions chain, dropout_rate in [0,1),
/// softmax only on the final layer. Throws std::invalid_argument.
void validate_specs(const std::vector<LayerSpec>& specs);

/// Builds the usual classifier stack: ReLU hidden layers followed by a
/// softmax head over `n_classes` outputs.
std::vector<LayerSpec> classifier_arch(int input_dim, const std::vector<int>& hidden,
                                       int n_classes = 2, double dropout = 0.0);

struct Layer {
    LayerSpec spec;
    Mat weights;  // input_dim x output_dim
    Vec biases;   // output_dim
};

/// Differentiable classifier surface consumed by attacks and evaluation.
/// Implementations must be safe for concurrent read-only use.
class Model {
public:
    virtual ~Model() = default;
    virtual int input_dim() const = 0;
    virtual int n_outputs() const = 0;
    /// Probability vector (softmax head) or per-unit sigmoid activations.
    virtual Vec predict(const Vec& x) const = 0;
    /// (n_outputs x input_dim) matrix of output derivatives w.r.t. each input.
    virtual Mat input_jacobian(const Vec& x) const = 0;
    /// Gradient of the classification loss at (x, label) w.r.t. x.
    virtual Vec input_loss_gradient(const Vec& x, int label) const = 0;
};

/// Predicted class under the 0 = benign / 1 = malware convention. A 1-unit
/// sigmoid head reports class 1 when p >= 0.5; multi-unit heads take the
/// argmax (ties break to the lowest index).
int predicted_class(const Model& m, const Vec& x);

/// Classification loss recomputed from predict() alone; works for any Model.
double model_loss(const Model& m, const Vec& x, int label);

struct Network final : public Model {
    std::vector<Layer> layers;
    double temperature = 1.0;  // divides the final-layer logits before softmax

    int input_dim() const override;
    int n_outputs() const override;
    Vec predict(const Vec& x) const override;
    Mat input_jacobian(const Vec& x) const override;
    Vec input_loss_gradient(const Vec& x, int label) const override;

    void validate() const;
};

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
/// Deterministic for a fixed seed.
Network init_network(const std::vector<LayerSpec>& specs, std::uint64_t seed);

Vec forward(const Network& net, const Vec& x);                      // at net.temperature
Vec forward(const Network& net, const Vec& x, double temperature);  // explicit override
Mat forward_batch(const Network& net, const Mat& X);
Mat forward_batch(const Network& net, const Mat& X, double temperature);

Mat input_jacobian(const Network& net, const Vec& x);
Vec input_loss_gradient(const Network& net, const Vec& x, int label);
/// Per-row loss gradients for a whole batch (no 1/B averaging).
Mat input_loss_gradient_batch(const Network& net, const Mat& X, int label);

// ---------------------------------------------------------------------------
// Low-level forward/backward surface. Exposed so that GAN training and the
// gradient-oracle tests can drive custom upstream gradients.
// ---------------------------------------------------------------------------

struct ForwardCaches {
    std::vector<Mat> activations;    // activations[0] = input, size layers+1, post-dropout
    std::vector<Mat> preacts;        // pre-activation per layer
    std::vector<Mat> dropout_masks;  // empty when the layer had none
    double temperature = 1.0;
    bool training = false;
};

Mat forward_cached(const Network& net, const Mat& X, double temperature, bool training,
                   std::mt19937_64* dropout_rng, ForwardCaches& caches);

struct Gradients {
    std::vector<Mat> d_weights;
    std::vector<Vec> d_biases;
};
Gradients zero_gradients(const Network& net);

/// Backpropagates dL/d(output, post-activation). Accumulates parameter
/// gradients into *grads when non-null; returns dL/d(input).
Mat backward_from_output(const Network& net, const ForwardCaches& caches, const Mat& d_out,
                         Gradients* grads);
/// Same, but the upstream gradient is already w.r.t. the final pre-activation.
Mat backward_from_logits(const Network& net, const ForwardCaches& caches, const Mat& d_logits,
                         Gradients* grads);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class Loss { cross_entropy, soft_cross_entropy, binary_cross_entropy };

struct TrainConfig {
    int epochs = 100;
    int batch_size = 64;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    Loss loss = Loss::cross_entropy;
    std::uint64_t seed = 0;
};

struct AdamState {
    std::vector<Mat> m_w, v_w;
    std::vector<Vec> m_b, v_b;
    long step = 0;
};
AdamState make_adam_state(const Network& net);
void adam_step(Network& net, AdamState& state, const Gradients& grads, const TrainConfig& cfg);

struct TrainLog {
    std::vector<double> epoch_mean_loss;
};

/// Called once per minibatch before the gradient step; may rewrite rows of
/// `batch` against the current parameters (adversarial replacement, input
/// masking). Labels are read-only.
using BatchHook = std::function<void(const Network& current, int epoch, int batch_index,
                                     Mat& batch, const std::vector<int>& labels)>;

/// Mini-batch Adam on hard labels. Deterministic for a fixed seed: shuffle
/// order and dropout masks come from derived streams of cfg.seed. The final
/// short batch is used as-is.
Network train(Network net, const Mat& X, const std::vector<int>& y, const TrainConfig& cfg,
              TrainLog* log = nullptr, const BatchHook& hook = nullptr);
/// Same loop over soft targets (rows of `targets` sum to 1).
Network train_soft(Network net, const Mat& X, const Mat& targets, const TrainConfig& cfg,
                   TrainLog* log = nullptr);

/// Loss and parameter/input gradients for one sample; the oracle surface the
/// finite-difference tests check. Returns the loss.
double sample_loss_and_gradients(const Network& net, const Vec& x, int label, Loss loss,
                                 Gradients& grads, Vec* d_input = nullptr);
double loss_value(const Network& net, const Vec& x, int label, Loss loss);

/// FNV hash over every weight and bias byte.
std::uint64_t weights_hash(const Network& net);

// ---------------------------------------------------------------------------
// Checkpoints: versioned JSON, value-exact round trip for finite reals.
// ---------------------------------------------------------------------------

std::string checkpoint_string(const Network& net);
Network network_from_checkpoint_string(const std::string& text);
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

}  // namespace malbench::nn
