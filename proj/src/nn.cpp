#include "malbench/nn.hpp"

#include "malbench/errors.hpp"
#include "malbench/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace malbench::nn {

namespace {

constexpr double kProbFloor = 1e-12;

double clamp_prob(double p) { return std::min(1.0, std::max(kProbFloor, p)); }

void softmax_rows_inplace(Mat& z) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        double m = z.row(i).maxCoeff();
        z.row(i) = (z.row(i).array() - m).exp();
        z.row(i) /= z.row(i).sum();
    }
}

Mat sigmoid(const Mat& z) {
    return 1.0 / (1.0 + (-z.array()).exp());
}

}  // namespace

const char* to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::softmax: return "softmax";
        case Activation::sigmoid: return "sigmoid";
        case Activation::linear: return "linear";
    }
    return "?";
}

Activation activation_from_string(std::string_view s) {
    if (s == "relu") return Activation::relu;
    if (s == "softmax") return Activation::softmax;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "linear") return Activation::linear;
    throw std::invalid_argument("unknown activation: " + std::string(s));
}

void validate_specs(const std::vector<LayerSpec>& specs) {
    if (specs.empty()) throw std::invalid_argument("network needs at least one layer");
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& s = specs[i];
        if (s.input_dim <= 0 || s.output_dim <= 0)
            throw std::invalid_argument("layer " + std::to_string(i) + ": dimensions must be positive");
        if (!(s.dropout_rate >= 0.0 && s.dropout_rate < 1.0))
            throw std::invalid_argument("layer " + std::to_string(i) + ": dropout_rate must be in [0,1)");
        if (i + 1 < specs.size()) {
            if (s.activation == Activation::softmax)
                throw std::invalid_argument("softmax is only permitted on the final layer");
            if (s.output_dim != specs[i + 1].input_dim)
                throw std::invalid_argument("layer " + std::to_string(i) + " output dim " +
                                            std::to_string(s.output_dim) + " does not chain into layer " +
                                            std::to_string(i + 1));
        } else if (s.activation == Activation::softmax && s.dropout_rate != 0.0) {
            throw std::invalid_argument("dropout on a softmax head is not supported");
        }
    }
}

std::vector<LayerSpec> classifier_arch(int input_dim, const std::vector<int>& hidden,
                                       int n_classes, double dropout) {
    std::vector<LayerSpec> specs;
    int in = input_dim;
    for (int h : hidden) {
        specs.push_back({in, h, Activation::relu, dropout});
        in = h;
    }
    specs.push_back({in, n_classes, Activation::softmax, 0.0});
    return specs;
}

int Network::input_dim() const {
    return layers.empty() ? 0 : layers.front().spec.input_dim;
}

int Network::n_outputs() const {
    return layers.empty() ? 0 : layers.back().spec.output_dim;
}

void Network::validate() const {
    std::vector<LayerSpec> specs;
    specs.reserve(layers.size());
    for (const Layer& l : layers) specs.push_back(l.spec);
    validate_specs(specs);
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        if (l.weights.rows() != l.spec.input_dim || l.weights.cols() != l.spec.output_dim ||
            l.biases.size() != l.spec.output_dim)
            throw std::invalid_argument("layer " + std::to_string(i) + ": parameter shape mismatch");
        if (!all_finite(l.weights) || !all_finite(l.biases))
            throw RunError("layer " + std::to_string(i) + ": non-finite parameters");
    }
}

Vec Network::predict(const Vec& x) const { return forward(*this, x); }
Mat Network::input_jacobian(const Vec& x) const { return nn::input_jacobian(*this, x); }
Vec Network::input_loss_gradient(const Vec& x, int label) const {
    return nn::input_loss_gradient(*this, x, label);
}

int predicted_class(const Model& m, const Vec& x) {
    Vec p = m.predict(x);
    if (p.size() == 1) return p[0] >= 0.5 ? 1 : 0;
    return argmax(p);
}

double model_loss(const Model& m, const Vec& x, int label) {
    Vec p = m.predict(x);
    if (p.size() == 1) {
        double q = label == 1 ? p[0] : 1.0 - p[0];
        return -std::log(clamp_prob(q));
    }
    if (label < 0 || label >= p.size()) throw std::invalid_argument("label out of range");
    return -std::log(clamp_prob(p[label]));
}

Network init_network(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
    validate_specs(specs);
    Network net;
    net.layers.reserve(specs.size());
    auto rng = make_rng(seed);
    for (const LayerSpec& s : specs) {
        double bound = std::sqrt(6.0 / (s.input_dim + s.output_dim));
        std::uniform_real_distribution<double> u(-bound, bound);
        Layer layer;
        layer.spec = s;
        layer.weights.resize(s.input_dim, s.output_dim);
        for (int i = 0; i < s.input_dim; ++i)
            for (int j = 0; j < s.output_dim; ++j) layer.weights(i, j) = u(rng);
        layer.biases = Vec::Zero(s.output_dim);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

Mat forward_cached(const Network& net, const Mat& X, double temperature, bool training,
                   std::mt19937_64* dropout_rng, ForwardCaches& caches) {
    if (net.layers.empty()) throw std::invalid_argument("network has no layers");
    if (X.cols() != net.input_dim())
        throw std::invalid_argument("input dimension mismatch: got " + std::to_string(X.cols()) +
                                    ", expected " + std::to_string(net.input_dim()));
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");

    const std::size_t depth = net.layers.size();
    caches.activations.clear();
    caches.preacts.clear();
    caches.dropout_masks.assign(depth, Mat());
    caches.temperature = temperature;
    caches.training = training;
    caches.activations.reserve(depth + 1);
    caches.preacts.reserve(depth);
    caches.activations.push_back(X);

    for (std::size_t l = 0; l < depth; ++l) {
        const Layer& layer = net.layers[l];
        Mat z = caches.activations.back() * layer.weights;
        z.rowwise() += layer.biases.transpose();
        caches.preacts.push_back(z);

        Mat a;
        switch (layer.spec.activation) {
            case Activation::relu: a = z.cwiseMax(0.0); break;
            case Activation::sigmoid: a = sigmoid(z); break;
            case Activation::linear: a = z; break;
            case Activation::softmax:
                a = z / temperature;
                softmax_rows_inplace(a);
                break;
        }

        if (training && layer.spec.dropout_rate > 0.0) {
            if (!dropout_rng)
                throw std::invalid_argument("dropout requires an rng in training mode");
            const double keep = 1.0 - layer.spec.dropout_rate;
            std::uniform_real_distribution<double> u(0.0, 1.0);
            Mat mask(a.rows(), a.cols());
            for (Eigen::Index i = 0; i < a.rows(); ++i)
                for (Eigen::Index j = 0; j < a.cols(); ++j)
                    mask(i, j) = u(*dropout_rng) < keep ? 1.0 / keep : 0.0;
            a = a.cwiseProduct(mask);
            caches.dropout_masks[l] = std::move(mask);
        }
        caches.activations.push_back(std::move(a));
    }
    return caches.activations.back();
}

Gradients zero_gradients(const Network& net) {
    Gradients g;
    g.d_weights.reserve(net.layers.size());
    g.d_biases.reserve(net.layers.size());
    for (const Layer& l : net.layers) {
        g.d_weights.emplace_back(Mat::Zero(l.spec.input_dim, l.spec.output_dim));
        g.d_biases.emplace_back(Vec::Zero(l.spec.output_dim));
    }
    return g;
}

namespace {

// dL/d(post-activation) -> dL/d(pre-activation) for one layer.
Mat activation_backward(const Layer& layer, const Mat& d_act, const Mat& preact, const Mat& postact,
                        double temperature) {
    switch (layer.spec.activation) {
        case Activation::relu:
            return d_act.cwiseProduct((preact.array() > 0.0).cast<double>().matrix());
        case Activation::sigmoid: {
            Mat s = sigmoid(preact);
            return d_act.cwiseProduct(s.cwiseProduct(Mat::Ones(s.rows(), s.cols()) - s));
        }
        case Activation::linear:
            return d_act;
        case Activation::softmax: {
            // dz_i = p_i * (da_i - sum_j p_j da_j), all divided by the temperature
            Mat dz(d_act.rows(), d_act.cols());
            for (Eigen::Index i = 0; i < d_act.rows(); ++i) {
                double s = postact.row(i).dot(d_act.row(i));
                dz.row(i) = postact.row(i).cwiseProduct(d_act.row(i).array().matrix());
                dz.row(i) -= postact.row(i) * s;
            }
            return dz / temperature;
        }
    }
    throw std::logic_error("unreachable");
}

}  // namespace

Mat backward_from_logits(const Network& net, const ForwardCaches& caches, const Mat& d_logits,
                         Gradients* grads) {
    const int depth = static_cast<int>(net.layers.size());
    Mat dz = d_logits;
    for (int l = depth - 1; l >= 0; --l) {
        const Mat& a_prev = caches.activations[static_cast<std::size_t>(l)];
        if (grads) {
            grads->d_weights[static_cast<std::size_t>(l)].noalias() += a_prev.transpose() * dz;
            grads->d_biases[static_cast<std::size_t>(l)] += dz.colwise().sum().transpose();
        }
        Mat da = dz * net.layers[static_cast<std::size_t>(l)].weights.transpose();
        if (l == 0) return da;
        const std::size_t prev = static_cast<std::size_t>(l - 1);
        if (caches.dropout_masks[prev].size() > 0)
            da = da.cwiseProduct(caches.dropout_masks[prev]);
        dz = activation_backward(net.layers[prev], da, caches.preacts[prev],
                                 caches.activations[prev + 1], caches.temperature);
    }
    return dz;  // unreachable: depth >= 1
}

Mat backward_from_output(const Network& net, const ForwardCaches& caches, const Mat& d_out,
                         Gradients* grads) {
    const std::size_t last = net.layers.size() - 1;
    Mat da = d_out;
    if (caches.dropout_masks[last].size() > 0) da = da.cwiseProduct(caches.dropout_masks[last]);
    Mat dz = activation_backward(net.layers[last], da, caches.preacts[last],
                                 caches.activations[last + 1], caches.temperature);
    return backward_from_logits(net, caches, dz, grads);
}

Vec forward(const Network& net, const Vec& x) { return forward(net, x, net.temperature); }

Vec forward(const Network& net, const Vec& x, double temperature) {
    ForwardCaches caches;
    Mat out = forward_cached(net, x.transpose(), temperature, false, nullptr, caches);
    return out.row(0).transpose();
}

Mat forward_batch(const Network& net, const Mat& X) { return forward_batch(net, X, net.temperature); }

Mat forward_batch(const Network& net, const Mat& X, double temperature) {
    ForwardCaches caches;
    return forward_cached(net, X, temperature, false, nullptr, caches);
}

Mat input_jacobian(const Network& net, const Vec& x) {
    ForwardCaches caches;
    forward_cached(net, x.transpose(), net.temperature, false, nullptr, caches);
    const int n_out = net.n_outputs();
    Mat jac(n_out, net.input_dim());
    for (int c = 0; c < n_out; ++c) {
        Mat e = Mat::Zero(1, n_out);
        e(0, c) = 1.0;
        jac.row(c) = backward_from_output(net, caches, e, nullptr).row(0);
    }
    return jac;
}

namespace {

int effective_classes(const Network& net) {
    const Layer& head = net.layers.back();
    if (head.spec.activation == Activation::sigmoid && head.spec.output_dim == 1) return 2;
    return head.spec.output_dim;
}

// Fused head gradient dL/d(logits) for one-hot cross-entropy at the cached
// temperature, or for binary cross-entropy on a 1-unit sigmoid head.
Mat head_gradient_hard(const Network& net, const Mat& probs, const std::vector<int>& labels,
                       double temperature) {
    const Layer& head = net.layers.back();
    Mat dz = probs;
    if (head.spec.activation == Activation::softmax) {
        for (Eigen::Index i = 0; i < dz.rows(); ++i)
            dz(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
        dz /= temperature;
    } else if (head.spec.activation == Activation::sigmoid && head.spec.output_dim == 1) {
        for (Eigen::Index i = 0; i < dz.rows(); ++i)
            dz(i, 0) -= static_cast<double>(labels[static_cast<std::size_t>(i)]);
    } else {
        throw std::invalid_argument("loss gradient needs a softmax or 1-unit sigmoid head");
    }
    return dz;
}

}  // namespace

Vec input_loss_gradient(const Network& net, const Vec& x, int label) {
    if (label < 0 || label >= effective_classes(net))
        throw std::invalid_argument("label out of range");
    ForwardCaches caches;
    Mat probs = forward_cached(net, x.transpose(), net.temperature, false, nullptr, caches);
    Mat dz = head_gradient_hard(net, probs, {label}, net.temperature);
    return backward_from_logits(net, caches, dz, nullptr).row(0).transpose();
}

Mat input_loss_gradient_batch(const Network& net, const Mat& X, int label) {
    if (label < 0 || label >= effective_classes(net))
        throw std::invalid_argument("label out of range");
    ForwardCaches caches;
    Mat probs = forward_cached(net, X, net.temperature, false, nullptr, caches);
    std::vector<int> labels(static_cast<std::size_t>(X.rows()), label);
    Mat dz = head_gradient_hard(net, probs, labels, net.temperature);
    return backward_from_logits(net, caches, dz, nullptr);
}

AdamState make_adam_state(const Network& net) {
    AdamState st;
    for (const Layer& l : net.layers) {
        st.m_w.emplace_back(Mat::Zero(l.spec.input_dim, l.spec.output_dim));
        st.v_w.emplace_back(Mat::Zero(l.spec.input_dim, l.spec.output_dim));
        st.m_b.emplace_back(Vec::Zero(l.spec.output_dim));
        st.v_b.emplace_back(Vec::Zero(l.spec.output_dim));
    }
    return st;
}

void adam_step(Network& net, AdamState& st, const Gradients& grads, const TrainConfig& cfg) {
    st.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        st.m_w[l] = cfg.beta1 * st.m_w[l] + (1.0 - cfg.beta1) * grads.d_weights[l];
        st.v_w[l] = cfg.beta2 * st.v_w[l].array().matrix() +
                    (1.0 - cfg.beta2) * grads.d_weights[l].cwiseProduct(grads.d_weights[l]);
        net.layers[l].weights.array() -=
            cfg.learning_rate * (st.m_w[l].array() / bc1) /
            ((st.v_w[l].array() / bc2).sqrt() + cfg.epsilon);

        st.m_b[l] = cfg.beta1 * st.m_b[l] + (1.0 - cfg.beta1) * grads.d_biases[l];
        st.v_b[l] = cfg.beta2 * st.v_b[l] + (1.0 - cfg.beta2) * grads.d_biases[l].cwiseProduct(grads.d_biases[l]);
        net.layers[l].biases.array() -=
            cfg.learning_rate * (st.m_b[l].array() / bc1) /
            ((st.v_b[l].array() / bc2).sqrt() + cfg.epsilon);
    }
}

namespace {

void validate_train_config(const TrainConfig& cfg) {
    if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (!(cfg.beta1 > 0.0 && cfg.beta1 < 1.0)) throw std::invalid_argument("beta1 must be in (0,1)");
    if (!(cfg.beta2 > 0.0 && cfg.beta2 < 1.0)) throw std::invalid_argument("beta2 must be in (0,1)");
    if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (cfg.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
}

double batch_loss(const Network& net, const Mat& probs, const std::vector<int>* labels,
                  const Mat* targets, Loss loss) {
    double total = 0.0;
    const Eigen::Index rows = probs.rows();
    switch (loss) {
        case Loss::cross_entropy:
            for (Eigen::Index i = 0; i < rows; ++i)
                total -= std::log(clamp_prob(probs(i, (*labels)[static_cast<std::size_t>(i)])));
            break;
        case Loss::soft_cross_entropy:
            for (Eigen::Index i = 0; i < rows; ++i)
                for (Eigen::Index c = 0; c < probs.cols(); ++c)
                    total -= (*targets)(i, c) * std::log(clamp_prob(probs(i, c)));
            break;
        case Loss::binary_cross_entropy:
            for (Eigen::Index i = 0; i < rows; ++i) {
                double p = probs(i, 0);
                double t = labels ? static_cast<double>((*labels)[static_cast<std::size_t>(i)])
                                  : (*targets)(i, 0);
                total -= t * std::log(clamp_prob(p)) + (1.0 - t) * std::log(clamp_prob(1.0 - p));
            }
            break;
    }
    (void)net;
    return total / static_cast<double>(rows);
}

Network train_impl(Network net, const Mat& X, const std::vector<int>* y,
                   const Mat* targets, const TrainConfig& cfg, TrainLog* log,
                   const BatchHook& hook) {
    net.validate();
    validate_train_config(cfg);
    const Eigen::Index n = X.rows();
    if (n == 0) throw std::invalid_argument("empty dataset");
    if (X.cols() != net.input_dim()) throw std::invalid_argument("input dimension mismatch");

    const Layer& head = net.layers.back();
    if (cfg.loss == Loss::binary_cross_entropy) {
        if (head.spec.activation != Activation::sigmoid || head.spec.output_dim != 1)
            throw std::invalid_argument("binary_cross_entropy needs a 1-unit sigmoid head");
    } else if (head.spec.activation != Activation::softmax) {
        throw std::invalid_argument("cross_entropy losses need a softmax head");
    }

    if (y) {
        if (static_cast<Eigen::Index>(y->size()) != n)
            throw std::invalid_argument("label count does not match row count");
        const int classes = effective_classes(net);
        for (int label : *y)
            if (label < 0 || label >= classes) throw std::invalid_argument("label out of range");
    }
    if (targets && cfg.loss != Loss::binary_cross_entropy) {
        if (targets->rows() != n || targets->cols() != head.spec.output_dim)
            throw std::invalid_argument("soft-target shape mismatch");
    }

    auto shuffle_rng = make_rng(derive_seed(cfg.seed, "train.shuffle"));
    auto dropout_rng = make_rng(derive_seed(cfg.seed, "train.dropout"));
    AdamState adam = make_adam_state(net);

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        int batch_index = 0;
        for (Eigen::Index start = 0; start < n; start += cfg.batch_size, ++batch_index) {
            const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch_size, n - start);
            Mat xb(bs, X.cols());
            std::vector<int> yb;
            Mat tb;
            if (y) yb.resize(static_cast<std::size_t>(bs));
            if (targets) tb.resize(bs, targets->cols());
            for (Eigen::Index k = 0; k < bs; ++k) {
                const int row = order[static_cast<std::size_t>(start + k)];
                xb.row(k) = X.row(row);
                if (y) yb[static_cast<std::size_t>(k)] = (*y)[static_cast<std::size_t>(row)];
                if (targets) tb.row(k) = targets->row(row);
            }
            if (hook) hook(net, epoch, batch_index, xb, yb);

            ForwardCaches caches;
            Mat probs = forward_cached(net, xb, net.temperature, true, &dropout_rng, caches);
            loss_sum += batch_loss(net, probs, y ? &yb : nullptr, targets ? &tb : nullptr,
                                   cfg.loss) * static_cast<double>(bs);

            Mat dz;
            if (cfg.loss == Loss::soft_cross_entropy) {
                dz = (probs - tb) / net.temperature;
            } else {
                dz = head_gradient_hard(net, probs, yb, net.temperature);
            }
            dz /= static_cast<double>(bs);

            Gradients grads = zero_gradients(net);
            backward_from_logits(net, caches, dz, &grads);
            adam_step(net, adam, grads, cfg);
        }
        const double epoch_loss = loss_sum / static_cast<double>(n);
        if (!std::isfinite(epoch_loss))
            throw RunError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
        if (log) log->epoch_mean_loss.push_back(epoch_loss);
        for (const Layer& l : net.layers)
            if (!all_finite(l.weights) || !all_finite(l.biases))
                throw RunError("training diverged: non-finite parameters at epoch " +
                               std::to_string(epoch));
    }
    return net;
}

}  // namespace

Network train(Network net, const Mat& X, const std::vector<int>& y, const TrainConfig& cfg,
              TrainLog* log, const BatchHook& hook) {
    if (cfg.loss == Loss::soft_cross_entropy)
        throw std::invalid_argument("soft_cross_entropy requires soft targets; use train_soft");
    return train_impl(std::move(net), X, &y, nullptr, cfg, log, hook);
}

Network train_soft(Network net, const Mat& X, const Mat& targets, const TrainConfig& cfg,
                   TrainLog* log) {
    TrainConfig soft_cfg = cfg;
    soft_cfg.loss = Loss::soft_cross_entropy;
    return train_impl(std::move(net), X, nullptr, &targets, soft_cfg, log, nullptr);
}

double sample_loss_and_gradients(const Network& net, const Vec& x, int label, Loss loss,
                                 Gradients& grads, Vec* d_input) {
    if (loss == Loss::soft_cross_entropy)
        throw std::invalid_argument("sample oracle supports hard-label losses only");
    ForwardCaches caches;
    Mat probs = forward_cached(net, x.transpose(), net.temperature, false, nullptr, caches);
    std::vector<int> labels{label};
    double value = batch_loss(net, probs, &labels, nullptr, loss);
    Mat dz = head_gradient_hard(net, probs, labels, net.temperature);
    Mat dx = backward_from_logits(net, caches, dz, &grads);
    if (d_input) *d_input = dx.row(0).transpose();
    return value;
}

double loss_value(const Network& net, const Vec& x, int label, Loss loss) {
    ForwardCaches caches;
    Mat probs = forward_cached(net, x.transpose(), net.temperature, false, nullptr, caches);
    std::vector<int> labels{label};
    return batch_loss(net, probs, &labels, nullptr, loss);
}

std::uint64_t weights_hash(const Network& net) {
    std::uint64_t h = 1469598103934665603ull;
    for (const Layer& l : net.layers) {
        h = hash_matrix(l.weights, h);
        h = hash_vector(l.biases, h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

std::string checkpoint_string(const Network& net) {
    net.validate();
    nlohmann::json doc;
    doc["version"] = 1;
    doc["temperature"] = net.temperature;
    auto& specs = doc["layer_specs"] = nlohmann::json::array();
    auto& weights = doc["weights"] = nlohmann::json::array();
    auto& biases = doc["biases"] = nlohmann::json::array();
    for (const Layer& l : net.layers) {
        specs.push_back({{"input_dim", l.spec.input_dim},
                         {"output_dim", l.spec.output_dim},
                         {"activation", to_string(l.spec.activation)},
                         {"dropout_rate", l.spec.dropout_rate}});
        std::vector<double> w(l.weights.data(), l.weights.data() + l.weights.size());
        std::vector<double> b(l.biases.data(), l.biases.data() + l.biases.size());
        weights.push_back(std::move(w));
        biases.push_back(std::move(b));
    }
    return doc.dump();
}

Network network_from_checkpoint_string(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    }
    try {
        if (doc.at("version").get<int>() != 1)
            throw DataError("unsupported checkpoint version");
        Network net;
        net.temperature = doc.at("temperature").get<double>();
        const auto& specs = doc.at("layer_specs");
        const auto& weights = doc.at("weights");
        const auto& biases = doc.at("biases");
        if (specs.size() != weights.size() || specs.size() != biases.size())
            throw DataError("checkpoint: layer count mismatch");
        for (std::size_t i = 0; i < specs.size(); ++i) {
            Layer layer;
            layer.spec.input_dim = specs[i].at("input_dim").get<int>();
            layer.spec.output_dim = specs[i].at("output_dim").get<int>();
            layer.spec.activation = activation_from_string(specs[i].at("activation").get<std::string>());
            layer.spec.dropout_rate = specs[i].at("dropout_rate").get<double>();
            const auto w = weights[i].get<std::vector<double>>();
            const auto b = biases[i].get<std::vector<double>>();
            if (static_cast<int>(w.size()) != layer.spec.input_dim * layer.spec.output_dim ||
                static_cast<int>(b.size()) != layer.spec.output_dim)
                throw DataError("checkpoint: layer " + std::to_string(i) + " size mismatch");
            layer.weights = Eigen::Map<const Mat>(w.data(), layer.spec.input_dim, layer.spec.output_dim);
            layer.biases = Eigen::Map<const Vec>(b.data(), layer.spec.output_dim);
            net.layers.push_back(std::move(layer));
        }
        net.validate();
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("invalid checkpoint: ") + e.what());
    }
}

void save_checkpoint(const Network& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << checkpoint_string(net) << '\n';
    if (!out) throw DataError("failed writing checkpoint: " + path);
}

Network load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return network_from_checkpoint_string(buf.str());
}

}  // namespace malbench::nn
