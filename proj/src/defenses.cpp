#include "malbench/defenses.hpp"

#include "malbench/errors.hpp"
#include "malbench/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace malbench::defenses {

namespace fs = std::filesystem;

namespace {

constexpr int kMalware = 1;

void require_both_classes(const data::Dataset& ds) {
    if (ds.count_label(0) == 0 || ds.count_label(1) == 0)
        throw std::invalid_argument("training requires both classes");
}

void write_manifest(const std::string& dir, const nlohmann::json& manifest) {
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw DataError("cannot write manifest under " + dir);
    out << manifest.dump(2) << '\n';
}

nlohmann::json read_manifest(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw DataError("cannot open manifest under " + dir);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
}

std::string model_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

}  // namespace

nn::Network fit_network(const data::Dataset& ds, const std::vector<nn::LayerSpec>& arch,
                        const nn::TrainConfig& cfg, const nn::BatchHook& hook,
                        nn::TrainLog* log) {
    require_both_classes(ds);
    nn::Network net = nn::init_network(arch, derive_seed(cfg.seed, "net.init"));
    return nn::train(std::move(net), ds.X.to_real(), ds.y, cfg, log, hook);
}

// ---------------------------------------------------------------------------
// Plain
// ---------------------------------------------------------------------------

PlainPredictor train_plain(const data::Dataset& train, const std::vector<nn::LayerSpec>& arch,
                           const nn::TrainConfig& cfg) {
    return PlainPredictor(fit_network(train, arch, cfg));
}

void PlainPredictor::save(const std::string& dir) const {
    fs::create_directories(dir);
    nn::save_checkpoint(net, model_path(dir, "model.json"));
    write_manifest(dir, {{"defense", "plain"}});
}

// ---------------------------------------------------------------------------
// Distillation
// ---------------------------------------------------------------------------

DistillOutputs distill_train(const data::Dataset& train, const std::vector<nn::LayerSpec>& arch,
                             double temperature, const nn::TrainConfig& cfg) {
    if (!(temperature > 0.0)) throw std::invalid_argument("distillation temperature must be > 0");
    require_both_classes(train);
    const Mat X = train.X.to_real();

    nn::TrainConfig teacher_cfg = cfg;
    teacher_cfg.seed = derive_seed(cfg.seed, "distill.teacher");
    nn::Network teacher = nn::init_network(arch, derive_seed(teacher_cfg.seed, "net.init"));
    teacher.temperature = temperature;
    teacher = nn::train(std::move(teacher), X, train.y, teacher_cfg);

    const Mat soft_labels = nn::forward_batch(teacher, X, temperature);

    nn::TrainConfig student_cfg = cfg;
    student_cfg.seed = derive_seed(cfg.seed, "distill.student");
    nn::Network student = nn::init_network(arch, derive_seed(student_cfg.seed, "net.init"));
    student.temperature = temperature;
    student = nn::train_soft(std::move(student), X, soft_labels, student_cfg);
    student.temperature = 1.0;  // deploy at temperature 1

    DistillOutputs out;
    out.predictor.student = std::move(student);
    out.predictor.train_temperature = temperature;
    out.teacher = std::move(teacher);
    out.soft_labels = soft_labels;
    return out;
}

void DistilledPredictor::save(const std::string& dir) const {
    fs::create_directories(dir);
    nn::save_checkpoint(student, model_path(dir, "model.json"));
    write_manifest(dir, {{"defense", "distill"}, {"temperature", train_temperature}});
}

// ---------------------------------------------------------------------------
// Adversarial training
// ---------------------------------------------------------------------------

AdvTrainedPredictor adversarial_train(const data::Dataset& train,
                                      const std::vector<nn::LayerSpec>& arch,
                                      const attacks::AttackConfig& inner,
                                      const nn::TrainConfig& cfg) {
    if (inner.kind == attacks::AttackKind::malgan)
        throw std::invalid_argument("malgan cannot serve as the inner maximizer");
    // The inner maximizer admits step_size == 0 (a null ascent reduces to plain
    // training); the standalone FGSM attacks keep the strict > 0 rule.
    if (inner.budget < 1) throw std::invalid_argument("inner attack budget must be >= 1");
    if (attacks::is_fgsm(inner.kind)) {
        if (inner.step_size < 0.0) throw std::invalid_argument("inner step_size must be >= 0");
    } else {
        inner.validate();
    }
    require_both_classes(train);

    const bool batched_fgsm = attacks::is_fgsm(inner.kind);
    const std::uint64_t inner_seed = derive_seed(cfg.seed, "advtrain.inner");

    nn::BatchHook replace_malware = [&, inner, inner_seed, batched_fgsm](
                                        const nn::Network& current, int epoch, int batch_index,
                                        Mat& batch, const std::vector<int>& labels) {
        std::vector<int> malware_rows;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == kMalware) malware_rows.push_back(static_cast<int>(i));
        if (malware_rows.empty()) return;

        if (batched_fgsm) {
            // Batched relaxation over the malware rows; rows already classified
            // benign keep their input, matching the per-sample attack.
            Mat sub(static_cast<Eigen::Index>(malware_rows.size()), batch.cols());
            for (std::size_t k = 0; k < malware_rows.size(); ++k)
                sub.row(static_cast<Eigen::Index>(k)) = batch.row(malware_rows[k]);
            const Mat probs = nn::forward_batch(current, sub);
            const Mat relaxed =
                attacks::fgsm_k_relax_batch(current, sub, inner.budget, inner.step_size);
            for (std::size_t k = 0; k < malware_rows.size(); ++k) {
                const auto row = static_cast<Eigen::Index>(k);
                if (probs(row, 0) > probs(row, kMalware)) continue;  // natural evasion
                const Vec point = relaxed.row(row).transpose();
                data::BitVec bits;
                if (inner.kind == attacks::AttackKind::dfgsm_k) {
                    bits = attacks::round_deterministic(point);
                } else {
                    auto rng = make_rng(derive_seed(
                        inner_seed, "round",
                        static_cast<std::uint64_t>(epoch) * 1000003ull +
                            static_cast<std::uint64_t>(batch_index),
                        static_cast<std::uint64_t>(k)));
                    bits = attacks::round_randomized(point, rng);
                }
                for (Eigen::Index j = 0; j < batch.cols(); ++j) {
                    const bool original = sub(row, j) == 1.0;
                    batch(malware_rows[k], j) =
                        (original || bits[static_cast<std::size_t>(j)]) ? 1.0 : 0.0;
                }
            }
        } else {
            for (std::size_t k = 0; k < malware_rows.size(); ++k) {
                const int row = malware_rows[k];
                data::BitVec bits(static_cast<std::size_t>(batch.cols()));
                for (Eigen::Index j = 0; j < batch.cols(); ++j)
                    bits[static_cast<std::size_t>(j)] = batch(row, j) == 1.0 ? 1 : 0;
                attacks::AttackConfig row_cfg = inner;
                row_cfg.seed = derive_seed(inner_seed, "row",
                                           static_cast<std::uint64_t>(epoch) * 1000003ull +
                                               static_cast<std::uint64_t>(batch_index),
                                           static_cast<std::uint64_t>(k));
                const attacks::AttackResult result = attacks::single_attack(current, bits, row_cfg);
                for (Eigen::Index j = 0; j < batch.cols(); ++j)
                    batch(row, j) = result.x_adv[static_cast<std::size_t>(j)];
            }
        }
    };

    AdvTrainedPredictor pred;
    pred.net = fit_network(train, arch, cfg, replace_malware);
    pred.inner = inner;
    return pred;
}

void AdvTrainedPredictor::save(const std::string& dir) const {
    fs::create_directories(dir);
    nn::save_checkpoint(net, model_path(dir, "model.json"));
    write_manifest(dir, {{"defense", "adv_train"},
                         {"inner_kind", attacks::to_string(inner.kind)},
                         {"inner_budget", inner.budget},
                         {"inner_step_size", inner.step_size},
                         {"inner_seed", inner.seed}});
}

// ---------------------------------------------------------------------------
// Ensemble
// ---------------------------------------------------------------------------

Vec EnsemblePredictor::predict(const Vec& x) const {
    if (aggregation == Aggregation::majority_vote) {
        Vec votes = Vec::Zero(n_outputs());
        for (const nn::Network& member : members)
            votes[nn::predicted_class(member, x)] += 1.0;
        return votes / static_cast<double>(members.size());
    }
    Vec mean = Vec::Zero(n_outputs());
    for (const nn::Network& member : members) mean += member.predict(x);
    return mean / static_cast<double>(members.size());
}

Mat EnsemblePredictor::input_jacobian(const Vec& x) const {
    Mat mean = Mat::Zero(n_outputs(), input_dim());
    for (const nn::Network& member : members) mean += member.input_jacobian(x);
    return mean / static_cast<double>(members.size());
}

Vec EnsemblePredictor::input_loss_gradient(const Vec& x, int label) const {
    if (label < 0 || label >= n_outputs()) throw std::invalid_argument("label out of range");
    // cross-entropy of the mean probability: d(-log p_y)/dx = -(mean J_y) / p_y
    Vec mean_prob = Vec::Zero(n_outputs());
    for (const nn::Network& member : members) mean_prob += member.predict(x);
    mean_prob /= static_cast<double>(members.size());
    const Mat jac = input_jacobian(x);
    const double p = std::max(mean_prob[label], 1e-12);
    return -jac.row(label).transpose() / p;
}

EnsemblePredictor ensemble_train(const data::Dataset& train, const EnsembleSpec& spec,
                                 const nn::TrainConfig& cfg) {
    if (spec.member_hidden.size() < 2)
        throw std::invalid_argument("an ensemble needs at least 2 members");
    require_both_classes(train);

    EnsemblePredictor pred;
    pred.aggregation = spec.aggregation;
    for (std::size_t i = 0; i < spec.member_hidden.size(); ++i) {
        nn::TrainConfig member_cfg = cfg;
        member_cfg.epochs = spec.epochs;
        member_cfg.seed = derive_seed(cfg.seed, "ensemble.member", i);
        const auto arch = nn::classifier_arch(train.X.d, spec.member_hidden[i], 2, spec.dropout);
        pred.members.push_back(fit_network(train, arch, member_cfg));
    }
    return pred;
}

void EnsemblePredictor::save(const std::string& dir) const {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < members.size(); ++i)
        nn::save_checkpoint(members[i], model_path(dir, "member_" + std::to_string(i) + ".json"));
    write_manifest(dir, {{"defense", "ensemble"},
                         {"members", members.size()},
                         {"aggregation", aggregation == Aggregation::mean_probability
                                             ? "mean_probability"
                                             : "majority_vote"}});
}

// ---------------------------------------------------------------------------
// Random feature nullification
// ---------------------------------------------------------------------------

void RFNConfig::validate() const {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("rfn: p must be in [0,1)");
    if (inference_masks < 1) throw std::invalid_argument("rfn: inference_masks must be >= 1");
}

Vec sample_mask(int d, double p, bool bernoulli, std::mt19937_64& rng) {
    Vec mask = Vec::Ones(d);
    if (p <= 0.0) return mask;
    if (bernoulli) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int j = 0; j < d; ++j)
            if (u(rng) < p) mask[j] = 0.0;
        return mask;
    }
    // exactly floor(p*d) zeros, uniform without replacement
    const int zeros = static_cast<int>(std::floor(p * d));
    std::vector<int> slots(static_cast<std::size_t>(d));
    std::iota(slots.begin(), slots.end(), 0);
    for (int i = 0; i < zeros; ++i) {
        std::uniform_int_distribution<int> pick(i, d - 1);
        std::swap(slots[static_cast<std::size_t>(i)], slots[static_cast<std::size_t>(pick(rng))]);
        mask[slots[static_cast<std::size_t>(i)]] = 0.0;
    }
    return mask;
}

Vec RFNPredictor::predict_seeded(const Vec& x, std::uint64_t seed) const {
    auto rng = make_rng(derive_seed(seed, "rfn.infer"));
    if (rfn.inference_masks == 1) {
        const Vec mask = sample_mask(net.input_dim(), rfn.p, rfn.bernoulli, rng);
        return net.predict(x.cwiseProduct(mask));
    }
    Vec mean = Vec::Zero(net.n_outputs());
    for (int m = 0; m < rfn.inference_masks; ++m) {
        const Vec mask = sample_mask(net.input_dim(), rfn.p, rfn.bernoulli, rng);
        mean += net.predict(x.cwiseProduct(mask));
    }
    return mean / static_cast<double>(rfn.inference_masks);
}

Mat RFNPredictor::input_jacobian(const Vec& x) const {
    auto rng = make_rng(derive_seed(rfn.seed, "rfn.query"));
    const Vec mask = sample_mask(net.input_dim(), rfn.p, rfn.bernoulli, rng);
    Mat jac = net.input_jacobian(x.cwiseProduct(mask));
    for (Eigen::Index j = 0; j < jac.cols(); ++j) jac.col(j) *= mask[j];
    return jac;
}

Vec RFNPredictor::input_loss_gradient(const Vec& x, int label) const {
    auto rng = make_rng(derive_seed(rfn.seed, "rfn.query"));
    const Vec mask = sample_mask(net.input_dim(), rfn.p, rfn.bernoulli, rng);
    return net.input_loss_gradient(x.cwiseProduct(mask), label).cwiseProduct(mask);
}

namespace {

// Attacker-facing view: every query goes through a freshly sampled mask.
class RfnAttackView final : public nn::Model {
public:
    RfnAttackView(const nn::Network& net, const RFNConfig& rfn, std::uint64_t seed)
        : net_(net), rfn_(rfn), rng_(make_rng(derive_seed(seed, "rfn.attack"))) {}

    int input_dim() const override { return net_.input_dim(); }
    int n_outputs() const override { return net_.n_outputs(); }
    Vec predict(const Vec& x) const override {
        return net_.predict(x.cwiseProduct(fresh_mask()));
    }
    Mat input_jacobian(const Vec& x) const override {
        const Vec mask = fresh_mask();
        Mat jac = net_.input_jacobian(x.cwiseProduct(mask));
        for (Eigen::Index j = 0; j < jac.cols(); ++j) jac.col(j) *= mask[j];
        return jac;
    }
    Vec input_loss_gradient(const Vec& x, int label) const override {
        const Vec mask = fresh_mask();
        return net_.input_loss_gradient(x.cwiseProduct(mask), label).cwiseProduct(mask);
    }

private:
    Vec fresh_mask() const { return sample_mask(net_.input_dim(), rfn_.p, rfn_.bernoulli, rng_); }

    const nn::Network& net_;
    RFNConfig rfn_;
    mutable std::mt19937_64 rng_;  // views are single-threaded by contract
};

}  // namespace

std::unique_ptr<nn::Model> RFNPredictor::attack_view(std::uint64_t seed) const {
    return std::make_unique<RfnAttackView>(net, rfn, seed);
}

RFNPredictor rfn_train(const data::Dataset& train, const std::vector<nn::LayerSpec>& arch,
                       const RFNConfig& rfn, const nn::TrainConfig& cfg) {
    rfn.validate();
    require_both_classes(train);

    auto mask_rng = std::make_shared<std::mt19937_64>(make_rng(derive_seed(cfg.seed, "rfn.train")));
    nn::BatchHook nullify = nullptr;
    if (rfn.p > 0.0) {
        nullify = [rfn, mask_rng](const nn::Network&, int, int, Mat& batch, const std::vector<int>&) {
            for (Eigen::Index i = 0; i < batch.rows(); ++i) {
                const Vec mask =
                    sample_mask(static_cast<int>(batch.cols()), rfn.p, rfn.bernoulli, *mask_rng);
                batch.row(i) = batch.row(i).cwiseProduct(mask.transpose());
            }
        };
    }

    RFNPredictor pred;
    pred.net = fit_network(train, arch, cfg, nullify);
    pred.rfn = rfn;
    return pred;
}

Vec rfn_predict(const RFNPredictor& pred, const Vec& x, std::uint64_t seed) {
    return pred.predict_seeded(x, seed);
}

void RFNPredictor::save(const std::string& dir) const {
    fs::create_directories(dir);
    nn::save_checkpoint(net, model_path(dir, "model.json"));
    write_manifest(dir, {{"defense", "rfn"},
                         {"p", rfn.p},
                         {"bernoulli", rfn.bernoulli},
                         {"inference_masks", rfn.inference_masks},
                         {"seed", rfn.seed}});
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

std::unique_ptr<Predictor> load_predictor(const std::string& dir) {
    const nlohmann::json manifest = read_manifest(dir);
    try {
        const std::string kind = manifest.at("defense").get<std::string>();
        if (kind == "plain") {
            auto pred = std::make_unique<PlainPredictor>();
            pred->net = nn::load_checkpoint(model_path(dir, "model.json"));
            return pred;
        }
        if (kind == "distill") {
            auto pred = std::make_unique<DistilledPredictor>();
            pred->student = nn::load_checkpoint(model_path(dir, "model.json"));
            pred->train_temperature = manifest.at("temperature").get<double>();
            return pred;
        }
        if (kind == "adv_train") {
            auto pred = std::make_unique<AdvTrainedPredictor>();
            pred->net = nn::load_checkpoint(model_path(dir, "model.json"));
            pred->inner.kind = attacks::kind_from_string(manifest.at("inner_kind").get<std::string>());
            pred->inner.budget = manifest.at("inner_budget").get<int>();
            pred->inner.step_size = manifest.at("inner_step_size").get<double>();
            pred->inner.seed = manifest.at("inner_seed").get<std::uint64_t>();
            return pred;
        }
        if (kind == "ensemble") {
            auto pred = std::make_unique<EnsemblePredictor>();
            const auto count = manifest.at("members").get<std::size_t>();
            pred->aggregation = manifest.at("aggregation").get<std::string>() == "majority_vote"
                                    ? Aggregation::majority_vote
                                    : Aggregation::mean_probability;
            for (std::size_t i = 0; i < count; ++i)
                pred->members.push_back(
                    nn::load_checkpoint(model_path(dir, "member_" + std::to_string(i) + ".json")));
            if (pred->members.empty()) throw DataError("ensemble manifest lists no members");
            return pred;
        }
        if (kind == "rfn") {
            auto pred = std::make_unique<RFNPredictor>();
            pred->net = nn::load_checkpoint(model_path(dir, "model.json"));
            pred->rfn.p = manifest.at("p").get<double>();
            pred->rfn.bernoulli = manifest.at("bernoulli").get<bool>();
            pred->rfn.inference_masks = manifest.at("inference_masks").get<int>();
            pred->rfn.seed = manifest.at("seed").get<std::uint64_t>();
            pred->rfn.validate();
            return pred;
        }
        throw DataError("unknown defense kind in manifest: " + kind);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
}

}  // namespace malbench::defenses
