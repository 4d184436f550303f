#include "malbench/malgan.hpp"

#include "malbench/errors.hpp"
#include "malbench/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace malbench::malgan {

namespace fs = std::filesystem;

namespace {

constexpr int kBenign = 0;
constexpr int kMalware = 1;

void check_pool(const data::BitMatrix& pool, const char* name) {
    pool.validate();
    if (pool.n == 0) throw std::invalid_argument(std::string(name) + " pool is empty");
}

Mat uniform_noise(int rows, int dim, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Mat z(rows, dim);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < dim; ++j) z(i, j) = u(rng);
    return z;
}

Mat concat_cols(const Mat& a, const Mat& b) {
    Mat out(a.rows(), a.cols() + b.cols());
    out.leftCols(a.cols()) = a;
    out.rightCols(b.cols()) = b;
    return out;
}

// Binarized adversarial batch: x OR (generator output > 0.5). The strict
// comparison keeps an all-zero-logit generator (sigmoid 0.5 everywhere) an
// identity.
Mat binarize_or(const Mat& x, const Mat& gen_out) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            out(i, j) = (x(i, j) == 1.0 || gen_out(i, j) > 0.5) ? 1.0 : 0.0;
    return out;
}

std::vector<int> hard_labels(const nn::Network& net, const Mat& X) {
    const Mat probs = nn::forward_batch(net, X);
    std::vector<int> labels(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        labels[static_cast<std::size_t>(i)] = probs(i, kBenign) >= probs(i, kMalware) ? 0 : 1;
    return labels;
}

double benign_fraction(const nn::Network& net, const Mat& X) {
    const std::vector<int> labels = hard_labels(net, X);
    const auto benign = std::count(labels.begin(), labels.end(), kBenign);
    return static_cast<double>(benign) / static_cast<double>(labels.size());
}

}  // namespace

void MalganConfig::validate() const {
    if (noise_dim < 1) throw std::invalid_argument("malgan: noise_dim must be >= 1");
    if (generator_hidden < 1 || discriminator_hidden < 1)
        throw std::invalid_argument("malgan: hidden widths must be positive");
    if (batch_size < 1) throw std::invalid_argument("malgan: batch_size must be positive");
    if (epochs < 0 || blackbox_epochs < 0)
        throw std::invalid_argument("malgan: epochs must be non-negative");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("malgan: learning_rate must be > 0");
}

nn::Network train_blackbox(const data::Dataset& data, const MalganConfig& cfg) {
    cfg.validate();
    data.validate();
    if (data.count_label(0) == 0 || data.count_label(1) == 0)
        throw std::invalid_argument("black-box training requires both classes");

    std::vector<nn::LayerSpec> arch = {
        {data.X.d, 256, nn::Activation::relu, 0.2},
        {256, 128, nn::Activation::relu, 0.2},
        {128, 2, nn::Activation::softmax, 0.0},
    };
    nn::Network net = nn::init_network(arch, derive_seed(cfg.seed, "malgan.blackbox.init"));
    nn::TrainConfig train_cfg;
    train_cfg.epochs = cfg.blackbox_epochs;
    train_cfg.batch_size = cfg.batch_size;
    train_cfg.learning_rate = cfg.learning_rate;
    train_cfg.seed = derive_seed(cfg.seed, "malgan.blackbox.train");
    return nn::train(std::move(net), data.X.to_real(), data.y, train_cfg);
}

MalganArtifacts train_malgan(const data::BitMatrix& malware, const data::BitMatrix& benign,
                             const nn::Network& blackbox, const MalganConfig& cfg) {
    cfg.validate();
    if (cfg.epochs < 1) throw std::invalid_argument("malgan: generator training needs epochs >= 1");
    check_pool(malware, "malware");
    check_pool(benign, "benign");
    if (malware.d != benign.d || malware.d != blackbox.input_dim())
        throw std::invalid_argument("malgan: dimension mismatch between pools and black box");

    const int d = malware.d;

    // Hold out a quarter of the malware pool for the per-epoch evaluation.
    std::vector<int> rows(static_cast<std::size_t>(malware.n));
    std::iota(rows.begin(), rows.end(), 0);
    auto split_rng = make_rng(derive_seed(cfg.seed, "malgan.valsplit"));
    std::shuffle(rows.begin(), rows.end(), split_rng);
    int n_val = malware.n / 4;
    if (n_val == 0 && malware.n > 1) n_val = 1;
    const int n_train = malware.n - n_val;

    Mat train_x(n_train, d);
    Mat val_x(std::max(n_val, 1), d);
    for (int i = 0; i < n_train; ++i)
        train_x.row(i) = data::to_real(malware.row(rows[static_cast<std::size_t>(i)])).transpose();
    if (n_val == 0) {
        val_x.row(0) = train_x.row(0);  // single-sample pool doubles as eval
    } else {
        for (int i = 0; i < n_val; ++i)
            val_x.row(i) =
                data::to_real(malware.row(rows[static_cast<std::size_t>(n_train + i)])).transpose();
    }

    const Mat benign_x = benign.to_real();

    MalganArtifacts art;
    art.noise_dim = cfg.noise_dim;
    art.blackbox = blackbox;
    art.blackbox_val_fnr = benign_fraction(blackbox, val_x);

    std::vector<nn::LayerSpec> gen_arch = {
        {d + cfg.noise_dim, cfg.generator_hidden, nn::Activation::relu, 0.0},
        {cfg.generator_hidden, d, nn::Activation::sigmoid, 0.0},
    };
    std::vector<nn::LayerSpec> disc_arch = {
        {d, cfg.discriminator_hidden, nn::Activation::relu, 0.0},
        {cfg.discriminator_hidden, 1, nn::Activation::sigmoid, 0.0},
    };
    nn::Network generator = nn::init_network(gen_arch, derive_seed(cfg.seed, "malgan.gen.init"));
    nn::Network discriminator =
        nn::init_network(disc_arch, derive_seed(cfg.seed, "malgan.disc.init"));

    nn::TrainConfig adam_cfg;  // carries the optimizer constants
    adam_cfg.learning_rate = cfg.learning_rate;
    nn::AdamState gen_adam = nn::make_adam_state(generator);
    nn::AdamState disc_adam = nn::make_adam_state(discriminator);

    auto shuffle_rng = make_rng(derive_seed(cfg.seed, "malgan.shuffle"));
    auto noise_rng = make_rng(derive_seed(cfg.seed, "malgan.noise"));
    auto benign_rng = make_rng(derive_seed(cfg.seed, "malgan.benign"));

    std::vector<int> train_order(static_cast<std::size_t>(n_train));
    std::iota(train_order.begin(), train_order.end(), 0);
    std::vector<int> benign_order(static_cast<std::size_t>(benign.n));
    std::iota(benign_order.begin(), benign_order.end(), 0);
    std::shuffle(benign_order.begin(), benign_order.end(), benign_rng);
    std::size_t benign_cursor = 0;
    auto next_benign_rows = [&](int count) {
        Mat rows_x(count, d);
        for (int i = 0; i < count; ++i) {
            if (benign_cursor == benign_order.size()) {
                std::shuffle(benign_order.begin(), benign_order.end(), benign_rng);
                benign_cursor = 0;
            }
            rows_x.row(i) = benign_x.row(benign_order[benign_cursor++]);
        }
        return rows_x;
    };

    art.per_epoch_evasion.reserve(static_cast<std::size_t>(cfg.epochs));
    art.best_evasion = -1.0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(train_order.begin(), train_order.end(), shuffle_rng);
        for (int start = 0; start < n_train; start += cfg.batch_size) {
            const int bs = std::min(cfg.batch_size, n_train - start);
            Mat xb(bs, d);
            for (int i = 0; i < bs; ++i)
                xb.row(i) = train_x.row(train_order[static_cast<std::size_t>(start + i)]);
            const Mat zb = uniform_noise(bs, cfg.noise_dim, noise_rng);

            // --- discriminator step: match black-box labels on benign rows and
            // binarized adversarial rows
            nn::ForwardCaches gen_caches;
            const Mat gen_out =
                nn::forward_cached(generator, concat_cols(xb, zb), 1.0, false, nullptr, gen_caches);
            const Mat adv_bin = binarize_or(xb, gen_out);
            const Mat benign_batch = next_benign_rows(bs);

            Mat disc_in(2 * bs, d);
            disc_in.topRows(bs) = benign_batch;
            disc_in.bottomRows(bs) = adv_bin;
            const std::vector<int> bb_labels = hard_labels(blackbox, disc_in);

            nn::ForwardCaches disc_caches;
            const Mat disc_probs =
                nn::forward_cached(discriminator, disc_in, 1.0, false, nullptr, disc_caches);
            Mat d_logits(2 * bs, 1);
            for (int i = 0; i < 2 * bs; ++i)
                d_logits(i, 0) = (disc_probs(i, 0) - bb_labels[static_cast<std::size_t>(i)]) /
                                 static_cast<double>(2 * bs);
            nn::Gradients disc_grads = nn::zero_gradients(discriminator);
            nn::backward_from_logits(discriminator, disc_caches, d_logits, &disc_grads);
            nn::adam_step(discriminator, disc_adam, disc_grads, adam_cfg);

            // --- generator step: minimize the discriminator's malware score on
            // the continuous adversarial batch max(x, G(x,z)); the gradient
            // flows only through coordinates the generator can still raise
            const Mat adv_cont = xb.cwiseMax(gen_out);
            nn::ForwardCaches disc_caches2;
            const Mat disc_on_cont =
                nn::forward_cached(discriminator, adv_cont, 1.0, false, nullptr, disc_caches2);
            Mat g_logits(bs, 1);
            for (int i = 0; i < bs; ++i)
                g_logits(i, 0) = disc_on_cont(i, 0) / static_cast<double>(bs);  // BCE target 0
            const Mat d_adv = nn::backward_from_logits(discriminator, disc_caches2, g_logits, nullptr);

            Mat d_gen_out = d_adv;
            for (Eigen::Index i = 0; i < d_gen_out.rows(); ++i)
                for (Eigen::Index j = 0; j < d_gen_out.cols(); ++j)
                    if (xb(i, j) == 1.0) d_gen_out(i, j) = 0.0;  // frozen by the OR constraint

            nn::Gradients gen_grads = nn::zero_gradients(generator);
            nn::backward_from_output(generator, gen_caches, d_gen_out, &gen_grads);
            nn::adam_step(generator, gen_adam, gen_grads, adam_cfg);
        }

        // --- epoch evaluation on the held-out pool, seeded per epoch
        auto eval_rng = make_rng(derive_seed(cfg.seed, "malgan.eval", static_cast<std::uint64_t>(epoch)));
        const Mat eval_z = uniform_noise(static_cast<int>(val_x.rows()), cfg.noise_dim, eval_rng);
        const Mat eval_out = nn::forward_batch(generator, concat_cols(val_x, eval_z));
        const Mat eval_bin = binarize_or(val_x, eval_out);
        const double evasion = benign_fraction(blackbox, eval_bin);
        art.per_epoch_evasion.push_back(evasion);
        if (evasion > art.best_evasion) {  // first occurrence wins ties
            art.best_evasion = evasion;
            art.best_epoch = epoch;
            art.best_generator = generator;
        }
    }

    art.discriminator = std::move(discriminator);
    return art;
}

attacks::AttackResult malgan_generate(const MalganArtifacts& artifacts, const nn::Model& victim,
                                      const data::BitVec& x, std::uint64_t seed) {
    const int d = artifacts.best_generator.n_outputs();
    if (static_cast<int>(x.size()) != d)
        throw std::invalid_argument("malgan_generate: dimension mismatch");

    auto rng = make_rng(derive_seed(seed, "malgan.generate"));
    Mat xin(1, d);
    for (int j = 0; j < d; ++j) xin(0, j) = x[static_cast<std::size_t>(j)];
    const Mat z = uniform_noise(1, artifacts.noise_dim, rng);
    const Mat gen_out = nn::forward_batch(artifacts.best_generator, concat_cols(xin, z));
    const Mat adv = binarize_or(xin, gen_out);

    data::BitVec bits(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) bits[static_cast<std::size_t>(j)] = adv(0, j) == 1.0 ? 1 : 0;

    attacks::AttackResult result;
    result.n_changed = data::hamming_distance(x, bits);
    result.evaded = nn::predicted_class(victim, data::to_real(bits)) == kBenign;
    result.x_adv = std::move(bits);
    result.iterations_used = 1;
    return result;
}

void save_artifacts(const MalganArtifacts& artifacts, const std::string& dir) {
    fs::create_directories(dir);
    nn::save_checkpoint(artifacts.best_generator, (fs::path(dir) / "generator.json").string());
    nn::save_checkpoint(artifacts.discriminator, (fs::path(dir) / "discriminator.json").string());
    nn::save_checkpoint(artifacts.blackbox, (fs::path(dir) / "blackbox.json").string());
    nlohmann::json manifest = {
        {"best_epoch", artifacts.best_epoch},
        {"best_evasion", artifacts.best_evasion},
        {"per_epoch_evasion", artifacts.per_epoch_evasion},
        {"blackbox_val_fnr", artifacts.blackbox_val_fnr},
        {"noise_dim", artifacts.noise_dim},
        {"evaluation_pool", "held-out quarter of the malware pool"},
    };
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw DataError("cannot write malgan manifest under " + dir);
    out << manifest.dump(2) << '\n';
}

MalganArtifacts load_artifacts(const std::string& dir) {
    MalganArtifacts art;
    art.best_generator = nn::load_checkpoint((fs::path(dir) / "generator.json").string());
    art.discriminator = nn::load_checkpoint((fs::path(dir) / "discriminator.json").string());
    art.blackbox = nn::load_checkpoint((fs::path(dir) / "blackbox.json").string());
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw DataError("cannot open malgan manifest under " + dir);
    try {
        const nlohmann::json manifest = nlohmann::json::parse(in);
        art.best_epoch = manifest.at("best_epoch").get<int>();
        art.best_evasion = manifest.at("best_evasion").get<double>();
        art.per_epoch_evasion = manifest.at("per_epoch_evasion").get<std::vector<double>>();
        art.blackbox_val_fnr = manifest.at("blackbox_val_fnr").get<double>();
        art.noise_dim = manifest.at("noise_dim").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed malgan manifest: ") + e.what());
    }
    return art;
}

}  // namespace malbench::malgan
