#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "malbench/defenses.hpp"
#include "malbench/errors.hpp"
#include "malbench/malgan.hpp"
#include "malbench/rng.hpp"

#include <algorithm>
#include <filesystem>

using namespace malbench;
using namespace malbench::malgan;

namespace {

data::Dataset small_dataset(std::uint64_t seed = 3, int n_per_class = 100, int d = 16) {
    data::SynthSpec spec;
    spec.n_benign = n_per_class;
    spec.n_malware = n_per_class;
    spec.d = d;
    spec.n_malware_markers = 4;
    spec.n_benign_markers = 4;
    spec.marker_on_prob = 0.9;
    spec.background_on_prob = 0.08;
    spec.seed = seed;
    return data::generate_synthetic(spec);
}

MalganConfig small_cfg(std::uint64_t seed = 7) {
    MalganConfig cfg;
    cfg.generator_hidden = 32;
    cfg.discriminator_hidden = 32;
    cfg.epochs = 6;
    cfg.blackbox_epochs = 30;
    cfg.batch_size = 25;
    cfg.seed = seed;
    return cfg;
}

nn::Network constant_benign_blackbox(int d) {
    // all-zero weights: softmax ties at [0.5, 0.5], argmax picks benign
    nn::Network net = nn::init_network(nn::classifier_arch(d, {4}), 1);
    for (auto& l : net.layers) {
        l.weights.setZero();
        l.biases.setZero();
    }
    return net;
}

}  // namespace

TEST_CASE("config validation") {
    MalganConfig cfg = small_cfg();
    CHECK_NOTHROW(cfg.validate());
    cfg.noise_dim = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_cfg();
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK(MalganConfig{}.noise_dim == 10);
    CHECK(MalganConfig{}.epochs == 100);
    CHECK(MalganConfig{}.blackbox_epochs == 200);
}

TEST_CASE("black box: synthetic accuracy, epochs=0 no-op, seed determinism") {
    data::Dataset ds = small_dataset();
    MalganConfig cfg = small_cfg();

    nn::Network bb = train_blackbox(ds, cfg);
    int correct = 0;
    for (int i = 0; i < ds.X.n; ++i)
        correct +=
            nn::predicted_class(bb, data::to_real(ds.X.row(i))) == ds.y[static_cast<std::size_t>(i)];
    CHECK(static_cast<double>(correct) / ds.X.n >= 0.95);

    MalganConfig frozen = cfg;
    frozen.blackbox_epochs = 0;
    nn::Network untouched = train_blackbox(ds, frozen);
    nn::Network reference =
        nn::init_network({{16, 256, nn::Activation::relu, 0.2},
                          {256, 128, nn::Activation::relu, 0.2},
                          {128, 2, nn::Activation::softmax, 0.0}},
                         derive_seed(frozen.seed, "malgan.blackbox.init"));
    CHECK(nn::weights_hash(untouched) == nn::weights_hash(reference));

    nn::Network again = train_blackbox(ds, cfg);
    CHECK(nn::weights_hash(bb) == nn::weights_hash(again));

    data::Dataset single;
    single.X = data::BitMatrix::zeros(4, 16);
    single.y = {1, 1, 1, 1};
    CHECK_THROWS_AS(train_blackbox(single, cfg), std::invalid_argument);
}

TEST_CASE("identity generator: zero output layer leaves every vector unchanged") {
    data::Dataset ds = small_dataset(5);
    MalganConfig cfg = small_cfg(9);
    nn::Network bb = train_blackbox(ds, cfg);

    MalganArtifacts art;
    art.noise_dim = cfg.noise_dim;
    art.blackbox = bb;
    art.best_generator = nn::init_network(
        {{16 + cfg.noise_dim, 8, nn::Activation::relu, 0.0}, {8, 16, nn::Activation::sigmoid, 0.0}},
        2);
    art.best_generator.layers[1].weights.setZero();
    art.best_generator.layers[1].biases.setZero();  // sigmoid(0) = 0.5, rounds to 0

    const auto malware_rows = ds.rows_with_label(1);
    int evasions = 0;
    int natural = 0;
    for (int row : malware_rows) {
        const data::BitVec x = ds.X.row(row);
        attacks::AttackResult r = malgan_generate(art, bb, x, 77 + static_cast<std::uint64_t>(row));
        CHECK(r.x_adv == x);
        CHECK(r.n_changed == 0);
        evasions += r.evaded;
        natural += nn::predicted_class(bb, data::to_real(x)) == 0;
    }
    CHECK(evasions == natural);  // identity generator evasion equals natural FNR
}

TEST_CASE("train_malgan bookkeeping: series length, best epoch, OR feasibility, determinism") {
    data::Dataset ds = small_dataset(11);
    MalganConfig cfg = small_cfg(13);
    nn::Network bb = train_blackbox(ds, cfg);

    const data::BitMatrix malware = ds.rows_matrix(ds.rows_with_label(1));
    const data::BitMatrix benign = ds.rows_matrix(ds.rows_with_label(0));
    MalganArtifacts art = train_malgan(malware, benign, bb, cfg);

    REQUIRE(static_cast<int>(art.per_epoch_evasion.size()) == cfg.epochs);
    const double max_seen = *std::max_element(art.per_epoch_evasion.begin(),
                                              art.per_epoch_evasion.end());
    CHECK(art.best_evasion == max_seen);
    CHECK(art.per_epoch_evasion[static_cast<std::size_t>(art.best_epoch)] == art.best_evasion);
    for (int e = 0; e < art.best_epoch; ++e)  // first occurrence wins ties
        CHECK(art.per_epoch_evasion[static_cast<std::size_t>(e)] < art.best_evasion);
    CHECK(art.blackbox_val_fnr >= 0.0);
    CHECK(art.blackbox_val_fnr <= 1.0);

    // generation: add-only by construction, deterministic per (x, seed)
    for (int row = 0; row < malware.n; row += 7) {
        const data::BitVec x = malware.row(row);
        attacks::AttackResult a = malgan_generate(art, bb, x, 5);
        attacks::AttackResult b = malgan_generate(art, bb, x, 5);
        CHECK(a == b);
        CHECK(data::covers(a.x_adv, x));
        CHECK(a.n_changed == data::hamming_distance(x, a.x_adv));
        attacks::AttackResult c = malgan_generate(art, bb, x, 6);
        CHECK(data::covers(c.x_adv, x));
    }

    data::BitVec wrong_size(4, 0);
    CHECK_THROWS_AS(malgan_generate(art, bb, wrong_size, 1), std::invalid_argument);
    CHECK_THROWS_AS(train_malgan(data::BitMatrix::zeros(0, 16), benign, bb, cfg),
                    std::invalid_argument);
}

TEST_CASE("constant-benign black box records evasion 1.0 at every epoch") {
    data::Dataset ds = small_dataset(15, 60, 12);
    nn::Network bb = constant_benign_blackbox(12);
    MalganConfig cfg = small_cfg(17);
    cfg.epochs = 4;

    MalganArtifacts art = train_malgan(ds.rows_matrix(ds.rows_with_label(1)),
                                       ds.rows_matrix(ds.rows_with_label(0)), bb, cfg);
    for (double evasion : art.per_epoch_evasion) CHECK(evasion == 1.0);
    CHECK(art.best_evasion == 1.0);
    CHECK(art.best_epoch == 0);
    CHECK(art.blackbox_val_fnr == 1.0);
    CHECK(art.best_evasion >= art.blackbox_val_fnr);
}

TEST_CASE("artifacts round-trip through disk") {
    namespace fs = std::filesystem;
    data::Dataset ds = small_dataset(19, 60, 10);
    MalganConfig cfg = small_cfg(21);
    cfg.epochs = 2;
    cfg.blackbox_epochs = 10;
    nn::Network bb = train_blackbox(ds, cfg);
    MalganArtifacts art = train_malgan(ds.rows_matrix(ds.rows_with_label(1)),
                                       ds.rows_matrix(ds.rows_with_label(0)), bb, cfg);

    save_artifacts(art, "malgan_io_test");
    MalganArtifacts back = load_artifacts("malgan_io_test");
    CHECK(nn::weights_hash(back.best_generator) == nn::weights_hash(art.best_generator));
    CHECK(nn::weights_hash(back.discriminator) == nn::weights_hash(art.discriminator));
    CHECK(nn::weights_hash(back.blackbox) == nn::weights_hash(art.blackbox));
    CHECK(back.best_epoch == art.best_epoch);
    CHECK(back.best_evasion == art.best_evasion);
    CHECK(back.per_epoch_evasion == art.per_epoch_evasion);
    CHECK(back.blackbox_val_fnr == art.blackbox_val_fnr);

    const data::BitVec x = ds.X.row(ds.rows_with_label(1)[0]);
    CHECK(malgan_generate(back, bb, x, 9) == malgan_generate(art, bb, x, 9));
    fs::remove_all("malgan_io_test");

    CHECK_THROWS_AS(load_artifacts("no_such_malgan_dir"), DataError);
}
