#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "malbench/attacks.hpp"
#include "malbench/data.hpp"
#include "malbench/errors.hpp"
#include "malbench/nn.hpp"
#include "malbench/rng.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace malbench;
using namespace malbench::attacks;

namespace {

nn::Network random_net(int d, const std::vector<int>& hidden, std::uint64_t seed) {
    nn::Network net = nn::init_network(nn::classifier_arch(d, hidden), seed);
    auto rng = make_rng(derive_seed(seed, "test.bias"));
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (auto& layer : net.layers)
        for (int j = 0; j < layer.biases.size(); ++j) layer.biases[j] = u(rng);
    return net;
}

data::BitVec random_bits(int d, std::uint64_t seed, double p_on = 0.4) {
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    data::BitVec bits(static_cast<std::size_t>(d), 0);
    for (auto& b : bits) b = u(rng) < p_on ? 1 : 0;
    return bits;
}

int classify(const nn::Model& m, const data::BitVec& bits) {
    return nn::predicted_class(m, data::to_real(bits));
}

// Toy victim trained on a small planted-signal problem; most malware rows are
// classified malware, so attacks have something to do.
struct Toy {
    nn::Network net;
    data::Dataset malware;  // malware rows only
};

Toy make_toy(std::uint64_t seed = 5) {
    data::SynthSpec spec;
    spec.n_benign = 120;
    spec.n_malware = 120;
    spec.d = 12;
    spec.n_malware_markers = 3;
    spec.n_benign_markers = 3;
    spec.marker_on_prob = 0.9;
    spec.background_on_prob = 0.1;
    spec.seed = seed;
    data::Dataset ds = data::generate_synthetic(spec);

    nn::Network net = nn::init_network(nn::classifier_arch(12, {16, 8}), seed);
    nn::TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 16;
    cfg.seed = seed;
    net = nn::train(net, ds.X.to_real(), ds.y, cfg);

    Toy toy;
    toy.net = std::move(net);
    Toy& ref = toy;
    ref.malware.X = ds.rows_matrix(ds.rows_with_label(1));
    ref.malware.y.assign(static_cast<std::size_t>(ref.malware.X.n), 1);
    return toy;
}

// Exhaustive search over the feasible set (supersets of x when add_only,
// otherwise the entire hypercube). Only usable for d <= ~12.
struct BruteResult {
    bool any_evading = false;
    int min_l0 = -1;
};

BruteResult brute_force_min_l0(const nn::Model& model, const data::BitVec& x, bool add_only) {
    BruteResult out;
    const int d = static_cast<int>(x.size());
    std::vector<int> free_slots;
    if (add_only) {
        for (int j = 0; j < d; ++j)
            if (!x[static_cast<std::size_t>(j)]) free_slots.push_back(j);
    } else {
        for (int j = 0; j < d; ++j) free_slots.push_back(j);
    }
    const std::size_t combos = std::size_t{1} << free_slots.size();
    for (std::size_t mask = 0; mask < combos; ++mask) {
        data::BitVec candidate = x;
        for (std::size_t b = 0; b < free_slots.size(); ++b) {
            const int j = free_slots[b];
            const bool bit = (mask >> b) & 1;
            candidate[static_cast<std::size_t>(j)] = add_only ? (x[static_cast<std::size_t>(j)] | bit)
                                                              : static_cast<std::uint8_t>(bit);
        }
        if (classify(model, candidate) == 0) {
            const int l0 = data::hamming_distance(x, candidate);
            if (!out.any_evading || l0 < out.min_l0) out.min_l0 = l0;
            out.any_evading = true;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("attack config: derived add-only flags, defaults, validation") {
    CHECK(is_add_only(AttackKind::jsma));
    CHECK(is_add_only(AttackKind::inc_neg));
    CHECK(is_add_only(AttackKind::random_inc_neg));
    CHECK(is_add_only(AttackKind::dfgsm_k));
    CHECK(is_add_only(AttackKind::rfgsm_k));
    CHECK(is_add_only(AttackKind::bga_k));
    CHECK(is_add_only(AttackKind::bca_k));
    CHECK(is_add_only(AttackKind::malgan));
    CHECK_FALSE(is_add_only(AttackKind::dec_pos));
    CHECK_FALSE(is_add_only(AttackKind::dec_pos_inc_neg));
    CHECK_FALSE(is_add_only(AttackKind::random_dec_pos));
    CHECK_FALSE(is_add_only(AttackKind::random_dec_pos_inc_neg));

    CHECK(AttackConfig::defaults(AttackKind::jsma).budget == 25);
    CHECK(AttackConfig::defaults(AttackKind::dfgsm_k).budget == 50);
    CHECK(AttackConfig::defaults(AttackKind::bga_k).budget == 25);

    AttackConfig bad = AttackConfig::defaults(AttackKind::jsma);
    bad.budget = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    AttackConfig bad_step = AttackConfig::defaults(AttackKind::dfgsm_k);
    bad_step.step_size = 0.0;
    CHECK_THROWS_AS(bad_step.validate(), std::invalid_argument);

    CHECK(kind_from_string("random_dec_pos_inc_neg") == AttackKind::random_dec_pos_inc_neg);
    CHECK_THROWS_AS(kind_from_string("nope"), std::invalid_argument);
}

TEST_CASE("already-benign inputs return immediately with zero changes") {
    Toy toy = make_toy();
    data::BitVec benign_like(12, 0);
    benign_like[3] = benign_like[4] = benign_like[5] = 1;  // benign markers
    REQUIRE(classify(toy.net, benign_like) == 0);
    for (AttackKind kind : kAllAttackKinds) {
        if (kind == AttackKind::malgan) continue;
        AttackResult r = single_attack(toy.net, benign_like, AttackConfig::defaults(kind, 1));
        CHECK(r.x_adv == benign_like);
        CHECK(r.n_changed == 0);
        CHECK(r.evaded);
        CHECK(r.iterations_used == 0);
    }
}

TEST_CASE("jsma: budget bounds the number of flips") {
    Toy toy = make_toy();
    for (int row = 0; row < 10; ++row) {
        data::BitVec x = toy.malware.X.row(row);
        AttackConfig cfg = AttackConfig::defaults(AttackKind::jsma, 3);
        cfg.budget = 1;
        AttackResult r = jsma_attack(toy.net, x, cfg);
        CHECK(r.n_changed <= 1);
        cfg.budget = 4;
        AttackResult r4 = jsma_attack(toy.net, x, cfg);
        CHECK(r4.n_changed <= 4);
        CHECK(data::covers(r4.x_adv, x));
    }
}

TEST_CASE("jsma and deterministic inc_neg produce identical results on 100 random cases") {
    for (int trial = 0; trial < 100; ++trial) {
        const std::uint64_t seed = 1000 + static_cast<std::uint64_t>(trial);
        nn::Network net = random_net(10, {7}, seed);
        data::BitVec x = random_bits(10, derive_seed(seed, "bits"));
        AttackConfig cfg = AttackConfig::defaults(AttackKind::jsma, seed);
        AttackResult a = jsma_attack(net, x, cfg);
        AttackResult b = feature_flip_attack(net, x, FlipMode::inc_neg, false, cfg);
        CHECK(a == b);
    }
}

TEST_CASE("feature flips: constant network leaves inputs untouched") {
    nn::Network zero = nn::init_network(nn::classifier_arch(8, {4}), 1);
    for (auto& l : zero.layers) l.weights.setZero();
    // [0.5, 0.5] output: everything is classified benign, so the natural
    // early-exit fires; force a malware-looking model instead by biasing.
    zero.layers.back().biases[1] = 1.0;  // always malware, zero jacobian
    data::BitVec x = random_bits(8, 77);
    for (AttackKind kind : {AttackKind::dec_pos, AttackKind::inc_neg, AttackKind::dec_pos_inc_neg,
                            AttackKind::jsma, AttackKind::bca_k}) {
        AttackResult r = single_attack(zero, x, AttackConfig::defaults(kind, 2));
        CHECK(r.x_adv == x);
        CHECK_FALSE(r.evaded);
        CHECK(r.n_changed == 0);
    }
}

TEST_CASE("dec_pos on an all-zero vector has no removable features") {
    Toy toy = make_toy();
    data::BitVec zeros(12, 0);
    if (classify(toy.net, zeros) == 1) {
        AttackResult r = feature_flip_attack(toy.net, zeros, FlipMode::dec_pos, false,
                                             AttackConfig::defaults(AttackKind::dec_pos, 3));
        CHECK(r.x_adv == zeros);
        CHECK(r.n_changed == 0);
    }
    // randomized variant too, regardless of the zero vector's class
    data::BitVec no_positive = zeros;
    nn::Network biased = toy.net;
    AttackConfig cfg = AttackConfig::defaults(AttackKind::random_dec_pos, 4);
    AttackResult r = feature_flip_attack(biased, no_positive, FlipMode::dec_pos, true, cfg);
    CHECK(data::covers(no_positive, r.x_adv));  // nothing was added
}

TEST_CASE("feature flips: sides only move in their own direction") {
    Toy toy = make_toy();
    for (int row = 0; row < 20; ++row) {
        data::BitVec x = toy.malware.X.row(row);
        AttackResult dec = feature_flip_attack(toy.net, x, FlipMode::dec_pos, false,
                                               AttackConfig::defaults(AttackKind::dec_pos, 5));
        CHECK(data::covers(x, dec.x_adv));  // bits only move 1 -> 0
        AttackResult inc = feature_flip_attack(toy.net, x, FlipMode::inc_neg, false,
                                               AttackConfig::defaults(AttackKind::inc_neg, 5));
        CHECK(data::covers(inc.x_adv, x));  // bits only move 0 -> 1
        AttackResult both = feature_flip_attack(toy.net, x, FlipMode::both, false,
                                                AttackConfig::defaults(AttackKind::dec_pos_inc_neg, 5));
        CHECK(both.n_changed == data::hamming_distance(x, both.x_adv));
    }
}

TEST_CASE("fgsm: a uniformly ascending linear model saturates every free coordinate") {
    // w_benign - w_malware > 0 everywhere, so dL/dx > 0 along the whole path.
    nn::Network net;
    nn::Layer l;
    l.spec = {6, 2, nn::Activation::softmax, 0.0};
    l.weights.resize(6, 2);
    for (int j = 0; j < 6; ++j) {
        l.weights(j, 0) = 0.5 + 0.1 * j;  // benign column
        l.weights(j, 1) = -0.5;
    }
    l.biases = Vec::Zero(2);
    l.biases[1] = 2.0;  // x = 0 classified malware
    net.layers.push_back(l);

    data::BitVec x(6, 0);
    x[0] = 1;
    REQUIRE(classify(net, x) == 1);
    AttackConfig cfg = AttackConfig::defaults(AttackKind::dfgsm_k, 6);
    cfg.budget = 50;
    cfg.step_size = 0.1;
    AttackResult r = fgsm_k_attack(net, x, Rounding::deterministic, cfg);
    CHECK(r.x_adv == data::BitVec(6, 1));
    CHECK(r.evaded == (classify(net, data::BitVec(6, 1)) == 0));
    CHECK(r.iterations_used == 50);
}

TEST_CASE("fgsm: both rounding variants share the continuous trajectory") {
    Toy toy = make_toy();
    data::BitVec x = toy.malware.X.row(0);
    AttackConfig cfg = AttackConfig::defaults(AttackKind::dfgsm_k, 9);
    cfg.budget = 12;
    std::vector<Vec> traj_a, traj_b;
    Vec end_a = fgsm_k_relaxed_point(toy.net, x, cfg, &traj_a);
    Vec end_b = fgsm_k_relaxed_point(toy.net, x, cfg, &traj_b);
    REQUIRE(traj_a.size() == traj_b.size());
    REQUIRE(traj_a.size() == 13);  // x plus one point per step
    for (std::size_t i = 0; i < traj_a.size(); ++i)
        CHECK((traj_a[i] - traj_b[i]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((end_a - end_b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fgsm rounding: integral relaxed points round identically either way") {
    Vec integral(5);
    integral << 0.0, 1.0, 1.0, 0.0, 1.0;
    auto rng = make_rng(3);
    CHECK(round_deterministic(integral) == round_randomized(integral, rng));
}

TEST_CASE("rfgsm rounding: per-coordinate set rate tracks the fractional value") {
    Vec relaxed(6);
    relaxed << 0.0, 0.1, 0.3, 0.5, 0.9, 1.0;
    auto rng = make_rng(17);
    const int samples = 10000;
    Vec rate = Vec::Zero(6);
    for (int s = 0; s < samples; ++s) {
        data::BitVec bits = round_randomized(relaxed, rng);
        for (int j = 0; j < 6; ++j) rate[j] += bits[static_cast<std::size_t>(j)];
    }
    rate /= samples;
    for (int j = 0; j < 6; ++j) CHECK(std::abs(rate[j] - relaxed[j]) <= 0.02);
}

TEST_CASE("bga: zero gradient is a no-op instead of flipping the whole vector") {
    nn::Network zero = nn::init_network(nn::classifier_arch(8, {4}), 1);
    for (auto& l : zero.layers) l.weights.setZero();
    zero.layers.back().biases[1] = 1.0;  // constant malware verdict, zero gradient
    data::BitVec x = random_bits(8, 21);
    AttackResult r = bga_k_attack(zero, x, AttackConfig::defaults(AttackKind::bga_k, 2));
    CHECK(r.x_adv == x);
    CHECK(r.n_changed == 0);
    CHECK_FALSE(r.evaded);
}

TEST_CASE("bga with m=1 reduces to: set the bit iff the gradient is positive") {
    auto make_1d = [](double w_ben, double w_mal) {
        nn::Network net;
        nn::Layer l;
        l.spec = {1, 2, nn::Activation::softmax, 0.0};
        l.weights.resize(1, 2);
        l.weights << w_ben, w_mal;
        l.biases = Vec::Zero(2);
        l.biases[1] = 1.0;  // x = [0] classified malware
        net.layers.push_back(l);
        return net;
    };
    data::BitVec x{0};

    nn::Network positive = make_1d(1.0, -1.0);  // dL/dx = p_b (w_ben - w_mal) > 0
    REQUIRE(classify(positive, x) == 1);
    AttackResult r_pos = bga_k_attack(positive, x, AttackConfig::defaults(AttackKind::bga_k, 1));
    CHECK(r_pos.x_adv == data::BitVec{1});

    nn::Network negative = make_1d(-1.0, 1.0);
    REQUIRE(classify(negative, x) == 1);
    AttackResult r_neg = bga_k_attack(negative, x, AttackConfig::defaults(AttackKind::bga_k, 1));
    CHECK(r_neg.x_adv == x);
    CHECK(r_neg.n_changed == 0);
}

TEST_CASE("bga: per-iteration bit decisions match a recomputation from the saved gradients") {
    Toy toy = make_toy();
    for (int row = 0; row < 15; ++row) {
        data::BitVec x = toy.malware.X.row(row);
        if (classify(toy.net, x) == 0) continue;
        BgaTrace trace;
        bga_k_attack(toy.net, x, AttackConfig::defaults(AttackKind::bga_k, 7), &trace);
        REQUIRE(trace.iterates.size() == trace.gradients.size() + 1);
        for (std::size_t t = 0; t < trace.gradients.size(); ++t) {
            const data::BitVec& before = trace.iterates[t];
            data::BitVec expect = before;
            for (std::size_t j = 0; j < before.size(); ++j)
                if (before[j] == 0 &&
                    trace.gradients[t][static_cast<Eigen::Index>(j)] >= trace.thresholds[t])
                    expect[j] = 1;
            CHECK(expect == trace.iterates[t + 1]);
            CHECK(trace.thresholds[t] ==
                  doctest::Approx(trace.gradients[t].norm() / std::sqrt(12.0)).epsilon(1e-15));
        }
    }
}

TEST_CASE("bca: n_changed never exceeds the budget") {
    Toy toy = make_toy();
    for (int budget : {1, 2, 5, 25}) {
        AttackConfig cfg = AttackConfig::defaults(AttackKind::bca_k, 4);
        cfg.budget = budget;
        for (int row = 0; row < 10; ++row) {
            AttackResult r = bca_k_attack(toy.net, toy.malware.X.row(row), cfg);
            CHECK(r.n_changed <= budget);
            CHECK(r.iterations_used <= budget);
        }
    }
}

TEST_CASE("bca on a linear softmax model first picks argmax of w_benign - w_malware") {
    nn::Network net;
    nn::Layer l;
    l.spec = {7, 2, nn::Activation::softmax, 0.0};
    l.weights.resize(7, 2);
    auto rng = make_rng(31);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int j = 0; j < 7; ++j) {
        l.weights(j, 0) = u(rng);
        l.weights(j, 1) = u(rng);
    }
    l.biases = Vec::Zero(2);
    l.biases[1] = 3.0;  // classified malware at the start
    net.layers.push_back(l);

    data::BitVec x(7, 0);
    x[2] = 1;  // occupied bit is not a candidate
    REQUIRE(classify(net, x) == 1);

    int expect = -1;
    double best = 0.0;
    for (int j = 0; j < 7; ++j) {
        if (x[static_cast<std::size_t>(j)]) continue;
        const double margin = l.weights(j, 0) - l.weights(j, 1);
        if (margin > 0.0 && (expect < 0 || margin > best)) {
            expect = j;
            best = margin;
        }
    }
    REQUIRE(expect >= 0);

    AttackConfig cfg = AttackConfig::defaults(AttackKind::bca_k, 1);
    cfg.budget = 1;
    AttackResult r = bca_k_attack(net, x, cfg);
    CHECK(r.n_changed == 1);
    CHECK(r.x_adv[static_cast<std::size_t>(expect)] == 1);
}

TEST_CASE("brute-force oracle: evasions are real and never beat the exhaustive minimum") {
    std::mt19937_64 meta(404);
    int checked = 0;
    for (int instance = 0; instance < 12; ++instance) {
        const int d = 9 + static_cast<int>(meta() % 3);  // d in [9, 11]
        nn::Network net = random_net(d, {6}, meta());
        data::BitVec x = random_bits(d, meta());
        for (AttackKind kind : kAllAttackKinds) {
            if (kind == AttackKind::malgan) continue;
            AttackResult r = single_attack(net, x, AttackConfig::defaults(kind, meta()));
            if (!r.evaded) continue;
            ++checked;
            CHECK(classify(net, r.x_adv) == 0);
            if (is_add_only(kind)) CHECK(data::covers(r.x_adv, x));
            BruteResult brute = brute_force_min_l0(net, x, is_add_only(kind));
            REQUIRE(brute.any_evading);
            CHECK(brute.min_l0 <= r.n_changed);
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("run_attack: empty input, permutation equivariance, model immutability") {
    Toy toy = make_toy();
    AttackConfig cfg = AttackConfig::defaults(AttackKind::jsma, 11);

    CHECK(run_attack(toy.net, data::BitMatrix::zeros(0, 12), cfg).empty());

    const std::uint64_t hash_before = nn::weights_hash(toy.net);
    std::vector<AttackResult> results = run_attack(toy.net, toy.malware.X, cfg);
    CHECK(nn::weights_hash(toy.net) == hash_before);
    REQUIRE(results.size() == static_cast<std::size_t>(toy.malware.X.n));

    CHECK_THROWS_AS(run_attack(toy.net, toy.malware.X,
                               AttackConfig::defaults(AttackKind::malgan, 1)),
                    std::invalid_argument);

    // permuting rows permutes per-row results identically only when the seed
    // stream travels with the row; here rows keep their index-derived seeds,
    // so compare each row against a single-row rerun instead
    for (int row : {0, 3, 7}) {
        AttackConfig row_cfg = cfg;
        row_cfg.seed = per_row_seed(cfg.seed, row);
        AttackResult solo = single_attack(toy.net, toy.malware.X.row(row), row_cfg);
        CHECK(solo == results[static_cast<std::size_t>(row)]);
    }
}

TEST_CASE("run_attack with randomized kinds is deterministic across thread counts") {
    Toy toy = make_toy();
    AttackConfig cfg = AttackConfig::defaults(AttackKind::random_dec_pos_inc_neg, 10);
    std::vector<AttackResult> a = run_attack(toy.net, toy.malware.X, cfg, 1);
    std::vector<AttackResult> b = run_attack(toy.net, toy.malware.X, cfg, 4);
    CHECK(a == b);
}

TEST_CASE("greedy attacks: evasion count is non-decreasing in the budget") {
    Toy toy = make_toy();
    for (AttackKind kind : kAllAttackKinds) {
        if (!is_greedy(kind)) continue;
        int previous = -1;
        for (int budget : {1, 2, 4, 8, 12}) {
            AttackConfig cfg = AttackConfig::defaults(kind, 13);
            cfg.budget = budget;
            std::vector<AttackResult> results = run_attack(toy.net, toy.malware.X, cfg);
            int evasions = 0;
            for (const AttackResult& r : results) evasions += r.evaded;
            CHECK(evasions >= previous);
            previous = evasions;
        }
    }
}

TEST_CASE("evasion flags are sound and feasibility holds across all kinds") {
    Toy toy = make_toy();
    for (AttackKind kind : kAllAttackKinds) {
        if (kind == AttackKind::malgan) continue;
        std::vector<AttackResult> results =
            run_attack(toy.net, toy.malware.X, AttackConfig::defaults(kind, 15));
        for (std::size_t i = 0; i < results.size(); ++i) {
            const AttackResult& r = results[i];
            const data::BitVec x = toy.malware.X.row(static_cast<int>(i));
            CHECK(r.n_changed == data::hamming_distance(x, r.x_adv));
            CHECK(r.evaded == (classify(toy.net, r.x_adv) == 0));
            if (is_add_only(kind)) CHECK(data::covers(r.x_adv, x));
        }
    }
}

TEST_CASE("results csv export") {
    std::vector<AttackResult> results = {{{1, 0}, 1, true, 1}, {{0, 0}, 0, false, 25}};
    write_results_csv(results, "attack_results_test.csv");
    std::ifstream in("attack_results_test.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "row_id,evaded,n_changed,iterations_used");
    std::getline(in, line);
    CHECK(line == "0,1,1,1");
    std::getline(in, line);
    CHECK(line == "1,0,0,25");
    in.close();
    std::remove("attack_results_test.csv");
}
