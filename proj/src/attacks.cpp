#include "malbench/attacks.hpp"

#include "malbench/errors.hpp"
#include "malbench/parallel.hpp"
#include "malbench/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace malbench::attacks {

namespace {

constexpr int kBenign = 0;
constexpr int kMalware = 1;

int classify(const nn::Model& model, const data::BitVec& bits) {
    return nn::predicted_class(model, data::to_real(bits));
}

AttackResult natural_result(const data::BitVec& x) {
    return {x, 0, true, 0};
}

AttackResult finish(const data::BitVec& original, data::BitVec x_adv, bool evaded, int iterations) {
    const int changed = data::hamming_distance(original, x_adv);
    return {std::move(x_adv), changed, evaded, iterations};
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

const char* to_string(AttackKind kind) {
    switch (kind) {
        case AttackKind::jsma: return "jsma";
        case AttackKind::dec_pos: return "dec_pos";
        case AttackKind::inc_neg: return "inc_neg";
        case AttackKind::dec_pos_inc_neg: return "dec_pos_inc_neg";
        case AttackKind::random_dec_pos: return "random_dec_pos";
        case AttackKind::random_inc_neg: return "random_inc_neg";
        case AttackKind::random_dec_pos_inc_neg: return "random_dec_pos_inc_neg";
        case AttackKind::dfgsm_k: return "dfgsm_k";
        case AttackKind::rfgsm_k: return "rfgsm_k";
        case AttackKind::bga_k: return "bga_k";
        case AttackKind::bca_k: return "bca_k";
        case AttackKind::malgan: return "malgan";
    }
    return "?";
}

AttackKind kind_from_string(std::string_view name) {
    for (AttackKind kind : kAllAttackKinds)
        if (name == to_string(kind)) return kind;
    throw std::invalid_argument("unknown attack kind: " + std::string(name));
}

bool is_add_only(AttackKind kind) {
    switch (kind) {
        case AttackKind::dec_pos:
        case AttackKind::dec_pos_inc_neg:
        case AttackKind::random_dec_pos:
        case AttackKind::random_dec_pos_inc_neg:
            return false;
        default:
            return true;
    }
}

bool is_fgsm(AttackKind kind) {
    return kind == AttackKind::dfgsm_k || kind == AttackKind::rfgsm_k;
}

bool is_greedy(AttackKind kind) {
    switch (kind) {
        case AttackKind::jsma:
        case AttackKind::dec_pos:
        case AttackKind::inc_neg:
        case AttackKind::dec_pos_inc_neg:
        case AttackKind::random_dec_pos:
        case AttackKind::random_inc_neg:
        case AttackKind::random_dec_pos_inc_neg:
        case AttackKind::bca_k:
            return true;
        default:
            return false;
    }
}

int default_budget(AttackKind kind) { return is_fgsm(kind) ? 50 : 25; }

AttackConfig AttackConfig::defaults(AttackKind kind, std::uint64_t seed) {
    AttackConfig cfg;
    cfg.kind = kind;
    cfg.budget = default_budget(kind);
    cfg.step_size = kDefaultStepSize;
    cfg.seed = seed;
    return cfg;
}

void AttackConfig::validate() const {
    if (budget < 1) throw std::invalid_argument("attack budget must be >= 1");
    if (is_fgsm(kind) && !(step_size > 0.0))
        throw std::invalid_argument("step_size must be > 0 for FGSM kinds");
}

// ---------------------------------------------------------------------------
// JSMA: add the zero-bit with the largest positive benign-class derivative.
// ---------------------------------------------------------------------------

AttackResult jsma_attack(const nn::Model& model, const data::BitVec& x, const AttackConfig& cfg) {
    cfg.validate();
    if (classify(model, x) == kBenign) return natural_result(x);

    data::BitVec cur = x;
    bool evaded = false;
    int iterations = 0;
    for (int it = 1; it <= cfg.budget; ++it) {
        const Mat jac = model.input_jacobian(data::to_real(cur));
        int best = -1;
        double best_grad = 0.0;
        for (std::size_t j = 0; j < cur.size(); ++j) {
            if (cur[j] != 0) continue;
            const double g = jac(kBenign, static_cast<Eigen::Index>(j));
            if (g > 0.0 && (best < 0 || g > best_grad)) {
                best = static_cast<int>(j);
                best_grad = g;
            }
        }
        if (best < 0) break;  // no strictly positive candidate
        cur[static_cast<std::size_t>(best)] = 1;
        iterations = it;
        if (classify(model, cur) == kBenign) {
            evaded = true;
            break;
        }
    }
    return finish(x, std::move(cur), evaded, iterations);
}

// ---------------------------------------------------------------------------
// Feature flipping: disable positive (malware-indicating) features, enable
// negative (benign-indicating) ones, or alternate between the two sides.
// ---------------------------------------------------------------------------

namespace {

std::vector<int> dec_pos_candidates(const data::BitVec& bits, const Mat& jac) {
    std::vector<int> out;
    for (std::size_t j = 0; j < bits.size(); ++j)
        if (bits[j] == 1 && jac(kMalware, static_cast<Eigen::Index>(j)) > 0.0)
            out.push_back(static_cast<int>(j));
    return out;
}

std::vector<int> inc_neg_candidates(const data::BitVec& bits, const Mat& jac) {
    std::vector<int> out;
    for (std::size_t j = 0; j < bits.size(); ++j)
        if (bits[j] == 0 && jac(kBenign, static_cast<Eigen::Index>(j)) > 0.0)
            out.push_back(static_cast<int>(j));
    return out;
}

int pick_candidate(const std::vector<int>& candidates, const Mat& jac, int jac_row,
                   bool randomized, std::mt19937_64& rng) {
    if (randomized) {
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        return candidates[pick(rng)];
    }
    int best = candidates.front();
    double best_grad = jac(jac_row, best);
    for (int j : candidates) {
        const double g = jac(jac_row, j);
        if (g > best_grad) {  // ties keep the lowest index
            best = j;
            best_grad = g;
        }
    }
    return best;
}

}  // namespace

AttackResult feature_flip_attack(const nn::Model& model, const data::BitVec& x, FlipMode mode,
                                 bool randomized, const AttackConfig& cfg) {
    cfg.validate();
    if (classify(model, x) == kBenign) return natural_result(x);

    auto rng = make_rng(derive_seed(cfg.seed, "attack.flip"));
    data::BitVec cur = x;
    bool evaded = false;
    int iterations = 0;

    for (int it = 1; it <= cfg.budget; ++it) {
        const Mat jac = model.input_jacobian(data::to_real(cur));
        // The "both" schedule alternates starting on the dec_pos side; a side
        // with no candidates is skipped in favour of the other.
        bool dec_side = mode == FlipMode::dec_pos || (mode == FlipMode::both && it % 2 == 1);
        std::vector<int> cands =
            dec_side ? dec_pos_candidates(cur, jac) : inc_neg_candidates(cur, jac);
        if (cands.empty() && mode == FlipMode::both) {
            dec_side = !dec_side;
            cands = dec_side ? dec_pos_candidates(cur, jac) : inc_neg_candidates(cur, jac);
        }
        if (cands.empty()) break;

        const int j = pick_candidate(cands, jac, dec_side ? kMalware : kBenign, randomized, rng);
        cur[static_cast<std::size_t>(j)] = dec_side ? 0 : 1;
        iterations = it;
        if (classify(model, cur) == kBenign) {
            evaded = true;
            break;
        }
    }
    return finish(x, std::move(cur), evaded, iterations);
}

// ---------------------------------------------------------------------------
// FGSM^k on the continuous relaxation, finished by rounding.
// ---------------------------------------------------------------------------

Vec fgsm_k_relaxed_point(const nn::Model& model, const data::BitVec& x, const AttackConfig& cfg,
                         std::vector<Vec>* trajectory) {
    cfg.validate();
    Vec relaxed = data::to_real(x);
    if (trajectory) trajectory->push_back(relaxed);
    for (int step = 0; step < cfg.budget; ++step) {
        const Vec grad = model.input_loss_gradient(relaxed, kMalware);
        for (std::size_t j = 0; j < x.size(); ++j) {
            if (x[j] == 1) continue;  // original bits stay frozen at 1
            const auto idx = static_cast<Eigen::Index>(j);
            relaxed[idx] = std::clamp(relaxed[idx] + cfg.step_size * sign(grad[idx]), 0.0, 1.0);
        }
        if (trajectory) trajectory->push_back(relaxed);
    }
    return relaxed;
}

data::BitVec round_deterministic(const Vec& relaxed) {
    data::BitVec bits(static_cast<std::size_t>(relaxed.size()));
    for (Eigen::Index j = 0; j < relaxed.size(); ++j)
        bits[static_cast<std::size_t>(j)] = relaxed[j] >= 0.5 ? 1 : 0;
    return bits;
}

data::BitVec round_randomized(const Vec& relaxed, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    data::BitVec bits(static_cast<std::size_t>(relaxed.size()));
    for (Eigen::Index j = 0; j < relaxed.size(); ++j)
        bits[static_cast<std::size_t>(j)] = u(rng) < relaxed[j] ? 1 : 0;
    return bits;
}

AttackResult fgsm_k_attack(const nn::Model& model, const data::BitVec& x, Rounding rounding,
                           const AttackConfig& cfg) {
    cfg.validate();
    if (classify(model, x) == kBenign) return natural_result(x);

    const Vec relaxed = fgsm_k_relaxed_point(model, x, cfg);
    data::BitVec rounded;
    if (rounding == Rounding::deterministic) {
        rounded = round_deterministic(relaxed);
    } else {
        auto rng = make_rng(derive_seed(cfg.seed, "attack.round"));
        rounded = round_randomized(relaxed, rng);
    }
    for (std::size_t j = 0; j < rounded.size(); ++j) rounded[j] |= x[j];  // x OR rounded

    const bool evaded = classify(model, rounded) == kBenign;
    return finish(x, std::move(rounded), evaded, cfg.budget);
}

Mat fgsm_k_relax_batch(const nn::Network& net, const Mat& X, int budget, double step_size) {
    // step_size == 0 is allowed here: the adversarial-training inner step with a
    // null ascent degenerates to the identity.
    if (budget < 1) throw std::invalid_argument("attack budget must be >= 1");
    if (step_size < 0.0) throw std::invalid_argument("step_size must be >= 0");
    Mat relaxed = X;
    for (int step = 0; step < budget; ++step) {
        const Mat grad = nn::input_loss_gradient_batch(net, relaxed, kMalware);
        for (Eigen::Index i = 0; i < relaxed.rows(); ++i)
            for (Eigen::Index j = 0; j < relaxed.cols(); ++j) {
                if (X(i, j) == 1.0) continue;
                relaxed(i, j) = std::clamp(relaxed(i, j) + step_size * sign(grad(i, j)), 0.0, 1.0);
            }
    }
    return relaxed;
}

// ---------------------------------------------------------------------------
// Bit gradient ascent: per step, set every zero bit whose loss derivative
// reaches ||grad||_2 / sqrt(m); keep the best-loss iterate seen.
// ---------------------------------------------------------------------------

AttackResult bga_k_attack(const nn::Model& model, const data::BitVec& x, const AttackConfig& cfg,
                          BgaTrace* trace) {
    cfg.validate();
    if (classify(model, x) == kBenign) return natural_result(x);

    const double sqrt_m = std::sqrt(static_cast<double>(x.size()));
    data::BitVec cur = x;
    data::BitVec best = x;
    double best_loss = nn::model_loss(model, data::to_real(x), kMalware);
    int iterations = 0;
    if (trace) trace->iterates.push_back(cur);

    for (int it = 1; it <= cfg.budget; ++it) {
        const Vec grad = model.input_loss_gradient(data::to_real(cur), kMalware);
        const double norm = grad.norm();
        if (norm == 0.0) break;  // flat region: defined as a no-op, not a full flip
        const double threshold = norm / sqrt_m;

        data::BitVec next = cur;
        for (std::size_t j = 0; j < cur.size(); ++j)
            if (cur[j] == 0 && grad[static_cast<Eigen::Index>(j)] >= threshold) next[j] = 1;
        if (next == cur) break;  // fixed point

        if (trace) {
            trace->gradients.push_back(grad);
            trace->thresholds.push_back(threshold);
            trace->iterates.push_back(next);
        }
        cur = std::move(next);
        iterations = it;
        if (classify(model, cur) == kBenign)
            return finish(x, std::move(cur), true, iterations);  // first evading iterate
        const double loss = nn::model_loss(model, data::to_real(cur), kMalware);
        if (loss > best_loss) {
            best_loss = loss;
            best = cur;
        }
    }
    return finish(x, std::move(best), false, iterations);
}

// ---------------------------------------------------------------------------
// Bit coordinate ascent: one bit per step, the maximal strictly positive
// loss derivative.
// ---------------------------------------------------------------------------

AttackResult bca_k_attack(const nn::Model& model, const data::BitVec& x, const AttackConfig& cfg) {
    cfg.validate();
    if (classify(model, x) == kBenign) return natural_result(x);

    data::BitVec cur = x;
    bool evaded = false;
    int iterations = 0;
    for (int it = 1; it <= cfg.budget; ++it) {
        const Vec grad = model.input_loss_gradient(data::to_real(cur), kMalware);
        int best = -1;
        double best_grad = 0.0;
        for (std::size_t j = 0; j < cur.size(); ++j) {
            if (cur[j] != 0) continue;
            const double g = grad[static_cast<Eigen::Index>(j)];
            if (g > 0.0 && (best < 0 || g > best_grad)) {
                best = static_cast<int>(j);
                best_grad = g;
            }
        }
        if (best < 0) break;
        cur[static_cast<std::size_t>(best)] = 1;
        iterations = it;
        if (classify(model, cur) == kBenign) {
            evaded = true;
            break;
        }
    }
    return finish(x, std::move(cur), evaded, iterations);
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

AttackResult single_attack(const nn::Model& model, const data::BitVec& x, const AttackConfig& cfg) {
    if (static_cast<int>(x.size()) != model.input_dim())
        throw std::invalid_argument("attack input dimension mismatch");
    switch (cfg.kind) {
        case AttackKind::jsma: return jsma_attack(model, x, cfg);
        case AttackKind::dec_pos: return feature_flip_attack(model, x, FlipMode::dec_pos, false, cfg);
        case AttackKind::inc_neg: return feature_flip_attack(model, x, FlipMode::inc_neg, false, cfg);
        case AttackKind::dec_pos_inc_neg:
            return feature_flip_attack(model, x, FlipMode::both, false, cfg);
        case AttackKind::random_dec_pos:
            return feature_flip_attack(model, x, FlipMode::dec_pos, true, cfg);
        case AttackKind::random_inc_neg:
            return feature_flip_attack(model, x, FlipMode::inc_neg, true, cfg);
        case AttackKind::random_dec_pos_inc_neg:
            return feature_flip_attack(model, x, FlipMode::both, true, cfg);
        case AttackKind::dfgsm_k: return fgsm_k_attack(model, x, Rounding::deterministic, cfg);
        case AttackKind::rfgsm_k: return fgsm_k_attack(model, x, Rounding::randomized, cfg);
        case AttackKind::bga_k: return bga_k_attack(model, x, cfg);
        case AttackKind::bca_k: return bca_k_attack(model, x, cfg);
        case AttackKind::malgan:
            throw std::invalid_argument("malgan dispatches to its own module");
    }
    throw std::logic_error("unreachable");
}

std::uint64_t per_row_seed(std::uint64_t base, int row) {
    return derive_seed(base, "attack.row", static_cast<std::uint64_t>(row));
}

std::vector<AttackResult> run_attack(const nn::Model& model, const data::BitMatrix& malware,
                                     const AttackConfig& cfg, int n_threads) {
    cfg.validate();
    if (cfg.kind == AttackKind::malgan)
        throw std::invalid_argument("malgan dispatches to its own module");
    std::vector<AttackResult> results(static_cast<std::size_t>(malware.n));
    parallel_for(malware.n, [&](int row) {
        AttackConfig row_cfg = cfg;
        row_cfg.seed = per_row_seed(cfg.seed, row);
        try {
            results[static_cast<std::size_t>(row)] = single_attack(model, malware.row(row), row_cfg);
        } catch (const std::invalid_argument&) {
            throw;
        } catch (const std::exception& e) {
            throw RunError("attack failed on row " + std::to_string(row) + ": " + e.what());
        }
    }, n_threads);
    return results;
}

void write_results_csv(const std::vector<AttackResult>& results, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write results: " + path);
    out << "row_id,evaded,n_changed,iterations_used\n";
    for (std::size_t i = 0; i < results.size(); ++i)
        out << i << ',' << (results[i].evaded ? 1 : 0) << ',' << results[i].n_changed << ','
            << results[i].iterations_used << '\n';
    if (!out) throw DataError("failed writing results: " + path);
}

}  // namespace malbench::attacks
