#pragma once

#include "malbench/data.hpp"
#include "malbench/nn.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace malbench::attacks {

enum class AttackKind {
    jsma,
    dec_pos,
    inc_neg,
    dec_pos_inc_neg,
    random_dec_pos,
    random_inc_neg,
    random_dec_pos_inc_neg,
    dfgsm_k,
    rfgsm_k,
    bga_k,
    bca_k,
    malgan,
};

inline constexpr std::array<AttackKind, 12> kAllAttackKinds = {
    AttackKind::jsma,          AttackKind::dec_pos,
    AttackKind::inc_neg,       AttackKind::dec_pos_inc_neg,
    AttackKind::random_dec_pos, AttackKind::random_inc_neg,
    AttackKind::random_dec_pos_inc_neg, AttackKind::dfgsm_k,
    AttackKind::rfgsm_k,       AttackKind::bga_k,
    AttackKind::bca_k,         AttackKind::malgan,
};

const char* to_string(AttackKind kind);
AttackKind kind_from_string(std::string_view name);

/// Kinds whose outputs may only set bits (the functionality-preserving
/// feasible set). Kinds containing dec_pos may also clear bits.
bool is_add_only(AttackKind kind);
bool is_fgsm(AttackKind kind);
/// Greedy one-flip-per-iteration kinds that stop on evasion; their evasion
/// count is monotone in the budget.
bool is_greedy(AttackKind kind);

/// 25 for the saliency/flip family and bit-ascent kinds, 50 for the FGSM pair.
int default_budget(AttackKind kind);
inline constexpr double kDefaultStepSize = 0.05;

struct AttackConfig {
    AttackKind kind = AttackKind::jsma;
    int budget = 25;          // max perturbations, or k for iterative kinds
    double step_size = 0.05;  // FGSM alpha
    std::uint64_t seed = 0;

    static AttackConfig defaults(AttackKind kind, std::uint64_t seed = 0);
    void validate() const;  // budget >= 1; step_size > 0 for FGSM kinds
};

struct AttackResult {
    data::BitVec x_adv;
    int n_changed = 0;        // Hamming distance to the original
    bool evaded = false;      // classified benign by the attacked model
    int iterations_used = 0;

    bool operator==(const AttackResult&) const = default;
};

// Individual attacks. All run regardless of the sample's current label; an
// input already classified benign returns immediately with zero changes and
// evaded = true, so natural evasions are contained in evasion rates.

AttackResult jsma_attack(const nn::Model& model, const data::BitVec& x, const AttackConfig& cfg);

enum class FlipMode { dec_pos, inc_neg, both };
AttackResult feature_flip_attack(const nn::Model& model, const data::BitVec& x, FlipMode mode,
                                 bool randomized, const AttackConfig& cfg);

enum class Rounding { deterministic, randomized };
AttackResult fgsm_k_attack(const nn::Model& model, const data::BitVec& x, Rounding rounding,
                           const AttackConfig& cfg);
/// The continuous relaxation after k ascent steps (original 1-bits stay
/// frozen at 1). Exposed so tests can compare the two rounding variants'
/// trajectories.
Vec fgsm_k_relaxed_point(const nn::Model& model, const data::BitVec& x, const AttackConfig& cfg,
                         std::vector<Vec>* trajectory = nullptr);
data::BitVec round_deterministic(const Vec& relaxed);  // thresholds at 0.5
data::BitVec round_randomized(const Vec& relaxed, std::mt19937_64& rng);

struct BgaTrace {
    std::vector<Vec> gradients;       // gradient at each visited iterate
    std::vector<double> thresholds;   // ||g||_2 / sqrt(m) per iteration
    std::vector<data::BitVec> iterates;
};
AttackResult bga_k_attack(const nn::Model& model, const data::BitVec& x, const AttackConfig& cfg,
                          BgaTrace* trace = nullptr);

AttackResult bca_k_attack(const nn::Model& model, const data::BitVec& x, const AttackConfig& cfg);

/// Dispatches every kind except malgan (which needs trained artifacts).
AttackResult single_attack(const nn::Model& model, const data::BitVec& x, const AttackConfig& cfg);

/// Per-row seed stream: results are independent of evaluation order.
std::uint64_t per_row_seed(std::uint64_t base, int row);

/// Applies the configured attack to each row of a malware matrix. Rows may be
/// evaluated concurrently; per-row seeds keep the output deterministic.
std::vector<AttackResult> run_attack(const nn::Model& model, const data::BitMatrix& malware,
                                     const AttackConfig& cfg, int n_threads = 0);

/// Results export: row_id, evaded, n_changed, iterations_used.
void write_results_csv(const std::vector<AttackResult>& results, const std::string& path);

/// Batched k-step ascent on the relaxation of every row (used by the
/// adversarial-training inner step). Returns the relaxed batch.
Mat fgsm_k_relax_batch(const nn::Network& net, const Mat& X, int budget, double step_size);

}  // namespace malbench::attacks
