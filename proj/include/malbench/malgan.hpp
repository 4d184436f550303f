#pragma once

#include "malbench/attacks.hpp"
#include "malbench/data.hpp"
#include "malbench/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace malbench::malgan {

struct MalganConfig {
    int noise_dim = 10;
    int generator_hidden = 256;
    int discriminator_hidden = 256;
    int epochs = 100;           // generator/discriminator epochs
    int blackbox_epochs = 200;
    int batch_size = 64;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;

    void validate() const;
};

struct MalganArtifacts {
    nn::Network best_generator;   // input d+noise -> hidden relu -> d sigmoid
    nn::Network discriminator;    // d -> hidden relu -> 1 sigmoid (final state)
    nn::Network blackbox;         // d -> 256 relu(0.2) -> 128 relu(0.2) -> 2 softmax
    int best_epoch = 0;           // first index attaining the max evasion
    double best_evasion = 0.0;
    std::vector<double> per_epoch_evasion;
    // Natural FNR of the black box on the held-out malware validation pool;
    // the identity generator always achieves at least this evasion.
    double blackbox_val_fnr = 0.0;
    int noise_dim = 10;
};

/// Trains the black-box detector (Adam, dropout-0.2 hidden stack).
nn::Network train_blackbox(const data::Dataset& data, const MalganConfig& cfg);

/// Adversarial generator training. Each epoch: binarized outputs feed the
/// discriminator and the black-box evaluation, continuous outputs carry the
/// generator gradient. A quarter of the malware pool is held out as the
/// per-epoch evaluation pool; the snapshot with maximal black-box evasion
/// wins.
MalganArtifacts train_malgan(const data::BitMatrix& malware, const data::BitMatrix& benign,
                             const nn::Network& blackbox, const MalganConfig& cfg);

/// Samples uniform noise from the seed, rounds the generator output and ORs
/// it with x. Evasion is measured against the supplied victim, not the
/// black box.
attacks::AttackResult malgan_generate(const MalganArtifacts& artifacts, const nn::Model& victim,
                                      const data::BitVec& x, std::uint64_t seed);

void save_artifacts(const MalganArtifacts& artifacts, const std::string& dir);
MalganArtifacts load_artifacts(const std::string& dir);

}  // namespace malbench::malgan
