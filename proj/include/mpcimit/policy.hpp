#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpcimit/sets.hpp"
#include "mpcimit/types.hpp"

namespace mpcimit {

// (state, expert input) pairs.
struct Dataset {
    std::vector<Vector> states;
    std::vector<Vector> inputs;

    void add(Vector x, Vector u);
    int size() const { return static_cast<int>(states.size()); }
    bool empty() const { return states.empty(); }
};

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 500;
    int batch_size = 0;  // 0 = full batch
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t rng_seed = 0;
    bool squared_loss = false;  // ablation flag; the ERM loss is the plain norm
    std::vector<int> hidden = {50, 50, 50};
};

// Fully connected ReLU network from states to inputs, with the output
// projected onto U at inference time. Evaluation is pure; training returns a
// new policy.
class MlpPolicy {
  public:
    MlpPolicy() = default;

    // Uniform fan-in initialization, deterministic in the seed.
    static MlpPolicy random(int dx, const std::vector<int>& hidden, int du, Polytope U,
                            std::uint64_t seed);
    static MlpPolicy zeros(int dx, const std::vector<int>& hidden, int du, Polytope U);

    Vector forward(const Vector& x) const;  // projected onto U
    Vector raw(const Vector& x) const;      // pre-projection output

    int dx() const { return widths_.front(); }
    int du() const { return widths_.back(); }
    const std::vector<int>& widths() const { return widths_; }
    const std::vector<Matrix>& layer_weights() const { return weights_; }
    const std::vector<Vector>& layer_biases() const { return biases_; }
    const Polytope& input_set() const { return U_; }
    std::uint64_t seed() const { return seed_; }
    double final_loss() const { return final_loss_; }

    void save(const std::string& path) const;
    static MlpPolicy load(const std::string& path, Polytope U);

  private:
    friend MlpPolicy train_erm(const Dataset&, const TrainConfig&, MlpPolicy);
    friend double grad_check(const MlpPolicy&, const Dataset&, int, double, std::uint64_t);

    std::vector<int> widths_;       // [dx, hidden..., du]
    std::vector<Matrix> weights_;   // weights_[l]: widths_[l+1] x widths_[l]
    std::vector<Vector> biases_;
    Polytope U_;
    std::uint64_t seed_ = 0;
    double final_loss_ = 0.0;
};

// Minimizes the mean Euclidean-norm loss on the pre-projection output with
// Adam for exactly cfg.epochs passes. Deterministic in (dataset, cfg, init).
MlpPolicy train_erm(const Dataset& dataset, const TrainConfig& cfg, MlpPolicy init);

// Max relative error between the analytic gradient and central finite
// differences over n_coords random weight coordinates.
double grad_check(const MlpPolicy& policy, const Dataset& dataset, int n_coords = 20,
                  double h = 1e-5, std::uint64_t seed = 7);

// Mean ERM loss of the policy on the dataset (pre-projection residuals).
double erm_loss(const MlpPolicy& policy, const Dataset& dataset, bool squared = false);

// Euclidean norm of the full-batch loss gradient.
double erm_gradient_norm(const MlpPolicy& policy, const Dataset& dataset, bool squared = false);

// True when the loss at this point is away from ReLU kinks and from the norm
// non-smoothness (finite differences are trustworthy there).
bool smooth_at(const MlpPolicy& policy, const Dataset& dataset, double margin = 1e-6);

}  // namespace mpcimit
