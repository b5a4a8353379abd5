#include "mpcimit/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "mpcimit/qp.hpp"
#include "mpcimit/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "policy serialization assumes a little-endian host");

namespace mpcimit {

namespace {

constexpr double kNormSmoothing = 1e-12;  // under the square root of the norm loss

struct Grads {
    std::vector<Matrix> W;
    std::vector<Vector> b;
};

Grads zero_like(const std::vector<Matrix>& W, const std::vector<Vector>& b) {
    Grads g;
    for (const auto& w : W) g.W.push_back(Matrix::Zero(w.rows(), w.cols()));
    for (const auto& v : b) g.b.push_back(Vector::Zero(v.size()));
    return g;
}

}  // namespace

void Dataset::add(Vector x, Vector u) {
    if (!x.allFinite() || !u.allFinite()) throw InvalidInput("Dataset: non-finite pair");
    if (!states.empty() && (x.size() != states[0].size() || u.size() != inputs[0].size()))
        throw InvalidInput("Dataset: inconsistent dimensions");
    states.push_back(std::move(x));
    inputs.push_back(std::move(u));
}

MlpPolicy MlpPolicy::random(int dx, const std::vector<int>& hidden, int du, Polytope U,
                            std::uint64_t seed) {
    if (dx <= 0 || du <= 0) throw InvalidInput("MlpPolicy: bad dimensions");
    if (U.dim() != du) throw InvalidInput("MlpPolicy: input set dimension mismatch");
    MlpPolicy p;
    p.widths_.push_back(dx);
    for (int w : hidden) {
        if (w <= 0) throw InvalidInput("MlpPolicy: bad hidden width");
        p.widths_.push_back(w);
    }
    p.widths_.push_back(du);
    p.U_ = std::move(U);
    p.seed_ = seed;
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < p.widths_.size(); ++l) {
        const int fan_in = p.widths_[l], fan_out = p.widths_[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Matrix W(fan_out, fan_in);
        for (int i = 0; i < fan_out; ++i)
            for (int j = 0; j < fan_in; ++j) W(i, j) = rng.uniform(-bound, bound);
        Vector b(fan_out);
        for (int i = 0; i < fan_out; ++i) b[i] = rng.uniform(-bound, bound);
        p.weights_.push_back(std::move(W));
        p.biases_.push_back(std::move(b));
    }
    return p;
}

MlpPolicy MlpPolicy::zeros(int dx, const std::vector<int>& hidden, int du, Polytope U) {
    MlpPolicy p = random(dx, hidden, du, std::move(U), 0);
    for (auto& w : p.weights_) w.setZero();
    for (auto& b : p.biases_) b.setZero();
    return p;
}

Vector MlpPolicy::raw(const Vector& x) const {
    if (x.size() != dx() || !x.allFinite()) throw InvalidInput("MlpPolicy: bad state");
    Vector a = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        a = weights_[l] * a + biases_[l];
        if (l + 1 < weights_.size()) a = a.cwiseMax(0.0);
    }
    return a;
}

Vector MlpPolicy::forward(const Vector& x) const {
    const Vector y = raw(x);
    if (U_.is_box) return y.cwiseMax(U_.lb).cwiseMin(U_.ub);
    if (contains(U_, y, 1e-12)) return y;
    // general polytope: Euclidean projection via a small QP
    const int d = du();
    QpProblem proj(2.0 * Matrix::Identity(d, d), -2.0 * y, Matrix(0, d), Vector(0), U_.G, U_.h);
    const QpSolution sol = solve_qp(proj);
    if (sol.status != QpStatus::Optimal)
        throw NonConvergence("MlpPolicy: projection QP did not solve");
    return sol.z;
}

namespace {

// Mean loss over the batch plus parameter gradients. Residuals are taken on
// the pre-projection output.
double batch_loss_grad(const MlpPolicy& p, const std::vector<Matrix>& W,
                       const std::vector<Vector>& b, const Dataset& data,
                       const std::vector<int>& idx, bool squared, Grads* out) {
    const std::size_t L = W.size();
    double loss = 0.0;
    std::vector<Vector> preacts(L);
    std::vector<Vector> acts(L + 1);
    for (int s : idx) {
        acts[0] = data.states[s];
        for (std::size_t l = 0; l < L; ++l) {
            preacts[l] = W[l] * acts[l] + b[l];
            acts[l + 1] = (l + 1 < L) ? preacts[l].cwiseMax(0.0) : preacts[l];
        }
        const Vector r = acts[L] - data.inputs[s];
        Vector delta;
        if (squared) {
            loss += r.squaredNorm();
            delta = 2.0 * r;
        } else {
            const double sn = std::sqrt(r.squaredNorm() + kNormSmoothing);
            loss += sn;
            delta = r / sn;
        }
        if (out) {
            for (std::size_t l = L; l-- > 0;) {
                out->W[l].noalias() += delta * acts[l].transpose();
                out->b[l] += delta;
                if (l > 0) {
                    delta = W[l].transpose() * delta;
                    for (Eigen::Index i = 0; i < delta.size(); ++i)
                        if (preacts[l - 1][i] <= 0.0) delta[i] = 0.0;
                }
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(idx.size());
    if (out) {
        for (auto& g : out->W) g *= inv;
        for (auto& g : out->b) g *= inv;
    }
    (void)p;
    return loss * inv;
}

std::vector<int> all_indices(int n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

}  // namespace

MlpPolicy train_erm(const Dataset& dataset, const TrainConfig& cfg, MlpPolicy init) {
    if (dataset.empty()) throw InvalidInput("train_erm: empty dataset");
    if (cfg.learning_rate <= 0.0 || cfg.epochs < 1) throw InvalidInput("train_erm: bad config");
    if (dataset.states[0].size() != init.dx() || dataset.inputs[0].size() != init.du())
        throw InvalidInput("train_erm: dataset/policy dimension mismatch");
    for (const Vector& u : dataset.inputs)
        if (!contains(init.U_, u, 1e-9)) throw InvalidInput("train_erm: label outside U");

    MlpPolicy p = std::move(init);
    Grads m = zero_like(p.weights_, p.biases_);
    Grads v = zero_like(p.weights_, p.biases_);
    const int n = dataset.size();
    const int batch = (cfg.batch_size <= 0 || cfg.batch_size >= n) ? n : cfg.batch_size;
    Rng shuffle_rng(cfg.rng_seed ^ 0x5a5a5a5a5a5a5a5aULL);

    std::vector<int> order = all_indices(n);
    long step = 0;
    double last_loss = 0.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (batch < n) {
            for (int i = n - 1; i > 0; --i)
                std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);
        }
        double epoch_loss = 0.0;
        int n_batches = 0;
        for (int start = 0; start < n; start += batch, ++n_batches) {
            const int end = std::min(start + batch, n);
            const std::vector<int> idx(order.begin() + start, order.begin() + end);
            Grads g = zero_like(p.weights_, p.biases_);
            const double loss = batch_loss_grad(p, p.weights_, p.biases_, dataset, idx,
                                                cfg.squared_loss, &g);
            epoch_loss += loss * idx.size();
            ++step;
            const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            bool finite = std::isfinite(loss);
            for (std::size_t l = 0; l < p.weights_.size() && finite; ++l)
                finite = g.W[l].allFinite() && g.b[l].allFinite();
            if (!finite)
                throw NonConvergence("train_erm: non-finite loss/gradient at epoch " +
                                     std::to_string(epoch));
            for (std::size_t l = 0; l < p.weights_.size(); ++l) {
                m.W[l] = cfg.beta1 * m.W[l] + (1.0 - cfg.beta1) * g.W[l];
                v.W[l] = cfg.beta2 * v.W[l] + (1.0 - cfg.beta2) * g.W[l].cwiseProduct(g.W[l]);
                p.weights_[l] -=
                    (cfg.learning_rate * (m.W[l] / bc1).array() /
                     ((v.W[l] / bc2).array().sqrt() + cfg.adam_eps))
                        .matrix();
                m.b[l] = cfg.beta1 * m.b[l] + (1.0 - cfg.beta1) * g.b[l];
                v.b[l] = cfg.beta2 * v.b[l] + (1.0 - cfg.beta2) * g.b[l].cwiseProduct(g.b[l]);
                p.biases_[l] -= (cfg.learning_rate * (m.b[l] / bc1).array() /
                                 ((v.b[l] / bc2).array().sqrt() + cfg.adam_eps))
                                    .matrix();
            }
        }
        last_loss = epoch_loss / n;
    }
    p.final_loss_ = last_loss;
    return p;
}

double erm_loss(const MlpPolicy& p, const Dataset& dataset, bool squared) {
    if (dataset.empty()) throw InvalidInput("erm_loss: empty dataset");
    return batch_loss_grad(p, p.layer_weights(), p.layer_biases(), dataset,
                           all_indices(dataset.size()), squared, nullptr);
}

double erm_gradient_norm(const MlpPolicy& p, const Dataset& dataset, bool squared) {
    if (dataset.empty()) throw InvalidInput("erm_gradient_norm: empty dataset");
    Grads g = zero_like(p.layer_weights(), p.layer_biases());
    batch_loss_grad(p, p.layer_weights(), p.layer_biases(), dataset,
                    all_indices(dataset.size()), squared, &g);
    double sq = 0.0;
    for (const auto& w : g.W) sq += w.squaredNorm();
    for (const auto& b : g.b) sq += b.squaredNorm();
    return std::sqrt(sq);
}

bool smooth_at(const MlpPolicy& p, const Dataset& dataset, double margin) {
    const auto& W = p.layer_weights();
    const auto& B = p.layer_biases();
    const std::size_t L = W.size();
    for (int s = 0; s < dataset.size(); ++s) {
        Vector a = dataset.states[s];
        for (std::size_t l = 0; l < L; ++l) {
            const Vector z = W[l] * a + B[l];
            if (l + 1 < L) {
                if (z.cwiseAbs().minCoeff() < margin) return false;
                a = z.cwiseMax(0.0);
            } else {
                a = z;
            }
        }
        if ((a - dataset.inputs[s]).norm() < margin) return false;
    }
    return true;
}

double grad_check(const MlpPolicy& policy, const Dataset& dataset, int n_coords, double h,
                  std::uint64_t seed) {
    if (dataset.empty()) throw InvalidInput("grad_check: empty dataset");
    MlpPolicy p = policy;
    const std::vector<int> idx = all_indices(dataset.size());
    Grads analytic = zero_like(p.weights_, p.biases_);
    batch_loss_grad(p, p.weights_, p.biases_, dataset, idx, false, &analytic);

    // flat coordinate map over (weights, biases)
    std::vector<double*> coords;
    std::vector<const double*> grads;
    for (std::size_t l = 0; l < p.weights_.size(); ++l) {
        for (Eigen::Index i = 0; i < p.weights_[l].size(); ++i) {
            coords.push_back(p.weights_[l].data() + i);
            grads.push_back(analytic.W[l].data() + i);
        }
        for (Eigen::Index i = 0; i < p.biases_[l].size(); ++i) {
            coords.push_back(p.biases_[l].data() + i);
            grads.push_back(analytic.b[l].data() + i);
        }
    }

    Rng rng(seed);
    double worst = 0.0;
    for (int k = 0; k < n_coords; ++k) {
        const int c = rng.uniform_int(0, static_cast<int>(coords.size()) - 1);
        const double saved = *coords[c];
        *coords[c] = saved + h;
        const double up = batch_loss_grad(p, p.weights_, p.biases_, dataset, idx, false, nullptr);
        *coords[c] = saved - h;
        const double dn = batch_loss_grad(p, p.weights_, p.biases_, dataset, idx, false, nullptr);
        *coords[c] = saved;
        const double fd = (up - dn) / (2.0 * h);
        const double an = *grads[c];
        const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
        worst = std::max(worst, err);
    }
    return worst;
}

void MlpPolicy::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("MlpPolicy::save: cannot open " + path);
    out.write("TIMLP1", 6);
    const std::uint32_t layers = static_cast<std::uint32_t>(weights_.size());
    out.write(reinterpret_cast<const char*>(&layers), 4);
    for (int w : widths_) {
        const std::uint32_t v = static_cast<std::uint32_t>(w);
        out.write(reinterpret_cast<const char*>(&v), 4);
    }
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        for (Eigen::Index i = 0; i < weights_[l].rows(); ++i)
            for (Eigen::Index j = 0; j < weights_[l].cols(); ++j) {
                const double v = weights_[l](i, j);
                out.write(reinterpret_cast<const char*>(&v), 8);
            }
        for (Eigen::Index i = 0; i < biases_[l].size(); ++i) {
            const double v = biases_[l][i];
            out.write(reinterpret_cast<const char*>(&v), 8);
        }
    }
    if (!out) throw IoError("MlpPolicy::save: write failed for " + path);

    std::ofstream meta(path + ".meta");
    meta << "seed = " << seed_ << "\n"
         << "final_loss = " << final_loss_ << "\n"
         << "widths =";
    for (int w : widths_) meta << " " << w;
    meta << "\n";
}

MlpPolicy MlpPolicy::load(const std::string& path, Polytope U) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("MlpPolicy::load: cannot open " + path);
    char magic[6];
    in.read(magic, 6);
    if (!in || std::memcmp(magic, "TIMLP1", 6) != 0)
        throw IoError("MlpPolicy::load: bad magic in " + path);
    std::uint32_t layers = 0;
    in.read(reinterpret_cast<char*>(&layers), 4);
    if (!in || layers == 0 || layers > 64) throw IoError("MlpPolicy::load: bad layer count");
    MlpPolicy p;
    p.widths_.resize(layers + 1);
    for (auto& w : p.widths_) {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        w = static_cast<int>(v);
        if (!in || w <= 0) throw IoError("MlpPolicy::load: bad width");
    }
    for (std::uint32_t l = 0; l < layers; ++l) {
        Matrix W(p.widths_[l + 1], p.widths_[l]);
        for (Eigen::Index i = 0; i < W.rows(); ++i)
            for (Eigen::Index j = 0; j < W.cols(); ++j) in.read(reinterpret_cast<char*>(&W(i, j)), 8);
        Vector b(p.widths_[l + 1]);
        for (Eigen::Index i = 0; i < b.size(); ++i) in.read(reinterpret_cast<char*>(&b[i]), 8);
        if (!in) throw IoError("MlpPolicy::load: truncated file " + path);
        p.weights_.push_back(std::move(W));
        p.biases_.push_back(std::move(b));
    }
    if (U.dim() != p.widths_.back()) throw InvalidInput("MlpPolicy::load: U dimension mismatch");
    p.U_ = std::move(U);
    return p;
}

}  // namespace mpcimit
