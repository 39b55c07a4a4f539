#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "r2n2/net.hpp"
#include "r2n2/objectives.hpp"

namespace r2n2::train {

struct TrainConfig {
    double learning_rate = 1e-4;
    bool amsgrad = true;
    int steps = 25;  // unroll length T
    double lambda = 0.1;
    double noise_mean = 1.0;
    double noise_std = std::sqrt(0.5) / 0.5;
    bool noise_enabled = true;
    double dropconnect_rate = 0.1;
    long iterations = 2000;
    std::uint64_t seed = 0;
    long checkpoint_every = 500;
    double grad_clip_norm = 1.0;

    void validate() const;
};

struct RegistrationPair {
    Image2D fixed, moving;
};

struct IterationRecord {
    long iteration = 0;
    double loss = 0.0, image_loss = 0.0, tv_loss = 0.0, grad_norm = 0.0, seconds = 0.0;
};

struct TrainMetrics {
    std::vector<IterationRecord> records;
    double total_seconds = 0.0;
};

class AdamOptimizer {
public:
    AdamOptimizer(double lr, bool amsgrad, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : lr_(lr), amsgrad_(amsgrad), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(net::ParamStore& params);
    long t() const { return t_; }
    void set_t(long t) { t_ = t; }

private:
    double lr_;
    bool amsgrad_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
};

// T forward registration steps with gradients flowing through the whole
// unroll. fields[t] = f_{t+1}; params[t] = the step's local deformation.
std::pair<std::vector<DisplacementField>, std::vector<LocalDeformParams>> unroll(
    const net::R2N2Net& net, const Image2D& fixed, const Image2D& moving, int steps);

// Tape-mode unroll used by the trainer and by gradient checks.
struct UnrollNodes {
    std::vector<ad::NodeId> params7;
    std::vector<ad::NodeId> fields;
    ad::NodeId image_term = -1;  // (1/T) sum_t mse
    ad::NodeId tv_term = -1;     // tv(f_T)
    ad::NodeId loss = -1;        // image_term + lambda * tv_term
};
UnrollNodes unroll_on_tape(ad::Tape& tape, const net::R2N2Net& net,
                           const net::R2N2Net::Weights& weights, const Image2D& fixed,
                           const Image2D& moving, int steps, double lambda,
                           std::mt19937_64* noise_rng, const TrainConfig* noise_cfg);

using MetricsSink = std::function<void(const IterationRecord&)>;
using CheckpointSink = std::function<void(long iteration)>;

// Unsupervised loop: per iteration draw one pair, unroll T steps, minimize the
// sequence objective with Adam/AMSGrad. Aborts with training_error (carrying a
// diagnostic message) when the loss goes non-finite.
TrainMetrics train_epoch(net::R2N2Net& net, const std::vector<RegistrationPair>& data,
                         const TrainConfig& cfg, AdamOptimizer& opt, long start_iteration = 0,
                         const MetricsSink& sink = {}, const CheckpointSink& checkpoint = {});

// Central-difference spot check of the end-to-end loss gradient for n_probes
// randomly chosen network parameters. Returns the worst relative error.
struct NetGradCheck {
    double max_rel_error = 0.0;
    std::string worst_param;
    double analytic = 0.0, numeric = 0.0;
};
NetGradCheck finite_diff_check_network(net::R2N2Net& net, const Image2D& fixed,
                                       const Image2D& moving, int steps, double lambda,
                                       int n_probes, double eps, std::uint64_t seed);

// --- checkpoints -------------------------------------------------------------
void save_checkpoint(const std::filesystem::path& path, const net::R2N2Net& net, long iteration,
                     long adam_t);
struct LoadedCheckpoint {
    std::unique_ptr<net::R2N2Net> net;
    long iteration = 0;
    long adam_t = 0;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace r2n2::train
