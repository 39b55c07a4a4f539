#include "r2n2/train.hpp"

#include <chrono>
#include <cstring>
#include <fstream>
#include <random>

#include "r2n2/errors.hpp"
#include "r2n2/kernels.hpp"

namespace r2n2::train {
namespace {

double now_seconds() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

// Per-iteration generator: decoupled from the iteration count so resumed runs
// replay the identical stream (splitmix64 of seed and iteration).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t iteration) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (iteration + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Tensor noise_mask(std::mt19937_64& rng, const std::vector<int>& shape, double mean, double stddev,
                  double dropconnect_rate) {
    std::normal_distribution<double> gauss(mean, stddev);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Tensor t(shape);
    const double keep = 1.0 - dropconnect_rate;
    for (std::size_t i = 0; i < t.size(); ++i) {
        double m = gauss(rng);
        if (dropconnect_rate > 0.0) m = uni(rng) < dropconnect_rate ? 0.0 : m / keep;
        t[i] = m;
    }
    return t;
}

net::StepNoise make_step_noise(std::mt19937_64& rng, const net::NetConfig& cfg,
                               const TrainConfig& t) {
    net::StepNoise n;
    for (int l = 0; l < 3; ++l) {
        const int c = cfg.level_channels[(std::size_t)l];
        const int r = cfg.input_resolution >> (l + 1);
        n.wp[(std::size_t)l] =
            noise_mask(rng, {c, c, 3, 3}, t.noise_mean, t.noise_std, t.dropconnect_rate);
        n.up[(std::size_t)l] =
            noise_mask(rng, {c, c, 3, 3}, t.noise_mean, t.noise_std, t.dropconnect_rate);
        n.bp[(std::size_t)l] =
            noise_mask(rng, {c}, t.noise_mean, t.noise_std, t.dropconnect_rate);
        // output noise is plain multiplicative gaussian (no dropconnect)
        n.h_out[(std::size_t)l] = noise_mask(rng, {c, r, r}, t.noise_mean, t.noise_std, 0.0);
    }
    return n;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate <= 0");
    if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
    if (dropconnect_rate < 0.0 || dropconnect_rate >= 1.0)
        throw std::invalid_argument("TrainConfig: dropconnect_rate outside [0, 1)");
    if (iterations < 0) throw std::invalid_argument("TrainConfig: negative iterations");
}

void AdamOptimizer::step(net::ParamStore& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, (double)t_);
    const double bc2 = 1.0 - std::pow(beta2_, (double)t_);
    for (int i = 0; i < params.count(); ++i) {
        net::ParamEntry& e = params.entry(i);
        if (e.m.empty()) {
            e.m = Tensor(e.value.shape());
            e.v = Tensor(e.value.shape());
            e.vmax = Tensor(e.value.shape());
        }
        kern::ops().adam_step(e.value.data(), e.grad.data(), e.m.data(), e.v.data(),
                              e.vmax.data(), e.value.size(), lr_, beta1_, beta2_, eps_, bc1, bc2,
                              amsgrad_);
    }
}

UnrollNodes unroll_on_tape(ad::Tape& tape, const net::R2N2Net& net,
                           const net::R2N2Net::Weights& weights, const Image2D& fixed,
                           const Image2D& moving, int steps, double lambda,
                           std::mt19937_64* noise_rng, const TrainConfig* noise_cfg) {
    if (steps < 1) throw std::invalid_argument("unroll: steps must be >= 1");
    const auto c = net.constants_on_tape(tape);
    const ad::NodeId fn = tape.constant(image_to_tensor(fixed));
    const ad::NodeId mn = tape.constant(image_to_tensor(moving));

    UnrollNodes out;
    net::R2N2Net::StateNodes state = net.initial_state_nodes(tape);
    ad::NodeId warped = mn;  // M o f_0 = M
    ad::NodeId mse_acc = -1;
    for (int t = 0; t < steps; ++t) {
        net::StepNoise noise;
        const net::StepNoise* noise_ptr = nullptr;
        if (noise_rng && noise_cfg && noise_cfg->noise_enabled) {
            noise = make_step_noise(*noise_rng, net.config(), *noise_cfg);
            noise_ptr = &noise;
        }
        const auto step = net.step_on_tape(tape, weights, c, fn, warped, state, noise_ptr);
        state = step.state;
        out.params7.push_back(step.params7);
        out.fields.push_back(state.field);
        warped = warp_op(tape, mn, state.field, net.grid());
        const ad::NodeId term = mse_op(tape, fn, warped);
        mse_acc = (mse_acc < 0) ? term : tape.add(mse_acc, term);
    }
    out.image_term = tape.affine(mse_acc, 1.0 / (double)steps, 0.0);
    out.tv_term = tv_op(tape, out.fields.back());
    out.loss = tape.add(out.image_term, tape.scale(out.tv_term, lambda));
    return out;
}

std::pair<std::vector<DisplacementField>, std::vector<LocalDeformParams>> unroll(
    const net::R2N2Net& net, const Image2D& fixed, const Image2D& moving, int steps) {
    ad::Tape tape;
    const auto weights = net.leaf_weights(tape, false);
    const UnrollNodes nodes =
        unroll_on_tape(tape, net, weights, fixed, moving, steps, 0.0, nullptr, nullptr);
    std::pair<std::vector<DisplacementField>, std::vector<LocalDeformParams>> out;
    for (int t = 0; t < steps; ++t) {
        out.first.push_back(tensor_to_field(net.grid(), tape.val(nodes.fields[(std::size_t)t])));
        const Tensor& p = tape.val(nodes.params7[(std::size_t)t]);
        out.second.push_back(LocalDeformParams{p[0], p[1], p[2], p[3], p[4], p[5], p[6]});
    }
    return out;
}

TrainMetrics train_epoch(net::R2N2Net& net, const std::vector<RegistrationPair>& data,
                         const TrainConfig& cfg, AdamOptimizer& opt, long start_iteration,
                         const MetricsSink& sink, const CheckpointSink& checkpoint) {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument("train_epoch: empty dataset");
    TrainMetrics metrics;
    const double t_start = now_seconds();
    for (long iter = start_iteration; iter < start_iteration + cfg.iterations; ++iter) {
        const double it_start = now_seconds();
        std::mt19937_64 rng(mix_seed(cfg.seed, (std::uint64_t)iter));
        const std::size_t pick = data.size() == 1
                                     ? 0
                                     : (std::size_t)(rng() % (std::uint64_t)data.size());
        const RegistrationPair& pair = data[pick];

        ad::Tape tape;
        const auto weights = net.leaf_weights(tape, true);
        const UnrollNodes nodes = unroll_on_tape(tape, net, weights, pair.fixed, pair.moving,
                                                 cfg.steps, cfg.lambda, &rng, &cfg);
        const double loss = tape.scalar_val(nodes.loss);
        const double image_loss = tape.scalar_val(nodes.image_term);
        const double tv = tape.scalar_val(nodes.tv_term);
        if (!std::isfinite(loss))
            throw training_error("non-finite loss at iteration " + std::to_string(iter) +
                                 " (image=" + std::to_string(image_loss) +
                                 ", tv=" + std::to_string(tv) + ", pair=" +
                                 std::to_string(pick) + ")");

        tape.backward(nodes.loss);
        net.harvest_grads(tape, weights);
        double gnorm = net.params().grad_norm();
        if (!std::isfinite(gnorm))
            throw training_error("non-finite gradient at iteration " + std::to_string(iter));
        if (cfg.grad_clip_norm > 0.0 && gnorm > cfg.grad_clip_norm)
            net.params().scale_grads(cfg.grad_clip_norm / gnorm);
        opt.step(net.params());

        IterationRecord rec;
        rec.iteration = iter;
        rec.loss = loss;
        rec.image_loss = image_loss;
        rec.tv_loss = tv;
        rec.grad_norm = gnorm;
        rec.seconds = now_seconds() - it_start;
        metrics.records.push_back(rec);
        if (sink) sink(rec);
        if (checkpoint && cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0)
            checkpoint(iter + 1);
    }
    metrics.total_seconds = now_seconds() - t_start;
    return metrics;
}

NetGradCheck finite_diff_check_network(net::R2N2Net& net, const Image2D& fixed,
                                       const Image2D& moving, int steps, double lambda,
                                       int n_probes, double eps, std::uint64_t seed) {
    // analytic pass
    {
        ad::Tape tape;
        const auto weights = net.leaf_weights(tape, true);
        const UnrollNodes nodes =
            unroll_on_tape(tape, net, weights, fixed, moving, steps, lambda, nullptr, nullptr);
        tape.backward(nodes.loss);
        net.harvest_grads(tape, weights);
    }
    auto eval_loss = [&]() {
        ad::Tape tape;
        const auto weights = net.leaf_weights(tape, false);
        const UnrollNodes nodes =
            unroll_on_tape(tape, net, weights, fixed, moving, steps, lambda, nullptr, nullptr);
        return tape.scalar_val(nodes.loss);
    };

    std::mt19937_64 rng(seed);
    NetGradCheck result;
    net::ParamStore& params = net.params();
    for (int probe = 0; probe < n_probes; ++probe) {
        const int pi = (int)(rng() % (std::uint64_t)params.count());
        net::ParamEntry& e = params.entry(pi);
        const std::size_t xi = (std::size_t)(rng() % (std::uint64_t)e.value.size());
        const double saved = e.value[xi];
        e.value[xi] = saved + eps;
        const double fp = eval_loss();
        e.value[xi] = saved - eps;
        const double fm = eval_loss();
        e.value[xi] = saved;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double analytic = e.grad[xi];
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        const double rel = (analytic == numeric) ? 0.0 : std::abs(analytic - numeric) / denom;
        if (rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_param = e.name + "[" + std::to_string(xi) + "]";
            result.analytic = analytic;
            result.numeric = numeric;
        }
    }
    return result;
}

// --- checkpoints -------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'R', '2', 'N', 'C'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw io_error("truncated checkpoint: " + path);
    return v;
}

void put_tensor(std::ofstream& out, const Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.data()), (std::streamsize)(t.size() * 8));
}

void get_tensor(std::ifstream& in, Tensor& t, const std::string& path) {
    in.read(reinterpret_cast<char*>(t.data()), (std::streamsize)(t.size() * 8));
    if (!in) throw io_error("truncated checkpoint: " + path);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const net::R2N2Net& net, long iteration,
                     long adam_t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    out.write(kCkptMagic, 4);
    put<std::uint32_t>(out, kCkptVersion);
    const net::NetConfig& c = net.config();
    put<std::int32_t>(out, c.input_resolution);
    for (int ch : c.level_channels) put<std::int32_t>(out, ch);
    put<std::int32_t>(out, c.head_channels);
    put<double>(out, c.sigma_max);
    put<std::int64_t>(out, iteration);
    put<std::int64_t>(out, adam_t);
    const net::ParamStore& params = net.params();
    put<std::uint32_t>(out, (std::uint32_t)params.count());
    for (int i = 0; i < params.count(); ++i) {
        const net::ParamEntry& e = params.entry(i);
        put<std::uint32_t>(out, (std::uint32_t)e.name.size());
        out.write(e.name.data(), (std::streamsize)e.name.size());
        put<std::uint32_t>(out, (std::uint32_t)e.value.ndim());
        for (int d = 0; d < e.value.ndim(); ++d) put<std::int32_t>(out, e.value.dim(d));
        const bool has_opt = !e.m.empty();
        put<std::uint8_t>(out, has_opt ? 1 : 0);
        put_tensor(out, e.value);
        if (has_opt) {
            put_tensor(out, e.m);
            put_tensor(out, e.v);
            put_tensor(out, e.vmax);
        }
    }
    if (!out) throw io_error("write failed: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCkptMagic, 4) != 0)
        throw io_error("not an R2NC checkpoint: " + path.string());
    const auto version = get<std::uint32_t>(in, path.string());
    if (version != kCkptVersion)
        throw io_error("unsupported checkpoint version in " + path.string());
    net::NetConfig cfg;
    cfg.input_resolution = get<std::int32_t>(in, path.string());
    for (int l = 0; l < 3; ++l) cfg.level_channels[(std::size_t)l] = get<std::int32_t>(in, path.string());
    cfg.head_channels = get<std::int32_t>(in, path.string());
    cfg.sigma_max = get<double>(in, path.string());

    LoadedCheckpoint loaded;
    loaded.iteration = (long)get<std::int64_t>(in, path.string());
    loaded.adam_t = (long)get<std::int64_t>(in, path.string());
    loaded.net = std::make_unique<net::R2N2Net>(cfg, 0);

    const auto n = get<std::uint32_t>(in, path.string());
    net::ParamStore& params = loaded.net->params();
    if ((int)n != params.count())
        throw io_error("checkpoint parameter count mismatch: " + path.string());
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto name_len = get<std::uint32_t>(in, path.string());
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const int idx = params.index_of(name);
        if (idx < 0) throw io_error("unknown parameter '" + name + "' in " + path.string());
        net::ParamEntry& e = params.entry(idx);
        const auto ndim = get<std::uint32_t>(in, path.string());
        std::vector<int> dims;
        for (std::uint32_t d = 0; d < ndim; ++d) dims.push_back(get<std::int32_t>(in, path.string()));
        if (dims != e.value.shape())
            throw io_error("parameter shape mismatch for '" + name + "' in " + path.string());
        const bool has_opt = get<std::uint8_t>(in, path.string()) != 0;
        get_tensor(in, e.value, path.string());
        if (has_opt) {
            e.m = Tensor(e.value.shape());
            e.v = Tensor(e.value.shape());
            e.vmax = Tensor(e.value.shape());
            get_tensor(in, e.m, path.string());
            get_tensor(in, e.v, path.string());
            get_tensor(in, e.vmax, path.string());
        }
    }
    return loaded;
}

}  // namespace r2n2::train
