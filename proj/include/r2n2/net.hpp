#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "r2n2/deform.hpp"
#include "r2n2/field.hpp"
#include "r2n2/tape.hpp"

namespace r2n2::net {

// Architecture knobs. The default mirrors the full-scale layout (256^2 input,
// 64/128/256 level channels at 128^2/64^2/32^2, 512-channel head); toy() scales
// the channels down by a divisor so gradient checks and CI run at desk scale.
struct NetConfig {
    int input_resolution = 256;
    std::array<int, 3> level_channels{64, 128, 256};
    int head_channels = 512;
    double sigma_max = 0.3;

    void validate() const;
    static NetConfig paper() { return NetConfig{}; }
    static NetConfig toy(int resolution, int divisor);
    bool operator==(const NetConfig&) const = default;
};

// Recurrent state: one hidden map per GR2U plus the accumulated field.
// step == 0 implies zero hidden maps and a zero field.
struct R2N2State {
    std::array<Tensor, 3> h;
    DisplacementField field;
    int step = 0;
};

struct ParamHeadRaw {
    std::array<double, 5> c{};
};

// --- parameters --------------------------------------------------------------

struct ParamEntry {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m, v, vmax;  // optimizer state, allocated on first use
};

class ParamStore {
public:
    int add(std::string name, Tensor init);
    int count() const { return (int)entries_.size(); }
    ParamEntry& entry(int i) { return entries_[(std::size_t)i]; }
    const ParamEntry& entry(int i) const { return entries_[(std::size_t)i]; }
    int index_of(const std::string& name) const;  // -1 when absent
    std::size_t total_scalars() const;
    void zero_grads();
    double grad_norm() const;
    void scale_grads(double s);

private:
    std::vector<ParamEntry> entries_;
};

// --- standalone blocks (value mode; tests drive these with explicit weights) --

// Channels ordered (coord_x, coord_y, F, M o f); [4,H,W].
Tensor assemble_input(const Image2D& fixed, const Image2D& moving_warped);

struct ConvGruWeights {
    Tensor wr, br, ur;  // reset gate: conv(x)+bias, conv(h)
    Tensor wz, bz, uz;  // update gate
    Tensor wp, bp, up;  // proposal
};
ConvGruWeights zero_conv_gru_weights(int channels, int in_channels);
Tensor conv_gru_step(const Tensor& x, const Tensor& h_prev, const ConvGruWeights& w);

struct ResBlockWeights {
    Tensor w1, b1, w2, b2;
};
struct Gr2uWeights {
    std::array<ResBlockWeights, 3> res;
    ConvGruWeights gru;
};
Gr2uWeights zero_gr2u_weights(int channels);
// Returns (block output, new hidden state).
std::pair<Tensor, Tensor> gr2u_block(const Tensor& x, const Tensor& h_prev, const Gr2uWeights& w);

Tensor spatial_softmax(const Tensor& logits);                       // [C,H,W]
std::pair<double, double> soft_position(const Tensor& p, const Grid2D& grid);
double position_certainty(const Tensor& p_left, const Tensor& p_right);

struct PositionNetWeights {
    Tensor wl, bl, wr, br;  // two parallel 1x1 convs C->1
};
// -> (x, y, certainty w)
std::array<double, 3> position_network(const Tensor& features, const Grid2D& grid,
                                       const PositionNetWeights& w);

std::pair<double, double> fuse_positions(const std::array<std::array<double, 3>, 3>& triples);

struct ParamNetWeights {
    Tensor conv_a_w, conv_a_b;  // K3, C->C
    Tensor conv_b_w, conv_b_b;  // K3, C/2->C/2
    Tensor fc1_w, fc1_b;        // C/2 -> C
    Tensor fc2_w, fc2_b;        // C -> 5
};
ParamHeadRaw parameter_network(const Tensor& features, const ParamNetWeights& w);

LocalDeformParams squash_params(const ParamHeadRaw& raw, std::pair<double, double> position,
                                double sigma_max);

// Multiplicative masks for one recurrent step, all shaped like their targets.
struct StepNoise {
    std::array<Tensor, 3> wp, up, bp;   // proposal conv parameters per level
    std::array<Tensor, 3> h_out;        // C-GRU output per level
};

// --- the network --------------------------------------------------------------

class R2N2Net {
public:
    R2N2Net(NetConfig cfg, std::uint64_t seed);

    const NetConfig& config() const { return cfg_; }
    const Grid2D& grid() const { return grid_; }
    const Grid2D& level_grid(int level) const { return level_grids_[(std::size_t)level]; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    R2N2State initial_state() const;

    // One registration step: warp M by the accumulated field, run the network,
    // return the emitted local deformation and the advanced state.
    std::pair<LocalDeformParams, R2N2State> r2n2_step(const Image2D& fixed,
                                                      const Image2D& moving,
                                                      const R2N2State& state) const;

    // --- tape plumbing (training and batched inference) -----------------------
    struct Weights {
        std::vector<ad::NodeId> nodes;  // parallel to ParamStore entries
    };
    struct ConstNodes {
        ad::NodeId coord_x, coord_y;                 // full-res coordinate planes
        std::array<ad::NodeId, 3> level_x, level_y;  // per-level coordinate planes
    };
    struct StateNodes {
        std::array<ad::NodeId, 3> h;
        ad::NodeId field;
        int step = 0;
    };
    struct StepNodes {
        ad::NodeId params7;
        StateNodes state;
    };

    Weights leaf_weights(ad::Tape& tape, bool requires_grad) const;
    ConstNodes constants_on_tape(ad::Tape& tape) const;
    StateNodes initial_state_nodes(ad::Tape& tape) const;

    // `warped_in` must be M o f_{t-1} (or M itself at step 0).
    StepNodes step_on_tape(ad::Tape& tape, const Weights& w, const ConstNodes& c,
                           ad::NodeId fixed, ad::NodeId warped_in, const StateNodes& prev,
                           const StepNoise* noise) const;

    // Copies node gradients back into the ParamStore after tape.backward().
    void harvest_grads(ad::Tape& tape, const Weights& w);

private:
    struct ConvIdx {
        int w = -1, b = -1;
    };
    struct GruIdx {
        ConvIdx xr, xz, xp;      // input convs (with bias)
        int ur = -1, uz = -1, up = -1;  // state convs (no bias)
    };
    struct LevelIdx {
        std::array<std::array<ConvIdx, 2>, 3> res;
        GruIdx gru;
        ConvIdx pos_l, pos_r;
    };

    int add_conv_weight(std::mt19937_64& rng, const std::string& name, int oc, int ic, int k,
                        double gain);
    int add_bias(const std::string& name, int oc);
    ConvIdx add_conv(std::mt19937_64& rng, const std::string& name, int oc, int ic, int k,
                     double gain);

    int level_resolution(int level) const { return cfg_.input_resolution >> (level + 1); }

    NetConfig cfg_;
    Grid2D grid_;
    std::array<Grid2D, 3> level_grids_;
    ParamStore params_;
    std::array<ConvIdx, 4> enc_;
    std::array<LevelIdx, 3> level_;
    ConvIdx head_a_, head_b_, fc1_, fc2_;
};

// Values scaled elementwise by draws from N(mean, std); identity in eval mode.
Tensor apply_multiplicative_noise(const Tensor& values, std::mt19937_64& rng, double mean,
                                  double stddev, bool training);

}  // namespace r2n2::net
