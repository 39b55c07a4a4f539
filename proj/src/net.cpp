#include "r2n2/net.hpp"

#include <cmath>
#include <numbers>

#include "r2n2/errors.hpp"
#include "r2n2/kernels.hpp"

namespace r2n2::net {
namespace {

constexpr double kTanhGain = 5.0 / 3.0;

int same_pad(const Tensor& w) { return (w.dim(2) - 1) / 2; }

Tensor uniform_init(std::mt19937_64& rng, std::vector<int> shape, double fan_in, double fan_out,
                    double gain) {
    const double a = gain * std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

// ---- tape builders shared by the standalone blocks and the full network ----

struct GruNodes {
    ad::NodeId wr, br, ur, wz, bz, uz, wp, bp, up;
};

ad::NodeId conv_same(ad::Tape& t, ad::NodeId x, ad::NodeId w, ad::NodeId b) {
    return t.conv2d(x, w, b, 1, same_pad(t.val(w)));
}

ad::NodeId conv_gru_on_tape(ad::Tape& t, ad::NodeId x, ad::NodeId h, const GruNodes& g) {
    const ad::NodeId r = t.logistic(t.add(conv_same(t, x, g.wr, g.br), conv_same(t, h, g.ur, -1)));
    const ad::NodeId z = t.logistic(t.add(conv_same(t, x, g.wz, g.bz), conv_same(t, h, g.uz, -1)));
    const ad::NodeId rh = t.mul(r, h);
    const ad::NodeId hp =
        t.tanh(t.add(conv_same(t, x, g.wp, g.bp), conv_same(t, rh, g.up, -1)));
    return t.add(t.mul(t.affine(z, -1.0, 1.0), h), t.mul(z, hp));
}

struct ResNodes {
    ad::NodeId w1, b1, w2, b2;
};

ad::NodeId residual_block_on_tape(ad::Tape& t, ad::NodeId x, const ResNodes& r) {
    const ad::NodeId inner = t.tanh(conv_same(t, x, r.w1, r.b1));
    return t.tanh(t.add(x, conv_same(t, inner, r.w2, r.b2)));
}

struct Gr2uNoiseNodes {
    bool active = false;
    Tensor wp, up, bp, h_out;
};

// Returns (block output, new hidden state).
std::pair<ad::NodeId, ad::NodeId> gr2u_on_tape(ad::Tape& t, ad::NodeId x, ad::NodeId h_prev,
                                               const std::array<ResNodes, 3>& res,
                                               GruNodes gru, const Gr2uNoiseNodes& noise) {
    ad::NodeId r = x;
    for (const ResNodes& block : res) r = residual_block_on_tape(t, r, block);
    if (noise.active) {
        gru.wp = t.mul_mask(gru.wp, noise.wp);
        gru.up = t.mul_mask(gru.up, noise.up);
        gru.bp = t.mul_mask(gru.bp, noise.bp);
    }
    ad::NodeId h = conv_gru_on_tape(t, r, h_prev, gru);
    if (noise.active) h = t.mul_mask(h, noise.h_out);
    const ad::NodeId out = t.tanh(t.add(r, h));
    return {out, h};
}

struct PosNodes {
    ad::NodeId wl, bl, wr, br;
};

// -> (x, y, certainty)
std::array<ad::NodeId, 3> position_net_on_tape(ad::Tape& t, ad::NodeId feat, ad::NodeId X,
                                               ad::NodeId Y, const PosNodes& p) {
    const ad::NodeId pl = t.spatial_softmax(t.conv2d(feat, p.wl, p.bl, 1, 0));
    const ad::NodeId pr = t.spatial_softmax(t.conv2d(feat, p.wr, p.br, 1, 0));
    const ad::NodeId x = t.sum(t.mul(pl, X));
    const ad::NodeId y = t.sum(t.mul(pl, Y));
    const ad::NodeId w = t.affine(t.l1_distance(pl, pr), -1.0, 2.0);
    return {x, y, w};
}

std::pair<ad::NodeId, ad::NodeId> fuse_on_tape(ad::Tape& t,
                                               const std::array<std::array<ad::NodeId, 3>, 3>& p) {
    const ad::NodeId den = t.add(t.add(p[0][2], p[1][2]), p[2][2]);
    if (t.scalar_val(den) == 0.0) {
        // all-zero certainties: unweighted mean
        const ad::NodeId x = t.affine(t.add(t.add(p[0][0], p[1][0]), p[2][0]), 1.0 / 3.0, 0.0);
        const ad::NodeId y = t.affine(t.add(t.add(p[0][1], p[1][1]), p[2][1]), 1.0 / 3.0, 0.0);
        return {x, y};
    }
    const ad::NodeId nx =
        t.add(t.add(t.mul(p[0][0], p[0][2]), t.mul(p[1][0], p[1][2])), t.mul(p[2][0], p[2][2]));
    const ad::NodeId ny =
        t.add(t.add(t.mul(p[0][1], p[0][2]), t.mul(p[1][1], p[1][2])), t.mul(p[2][1], p[2][2]));
    return {t.divide(nx, den), t.divide(ny, den)};
}

struct HeadNodes {
    ad::NodeId aw, ab, bw, bb, f1w, f1b, f2w, f2b;
};

ad::NodeId parameter_net_on_tape(ad::Tape& t, ad::NodeId feat, const HeadNodes& h) {
    const int channels = t.val(feat).dim(0);
    const int half = channels / 2;
    const ad::NodeId mixed = t.tanh(conv_same(t, feat, h.aw, h.ab));
    const ad::NodeId left = t.tanh(conv_same(t, t.channel_slice(mixed, 0, half), h.bw, h.bb));
    const ad::NodeId right = t.spatial_softmax(t.channel_slice(mixed, half, channels));
    const ad::NodeId pooled = t.spatial_sum(t.mul(left, right));
    const ad::NodeId hidden = t.tanh(t.fc(pooled, h.f1w, h.f1b));
    return t.fc(hidden, h.f2w, h.f2b);
}

ad::NodeId squash_on_tape(ad::Tape& t, ad::NodeId raw5, ad::NodeId x, ad::NodeId y,
                          double sigma_max) {
    const ad::NodeId sx = t.scale(t.logistic(t.pick(raw5, 0)), sigma_max);
    const ad::NodeId sy = t.scale(t.logistic(t.pick(raw5, 1)), sigma_max);
    const ad::NodeId vx = t.tanh(t.pick(raw5, 2));
    const ad::NodeId vy = t.tanh(t.pick(raw5, 3));
    const ad::NodeId al = t.scale(t.logistic(t.pick(raw5, 4)), std::numbers::pi);
    return t.stack({x, y, sx, sy, al, vx, vy});
}

Tensor zeros_conv(int oc, int ic, int k) { return Tensor({oc, ic, k, k}); }

}  // namespace

// ---- NetConfig ----

void NetConfig::validate() const {
    if (input_resolution < 16 || input_resolution % 8 != 0)
        throw std::invalid_argument("NetConfig: input_resolution must be >=16 and divisible by 8");
    for (int c : level_channels)
        if (c < 1) throw std::invalid_argument("NetConfig: level channels must be positive");
    if (head_channels < 2 || head_channels % 2 != 0)
        throw std::invalid_argument("NetConfig: head_channels must be even and >= 2");
    if (!(sigma_max > 0.0)) throw std::invalid_argument("NetConfig: sigma_max must be positive");
}

NetConfig NetConfig::toy(int resolution, int divisor) {
    if (divisor < 1) throw std::invalid_argument("NetConfig::toy: divisor must be >= 1");
    NetConfig c;
    c.input_resolution = resolution;
    c.level_channels = {std::max(2, 64 / divisor), std::max(2, 128 / divisor),
                        std::max(2, 256 / divisor)};
    c.head_channels = std::max(4, 512 / divisor);
    if (c.head_channels % 2) ++c.head_channels;
    return c;
}

// ---- ParamStore ----

int ParamStore::add(std::string name, Tensor init) {
    if (index_of(name) >= 0) throw std::invalid_argument("ParamStore: duplicate name " + name);
    ParamEntry e;
    e.name = std::move(name);
    e.value = std::move(init);
    e.grad = Tensor(e.value.shape());
    entries_.push_back(std::move(e));
    return (int)entries_.size() - 1;
}

int ParamStore::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].name == name) return (int)i;
    return -1;
}

std::size_t ParamStore::total_scalars() const {
    std::size_t n = 0;
    for (const ParamEntry& e : entries_) n += e.value.size();
    return n;
}

void ParamStore::zero_grads() {
    for (ParamEntry& e : entries_) e.grad.fill(0.0);
}

double ParamStore::grad_norm() const {
    double acc = 0.0;
    for (const ParamEntry& e : entries_) acc += kern::ops().sumsq(e.grad.data(), e.grad.size());
    return std::sqrt(acc);
}

void ParamStore::scale_grads(double s) {
    for (ParamEntry& e : entries_)
        kern::ops().affine(e.grad.data(), s, 0.0, e.grad.data(), e.grad.size());
}

// ---- standalone blocks ----

Tensor assemble_input(const Image2D& fixed, const Image2D& moving_warped) {
    if (!fixed.grid.same_extent(moving_warped.grid))
        throw shape_error("assemble_input: resolution mismatch");
    const int h = fixed.grid.height, w = fixed.grid.width;
    Tensor out({4, h, w});
    const std::size_t n = fixed.grid.pixels();
    std::copy(fixed.grid.coords_x.begin(), fixed.grid.coords_x.end(), out.data());
    std::copy(fixed.grid.coords_y.begin(), fixed.grid.coords_y.end(), out.data() + n);
    std::copy(fixed.values.begin(), fixed.values.end(), out.data() + 2 * n);
    std::copy(moving_warped.values.begin(), moving_warped.values.end(), out.data() + 3 * n);
    return out;
}

ConvGruWeights zero_conv_gru_weights(int channels, int in_channels) {
    ConvGruWeights w;
    w.wr = zeros_conv(channels, in_channels, 3);
    w.wz = zeros_conv(channels, in_channels, 3);
    w.wp = zeros_conv(channels, in_channels, 3);
    w.ur = zeros_conv(channels, channels, 3);
    w.uz = zeros_conv(channels, channels, 3);
    w.up = zeros_conv(channels, channels, 3);
    w.br = Tensor({channels});
    w.bz = Tensor({channels});
    w.bp = Tensor({channels});
    return w;
}

Tensor conv_gru_step(const Tensor& x, const Tensor& h_prev, const ConvGruWeights& w) {
    ad::Tape t;
    const GruNodes g{t.constant(w.wr), t.constant(w.br), t.constant(w.ur),
                     t.constant(w.wz), t.constant(w.bz), t.constant(w.uz),
                     t.constant(w.wp), t.constant(w.bp), t.constant(w.up)};
    return t.val(conv_gru_on_tape(t, t.constant(x), t.constant(h_prev), g));
}

Gr2uWeights zero_gr2u_weights(int channels) {
    Gr2uWeights w;
    for (ResBlockWeights& r : w.res) {
        r.w1 = zeros_conv(channels, channels, 3);
        r.w2 = zeros_conv(channels, channels, 3);
        r.b1 = Tensor({channels});
        r.b2 = Tensor({channels});
    }
    w.gru = zero_conv_gru_weights(channels, channels);
    return w;
}

std::pair<Tensor, Tensor> gr2u_block(const Tensor& x, const Tensor& h_prev,
                                     const Gr2uWeights& w) {
    ad::Tape t;
    std::array<ResNodes, 3> res;
    for (int i = 0; i < 3; ++i)
        res[(std::size_t)i] = ResNodes{t.constant(w.res[(std::size_t)i].w1),
                                       t.constant(w.res[(std::size_t)i].b1),
                                       t.constant(w.res[(std::size_t)i].w2),
                                       t.constant(w.res[(std::size_t)i].b2)};
    const GruNodes g{t.constant(w.gru.wr), t.constant(w.gru.br), t.constant(w.gru.ur),
                     t.constant(w.gru.wz), t.constant(w.gru.bz), t.constant(w.gru.uz),
                     t.constant(w.gru.wp), t.constant(w.gru.bp), t.constant(w.gru.up)};
    auto [out, h] = gr2u_on_tape(t, t.constant(x), t.constant(h_prev), res, g, {});
    return {t.val(out), t.val(h)};
}

Tensor spatial_softmax(const Tensor& logits) {
    ad::Tape t;
    return t.val(t.spatial_softmax(t.constant(logits)));
}

std::pair<double, double> soft_position(const Tensor& p, const Grid2D& grid) {
    if (p.size() != grid.pixels()) throw shape_error("soft_position: grid/map size mismatch");
    const double x = kern::ops().dot(p.data(), grid.coords_x.data(), p.size());
    const double y = kern::ops().dot(p.data(), grid.coords_y.data(), p.size());
    return {x, y};
}

double position_certainty(const Tensor& p_left, const Tensor& p_right) {
    if (!p_left.same_shape(p_right)) throw shape_error("position_certainty: shape mismatch");
    double l1 = 0.0;
    for (std::size_t i = 0; i < p_left.size(); ++i) l1 += std::abs(p_left[i] - p_right[i]);
    return 2.0 - l1;
}

std::array<double, 3> position_network(const Tensor& features, const Grid2D& grid,
                                       const PositionNetWeights& w) {
    ad::Tape t;
    const PosNodes p{t.constant(w.wl), t.constant(w.bl), t.constant(w.wr), t.constant(w.br)};
    const ad::NodeId X = t.constant(Tensor({1, grid.height, grid.width},
                                           std::vector<double>(grid.coords_x)));
    const ad::NodeId Y = t.constant(Tensor({1, grid.height, grid.width},
                                           std::vector<double>(grid.coords_y)));
    const auto out = position_net_on_tape(t, t.constant(features), X, Y, p);
    return {t.scalar_val(out[0]), t.scalar_val(out[1]), t.scalar_val(out[2])};
}

std::pair<double, double> fuse_positions(const std::array<std::array<double, 3>, 3>& triples) {
    double den = 0.0, nx = 0.0, ny = 0.0;
    for (const auto& tr : triples) {
        nx += tr[0] * tr[2];
        ny += tr[1] * tr[2];
        den += tr[2];
    }
    if (den == 0.0)
        return {(triples[0][0] + triples[1][0] + triples[2][0]) / 3.0,
                (triples[0][1] + triples[1][1] + triples[2][1]) / 3.0};
    return {nx / den, ny / den};
}

ParamHeadRaw parameter_network(const Tensor& features, const ParamNetWeights& w) {
    ad::Tape t;
    const HeadNodes h{t.constant(w.conv_a_w), t.constant(w.conv_a_b), t.constant(w.conv_b_w),
                      t.constant(w.conv_b_b), t.constant(w.fc1_w),    t.constant(w.fc1_b),
                      t.constant(w.fc2_w),    t.constant(w.fc2_b)};
    const Tensor out = t.val(parameter_net_on_tape(t, t.constant(features), h));
    ParamHeadRaw raw;
    for (int i = 0; i < 5; ++i) raw.c[(std::size_t)i] = out[(std::size_t)i];
    return raw;
}

LocalDeformParams squash_params(const ParamHeadRaw& raw, std::pair<double, double> position,
                                double sigma_max) {
    auto logistic = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    LocalDeformParams p;
    p.x = position.first;
    p.y = position.second;
    p.sigma_x = logistic(raw.c[0]) * sigma_max;
    p.sigma_y = logistic(raw.c[1]) * sigma_max;
    p.v_x = std::tanh(raw.c[2]);
    p.v_y = std::tanh(raw.c[3]);
    p.alpha = logistic(raw.c[4]) * std::numbers::pi;
    return p;
}

Tensor apply_multiplicative_noise(const Tensor& values, std::mt19937_64& rng, double mean,
                                  double stddev, bool training) {
    if (!training) return values;
    std::normal_distribution<double> dist(mean, stddev);
    Tensor out(values.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = values[i] * dist(rng);
    return out;
}

// ---- R2N2Net ----

int R2N2Net::add_conv_weight(std::mt19937_64& rng, const std::string& name, int oc, int ic,
                             int k, double gain) {
    return params_.add(name, uniform_init(rng, {oc, ic, k, k}, (double)ic * k * k,
                                          (double)oc * k * k, gain));
}

int R2N2Net::add_bias(const std::string& name, int oc) {
    return params_.add(name, Tensor({oc}));
}

R2N2Net::ConvIdx R2N2Net::add_conv(std::mt19937_64& rng, const std::string& name, int oc, int ic,
                                   int k, double gain) {
    return ConvIdx{add_conv_weight(rng, name + ".w", oc, ic, k, gain), add_bias(name + ".b", oc)};
}

R2N2Net::R2N2Net(NetConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    grid_ = make_grid(cfg_.input_resolution, cfg_.input_resolution);
    for (int l = 0; l < 3; ++l) {
        const int r = level_resolution(l);
        level_grids_[(std::size_t)l] = make_grid(r, r);
    }

    const auto& ch = cfg_.level_channels;
    enc_[0] = add_conv(rng, "enc1", ch[0], 4, 7, kTanhGain);
    enc_[1] = add_conv(rng, "enc2", ch[1], ch[0], 3, kTanhGain);
    enc_[2] = add_conv(rng, "enc3", ch[2], ch[1], 3, kTanhGain);
    enc_[3] = add_conv(rng, "enc4", cfg_.head_channels, ch[2], 1, kTanhGain);

    for (int l = 0; l < 3; ++l) {
        const int c = ch[(std::size_t)l];
        const std::string base = "gr2u" + std::to_string(l + 1);
        LevelIdx& L = level_[(std::size_t)l];
        for (int b = 0; b < 3; ++b) {
            const std::string rb = base + ".res" + std::to_string(b + 1);
            L.res[(std::size_t)b][0] = add_conv(rng, rb + ".c1", c, c, 3, kTanhGain);
            L.res[(std::size_t)b][1] = add_conv(rng, rb + ".c2", c, c, 3, kTanhGain);
        }
        L.gru.xr = add_conv(rng, base + ".gru.xr", c, c, 3, 1.0);
        L.gru.ur = add_conv_weight(rng, base + ".gru.ur", c, c, 3, 1.0);
        L.gru.xz = add_conv(rng, base + ".gru.xz", c, c, 3, 1.0);
        L.gru.uz = add_conv_weight(rng, base + ".gru.uz", c, c, 3, 1.0);
        L.gru.xp = add_conv(rng, base + ".gru.xp", c, c, 3, kTanhGain);
        L.gru.up = add_conv_weight(rng, base + ".gru.up", c, c, 3, kTanhGain);
        const std::string pos = "pos" + std::to_string(l + 1);
        L.pos_l = add_conv(rng, pos + ".left", 1, c, 1, 1.0);
        L.pos_r = add_conv(rng, pos + ".right", 1, c, 1, 1.0);
    }

    const int hc = cfg_.head_channels;
    head_a_ = add_conv(rng, "head.a", hc, hc, 3, kTanhGain);
    head_b_ = add_conv(rng, "head.b", hc / 2, hc / 2, 3, kTanhGain);
    fc1_ = ConvIdx{params_.add("head.fc1.w", uniform_init(rng, {hc, hc / 2}, hc / 2.0, (double)hc,
                                                          kTanhGain)),
                   add_bias("head.fc1.b", hc)};
    fc2_ = ConvIdx{params_.add("head.fc2.w", uniform_init(rng, {5, hc}, (double)hc, 5.0, 1.0)),
                   add_bias("head.fc2.b", 5)};
}

R2N2State R2N2Net::initial_state() const {
    R2N2State s;
    for (int l = 0; l < 3; ++l) {
        const int r = level_resolution(l);
        s.h[(std::size_t)l] = Tensor({cfg_.level_channels[(std::size_t)l], r, r});
    }
    s.field = make_field(grid_);
    s.step = 0;
    return s;
}

R2N2Net::Weights R2N2Net::leaf_weights(ad::Tape& tape, bool requires_grad) const {
    Weights w;
    w.nodes.reserve((std::size_t)params_.count());
    for (int i = 0; i < params_.count(); ++i)
        w.nodes.push_back(tape.leaf(params_.entry(i).value, requires_grad));
    return w;
}

R2N2Net::ConstNodes R2N2Net::constants_on_tape(ad::Tape& tape) const {
    ConstNodes c;
    const int h = grid_.height, w = grid_.width;
    c.coord_x = tape.constant(Tensor({1, h, w}, std::vector<double>(grid_.coords_x)));
    c.coord_y = tape.constant(Tensor({1, h, w}, std::vector<double>(grid_.coords_y)));
    for (int l = 0; l < 3; ++l) {
        const Grid2D& g = level_grids_[(std::size_t)l];
        c.level_x[(std::size_t)l] =
            tape.constant(Tensor({1, g.height, g.width}, std::vector<double>(g.coords_x)));
        c.level_y[(std::size_t)l] =
            tape.constant(Tensor({1, g.height, g.width}, std::vector<double>(g.coords_y)));
    }
    return c;
}

R2N2Net::StateNodes R2N2Net::initial_state_nodes(ad::Tape& tape) const {
    StateNodes s;
    const R2N2State init = initial_state();
    for (int l = 0; l < 3; ++l) s.h[(std::size_t)l] = tape.constant(init.h[(std::size_t)l]);
    s.field = tape.constant(field_to_tensor(init.field));
    s.step = 0;
    return s;
}

R2N2Net::StepNodes R2N2Net::step_on_tape(ad::Tape& t, const Weights& w, const ConstNodes& c,
                                         ad::NodeId fixed, ad::NodeId warped_in,
                                         const StateNodes& prev, const StepNoise* noise) const {
    auto node = [&w](int idx) { return w.nodes[(std::size_t)idx]; };

    const ad::NodeId input = t.channel_concat({c.coord_x, c.coord_y, fixed, warped_in});
    ad::NodeId cur = t.tanh(t.conv2d(input, node(enc_[0].w), node(enc_[0].b), 2, 3));

    StepNodes out;
    out.state.step = prev.step + 1;
    std::array<std::array<ad::NodeId, 3>, 3> pos;
    for (int l = 0; l < 3; ++l) {
        const LevelIdx& L = level_[(std::size_t)l];
        std::array<ResNodes, 3> res;
        for (int b = 0; b < 3; ++b)
            res[(std::size_t)b] = ResNodes{node(L.res[(std::size_t)b][0].w),
                                           node(L.res[(std::size_t)b][0].b),
                                           node(L.res[(std::size_t)b][1].w),
                                           node(L.res[(std::size_t)b][1].b)};
        const GruNodes gru{node(L.gru.xr.w), node(L.gru.xr.b), node(L.gru.ur),
                           node(L.gru.xz.w), node(L.gru.xz.b), node(L.gru.uz),
                           node(L.gru.xp.w), node(L.gru.xp.b), node(L.gru.up)};
        Gr2uNoiseNodes nn;
        if (noise) {
            nn.active = true;
            nn.wp = noise->wp[(std::size_t)l];
            nn.up = noise->up[(std::size_t)l];
            nn.bp = noise->bp[(std::size_t)l];
            nn.h_out = noise->h_out[(std::size_t)l];
        }
        auto [gout, h] = gr2u_on_tape(t, cur, prev.h[(std::size_t)l], res, gru, nn);
        out.state.h[(std::size_t)l] = h;
        pos[(std::size_t)l] = position_net_on_tape(
            t, gout, c.level_x[(std::size_t)l], c.level_y[(std::size_t)l],
            PosNodes{node(L.pos_l.w), node(L.pos_l.b), node(L.pos_r.w), node(L.pos_r.b)});
        if (l < 2)
            cur = t.tanh(t.conv2d(gout, node(enc_[(std::size_t)l + 1].w),
                                  node(enc_[(std::size_t)l + 1].b), 2, 1));
        else
            cur = t.tanh(t.conv2d(gout, node(enc_[3].w), node(enc_[3].b), 1, 0));
    }

    const HeadNodes head{node(head_a_.w), node(head_a_.b), node(head_b_.w), node(head_b_.b),
                         node(fc1_.w),    node(fc1_.b),    node(fc2_.w),    node(fc2_.b)};
    const ad::NodeId raw5 = parameter_net_on_tape(t, cur, head);
    const auto [fx, fy] = fuse_on_tape(t, pos);
    out.params7 = squash_on_tape(t, raw5, fx, fy, cfg_.sigma_max);

    const ad::NodeId local = gaussian_field_op(t, out.params7, grid_);
    out.state.field = t.add(prev.field, local);
    return out;
}

std::pair<LocalDeformParams, R2N2State> R2N2Net::r2n2_step(const Image2D& fixed,
                                                           const Image2D& moving,
                                                           const R2N2State& state) const {
    if (fixed.grid.height != cfg_.input_resolution || fixed.grid.width != cfg_.input_resolution)
        throw shape_error("r2n2_step: fixed image is not at input resolution");
    if (!fixed.grid.same_extent(moving.grid)) throw shape_error("r2n2_step: grid mismatch");
    if (state.step < 0) throw std::invalid_argument("r2n2_step: negative step");

    ad::Tape t;
    const Weights w = leaf_weights(t, false);
    const ConstNodes c = constants_on_tape(t);
    const ad::NodeId fn = t.constant(image_to_tensor(fixed));
    const ad::NodeId mn = t.constant(image_to_tensor(moving));

    StateNodes prev;
    prev.step = state.step;
    if (state.step == 0) {
        prev = initial_state_nodes(t);
    } else {
        for (int l = 0; l < 3; ++l) prev.h[(std::size_t)l] = t.constant(state.h[(std::size_t)l]);
        prev.field = t.constant(field_to_tensor(state.field));
    }
    const ad::NodeId warped = state.step == 0 ? mn : warp_op(t, mn, prev.field, grid_);
    const StepNodes res = step_on_tape(t, w, c, fn, warped, prev, nullptr);

    const Tensor& p7 = t.val(res.params7);
    const LocalDeformParams lp{p7[0], p7[1], p7[2], p7[3], p7[4], p7[5], p7[6]};

    R2N2State next;
    next.step = state.step + 1;
    for (int l = 0; l < 3; ++l) next.h[(std::size_t)l] = t.val(res.state.h[(std::size_t)l]);
    next.field = tensor_to_field(grid_, t.val(res.state.field));
    return {lp, next};
}

void R2N2Net::harvest_grads(ad::Tape& tape, const Weights& w) {
    for (int i = 0; i < params_.count(); ++i) {
        ParamEntry& e = params_.entry(i);
        const Tensor& g = tape.grad(w.nodes[(std::size_t)i]);
        if (g.empty())
            e.grad.fill(0.0);
        else
            e.grad = g;
    }
}

}  // namespace r2n2::net
