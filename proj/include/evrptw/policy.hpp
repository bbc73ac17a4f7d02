// Attention policy: per-vertex and global embeddings, the graph-embedding
// recursion, context attention producing visit probabilities, and the LSTM
// decoder that carries trajectory history.
//
// All forward math runs on an ad::Tape. Training keeps one tape per rollout;
// inference uses a short-lived tape per step through the Evaluator wrapper.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "evrptw/autodiff.hpp"
#include "evrptw/env.hpp"
#include "evrptw/instance.hpp"
#include "evrptw/rng.hpp"

namespace evrptw::policy {

struct LstmParams {
    ad::Value wx_i, wh_i, b_i;
    ad::Value wx_f, wh_f, b_f;
    ad::Value wx_g, wh_g, b_g;
    ad::Value wx_o, wh_o, b_o;
};

struct PolicyParams {
    int xi = 128;   // embedding width
    int att = 128;  // attention width
    int rounds = 4; // graph-embedding recursion depth

    ad::Value w_x, b_x;            // vertex features (5) -> xi
    ad::Value w_g, b_g;            // global features (3) -> xi
    ad::Value th1, th2, th3, th4;  // xi -> xi
    ad::Value th5;                 // edge-weight lift, 1 -> xi
    ad::Value th_u;                // [mu; h] (2 xi) -> att
    ad::Value th_v;                // att -> 1
    ad::Value th_c;                // [mu; c] (2 xi) -> att
    ad::Value th_g;                // att -> 1
    LstmParams lstm;               // input xi, hidden xi
};

template <class P, class F>
void for_each_param(P& p, F&& f) {
    f("w_x", p.w_x);
    f("b_x", p.b_x);
    f("w_g", p.w_g);
    f("b_g", p.b_g);
    f("th1", p.th1);
    f("th2", p.th2);
    f("th3", p.th3);
    f("th4", p.th4);
    f("th5", p.th5);
    f("th_u", p.th_u);
    f("th_v", p.th_v);
    f("th_c", p.th_c);
    f("th_g", p.th_g);
    f("lstm.wx_i", p.lstm.wx_i);
    f("lstm.wh_i", p.lstm.wh_i);
    f("lstm.b_i", p.lstm.b_i);
    f("lstm.wx_f", p.lstm.wx_f);
    f("lstm.wh_f", p.lstm.wh_f);
    f("lstm.b_f", p.lstm.b_f);
    f("lstm.wx_g", p.lstm.wx_g);
    f("lstm.wh_g", p.lstm.wh_g);
    f("lstm.b_g", p.lstm.b_g);
    f("lstm.wx_o", p.lstm.wx_o);
    f("lstm.wh_o", p.lstm.wh_o);
    f("lstm.b_o", p.lstm.b_o);
}

inline ad::Value xavier_matrix(int rows, int cols, rng::Stream& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    ad::Value v(rows, cols);
    for (double& x : v.a) x = rng.uniform(-bound, bound);
    return v;
}

// Weights uniform on +-sqrt(6/(fan_in+fan_out)), biases zero.
inline PolicyParams xavier_init(rng::Stream& rng, int xi = 128, int att = 128, int rounds = 4) {
    PolicyParams p;
    p.xi = xi;
    p.att = att;
    p.rounds = rounds;
    p.w_x = xavier_matrix(5, xi, rng);
    p.b_x = ad::Value(1, xi);
    p.w_g = xavier_matrix(3, xi, rng);
    p.b_g = ad::Value(1, xi);
    p.th1 = xavier_matrix(xi, xi, rng);
    p.th2 = xavier_matrix(xi, xi, rng);
    p.th3 = xavier_matrix(xi, xi, rng);
    p.th4 = xavier_matrix(xi, xi, rng);
    p.th5 = xavier_matrix(1, xi, rng);
    p.th_u = xavier_matrix(2 * xi, att, rng);
    p.th_v = xavier_matrix(att, 1, rng);
    p.th_c = xavier_matrix(2 * xi, att, rng);
    p.th_g = xavier_matrix(att, 1, rng);
    auto& l = p.lstm;
    for (ad::Value* w : {&l.wx_i, &l.wh_i, &l.wx_f, &l.wh_f, &l.wx_g, &l.wh_g, &l.wx_o, &l.wh_o})
        *w = xavier_matrix(xi, xi, rng);
    for (ad::Value* b : {&l.b_i, &l.b_f, &l.b_g, &l.b_o}) *b = ad::Value(1, xi);
    return p;
}

// Node handles for one tape's view of the parameters. The params object must
// outlive the tape; leaves reference its storage.
struct TracedParams {
    const PolicyParams* p = nullptr;
    std::vector<int> ids;  // leaf ids in for_each_param order

    static TracedParams watch(ad::Tape& t, const PolicyParams& params) {
        TracedParams r;
        r.p = &params;
        for_each_param(params, [&](const char*, const ad::Value& v) { r.ids.push_back(t.leaf(v)); });
        return r;
    }

    // accessors by canonical position
    int w_x() const { return ids[0]; }
    int b_x() const { return ids[1]; }
    int w_g() const { return ids[2]; }
    int b_g() const { return ids[3]; }
    int th1() const { return ids[4]; }
    int th2() const { return ids[5]; }
    int th3() const { return ids[6]; }
    int th4() const { return ids[7]; }
    int th5() const { return ids[8]; }
    int th_u() const { return ids[9]; }
    int th_v() const { return ids[10]; }
    int th_c() const { return ids[11]; }
    int th_g() const { return ids[12]; }
    int lstm_wx_i() const { return ids[13]; }
    int lstm_wh_i() const { return ids[14]; }
    int lstm_b_i() const { return ids[15]; }
    int lstm_wx_f() const { return ids[16]; }
    int lstm_wh_f() const { return ids[17]; }
    int lstm_b_f() const { return ids[18]; }
    int lstm_wx_g() const { return ids[19]; }
    int lstm_wh_g() const { return ids[20]; }
    int lstm_b_g() const { return ids[21]; }
    int lstm_wx_o() const { return ids[22]; }
    int lstm_wh_o() const { return ids[23]; }
    int lstm_b_o() const { return ids[24]; }
};

inline ad::Value vertex_features(const Instance& inst, const env::State& s) {
    const int n = inst.size();
    ad::Value f(n, 5);
    for (int i = 0; i < n; ++i) {
        const Vertex& v = inst.vertex(i);
        f.at(i, 0) = v.x;
        f.at(i, 1) = v.z;
        f.at(i, 2) = v.e;
        f.at(i, 3) = v.l;
        f.at(i, 4) = s.demand[static_cast<std::size_t>(i)];
    }
    return f;
}

inline ad::Value global_features(const env::State& s) {
    ad::Value g(1, 3);
    g.a[0] = s.tau;
    g.a[1] = s.battery;
    g.a[2] = static_cast<double>(s.ev_left);
    return g;
}

// Static part of the recursion: for every vertex, the theta4-projected sum of
// relu(theta5 * w(i,j)) over its neighborhood. Depends only on coordinates,
// so one evaluation serves a whole rollout.
inline int edge_context(ad::Tape& t, const TracedParams& tp, const Instance& inst) {
    const int n = inst.size();
    ad::Value wflat(n * n, 1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) wflat.a[static_cast<std::size_t>(i) * n + j] = inst.distance(i, j);
    ad::Value sel(n, n * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (j != i) sel.at(i, i * n + j) = 1.0;
    const int lifted = t.relu(t.matmul(t.constant(std::move(wflat)), tp.th5()));  // n^2 x xi
    const int summed = t.matmul(t.constant(std::move(sel)), lifted);              // n x xi
    return t.matmul(summed, tp.th4());
}

struct TracedEncoder {
    int mu;     // n x xi
    int x_hat;  // n x xi
    int g_hat;  // 1 x xi
};

// Embeds vertex and global features and runs the neighborhood recursion
// mu^(k) = relu(X^ th1 + G^ th2 + (sum_{j!=i} mu^(k-1)_j) th3 + edge_context),
// starting from mu^(0) = X^. Pass a cached edge_context node to skip the
// static term.
inline TracedEncoder embed(ad::Tape& t, const TracedParams& tp, const Instance& inst,
                           const env::State& s, int edge_ctx = -1) {
    const int n = inst.size();
    const int x_hat = t.add(t.matmul(t.constant(vertex_features(inst, s)), tp.w_x()), tp.b_x());
    const int g_hat = t.add(t.matmul(t.constant(global_features(s)), tp.w_g()), tp.b_g());
    if (edge_ctx < 0) edge_ctx = edge_context(t, tp, inst);

    const int base = t.add(t.add(t.matmul(x_hat, tp.th1()), t.matmul(g_hat, tp.th2())), edge_ctx);
    ad::Value ones(1, n);
    for (double& v : ones.a) v = 1.0;
    const int ones_row = t.constant(std::move(ones));

    int mu = x_hat;
    for (int k = 0; k < tp.p->rounds; ++k) {
        const int total = t.matmul(ones_row, mu);              // 1 x xi, sum over vertices
        const int nbr = t.add(t.scalar_mul(mu, -1.0), total);  // row i: total - mu_i
        mu = t.relu(t.add(base, t.matmul(nbr, tp.th3())));
    }
    return {mu, x_hat, g_hat};
}

struct AttendOut {
    int p;        // 1 x n visit probabilities
    int context;  // 1 x xi context vector
    int weights;  // 1 x n attention weights
};

// Context attention: weights from [mu_i; h], context as their weighted sum,
// probabilities from [mu_i; c]. The mask applies additively inside both
// softmax steps.
inline AttendOut attend(ad::Tape& t, const TracedParams& tp, int mu, int h,
                        const env::Mask& mask) {
    if (!mask.any()) throw std::logic_error("attend: every vertex is masked");
    const int n = t.val(mu).rows;
    const int xi = t.val(mu).cols;

    const int zeros = t.constant(ad::Value(n, xi));
    const int h_rows = t.add(zeros, h);
    const int u = t.tanh_(t.matmul(t.concat_cols(mu, h_rows), tp.th_u()));
    const int v_row = t.transpose(t.matmul(u, tp.th_v()));
    const int a = t.softmax_masked(v_row, &mask.selectable);
    const int c = t.matmul(a, mu);

    const int c_rows = t.add(zeros, c);
    const int u2 = t.tanh_(t.matmul(t.concat_cols(mu, c_rows), tp.th_c()));
    const int g_row = t.transpose(t.matmul(u2, tp.th_g()));
    const int p = t.softmax_masked(g_row, &mask.selectable);
    return {p, c, a};
}

struct TracedDecoderState {
    int h = -1;
    int c = -1;
};

inline TracedDecoderState initial_decoder(ad::Tape& t, int xi) {
    return {t.constant(ad::Value(1, xi)), t.constant(ad::Value(1, xi))};
}

// Single LSTM cell update on the raw embedding of the current vertex.
inline TracedDecoderState decoder_step(ad::Tape& t, const TracedParams& tp,
                                       TracedDecoderState dec, int x_row) {
    auto gate = [&](int wx, int wh, int b) {
        return t.add(t.add(t.matmul(x_row, wx), t.matmul(dec.h, wh)), b);
    };
    const int gi = t.sigmoid(gate(tp.lstm_wx_i(), tp.lstm_wh_i(), tp.lstm_b_i()));
    const int gf = t.sigmoid(gate(tp.lstm_wx_f(), tp.lstm_wh_f(), tp.lstm_b_f()));
    const int gg = t.tanh_(gate(tp.lstm_wx_g(), tp.lstm_wh_g(), tp.lstm_b_g()));
    const int go = t.sigmoid(gate(tp.lstm_wx_o(), tp.lstm_wh_o(), tp.lstm_b_o()));
    const int c_next = t.add(t.cmul(gf, dec.c), t.cmul(gi, gg));
    const int h_next = t.cmul(go, t.tanh_(c_next));
    return {h_next, c_next};
}

struct StepProbs {
    int p;        // 1 x n
    int weights;  // 1 x n attention weights
    TracedDecoderState dec;
    env::Mask mask;
};

// One decoding step: mask, re-embed, advance the LSTM on the current vertex's
// raw embedding, then attend. The single probability interface used by both
// decoding and training.
inline StepProbs step_probabilities(ad::Tape& t, const TracedParams& tp, const Instance& inst,
                                    const env::State& s, TracedDecoderState dec,
                                    int edge_ctx = -1) {
    env::Mask m = env::mask(inst, s);
    const TracedEncoder enc = embed(t, tp, inst, s, edge_ctx);
    const int x_cur = t.gather_rows(enc.x_hat, {s.current});
    const TracedDecoderState dec_next = decoder_step(t, tp, dec, x_cur);
    const AttendOut at = attend(t, tp, enc.mu, dec_next.h, m);
    return {at.p, at.weights, dec_next, std::move(m)};
}

// Plain-value inference wrapper bound to one instance: fresh tape per step,
// cached edge context, no gradient bookkeeping exposed.
class Evaluator {
public:
    Evaluator(const Instance& inst, const PolicyParams& params)
        : inst_(&inst), params_(&params) {
        ad::Tape t;
        const TracedParams tp = TracedParams::watch(t, params);
        edge_ctx_ = t.val(edge_context(t, tp, inst));
    }

    struct DecVals {
        ad::Value h, c;
    };

    DecVals initial_dec() const { return {ad::Value(1, params_->xi), ad::Value(1, params_->xi)}; }

    struct StepOut {
        std::vector<double> probs;
        std::vector<double> attention;
        env::Mask mask;
        DecVals dec;
    };

    StepOut step(const env::State& s, const DecVals& dec) const {
        ad::Tape t;
        const TracedParams tp = TracedParams::watch(t, *params_);
        TracedDecoderState d{t.leaf(dec.h), t.leaf(dec.c)};
        const StepProbs sp =
            step_probabilities(t, tp, *inst_, s, d, t.constant(edge_ctx_));
        StepOut out;
        out.probs = t.val(sp.p).a;
        out.attention = t.val(sp.weights).a;
        out.mask = sp.mask;
        out.dec = {t.val(sp.dec.h), t.val(sp.dec.c)};
        return out;
    }

    const Instance& instance() const { return *inst_; }
    const PolicyParams& params() const { return *params_; }

private:
    const Instance* inst_;
    const PolicyParams* params_;
    ad::Value edge_ctx_;
};

// ---- checkpoint serialization ----

inline nlohmann::json to_json(const PolicyParams& p) {
    nlohmann::json params = nlohmann::json::object();
    for_each_param(p, [&](const char* name, const ad::Value& v) {
        params[name] = {{"shape", {v.rows, v.cols}}, {"values", v.a}};
    });
    return {{"schema_version", "1"},
            {"xi", p.xi},
            {"p", p.rounds},
            {"attention_width", p.att},
            {"params", std::move(params)}};
}

inline PolicyParams policy_from_json(const nlohmann::json& j) {
    if (!j.contains("schema_version") || j.at("schema_version").get<std::string>() != "1")
        throw std::runtime_error("unsupported checkpoint schema version");
    PolicyParams p;
    p.xi = j.at("xi").get<int>();
    p.rounds = j.at("p").get<int>();
    p.att = j.at("attention_width").get<int>();
    const auto& jp = j.at("params");
    for_each_param(p, [&](const char* name, ad::Value& v) {
        if (!jp.contains(name)) throw std::runtime_error(std::string("checkpoint missing tensor ") + name);
        const auto& jv = jp.at(name);
        const auto shape = jv.at("shape").get<std::vector<int>>();
        if (shape.size() != 2) throw std::runtime_error("bad tensor shape in checkpoint");
        v.rows = shape[0];
        v.cols = shape[1];
        v.a = jv.at("values").get<std::vector<double>>();
        if (static_cast<int>(v.a.size()) != v.rows * v.cols)
            throw std::runtime_error("tensor size mismatch in checkpoint");
    });
    return p;
}

inline void save_checkpoint(const PolicyParams& p, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << to_json(p).dump() << "\n";
}

inline PolicyParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed checkpoint " + path.string() + ": " + e.what());
    }
    return policy_from_json(j);
}

}  // namespace evrptw::policy
