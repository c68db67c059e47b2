#include "facecap/captioner.hpp"

#include <algorithm>
#include <cmath>

#include "facecap/errors.hpp"

namespace facecap {

VariantConfig VariantConfig::preset(const std::string& name) {
    VariantConfig v;
    if (name == "baseline") {
        // all flags off
    } else if (name == "face-step") {
        v.s_in_gates = true;
        v.s_in_init = true;
    } else if (name == "face-init") {
        v.s_in_init = true;
    } else if (name == "face-cap-f") {
        v.s_in_gates = true;
        v.s_in_init = true;
        v.face_loss_enabled = true;
    } else if (name == "face-cap-l") {
        v.s_in_init = true;
        v.face_loss_enabled = true;
    } else {
        throw Error("unknown variant preset '" + name + "'");
    }
    return v;
}

const std::vector<std::string>& VariantConfig::preset_names() {
    static const std::vector<std::string> names = {"baseline", "face-step", "face-init",
                                                   "face-cap-f", "face-cap-l"};
    return names;
}

namespace {

const char* kGateSuffix[4] = {"i", "f", "o", "c"};

std::string gate_name(const char* prefix, int gate) {
    return std::string(prefix) + "_" + kGateSuffix[gate];
}

void add_glorot(ParamStore& store, const std::string& name, std::size_t rows, std::size_t cols,
                Rng& rng) {
    Tensor& w = store.add(name, {rows, cols});
    init_uniform_glorot(w, cols, rows, rng);
}

void add_bias(ParamStore& store, const std::string& name, std::size_t n) {
    store.add(name, {n});
}

// y += W^T dy
void acc_matvec_t(Tensor& dx, const Tensor& W, const Tensor& dy) {
    const std::size_t out = W.dim(0), in = W.dim(1);
    for (std::size_t r = 0; r < out; ++r) {
        const double d = dy[r];
        if (d == 0.0) continue;
        const double* wrow = W.data() + r * in;
        for (std::size_t c = 0; c < in; ++c) dx[c] += d * wrow[c];
    }
}

// dW += dy (x) x
void acc_outer(Tensor& dW, const Tensor& dy, const double* x) {
    const std::size_t out = dW.dim(0), in = dW.dim(1);
    for (std::size_t r = 0; r < out; ++r) {
        const double d = dy[r];
        if (d == 0.0) continue;
        double* row = dW.data() + r * in;
        for (std::size_t c = 0; c < in; ++c) row[c] += d * x[c];
    }
}

void acc_vec(Tensor& db, const Tensor& dy) {
    for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i];
}

// y = W x + b with a raw input pointer (used for annotation rows).
void matvec_into(Tensor& y, const Tensor& W, const double* x, const Tensor& b) {
    const std::size_t out = W.dim(0), in = W.dim(1);
    for (std::size_t r = 0; r < out; ++r) {
        double acc = b[r];
        const double* wrow = W.data() + r * in;
        for (std::size_t c = 0; c < in; ++c) acc += wrow[c] * x[c];
        y[r] = acc;
    }
}

void acc_matvec(Tensor& y, const Tensor& W, const Tensor& x) {
    const std::size_t out = W.dim(0), in = W.dim(1);
    for (std::size_t r = 0; r < out; ++r) {
        double acc = 0.0;
        const double* wrow = W.data() + r * in;
        for (std::size_t c = 0; c < in; ++c) acc += wrow[c] * x[c];
        y[r] += acc;
    }
}

Tensor onehot_tensor(const EmotionOneHot& s) {
    Tensor t({static_cast<std::size_t>(kNumEmotions)});
    for (int k = 0; k < kNumEmotions; ++k) t[static_cast<std::size_t>(k)] = s.s[static_cast<std::size_t>(k)];
    return t;
}

Tensor embed_row(const DecoderParams& params, int token) {
    const Tensor& E = params.p("embedding");
    if (token < 0 || static_cast<std::size_t>(token) >= E.dim(0))
        throw Error("token id out of range for embedding");
    const std::size_t m = E.dim(1);
    Tensor x({m});
    const double* row = E.data() + static_cast<std::size_t>(token) * m;
    std::copy(row, row + m, x.data());
    return x;
}

// Softmax-cross-entropy fused gradient, scaled. Zero when the clamp was
// active in the forward pass (the clamped loss is locally constant).
Tensor ce_softmax_grad(const Tensor& probs, std::size_t target, double scale) {
    Tensor d(probs.shape());
    if (probs[target] <= kLogClamp) return d;
    for (std::size_t i = 0; i < probs.size(); ++i) d[i] = scale * probs[i];
    d[target] -= scale;
    return d;
}

EmotionOneHot face_signal(const ImageRecord& rec, const VariantConfig& variant,
                          FacelessPolicy policy, bool* present) {
    if (!variant.uses_faces()) {
        if (present) *present = false;
        return EmotionOneHot{};
    }
    if (present) *present = true;
    return aggregate_faces(rec.faces, policy);
}

}  // namespace

DecoderParams::DecoderParams(const ModelDims& d, const VariantConfig& v, Rng& rng)
    : dims(d), variant(v) {
    if (d.vocab <= kNumReservedIds || d.embed < 1 || d.hidden < 1 || d.annot < 1 ||
        d.face_hidden < 1)
        throw Error("decoder dims must be positive (vocab > 4)");
    const auto V = static_cast<std::size_t>(d.vocab);
    const auto m = static_cast<std::size_t>(d.embed);
    const auto dh = static_cast<std::size_t>(d.hidden);
    const auto D = static_cast<std::size_t>(d.annot);
    const auto A = static_cast<std::size_t>(d.attn_dim());
    const auto fh = static_cast<std::size_t>(d.face_hidden);
    const auto q = static_cast<std::size_t>(d.init_input_dim(v));
    const auto E7 = static_cast<std::size_t>(kNumEmotions);

    Tensor& E = store.add("embedding", {V, m});
    init_uniform(E, 0.08, rng);

    for (int gi = 0; gi < 4; ++gi) {
        add_glorot(store, gate_name("W", gi), dh, m, rng);
        add_glorot(store, gate_name("U", gi), dh, dh, rng);
        add_glorot(store, gate_name("Z", gi), dh, D, rng);
        add_glorot(store, gate_name("S", gi), dh, E7, rng);
        add_bias(store, gate_name("b", gi), dh);
    }

    add_glorot(store, "attn_W", A, D, rng);
    add_glorot(store, "attn_U", A, dh, rng);
    add_bias(store, "attn_b", A);
    Tensor& v_proj = store.add("attn_v", {A});
    init_uniform(v_proj, std::sqrt(6.0 / static_cast<double>(A + 1)), rng);

    for (const char* which : {"c", "h"}) {
        std::string base = std::string("init_") + which;
        add_glorot(store, base + "_W1", dh, q, rng);
        add_bias(store, base + "_b1", dh);
        add_glorot(store, base + "_W2", dh, dh, rng);
        add_bias(store, base + "_b2", dh);
    }

    add_glorot(store, "out_W", V, dh, rng);
    add_bias(store, "out_b", V);

    add_glorot(store, "face_W1", fh, dh, rng);
    add_bias(store, "face_b1", fh);
    add_glorot(store, "face_W2", E7, fh, rng);
    add_bias(store, "face_b2", E7);
}

AttentionResult attend(const Tensor& annotations, const Tensor& h_prev,
                       const DecoderParams& params) {
    if (annotations.rank() != 2) throw Error("attend: annotations must be [L x D]");
    const std::size_t L = annotations.dim(0);
    const std::size_t D = annotations.dim(1);
    const Tensor& W = params.p("attn_W");
    const Tensor& U = params.p("attn_U");
    const Tensor& b = params.p("attn_b");
    const Tensor& v = params.p("attn_v");
    if (W.dim(1) != D || U.dim(1) != h_prev.size()) throw Error("attend: shape mismatch");
    const std::size_t A = W.dim(0);

    Tensor uh({A});
    matvec_into(uh, U, h_prev.data(), Tensor({A}));  // U h_prev, zero bias
    Tensor scores({L});
    Tensor score_tanh({L, A});
    Tensor ul({A});
    for (std::size_t l = 0; l < L; ++l) {
        matvec_into(ul, W, annotations.data() + l * D, b);
        double e = 0.0;
        for (std::size_t a = 0; a < A; ++a) {
            const double r = std::tanh(ul[a] + uh[a]);
            score_tanh.at(l, a) = r;
            e += v[a] * r;
        }
        scores[l] = e;
    }
    AttentionResult res;
    res.alpha = softmax(scores);
    res.score_tanh = std::move(score_tanh);
    res.context = Tensor({D});
    for (std::size_t l = 0; l < L; ++l) {
        const double a = res.alpha[l];
        const double* row = annotations.data() + l * D;
        for (std::size_t c = 0; c < D; ++c) res.context[c] += a * row[c];
    }
    return res;
}

Tensor mean_annotation(const Tensor& annotations) {
    const std::size_t L = annotations.dim(0), D = annotations.dim(1);
    Tensor m({D});
    for (std::size_t l = 0; l < L; ++l) {
        const double* row = annotations.data() + l * D;
        for (std::size_t c = 0; c < D; ++c) m[c] += row[c];
    }
    for (double& x : m.values()) x /= static_cast<double>(L);
    return m;
}

DecoderState init_state(const Tensor& init_input, const DecoderParams& params,
                        InitTrace* trace) {
    const Tensor hc = tanh_act(affine(init_input, params.p("init_c_W1"), params.p("init_c_b1")));
    const Tensor hh = tanh_act(affine(init_input, params.p("init_h_W1"), params.p("init_h_b1")));
    DecoderState st;
    st.c = tanh_act(affine(hc, params.p("init_c_W2"), params.p("init_c_b2")));
    st.h = tanh_act(affine(hh, params.p("init_h_W2"), params.p("init_h_b2")));
    st.t = 0;
    if (trace) {
        trace->input = init_input;
        trace->hidden_c = hc;
        trace->hidden_h = hh;
    }
    return st;
}

DecoderState lstm_step(const Tensor& x_prev, const DecoderState& prev, const Tensor& z,
                       const EmotionOneHot& s, const DecoderParams& params, GateTrace* trace) {
    const std::size_t d = prev.h.size();
    Tensor pre[4];
    for (int gi = 0; gi < 4; ++gi) {
        pre[gi] = affine(x_prev, params.p(gate_name("W", gi)), params.p(gate_name("b", gi)));
        acc_matvec(pre[gi], params.p(gate_name("U", gi)), prev.h);
        acc_matvec(pre[gi], params.p(gate_name("Z", gi)), z);
        if (params.variant.s_in_gates)
            acc_matvec(pre[gi], params.p(gate_name("S", gi)), onehot_tensor(s));
    }
    const Tensor i = sigmoid(pre[0]);
    const Tensor f = sigmoid(pre[1]);
    const Tensor o = sigmoid(pre[2]);
    const Tensor g = tanh_act(pre[3]);

    DecoderState next;
    next.c = Tensor({d});
    next.h = Tensor({d});
    Tensor tanh_c({d});
    for (std::size_t k = 0; k < d; ++k) {
        next.c[k] = f[k] * prev.c[k] + i[k] * g[k];
        tanh_c[k] = std::tanh(next.c[k]);
        next.h[k] = o[k] * tanh_c[k];
    }
    next.t = prev.t + 1;
    if (trace) {
        trace->i = i;
        trace->f = f;
        trace->o = o;
        trace->g = g;
        trace->c = next.c;
        trace->tanh_c = tanh_c;
        trace->h = next.h;
    }
    return next;
}

Tensor word_distribution(const Tensor& h, const DecoderParams& params) {
    return softmax(affine(h, params.p("out_W"), params.p("out_b")));
}

Tensor face_distribution(const Tensor& h, const DecoderParams& params, Tensor* hidden) {
    const Tensor hid = tanh_act(affine(h, params.p("face_W1"), params.p("face_b1")));
    Tensor probs = softmax(affine(hid, params.p("face_W2"), params.p("face_b2")));
    if (hidden) *hidden = hid;
    return probs;
}

ForwardResult forward_caption(const ImageRecord& rec, const std::vector<int>& caption,
                              const DecoderParams& params, const ForwardOptions& opts) {
    if (caption.size() < 2)
        throw Error("caption for image '" + rec.id + "' has fewer than 2 tokens");
    const std::size_t T = caption.size() - 1;
    const VariantConfig& variant = params.variant;

    ForwardResult res;
    res.s = face_signal(rec, variant, opts.faceless, &res.has_s);

    const Tensor init_input = variant.s_in_init ? onehot_tensor(res.s)
                                                : mean_annotation(rec.annotations);
    res.state0 = init_state(init_input, params, &res.init);

    DecoderState state = res.state0;
    double word_sum = 0.0, face_sum = 0.0;
    res.steps.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        StepTrace step;
        step.prev_token = caption[t];
        step.target_token = caption[t + 1];
        step.embed = embed_row(params, step.prev_token);

        AttentionResult att = attend(rec.annotations, state.h, params);
        step.alpha = att.alpha;
        step.context = att.context;
        step.score_tanh = std::move(att.score_tanh);

        state = lstm_step(step.embed, state, step.context, res.s, params, &step.gates);

        step.word_probs = word_distribution(state.h, params);
        step.word_nll = cross_entropy(step.word_probs, static_cast<std::size_t>(step.target_token));
        word_sum += step.word_nll;

        if (variant.face_loss_enabled) {
            step.face_probs = face_distribution(state.h, params, &step.face_hidden);
            step.face_nll = cross_entropy(step.face_probs, static_cast<std::size_t>(res.s.cls));
            face_sum += step.face_nll;
        }
        res.steps.push_back(std::move(step));
    }

    const double denom = opts.reduction == LossReduction::Mean ? static_cast<double>(T) : 1.0;
    res.word_loss = word_sum / denom;
    res.face_loss = variant.face_loss_enabled ? face_sum / denom : 0.0;
    res.total_loss = res.word_loss + (variant.face_loss_enabled
                                          ? variant.face_loss_weight * res.face_loss
                                          : 0.0);
    return res;
}

void backward_caption(const ImageRecord& rec, const std::vector<int>& caption,
                      const ForwardResult& fwd, DecoderParams& params,
                      const ForwardOptions& opts) {
    const std::size_t T = fwd.steps.size();
    if (T == 0 || caption.size() != T + 1)
        throw Error("backward_caption: forward trace does not match caption");
    const VariantConfig& variant = params.variant;
    const ModelDims& dims = params.dims;
    const std::size_t d = static_cast<std::size_t>(dims.hidden);
    const std::size_t D = static_cast<std::size_t>(dims.annot);
    const std::size_t L = rec.annotations.dim(0);
    const std::size_t A = static_cast<std::size_t>(dims.attn_dim());

    const double denom = opts.reduction == LossReduction::Mean ? static_cast<double>(T) : 1.0;
    const double word_scale = 1.0 / denom;
    const double face_scale =
        variant.face_loss_enabled ? variant.face_loss_weight / denom : 0.0;

    const Tensor s_vec = onehot_tensor(fwd.s);

    // dh[t], dc[t] for t = 0..T (index 0 is the init state).
    std::vector<Tensor> dh(T + 1, Tensor({d}));
    std::vector<Tensor> dc(T + 1, Tensor({d}));

    for (std::size_t t = T; t >= 1; --t) {
        const StepTrace& step = fwd.steps[t - 1];
        const Tensor& h_prev = t == 1 ? fwd.state0.h : fwd.steps[t - 2].gates.h;
        const Tensor& c_prev = t == 1 ? fwd.state0.c : fwd.steps[t - 2].gates.c;

        // word head
        {
            Tensor dlog = ce_softmax_grad(step.word_probs,
                                          static_cast<std::size_t>(step.target_token), word_scale);
            acc_outer(params.g("out_W"), dlog, step.gates.h.data());
            acc_vec(params.g("out_b"), dlog);
            acc_matvec_t(dh[t], params.p("out_W"), dlog);
        }

        // face head
        if (variant.face_loss_enabled) {
            Tensor dflog = ce_softmax_grad(step.face_probs, static_cast<std::size_t>(fwd.s.cls),
                                           face_scale);
            acc_outer(params.g("face_W2"), dflog, step.face_hidden.data());
            acc_vec(params.g("face_b2"), dflog);
            Tensor dhid({step.face_hidden.size()});
            acc_matvec_t(dhid, params.p("face_W2"), dflog);
            Tensor dpre = tanh_backward(step.face_hidden, dhid);
            acc_outer(params.g("face_W1"), dpre, step.gates.h.data());
            acc_vec(params.g("face_b1"), dpre);
            acc_matvec_t(dh[t], params.p("face_W1"), dpre);
        }

        // h_t = o * tanh(c_t)
        const GateTrace& gt = step.gates;
        Tensor do_({d}), dpre_o({d});
        for (std::size_t k = 0; k < d; ++k) {
            dc[t][k] += dh[t][k] * gt.o[k] * (1.0 - gt.tanh_c[k] * gt.tanh_c[k]);
            do_[k] = dh[t][k] * gt.tanh_c[k];
            dpre_o[k] = do_[k] * gt.o[k] * (1.0 - gt.o[k]);
        }

        // c_t = f * c_{t-1} + i * g
        Tensor dpre_i({d}), dpre_f({d}), dpre_g({d});
        for (std::size_t k = 0; k < d; ++k) {
            const double dct = dc[t][k];
            dpre_f[k] = dct * c_prev[k] * gt.f[k] * (1.0 - gt.f[k]);
            dpre_i[k] = dct * gt.g[k] * gt.i[k] * (1.0 - gt.i[k]);
            dpre_g[k] = dct * gt.i[k] * (1.0 - gt.g[k] * gt.g[k]);
            dc[t - 1][k] += dct * gt.f[k];
        }

        Tensor dx({static_cast<std::size_t>(dims.embed)});
        Tensor dz({D});
        const Tensor* dpres[4] = {&dpre_i, &dpre_f, &dpre_o, &dpre_g};
        for (int gi = 0; gi < 4; ++gi) {
            const Tensor& dpre = *dpres[gi];
            acc_outer(params.g(gate_name("W", gi)), dpre, step.embed.data());
            acc_outer(params.g(gate_name("U", gi)), dpre, h_prev.data());
            acc_outer(params.g(gate_name("Z", gi)), dpre, step.context.data());
            if (variant.s_in_gates) acc_outer(params.g(gate_name("S", gi)), dpre, s_vec.data());
            acc_vec(params.g(gate_name("b", gi)), dpre);
            acc_matvec_t(dx, params.p(gate_name("W", gi)), dpre);
            acc_matvec_t(dh[t - 1], params.p(gate_name("U", gi)), dpre);
            acc_matvec_t(dz, params.p(gate_name("Z", gi)), dpre);
        }

        // embedding row of the fed token
        {
            Tensor& dE = params.g("embedding");
            double* row = dE.data() + static_cast<std::size_t>(step.prev_token) * dE.dim(1);
            for (std::size_t k = 0; k < dx.size(); ++k) row[k] += dx[k];
        }

        // attention: z = sum_l alpha_l a_l ; e_l = v . tanh(W a_l + U h_prev + b)
        {
            Tensor dalpha({L});
            for (std::size_t l = 0; l < L; ++l) {
                const double* row = rec.annotations.data() + l * D;
                double acc = 0.0;
                for (std::size_t c = 0; c < D; ++c) acc += row[c] * dz[c];
                dalpha[l] = acc;
            }
            Tensor de = softmax_backward(step.alpha, dalpha);
            const Tensor& v = params.p("attn_v");
            Tensor& dv = params.g("attn_v");
            Tensor du_sum({A});
            Tensor du({A});
            for (std::size_t l = 0; l < L; ++l) {
                const double* r = step.score_tanh.data() + l * A;
                const double del = de[l];
                for (std::size_t a = 0; a < A; ++a) {
                    dv[a] += del * r[a];
                    du[a] = del * v[a] * (1.0 - r[a] * r[a]);
                    du_sum[a] += du[a];
                }
                acc_outer(params.g("attn_W"), du, rec.annotations.data() + l * D);
            }
            acc_outer(params.g("attn_U"), du_sum, h_prev.data());
            acc_vec(params.g("attn_b"), du_sum);
            acc_matvec_t(dh[t - 1], params.p("attn_U"), du_sum);
        }
    }

    // init MLPs
    for (const char* which : {"c", "h"}) {
        const bool is_c = which[0] == 'c';
        const Tensor& out = is_c ? fwd.state0.c : fwd.state0.h;
        const Tensor& hid = is_c ? fwd.init.hidden_c : fwd.init.hidden_h;
        const Tensor& dout = is_c ? dc[0] : dh[0];
        std::string base = std::string("init_") + which;
        Tensor dpre2 = tanh_backward(out, dout);
        acc_outer(params.g(base + "_W2"), dpre2, hid.data());
        acc_vec(params.g(base + "_b2"), dpre2);
        Tensor dhid({hid.size()});
        acc_matvec_t(dhid, params.p(base + "_W2"), dpre2);
        Tensor dpre1 = tanh_backward(hid, dhid);
        acc_outer(params.g(base + "_W1"), dpre1, fwd.init.input.data());
        acc_vec(params.g(base + "_b1"), dpre1);
    }
}

namespace {

struct Hypothesis {
    std::vector<int> ids;
    double logp = 0.0;
    DecoderState state;
    int prev_token = kBosId;
    bool done = false;
};

bool better(const Hypothesis& a, const Hypothesis& b) {
    if (a.logp != b.logp) return a.logp > b.logp;
    return a.ids < b.ids;
}

}  // namespace

std::vector<int> generate(const ImageRecord& rec, const DecoderParams& params,
                          const DecodeOptions& opts) {
    if (opts.beam < 1) throw Error("generate: beam width must be >= 1");
    if (opts.max_len < 1) throw Error("generate: max_len must be >= 1");
    const VariantConfig& variant = params.variant;
    const std::size_t k = static_cast<std::size_t>(opts.beam);

    bool has_s = false;
    const EmotionOneHot s_init = face_signal(rec, variant, opts.faceless, &has_s);
    const EmotionOneHot& s_step = opts.step_face_override ? *opts.step_face_override : s_init;

    const Tensor init_input = variant.s_in_init ? onehot_tensor(s_init)
                                                : mean_annotation(rec.annotations);

    Hypothesis start;
    start.state = init_state(init_input, params);
    std::vector<Hypothesis> beams{start};

    for (int step = 0; step < opts.max_len; ++step) {
        std::vector<Hypothesis> candidates;
        bool any_live = false;
        for (const Hypothesis& hyp : beams) {
            if (hyp.done) {
                candidates.push_back(hyp);
                continue;
            }
            any_live = true;
            const Tensor x = embed_row(params, hyp.prev_token);
            const AttentionResult att = attend(rec.annotations, hyp.state.h, params);
            const DecoderState next = lstm_step(x, hyp.state, att.context, s_step, params);
            const Tensor probs = word_distribution(next.h, params);
            for (std::size_t tok = 0; tok < probs.size(); ++tok) {
                Hypothesis cand;
                cand.logp = hyp.logp + std::log(std::max(probs[tok], kLogClamp));
                cand.ids = hyp.ids;
                if (static_cast<int>(tok) == kEosId) {
                    cand.done = true;
                } else {
                    cand.ids.push_back(static_cast<int>(tok));
                    cand.state = next;
                    cand.prev_token = static_cast<int>(tok);
                }
                candidates.push_back(std::move(cand));
            }
        }
        if (!any_live) break;
        std::sort(candidates.begin(), candidates.end(), better);
        if (candidates.size() > k) candidates.resize(k);
        beams = std::move(candidates);
    }

    std::sort(beams.begin(), beams.end(), better);
    return beams.front().ids;
}

}  // namespace facecap
