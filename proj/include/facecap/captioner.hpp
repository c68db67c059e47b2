#pragma once

#include <string>
#include <vector>

#include "facecap/corpus.hpp"
#include "facecap/nncore.hpp"

namespace facecap {

// Three architecture flags plus the face-loss weight. The five named presets:
//   baseline   (F,F,F)   face-step (T,T,F)   face-init (F,T,F)
//   face-cap-f (T,T,T)   face-cap-l (F,T,T)
struct VariantConfig {
    bool s_in_gates = false;
    bool s_in_init = false;
    bool face_loss_enabled = false;
    double face_loss_weight = 1.0;

    bool uses_faces() const { return s_in_gates || s_in_init || face_loss_enabled; }

    static VariantConfig preset(const std::string& name);
    static const std::vector<std::string>& preset_names();
};

struct ModelDims {
    int vocab = 0;        // V
    int embed = 0;        // m
    int hidden = 0;       // d
    int annot = 0;        // D
    int attn = 0;         // attention MLP width; 0 means "use hidden"
    int face_hidden = 32;

    int attn_dim() const { return attn > 0 ? attn : hidden; }
    int init_input_dim(const VariantConfig& v) const { return v.s_in_init ? kNumEmotions : annot; }
};

// All learned tensors for one decoder, registered in a fixed order so the
// optimizer, checkpoints, and initialization draws are reproducible.
struct DecoderParams {
    ModelDims dims;
    VariantConfig variant;
    ParamStore store;

    DecoderParams() = default;
    DecoderParams(const ModelDims& d, const VariantConfig& v, Rng& rng);

    const Tensor& p(const std::string& name) const { return store.value(name); }
    Tensor& g(const std::string& name) { return store.grad(name); }
};

struct DecoderState {
    Tensor c;  // [d]
    Tensor h;  // [d]
    int t = 0;
};

// Soft attention over the L annotation vectors:
//   e_l = v . tanh(W a_l + U h_prev + b),  alpha = softmax(e),  z = sum alpha_l a_l
struct AttentionResult {
    Tensor alpha;      // [L]
    Tensor context;    // [D]
    Tensor score_tanh; // [L x A], kept for backward
};
AttentionResult attend(const Tensor& annotations, const Tensor& h_prev,
                       const DecoderParams& params);

// Two independent single-hidden-layer MLPs (width d, tanh, final tanh) map the
// init input (the one-hot s, or the mean annotation for the baseline) to c_0
// and h_0.
struct InitTrace {
    Tensor input;     // [q]
    Tensor hidden_c;  // [d]
    Tensor hidden_h;  // [d]
};
DecoderState init_state(const Tensor& init_input, const DecoderParams& params,
                        InitTrace* trace = nullptr);

Tensor mean_annotation(const Tensor& annotations);

struct GateTrace {
    Tensor i, f, o, g;  // post-activation gates
    Tensor c, tanh_c, h;
};
// One cell update. The facial term S s enters each gate iff s_in_gates.
DecoderState lstm_step(const Tensor& x_prev, const DecoderState& prev, const Tensor& z,
                       const EmotionOneHot& s, const DecoderParams& params,
                       GateTrace* trace = nullptr);

Tensor word_distribution(const Tensor& h, const DecoderParams& params);
Tensor face_distribution(const Tensor& h, const DecoderParams& params, Tensor* hidden = nullptr);

struct StepTrace {
    Tensor alpha;       // [L]
    Tensor context;     // [D]
    Tensor word_probs;  // [V]
    Tensor face_probs;  // [7], empty when face loss disabled
    double word_nll = 0.0;
    double face_nll = 0.0;

    // cached intermediates for backward
    int prev_token = 0;
    int target_token = 0;
    Tensor embed;       // [m]
    Tensor score_tanh;  // [L x A]
    GateTrace gates;
    Tensor face_hidden; // [fh]
};

enum class LossReduction { Mean, Sum };

struct ForwardOptions {
    FacelessPolicy faceless = FacelessPolicy::Error;
    LossReduction reduction = LossReduction::Mean;
};

struct ForwardResult {
    double total_loss = 0.0;
    double word_loss = 0.0;  // reduced over steps
    double face_loss = 0.0;  // reduced over steps, before the lambda weight
    std::vector<StepTrace> steps;
    DecoderState state0;
    InitTrace init;
    EmotionOneHot s;
    bool has_s = false;
};

// Teacher-forced pass over caption = [BOS, w_1, ..., EOS]; T = len-1 steps.
// total = word term + lambda * face term (second only when enabled).
ForwardResult forward_caption(const ImageRecord& rec, const std::vector<int>& caption,
                              const DecoderParams& params, const ForwardOptions& opts = {});

// Backprop through the unrolled sequence; accumulates into params.store grads
// (callers zero them). Parameters off the active path (S_* without s_in_gates,
// the face head without the face loss) receive exactly zero.
void backward_caption(const ImageRecord& rec, const std::vector<int>& caption,
                      const ForwardResult& fwd, DecoderParams& params,
                      const ForwardOptions& opts = {});

struct DecodeOptions {
    int beam = 1;  // 1 = greedy
    int max_len = 20;
    FacelessPolicy faceless = FacelessPolicy::Error;
    // Test hook: feed a different s to the per-step gates than the one used at
    // initialization.
    const EmotionOneHot* step_face_override = nullptr;
};

// Returns generated inner token ids (no BOS/EOS). Beam keeps the k best
// partial sequences by summed log-probability; ties break toward the
// lexicographically smallest id sequence. beam=1 reduces to greedy.
std::vector<int> generate(const ImageRecord& rec, const DecoderParams& params,
                          const DecodeOptions& opts = {});

}  // namespace facecap
