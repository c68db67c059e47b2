#include "facecap/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "facecap/errors.hpp"
#include "facecap/metrics.hpp"
#include "facecap/rng.hpp"

namespace fs = std::filesystem;

namespace facecap {

LrAction lr_schedule_update(const TrainState& state, int patience) {
    const auto& hist = state.meteor_history;
    const int n = static_cast<int>(hist.size());
    if (patience < 1 || n < patience + 1) return LrAction::Keep;
    double best_before = hist[0];
    for (int i = 1; i < n - patience; ++i) best_before = std::max(best_before, hist[i]);
    for (int i = n - patience; i < n; ++i)
        if (hist[static_cast<std::size_t>(i)] > best_before) return LrAction::Keep;
    return LrAction::HalveAndReload;
}

double train_epoch(const Dataset& ds, DecoderParams& model, AdamState& adam,
                   const TrainConfig& cfg, int epoch, double lr) {
    if (ds.train.empty()) throw Error("train_epoch: empty training split");
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t ri = 0; ri < ds.train.size(); ++ri)
        for (std::size_t ci = 0; ci < ds.train[ri].captions.size(); ++ci)
            pairs.emplace_back(ri, ci);

    Rng shuffle_rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(pairs);

    const ForwardOptions opts{cfg.faceless, cfg.reduction};
    const std::size_t batch = static_cast<std::size_t>(std::max(1, cfg.batch_size));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < pairs.size(); start += batch) {
        const std::size_t end = std::min(pairs.size(), start + batch);
        model.store.zero_grads();
        for (std::size_t k = start; k < end; ++k) {
            const ImageRecord& rec = ds.train[pairs[k].first];
            const auto& caption = rec.captions[pairs[k].second];
            ForwardResult fwd = forward_caption(rec, caption, model, opts);
            if (!std::isfinite(fwd.total_loss))
                throw NumericError("non-finite loss at image '" + rec.id + "' caption #" +
                                   std::to_string(pairs[k].second));
            backward_caption(rec, caption, fwd, model, opts);
            loss_sum += fwd.total_loss;
        }
        model.store.scale_grads(1.0 / static_cast<double>(end - start));
        adam_step(model.store, adam, lr);
    }
    return loss_sum / static_cast<double>(pairs.size());
}

double validation_meteor(const std::vector<ImageRecord>& split, const DecoderParams& model,
                         const Vocabulary& vocab, const TrainConfig& cfg) {
    if (split.empty()) return 0.0;
    std::vector<TokenSeq> cands;
    std::vector<std::vector<TokenSeq>> refs;
    DecodeOptions dopts;
    dopts.beam = 1;
    dopts.max_len = cfg.val_max_len;
    dopts.faceless = cfg.faceless;
    for (const auto& rec : split) {
        cands.push_back(vocab.decode(generate(rec, model, dopts)));
        std::vector<TokenSeq> r;
        for (const auto& cap : rec.captions) r.push_back(vocab.decode(cap));
        refs.push_back(std::move(r));
    }
    return meteor_lite(cands, refs);
}

// ---- checkpoint serialization ----------------------------------------------

namespace {

class Writer {
  public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary), path_(path) {
        if (!out_) throw CheckpointError("cannot open '" + path + "' for writing");
    }
    void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void u8(std::uint8_t x) { bytes(&x, 1); }
    void u16(std::uint16_t x) { put_le(x, 2); }
    void u32(std::uint32_t x) { put_le(x, 4); }
    void u64(std::uint64_t x) { put_le(x, 8); }
    void i32(std::int32_t x) { u32(static_cast<std::uint32_t>(x)); }
    void f64(double x) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, 8);
        u64(bits);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void tensor(const Tensor& t) {
        u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) u64(d);
        for (double x : t.values()) f64(x);
    }
    void close() {
        out_.close();
        if (!out_) throw CheckpointError("write error on '" + path_ + "'");
    }

  private:
    void put_le(std::uint64_t x, int n) {
        unsigned char buf[8];
        for (int i = 0; i < n; ++i) buf[i] = static_cast<unsigned char>((x >> (8 * i)) & 0xff);
        bytes(buf, static_cast<std::size_t>(n));
    }
    std::ofstream out_;
    std::string path_;
};

class Reader {
  public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw CheckpointError("cannot open checkpoint '" + path + "'");
    }
    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw CheckpointError("checkpoint '" + path_ + "' truncated at offset " +
                                  std::to_string(offset_));
        offset_ += n;
    }
    std::uint8_t u8() {
        std::uint8_t x;
        bytes(&x, 1);
        return x;
    }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
    std::uint64_t u64() { return get_le(8); }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() {
        std::uint64_t bits = u64();
        double x;
        std::memcpy(&x, &bits, 8);
        return x;
    }
    std::string str() {
        const std::uint32_t n = u32();
        if (n > (1u << 24))
            throw CheckpointError("checkpoint '" + path_ + "' corrupt string length at offset " +
                                  std::to_string(offset_));
        std::string s(n, '\0');
        if (n) bytes(s.data(), n);
        return s;
    }
    Tensor tensor() {
        const std::uint32_t rank = u32();
        if (rank > 4)
            throw CheckpointError("checkpoint '" + path_ + "' corrupt tensor rank at offset " +
                                  std::to_string(offset_));
        std::vector<std::size_t> shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<std::size_t>(u64()));
        Tensor t(shape);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = f64();
        return t;
    }
    std::size_t offset() const { return offset_; }
    const std::string& path() const { return path_; }

  private:
    std::uint64_t get_le(int n) {
        unsigned char buf[8];
        bytes(buf, static_cast<std::size_t>(n));
        std::uint64_t x = 0;
        for (int i = 0; i < n; ++i) x |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        return x;
    }
    std::ifstream in_;
    std::string path_;
    std::size_t offset_ = 0;
};

}  // namespace

std::string epoch_checkpoint_name(int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch_%04d.fckp", epoch);
    return buf;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    Writer w(path);
    w.bytes("FCKP", 4);
    w.u16(kCheckpointVersion);

    const TrainConfig& c = ckpt.config;
    w.f64(c.lr_init);
    w.f64(c.lr_min);
    w.i32(c.batch_size);
    w.i32(c.max_epochs);
    w.i32(c.plateau_patience);
    w.u64(c.seed);
    w.u8(c.reduction == LossReduction::Mean ? 0 : 1);
    w.u8(c.faceless == FacelessPolicy::Error ? 0 : 1);
    w.i32(c.val_max_len);
    w.f64(c.adam_beta1);
    w.f64(c.adam_beta2);
    w.f64(c.adam_eps);
    w.u8(c.variant.s_in_gates ? 1 : 0);
    w.u8(c.variant.s_in_init ? 1 : 0);
    w.u8(c.variant.face_loss_enabled ? 1 : 0);
    w.f64(c.variant.face_loss_weight);
    w.i32(c.dims.vocab);
    w.i32(c.dims.embed);
    w.i32(c.dims.hidden);
    w.i32(c.dims.annot);
    w.i32(c.dims.attn);
    w.i32(c.dims.face_hidden);

    w.u32(static_cast<std::uint32_t>(ckpt.model.store.count()));
    for (std::size_t i = 0; i < ckpt.model.store.count(); ++i) {
        const auto& e = ckpt.model.store.at(i);
        w.str(e.name);
        w.tensor(e.value);
    }

    w.u64(ckpt.adam.t);
    for (std::size_t i = 0; i < ckpt.adam.m.size(); ++i) {
        w.tensor(ckpt.adam.m[i]);
        w.tensor(ckpt.adam.v[i]);
    }

    const TrainState& st = ckpt.state;
    w.i32(st.epoch);
    w.f64(st.lr);
    w.u32(static_cast<std::uint32_t>(st.meteor_history.size()));
    for (double x : st.meteor_history) w.f64(x);
    w.f64(st.best_meteor);
    w.i32(st.best_epoch);
    w.str(st.best_checkpoint);

    const auto tokens = ckpt.vocab.tokens_in_id_order();
    w.u32(static_cast<std::uint32_t>(tokens.size()));
    for (const auto& t : tokens) w.str(t);
    w.close();
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "FCKP", 4) != 0)
        throw CheckpointError("file '" + path + "' is not a FCKP checkpoint (bad magic)");
    const std::uint16_t version = r.u16();
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint '" + path + "' has version " +
                              std::to_string(version) + "; expected " +
                              std::to_string(kCheckpointVersion));

    Checkpoint ckpt;
    TrainConfig& c = ckpt.config;
    c.lr_init = r.f64();
    c.lr_min = r.f64();
    c.batch_size = r.i32();
    c.max_epochs = r.i32();
    c.plateau_patience = r.i32();
    c.seed = r.u64();
    c.reduction = r.u8() == 0 ? LossReduction::Mean : LossReduction::Sum;
    c.faceless = r.u8() == 0 ? FacelessPolicy::Error : FacelessPolicy::Neutral;
    c.val_max_len = r.i32();
    c.adam_beta1 = r.f64();
    c.adam_beta2 = r.f64();
    c.adam_eps = r.f64();
    c.variant.s_in_gates = r.u8() != 0;
    c.variant.s_in_init = r.u8() != 0;
    c.variant.face_loss_enabled = r.u8() != 0;
    c.variant.face_loss_weight = r.f64();
    c.dims.vocab = r.i32();
    c.dims.embed = r.i32();
    c.dims.hidden = r.i32();
    c.dims.annot = r.i32();
    c.dims.attn = r.i32();
    c.dims.face_hidden = r.i32();

    ckpt.model.dims = c.dims;
    ckpt.model.variant = c.variant;
    const std::uint32_t n_params = r.u32();
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.str();
        Tensor value = r.tensor();
        Tensor& slot = ckpt.model.store.add(name, value.shape());
        slot = std::move(value);
    }

    ckpt.adam = AdamState::for_params(ckpt.model.store);
    ckpt.adam.beta1 = c.adam_beta1;
    ckpt.adam.beta2 = c.adam_beta2;
    ckpt.adam.eps = c.adam_eps;
    ckpt.adam.t = r.u64();
    for (std::uint32_t i = 0; i < n_params; ++i) {
        Tensor m = r.tensor();
        Tensor v = r.tensor();
        if (!m.same_shape(ckpt.adam.m[i]) || !v.same_shape(ckpt.adam.v[i]))
            throw CheckpointError("checkpoint '" + path + "' Adam moment shape mismatch at offset " +
                                  std::to_string(r.offset()));
        ckpt.adam.m[i] = std::move(m);
        ckpt.adam.v[i] = std::move(v);
    }

    TrainState& st = ckpt.state;
    st.epoch = r.i32();
    st.lr = r.f64();
    const std::uint32_t hist = r.u32();
    for (std::uint32_t i = 0; i < hist; ++i) st.meteor_history.push_back(r.f64());
    st.best_meteor = r.f64();
    st.best_epoch = r.i32();
    st.best_checkpoint = r.str();

    const std::uint32_t n_tokens = r.u32();
    std::vector<std::string> tokens;
    tokens.reserve(n_tokens);
    for (std::uint32_t i = 0; i < n_tokens; ++i) tokens.push_back(r.str());
    ckpt.vocab = Vocabulary::from_tokens_in_id_order(tokens);
    return ckpt;
}

Checkpoint fit(const Dataset& ds, const TrainConfig& cfg, const std::string& out_dir,
               const EpochCallback& on_epoch, const std::string& resume_path) {
    fs::create_directories(out_dir);

    Checkpoint run;
    if (!resume_path.empty()) {
        run = load_checkpoint(resume_path);
        if (run.config.dims.vocab != cfg.dims.vocab || run.config.dims.annot != cfg.dims.annot)
            throw CheckpointError("resume checkpoint dims do not match the dataset");
        run.config = cfg;  // control fields follow the caller; weights/state stay loaded
    } else {
        run.config = cfg;
        Rng rng(cfg.seed);
        run.model = DecoderParams(cfg.dims, cfg.variant, rng);
        run.adam = AdamState::for_params(run.model.store);
        run.adam.beta1 = cfg.adam_beta1;
        run.adam.beta2 = cfg.adam_beta2;
        run.adam.eps = cfg.adam_eps;
        run.state.lr = cfg.lr_init;
        run.vocab = ds.vocab;
    }

    for (int epoch = run.state.epoch + 1; epoch <= cfg.max_epochs; ++epoch) {
        const double lr_used = run.state.lr;
        const double loss = train_epoch(ds, run.model, run.adam, cfg, epoch, lr_used);
        const double meteor = validation_meteor(ds.val, run.model, ds.vocab, cfg);

        run.state.epoch = epoch;
        run.state.meteor_history.push_back(meteor);
        if (run.state.best_epoch == 0 || meteor > run.state.best_meteor) {
            run.state.best_meteor = meteor;
            run.state.best_epoch = epoch;
            run.state.best_checkpoint = epoch_checkpoint_name(epoch);
        }

        const LrAction action = lr_schedule_update(run.state, cfg.plateau_patience);
        if (action == LrAction::HalveAndReload) {
            run.state.lr = std::max(run.state.lr / 2.0, cfg.lr_min);
            Checkpoint best =
                load_checkpoint((fs::path(out_dir) / run.state.best_checkpoint).string());
            run.model = std::move(best.model);
            run.adam = std::move(best.adam);
        }

        save_checkpoint(run, (fs::path(out_dir) / epoch_checkpoint_name(epoch)).string());
        if (on_epoch) on_epoch({epoch, loss, meteor, lr_used});
    }

    if (run.state.best_epoch == 0) throw Error("fit: no epochs were run");
    return load_checkpoint((fs::path(out_dir) / run.state.best_checkpoint).string());
}

}  // namespace facecap
