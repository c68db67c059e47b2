#include "facecap/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "facecap/errors.hpp"

namespace facecap {

const std::array<const char*, kNumEmotions> kEmotionNames = {
    "happiness", "sadness", "fear", "surprise", "anger", "disgust", "neutral"};

namespace {
const char* kPadTok = "<pad>";
const char* kBosTok = "<bos>";
const char* kEosTok = "<eos>";
const char* kUnkTok = "<unk>";
}  // namespace

EmotionOneHot EmotionOneHot::of_class(int k) {
    if (k < 0 || k >= kNumEmotions) throw Error("emotion class index out of range");
    EmotionOneHot oh;
    oh.cls = k;
    oh.s[static_cast<std::size_t>(k)] = 1.0;
    return oh;
}

EmotionOneHot aggregate_faces(const std::vector<EmotionProbVector>& faces,
                              FacelessPolicy policy) {
    if (faces.empty()) {
        if (policy == FacelessPolicy::Error)
            throw CorpusError("aggregate_faces: no faces in sample");
        return EmotionOneHot::of_class(kNeutralClass);
    }
    std::array<double, kNumEmotions> col_sum{};
    for (const auto& f : faces)
        for (int k = 0; k < kNumEmotions; ++k) col_sum[k] += f.probs[k];
    int best = 0;
    for (int k = 1; k < kNumEmotions; ++k)
        if (col_sum[k] > col_sum[best]) best = k;  // ties stay at the lower index
    return EmotionOneHot::of_class(best);
}

Vocabulary::Vocabulary() {
    id_to_token_ = {kPadTok, kBosTok, kEosTok, kUnkTok};
    for (int i = 0; i < kNumReservedIds; ++i) token_to_id_.emplace(id_to_token_[i], i);
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& captions,
                             int min_count) {
    if (min_count < 1) throw Error("vocabulary: min_count must be >= 1");
    if (captions.empty()) throw CorpusError("vocabulary: empty caption set");
    std::map<std::string, long long> freq;
    for (const auto& caption : captions)
        for (const auto& tok : caption) ++freq[tok];

    std::vector<std::pair<std::string, long long>> kept;
    for (const auto& [tok, n] : freq)
        if (n >= min_count) kept.emplace_back(tok, n);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary v;
    for (const auto& [tok, n] : kept) {
        (void)n;
        v.token_to_id_.emplace(tok, static_cast<int>(v.id_to_token_.size()));
        v.id_to_token_.push_back(tok);
    }
    return v;
}

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw Error("vocabulary: id out of range");
    return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size() + 2);
    ids.push_back(kBosId);
    for (const auto& tok : tokens) ids.push_back(id(tok));
    ids.push_back(kEosId);
    return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id == kBosId || id == kEosId) continue;
        out.push_back(token(id));
    }
    return out;
}

std::vector<std::string> Vocabulary::tokens_in_id_order() const {
    return std::vector<std::string>(id_to_token_.begin() + kNumReservedIds, id_to_token_.end());
}

Vocabulary Vocabulary::from_tokens_in_id_order(const std::vector<std::string>& tokens) {
    Vocabulary v;
    for (const auto& tok : tokens) {
        v.token_to_id_.emplace(tok, static_cast<int>(v.id_to_token_.size()));
        v.id_to_token_.push_back(tok);
    }
    return v;
}

std::size_t Dataset::annotation_dim() const {
    for (const auto* s : {&train, &val, &test})
        if (!s->empty()) return s->front().annotations.dim(1);
    return 0;
}

const std::vector<ImageRecord>& Dataset::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw Error("unknown split '" + name + "'");
}

std::vector<std::string> split_tokens(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ' ' || c == '\t' || c == '\r') {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

namespace {

struct LineReader {
    std::ifstream in;
    std::string path;
    std::size_t lineno = 0;

    explicit LineReader(const std::string& p) : in(p), path(p) {
        if (!in) throw CorpusError("cannot open file '" + p + "'");
    }

    bool next(std::string& line) {
        if (!std::getline(in, line)) return false;
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw CorpusError(path + ":" + std::to_string(lineno) + ": " + what);
    }
};

double parse_real(const std::string& tok, const LineReader& r) {
    try {
        std::size_t pos = 0;
        double x = std::stod(tok, &pos);
        if (pos != tok.size() || !std::isfinite(x))
            throw std::invalid_argument("bad");
        return x;
    } catch (const std::exception&) {
        throw CorpusError(r.path + ":" + std::to_string(r.lineno) + ": malformed real '" + tok +
                          "'");
    }
}

long parse_int(const std::string& tok, const LineReader& r) {
    try {
        std::size_t pos = 0;
        long x = std::stol(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument("bad");
        return x;
    } catch (const std::exception&) {
        throw CorpusError(r.path + ":" + std::to_string(r.lineno) + ": malformed integer '" +
                          tok + "'");
    }
}

void expect_header(LineReader& r, const std::string& magic) {
    std::string line;
    if (!r.next(line) || line != magic) r.fail("expected header '" + magic + "'");
}

std::map<std::string, Tensor> load_features(const std::string& path, std::size_t& annot_dim) {
    LineReader r(path);
    expect_header(r, "FACECAP-FEAT 1");
    std::map<std::string, Tensor> out;
    std::string line;
    while (r.next(line)) {
        if (line.empty()) continue;
        auto head = split_tokens(line);
        if (head.size() != 3) r.fail("expected '<id> <L> <D>'");
        const std::string& id = head[0];
        long L = parse_int(head[1], r), D = parse_int(head[2], r);
        if (L < 1 || D < 1) r.fail("L and D must be >= 1");
        if (out.count(id)) r.fail("duplicate feature block for id '" + id + "'");
        if (annot_dim == 0)
            annot_dim = static_cast<std::size_t>(D);
        else if (annot_dim != static_cast<std::size_t>(D))
            r.fail("feature dimension mismatch for id '" + id + "': D=" + std::to_string(D) +
                   " but earlier images have D=" + std::to_string(annot_dim));
        Tensor a({static_cast<std::size_t>(L), static_cast<std::size_t>(D)});
        for (long row = 0; row < L; ++row) {
            if (!r.next(line)) r.fail("unexpected end of file inside feature block '" + id + "'");
            auto toks = split_tokens(line);
            if (toks.size() != static_cast<std::size_t>(D))
                r.fail("expected " + std::to_string(D) + " values, got " +
                       std::to_string(toks.size()));
            for (long c = 0; c < D; ++c)
                a.at(static_cast<std::size_t>(row), static_cast<std::size_t>(c)) =
                    parse_real(toks[static_cast<std::size_t>(c)], r);
        }
        out.emplace(id, std::move(a));
    }
    return out;
}

std::map<std::string, std::vector<EmotionProbVector>> load_faces(const std::string& path) {
    LineReader r(path);
    expect_header(r, "FACECAP-FACE 1");
    std::map<std::string, std::vector<EmotionProbVector>> out;
    std::string line;
    while (r.next(line)) {
        if (line.empty()) continue;
        auto head = split_tokens(line);
        if (head.size() != 2) r.fail("expected '<id> <n>'");
        const std::string& id = head[0];
        long n = parse_int(head[1], r);
        if (n < 0) r.fail("face count must be >= 0");
        if (out.count(id)) r.fail("duplicate face block for id '" + id + "'");
        std::vector<EmotionProbVector> faces;
        faces.reserve(static_cast<std::size_t>(n));
        for (long i = 0; i < n; ++i) {
            if (!r.next(line)) r.fail("unexpected end of file inside face block '" + id + "'");
            auto toks = split_tokens(line);
            if (toks.size() != kNumEmotions)
                r.fail("expected " + std::to_string(kNumEmotions) + " probabilities, got " +
                       std::to_string(toks.size()));
            EmotionProbVector f;
            double sum = 0.0;
            for (int k = 0; k < kNumEmotions; ++k) {
                double p = parse_real(toks[static_cast<std::size_t>(k)], r);
                if (p < 0.0) r.fail("negative probability for id '" + id + "'");
                f.probs[static_cast<std::size_t>(k)] = p;
                sum += p;
            }
            if (sum <= 0.0) r.fail("face probability row sums to zero for id '" + id + "'");
            if (std::fabs(sum - 1.0) > 1e-4)
                std::cerr << "warning: " << path << ":" << r.lineno << ": face row for id '" << id
                          << "' sums to " << sum << "; renormalizing\n";
            for (auto& p : f.probs) p /= sum;
            faces.push_back(f);
        }
        out.emplace(id, std::move(faces));
    }
    return out;
}

std::map<std::string, std::vector<std::vector<std::string>>> load_captions(
    const std::string& path) {
    LineReader r(path);
    std::map<std::string, std::vector<std::vector<std::string>>> out;
    std::string line;
    while (r.next(line)) {
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) r.fail("expected '<id>\\t<tokens>'");
        std::string id = line.substr(0, tab);
        if (id.empty()) r.fail("empty image id");
        auto tokens = split_tokens(line.substr(tab + 1));
        if (tokens.empty()) r.fail("caption for id '" + id + "' has no tokens");
        out[id].push_back(std::move(tokens));
    }
    return out;
}

std::map<std::string, std::string> load_splits(const std::string& path,
                                               std::vector<std::string>& order) {
    LineReader r(path);
    std::map<std::string, std::string> out;
    std::string line;
    while (r.next(line)) {
        if (line.empty()) continue;
        auto toks = split_tokens(line);
        if (toks.size() != 2) r.fail("expected '<id> <train|val|test>'");
        if (toks[1] != "train" && toks[1] != "val" && toks[1] != "test")
            r.fail("unknown split '" + toks[1] + "'");
        if (out.count(toks[0]))
            r.fail("duplicate split assignment for id '" + toks[0] + "'");
        out.emplace(toks[0], toks[1]);
        order.push_back(toks[0]);
    }
    return out;
}

}  // namespace

Dataset load_dataset(const std::string& feature_path, const std::string& face_path,
                     const std::string& caption_path, const std::string& split_path,
                     int min_count) {
    std::size_t annot_dim = 0;
    auto features = load_features(feature_path, annot_dim);
    auto faces = load_faces(face_path);
    auto captions = load_captions(caption_path);
    std::vector<std::string> split_order;
    auto splits = load_splits(split_path, split_order);
    if (splits.empty()) throw CorpusError(split_path + ": no split assignments");

    // Vocabulary comes from training captions only.
    std::vector<std::vector<std::string>> train_captions;
    for (const auto& id : split_order) {
        if (splits.at(id) != "train") continue;
        auto it = captions.find(id);
        if (it == captions.end())
            throw CorpusError("id '" + id + "' listed in " + split_path + " is missing from " +
                              caption_path);
        for (const auto& c : it->second) train_captions.push_back(c);
    }
    if (train_captions.empty())
        throw CorpusError(split_path + ": training split has no captions");
    Vocabulary vocab = Vocabulary::build(train_captions, min_count);

    Dataset ds;
    ds.vocab = vocab;
    for (const auto& id : split_order) {
        auto fit = features.find(id);
        if (fit == features.end())
            throw CorpusError("id '" + id + "' listed in " + split_path + " is missing from " +
                              feature_path);
        auto face_it = faces.find(id);
        if (face_it == faces.end())
            throw CorpusError("id '" + id + "' listed in " + split_path + " is missing from " +
                              face_path);
        auto cap_it = captions.find(id);
        if (cap_it == captions.end())
            throw CorpusError("id '" + id + "' listed in " + split_path + " is missing from " +
                              caption_path);
        ImageRecord rec;
        rec.id = id;
        rec.annotations = fit->second;
        rec.faces = face_it->second;
        for (const auto& tokens : cap_it->second) rec.captions.push_back(vocab.encode(tokens));
        const std::string& s = splits.at(id);
        if (s == "train")
            ds.train.push_back(std::move(rec));
        else if (s == "val")
            ds.val.push_back(std::move(rec));
        else
            ds.test.push_back(std::move(rec));
    }
    return ds;
}

namespace {

void dump_record(const ImageRecord& rec, std::ostream& out) {
    char buf[32];
    out << rec.id << " L=" << rec.annotations.dim(0) << " D=" << rec.annotations.dim(1) << "\n";
    for (double x : rec.annotations.values()) {
        std::snprintf(buf, sizeof buf, "%.17g ", x);
        out << buf;
    }
    out << "\nfaces " << rec.faces.size() << "\n";
    for (const auto& f : rec.faces) {
        for (double p : f.probs) {
            std::snprintf(buf, sizeof buf, "%.17g ", p);
            out << buf;
        }
        out << "\n";
    }
    out << "captions " << rec.captions.size() << "\n";
    for (const auto& c : rec.captions) {
        for (int id : c) out << id << " ";
        out << "\n";
    }
}

}  // namespace

void dump_dataset(const Dataset& ds, std::ostream& out) {
    out << "vocab " << ds.vocab.size() << "\n";
    for (int i = 0; i < ds.vocab.size(); ++i) out << i << " " << ds.vocab.token(i) << "\n";
    for (const auto& [name, split] :
         {std::pair<const char*, const std::vector<ImageRecord>*>{"train", &ds.train},
          {"val", &ds.val},
          {"test", &ds.test}}) {
        out << "split " << name << " " << split->size() << "\n";
        for (const auto& rec : *split) dump_record(rec, out);
    }
}

}  // namespace facecap
