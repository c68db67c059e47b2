#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "facecap/tensor.hpp"

namespace facecap {

inline constexpr int kNumEmotions = 7;

// Class order: happiness, sadness, fear, surprise, anger, disgust, neutral.
extern const std::array<const char*, kNumEmotions> kEmotionNames;
inline constexpr int kNeutralClass = 6;

// Reserved vocabulary ids.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumReservedIds = 4;

// Per-face softmax output over the seven emotion classes. Entries are in
// [0, 1] and sum to 1; rows read from disk are renormalized.
struct EmotionProbVector {
    std::array<double, kNumEmotions> probs{};
};

// One-hot aggregate of all faces in an image: argmax of the per-class column
// sums, ties broken toward the lowest class index.
struct EmotionOneHot {
    std::array<double, kNumEmotions> s{};
    int cls = 0;

    static EmotionOneHot of_class(int k);
};

enum class FacelessPolicy { Error, Neutral };

EmotionOneHot aggregate_faces(const std::vector<EmotionProbVector>& faces,
                              FacelessPolicy policy = FacelessPolicy::Error);

// One image: annotation grid [L x D], detected faces, encoded captions.
struct ImageRecord {
    std::string id;
    Tensor annotations;                    // [L x D]
    std::vector<EmotionProbVector> faces;  // may be empty
    std::vector<std::vector<int>> captions;  // each begins with BOS, ends with EOS
};

class Vocabulary {
  public:
    Vocabulary();

    // Tokens with training frequency >= min_count, ordered by descending
    // frequency then lexicographically, after the four reserved ids.
    static Vocabulary build(const std::vector<std::vector<std::string>>& captions, int min_count);

    int id(const std::string& token) const;  // kUnkId when absent
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(id_to_token_.size()); }
    bool contains(const std::string& token) const { return token_to_id_.count(token) != 0; }

    std::vector<int> encode(const std::vector<std::string>& tokens) const;
    // Inner tokens only; BOS/EOS are dropped, UNK decodes to its literal token.
    std::vector<std::string> decode(const std::vector<int>& ids) const;

    // For serialization: non-reserved tokens in id order.
    std::vector<std::string> tokens_in_id_order() const;
    static Vocabulary from_tokens_in_id_order(const std::vector<std::string>& tokens);

  private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

struct Dataset {
    std::vector<ImageRecord> train;
    std::vector<ImageRecord> val;
    std::vector<ImageRecord> test;
    Vocabulary vocab;

    std::size_t annotation_dim() const;
    const std::vector<ImageRecord>& split(const std::string& name) const;
};

// Parses the four input files and assembles the splits. The vocabulary is
// built from the training split only. Errors name the offending id, file, or
// line. Face rows are renormalized; a row further than 1e-4 from unit sum
// gets a stderr warning first.
Dataset load_dataset(const std::string& feature_path, const std::string& face_path,
                     const std::string& caption_path, const std::string& split_path,
                     int min_count);

// Canonical text form of a dataset, used by determinism checks and tests.
void dump_dataset(const Dataset& ds, std::ostream& out);

// Tokenizes on single spaces/tabs, skipping empty fields.
std::vector<std::string> split_tokens(const std::string& line);

}  // namespace facecap
