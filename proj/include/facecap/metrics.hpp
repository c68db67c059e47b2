#pragma once

#include <string>
#include <unordered_set>
#include <vector>

namespace facecap {

using TokenSeq = std::vector<std::string>;

// Internal scale: [0,1] everywhere except cider in [0,10]. Reports multiply
// by 100.
struct MetricReport {
    double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
    double meteor_lite = 0;
    double rouge_l = 0;
    double cider = 0;
};

// Corpus-level BLEU-1..max_n: modified (clipped) n-gram precision, geometric
// mean over orders 1..k with a 1e-9 floor on zero precisions, times the
// brevity penalty. candidates[i] pairs with references[i].
std::vector<double> bleu(const std::vector<TokenSeq>& candidates,
                         const std::vector<std::vector<TokenSeq>>& references, int max_n = 4);

// LCS F-measure with beta = 1.2; max over references, mean over the corpus.
double rouge_l(const std::vector<TokenSeq>& candidates,
               const std::vector<std::vector<TokenSeq>>& references);

// Original CIDEr (not CIDEr-D): TF-IDF n-gram cosine for n = 1..4, averaged
// over orders and references, x10. Document frequency counts images whose
// reference set contains the n-gram; unseen n-grams keep full idf weight.
// When a weighted vector has zero norm the cosine is defined as 1 if the raw
// n-gram count multisets coincide (identical captions on degenerate corpora)
// and 0 otherwise.
double cider(const std::vector<TokenSeq>& candidates,
             const std::vector<std::vector<TokenSeq>>& references);

// WordNet-free METEOR substitute: exact then suffix-stem unigram alignment,
// harmonic mean with recall weighted 9:1, fragmentation penalty
// 0.5 * (chunks / matches)^3. Max over references, mean over the corpus.
double meteor_lite(const std::vector<TokenSeq>& candidates,
                   const std::vector<std::vector<TokenSeq>>& references);

// Strips one of "ing", "ed", "es", "ly", "e", "s" when at least three
// characters remain.
std::string suffix_stem(const std::string& token);

MetricReport compute_metrics(const std::vector<TokenSeq>& candidates,
                             const std::vector<std::vector<TokenSeq>>& references);

// Writes report.txt (key=value) and report_table.txt (Table-1 column order),
// values x100 with 2 decimals.
void write_report_files(const MetricReport& report, const std::string& out_dir);

struct VerbStats {
    // (verb, count) sorted by descending count, ties lexicographic; the rank
    // of entry i is i + 1.
    std::vector<std::pair<std::string, long long>> by_rank;
    long long total = 0;
    double entropy_bits = 0;
    int top_k = 4;
    double topk_mass = 0;

    int rank_of(const std::string& verb) const;  // 0 when absent
};

// MLE verb distribution over tokens found in the lexicon; Shannon entropy in
// bits. Empty occurrence set yields entropy 0 (with a stderr warning).
VerbStats verb_entropy(const std::vector<TokenSeq>& captions,
                       const std::unordered_set<std::string>& lexicon, int top_k = 4);

}  // namespace facecap
