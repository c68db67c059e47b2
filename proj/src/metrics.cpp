#include "facecap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <unordered_map>

#include "facecap/errors.hpp"

namespace facecap {

namespace {

constexpr double kPrecisionFloor = 1e-9;

void check_inputs(const std::vector<TokenSeq>& candidates,
                  const std::vector<std::vector<TokenSeq>>& references) {
    if (candidates.empty()) throw Error("metrics: empty candidate set");
    if (candidates.size() != references.size())
        throw Error("metrics: candidate/reference count mismatch");
    for (const auto& refs : references)
        if (refs.empty()) throw Error("metrics: image with no references");
}

// n-grams keyed by tokens joined with an unprintable separator.
std::unordered_map<std::string, long long> ngram_counts(const TokenSeq& tokens, int n) {
    std::unordered_map<std::string, long long> counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (int j = 1; j < n; ++j) {
            key.push_back('\x1f');
            key += tokens[i + static_cast<std::size_t>(j)];
        }
        ++counts[key];
    }
    return counts;
}

}  // namespace

std::vector<double> bleu(const std::vector<TokenSeq>& candidates,
                         const std::vector<std::vector<TokenSeq>>& references, int max_n) {
    check_inputs(candidates, references);
    if (max_n < 1) throw Error("bleu: max_n must be >= 1");

    std::vector<long long> clipped(static_cast<std::size_t>(max_n), 0);
    std::vector<long long> totals(static_cast<std::size_t>(max_n), 0);
    long long cand_len = 0, eff_ref_len = 0;

    for (std::size_t img = 0; img < candidates.size(); ++img) {
        const TokenSeq& cand = candidates[img];
        cand_len += static_cast<long long>(cand.size());

        // effective reference length: closest to the candidate, ties shorter
        long long best_ref = static_cast<long long>(references[img][0].size());
        for (const auto& ref : references[img]) {
            const long long rl = static_cast<long long>(ref.size());
            const long long cl = static_cast<long long>(cand.size());
            if (std::llabs(rl - cl) < std::llabs(best_ref - cl) ||
                (std::llabs(rl - cl) == std::llabs(best_ref - cl) && rl < best_ref))
                best_ref = rl;
        }
        eff_ref_len += best_ref;

        for (int n = 1; n <= max_n; ++n) {
            auto cand_counts = ngram_counts(cand, n);
            std::unordered_map<std::string, long long> max_ref;
            for (const auto& ref : references[img])
                for (const auto& [g, c] : ngram_counts(ref, n))
                    max_ref[g] = std::max(max_ref[g], c);
            long long total = 0, match = 0;
            for (const auto& [g, c] : cand_counts) {
                total += c;
                auto it = max_ref.find(g);
                if (it != max_ref.end()) match += std::min(c, it->second);
            }
            clipped[static_cast<std::size_t>(n - 1)] += match;
            totals[static_cast<std::size_t>(n - 1)] += total;
        }
    }

    double bp = 1.0;
    if (cand_len == 0)
        bp = 0.0;
    else if (cand_len <= eff_ref_len)
        bp = std::exp(1.0 - static_cast<double>(eff_ref_len) / static_cast<double>(cand_len));

    std::vector<double> scores;
    scores.reserve(static_cast<std::size_t>(max_n));
    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        const long long tot = totals[static_cast<std::size_t>(n - 1)];
        double p = tot > 0 ? static_cast<double>(clipped[static_cast<std::size_t>(n - 1)]) /
                                 static_cast<double>(tot)
                           : 0.0;
        log_sum += std::log(std::max(p, kPrecisionFloor));
        scores.push_back(bp * std::exp(log_sum / n));
    }
    return scores;
}

namespace {

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
    const std::size_t n = a.size(), m = b.size();
    if (n == 0 || m == 0) return 0;
    std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

}  // namespace

double rouge_l(const std::vector<TokenSeq>& candidates,
               const std::vector<std::vector<TokenSeq>>& references) {
    check_inputs(candidates, references);
    constexpr double beta2 = 1.2 * 1.2;
    double sum = 0.0;
    for (std::size_t img = 0; img < candidates.size(); ++img) {
        const TokenSeq& cand = candidates[img];
        double best = 0.0;
        for (const auto& ref : references[img]) {
            const std::size_t lcs = lcs_length(cand, ref);
            if (lcs == 0 || cand.empty() || ref.empty()) continue;
            const double p = static_cast<double>(lcs) / static_cast<double>(cand.size());
            const double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
            const double f = (1.0 + beta2) * p * r / (r + beta2 * p);
            best = std::max(best, f);
        }
        sum += best;
    }
    return sum / static_cast<double>(candidates.size());
}

namespace {

using Counts = std::unordered_map<std::string, long long>;

bool same_multiset(const Counts& a, const Counts& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [g, c] : a) {
        auto it = b.find(g);
        if (it == b.end() || it->second != c) return false;
    }
    return true;
}

}  // namespace

double cider(const std::vector<TokenSeq>& candidates,
             const std::vector<std::vector<TokenSeq>>& references) {
    check_inputs(candidates, references);
    constexpr int kMaxN = 4;
    const double num_images = static_cast<double>(candidates.size());
    const double log_images = std::log(num_images);

    // document frequency per order: images whose reference set contains g
    std::vector<Counts> df(kMaxN);
    for (const auto& refs : references) {
        for (int n = 1; n <= kMaxN; ++n) {
            std::unordered_set<std::string> seen;
            for (const auto& ref : refs)
                for (const auto& [g, c] : ngram_counts(ref, n)) seen.insert(g);
            for (const auto& g : seen) ++df[static_cast<std::size_t>(n - 1)][g];
        }
    }
    auto idf = [&](int n, const std::string& g) {
        auto it = df[static_cast<std::size_t>(n - 1)].find(g);
        const double d = it == df[static_cast<std::size_t>(n - 1)].end()
                             ? 1.0
                             : static_cast<double>(std::max<long long>(1, it->second));
        return log_images - std::log(d);
    };

    double corpus_sum = 0.0;
    for (std::size_t img = 0; img < candidates.size(); ++img) {
        double image_score = 0.0;
        for (int n = 1; n <= kMaxN; ++n) {
            const Counts cand_counts = ngram_counts(candidates[img], n);
            std::unordered_map<std::string, double> cand_vec;
            double cand_norm2 = 0.0;
            for (const auto& [g, c] : cand_counts) {
                const double w = static_cast<double>(c) * idf(n, g);
                cand_vec[g] = w;
                cand_norm2 += w * w;
            }
            double ref_avg = 0.0;
            for (const auto& ref : references[img]) {
                const Counts ref_counts = ngram_counts(ref, n);
                double dot = 0.0, ref_norm2 = 0.0;
                for (const auto& [g, c] : ref_counts) {
                    const double w = static_cast<double>(c) * idf(n, g);
                    ref_norm2 += w * w;
                    auto it = cand_vec.find(g);
                    if (it != cand_vec.end()) dot += it->second * w;
                }
                double sim;
                if (cand_norm2 == 0.0 || ref_norm2 == 0.0)
                    sim = same_multiset(cand_counts, ref_counts) ? 1.0 : 0.0;
                else
                    sim = dot / std::sqrt(cand_norm2 * ref_norm2);
                ref_avg += sim;
            }
            image_score += ref_avg / static_cast<double>(references[img].size());
        }
        corpus_sum += 10.0 * image_score / kMaxN;
    }
    return corpus_sum / num_images;
}

std::string suffix_stem(const std::string& token) {
    static const char* kSuffixes[] = {"ing", "ed", "es", "ly", "e", "s"};
    for (const char* suf : kSuffixes) {
        const std::size_t n = std::string(suf).size();
        if (token.size() >= n + 3 && token.compare(token.size() - n, n, suf) == 0)
            return token.substr(0, token.size() - n);
    }
    return token;
}

namespace {

double meteor_pair(const TokenSeq& cand, const TokenSeq& ref) {
    if (cand.empty() || ref.empty()) return 0.0;
    std::vector<int> cand_to_ref(cand.size(), -1);
    std::vector<bool> ref_used(ref.size(), false);

    // stage 1: exact matches, leftmost-first
    for (std::size_t i = 0; i < cand.size(); ++i)
        for (std::size_t j = 0; j < ref.size(); ++j)
            if (!ref_used[j] && cand[i] == ref[j]) {
                cand_to_ref[i] = static_cast<int>(j);
                ref_used[j] = true;
                break;
            }
    // stage 2: suffix-stem matches over what remains
    for (std::size_t i = 0; i < cand.size(); ++i) {
        if (cand_to_ref[i] >= 0) continue;
        const std::string cs = suffix_stem(cand[i]);
        for (std::size_t j = 0; j < ref.size(); ++j)
            if (!ref_used[j] && cs == suffix_stem(ref[j])) {
                cand_to_ref[i] = static_cast<int>(j);
                ref_used[j] = true;
                break;
            }
    }

    long long m = 0;
    int chunks = 0;
    int prev_i = -2, prev_j = -2;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        if (cand_to_ref[i] < 0) continue;
        ++m;
        if (static_cast<int>(i) != prev_i + 1 || cand_to_ref[i] != prev_j + 1) ++chunks;
        prev_i = static_cast<int>(i);
        prev_j = cand_to_ref[i];
    }
    if (m == 0) return 0.0;
    const double md = static_cast<double>(m);
    const double p = md / static_cast<double>(cand.size());
    const double r = md / static_cast<double>(ref.size());
    const double f = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(chunks) / md;
    return f * (1.0 - 0.5 * frag * frag * frag);
}

}  // namespace

double meteor_lite(const std::vector<TokenSeq>& candidates,
                   const std::vector<std::vector<TokenSeq>>& references) {
    check_inputs(candidates, references);
    double sum = 0.0;
    for (std::size_t img = 0; img < candidates.size(); ++img) {
        double best = 0.0;
        for (const auto& ref : references[img])
            best = std::max(best, meteor_pair(candidates[img], ref));
        sum += best;
    }
    return sum / static_cast<double>(candidates.size());
}

MetricReport compute_metrics(const std::vector<TokenSeq>& candidates,
                             const std::vector<std::vector<TokenSeq>>& references) {
    MetricReport report;
    const auto b = bleu(candidates, references, 4);
    report.bleu1 = b[0];
    report.bleu2 = b[1];
    report.bleu3 = b[2];
    report.bleu4 = b[3];
    report.rouge_l = rouge_l(candidates, references);
    report.cider = cider(candidates, references);
    report.meteor_lite = meteor_lite(candidates, references);
    return report;
}

void write_report_files(const MetricReport& report, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    char buf[512];

    std::ofstream kv(fs::path(out_dir) / "report.txt");
    std::snprintf(buf, sizeof buf,
                  "bleu1=%.2f\nbleu2=%.2f\nbleu3=%.2f\nbleu4=%.2f\nmeteor_lite=%.2f\n"
                  "rouge_l=%.2f\ncider=%.2f\n",
                  100.0 * report.bleu1, 100.0 * report.bleu2, 100.0 * report.bleu3,
                  100.0 * report.bleu4, 100.0 * report.meteor_lite, 100.0 * report.rouge_l,
                  100.0 * report.cider);
    kv << buf;

    std::ofstream table(fs::path(out_dir) / "report_table.txt");
    table << "B-1\tB-2\tB-3\tB-4\tMETEOR\tROUGE-L\tCIDEr\n";
    std::snprintf(buf, sizeof buf, "%.2f\t%.2f\t%.2f\t%.2f\t%.2f\t%.2f\t%.2f\n",
                  100.0 * report.bleu1, 100.0 * report.bleu2, 100.0 * report.bleu3,
                  100.0 * report.bleu4, 100.0 * report.meteor_lite, 100.0 * report.rouge_l,
                  100.0 * report.cider);
    table << buf;
}

int VerbStats::rank_of(const std::string& verb) const {
    for (std::size_t i = 0; i < by_rank.size(); ++i)
        if (by_rank[i].first == verb) return static_cast<int>(i) + 1;
    return 0;
}

VerbStats verb_entropy(const std::vector<TokenSeq>& captions,
                       const std::unordered_set<std::string>& lexicon, int top_k) {
    if (lexicon.empty()) throw Error("verb_entropy: empty lexicon");
    std::map<std::string, long long> counts;
    long long total = 0;
    for (const auto& caption : captions)
        for (const auto& tok : caption)
            if (lexicon.count(tok)) {
                ++counts[tok];
                ++total;
            }

    VerbStats stats;
    stats.top_k = top_k;
    stats.total = total;
    if (total == 0) {
        std::cerr << "warning: no verb occurrences found; entropy reported as 0\n";
        return stats;
    }
    stats.by_rank.assign(counts.begin(), counts.end());
    std::sort(stats.by_rank.begin(), stats.by_rank.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    double entropy = 0.0;
    for (const auto& [verb, c] : stats.by_rank) {
        const double p = static_cast<double>(c) / static_cast<double>(total);
        entropy -= p * std::log2(p);
    }
    stats.entropy_bits = entropy;
    long long top_sum = 0;
    for (std::size_t i = 0; i < stats.by_rank.size() && i < static_cast<std::size_t>(top_k); ++i)
        top_sum += stats.by_rank[i].second;
    stats.topk_mass = static_cast<double>(top_sum) / static_cast<double>(total);
    return stats;
}

}  // namespace facecap
