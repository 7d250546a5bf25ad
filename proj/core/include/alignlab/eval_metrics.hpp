#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace alignlab {

struct RetrievalResult {
    std::map<std::int64_t, double> image_to_text;  // k -> recall
    std::map<std::int64_t, double> text_to_image;
};

/// Rank-based recall over a square similarity matrix whose diagonal holds the
/// matched pairs. Ties rank by lowest column index. Descending order.
RetrievalResult recall_at_k(std::span<const double> similarity, std::int64_t n,
                            std::span<const std::int64_t> ks);

/// Prompt-ensembled zero-shot classification: each class scores as the cosine
/// of the image embedding with the renormalized mean of its M L2-normalized
/// prompt embeddings. Ties break to the lowest class index.
std::int64_t zero_shot_classify(std::span<const double> image_embedding,
                                std::span<const double> class_prompt_embeddings,
                                std::int64_t num_classes, std::int64_t prompts_per_class,
                                std::int64_t dim);

enum class WordTag { kNoun, kAdjective, kOther };

/// word<TAB>tag lines, UTF-8; unknown words tag as kOther.
class LexiconTagger {
  public:
    LexiconTagger() = default;
    static LexiconTagger from_file(const std::string& path);
    static LexiconTagger from_entries(const std::map<std::string, WordTag>& entries);
    WordTag tag(const std::string& word) const;

  private:
    std::map<std::string, WordTag> entries_;
};

enum class KPrecisionMode { kAllTokens, kNounAdjective };

/// Fraction of distinct candidate tokens (after mode filtering) that appear in
/// the union of ground-truth token lists. Empty-after-filter returns 1.0.
double k_precision(const std::vector<std::string>& candidate_tokens,
                   const std::vector<std::vector<std::string>>& ground_truth_tokens,
                   KPrecisionMode mode, const LexiconTagger& tagger);

struct SegmentationTask {
    std::vector<double> patch_grid;      // [Hp, Wp, d] row-major
    std::int64_t grid_height = 0;        // Hp
    std::int64_t grid_width = 0;         // Wp
    std::int64_t dim = 0;
    std::vector<double> class_embeddings;  // [C, d]
    std::int64_t num_classes = 0;
    std::vector<std::int64_t> ground_truth;  // [H, W]
    std::int64_t height = 0;             // H, divisible by Hp
    std::int64_t width = 0;              // W, divisible by Wp
    std::int64_t background_id = -1;
    std::set<std::int64_t> foreground_classes;
};

struct SegmentationResult {
    std::vector<std::int64_t> predicted_mask;  // [H, W]
    double mean_iou = 0.0;
    std::map<std::int64_t, double> per_class_iou;  // foreground classes present in GT
};

/// Argmax-cosine class per patch, nearest-neighbor upsampling, IoU averaged
/// over foreground classes present in the ground truth. Throws when no
/// foreground class is present.
SegmentationResult zero_shot_segment(const SegmentationTask& task);

}  // namespace alignlab
