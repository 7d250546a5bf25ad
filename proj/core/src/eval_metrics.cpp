#include "alignlab/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace alignlab {

namespace {

// Rank of the diagonal entry in row `row` under descending order with
// lowest-column-index tie-breaking (1-based).
std::int64_t diagonal_rank_row(std::span<const double> sim, std::int64_t n, std::int64_t row) {
    const double own = sim[static_cast<std::size_t>(row * n + row)];
    std::int64_t rank = 1;
    for (std::int64_t col = 0; col < n; ++col) {
        if (col == row) continue;
        const double value = sim[static_cast<std::size_t>(row * n + col)];
        if (value > own || (value == own && col < row)) ++rank;
    }
    return rank;
}

std::int64_t diagonal_rank_col(std::span<const double> sim, std::int64_t n, std::int64_t col) {
    const double own = sim[static_cast<std::size_t>(col * n + col)];
    std::int64_t rank = 1;
    for (std::int64_t row = 0; row < n; ++row) {
        if (row == col) continue;
        const double value = sim[static_cast<std::size_t>(row * n + col)];
        if (value > own || (value == own && row < col)) ++rank;
    }
    return rank;
}

std::vector<double> normalized(std::span<const double> v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    std::vector<double> out(v.begin(), v.end());
    if (norm > 1e-12) {
        for (auto& x : out) x /= norm;
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

RetrievalResult recall_at_k(std::span<const double> similarity, std::int64_t n,
                            std::span<const std::int64_t> ks) {
    if (static_cast<std::int64_t>(similarity.size()) != n * n) {
        throw std::invalid_argument("recall_at_k: similarity must be n*n");
    }
    for (auto k : ks) {
        if (k > n) {
            throw std::invalid_argument("recall_at_k: k = " + std::to_string(k) +
                                        " exceeds n = " + std::to_string(n));
        }
    }
    RetrievalResult result;
    for (auto k : ks) {
        std::int64_t hit_rows = 0;
        std::int64_t hit_cols = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            if (diagonal_rank_row(similarity, n, i) <= k) ++hit_rows;
            if (diagonal_rank_col(similarity, n, i) <= k) ++hit_cols;
        }
        result.image_to_text[k] = static_cast<double>(hit_rows) / static_cast<double>(n);
        result.text_to_image[k] = static_cast<double>(hit_cols) / static_cast<double>(n);
    }
    return result;
}

std::int64_t zero_shot_classify(std::span<const double> image_embedding,
                                std::span<const double> class_prompt_embeddings,
                                std::int64_t num_classes, std::int64_t prompts_per_class,
                                std::int64_t dim) {
    if (prompts_per_class < 1) throw std::invalid_argument("zero_shot_classify: M >= 1 required");
    if (static_cast<std::int64_t>(class_prompt_embeddings.size()) !=
        num_classes * prompts_per_class * dim) {
        throw std::invalid_argument("zero_shot_classify: prompt buffer size mismatch");
    }
    const auto image_hat = normalized(image_embedding);
    std::int64_t best_class = 0;
    double best_score = -1e300;
    for (std::int64_t c = 0; c < num_classes; ++c) {
        std::vector<double> mean_prompt(static_cast<std::size_t>(dim), 0.0);
        for (std::int64_t m = 0; m < prompts_per_class; ++m) {
            const auto prompt = normalized(class_prompt_embeddings.subspan(
                static_cast<std::size_t>((c * prompts_per_class + m) * dim),
                static_cast<std::size_t>(dim)));
            for (std::int64_t j = 0; j < dim; ++j) mean_prompt[static_cast<std::size_t>(j)] += prompt[static_cast<std::size_t>(j)];
        }
        const auto class_embed = normalized(mean_prompt);
        const double score = dot(image_hat, class_embed);
        if (score > best_score) {
            best_score = score;
            best_class = c;
        }
    }
    return best_class;
}

LexiconTagger LexiconTagger::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("lexicon: cannot open " + path);
    LexiconTagger tagger;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) continue;
        const std::string word = line.substr(0, tab);
        const std::string tag = line.substr(tab + 1);
        WordTag parsed = WordTag::kOther;
        if (tag == "noun") parsed = WordTag::kNoun;
        else if (tag == "adjective") parsed = WordTag::kAdjective;
        tagger.entries_[word] = parsed;
    }
    return tagger;
}

LexiconTagger LexiconTagger::from_entries(const std::map<std::string, WordTag>& entries) {
    LexiconTagger tagger;
    tagger.entries_ = entries;
    return tagger;
}

WordTag LexiconTagger::tag(const std::string& word) const {
    auto it = entries_.find(word);
    return it == entries_.end() ? WordTag::kOther : it->second;
}

double k_precision(const std::vector<std::string>& candidate_tokens,
                   const std::vector<std::vector<std::string>>& ground_truth_tokens,
                   KPrecisionMode mode, const LexiconTagger& tagger) {
    std::set<std::string> candidates;  // duplicates collapse to types
    for (const auto& token : candidate_tokens) {
        if (mode == KPrecisionMode::kNounAdjective) {
            const WordTag tag = tagger.tag(token);
            if (tag != WordTag::kNoun && tag != WordTag::kAdjective) continue;
        }
        candidates.insert(token);
    }
    if (candidates.empty()) return 1.0;  // vacuously faithful

    std::set<std::string> truth;
    for (const auto& reference : ground_truth_tokens) {
        truth.insert(reference.begin(), reference.end());
    }
    std::int64_t hits = 0;
    for (const auto& token : candidates) {
        if (truth.count(token)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(candidates.size());
}

SegmentationResult zero_shot_segment(const SegmentationTask& task) {
    if (task.grid_height <= 0 || task.grid_width <= 0 || task.dim <= 0 || task.num_classes <= 0) {
        throw std::invalid_argument("zero_shot_segment: bad task dimensions");
    }
    if (task.height % task.grid_height != 0 || task.width % task.grid_width != 0) {
        throw std::invalid_argument("zero_shot_segment: output size must be an integer multiple of the grid");
    }
    if (static_cast<std::int64_t>(task.ground_truth.size()) != task.height * task.width) {
        throw std::invalid_argument("zero_shot_segment: ground truth size mismatch");
    }

    // Argmax-cosine class per patch, lowest index on ties.
    std::vector<std::int64_t> patch_class(
        static_cast<std::size_t>(task.grid_height * task.grid_width));
    std::vector<std::vector<double>> class_hats;
    for (std::int64_t c = 0; c < task.num_classes; ++c) {
        class_hats.push_back(normalized(std::span<const double>(
            task.class_embeddings.data() + c * task.dim, static_cast<std::size_t>(task.dim))));
    }
    for (std::int64_t p = 0; p < task.grid_height * task.grid_width; ++p) {
        const auto patch_hat = normalized(std::span<const double>(
            task.patch_grid.data() + p * task.dim, static_cast<std::size_t>(task.dim)));
        double best = -1e300;
        std::int64_t best_class = 0;
        for (std::int64_t c = 0; c < task.num_classes; ++c) {
            const double score = dot(patch_hat, class_hats[static_cast<std::size_t>(c)]);
            if (score > best) {
                best = score;
                best_class = c;
            }
        }
        patch_class[static_cast<std::size_t>(p)] = best_class;
    }

    // Nearest-neighbor upsample (integer block replication).
    SegmentationResult result;
    result.predicted_mask.resize(static_cast<std::size_t>(task.height * task.width));
    const std::int64_t scale_h = task.height / task.grid_height;
    const std::int64_t scale_w = task.width / task.grid_width;
    for (std::int64_t y = 0; y < task.height; ++y) {
        for (std::int64_t x = 0; x < task.width; ++x) {
            const std::int64_t gy = y / scale_h;
            const std::int64_t gx = x / scale_w;
            result.predicted_mask[static_cast<std::size_t>(y * task.width + x)] =
                patch_class[static_cast<std::size_t>(gy * task.grid_width + gx)];
        }
    }

    // IoU per foreground class present in the ground truth.
    double iou_sum = 0.0;
    std::int64_t present = 0;
    for (std::int64_t c : task.foreground_classes) {
        std::int64_t intersection = 0, uni = 0;
        bool in_truth = false;
        for (std::int64_t p = 0; p < task.height * task.width; ++p) {
            const bool predicted = result.predicted_mask[static_cast<std::size_t>(p)] == c;
            const bool truth = task.ground_truth[static_cast<std::size_t>(p)] == c;
            in_truth = in_truth || truth;
            if (predicted && truth) ++intersection;
            if (predicted || truth) ++uni;
        }
        if (!in_truth) continue;  // absent classes are excluded even if predicted
        const double iou = uni > 0 ? static_cast<double>(intersection) / static_cast<double>(uni) : 0.0;
        result.per_class_iou[c] = iou;
        iou_sum += iou;
        ++present;
    }
    if (present == 0) {
        throw std::invalid_argument("zero_shot_segment: no foreground class present in ground truth");
    }
    result.mean_iou = iou_sum / static_cast<double>(present);
    return result;
}

}  // namespace alignlab
