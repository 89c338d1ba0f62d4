#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "citypipe/corpus.hpp"

namespace citypipe {

// Lowercases, strips punctuation to spaces, splits on whitespace.
std::vector<std::string> tokenize(const std::string& text);

// Porter stemming, as in the classic reference implementation.
std::string porter_stem(const std::string& word);

// Sentence BLEU-4: geometric mean of clipped n-gram precisions (n=1..4)
// times the brevity penalty. Without smoothing any zero precision gives 0;
// with smoothing, numerator and denominator gain +1 for n >= 2.
double bleu4(const std::vector<std::string>& hyp,
             const std::vector<std::vector<std::string>>& refs, bool smoothing = false);

// LCS-based F-measure, beta = 1.2 by the captioning convention.
double rouge_l(const std::vector<std::string>& hyp, const std::vector<std::string>& ref,
               double beta = 1.2);

// Unigram alignment with exact-then-stem matching. F_mean = 10PR/(R+9P),
// penalty = 0.5*(chunks/matches)^3, score = F_mean*(1-penalty). The
// alignment maximizes exact matches, then total matches, then minimizes
// chunks (exhaustively for small inputs, greedy in-order beyond that).
double meteor(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

enum class CiderVariant { cider_d, cider };

// Consensus n-gram scorer over a corpus of items. IDF comes from the
// reference side; per-item scores are on the [0,10] scale.
class CiderScorer {
 public:
  explicit CiderScorer(CiderVariant variant = CiderVariant::cider_d, double sigma = 6.0);

  void add(const std::vector<std::string>& hyp_tokens,
           const std::vector<std::vector<std::string>>& ref_token_lists);

  struct Result {
    std::vector<double> per_item;
    double mean = 0.0;
    bool degenerate_idf = false;  // fewer than two items
  };
  Result compute() const;

  std::size_t size() const { return items_.size(); }

 private:
  struct Item {
    std::map<std::string, int> hyp;                // joined-ngram -> count
    std::vector<std::map<std::string, int>> refs;
  };
  CiderVariant variant_;
  double sigma_;
  std::vector<Item> items_;
};

// (bleu4 + meteor + rouge_l + 0.1 * cider) / 4 * 100
double composite_score(double bleu4, double meteor, double rouge_l, double cider);

struct MetricBlock {
  double bleu4 = 0.0;
  double meteor = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  double composite = 0.0;
  int items = 0;
};

struct ScoreCard {
  MetricBlock overall;
  MetricBlock pedestrian;
  MetricBlock vehicle;
  std::map<int, MetricBlock> per_phase;
};

struct Prediction {
  std::string scenario_id;
  int phase_index = 0;
  std::string pedestrian_caption;
  std::string vehicle_caption;
};

struct EvalOptions {
  CiderVariant cider_variant = CiderVariant::cider_d;
  bool bleu_smoothing = false;
};

std::vector<Prediction> predictions_from_json(const nlohmann::json& doc);
nlohmann::json predictions_to_json(const std::vector<Prediction>& predictions);

// Scores predictions against the ground-truth captions of each scenario's
// best test view. Metrics are averaged per role / phase / overall and the
// composite is taken over the averaged metrics. Throws std::runtime_error
// listing ids when a prediction has no matching ground-truth segment.
ScoreCard evaluate_run(const std::vector<Prediction>& predictions, const Corpus& ground_truth,
                       const EvalOptions& options = {});

nlohmann::json scorecard_to_json(const ScoreCard& card);
std::string scorecard_to_csv(const ScoreCard& card);

}  // namespace citypipe
