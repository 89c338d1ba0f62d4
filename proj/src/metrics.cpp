#include "citypipe/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "citypipe/log.hpp"
#include "citypipe/view_selection.hpp"

namespace citypipe {

namespace {

constexpr int kMaxOrder = 4;
constexpr char kNgramSep = '\x1f';

using TokenList = std::vector<std::string>;

std::map<std::string, int> ngram_counts(const TokenList& tokens, int max_order = kMaxOrder) {
  std::map<std::string, int> counts;
  for (int n = 1; n <= max_order; ++n) {
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
      std::string key = tokens[i];
      for (int k = 1; k < n; ++k) {
        key += kNgramSep;
        key += tokens[i + static_cast<std::size_t>(k)];
      }
      ++counts[key];
    }
  }
  return counts;
}

int ngram_order(const std::string& key) {
  return 1 + static_cast<int>(std::count(key.begin(), key.end(), kNgramSep));
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (c >= 0x80) {
      current.push_back(static_cast<char>(c));  // keep non-ASCII bytes verbatim
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) {
    tokens.push_back(std::move(current));
  }
  return tokens;
}

double bleu4(const TokenList& hyp, const std::vector<TokenList>& refs, bool smoothing) {
  if (refs.empty()) {
    throw std::invalid_argument("bleu4 needs at least one reference");
  }
  if (hyp.empty()) {
    return 0.0;
  }

  std::map<std::string, int> max_ref_counts;
  for (const TokenList& ref : refs) {
    for (const auto& [key, count] : ngram_counts(ref)) {
      max_ref_counts[key] = std::max(max_ref_counts[key], count);
    }
  }
  const std::map<std::string, int> hyp_counts = ngram_counts(hyp);

  long long matched[kMaxOrder] = {0, 0, 0, 0};
  long long total[kMaxOrder] = {0, 0, 0, 0};
  for (int n = 1; n <= kMaxOrder; ++n) {
    total[n - 1] = std::max<long long>(0, static_cast<long long>(hyp.size()) - (n - 1));
  }
  for (const auto& [key, count] : hyp_counts) {
    const auto it = max_ref_counts.find(key);
    if (it != max_ref_counts.end()) {
      matched[ngram_order(key) - 1] += std::min(count, it->second);
    }
  }

  double log_prec_sum = 0.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    double num = static_cast<double>(matched[n]);
    double den = static_cast<double>(total[n]);
    if (smoothing && n > 0) {
      num += 1.0;
      den += 1.0;
    }
    if (num <= 0.0 || den <= 0.0) {
      return 0.0;
    }
    log_prec_sum += std::log(num / den);
  }

  // Effective reference length: closest to the hypothesis, ties -> shorter.
  std::size_t ref_len = refs.front().size();
  for (const TokenList& ref : refs) {
    const auto diff = [&](std::size_t len) {
      return len > hyp.size() ? len - hyp.size() : hyp.size() - len;
    };
    if (diff(ref.size()) < diff(ref_len) ||
        (diff(ref.size()) == diff(ref_len) && ref.size() < ref_len)) {
      ref_len = ref.size();
    }
  }
  const double bp = hyp.size() >= ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_len) /
                                             static_cast<double>(hyp.size()));
  return bp * std::exp(log_prec_sum / kMaxOrder);
}

double rouge_l(const TokenList& hyp, const TokenList& ref, double beta) {
  if (hyp.empty() || ref.empty()) {
    return 0.0;
  }
  const std::size_t m = hyp.size();
  const std::size_t n = ref.size();
  std::vector<std::size_t> prev(n + 1, 0);
  std::vector<std::size_t> curr(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      curr[j] = hyp[i - 1] == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], curr[j - 1]);
    }
    std::swap(prev, curr);
  }
  const double lcs = static_cast<double>(prev[n]);
  if (lcs == 0.0) {
    return 0.0;
  }
  const double precision = lcs / static_cast<double>(m);
  const double recall = lcs / static_cast<double>(n);
  const double b2 = beta * beta;
  return (1.0 + b2) * recall * precision / (recall + b2 * precision);
}

namespace {

// One unigram alignment between hypothesis and reference positions.
struct Alignment {
  std::vector<std::pair<int, int>> pairs;  // (hyp_pos, ref_pos)
};

int count_chunks(std::vector<std::pair<int, int>> pairs) {
  if (pairs.empty()) return 0;
  std::sort(pairs.begin(), pairs.end());
  int chunks = 1;
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    if (pairs[i].first != pairs[i - 1].first + 1 || pairs[i].second != pairs[i - 1].second + 1) {
      ++chunks;
    }
  }
  return chunks;
}

// Positions grouped by key; each group must contribute min(|hyp|,|ref|)
// matches (the stage-maximal count).
struct MatchGroup {
  std::vector<int> hyp_positions;
  std::vector<int> ref_positions;
};

std::vector<MatchGroup> stage_groups(const TokenList& hyp_keys, const TokenList& ref_keys,
                                     const std::vector<bool>& hyp_free,
                                     const std::vector<bool>& ref_free) {
  std::map<std::string, MatchGroup> by_key;
  for (int i = 0; i < static_cast<int>(hyp_keys.size()); ++i) {
    if (hyp_free[static_cast<std::size_t>(i)]) {
      by_key[hyp_keys[static_cast<std::size_t>(i)]].hyp_positions.push_back(i);
    }
  }
  for (int j = 0; j < static_cast<int>(ref_keys.size()); ++j) {
    if (ref_free[static_cast<std::size_t>(j)]) {
      auto it = by_key.find(ref_keys[static_cast<std::size_t>(j)]);
      if (it != by_key.end()) {
        it->second.ref_positions.push_back(j);
      }
    }
  }
  std::vector<MatchGroup> groups;
  for (auto& [key, group] : by_key) {
    if (!group.ref_positions.empty()) {
      groups.push_back(std::move(group));
    }
  }
  return groups;
}

double combination_count(const std::vector<MatchGroup>& groups) {
  double combos = 1.0;
  for (const MatchGroup& g : groups) {
    const std::size_t k = std::min(g.hyp_positions.size(), g.ref_positions.size());
    // C(|H|,k) * P(|R|,k)
    double c = 1.0;
    for (std::size_t i = 0; i < k; ++i) {
      c *= static_cast<double>(g.hyp_positions.size() - i) / static_cast<double>(i + 1);
      c *= static_cast<double>(g.ref_positions.size() - i);
    }
    combos *= c;
    if (combos > 1e12) break;
  }
  return combos;
}

// In-order pairing: i-th free hypothesis occurrence to i-th free reference
// occurrence within each group.
void greedy_stage(const std::vector<MatchGroup>& groups, Alignment& alignment,
                  std::vector<bool>& hyp_free, std::vector<bool>& ref_free) {
  for (const MatchGroup& g : groups) {
    const std::size_t k = std::min(g.hyp_positions.size(), g.ref_positions.size());
    for (std::size_t i = 0; i < k; ++i) {
      alignment.pairs.emplace_back(g.hyp_positions[i], g.ref_positions[i]);
      hyp_free[static_cast<std::size_t>(g.hyp_positions[i])] = false;
      ref_free[static_cast<std::size_t>(g.ref_positions[i])] = false;
    }
  }
}

// Enumerates every stage-maximal pairing; `emit` receives the stage pairs.
void enumerate_stage(const std::vector<MatchGroup>& groups, std::size_t group_idx,
                     std::vector<std::pair<int, int>>& acc,
                     const std::function<void(const std::vector<std::pair<int, int>>&)>& emit) {
  if (group_idx == groups.size()) {
    emit(acc);
    return;
  }
  const MatchGroup& g = groups[group_idx];
  const std::size_t k = std::min(g.hyp_positions.size(), g.ref_positions.size());
  std::vector<int> hyp_subset;
  std::vector<bool> ref_used(g.ref_positions.size(), false);

  std::function<void(std::size_t, std::size_t)> assign = [&](std::size_t slot, std::size_t hyp_from) {
    if (slot == k) {
      enumerate_stage(groups, group_idx + 1, acc, emit);
      return;
    }
    for (std::size_t hi = hyp_from; hi < g.hyp_positions.size(); ++hi) {
      for (std::size_t ri = 0; ri < g.ref_positions.size(); ++ri) {
        if (ref_used[ri]) continue;
        ref_used[ri] = true;
        acc.emplace_back(g.hyp_positions[hi], g.ref_positions[ri]);
        assign(slot + 1, hi + 1);
        acc.pop_back();
        ref_used[ri] = false;
      }
    }
  };
  assign(0, 0);
}

constexpr double kExhaustiveCap = 50000.0;

Alignment meteor_align(const TokenList& hyp, const TokenList& ref) {
  TokenList hyp_stems(hyp.size());
  TokenList ref_stems(ref.size());
  std::transform(hyp.begin(), hyp.end(), hyp_stems.begin(), porter_stem);
  std::transform(ref.begin(), ref.end(), ref_stems.begin(), porter_stem);

  std::vector<bool> hyp_free(hyp.size(), true);
  std::vector<bool> ref_free(ref.size(), true);
  const std::vector<MatchGroup> exact = stage_groups(hyp, ref, hyp_free, ref_free);

  // Exact-stage choices constrain the stem stage, so the two stages are
  // enumerated jointly when the search space is small.
  double combos = combination_count(exact);
  Alignment best;
  bool have_best = false;
  int best_chunks = std::numeric_limits<int>::max();
  std::size_t best_total = 0;

  if (combos <= kExhaustiveCap) {
    std::vector<std::pair<int, int>> acc;
    bool overflow = false;
    enumerate_stage(exact, 0, acc, [&](const std::vector<std::pair<int, int>>& exact_pairs) {
      if (overflow) return;
      std::vector<bool> h_free = hyp_free;
      std::vector<bool> r_free = ref_free;
      for (const auto& [i, j] : exact_pairs) {
        h_free[static_cast<std::size_t>(i)] = false;
        r_free[static_cast<std::size_t>(j)] = false;
      }
      const std::vector<MatchGroup> stem = stage_groups(hyp_stems, ref_stems, h_free, r_free);
      if (combination_count(stem) > kExhaustiveCap) {
        overflow = true;
        return;
      }
      std::vector<std::pair<int, int>> stem_acc;
      enumerate_stage(stem, 0, stem_acc, [&](const std::vector<std::pair<int, int>>& stem_pairs) {
        std::vector<std::pair<int, int>> all = exact_pairs;
        all.insert(all.end(), stem_pairs.begin(), stem_pairs.end());
        const std::size_t total = all.size();
        const int chunks = count_chunks(all);
        if (!have_best || total > best_total || (total == best_total && chunks < best_chunks)) {
          best.pairs = std::move(all);
          best_chunks = chunks;
          best_total = total;
          have_best = true;
        }
      });
    });
    if (have_best && !overflow) {
      return best;
    }
  }

  // Greedy in-order fallback for large search spaces.
  Alignment alignment;
  greedy_stage(exact, alignment, hyp_free, ref_free);
  const std::vector<MatchGroup> stem = stage_groups(hyp_stems, ref_stems, hyp_free, ref_free);
  greedy_stage(stem, alignment, hyp_free, ref_free);
  return alignment;
}

}  // namespace

double meteor(const TokenList& hyp, const TokenList& ref) {
  if (hyp.empty() || ref.empty()) {
    return 0.0;
  }
  const Alignment alignment = meteor_align(hyp, ref);
  const double matches = static_cast<double>(alignment.pairs.size());
  if (matches == 0.0) {
    return 0.0;
  }
  const double precision = matches / static_cast<double>(hyp.size());
  const double recall = matches / static_cast<double>(ref.size());
  const double f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
  const double chunks = static_cast<double>(count_chunks(alignment.pairs));
  const double penalty = 0.5 * std::pow(chunks / matches, 3.0);
  return f_mean * (1.0 - penalty);
}

CiderScorer::CiderScorer(CiderVariant variant, double sigma) : variant_(variant), sigma_(sigma) {}

void CiderScorer::add(const TokenList& hyp_tokens, const std::vector<TokenList>& ref_token_lists) {
  Item item;
  item.hyp = ngram_counts(hyp_tokens);
  for (const TokenList& ref : ref_token_lists) {
    item.refs.push_back(ngram_counts(ref));
  }
  items_.push_back(std::move(item));
}

CiderScorer::Result CiderScorer::compute() const {
  Result result;
  result.degenerate_idf = items_.size() < 2;
  if (result.degenerate_idf) {
    logging::warn("cider_degenerate_idf", {{"items", items_.size()}});
  }
  if (items_.empty()) {
    return result;
  }

  std::map<std::string, int> doc_freq;
  for (const Item& item : items_) {
    std::set<std::string> seen;
    for (const auto& ref : item.refs) {
      for (const auto& [key, count] : ref) {
        seen.insert(key);
      }
    }
    for (const std::string& key : seen) {
      ++doc_freq[key];
    }
  }
  const double log_items = std::log(static_cast<double>(items_.size()));

  struct Vec {
    std::map<std::string, double> weights[kMaxOrder];
    double norm[kMaxOrder] = {0, 0, 0, 0};
    double length = 0;  // bigram total, the reference length convention
  };
  const auto to_vec = [&](const std::map<std::string, int>& counts) {
    Vec v;
    for (const auto& [key, count] : counts) {
      const auto df_it = doc_freq.find(key);
      const double df = std::log(std::max(1.0, df_it == doc_freq.end()
                                                   ? 0.0
                                                   : static_cast<double>(df_it->second)));
      const int n = ngram_order(key) - 1;
      const double weight = static_cast<double>(count) * (log_items - df);
      v.weights[n][key] = weight;
      v.norm[n] += weight * weight;
      if (n == 1) {
        v.length += static_cast<double>(count);
      }
    }
    for (double& norm : v.norm) {
      norm = std::sqrt(norm);
    }
    return v;
  };

  for (const Item& item : items_) {
    const Vec hyp = to_vec(item.hyp);
    double per_n[kMaxOrder] = {0, 0, 0, 0};
    for (const auto& ref_counts : item.refs) {
      const Vec ref = to_vec(ref_counts);
      const double delta = hyp.length - ref.length;
      for (int n = 0; n < kMaxOrder; ++n) {
        double val = 0.0;
        for (const auto& [key, hw] : hyp.weights[n]) {
          const auto it = ref.weights[n].find(key);
          if (it == ref.weights[n].end()) continue;
          const double h = variant_ == CiderVariant::cider_d ? std::min(hw, it->second) : hw;
          val += h * it->second;
        }
        if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) {
          val /= hyp.norm[n] * ref.norm[n];
        }
        if (variant_ == CiderVariant::cider_d) {
          val *= std::exp(-(delta * delta) / (2.0 * sigma_ * sigma_));
        }
        per_n[n] += val;
      }
    }
    double score = 0.0;
    for (int n = 0; n < kMaxOrder; ++n) {
      score += per_n[n] / static_cast<double>(item.refs.size());
    }
    score = score / kMaxOrder * 10.0;
    result.per_item.push_back(score);
  }
  double total = 0.0;
  for (double s : result.per_item) {
    total += s;
  }
  result.mean = total / static_cast<double>(result.per_item.size());
  return result;
}

double composite_score(double bleu4, double meteor, double rouge_l, double cider) {
  return (bleu4 + meteor + rouge_l + 0.1 * cider) / 4.0 * 100.0;
}

std::vector<Prediction> predictions_from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) {
    throw std::runtime_error("predictions document must be a JSON array");
  }
  std::vector<Prediction> out;
  for (const nlohmann::json& node : doc) {
    Prediction p;
    p.scenario_id = node.at("scenario_id").get<std::string>();
    p.phase_index = node.at("phase_index").get<int>();
    p.pedestrian_caption = node.at("pedestrian_caption").get<std::string>();
    p.vehicle_caption = node.at("vehicle_caption").get<std::string>();
    out.push_back(std::move(p));
  }
  return out;
}

nlohmann::json predictions_to_json(const std::vector<Prediction>& predictions) {
  nlohmann::json doc = nlohmann::json::array();
  for (const Prediction& p : predictions) {
    doc.push_back({{"scenario_id", p.scenario_id},
                   {"phase_index", p.phase_index},
                   {"pedestrian_caption", p.pedestrian_caption},
                   {"vehicle_caption", p.vehicle_caption}});
  }
  return doc;
}

namespace {

struct EvalItem {
  Subject role;
  int phase_index;
  TokenList hyp;
  TokenList ref;
};

MetricBlock block_from_items(const std::vector<double>& bleu, const std::vector<double>& met,
                             const std::vector<double>& rouge, const std::vector<double>& cider,
                             const std::vector<std::size_t>& indices) {
  MetricBlock block;
  block.items = static_cast<int>(indices.size());
  if (indices.empty()) {
    return block;
  }
  for (std::size_t idx : indices) {
    block.bleu4 += bleu[idx];
    block.meteor += met[idx];
    block.rouge_l += rouge[idx];
    block.cider += cider[idx];
  }
  const double n = static_cast<double>(indices.size());
  block.bleu4 /= n;
  block.meteor /= n;
  block.rouge_l /= n;
  block.cider /= n;
  block.composite = composite_score(block.bleu4, block.meteor, block.rouge_l, block.cider);
  return block;
}

}  // namespace

ScoreCard evaluate_run(const std::vector<Prediction>& predictions, const Corpus& ground_truth,
                       const EvalOptions& options) {
  // Ground truth comes from each scenario's best test view.
  std::map<std::pair<std::string, int>, const SegmentTuple*> gt_lookup;
  for (const ScenarioRecord& scenario : ground_truth.scenarios) {
    if (scenario.views.empty()) continue;
    const BestView best = select_best_test_view(scenario);
    for (const ViewRecord& view : scenario.views) {
      if (view.view_id != best.view_id) continue;
      for (const SegmentTuple& tuple : view.segments) {
        gt_lookup[{scenario.scenario_id, tuple.phase_index}] = &tuple;
      }
    }
  }

  std::vector<std::string> unmatched;
  std::vector<EvalItem> items;
  for (const Prediction& pred : predictions) {
    const auto it = gt_lookup.find({pred.scenario_id, pred.phase_index});
    if (it == gt_lookup.end()) {
      unmatched.push_back(pred.scenario_id + "/phase" + std::to_string(pred.phase_index));
      continue;
    }
    items.push_back(EvalItem{Subject::pedestrian, pred.phase_index,
                             tokenize(pred.pedestrian_caption),
                             tokenize(it->second->pedestrian_caption)});
    items.push_back(EvalItem{Subject::vehicle, pred.phase_index,
                             tokenize(pred.vehicle_caption),
                             tokenize(it->second->vehicle_caption)});
  }
  if (!unmatched.empty()) {
    std::string joined;
    for (const std::string& id : unmatched) {
      if (!joined.empty()) joined += ", ";
      joined += id;
    }
    throw std::runtime_error("predictions without matching ground truth: " + joined);
  }

  std::vector<double> bleu(items.size()), met(items.size()), rouge(items.size());
  CiderScorer cider_scorer(options.cider_variant);
  for (std::size_t i = 0; i < items.size(); ++i) {
    bleu[i] = bleu4(items[i].hyp, {items[i].ref}, options.bleu_smoothing);
    met[i] = meteor(items[i].hyp, items[i].ref);
    rouge[i] = rouge_l(items[i].hyp, items[i].ref);
    cider_scorer.add(items[i].hyp, {items[i].ref});
  }
  const CiderScorer::Result cider = cider_scorer.compute();

  std::vector<std::size_t> all, ped, veh;
  std::map<int, std::vector<std::size_t>> by_phase;
  for (std::size_t i = 0; i < items.size(); ++i) {
    all.push_back(i);
    (items[i].role == Subject::pedestrian ? ped : veh).push_back(i);
    by_phase[items[i].phase_index].push_back(i);
  }

  ScoreCard card;
  card.overall = block_from_items(bleu, met, rouge, cider.per_item, all);
  card.pedestrian = block_from_items(bleu, met, rouge, cider.per_item, ped);
  card.vehicle = block_from_items(bleu, met, rouge, cider.per_item, veh);
  for (const auto& [phase, indices] : by_phase) {
    card.per_phase[phase] = block_from_items(bleu, met, rouge, cider.per_item, indices);
  }
  return card;
}

namespace {

nlohmann::json block_to_json(const MetricBlock& block) {
  return nlohmann::json{{"bleu4", block.bleu4},     {"meteor", block.meteor},
                        {"rouge_l", block.rouge_l}, {"cider", block.cider},
                        {"composite", block.composite}, {"items", block.items}};
}

void block_to_csv(std::ostringstream& out, const std::string& name, const MetricBlock& block) {
  char line[256];
  std::snprintf(line, sizeof(line), "%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", name.c_str(), block.items,
                block.bleu4, block.meteor, block.rouge_l, block.cider, block.composite);
  out << line;
}

}  // namespace

nlohmann::json scorecard_to_json(const ScoreCard& card) {
  nlohmann::json per_phase = nlohmann::json::object();
  for (const auto& [phase, block] : card.per_phase) {
    per_phase[std::to_string(phase)] = block_to_json(block);
  }
  return nlohmann::json{{"overall", block_to_json(card.overall)},
                        {"pedestrian", block_to_json(card.pedestrian)},
                        {"vehicle", block_to_json(card.vehicle)},
                        {"per_phase", std::move(per_phase)}};
}

std::string scorecard_to_csv(const ScoreCard& card) {
  std::ostringstream out;
  out << "block,items,bleu4,meteor,rouge_l,cider,composite\n";
  block_to_csv(out, "overall", card.overall);
  block_to_csv(out, "pedestrian", card.pedestrian);
  block_to_csv(out, "vehicle", card.vehicle);
  for (const auto& [phase, block] : card.per_phase) {
    block_to_csv(out, "phase_" + std::to_string(phase), block);
  }
  return out.str();
}

}  // namespace citypipe
