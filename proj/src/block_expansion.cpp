#include "citypipe/block_expansion.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace citypipe {

namespace {

constexpr double kNormEps = 1e-6;

Eigen::MatrixXd random_matrix(int rows, int cols, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      m(r, c) = dist(rng);
    }
  }
  return m;
}

Eigen::RowVectorXd rms_norm(const Eigen::RowVectorXd& x, const Eigen::VectorXd& weight) {
  const double ms = x.squaredNorm() / static_cast<double>(x.size());
  return (x / std::sqrt(ms + kNormEps)).cwiseProduct(weight.transpose());
}

double silu(double v) { return v / (1.0 + std::exp(-v)); }

}  // namespace

void TransformerSpec::validate() const {
  if (n_blocks <= 0 || d_model <= 0 || n_heads <= 0 || d_ffn <= 0 || vocab <= 0 || max_seq <= 0) {
    throw std::invalid_argument("transformer spec fields must all be positive");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("d_model must be divisible by n_heads");
  }
}

long long per_block_param_count(const TransformerSpec& spec) {
  const long long d = spec.d_model;
  const long long f = spec.d_ffn;
  return 4 * d * d + 3 * d * f + 2 * d;
}

long long count_params(const TransformerSpec& spec) {
  const long long d = spec.d_model;
  return static_cast<long long>(spec.vocab) * d      // token embeddings
         + static_cast<long long>(spec.max_seq) * d  // learned positions
         + static_cast<long long>(spec.n_blocks) * per_block_param_count(spec)
         + d                                          // final norm
         + d * static_cast<long long>(spec.vocab);    // output head
}

ExpansionPlan plan_expansion(const TransformerSpec& spec, int added_blocks) {
  spec.validate();
  if (added_blocks < 0) {
    throw std::invalid_argument("added block count must be non-negative");
  }
  ExpansionPlan plan;
  if (added_blocks == 0) {
    plan.group_size = spec.n_blocks;
    return plan;
  }
  if (spec.n_blocks % added_blocks != 0) {
    int lower = added_blocks, upper = added_blocks;
    while (lower > 1 && spec.n_blocks % lower != 0) --lower;
    while (upper < spec.n_blocks && spec.n_blocks % upper != 0) ++upper;
    throw std::invalid_argument(
        "added blocks must divide the base depth " + std::to_string(spec.n_blocks) +
        " evenly; nearest valid counts are " + std::to_string(lower) + " and " +
        std::to_string(upper));
  }
  plan.group_size = spec.n_blocks / added_blocks;
  for (int i = 0; i < added_blocks; ++i) {
    // after the i-th group, in expanded coordinates
    plan.insertion_indices.push_back((i + 1) * plan.group_size + i);
  }
  return plan;
}

ToyModel random_model(const TransformerSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(spec.d_model));
  ToyModel model;
  model.spec = spec;
  model.tok_emb = random_matrix(spec.vocab, spec.d_model, rng, 1.0);
  model.pos_emb = random_matrix(spec.max_seq, spec.d_model, rng, 1.0);
  for (int b = 0; b < spec.n_blocks; ++b) {
    BlockWeights block;
    block.wq = random_matrix(spec.d_model, spec.d_model, rng, stddev);
    block.wk = random_matrix(spec.d_model, spec.d_model, rng, stddev);
    block.wv = random_matrix(spec.d_model, spec.d_model, rng, stddev);
    block.wo = random_matrix(spec.d_model, spec.d_model, rng, stddev);
    block.w_gate = random_matrix(spec.d_model, spec.d_ffn, rng, stddev);
    block.w_up = random_matrix(spec.d_model, spec.d_ffn, rng, stddev);
    block.w_down = random_matrix(spec.d_ffn, spec.d_model, rng, stddev);
    block.attn_norm_w = Eigen::VectorXd::Ones(spec.d_model);
    block.mlp_norm_w = Eigen::VectorXd::Ones(spec.d_model);
    model.blocks.push_back(std::move(block));
  }
  model.final_norm_w = Eigen::VectorXd::Ones(spec.d_model);
  model.head = random_matrix(spec.d_model, spec.vocab, rng, stddev);
  return model;
}

ToyModel expand(const ToyModel& model, const ExpansionPlan& plan) {
  if (plan.added() > 0 && plan.group_size * plan.added() != model.spec.n_blocks) {
    throw std::invalid_argument("expansion plan does not match model depth");
  }
  ToyModel out;
  out.spec = model.spec;
  out.spec.n_blocks = model.spec.n_blocks + plan.added();
  out.tok_emb = model.tok_emb;
  out.pos_emb = model.pos_emb;
  out.final_norm_w = model.final_norm_w;
  out.head = model.head;

  std::size_t next_insert = 0;
  for (const BlockWeights& source : model.blocks) {
    BlockWeights copy = source;
    copy.trainable = false;
    out.blocks.push_back(std::move(copy));
    if (next_insert < plan.insertion_indices.size() &&
        static_cast<int>(out.blocks.size()) ==
            plan.insertion_indices[next_insert]) {
      BlockWeights inserted = source;
      inserted.wo.setZero();
      inserted.w_down.setZero();
      inserted.trainable = true;
      out.blocks.push_back(std::move(inserted));
      ++next_insert;
    }
  }
  if (next_insert != plan.insertion_indices.size()) {
    throw std::logic_error("expansion plan indices were not all consumed");
  }
  return out;
}

long long count_params(const ToyModel& model) {
  long long total = model.tok_emb.size() + model.pos_emb.size() + model.final_norm_w.size() +
                    model.head.size();
  for (const BlockWeights& block : model.blocks) {
    total += block.wq.size() + block.wk.size() + block.wv.size() + block.wo.size() +
             block.w_gate.size() + block.w_up.size() + block.w_down.size() +
             block.attn_norm_w.size() + block.mlp_norm_w.size();
  }
  return total;
}

Eigen::MatrixXd forward(const ToyModel& model, const std::vector<int>& tokens) {
  const TransformerSpec& spec = model.spec;
  const int seq = static_cast<int>(tokens.size());
  if (seq == 0) {
    throw std::invalid_argument("forward needs at least one token");
  }
  if (seq > spec.max_seq) {
    throw std::invalid_argument("sequence longer than max_seq " + std::to_string(spec.max_seq));
  }
  for (int token : tokens) {
    if (token < 0 || token >= spec.vocab) {
      throw std::invalid_argument("token id " + std::to_string(token) + " outside vocab " +
                                  std::to_string(spec.vocab));
    }
  }

  Eigen::MatrixXd x(seq, spec.d_model);
  for (int t = 0; t < seq; ++t) {
    x.row(t) = model.tok_emb.row(tokens[static_cast<std::size_t>(t)]) + model.pos_emb.row(t);
  }

  const int head_dim = spec.d_model / spec.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  for (const BlockWeights& block : model.blocks) {
    // attention sublayer
    Eigen::MatrixXd normed(seq, spec.d_model);
    for (int t = 0; t < seq; ++t) {
      normed.row(t) = rms_norm(x.row(t), block.attn_norm_w);
    }
    const Eigen::MatrixXd q = normed * block.wq;
    const Eigen::MatrixXd k = normed * block.wk;
    const Eigen::MatrixXd v = normed * block.wv;
    Eigen::MatrixXd attn_out(seq, spec.d_model);
    attn_out.setZero();
    for (int h = 0; h < spec.n_heads; ++h) {
      const int off = h * head_dim;
      for (int t = 0; t < seq; ++t) {
        // causal: keys 0..t only
        Eigen::VectorXd scores(t + 1);
        for (int s = 0; s <= t; ++s) {
          scores(s) = q.row(t).segment(off, head_dim).dot(k.row(s).segment(off, head_dim)) * scale;
        }
        const double max_score = scores.maxCoeff();
        Eigen::VectorXd weights = (scores.array() - max_score).exp();
        weights /= weights.sum();
        for (int s = 0; s <= t; ++s) {
          attn_out.row(t).segment(off, head_dim) +=
              weights(s) * v.row(s).segment(off, head_dim);
        }
      }
    }
    x += attn_out * block.wo;

    // MLP sublayer
    for (int t = 0; t < seq; ++t) {
      const Eigen::RowVectorXd m_in = rms_norm(x.row(t), block.mlp_norm_w);
      Eigen::RowVectorXd gate = m_in * block.w_gate;
      const Eigen::RowVectorXd up = m_in * block.w_up;
      for (int i = 0; i < gate.size(); ++i) {
        gate(i) = silu(gate(i)) * up(i);
      }
      x.row(t) += gate * block.w_down;
    }
  }

  Eigen::MatrixXd logits(seq, spec.vocab);
  for (int t = 0; t < seq; ++t) {
    logits.row(t) = rms_norm(x.row(t), model.final_norm_w) * model.head;
  }
  return logits;
}

}  // namespace citypipe
