#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace citypipe {

struct TransformerSpec {
  int n_blocks = 0;
  int d_model = 0;
  int n_heads = 0;
  int d_ffn = 0;
  int vocab = 0;
  int max_seq = 32;

  void validate() const;  // throws std::invalid_argument
};

// Per block: 4*d^2 attention projections, 3*d*d_ffn gated MLP, 2*d norms.
long long per_block_param_count(const TransformerSpec& spec);

// Embeddings + positions + blocks + final norm + output head.
long long count_params(const TransformerSpec& spec);

struct ExpansionPlan {
  int group_size = 0;       // originals per group
  int copies_per_group = 1;
  // Position of each inserted block in the expanded stack, ascending.
  std::vector<int> insertion_indices;

  int added() const { return static_cast<int>(insertion_indices.size()); }
};

// Uniform interleave: one copied block after every (n_blocks/added) originals.
// added_blocks must divide n_blocks; otherwise throws with the nearest
// valid counts in the message. added_blocks == 0 gives an empty plan.
ExpansionPlan plan_expansion(const TransformerSpec& spec, int added_blocks);

struct BlockWeights {
  Eigen::MatrixXd wq, wk, wv, wo;      // d x d
  Eigen::MatrixXd w_gate, w_up;       // d x d_ffn
  Eigen::MatrixXd w_down;             // d_ffn x d
  Eigen::VectorXd attn_norm_w, mlp_norm_w;  // d
  bool trainable = false;
};

struct ToyModel {
  TransformerSpec spec;
  Eigen::MatrixXd tok_emb;   // vocab x d
  Eigen::MatrixXd pos_emb;   // max_seq x d
  std::vector<BlockWeights> blocks;
  Eigen::VectorXd final_norm_w;  // d
  Eigen::MatrixXd head;          // d x vocab
};

// Gaussian init, deterministic per seed.
ToyModel random_model(const TransformerSpec& spec, std::uint64_t seed);

// Inserts identity-at-init copies: each inserted block duplicates the block
// preceding it with its residual-writing projections (wo, w_down) zeroed.
// Only inserted blocks are trainable.
ToyModel expand(const ToyModel& model, const ExpansionPlan& plan);

// Sum of actual tensor element counts; the shape-enumeration counterpart
// of count_params(spec).
long long count_params(const ToyModel& model);

// Pre-norm causal decoder forward; returns seq x vocab logits.
Eigen::MatrixXd forward(const ToyModel& model, const std::vector<int>& tokens);

}  // namespace citypipe
