#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "loraguard/adapter.hpp"
#include "loraguard/rng.hpp"
#include "loraguard/tensor.hpp"

namespace loraguard {

// Sequence classifier small enough to train in milliseconds:
//   tokens -> embedding lookup -> tanh(W * e) per position -> mean over
//   positions -> linear head -> logits.
// Adapters attach to the d x d hidden weight (layer id 0). Matrices are kept
// in column-vector orientation (embed: d x V with one column per token id,
// head: C x d), so every stage is a plain left-multiply.
//
// The embedding table is a fixed token dictionary: the leading coordinates
// hold +-1 indicator features for a family of labeling rules, the rest is
// random identity filler. Pretraining trains hidden and head on top of it.
// This stands in for a large pretrained backbone whose token features are
// already rich: adapters then steer existing directions instead of learning
// classifiers from scratch, and integrating a few of them perturbs the model
// mildly instead of drowning it.
struct BaseConfig {
  int vocab = 64;
  int seq_len = 16;
  int embed_dim = 32;
  int classes = 2;
  // Token ids >= clean_vocab are reserved for triggers and never appear in
  // clean data: 60 = addition-side trigger, 61 = negation-side trigger,
  // 62-63 spare.
  int clean_vocab = 60;

  float feature_scale = 0.5f;  // indicator coordinates of the dictionary
  float filler_scale = 0.25f;  // random identity coordinates

  int pretrain_epochs = 30;
  int batch_size = 32;
  float learning_rate = 0.01f;
  float accuracy_floor = 0.90f;
  // Stop pretraining once holdout accuracy reaches this value (0 disables,
  // the default). The full budget deliberately overtrains the head: the
  // margin a trigger can exert through the pooled features scales with the
  // head norm, while content margins equilibrate at a fixed cross-entropy
  // level, so a larger head is what gives triggers their headroom.
  float stop_accuracy = 0.0f;
};

inline constexpr int kHiddenLayer = 0;

struct BaseModel {
  BaseConfig cfg;
  Tensor2D embed;   // embed_dim x vocab
  Tensor2D hidden;  // embed_dim x embed_dim, frozen; adapters attach here
  Tensor2D head;    // classes x embed_dim
};

std::vector<int> base_layer_ids(const BaseModel& base);
std::vector<LayerShape> base_layer_shapes(const BaseModel& base);

// Labeling rules are total deterministic functions of the token sequence:
// the label is 1 iff a strict majority of positions holds a token matching
// the rule's indicator (a contiguous id range, or a residue class).
struct TaskRule {
  enum class Kind { token_range, token_mod };
  Kind kind = Kind::token_range;
  int lo = 0;       // token_range: token in [lo, hi)
  int hi = 0;
  int modulus = 2;  // token_mod: token % modulus == residue
  int residue = 0;
};

struct TaskSpec {
  std::string name;
  TaskRule rule;
};

struct Sample {
  std::vector<int> tokens;
  int label = 0;
};

using Dataset = std::vector<Sample>;

bool rule_indicator(const TaskRule& rule, int token);
int rule_label(const TaskRule& rule, const std::vector<int>& tokens);

// The rule family whose indicators make up the dictionary's feature
// coordinates. Tasks drawn from the family are low-rank reads of the
// embedding; rules outside it are still learnable through the filler, just
// harder.
const std::vector<TaskRule>& dictionary_rules();

// Fixed token dictionary: one feature coordinate per dictionary rule
// (+feature_scale when the rule's indicator holds, else -feature_scale),
// remaining coordinates random filler. Trigger-reserved tokens carry no
// feature coordinates, only filler identity.
Tensor2D build_token_dictionary(const BaseConfig& cfg, uint64_t seed);

// Label-balanced dataset for the rule: labels alternate, and each sample is
// built constructively (pick the indicator count for the label, place the
// positions, fill from the indicator / complement token sets).
Dataset make_dataset(const TaskSpec& task, int size, const BaseConfig& cfg, Rng& rng);

struct PretrainResult {
  BaseModel model;
  float holdout_accuracy = 0.0f;
  bool reached_floor = false;
  std::string failure;  // set when the accuracy floor was missed
};

// Trains embed/hidden/head on the generic task, then freezes them. Pure
// function of (cfg, data, seed): identical calls produce byte-identical
// weights.
PretrainResult pretrain_base(const BaseConfig& cfg, const Dataset& train, const Dataset& holdout,
                             uint64_t seed);

// Embedding columns for a batch, d x (n * seq_len).
Tensor2D gather_embeddings(const BaseModel& base, const std::vector<Sample>& batch);

// Logits (classes x n) under base weights plus the plan's deltas. Adapters
// are applied in factored form, B * (A * x); the dense delta is never built.
Tensor2D composite_forward(const BaseModel& base, const CompositePlan& plan,
                           const std::vector<Sample>& batch);

// Hidden pre-activations (d x n*seq_len) under the same plan; test seam for
// checking that each adapter's contribution is linear in its weight.
Tensor2D hidden_preactivation(const BaseModel& base, const CompositePlan& plan,
                              const std::vector<Sample>& batch);

// Argmax with ties broken toward the lowest index. Throws on non-finite
// logits.
int predict(std::span<const float> logits);
std::vector<int> predict_batch(const Tensor2D& logits);

float accuracy(const BaseModel& base, const CompositePlan& plan, const Dataset& data);

}  // namespace loraguard
