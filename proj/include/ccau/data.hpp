#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ccau/autograd.hpp"
#include "ccau/encoders.hpp"
#include "ccau/schema.hpp"

namespace ccau::data {

using schema::Modality;

// One sequence converted to encoder-ready tensors.
struct PreparedSequence {
  std::string id;
  int64_t activity = 0;
  std::vector<double> seq_multihot;    // [n_atomic]
  std::vector<double> block_multihot;  // [n_blocks * n_atomic]
  // block-major inputs; per block: video/audio [C*T*H*W], scene graph [V]
  std::map<Modality, std::vector<double>> blocks;
  std::map<Modality, ag::Shape> block_shape;  // shape of one block's tensor
};

// Loads a homage-schema dataset and prepares per-modality tensors lazily, so
// evaluating one modality never touches the others' array files.
class DatasetCache {
 public:
  DatasetCache(std::string dataset_dir, encoders::ModelConfig model_cfg);

  const schema::ParsedDataset& parsed() const { return parsed_; }
  const schema::Vocab& vocab() const { return parsed_.split.vocab; }
  const std::vector<std::string>& split_ids(const std::string& split) const;

  const PreparedSequence& get(const std::string& id, const std::vector<Modality>& modalities);

  // Assembles a block-major batch tensor for one modality:
  // [n_blocks * B, C, T, H, W] (or [n_blocks * B, V] for scene graphs);
  // row (j, b) = j * B + b.
  ag::Var batch_inputs(const std::vector<const PreparedSequence*>& seqs, Modality m) const;
  std::vector<int64_t> batch_labels(const std::vector<const PreparedSequence*>& seqs) const;
  ag::Var batch_seq_multihot(const std::vector<const PreparedSequence*>& seqs) const;

  int64_t n_activity() const { return parsed_.split.vocab.n_activity; }
  int64_t n_atomic() const { return parsed_.split.vocab.n_atomic; }

 private:
  void prepare_labels(PreparedSequence& p, const schema::SyncedSequence& seq);
  void prepare_modality(PreparedSequence& p, const schema::SyncedSequence& seq, Modality m);

  std::string dir_;
  encoders::ModelConfig cfg_;
  schema::ParsedDataset parsed_;
  std::map<std::string, const schema::SyncedSequence*> by_id_;
  std::map<std::string, PreparedSequence> prepared_;
};

}  // namespace ccau::data
