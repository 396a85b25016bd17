#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ccau/data.hpp"
#include "ccau/schema.hpp"

namespace ccau::train {
class Trainer;
}

namespace ccau::eval {

using schema::Modality;

struct FewShotConfig {
  int64_t novel_count = 15;  // novel classes carved out of n_activity
  std::vector<int64_t> shots{1, 5, 10, 20};
  uint64_t seed = 0;
  Modality modality = Modality::ego_rgb;
  int64_t probe_steps = 250;
  double probe_lr = 0.05;
};

struct FewShotRow {
  int64_t k = 0;
  double atomic_map = 0.0;    // averaged over the two test splits
  double activity_acc = 0.0;  // over novel classes, averaged over splits
  // classes with fewer than k train examples: (class, available)
  std::vector<std::pair<int64_t, int64_t>> shortfalls;
};

// Pure function of (n_activity, novel_count, seed): (base, novel) classes.
std::pair<std::vector<int64_t>, std::vector<int64_t>> class_split(int64_t n_activity,
                                                                  int64_t novel_count,
                                                                  uint64_t seed);

// Freezes the trainer's backbone, fits linear activity/atomic probes on k
// examples per novel class drawn from the train split (nested across k), and
// scores all novel-class examples of both test splits.
std::vector<FewShotRow> few_shot_protocol(train::Trainer& trainer, data::DatasetCache& cache,
                                          const FewShotConfig& cfg);

}  // namespace ccau::eval
