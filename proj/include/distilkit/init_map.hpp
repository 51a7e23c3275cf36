#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "distilkit/encoder.hpp"
#include "distilkit/objectives.hpp"

namespace distilkit {

enum class InitStrategy { EVERY_K, EXPLICIT, FIRST_K, RANDOM_INIT };

const char* init_strategy_name(InitStrategy s);
InitStrategy init_strategy_from_name(const std::string& name);

// Ordered assignment of 1-based teacher layers to student layer slots, used
// both for weight copying and for choosing supervision targets.
struct LayerMap {
  InitStrategy strategy = InitStrategy::RANDOM_INIT;
  std::vector<int> teacher_layers;  // strictly increasing; empty iff RANDOM_INIT
  bool copy_embeddings = true;

  std::string label() const;  // e.g. "every_k[4,8,12]" or "random"
};

struct InitReport {
  struct Block {
    std::string name;
    bool copied = false;
    std::string source;  // teacher block name when copied
  };
  std::vector<Block> blocks;
  int copied_count = 0;
  int random_count = 0;
};

LayerMap build_layer_map(InitStrategy strategy, int teacher_layers, int student_layers,
                         const std::vector<int>& explicit_layers = {},
                         bool copy_embeddings = true);

// Re-seeds every student parameter, then copies mapped teacher layers (and
// embeddings when requested) bit-for-bit. Heads are copied when their shapes
// match and the map is not RANDOM_INIT.
InitReport initialize_student(EncoderModel& student, const EncoderModel& teacher,
                              const LayerMap& map, std::uint64_t seed);

enum class TransferMode { TASK_SPECIFIC, TASK_AGNOSTIC };

// TASK_SPECIFIC: the student learns from the same teacher layers used for
// initialisation. TASK_AGNOSTIC: single last-layer pair.
std::vector<LayerPair> supervision_pairs(const LayerMap& map, TransferMode mode,
                                         int teacher_layers, int student_layers);

}  // namespace distilkit
