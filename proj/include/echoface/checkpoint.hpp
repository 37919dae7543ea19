#pragma once

// Checkpoint containers for trained models. A single binary format holds the
// model configuration, every parameter matrix (bit-exact), the fixed
// normalization statistics, the noise schedule where applicable, and the
// lineage identifiers of the corpus the model was trained against, so that
// evaluation can refuse a model/corpus pairing that never belonged together.

#include <cstdint>
#include <string>

#include "echoface/corpus.hpp"
#include "echoface/diffusion.hpp"
#include "echoface/m2s.hpp"

namespace echoface::checkpoint {

struct Lineage {
  std::uint64_t corpus_id = 0;
  std::uint64_t codebook_hash = 0;
};

// Identifiers of the corpus a model is trained on: the manifest id and a
// content hash of the unit-codebook centroids.
Lineage corpus_lineage(const corpus::CorpusManifest& manifest);

// Throws InvalidArgument naming `what` when either identifier differs.
void check_lineage(const Lineage& ckpt, const corpus::CorpusManifest& manifest,
                   const std::string& what);

struct M2SCheckpoint {
  m2s::M2SModel model;
  Lineage lineage;
};

void save_m2s(const std::string& path, const m2s::M2SModel& model,
              const Lineage& lineage);
M2SCheckpoint load_m2s(const std::string& path);

struct ThunderCheckpoint {
  diffusion::DenoiserModel model;
  Lineage lineage;
};

void save_thunder(const std::string& path, const diffusion::DenoiserModel& model,
                  const Lineage& lineage);
ThunderCheckpoint load_thunder(const std::string& path);

}  // namespace echoface::checkpoint
