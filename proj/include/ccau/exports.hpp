#pragma once

#include <string>
#include <vector>

#include "ccau/data.hpp"
#include "ccau/trainer.hpp"

namespace ccau::eval {

using schema::Modality;

// One row per sequence: id, activity class, D feature values. Tab-separated,
// consumable by any projection tool (t-SNE, UMAP, ...).
void export_embeddings(train::Trainer& trainer, Modality m, const std::vector<std::string>& ids,
                       data::DatasetCache& cache, const std::string& tsv_path);

// Reads an embeddings TSV and renders a 2-D PCA projection scatter.
void export_projection_plot(const std::string& tsv_path, const std::string& png_path);

// Per-block grid attention maps for one (m, other) pair: PNG montage (first
// block frame next to its map, one row per block) plus a raw .npy sidecar of
// shape [n_blocks, H', W']. Requires a model built with attention enabled.
void export_attention_maps(train::Trainer& trainer, data::DatasetCache& cache, Modality m,
                           Modality other, const std::vector<std::string>& ids,
                           const std::string& out_dir);

// test oracle for projection quality; also used by the export smoke tests
double mean_silhouette(const std::vector<double>& points2d, const std::vector<int64_t>& labels);

}  // namespace ccau::eval
