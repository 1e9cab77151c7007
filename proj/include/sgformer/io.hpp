#pragma once

#include <ostream>
#include <string>

#include "sgformer/dataset.hpp"
#include "sgformer/types.hpp"

namespace sgf {

struct LoadStats {
  Index skipped_cites = 0;     // cite lines referencing unknown node ids
  Index raw_cite_lines = 0;
  Index directed_entries = 0;  // CSR entries after symmetrize/dedup
};

/// Loads the classic citation-network text pair: each content line is
/// `<id> <feature...> <label>`, each cites line `<cited> <citing>`.
/// Nodes are indexed in file order, string labels mapped to class ids in
/// first-appearance order, edges symmetrized with self-loops and duplicates
/// dropped. Cite lines naming unknown ids are skipped and counted.
NodeDataset load_planetoid_raw(const std::string& content_path, const std::string& cites_path,
                               LoadStats* stats = nullptr);

/// Loads a dataset directory: meta.json (num_nodes, feat_dim, num_classes,
/// task), edges.txt, features.csv, labels.csv, optional
/// split_{train,valid,test}.txt with one node id per line.
NodeDataset load_generic(const std::string& dir);

/// Inverse of load_generic; each undirected edge is written once (u < v).
void save_generic(const std::string& dir, const NodeDataset& ds);

/// Dense attention coefficients as CSV for external heat-map plotting.
/// First line is the node count, then N comma-separated rows.
void export_attention_csv(std::ostream& os, const Mat<double>& c);

}  // namespace sgf
