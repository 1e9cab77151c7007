#include "sgformer/io.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

namespace sgf {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

/// Comma- or whitespace-separated doubles.
std::vector<double> parse_numeric_row(const std::string& line) {
  std::string s = line;
  for (char& c : s)
    if (c == ',') c = ' ';
  std::vector<double> out;
  std::istringstream is(s);
  double v;
  while (is >> v) out.push_back(v);
  return out;
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open file: " + path);
  return is;
}

}  // namespace

NodeDataset load_planetoid_raw(const std::string& content_path, const std::string& cites_path,
                               LoadStats* stats) {
  std::ifstream content = open_or_throw(content_path);

  std::vector<std::vector<double>> feats;
  std::vector<int> labels;
  std::unordered_map<std::string, Index> id_of;
  std::unordered_map<std::string, int> class_of;
  std::string line;
  Index line_no = 0;
  while (std::getline(content, line)) {
    ++line_no;
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() < 3)
      throw FormatError(content_path + ":" + std::to_string(line_no) +
                        ": content line needs <id> <features...> <label>");
    const std::string& id = toks.front();
    const std::string& label = toks.back();
    if (id_of.count(id))
      throw FormatError(content_path + ":" + std::to_string(line_no) + ": duplicate node id " + id);
    const std::size_t width = toks.size() - 2;
    if (!feats.empty() && width != feats.front().size())
      throw FormatError(content_path + ":" + std::to_string(line_no) +
                        ": inconsistent feature width");
    std::vector<double> row(width);
    for (std::size_t j = 0; j < width; ++j) {
      try {
        row[j] = std::stod(toks[j + 1]);
      } catch (const std::exception&) {
        throw FormatError(content_path + ":" + std::to_string(line_no) + ": bad feature value");
      }
    }
    id_of.emplace(id, static_cast<Index>(feats.size()));
    feats.push_back(std::move(row));
    auto it = class_of.find(label);
    if (it == class_of.end())
      it = class_of.emplace(label, static_cast<int>(class_of.size())).first;
    labels.push_back(it->second);
  }
  if (feats.empty()) throw FormatError(content_path + ": empty content file");

  std::ifstream cites = open_or_throw(cites_path);
  std::vector<std::pair<Index, Index>> edges;
  Index skipped = 0, raw_lines = 0;
  line_no = 0;
  while (std::getline(cites, line)) {
    ++line_no;
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 2)
      throw FormatError(cites_path + ":" + std::to_string(line_no) +
                        ": cites line needs exactly two ids");
    ++raw_lines;
    auto a = id_of.find(toks[0]);
    auto b = id_of.find(toks[1]);
    if (a == id_of.end() || b == id_of.end()) {
      ++skipped;
      continue;
    }
    edges.emplace_back(a->second, b->second);
  }
  if (raw_lines == 0) throw FormatError(cites_path + ": empty cites file");
  if (skipped > 0)
    std::cerr << "warning: " << cites_path << ": skipped " << skipped
              << " cite lines referencing unknown node ids\n";

  NodeDataset ds;
  const Index n = static_cast<Index>(feats.size());
  const Index d = static_cast<Index>(feats.front().size());
  ds.graph = graph_from_edges<double>(n, std::move(edges));
  ds.features.resize(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) ds.features(i, j) = feats[i][j];
  ds.labels = Eigen::Map<const VecXi>(labels.data(), n);
  ds.num_classes = static_cast<int>(class_of.size());
  ds.task = TaskKind::SingleLabel;
  ds.validate();

  if (stats) {
    stats->skipped_cites = skipped;
    stats->raw_cite_lines = raw_lines;
    stats->directed_entries = ds.graph.nnz();
  }
  return ds;
}

NodeDataset load_generic(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string meta_path = (fs::path(dir) / "meta.json").string();
  std::ifstream meta_is = open_or_throw(meta_path);
  nlohmann::json meta;
  try {
    meta_is >> meta;
  } catch (const std::exception& e) {
    throw FormatError(meta_path + ": " + e.what());
  }
  for (const char* key : {"num_nodes", "feat_dim", "num_classes", "task"})
    if (!meta.contains(key)) throw FormatError(meta_path + ": missing key '" + key + "'");

  NodeDataset ds;
  const Index n = meta["num_nodes"].get<Index>();
  const Index d = meta["feat_dim"].get<Index>();
  ds.num_classes = meta["num_classes"].get<int>();
  const std::string task = meta["task"].get<std::string>();
  if (task == "single-label") ds.task = TaskKind::SingleLabel;
  else if (task == "multi-label") ds.task = TaskKind::MultiLabel;
  else throw FormatError(meta_path + ": task must be 'single-label' or 'multi-label'");

  const std::string edges_path = (fs::path(dir) / "edges.txt").string();
  std::ifstream edges_is = open_or_throw(edges_path);
  std::vector<std::pair<Index, Index>> edges;
  std::string line;
  Index line_no = 0;
  while (std::getline(edges_is, line)) {
    ++line_no;
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 2)
      throw FormatError(edges_path + ":" + std::to_string(line_no) + ": need two node ids");
    Index u, v;
    try {
      u = std::stoll(toks[0]);
      v = std::stoll(toks[1]);
    } catch (const std::exception&) {
      throw FormatError(edges_path + ":" + std::to_string(line_no) + ": bad node id");
    }
    if (u < 0 || u >= n || v < 0 || v >= n)
      throw FormatError(edges_path + ":" + std::to_string(line_no) + ": node id out of range");
    edges.emplace_back(u, v);
  }
  ds.graph = graph_from_edges<double>(n, std::move(edges));

  const std::string feat_path = (fs::path(dir) / "features.csv").string();
  std::ifstream feat_is = open_or_throw(feat_path);
  ds.features.resize(n, d);
  line_no = 0;
  Index row = 0;
  while (std::getline(feat_is, line)) {
    ++line_no;
    auto vals = parse_numeric_row(line);
    if (vals.empty()) continue;
    if (row >= n) throw FormatError(feat_path + ": more feature rows than num_nodes");
    if (static_cast<Index>(vals.size()) != d)
      throw FormatError(feat_path + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(d) + " values, got " + std::to_string(vals.size()));
    for (Index j = 0; j < d; ++j) ds.features(row, j) = vals[j];
    ++row;
  }
  if (row != n)
    throw FormatError(feat_path + ": expected " + std::to_string(n) + " rows, got " +
                      std::to_string(row));

  const std::string label_path = (fs::path(dir) / "labels.csv").string();
  std::ifstream label_is = open_or_throw(label_path);
  if (ds.task == TaskKind::SingleLabel) ds.labels.resize(n);
  else ds.label_matrix.resize(n, ds.num_classes);
  line_no = 0;
  row = 0;
  while (std::getline(label_is, line)) {
    ++line_no;
    auto vals = parse_numeric_row(line);
    if (vals.empty()) continue;
    if (row >= n) throw FormatError(label_path + ": more label rows than num_nodes");
    if (ds.task == TaskKind::SingleLabel) {
      if (vals.size() != 1)
        throw FormatError(label_path + ":" + std::to_string(line_no) +
                          ": single-label rows need one value");
      ds.labels[row] = static_cast<int>(vals[0]);
    } else {
      if (static_cast<Index>(vals.size()) != static_cast<Index>(ds.num_classes))
        throw FormatError(label_path + ":" + std::to_string(line_no) + ": expected " +
                          std::to_string(ds.num_classes) + " task columns");
      for (int t = 0; t < ds.num_classes; ++t) ds.label_matrix(row, t) = vals[t];
    }
    ++row;
  }
  if (row != n)
    throw FormatError(label_path + ": expected " + std::to_string(n) + " rows, got " +
                      std::to_string(row));

  auto read_split = [&](const std::string& name, Mask& mask) {
    const std::string path = (fs::path(dir) / name).string();
    if (!fs::exists(path)) return;  // masks default to empty
    std::ifstream is = open_or_throw(path);
    mask.assign(n, 0);
    std::string sline;
    Index sline_no = 0;
    while (std::getline(is, sline)) {
      ++sline_no;
      auto toks = split_ws(sline);
      if (toks.empty()) continue;
      Index id;
      try {
        id = std::stoll(toks[0]);
      } catch (const std::exception&) {
        throw FormatError(path + ":" + std::to_string(sline_no) + ": bad node id");
      }
      if (id < 0 || id >= n)
        throw FormatError(path + ":" + std::to_string(sline_no) + ": node id out of range");
      mask[id] = 1;
    }
  };
  read_split("split_train.txt", ds.train_mask);
  read_split("split_valid.txt", ds.valid_mask);
  read_split("split_test.txt", ds.test_mask);

  ds.validate();
  return ds;
}

void save_generic(const std::string& dir, const NodeDataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open_out = [&](const std::string& name) {
    std::ofstream os((fs::path(dir) / name).string());
    if (!os) throw IoError("cannot write: " + (fs::path(dir) / name).string());
    return os;
  };

  {
    nlohmann::json meta = {
        {"num_nodes", ds.num_nodes()},
        {"feat_dim", ds.feat_dim()},
        {"num_classes", ds.num_classes},
        {"task", ds.task == TaskKind::SingleLabel ? "single-label" : "multi-label"}};
    auto os = open_out("meta.json");
    os << meta.dump(2) << '\n';
  }
  {
    auto os = open_out("edges.txt");
    for (Index u = 0; u < ds.graph.num_nodes; ++u)
      for (Index k = ds.graph.row_ptr[u]; k < ds.graph.row_ptr[u + 1]; ++k)
        if (u < ds.graph.col_idx[k]) os << u << ' ' << ds.graph.col_idx[k] << '\n';
  }
  {
    auto os = open_out("features.csv");
    os.precision(17);
    for (Index i = 0; i < ds.features.rows(); ++i) {
      for (Index j = 0; j < ds.features.cols(); ++j) {
        if (j) os << ',';
        os << ds.features(i, j);
      }
      os << '\n';
    }
  }
  {
    auto os = open_out("labels.csv");
    if (ds.task == TaskKind::SingleLabel) {
      for (Index i = 0; i < ds.labels.size(); ++i) os << ds.labels[i] << '\n';
    } else {
      for (Index i = 0; i < ds.label_matrix.rows(); ++i) {
        for (Index t = 0; t < ds.label_matrix.cols(); ++t) {
          if (t) os << ',';
          os << ds.label_matrix(i, t);
        }
        os << '\n';
      }
    }
  }
  auto write_split = [&](const std::string& name, const Mask& mask) {
    if (mask.empty()) return;
    auto os = open_out(name);
    for (Index i = 0; i < static_cast<Index>(mask.size()); ++i)
      if (mask[i]) os << i << '\n';
  };
  write_split("split_train.txt", ds.train_mask);
  write_split("split_valid.txt", ds.valid_mask);
  write_split("split_test.txt", ds.test_mask);
}

void export_attention_csv(std::ostream& os, const Mat<double>& c) {
  os << c.rows() << '\n';
  os.precision(17);
  for (Index i = 0; i < c.rows(); ++i) {
    for (Index j = 0; j < c.cols(); ++j) {
      if (j) os << ',';
      os << c(i, j);
    }
    os << '\n';
  }
}

}  // namespace sgf
