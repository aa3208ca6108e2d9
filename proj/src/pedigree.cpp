#include "bamd/pedigree.hpp"

#include <algorithm>
#include <functional>
#include <queue>
#include <unordered_set>

#include "bamd/errors.hpp"
#include "bamd/io.hpp"

namespace bamd::pedigree {

RelationshipMatrix::RelationshipMatrix(std::vector<std::string> ids, Eigen::MatrixXd values)
    : ids_(std::move(ids)), values_(std::move(values)) {
  if (values_.rows() != values_.cols() || static_cast<std::size_t>(values_.rows()) != ids_.size()) {
    throw DataError("relationship matrix: dimension does not match id count");
  }
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(ids_.size()); ++i) {
    if (!index_.emplace(ids_[i], i).second) throw DataError("relationship matrix: duplicate id " + ids_[i]);
  }
}

RelationshipMatrix RelationshipMatrix::identity(std::vector<std::string> ids) {
  const auto n = static_cast<Eigen::Index>(ids.size());
  return RelationshipMatrix(std::move(ids), Eigen::MatrixXd::Identity(n, n));
}

std::optional<Eigen::Index> RelationshipMatrix::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

OrderedPedigree order_pedigree(std::span<const PedigreeRecord> records) {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!pos.emplace(records[i].id, i).second) throw DataError("pedigree: duplicate id " + records[i].id);
  }
  auto parents_of = [&](std::size_t i) {
    std::vector<std::size_t> ps;
    for (const auto* p : {&records[i].sire, &records[i].dam}) {
      if (!p->has_value()) continue;
      auto it = pos.find(**p);
      if (it == pos.end()) {
        throw DataError("pedigree: individual " + records[i].id + " references unknown parent " + **p);
      }
      ps.push_back(it->second);
    }
    return ps;
  };

  const std::size_t n = records.size();
  std::vector<std::vector<std::size_t>> children(n);
  std::vector<int> pending(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto ps = parents_of(i);
    // A selfing record lists the same parent twice; it still counts once per slot.
    for (auto p : ps) {
      children[p].push_back(i);
      ++pending[i];
    }
  }

  auto by_id = [&](std::size_t a, std::size_t b) { return records[a].id > records[b].id; };
  OrderedPedigree out;
  out.records.reserve(n);

  std::vector<std::size_t> base;
  for (std::size_t i = 0; i < n; ++i) {
    if (!records[i].sire && !records[i].dam) base.push_back(i);
  }
  std::sort(base.begin(), base.end(), [&](auto a, auto b) { return records[a].id < records[b].id; });
  out.base_count = base.size();

  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(by_id)> ready(by_id);
  std::vector<char> placed(n, 0);
  auto place = [&](std::size_t i) {
    placed[i] = 1;
    out.records.push_back(records[i]);
    for (auto c : children[i]) {
      if (--pending[c] == 0) ready.push(c);
    }
  };
  for (auto i : base) place(i);
  while (!ready.empty()) {
    const auto i = ready.top();
    ready.pop();
    place(i);
  }

  if (out.records.size() != n) {
    // Every unplaced individual has an unplaced parent; walking those parents
    // must revisit a node.
    std::size_t cur = 0;
    while (placed[cur]) ++cur;
    std::vector<std::size_t> chain;
    std::unordered_map<std::size_t, std::size_t> seen;
    while (!seen.count(cur)) {
      seen[cur] = chain.size();
      chain.push_back(cur);
      for (auto p : parents_of(cur)) {
        if (!placed[p]) {
          cur = p;
          break;
        }
      }
    }
    std::string msg = "pedigree: cycle detected: ";
    for (std::size_t k = seen[cur]; k < chain.size(); ++k) msg += records[chain[k]].id + " -> ";
    msg += records[cur].id;
    throw DataError(msg);
  }
  return out;
}

RelationshipMatrix build_numerator_matrix(const OrderedPedigree& ped) {
  const auto n = static_cast<Eigen::Index>(ped.records.size());
  std::unordered_map<std::string, Eigen::Index> pos;
  std::vector<std::string> ids;
  ids.reserve(ped.records.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    pos.emplace(ped.records[j].id, j);
    ids.push_back(ped.records[j].id);
  }
  auto parent_index = [&](const std::optional<std::string>& p, Eigen::Index j) -> std::optional<Eigen::Index> {
    if (!p) return std::nullopt;
    auto it = pos.find(*p);
    if (it == pos.end() || it->second >= j) {
      throw DataError("pedigree: parent " + *p + " of " + ped.records[j].id + " does not precede it");
    }
    return it->second;
  };

  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    auto g = parent_index(ped.records[j].sire, j);
    auto h = parent_index(ped.records[j].dam, j);
    if (!g && h) std::swap(g, h);
    if (g && h) {
      for (Eigen::Index i = 0; i < j; ++i) {
        const double v = 0.5 * (r(i, *g) + r(i, *h));
        r(j, i) = v;
        r(i, j) = v;
      }
      r(j, j) = 1.0 + 0.5 * r(*g, *h);
    } else if (g) {
      for (Eigen::Index i = 0; i < j; ++i) {
        const double v = 0.5 * r(i, *g);
        r(j, i) = v;
        r(i, j) = v;
      }
      r(j, j) = 1.0;
    } else {
      r(j, j) = 1.0;
    }
  }
  return RelationshipMatrix(std::move(ids), std::move(r));
}

RelationshipMatrix extract_submatrix(const RelationshipMatrix& r, std::span<const std::string> ids) {
  std::vector<Eigen::Index> idx;
  idx.reserve(ids.size());
  for (const auto& id : ids) {
    auto k = r.index_of(id);
    if (!k) throw DataError("relationship matrix: unknown id " + id);
    idx.push_back(*k);
  }
  const auto m = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd sub(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) sub(a, b) = r(idx[a], idx[b]);
  }
  return RelationshipMatrix(std::vector<std::string>(ids.begin(), ids.end()), std::move(sub));
}

bool is_positive_definite(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) return false;
  if (m.size() == 0 || (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12) return false;
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) return false;
  const auto d = llt.matrixLLT().diagonal().array().square();
  return d.minCoeff() > 1e-10 * d.maxCoeff();
}

double smallest_eigenvalue(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

std::vector<PedigreeRecord> parse_pedigree_csv(std::string_view text, std::string_view source) {
  const auto table = io::parse_csv(text, source);
  if (table.header.size() != 3 || table.header[0] != "id" || table.header[1] != "sire" || table.header[2] != "dam") {
    throw DataError(std::string(source) + ": pedigree header must be id,sire,dam");
  }
  std::vector<PedigreeRecord> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    if (row[0].empty()) throw DataError(std::string(source) + ": empty individual id");
    PedigreeRecord rec{row[0], std::nullopt, std::nullopt};
    if (!row[1].empty()) rec.sire = row[1];
    if (!row[2].empty()) rec.dam = row[2];
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<PedigreeRecord> read_pedigree_csv(const std::filesystem::path& path) {
  return parse_pedigree_csv(io::read_file(path), path.string());
}

std::string format_relationship_csv(const RelationshipMatrix& r) {
  std::string out = "id";
  for (const auto& id : r.ids()) out += "," + id;
  out += "\n";
  for (Eigen::Index i = 0; i < r.dim(); ++i) {
    out += r.ids()[i];
    for (Eigen::Index j = 0; j < r.dim(); ++j) out += "," + io::format_double(r(i, j));
    out += "\n";
  }
  return out;
}

RelationshipMatrix read_relationship_csv(const std::filesystem::path& path) {
  const auto table = io::read_csv(path);
  const auto n = static_cast<Eigen::Index>(table.rows.size());
  if (table.header.empty() || static_cast<Eigen::Index>(table.header.size()) != n + 1) {
    throw DataError(path.string() + ": relationship matrix must be square with an id column");
  }
  std::vector<std::string> ids(table.header.begin() + 1, table.header.end());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (table.rows[i][0] != ids[i]) throw DataError(path.string() + ": row id " + table.rows[i][0] + " does not match header");
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = io::parse_double(table.rows[i][j + 1], path.string());
  }
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw DataError(path.string() + ": relationship matrix is not symmetric");
  if (!is_positive_definite(m)) throw DataError(path.string() + ": relationship matrix is not positive definite");
  return RelationshipMatrix(std::move(ids), std::move(m));
}

}  // namespace bamd::pedigree
