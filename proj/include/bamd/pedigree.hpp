#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace bamd::pedigree {

struct PedigreeRecord {
  std::string id;
  std::optional<std::string> sire;
  std::optional<std::string> dam;
};

// Parents always precede offspring; the first base_count records have no
// known parent.
struct OrderedPedigree {
  std::vector<PedigreeRecord> records;
  std::size_t base_count = 0;
};

// Dense symmetric matrix of additive relationships with the ids labelling its
// rows and columns.
class RelationshipMatrix {
 public:
  RelationshipMatrix() = default;
  RelationshipMatrix(std::vector<std::string> ids, Eigen::MatrixXd values);

  static RelationshipMatrix identity(std::vector<std::string> ids);

  Eigen::Index dim() const { return values_.rows(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const Eigen::MatrixXd& values() const { return values_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }

  // Position of id, or nullopt.
  std::optional<Eigen::Index> index_of(const std::string& id) const;

 private:
  std::vector<std::string> ids_;
  Eigen::MatrixXd values_;
  std::unordered_map<std::string, Eigen::Index> index_;
};

// Topological order with all parentless individuals first. Ties are broken by
// id so the result does not depend on input order. Throws DataError on
// duplicate ids, dangling parent ids and cycles.
OrderedPedigree order_pedigree(std::span<const PedigreeRecord> records);

// Henderson's recursion, one row at a time:
//   both parents g, h known: R_ji = 0.5 (R_ig + R_ih),  R_jj = 1 + 0.5 R_gh
//   one parent g known:      R_ji = 0.5 R_ig,           R_jj = 1
//   no parent known:         R_ji = 0,                  R_jj = 1
RelationshipMatrix build_numerator_matrix(const OrderedPedigree& ped);

// Principal submatrix on ids, in the order given.
RelationshipMatrix extract_submatrix(const RelationshipMatrix& r, std::span<const std::string> ids);

// Cholesky-based check; also rejects asymmetric input.
bool is_positive_definite(const Eigen::MatrixXd& m);
double smallest_eigenvalue(const Eigen::MatrixXd& m);

std::vector<PedigreeRecord> read_pedigree_csv(const std::filesystem::path& path);
std::vector<PedigreeRecord> parse_pedigree_csv(std::string_view text, std::string_view source);

std::string format_relationship_csv(const RelationshipMatrix& r);
// Reads an exported matrix and rejects it unless symmetric positive definite.
RelationshipMatrix read_relationship_csv(const std::filesystem::path& path);

}  // namespace bamd::pedigree
