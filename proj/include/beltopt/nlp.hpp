#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "beltopt/types.hpp"

namespace beltopt {

// One named, contiguous group of constraint rows. Product blocks are the
// relaxed complementarity rows; the solver holds them to a tighter
// feasibility tolerance.
struct ConstraintBlock {
  std::string name;
  int row_begin = 0;
  int rows = 0;
  bool is_equality = false;
  bool is_complementarity_product = false;
};

// Sparse triplet structure; fixed across evaluations, values aligned by slot.
struct JacobianPattern {
  std::vector<int> rows;
  std::vector<int> cols;
  int nnz() const { return static_cast<int>(rows.size()); }
};

// Minimal NLP surface consumed by the augmented-Lagrangian solver:
//   min cost(z)  s.t.  c_eq(z) = 0,  c_ineq(z) >= 0,  lb <= z <= ub
class Nlp {
 public:
  virtual ~Nlp() = default;

  virtual int num_vars() const = 0;
  virtual int num_constraints() const = 0;
  virtual const VecX& lower_bounds() const = 0;
  virtual const VecX& upper_bounds() const = 0;
  virtual const std::vector<ConstraintBlock>& constraint_blocks() const = 0;

  virtual double cost(const VecX& z) const = 0;
  virtual void cost_gradient(const VecX& z, VecX& grad) const = 0;
  virtual void constraints(const VecX& z, VecX& c) const = 0;
  virtual const JacobianPattern& jacobian_pattern() const = 0;
  virtual void jacobian_values(const VecX& z, VecX& values) const = 0;

  // Diagonal of the cost Hessian; zero default keeps the solver's
  // Gauss-Newton model penalty-only for problems that skip it.
  virtual void cost_hessian_diag(const VecX& z, VecX& diag) const {
    (void)z;
    diag.setZero(num_vars());
  }

  // Emits the entries of sum_j w_j * grad^2 c_j(z) as (var_i, var_j, value)
  // triplets, both orders for off-diagonal pairs. Supplying the dominant
  // constraint curvature turns the solver's Gauss-Newton model into a
  // near-exact Newton model; the default leaves the model penalty-only.
  virtual void constraint_curvature(const VecX& z, const VecX& w,
                                    const std::function<void(int, int, double)>& emit) const {
    (void)z;
    (void)w;
    (void)emit;
  }

  // Width of the variable coupling band: constraint rows touch at most two
  // consecutive blocks of this many variables. Zero means unstructured (one
  // dense block).
  virtual int variable_block_width() const { return 0; }

  // Per-knot (elastic, contact) complementarity products; empty when the
  // problem has none.
  virtual std::vector<std::pair<double, double>> complementarity_products(
      const VecX& z) const {
    (void)z;
    return {};
  }
};

}  // namespace beltopt
