#ifndef BPARHMM_EVAL_HPP
#define BPARHMM_EVAL_HPP

#include <map>

#include "bparhmm/types.hpp"

namespace bparhmm {

// Minimum-cost injective assignment of rows to columns; rectangular inputs
// are padded internally.  assignment[row] = column, or -1 if the row is left
// unassigned (only possible when rows > columns).
std::vector<int> hungarianAlign(const MatrixXd& cost);

struct AlignmentResult {
  std::map<int, int> mapping;  // estimated label -> true label (partial injection)
  double normalizedHamming = 0.0;
};

// Disagreement fraction over all modeled steps after optimal injective
// alignment of estimated to true labels.
AlignmentResult normalizedHamming(const StateSequenceSet& zEst, const StateSequenceSet& zTrue);

}  // namespace bparhmm

#endif
