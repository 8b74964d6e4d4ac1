// Three overlapping masks through Matrix NMS with both decay functions.

#include <cstdio>
#include <vector>

#include "segpost/maskcore.hpp"
#include "segpost/suppression.hpp"

int main() {
  using namespace segpost;
  std::vector<ScoredMask> masks{
      {box_to_mask(Box{2, 2, 11, 11}, 16, 16), 0.9, 0},
      {box_to_mask(Box{3, 3, 12, 12}, 16, 16), 0.8, 0},
      {box_to_mask(Box{9, 9, 15, 15}, 16, 16), 0.7, 0},
  };
  const IoUMatrix ious = pairwise_iou_matrix(masks);
  std::printf("iou(0,1)=%.4f iou(0,2)=%.4f iou(1,2)=%.4f\n", ious(0, 1), ious(0, 2),
              ious(1, 2));
  for (const DecayFn decay : {DecayFn::linear(), DecayFn::gaussian(0.5)}) {
    const auto r = matrix_nms(masks, ious, decay);
    std::printf("%s decay:\n", decay.kind == DecayKind::kLinear ? "linear" : "gaussian");
    for (std::size_t k = 0; k < r.size(); ++k)
      std::printf("  mask %zu  %.3f -> %.4f\n", r.kept_indices[k],
                  masks[r.kept_indices[k]].score, r.updated_scores[k]);
  }
  return 0;
}
