#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include "symnet/tensor.hpp"

namespace symnet {

struct Confusion {
  std::uint64_t tp = 0, fp = 0, fn = 0;
};

struct IouReport {
  std::map<std::size_t, double> per_class;  // foreground IoU per evaluated class
  std::vector<std::size_t> zero_denominator;  // classes whose IoU was defined as 0
  double miou = 0.0;
};

// Per-class foreground confusion counts. Accumulation is a commutative sum,
// so the episode order never changes the report.
class IouAccumulator {
 public:
  // pred and gt are same-shape binary maps (1 = foreground).
  template <typename T>
  void add(std::size_t class_id, const Tensor<T>& pred, const Tensor<T>& gt);
  void add_counts(std::size_t class_id, const Confusion& c);
  void merge(const IouAccumulator& other);

  const std::map<std::size_t, Confusion>& counts() const { return counts_; }
  IouReport report() const;

 private:
  std::map<std::size_t, Confusion> counts_;
};

}  // namespace symnet
