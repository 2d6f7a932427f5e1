#include "symnet/metrics.hpp"

#include "symnet/error.hpp"

namespace symnet {

template <typename T>
void IouAccumulator::add(std::size_t class_id, const Tensor<T>& pred, const Tensor<T>& gt) {
  require(pred.shape() == gt.shape(), "iou: prediction and ground truth differ in shape");
  Confusion c;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred[i] > T(0.5), g = gt[i] > T(0.5);
    c.tp += p && g;
    c.fp += p && !g;
    c.fn += !p && g;
  }
  add_counts(class_id, c);
}

void IouAccumulator::add_counts(std::size_t class_id, const Confusion& c) {
  auto& acc = counts_[class_id];
  acc.tp += c.tp;
  acc.fp += c.fp;
  acc.fn += c.fn;
}

void IouAccumulator::merge(const IouAccumulator& other) {
  for (const auto& [id, c] : other.counts_) add_counts(id, c);
}

IouReport IouAccumulator::report() const {
  IouReport r;
  if (counts_.empty()) return r;
  double sum = 0;
  for (const auto& [id, c] : counts_) {
    const std::uint64_t denom = c.tp + c.fp + c.fn;
    double iou = 0.0;
    if (denom == 0) r.zero_denominator.push_back(id);
    else iou = static_cast<double>(c.tp) / static_cast<double>(denom);
    r.per_class[id] = iou;
    sum += iou;
  }
  r.miou = sum / static_cast<double>(counts_.size());
  return r;
}

template void IouAccumulator::add(std::size_t, const Tensor<float>&, const Tensor<float>&);
template void IouAccumulator::add(std::size_t, const Tensor<double>&, const Tensor<double>&);

}  // namespace symnet
