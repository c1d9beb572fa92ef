#pragma once

#include <memory>
#include <span>
#include <variant>
#include <vector>

#include "spst/kernels.hpp"
#include "spst/tensor.hpp"

namespace spst {

// Handle into a Graph's node list.
struct Val {
  int32_t i = -1;
  bool ok() const { return i >= 0; }
};

enum class Op : uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kAffine,      // a*x + b
  kRelu,
  kLeakyRelu,
  kElu,
  kConv2d,
  kConvT2d,
  kWeightNorm,  // (v, g) -> g * v/||v|| per dim-0 slice
  kLayerNorm,   // (x, gamma, beta), stats over all of x
  kSum,
  kMean,
  kAbs,
  kSquare,
  kLogClamp,    // log(max(x, floor))
  kMagnitude,   // [2,T,F] -> [T,F]
  kDiscInput,   // [2,T,F] -> [3,T,F] = (re, im, modulus)
  kFilterbank,  // [T,F] x const [F,M] -> [T,M]
  kStopGrad,
  kConcat,
  kSlice,
  kStft,        // [n] -> [2,T,nbins]
  kIstft,       // [2,T,F] -> [(T-1)*hop + window]
};

struct ConvAttr {
  PadSpec pad;
  int st, sf;
};
struct ScalarAttr {
  double a = 0, b = 0;
};
struct NormAttr {
  double eps;
  double mean = 0, inv = 0;  // saved at forward for backward
};
struct FbankAttr {
  std::shared_ptr<const Tensor> m;  // [F, M]
};
struct SliceAttr {
  int axis;
  int64_t start, len;
};
struct ConcatAttr {
  int axis;
};
struct StftAttr {
  int window, hop, nbins;
};

using Attr = std::variant<std::monostate, ConvAttr, ScalarAttr, NormAttr,
                          FbankAttr, SliceAttr, ConcatAttr, StftAttr>;

// Define-by-run tape: values are computed as nodes are appended, backward
// walks the list in reverse. Nodes whose inputs carry no gradient are marked
// needs=false and skipped wholesale, so constant subgraphs (e.g. the real
// sample's feature path during the generator step) cost no backward time.
class Graph {
 public:
  Val leaf(Tensor t, bool requires_grad);
  Val constant(Tensor t) { return leaf(std::move(t), false); }

  Val add(Val a, Val b);
  Val sub(Val a, Val b);
  Val mul(Val a, Val b);
  Val affine(Val x, double a, double b);
  Val relu(Val x);
  Val leaky_relu(Val x, double slope);
  Val elu(Val x);
  Val conv2d(Val x, Val w, Val bias, PadSpec pad, int st, int sf);
  Val conv2d_transpose(Val y, Val w, Val bias, PadSpec pad, int st, int sf,
                       int64_t out_t, int64_t out_f);
  Val weight_norm(Val v, Val g, double eps = 1e-12);
  Val layer_norm(Val x, Val gamma, Val beta, double eps = 1e-5);
  Val sum(Val x);
  Val mean(Val x);
  Val abs(Val x);
  Val square(Val x);
  Val log_clamp(Val x, double floor);
  Val magnitude(Val spec);
  Val disc_input(Val spec);
  Val filterbank(Val mag, std::shared_ptr<const Tensor> m);
  Val stop_gradient(Val x);
  Val concat(std::span<const Val> xs, int axis);
  Val slice(Val x, int axis, int64_t start, int64_t len);
  Val stft(Val wave, int window, int hop, int nbins);
  Val istft(Val spec, int window, int hop);

  void backward(Val loss);

  const Tensor& value(Val v) const { return nodes_[check(v)].val; }
  // Zero-sized until backward reaches the node.
  const Tensor& grad(Val v) const { return nodes_[check(v)].gradt; }
  // Like grad() but materializes zeros for untouched nodes.
  Tensor grad_or_zero(Val v) const {
    const Node& n = nodes_[check(v)];
    return n.gradt.data.empty() ? Tensor(n.val.shape) : n.gradt;
  }
  bool needs_grad(Val v) const { return nodes_[check(v)].needs; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Op op;
    std::vector<int32_t> ins;
    Tensor val;
    Tensor gradt;
    Attr attr;
    bool needs = false;
  };

  int32_t check(Val v) const {
    SPST_CHECK(v.i >= 0 && v.i < (int32_t)nodes_.size(), "dangling graph handle");
    return v.i;
  }
  Val push(Op op, std::vector<int32_t> ins, Tensor val, Attr attr);
  bool any_needs(std::span<const int32_t> ins) const;
  void backstep(Node& n);

  std::vector<Node> nodes_;
};

}  // namespace spst
