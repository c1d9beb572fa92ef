#include "spst/graph.hpp"

#include <cmath>
#include <cstring>

#include "spst/fft.hpp"

namespace spst {

namespace {

// outer/inner block sizes around an axis, for concat/slice on any rank.
void axis_blocks(const std::vector<int64_t>& shape, int axis, int64_t& outer,
                 int64_t& mid, int64_t& inner) {
  SPST_CHECK(axis >= 0 && axis < (int)shape.size(), "axis out of range");
  outer = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  mid = shape[axis];
  inner = 1;
  for (int i = axis + 1; i < (int)shape.size(); ++i) inner *= shape[i];
}

void ensure_grad_buf(Tensor& g, const Tensor& like) {
  if (g.data.empty()) g = Tensor(like.shape);
}

}  // namespace

Val Graph::push(Op op, std::vector<int32_t> ins, Tensor val, Attr attr) {
  Node n;
  n.op = op;
  n.ins = std::move(ins);
  n.val = std::move(val);
  n.attr = std::move(attr);
  n.needs = any_needs(n.ins);
  nodes_.push_back(std::move(n));
  return Val{(int32_t)nodes_.size() - 1};
}

bool Graph::any_needs(std::span<const int32_t> ins) const {
  for (int32_t i : ins)
    if (nodes_[i].needs) return true;
  return false;
}

Val Graph::leaf(Tensor t, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.val = std::move(t);
  n.needs = requires_grad;
  n.val.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Val{(int32_t)nodes_.size() - 1};
}

Val Graph::add(Val a, Val b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  SPST_CHECK(ta.shape == tb.shape, "add shape mismatch " + shape_str(ta.shape) +
                                       " vs " + shape_str(tb.shape));
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out.data[i] = ta.data[i] + tb.data[i];
  return push(Op::kAdd, {a.i, b.i}, std::move(out), {});
}

Val Graph::sub(Val a, Val b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  SPST_CHECK(ta.shape == tb.shape, "sub shape mismatch " + shape_str(ta.shape) +
                                       " vs " + shape_str(tb.shape));
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out.data[i] = ta.data[i] - tb.data[i];
  return push(Op::kSub, {a.i, b.i}, std::move(out), {});
}

Val Graph::mul(Val a, Val b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  SPST_CHECK(ta.shape == tb.shape, "mul shape mismatch");
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) out.data[i] = ta.data[i] * tb.data[i];
  return push(Op::kMul, {a.i, b.i}, std::move(out), {});
}

Val Graph::affine(Val x, double a, double b) {
  const Tensor& t = value(x);
  Tensor out(t.shape);
  for (int64_t i = 0; i < t.numel(); ++i) out.data[i] = a * t.data[i] + b;
  return push(Op::kAffine, {x.i}, std::move(out), ScalarAttr{a, b});
}

Val Graph::relu(Val x) {
  const Tensor& t = value(x);
  Tensor out(t.shape);
  for (int64_t i = 0; i < t.numel(); ++i)
    out.data[i] = t.data[i] > 0 ? t.data[i] : 0.0;
  return push(Op::kRelu, {x.i}, std::move(out), {});
}

Val Graph::leaky_relu(Val x, double slope) {
  const Tensor& t = value(x);
  Tensor out(t.shape);
  for (int64_t i = 0; i < t.numel(); ++i)
    out.data[i] = t.data[i] > 0 ? t.data[i] : slope * t.data[i];
  return push(Op::kLeakyRelu, {x.i}, std::move(out), ScalarAttr{slope, 0});
}

Val Graph::elu(Val x) {
  const Tensor& t = value(x);
  Tensor out(t.shape);
  for (int64_t i = 0; i < t.numel(); ++i)
    out.data[i] = t.data[i] >= 0 ? t.data[i] : std::expm1(t.data[i]);
  return push(Op::kElu, {x.i}, std::move(out), {});
}

Val Graph::conv2d(Val x, Val w, Val bias, PadSpec pad, int st, int sf) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  Tensor out;
  conv2d_forward(tx, tw, bias.ok() ? value(bias).data.data() : nullptr, pad, st,
                 sf, out);
  std::vector<int32_t> ins{x.i, w.i};
  if (bias.ok()) {
    SPST_CHECK(value(bias).numel() == tw.dim(0), "conv2d bias size");
    ins.push_back(bias.i);
  }
  return push(Op::kConv2d, std::move(ins), std::move(out), ConvAttr{pad, st, sf});
}

Val Graph::conv2d_transpose(Val y, Val w, Val bias, PadSpec pad, int st, int sf,
                            int64_t out_t, int64_t out_f) {
  const Tensor& ty = value(y);
  const Tensor& tw = value(w);
  Tensor out;
  conv2d_transpose_forward(ty, tw, bias.ok() ? value(bias).data.data() : nullptr,
                           pad, st, sf, out_t, out_f, out);
  std::vector<int32_t> ins{y.i, w.i};
  if (bias.ok()) {
    SPST_CHECK(value(bias).numel() == tw.dim(1), "conv2d_transpose bias size");
    ins.push_back(bias.i);
  }
  return push(Op::kConvT2d, std::move(ins), std::move(out), ConvAttr{pad, st, sf});
}

Val Graph::weight_norm(Val v, Val g, double eps) {
  const Tensor& tv = value(v);
  const Tensor& tg = value(g);
  const int64_t co = tv.dim(0);
  SPST_CHECK(tg.numel() == co, "weight_norm scale count != output channels");
  const int64_t per = tv.numel() / co;
  Tensor out(tv.shape);
  for (int64_t c = 0; c < co; ++c) {
    const double* vp = tv.data.data() + c * per;
    double ss = eps;
    for (int64_t i = 0; i < per; ++i) ss += vp[i] * vp[i];
    const double scale = tg.data[c] / std::sqrt(ss);
    double* op = out.data.data() + c * per;
    for (int64_t i = 0; i < per; ++i) op[i] = scale * vp[i];
  }
  return push(Op::kWeightNorm, {v.i, g.i}, std::move(out), ScalarAttr{eps, 0});
}

Val Graph::layer_norm(Val x, Val gamma, Val beta, double eps) {
  const Tensor& t = value(x);
  const Tensor& tg = value(gamma);
  const Tensor& tb = value(beta);
  SPST_CHECK(t.rank() == 3, "layer_norm wants [C,T,F]");
  SPST_CHECK(tg.numel() == t.dim(0) && tb.numel() == t.dim(0),
             "layer_norm affine params must be per-channel");
  const int64_t n = t.numel(), per = t.dim(1) * t.dim(2);
  double mean = 0;
  for (int64_t i = 0; i < n; ++i) mean += t.data[i];
  mean /= (double)n;
  double var = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = t.data[i] - mean;
    var += d * d;
  }
  var /= (double)n;
  const double inv = 1.0 / std::sqrt(var + eps);
  Tensor out(t.shape);
  for (int64_t c = 0; c < t.dim(0); ++c) {
    const double gc = tg.data[c], bc = tb.data[c];
    const double* ip = t.data.data() + c * per;
    double* op = out.data.data() + c * per;
    for (int64_t i = 0; i < per; ++i) op[i] = (ip[i] - mean) * inv * gc + bc;
  }
  NormAttr a{eps, mean, inv};
  return push(Op::kLayerNorm, {x.i, gamma.i, beta.i}, std::move(out), a);
}

Val Graph::sum(Val x) {
  const Tensor& t = value(x);
  double s = 0;
  for (double v : t.data) s += v;
  Tensor out(std::vector<int64_t>{});
  out.data[0] = s;
  return push(Op::kSum, {x.i}, std::move(out), {});
}

Val Graph::mean(Val x) {
  const Tensor& t = value(x);
  SPST_CHECK(t.numel() > 0, "mean of empty tensor");
  double s = 0;
  for (double v : t.data) s += v;
  Tensor out(std::vector<int64_t>{});
  out.data[0] = s / (double)t.numel();
  return push(Op::kMean, {x.i}, std::move(out), {});
}

Val Graph::abs(Val x) {
  const Tensor& t = value(x);
  Tensor out(t.shape);
  for (int64_t i = 0; i < t.numel(); ++i) out.data[i] = std::fabs(t.data[i]);
  return push(Op::kAbs, {x.i}, std::move(out), {});
}

Val Graph::square(Val x) {
  const Tensor& t = value(x);
  Tensor out(t.shape);
  for (int64_t i = 0; i < t.numel(); ++i) out.data[i] = t.data[i] * t.data[i];
  return push(Op::kSquare, {x.i}, std::move(out), {});
}

Val Graph::log_clamp(Val x, double floor) {
  const Tensor& t = value(x);
  SPST_CHECK(floor > 0, "log_clamp floor must be positive");
  Tensor out(t.shape);
  for (int64_t i = 0; i < t.numel(); ++i)
    out.data[i] = std::log(t.data[i] > floor ? t.data[i] : floor);
  return push(Op::kLogClamp, {x.i}, std::move(out), ScalarAttr{floor, 0});
}

Val Graph::magnitude(Val spec) {
  const Tensor& t = value(spec);
  SPST_CHECK(t.rank() == 3 && t.dim(0) == 2, "magnitude wants [2,T,F]");
  const int64_t n = t.dim(1) * t.dim(2);
  Tensor out({t.dim(1), t.dim(2)});
  const double* re = t.data.data();
  const double* im = re + n;
  for (int64_t i = 0; i < n; ++i) out.data[i] = std::hypot(re[i], im[i]);
  return push(Op::kMagnitude, {spec.i}, std::move(out), {});
}

Val Graph::disc_input(Val spec) {
  const Tensor& t = value(spec);
  SPST_CHECK(t.rank() == 3 && t.dim(0) == 2, "disc_input wants [2,T,F]");
  const int64_t n = t.dim(1) * t.dim(2);
  Tensor out({3, t.dim(1), t.dim(2)});
  const double* re = t.data.data();
  const double* im = re + n;
  std::memcpy(out.data.data(), re, sizeof(double) * size_t(2 * n));
  double* mg = out.data.data() + 2 * n;
  for (int64_t i = 0; i < n; ++i) mg[i] = std::hypot(re[i], im[i]);
  return push(Op::kDiscInput, {spec.i}, std::move(out), {});
}

Val Graph::filterbank(Val mag, std::shared_ptr<const Tensor> m) {
  const Tensor& t = value(mag);
  SPST_CHECK(t.rank() == 2 && m && m->rank() == 2 && t.dim(1) == m->dim(0),
             "filterbank wants [T,F] x [F,M]");
  Tensor out({t.dim(0), m->dim(1)});
  gemm(CblasNoTrans, CblasNoTrans, t.dim(0), m->dim(1), t.dim(1), 1.0,
       t.data.data(), t.dim(1), m->data.data(), m->dim(1), 0.0, out.data.data(),
       m->dim(1));
  return push(Op::kFilterbank, {mag.i}, std::move(out), FbankAttr{std::move(m)});
}

Val Graph::stop_gradient(Val x) {
  Node n;
  n.op = Op::kStopGrad;
  n.ins = {x.i};
  n.val = value(x);
  n.needs = false;  // cuts the gradient path by construction
  nodes_.push_back(std::move(n));
  return Val{(int32_t)nodes_.size() - 1};
}

Val Graph::concat(std::span<const Val> xs, int axis) {
  SPST_CHECK(!xs.empty(), "concat of nothing");
  const Tensor& t0 = value(xs[0]);
  int64_t outer, mid0, inner;
  axis_blocks(t0.shape, axis, outer, mid0, inner);
  int64_t mid_total = 0;
  std::vector<int32_t> ins;
  for (Val v : xs) {
    const Tensor& t = value(v);
    SPST_CHECK(t.rank() == t0.rank(), "concat rank mismatch");
    for (int i = 0; i < t0.rank(); ++i)
      if (i != axis)
        SPST_CHECK(t.shape[i] == t0.shape[i], "concat non-axis dim mismatch");
    mid_total += t.shape[axis];
    ins.push_back(v.i);
  }
  std::vector<int64_t> oshape = t0.shape;
  oshape[axis] = mid_total;
  Tensor out(oshape);
  for (int64_t o = 0; o < outer; ++o) {
    int64_t at = 0;
    for (Val v : xs) {
      const Tensor& t = value(v);
      const int64_t m = t.shape[axis];
      std::memcpy(out.data.data() + (o * mid_total + at) * inner,
                  t.data.data() + o * m * inner, sizeof(double) * size_t(m * inner));
      at += m;
    }
  }
  return push(Op::kConcat, std::move(ins), std::move(out), ConcatAttr{axis});
}

Val Graph::slice(Val x, int axis, int64_t start, int64_t len) {
  const Tensor& t = value(x);
  int64_t outer, mid, inner;
  axis_blocks(t.shape, axis, outer, mid, inner);
  SPST_CHECK(start >= 0 && len >= 0 && start + len <= mid, "slice out of range");
  std::vector<int64_t> oshape = t.shape;
  oshape[axis] = len;
  Tensor out(oshape);
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data.data() + o * len * inner,
                t.data.data() + (o * mid + start) * inner,
                sizeof(double) * size_t(len * inner));
  return push(Op::kSlice, {x.i}, std::move(out), SliceAttr{axis, start, len});
}

Val Graph::stft(Val wave, int window, int hop, int nbins) {
  const Tensor& t = value(wave);
  SPST_CHECK(t.rank() == 1, "stft wants a 1-D waveform");
  const int64_t n = t.numel();
  SPST_CHECK(n >= window, "signal shorter than the analysis window");
  SPST_CHECK(hop >= 1 && nbins >= 1 && nbins <= window / 2 + 1, "bad stft args");
  const int64_t frames = (n - window) / hop + 1;
  auto taps = hann_taps(window);
  RealFft& fft = fft_for(window);
  std::vector<double> fr(window), sp(2 * (window / 2 + 1));
  Tensor out({2, frames, nbins});
  double* re = out.data.data();
  double* im = re + frames * nbins;
  for (int64_t fidx = 0; fidx < frames; ++fidx) {
    const double* s = t.data.data() + fidx * hop;
    for (int i = 0; i < window; ++i) fr[i] = s[i] * (*taps)[i];
    fft.forward(fr.data(), sp.data());
    for (int b = 0; b < nbins; ++b) {
      re[fidx * nbins + b] = sp[2 * b];
      im[fidx * nbins + b] = sp[2 * b + 1];
    }
  }
  return push(Op::kStft, {wave.i}, std::move(out), StftAttr{window, hop, nbins});
}

Val Graph::istft(Val spec, int window, int hop) {
  const Tensor& t = value(spec);
  SPST_CHECK(t.rank() == 3 && t.dim(0) == 2, "istft wants [2,T,F]");
  const int64_t frames = t.dim(1), nbins = t.dim(2);
  SPST_CHECK(nbins <= window / 2 + 1, "istft bin count exceeds window");
  const int64_t n = (frames - 1) * hop + window;
  auto taps = hann_taps(window);
  double wsum = 0;
  for (double w : *taps) wsum += w;
  const double cola = wsum / hop;  // 1 for Hann at 50% overlap
  RealFft& fft = fft_for(window);
  std::vector<double> sp(2 * (window / 2 + 1), 0.0), fr(window);
  Tensor out({n});
  const double* re = t.data.data();
  const double* im = re + frames * nbins;
  const double scale = 1.0 / (window * cola);
  for (int64_t fidx = 0; fidx < frames; ++fidx) {
    std::fill(sp.begin(), sp.end(), 0.0);
    for (int64_t b = 0; b < nbins; ++b) {
      sp[2 * b] = re[fidx * nbins + b];
      sp[2 * b + 1] = im[fidx * nbins + b];
    }
    sp[1] = 0.0;                                   // DC is real
    if (nbins == window / 2 + 1) sp[window + 1] = 0.0;  // Nyquist is real
    fft.inverse(sp.data(), fr.data());
    double* o = out.data.data() + fidx * hop;
    for (int i = 0; i < window; ++i) o[i] += fr[i] * scale;
  }
  return push(Op::kIstft, {spec.i}, std::move(out), StftAttr{window, hop, (int)nbins});
}

void Graph::backward(Val loss) {
  const int32_t root = check(loss);
  SPST_CHECK(nodes_[root].val.numel() == 1, "backward seed must be scalar");
  if (!nodes_[root].needs) return;  // depends on no parameter: all grads zero
  ensure_grad_buf(nodes_[root].gradt, nodes_[root].val);
  nodes_[root].gradt.data[0] = 1.0;
  for (int32_t i = root; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs || n.gradt.data.empty()) continue;
    backstep(n);
  }
}

void Graph::backstep(Node& n) {
  const Tensor& g = n.gradt;
  auto in_val = [&](int k) -> const Tensor& { return nodes_[n.ins[k]].val; };
  auto in_needs = [&](int k) { return nodes_[n.ins[k]].needs; };
  auto in_grad = [&](int k) -> Tensor& {
    Node& m = nodes_[n.ins[k]];
    ensure_grad_buf(m.gradt, m.val);
    return m.gradt;
  };

  switch (n.op) {
    case Op::kLeaf:
    case Op::kStopGrad:
      break;
    case Op::kAdd: {
      for (int k = 0; k < 2; ++k) {
        if (!in_needs(k)) continue;
        Tensor& gi = in_grad(k);
        for (int64_t i = 0; i < g.numel(); ++i) gi.data[i] += g.data[i];
      }
      break;
    }
    case Op::kSub: {
      if (in_needs(0)) {
        Tensor& gi = in_grad(0);
        for (int64_t i = 0; i < g.numel(); ++i) gi.data[i] += g.data[i];
      }
      if (in_needs(1)) {
        Tensor& gi = in_grad(1);
        for (int64_t i = 0; i < g.numel(); ++i) gi.data[i] -= g.data[i];
      }
      break;
    }
    case Op::kMul: {
      if (in_needs(0)) {
        Tensor& gi = in_grad(0);
        const Tensor& other = in_val(1);
        for (int64_t i = 0; i < g.numel(); ++i)
          gi.data[i] += g.data[i] * other.data[i];
      }
      if (in_needs(1)) {
        Tensor& gi = in_grad(1);
        const Tensor& other = in_val(0);
        for (int64_t i = 0; i < g.numel(); ++i)
          gi.data[i] += g.data[i] * other.data[i];
      }
      break;
    }
    case Op::kAffine: {
      if (!in_needs(0)) break;
      const double a = std::get<ScalarAttr>(n.attr).a;
      Tensor& gi = in_grad(0);
      for (int64_t i = 0; i < g.numel(); ++i) gi.data[i] += a * g.data[i];
      break;
    }
    case Op::kRelu: {
      if (!in_needs(0)) break;
      Tensor& gi = in_grad(0);
      const Tensor& x = in_val(0);
      for (int64_t i = 0; i < g.numel(); ++i)
        if (x.data[i] > 0) gi.data[i] += g.data[i];
      break;
    }
    case Op::kLeakyRelu: {
      if (!in_needs(0)) break;
      const double slope = std::get<ScalarAttr>(n.attr).a;
      Tensor& gi = in_grad(0);
      const Tensor& x = in_val(0);
      for (int64_t i = 0; i < g.numel(); ++i)
        gi.data[i] += g.data[i] * (x.data[i] > 0 ? 1.0 : slope);
      break;
    }
    case Op::kElu: {
      if (!in_needs(0)) break;
      Tensor& gi = in_grad(0);
      const Tensor& x = in_val(0);
      for (int64_t i = 0; i < g.numel(); ++i)
        gi.data[i] += g.data[i] * (x.data[i] >= 0 ? 1.0 : n.val.data[i] + 1.0);
      break;
    }
    case Op::kConv2d: {
      const ConvAttr& a = std::get<ConvAttr>(n.attr);
      const Tensor& x = in_val(0);
      const Tensor& w = in_val(1);
      if (in_needs(0))
        conv2d_transpose_forward(g, w, (const double*)nullptr, a.pad, a.st, a.sf,
                                 x.dim(1), x.dim(2), in_grad(0), true);
      if (in_needs(1))
        conv2d_backward_kernel(x, g, a.pad, a.st, a.sf, in_grad(1));
      if (n.ins.size() > 2 && in_needs(2)) {
        Tensor& gb = in_grad(2);
        const int64_t per = g.dim(1) * g.dim(2);
        for (int64_t c = 0; c < g.dim(0); ++c) {
          double s = 0;
          const double* gp = g.data.data() + c * per;
          for (int64_t i = 0; i < per; ++i) s += gp[i];
          gb.data[c] += s;
        }
      }
      break;
    }
    case Op::kConvT2d: {
      const ConvAttr& a = std::get<ConvAttr>(n.attr);
      const Tensor& y = in_val(0);
      const Tensor& w = in_val(1);
      if (in_needs(0))
        conv2d_forward(g, w, (const double*)nullptr, a.pad, a.st, a.sf,
                       in_grad(0), true);
      if (in_needs(1))
        conv2d_backward_kernel(g, y, a.pad, a.st, a.sf, in_grad(1));
      if (n.ins.size() > 2 && in_needs(2)) {
        Tensor& gb = in_grad(2);
        const int64_t per = g.dim(1) * g.dim(2);
        for (int64_t c = 0; c < g.dim(0); ++c) {
          double s = 0;
          const double* gp = g.data.data() + c * per;
          for (int64_t i = 0; i < per; ++i) s += gp[i];
          gb.data[c] += s;
        }
      }
      break;
    }
    case Op::kWeightNorm: {
      const double eps = std::get<ScalarAttr>(n.attr).a;
      const Tensor& v = in_val(0);
      const Tensor& gs = in_val(1);
      const int64_t co = v.dim(0), per = v.numel() / co;
      for (int64_t c = 0; c < co; ++c) {
        const double* vp = v.data.data() + c * per;
        const double* gp = g.data.data() + c * per;
        double ss = eps, dot = 0;
        for (int64_t i = 0; i < per; ++i) {
          ss += vp[i] * vp[i];
          dot += gp[i] * vp[i];
        }
        const double norm = std::sqrt(ss);
        if (in_needs(1)) in_grad(1).data[c] += dot / norm;
        if (in_needs(0)) {
          double* dv = in_grad(0).data.data() + c * per;
          const double s1 = gs.data[c] / norm;
          const double s2 = gs.data[c] * dot / (norm * norm * norm);
          for (int64_t i = 0; i < per; ++i) dv[i] += s1 * gp[i] - s2 * vp[i];
        }
      }
      break;
    }
    case Op::kLayerNorm: {
      const NormAttr& a = std::get<NormAttr>(n.attr);
      const Tensor& x = in_val(0);
      const Tensor& gamma = in_val(1);
      const int64_t c_n = x.dim(0), per = x.dim(1) * x.dim(2), nn = x.numel();
      // dgamma/dbeta and the two reductions over dxhat in one pass
      double sd = 0, sdx = 0;
      for (int64_t c = 0; c < c_n; ++c) {
        const double* xp = x.data.data() + c * per;
        const double* gp = g.data.data() + c * per;
        const double gc = gamma.data[c];
        double dg = 0, db = 0;
        for (int64_t i = 0; i < per; ++i) {
          const double xhat = (xp[i] - a.mean) * a.inv;
          const double dxh = gp[i] * gc;
          dg += gp[i] * xhat;
          db += gp[i];
          sd += dxh;
          sdx += dxh * xhat;
        }
        if (in_needs(1)) in_grad(1).data[c] += dg;
        if (in_needs(2)) in_grad(2).data[c] += db;
      }
      if (in_needs(0)) {
        Tensor& gi = in_grad(0);
        const double md = sd / (double)nn, mdx = sdx / (double)nn;
        for (int64_t c = 0; c < c_n; ++c) {
          const double* xp = x.data.data() + c * per;
          const double* gp = g.data.data() + c * per;
          const double gc = gamma.data[c];
          double* dp = gi.data.data() + c * per;
          for (int64_t i = 0; i < per; ++i) {
            const double xhat = (xp[i] - a.mean) * a.inv;
            dp[i] += a.inv * (gp[i] * gc - md - xhat * mdx);
          }
        }
      }
      break;
    }
    case Op::kSum: {
      if (!in_needs(0)) break;
      Tensor& gi = in_grad(0);
      const double s = g.data[0];
      for (auto& v : gi.data) v += s;
      break;
    }
    case Op::kMean: {
      if (!in_needs(0)) break;
      Tensor& gi = in_grad(0);
      const double s = g.data[0] / (double)gi.numel();
      for (auto& v : gi.data) v += s;
      break;
    }
    case Op::kAbs: {
      if (!in_needs(0)) break;
      Tensor& gi = in_grad(0);
      const Tensor& x = in_val(0);
      for (int64_t i = 0; i < g.numel(); ++i) {
        if (x.data[i] > 0)
          gi.data[i] += g.data[i];
        else if (x.data[i] < 0)
          gi.data[i] -= g.data[i];
      }
      break;
    }
    case Op::kSquare: {
      if (!in_needs(0)) break;
      Tensor& gi = in_grad(0);
      const Tensor& x = in_val(0);
      for (int64_t i = 0; i < g.numel(); ++i)
        gi.data[i] += 2.0 * x.data[i] * g.data[i];
      break;
    }
    case Op::kLogClamp: {
      if (!in_needs(0)) break;
      const double floor = std::get<ScalarAttr>(n.attr).a;
      Tensor& gi = in_grad(0);
      const Tensor& x = in_val(0);
      for (int64_t i = 0; i < g.numel(); ++i)
        if (x.data[i] > floor) gi.data[i] += g.data[i] / x.data[i];
      break;
    }
    case Op::kMagnitude: {
      if (!in_needs(0)) break;
      Tensor& gi = in_grad(0);
      const Tensor& x = in_val(0);
      const int64_t nn = n.val.numel();
      const double* re = x.data.data();
      const double* im = re + nn;
      double* dre = gi.data.data();
      double* dim = dre + nn;
      for (int64_t i = 0; i < nn; ++i) {
        const double m = n.val.data[i];
        if (m > 0) {
          dre[i] += g.data[i] * re[i] / m;
          dim[i] += g.data[i] * im[i] / m;
        }
      }
      break;
    }
    case Op::kDiscInput: {
      if (!in_needs(0)) break;
      Tensor& gi = in_grad(0);
      const Tensor& x = in_val(0);
      const int64_t nn = x.numel() / 2;
      const double* re = x.data.data();
      const double* im = re + nn;
      const double* g0 = g.data.data();
      const double* g1 = g0 + nn;
      const double* g2 = g1 + nn;
      double* dre = gi.data.data();
      double* dim = dre + nn;
      for (int64_t i = 0; i < nn; ++i) {
        dre[i] += g0[i];
        dim[i] += g1[i];
        const double m = std::hypot(re[i], im[i]);
        if (m > 0) {
          dre[i] += g2[i] * re[i] / m;
          dim[i] += g2[i] * im[i] / m;
        }
      }
      break;
    }
    case Op::kFilterbank: {
      if (!in_needs(0)) break;
      const Tensor& m = *std::get<FbankAttr>(n.attr).m;
      Tensor& gi = in_grad(0);
      gemm(CblasNoTrans, CblasTrans, gi.dim(0), gi.dim(1), m.dim(1), 1.0,
           g.data.data(), m.dim(1), m.data.data(), m.dim(1), 1.0, gi.data.data(),
           gi.dim(1));
      break;
    }
    case Op::kConcat: {
      const int axis = std::get<ConcatAttr>(n.attr).axis;
      int64_t outer, mid_total, inner;
      axis_blocks(n.val.shape, axis, outer, mid_total, inner);
      int64_t at = 0;
      for (size_t k = 0; k < n.ins.size(); ++k) {
        const int64_t m = in_val((int)k).shape[axis];
        if (in_needs((int)k)) {
          Tensor& gi = in_grad((int)k);
          for (int64_t o = 0; o < outer; ++o) {
            const double* src = g.data.data() + (o * mid_total + at) * inner;
            double* dst = gi.data.data() + o * m * inner;
            for (int64_t i = 0; i < m * inner; ++i) dst[i] += src[i];
          }
        }
        at += m;
      }
      break;
    }
    case Op::kSlice: {
      if (!in_needs(0)) break;
      const SliceAttr& a = std::get<SliceAttr>(n.attr);
      Tensor& gi = in_grad(0);
      int64_t outer, mid, inner;
      axis_blocks(gi.shape, a.axis, outer, mid, inner);
      for (int64_t o = 0; o < outer; ++o) {
        const double* src = g.data.data() + o * a.len * inner;
        double* dst = gi.data.data() + (o * mid + a.start) * inner;
        for (int64_t i = 0; i < a.len * inner; ++i) dst[i] += src[i];
      }
      break;
    }
    case Op::kStft: {
      if (!in_needs(0)) break;
      const StftAttr& a = std::get<StftAttr>(n.attr);
      Tensor& gi = in_grad(0);
      auto taps = hann_taps(a.window);
      RealFft& fft = fft_for(a.window);
      const int64_t frames = n.val.dim(1), nbins = a.nbins;
      const int nyq = a.window / 2;
      std::vector<double> sp(2 * (nyq + 1), 0.0), fr(a.window);
      const double* gre = g.data.data();
      const double* gim = gre + frames * nbins;
      for (int64_t fidx = 0; fidx < frames; ++fidx) {
        std::fill(sp.begin(), sp.end(), 0.0);
        sp[0] = gre[fidx * nbins];  // DC: weight 1, imag part has no effect
        for (int64_t b = 1; b < nbins && b < nyq; ++b) {
          sp[2 * b] = 0.5 * gre[fidx * nbins + b];
          sp[2 * b + 1] = 0.5 * gim[fidx * nbins + b];
        }
        if (nbins == nyq + 1) sp[2 * nyq] = gre[fidx * nbins + nyq];
        fft.inverse(sp.data(), fr.data());
        double* dst = gi.data.data() + fidx * a.hop;
        for (int i = 0; i < a.window; ++i) dst[i] += fr[i] * (*taps)[i];
      }
      break;
    }
    case Op::kIstft: {
      if (!in_needs(0)) break;
      const StftAttr& a = std::get<StftAttr>(n.attr);
      Tensor& gi = in_grad(0);
      auto taps = hann_taps(a.window);
      double wsum = 0;
      for (double w : *taps) wsum += w;
      const double scale = 1.0 / (a.window * (wsum / a.hop));
      RealFft& fft = fft_for(a.window);
      const int64_t frames = gi.dim(1), nbins = gi.dim(2);
      const int nyq = a.window / 2;
      std::vector<double> fr(a.window), sp(2 * (nyq + 1));
      double* dre = gi.data.data();
      double* dim = dre + frames * nbins;
      for (int64_t fidx = 0; fidx < frames; ++fidx) {
        const double* src = g.data.data() + fidx * a.hop;
        for (int i = 0; i < a.window; ++i) fr[i] = src[i] * scale;
        fft.forward(fr.data(), sp.data());
        dre[fidx * nbins] += sp[0];
        for (int64_t b = 1; b < nbins && b < nyq; ++b) {
          dre[fidx * nbins + b] += 2.0 * sp[2 * b];
          dim[fidx * nbins + b] += 2.0 * sp[2 * b + 1];
        }
        if (nbins == nyq + 1) dre[fidx * nbins + nyq] += sp[2 * nyq];
      }
      break;
    }
  }
}

}  // namespace spst
