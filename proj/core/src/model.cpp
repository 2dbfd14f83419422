#include "weaklab/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "weaklab/errors.hpp"
#include "weaklab/parallel.hpp"
#include "weaklab/rng.hpp"

namespace weaklab {

namespace {

constexpr double kLossEps = 1e-12;

// CNN layer geometry for 3x32x32 inputs.
constexpr int kC1Out = 6, kC2Out = 16, kKernel = 5;
constexpr int kConv1H = 28, kPool1H = 14, kConv2H = 10, kPool2H = 5;
constexpr int kFlat = kC2Out * kPool2H * kPool2H; // 400
constexpr int kFc1 = 120, kCnnEmb = 84;
constexpr int kMlpH1 = 64, kMlpEmb = 32;

std::array<double, 2> softmax2(const std::array<double, 2>& z) {
  const double m = std::max(z[0], z[1]);
  const double e0 = std::exp(z[0] - m);
  const double e1 = std::exp(z[1] - m);
  const double s = e0 + e1;
  return {e0 / s, e1 / s};
}

// dz = J_softmax(s)^T ds
std::array<double, 2> softmax_backward(const std::array<double, 2>& s,
                                       const std::array<double, 2>& ds) {
  const double dot = ds[0] * s[0] + ds[1] * s[1];
  return {s[0] * (ds[0] - dot), s[1] * (ds[1] - dot)};
}

void fc_forward(const double* in, int in_dim, const double* w, const double* b,
                int out_dim, double* out) {
  for (int o = 0; o < out_dim; ++o) {
    const double* wr = w + static_cast<std::size_t>(o) * in_dim;
    double acc = b[o];
    for (int i = 0; i < in_dim; ++i) acc += wr[i] * in[i];
    out[o] = acc;
  }
}

// din may be null (first layer). `in` holds the layer's input activations.
void fc_backward(const double* dout, int out_dim, const double* in, int in_dim,
                 const double* w, double* dw, double* db, double* din) {
  for (int o = 0; o < out_dim; ++o) {
    const double g = dout[o];
    if (g == 0.0) continue;
    double* dwr = dw + static_cast<std::size_t>(o) * in_dim;
    const double* wr = w + static_cast<std::size_t>(o) * in_dim;
    db[o] += g;
    for (int i = 0; i < in_dim; ++i) dwr[i] += g * in[i];
    if (din)
      for (int i = 0; i < in_dim; ++i) din[i] += g * wr[i];
  }
}

// Valid convolution, stride 1; in: (cin, h, w), out: (cout, h-k+1, w-k+1).
void conv_forward(const double* in, int cin, int h, int w, const double* wt,
                  const double* b, int cout, int k, double* out) {
  const int oh = h - k + 1, ow = w - k + 1;
  for (int oc = 0; oc < cout; ++oc) {
    double* outc = out + static_cast<std::size_t>(oc) * oh * ow;
    for (int i = 0; i < oh * ow; ++i) outc[i] = b[oc];
    for (int ic = 0; ic < cin; ++ic) {
      const double* inc = in + static_cast<std::size_t>(ic) * h * w;
      const double* wk =
          wt + (static_cast<std::size_t>(oc) * cin + ic) * k * k;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double wv = wk[ky * k + kx];
          for (int y = 0; y < oh; ++y) {
            const double* row = inc + (y + ky) * w + kx;
            double* orow = outc + y * ow;
            for (int x = 0; x < ow; ++x) orow[x] += wv * row[x];
          }
        }
    }
  }
}

void conv_backward(const double* dout, const double* in, int cin, int h, int w,
                   const double* wt, int cout, int k, double* dwt, double* db,
                   double* din) {
  const int oh = h - k + 1, ow = w - k + 1;
  for (int oc = 0; oc < cout; ++oc) {
    const double* doutc = dout + static_cast<std::size_t>(oc) * oh * ow;
    for (int i = 0; i < oh * ow; ++i) db[oc] += doutc[i];
    for (int ic = 0; ic < cin; ++ic) {
      const double* inc = in + static_cast<std::size_t>(ic) * h * w;
      double* dinc =
          din ? din + static_cast<std::size_t>(ic) * h * w : nullptr;
      const std::size_t base = (static_cast<std::size_t>(oc) * cin + ic) * k * k;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          double acc = 0.0;
          const double wv = wt[base + ky * k + kx];
          for (int y = 0; y < oh; ++y) {
            const double* row = inc + (y + ky) * w + kx;
            const double* drow = doutc + y * ow;
            for (int x = 0; x < ow; ++x) acc += drow[x] * row[x];
          }
          dwt[base + ky * k + kx] += acc;
          if (dinc) {
            for (int y = 0; y < oh; ++y) {
              double* dirow = dinc + (y + ky) * w + kx;
              const double* drow = doutc + y * ow;
              for (int x = 0; x < ow; ++x) dirow[x] += wv * drow[x];
            }
          }
        }
    }
  }
}

// ReLU then 2x2 max pool, stride 2. argmax stores the flat index into `pre`
// of the winning entry (first winner on ties).
void relu_pool_forward(const double* pre, int c, int h, int w, double* out,
                       int* argmax) {
  const int oh = h / 2, ow = w / 2;
  for (int ch = 0; ch < c; ++ch) {
    const double* pc = pre + static_cast<std::size_t>(ch) * h * w;
    double* oc = out + static_cast<std::size_t>(ch) * oh * ow;
    int* ac = argmax + static_cast<std::size_t>(ch) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double best = -1.0;
        int best_idx = -1;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (2 * y + dy) * w + (2 * x + dx);
            const double v = pc[idx] > 0.0 ? pc[idx] : 0.0;
            if (v > best) {
              best = v;
              best_idx = idx;
            }
          }
        oc[y * ow + x] = best;
        ac[y * ow + x] = ch * h * w + best_idx;
      }
  }
}

void relu_pool_backward(const double* dout, int n_out, const int* argmax,
                        const double* pre, double* dpre) {
  for (int i = 0; i < n_out; ++i) {
    const int a = argmax[i];
    if (pre[a] > 0.0) dpre[a] += dout[i];
  }
}

enum CnnTensors {
  kConv1W, kConv1B, kConv2W, kConv2B,
  kCnnFc1W, kCnnFc1B, kCnnFc2W, kCnnFc2B, kCnnOutW, kCnnOutB
};
enum MlpTensors { kMlpFc1W, kMlpFc1B, kMlpFc2W, kMlpFc2B, kMlpOutW, kMlpOutB };

std::vector<double> to_double(const Tensor& t) {
  std::vector<double> out(t.data.size());
  for (std::size_t i = 0; i < t.data.size(); ++i)
    out[i] = static_cast<double>(t.data[i]);
  return out;
}

std::vector<double> relu_of(const std::vector<double>& pre) {
  std::vector<double> out(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i)
    out[i] = pre[i] > 0.0 ? pre[i] : 0.0;
  return out;
}

void check_input_shape(const ModelParams& params, const Tensor& x) {
  if (x.shape != params.input_shape)
    throw std::invalid_argument(
        "shape mismatch: model expects " + shape_to_string(params.input_shape) +
        ", got " + shape_to_string(x.shape));
}

InstanceTrace forward_instance_traced(const ModelParams& params,
                                      const Tensor& x) {
  check_input_shape(params, x);
  InstanceTrace tr;
  tr.input = to_double(x);
  const auto& t = params.tensors;
  if (params.arch == ArchKind::cnn) {
    tr.conv1_pre.resize(kC1Out * kConv1H * kConv1H);
    conv_forward(tr.input.data(), 3, 32, 32, t[kConv1W].v.data(),
                 t[kConv1B].v.data(), kC1Out, kKernel, tr.conv1_pre.data());
    tr.pool1.resize(kC1Out * kPool1H * kPool1H);
    tr.pool1_arg.resize(tr.pool1.size());
    relu_pool_forward(tr.conv1_pre.data(), kC1Out, kConv1H, kConv1H,
                      tr.pool1.data(), tr.pool1_arg.data());
    tr.conv2_pre.resize(kC2Out * kConv2H * kConv2H);
    conv_forward(tr.pool1.data(), kC1Out, kPool1H, kPool1H, t[kConv2W].v.data(),
                 t[kConv2B].v.data(), kC2Out, kKernel, tr.conv2_pre.data());
    tr.pool2.resize(kFlat);
    tr.pool2_arg.resize(tr.pool2.size());
    relu_pool_forward(tr.conv2_pre.data(), kC2Out, kConv2H, kConv2H,
                      tr.pool2.data(), tr.pool2_arg.data());
    tr.fc1_pre.resize(kFc1);
    fc_forward(tr.pool2.data(), kFlat, t[kCnnFc1W].v.data(),
               t[kCnnFc1B].v.data(), kFc1, tr.fc1_pre.data());
    const auto h1 = relu_of(tr.fc1_pre);
    tr.fc2_pre.resize(kCnnEmb);
    fc_forward(h1.data(), kFc1, t[kCnnFc2W].v.data(), t[kCnnFc2B].v.data(),
               kCnnEmb, tr.fc2_pre.data());
    const auto emb = relu_of(tr.fc2_pre);
    double logits[2];
    fc_forward(emb.data(), kCnnEmb, t[kCnnOutW].v.data(), t[kCnnOutB].v.data(),
               2, logits);
    tr.logits = {logits[0], logits[1]};
  } else {
    const int in_dim = static_cast<int>(tr.input.size());
    tr.fc1_pre.resize(kMlpH1);
    fc_forward(tr.input.data(), in_dim, t[kMlpFc1W].v.data(),
               t[kMlpFc1B].v.data(), kMlpH1, tr.fc1_pre.data());
    const auto h1 = relu_of(tr.fc1_pre);
    tr.fc2_pre.resize(kMlpEmb);
    fc_forward(h1.data(), kMlpH1, t[kMlpFc2W].v.data(), t[kMlpFc2B].v.data(),
               kMlpEmb, tr.fc2_pre.data());
    const auto emb = relu_of(tr.fc2_pre);
    double logits[2];
    fc_forward(emb.data(), kMlpEmb, t[kMlpOutW].v.data(), t[kMlpOutB].v.data(),
               2, logits);
    tr.logits = {logits[0], logits[1]};
  }
  return tr;
}

// Backward through the instance net from d(loss)/d(logits).
void backward_instance(const ModelParams& params, const InstanceTrace& tr,
                       const std::array<double, 2>& dlogits, Gradients& acc) {
  const auto& t = params.tensors;
  const int emb_dim = params.embedding_dim;
  const auto emb = relu_of(tr.fc2_pre);

  const int out_w = params.arch == ArchKind::cnn ? kCnnOutW : kMlpOutW;
  const int out_b = out_w + 1;
  const int fc2_w = params.arch == ArchKind::cnn ? kCnnFc2W : kMlpFc2W;
  const int fc2_b = fc2_w + 1;
  const int fc1_w = params.arch == ArchKind::cnn ? kCnnFc1W : kMlpFc1W;
  const int fc1_b = fc1_w + 1;

  std::vector<double> demb(emb_dim, 0.0);
  fc_backward(dlogits.data(), 2, emb.data(), emb_dim, t[out_w].v.data(),
              acc.g[out_w].data(), acc.g[out_b].data(), demb.data());

  // relu mask at fc2
  std::vector<double> df2(emb_dim);
  for (int i = 0; i < emb_dim; ++i)
    df2[i] = tr.fc2_pre[i] > 0.0 ? demb[i] : 0.0;

  const int h1_dim = static_cast<int>(tr.fc1_pre.size());
  const auto h1 = relu_of(tr.fc1_pre);
  std::vector<double> dh1(h1_dim, 0.0);
  fc_backward(df2.data(), emb_dim, h1.data(), h1_dim, t[fc2_w].v.data(),
              acc.g[fc2_w].data(), acc.g[fc2_b].data(), dh1.data());

  std::vector<double> df1(h1_dim);
  for (int i = 0; i < h1_dim; ++i)
    df1[i] = tr.fc1_pre[i] > 0.0 ? dh1[i] : 0.0;

  if (params.arch == ArchKind::mlp) {
    fc_backward(df1.data(), h1_dim, tr.input.data(),
                static_cast<int>(tr.input.size()), t[fc1_w].v.data(),
                acc.g[fc1_w].data(), acc.g[fc1_b].data(), nullptr);
    return;
  }

  std::vector<double> dpool2(kFlat, 0.0);
  fc_backward(df1.data(), h1_dim, tr.pool2.data(), kFlat, t[fc1_w].v.data(),
              acc.g[fc1_w].data(), acc.g[fc1_b].data(), dpool2.data());

  std::vector<double> dconv2(tr.conv2_pre.size(), 0.0);
  relu_pool_backward(dpool2.data(), kFlat, tr.pool2_arg.data(),
                     tr.conv2_pre.data(), dconv2.data());

  std::vector<double> dpool1(tr.pool1.size(), 0.0);
  conv_backward(dconv2.data(), tr.pool1.data(), kC1Out, kPool1H, kPool1H,
                t[kConv2W].v.data(), kC2Out, kKernel, acc.g[kConv2W].data(),
                acc.g[kConv2B].data(), dpool1.data());

  std::vector<double> dconv1(tr.conv1_pre.size(), 0.0);
  relu_pool_backward(dpool1.data(), static_cast<int>(tr.pool1.size()),
                     tr.pool1_arg.data(), tr.conv1_pre.data(), dconv1.data());

  conv_backward(dconv1.data(), tr.input.data(), 3, 32, 32, t[kConv1W].v.data(),
                kC1Out, kKernel, acc.g[kConv1W].data(), acc.g[kConv1B].data(),
                nullptr);
}

void check_distribution(const std::array<double, 2>& p) {
  if (!(p[0] >= 0.0) || !(p[1] >= 0.0) || std::abs(p[0] + p[1] - 1.0) > 1e-6)
    throw std::runtime_error("aggregated bag probabilities are not a distribution");
}

} // namespace

ArchKind arch_from_string(const std::string& s) {
  if (s == "cnn") return ArchKind::cnn;
  if (s == "mlp") return ArchKind::mlp;
  throw ConfigError("unknown arch '" + s + "' (expected cnn|mlp)");
}

std::string to_string(ArchKind a) {
  return a == ArchKind::cnn ? "cnn" : "mlp";
}

AggregationMode aggregation_from_string(const std::string& s) {
  if (s == "mean_then_softmax") return AggregationMode::mean_then_softmax;
  if (s == "softmax_then_mean") return AggregationMode::softmax_then_mean;
  if (s == "softmax_then_max") return AggregationMode::softmax_then_max;
  throw ConfigError("unknown aggregation mode '" + s + "'");
}

std::string to_string(AggregationMode m) {
  switch (m) {
    case AggregationMode::mean_then_softmax: return "mean_then_softmax";
    case AggregationMode::softmax_then_mean: return "softmax_then_mean";
    case AggregationMode::softmax_then_max: return "softmax_then_max";
  }
  return "unknown";
}

std::int64_t ModelParams::total_params() const {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += t.numel();
  return n;
}

const ParamTensor& ModelParams::by_name(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw std::out_of_range("no parameter tensor named " + name);
}

ParamTensor& ModelParams::by_name(const std::string& name) {
  for (auto& t : tensors)
    if (t.name == name) return t;
  throw std::out_of_range("no parameter tensor named " + name);
}

ModelParams init_model(ArchKind arch, const std::vector<int>& input_shape,
                       std::uint64_t init_seed) {
  ModelParams p;
  p.arch = arch;
  p.input_shape = input_shape;
  p.init_seed = init_seed;

  struct Spec {
    std::string name;
    std::vector<int> shape;
    int fan_in;
  };
  std::vector<Spec> specs;
  if (arch == ArchKind::cnn) {
    if (input_shape != std::vector<int>{3, 32, 32})
      throw ConfigError("cnn arch requires 3x32x32 inputs, got " +
                        shape_to_string(input_shape));
    p.embedding_dim = kCnnEmb;
    specs = {
        {"conv1_w", {kC1Out, 3, kKernel, kKernel}, 3 * kKernel * kKernel},
        {"conv1_b", {kC1Out}, 3 * kKernel * kKernel},
        {"conv2_w", {kC2Out, kC1Out, kKernel, kKernel}, kC1Out * kKernel * kKernel},
        {"conv2_b", {kC2Out}, kC1Out * kKernel * kKernel},
        {"fc1_w", {kFc1, kFlat}, kFlat},
        {"fc1_b", {kFc1}, kFlat},
        {"fc2_w", {kCnnEmb, kFc1}, kFc1},
        {"fc2_b", {kCnnEmb}, kFc1},
        {"out_w", {2, kCnnEmb}, kCnnEmb},
        {"out_b", {2}, kCnnEmb},
    };
  } else {
    const auto in_dim = static_cast<int>(Tensor::numel_of(input_shape));
    if (in_dim < 1) throw ConfigError("mlp arch requires a non-empty input shape");
    p.embedding_dim = kMlpEmb;
    specs = {
        {"fc1_w", {kMlpH1, in_dim}, in_dim}, {"fc1_b", {kMlpH1}, in_dim},
        {"fc2_w", {kMlpEmb, kMlpH1}, kMlpH1}, {"fc2_b", {kMlpEmb}, kMlpH1},
        {"out_w", {2, kMlpEmb}, kMlpEmb},    {"out_b", {2}, kMlpEmb},
    };
  }

  std::mt19937_64 rng(init_seed);
  for (auto& s : specs) {
    ParamTensor t;
    t.name = std::move(s.name);
    t.shape = s.shape;
    t.v.resize(static_cast<std::size_t>(Tensor::numel_of(s.shape)));
    const double bound = std::sqrt(1.0 / s.fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& x : t.v) x = dist(rng);
    p.tensors.push_back(std::move(t));
  }
  return p;
}

std::uint64_t params_checksum(const ModelParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : params.tensors)
    h = fnv1a(t.v.data(), t.v.size() * sizeof(double), h);
  return h;
}

double GradEmbedding::l2_norm() const {
  double s = 0.0;
  for (double x : g) s += x * x;
  return std::sqrt(s);
}

std::pair<std::array<double, 2>, std::vector<double>> forward_instance(
    const ModelParams& params, const Tensor& x) {
  const auto tr = forward_instance_traced(params, x);
  return {tr.logits, relu_of(tr.fc2_pre)};
}

std::array<double, 2> aggregate(
    const std::vector<std::array<double, 2>>& instance_logits,
    AggregationMode mode) {
  if (instance_logits.empty())
    throw std::invalid_argument("aggregate: empty input");
  const auto n = static_cast<double>(instance_logits.size());
  std::array<double, 2> p{0.0, 0.0};
  switch (mode) {
    case AggregationMode::mean_then_softmax: {
      std::array<double, 2> zbar{0.0, 0.0};
      for (const auto& z : instance_logits) {
        zbar[0] += z[0];
        zbar[1] += z[1];
      }
      zbar[0] /= n;
      zbar[1] /= n;
      p = softmax2(zbar);
      break;
    }
    case AggregationMode::softmax_then_mean: {
      for (const auto& z : instance_logits) {
        const auto s = softmax2(z);
        p[0] += s[0];
        p[1] += s[1];
      }
      p[0] /= n;
      p[1] /= n;
      break;
    }
    case AggregationMode::softmax_then_max: {
      std::array<double, 2> q{0.0, 0.0};
      for (const auto& z : instance_logits) {
        const auto s = softmax2(z);
        q[0] = std::max(q[0], s[0]);
        q[1] = std::max(q[1], s[1]);
      }
      const double zsum = q[0] + q[1];
      p = {q[0] / zsum, q[1] / zsum};
      break;
    }
  }
  check_distribution(p);
  return p;
}

BagOutput forward_bag(const ModelParams& params,
                      const std::vector<const Tensor*>& instance_feats,
                      AggregationMode mode, bool want_trace) {
  if (instance_feats.empty()) throw std::invalid_argument("empty bag");
  auto trace = std::make_shared<BagTrace>();
  trace->instances.reserve(instance_feats.size());
  BagOutput out;
  out.mode = mode;
  out.embedding.assign(static_cast<std::size_t>(params.embedding_dim), 0.0);
  std::vector<std::array<double, 2>> logits;
  logits.reserve(instance_feats.size());
  for (const Tensor* feat : instance_feats) {
    auto tr = forward_instance_traced(params, *feat);
    logits.push_back(tr.logits);
    out.instance_probs.push_back(softmax2(tr.logits));
    const auto emb = relu_of(tr.fc2_pre);
    for (std::size_t i = 0; i < emb.size(); ++i) out.embedding[i] += emb[i];
    trace->instances.push_back(std::move(tr));
  }
  const auto n = static_cast<double>(instance_feats.size());
  for (auto& e : out.embedding) e /= n;
  out.bag_probs = aggregate(logits, mode);
  if (want_trace) out.trace = std::move(trace);
  return out;
}

BagOutput forward_bag(const ModelParams& params, const Bag& bag,
                      const InstanceSet& instances, AggregationMode mode,
                      bool want_trace) {
  std::vector<const Tensor*> feats;
  feats.reserve(bag.instance_ids.size());
  for (std::int64_t id : bag.instance_ids)
    feats.push_back(&instances.by_id(id).features);
  return forward_bag(params, feats, mode, want_trace);
}

double bag_loss(const BagOutput& output, const SoftLabel& target) {
  if (target[0] < -1e-12 || target[1] < -1e-12 ||
      std::abs(target[0] + target[1] - 1.0) > 1e-9)
    throw std::invalid_argument("invalid target: not a distribution");
  return -(target[0] * std::log(output.bag_probs[0] + kLossEps) +
           target[1] * std::log(output.bag_probs[1] + kLossEps));
}

GradEmbedding last_layer_gradient(const BagOutput& output) {
  if (output.mode != AggregationMode::mean_then_softmax)
    throw std::invalid_argument(
        "gradient embedding defined for mean_then_softmax");
  const auto& p = output.bag_probs;
  const int pseudo = p[1] > p[0] ? 1 : 0; // ties -> class 0
  const std::array<double, 2> diff{p[0] - (pseudo == 0 ? 1.0 : 0.0),
                                   p[1] - (pseudo == 1 ? 1.0 : 0.0)};
  const auto e = output.embedding.size();
  GradEmbedding g;
  g.g.resize(2 * (e + 1));
  for (int c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < e; ++i)
      g.g[c * e + i] = diff[c] * output.embedding[i];
  g.g[2 * e] = diff[0];
  g.g[2 * e + 1] = diff[1];
  return g;
}

Gradients zero_gradients(const ModelParams& params) {
  Gradients g;
  g.g.reserve(params.tensors.size());
  for (const auto& t : params.tensors)
    g.g.emplace_back(t.v.size(), 0.0);
  return g;
}

namespace {

// Adds one bag's (unnormalized) gradient contribution and returns its loss.
double backward_item(const ModelParams& params, const TrainItem& item,
                     AggregationMode mode, Gradients& acc) {
  std::vector<const Tensor*> feats;
  feats.reserve(item.instances.size());
  for (const auto& t : item.instances) feats.push_back(&t);
  BagOutput out = forward_bag(params, feats, mode, /*want_trace=*/true);
  const double loss = bag_loss(out, item.target);

  const auto n_inst = out.trace->instances.size();
  const double n = static_cast<double>(n_inst);
  const auto& t = item.target;
  std::vector<std::array<double, 2>> dz(n_inst, {0.0, 0.0});

  switch (mode) {
    case AggregationMode::mean_then_softmax: {
      const std::array<double, 2> dzbar{out.bag_probs[0] - t[0],
                                        out.bag_probs[1] - t[1]};
      for (auto& d : dz) d = {dzbar[0] / n, dzbar[1] / n};
      break;
    }
    case AggregationMode::softmax_then_mean: {
      const std::array<double, 2> dp{-t[0] / (out.bag_probs[0] + kLossEps),
                                     -t[1] / (out.bag_probs[1] + kLossEps)};
      for (std::size_t i = 0; i < n_inst; ++i) {
        const std::array<double, 2> ds{dp[0] / n, dp[1] / n};
        dz[i] = softmax_backward(out.instance_probs[i], ds);
      }
      break;
    }
    case AggregationMode::softmax_then_max: {
      // Recover per-class argmax instances (first winner on ties).
      std::array<std::size_t, 2> winner{0, 0};
      std::array<double, 2> q{out.instance_probs[0][0],
                              out.instance_probs[0][1]};
      for (std::size_t i = 1; i < n_inst; ++i)
        for (int c = 0; c < 2; ++c)
          if (out.instance_probs[i][c] > q[c]) {
            q[c] = out.instance_probs[i][c];
            winner[c] = i;
          }
      const double zsum = q[0] + q[1];
      const std::array<double, 2> dp{-t[0] / (out.bag_probs[0] + kLossEps),
                                     -t[1] / (out.bag_probs[1] + kLossEps)};
      const double dot = dp[0] * out.bag_probs[0] + dp[1] * out.bag_probs[1];
      std::vector<std::array<double, 2>> ds(n_inst, {0.0, 0.0});
      for (int c = 0; c < 2; ++c) ds[winner[c]][c] += (dp[c] - dot) / zsum;
      for (std::size_t i = 0; i < n_inst; ++i)
        if (ds[i][0] != 0.0 || ds[i][1] != 0.0)
          dz[i] = softmax_backward(out.instance_probs[i], ds[i]);
      break;
    }
  }

  for (std::size_t i = 0; i < n_inst; ++i)
    backward_instance(params, out.trace->instances[i], dz[i], acc);
  return loss;
}

} // namespace

double compute_batch_gradients(const ModelParams& params,
                               const std::vector<TrainItem>& batch,
                               AggregationMode mode, Gradients& out,
                               int threads) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  out = zero_gradients(params);
  const auto n = static_cast<std::int64_t>(batch.size());
  const int t = static_cast<int>(
      std::max<std::int64_t>(1, std::min<std::int64_t>(threads, n)));

  std::vector<Gradients> worker_grads(static_cast<std::size_t>(t));
  std::vector<double> worker_loss(static_cast<std::size_t>(t), 0.0);
  for (auto& g : worker_grads) g = zero_gradients(params);

  parallel_chunks(n, t, [&](int w, std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i)
      worker_loss[w] += backward_item(params, batch[static_cast<std::size_t>(i)],
                                      mode, worker_grads[w]);
  });

  double loss_sum = 0.0;
  for (int w = 0; w < t; ++w) {
    loss_sum += worker_loss[w];
    for (std::size_t ti = 0; ti < out.g.size(); ++ti) {
      const auto& src = worker_grads[static_cast<std::size_t>(w)].g[ti];
      auto& dst = out.g[ti];
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& g : out.g)
    for (auto& x : g) x *= inv;
  return loss_sum * inv;
}

AdamState init_adam(const ModelParams& params) {
  AdamState s;
  s.m.reserve(params.tensors.size());
  s.v.reserve(params.tensors.size());
  for (const auto& t : params.tensors) {
    s.m.emplace_back(t.v.size(), 0.0);
    s.v.emplace_back(t.v.size(), 0.0);
  }
  return s;
}

void adam_update(ModelParams& params, AdamState& state, const Gradients& grads,
                 double lr, double weight_decay) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  bool finite = true;
  for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
    auto& p = params.tensors[ti].v;
    auto& m = state.m[ti];
    auto& v = state.v[ti];
    const auto& g = grads.g[ti];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] + weight_decay * p[i];
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      finite &= std::isfinite(p[i]);
    }
  }
  if (!finite)
    throw std::runtime_error("non-finite parameter after Adam step " +
                             std::to_string(state.step));
}

double train_step(ModelParams& params, AdamState& state,
                  const std::vector<TrainItem>& batch, AggregationMode mode,
                  double lr, double weight_decay, int threads) {
  Gradients grads;
  const double loss = compute_batch_gradients(params, batch, mode, grads, threads);
  if (!std::isfinite(loss))
    throw std::runtime_error("non-finite loss (" + std::to_string(loss) +
                             ") at optimizer step " +
                             std::to_string(state.step + 1));
  adam_update(params, state, grads, lr, weight_decay);
  return loss;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

constexpr char kCkptMagic[4] = {'W', 'L', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw std::runtime_error("truncated checkpoint");
  return v;
}

} // namespace

void save_checkpoint(const ModelParams& params, AggregationMode mode,
                     int epoch, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kCkptMagic, 4);
  write_pod<std::uint32_t>(out, kCkptVersion);
  write_pod<std::uint8_t>(out, params.arch == ArchKind::cnn ? 0 : 1);
  write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(mode));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(epoch));
  write_pod<std::uint64_t>(out, params.init_seed);
  write_pod<std::uint32_t>(out,
                           static_cast<std::uint32_t>(params.input_shape.size()));
  for (int d : params.input_shape) write_pod<std::int32_t>(out, d);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& t : params.tensors) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) write_pod<std::int32_t>(out, d);
    for (double x : t.v) write_pod<float>(out, static_cast<float>(x));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw std::runtime_error(path.string() + ": not a weaklab checkpoint");
  if (read_pod<std::uint32_t>(in) != kCkptVersion)
    throw std::runtime_error(path.string() + ": unsupported checkpoint version");
  Checkpoint ck;
  const auto arch = read_pod<std::uint8_t>(in);
  const auto mode = read_pod<std::uint8_t>(in);
  if (arch > 1 || mode > 2)
    throw std::runtime_error(path.string() + ": corrupt checkpoint header");
  ck.mode = static_cast<AggregationMode>(mode);
  ck.epoch = static_cast<int>(read_pod<std::uint32_t>(in));
  const auto init_seed = read_pod<std::uint64_t>(in);
  std::vector<int> input_shape(read_pod<std::uint32_t>(in));
  for (auto& d : input_shape) d = read_pod<std::int32_t>(in);

  // Rebuild the skeleton, then overwrite every tensor from the blob.
  ck.params = init_model(arch == 0 ? ArchKind::cnn : ArchKind::mlp, input_shape,
                         init_seed);
  const auto n_tensors = read_pod<std::uint32_t>(in);
  if (n_tensors != ck.params.tensors.size())
    throw std::runtime_error(path.string() + ": tensor count mismatch");
  for (auto& t : ck.params.tensors) {
    std::string name(read_pod<std::uint32_t>(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size())))
      throw std::runtime_error("truncated checkpoint");
    std::vector<int> shape(read_pod<std::uint32_t>(in));
    for (auto& d : shape) d = read_pod<std::int32_t>(in);
    if (name != t.name || shape != t.shape)
      throw std::runtime_error(path.string() + ": tensor layout mismatch at " +
                               t.name);
    for (auto& x : t.v) x = static_cast<double>(read_pod<float>(in));
  }
  return ck;
}

} // namespace weaklab
