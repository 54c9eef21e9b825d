#include "logicdiff/rolehead.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace logicdiff {
namespace {

constexpr char kMagic[4] = {'L', 'D', 'R', 'H'};
constexpr std::uint32_t kCheckpointVersion = 1;

void check_dim(std::size_t dim) {
  if (dim == 0 || dim % 4 != 0) {
    throw Error(ErrorKind::kShape, "hidden dimension must be a positive multiple of 4, got " +
                                       std::to_string(dim));
  }
}

void check_input(const RoleHeadParams& p, std::span<const float> h) {
  if (h.size() != p.dim) {
    throw Error(ErrorKind::kShape, "input has dimension " + std::to_string(h.size()) +
                                       ", head expects " + std::to_string(p.dim));
  }
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw Error(ErrorKind::kIo, "checkpoint truncated");
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_floats(std::ostream& out, std::span<const float> v) {
  for (float f : v) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

void get_floats(std::istream& in, std::span<float> v) {
  for (float& f : v) f = std::bit_cast<float>(get_u32(in));
}

void xavier(std::span<float> w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (float& x : w) x = static_cast<float>(dist(rng));
}

}  // namespace

RoleHeadParams RoleHeadParams::zeros(std::size_t dim, float dropout_rate) {
  check_dim(dim);
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
    throw Error(ErrorKind::kInvalidConfig, "dropout rate must be in [0, 1)");
  }
  RoleHeadParams p;
  p.dim = dim;
  const std::size_t h = dim / 4;
  p.ln_gain.assign(dim, 1.0f);
  p.ln_bias.assign(dim, 0.0f);
  p.w1.assign(h * dim, 0.0f);
  p.b1.assign(h, 0.0f);
  p.w2.assign(kNumRoles * h, 0.0f);
  p.b2.assign(kNumRoles, 0.0f);
  p.dropout_rate = dropout_rate;
  return p;
}

RoleHeadParams RoleHeadParams::initialized(std::size_t dim, Rng& rng, float dropout_rate) {
  RoleHeadParams p = zeros(dim, dropout_rate);
  xavier(p.w1, dim, dim / 4, rng);
  xavier(p.w2, dim / 4, kNumRoles, rng);
  return p;
}

std::vector<double> layer_norm(std::span<const double> h, std::span<const float> gain,
                               std::span<const float> bias) {
  if (h.size() < 2 || gain.size() != h.size() || bias.size() != h.size()) {
    throw Error(ErrorKind::kShape, "layer_norm needs D >= 2 and matching gain/bias");
  }
  const double n = static_cast<double>(h.size());
  const double mean = std::accumulate(h.begin(), h.end(), 0.0) / n;
  double var = 0.0;
  for (double x : h) var += (x - mean) * (x - mean);
  var /= n;
  const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
  std::vector<double> out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    out[i] = static_cast<double>(gain[i]) * (h[i] - mean) * inv_std + static_cast<double>(bias[i]);
  }
  return out;
}

double gelu(double x) noexcept { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_derivative(double x) noexcept {
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

Logits softmax(const Logits& logits) noexcept {
  const double m = *std::max_element(logits.begin(), logits.end());
  Logits p{};
  double sum = 0.0;
  for (std::size_t k = 0; k < kNumRoles; ++k) {
    p[k] = std::exp(logits[k] - m);
    sum += p[k];
  }
  for (double& v : p) v /= sum;
  return p;
}

const Logits& forward_cached(const RoleHeadParams& params, std::span<const float> h,
                             std::span<const std::uint8_t> keep, ForwardCache& c) {
  check_input(params, h);
  const std::size_t d = params.dim;
  const std::size_t hu = params.hidden_units();
  if (!keep.empty() && keep.size() != hu) {
    throw Error(ErrorKind::kShape, "dropout mask must have D/4 entries");
  }

  double mean = 0.0;
  for (float x : h) mean += x;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (float x : h) var += (x - mean) * (x - mean);
  var /= static_cast<double>(d);
  c.inv_std = 1.0 / std::sqrt(var + kLayerNormEps);

  c.x_hat.resize(d);
  c.ln_out.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    c.x_hat[i] = (h[i] - mean) * c.inv_std;
    c.ln_out[i] = params.ln_gain[i] * c.x_hat[i] + params.ln_bias[i];
  }

  const double scale = keep.empty() ? 1.0 : 1.0 / (1.0 - params.dropout_rate);
  c.pre_act.resize(hu);
  c.dropped.resize(hu);
  c.drop_scale.resize(hu);
  for (std::size_t j = 0; j < hu; ++j) {
    const float* w = params.w1.data() + j * d;
    double z = params.b1[j];
    for (std::size_t i = 0; i < d; ++i) z += w[i] * c.ln_out[i];
    c.pre_act[j] = z;
    c.drop_scale[j] = keep.empty() ? 1.0 : (keep[j] ? scale : 0.0);
    c.dropped[j] = gelu(z) * c.drop_scale[j];
  }

  for (std::size_t k = 0; k < kNumRoles; ++k) {
    const float* w = params.w2.data() + k * hu;
    double z = params.b2[k];
    for (std::size_t j = 0; j < hu; ++j) z += w[j] * c.dropped[j];
    c.logits[k] = z;
  }
  return c.logits;
}

void backward(const RoleHeadParams& params, const ForwardCache& c, const Logits& grad_logits,
              RoleHeadGrads& g) {
  const std::size_t d = params.dim;
  const std::size_t hu = params.hidden_units();

  std::vector<double> d_dropped(hu, 0.0);
  for (std::size_t k = 0; k < kNumRoles; ++k) {
    const double gk = grad_logits[k];
    g.b2[k] += gk;
    const float* w = params.w2.data() + k * hu;
    double* gw = g.w2.data() + k * hu;
    for (std::size_t j = 0; j < hu; ++j) {
      gw[j] += gk * c.dropped[j];
      d_dropped[j] += gk * w[j];
    }
  }

  std::vector<double> d_ln(d, 0.0);
  for (std::size_t j = 0; j < hu; ++j) {
    const double dz = d_dropped[j] * c.drop_scale[j] * gelu_derivative(c.pre_act[j]);
    if (dz == 0.0) continue;
    g.b1[j] += dz;
    const float* w = params.w1.data() + j * d;
    double* gw = g.w1.data() + j * d;
    for (std::size_t i = 0; i < d; ++i) {
      gw[i] += dz * c.ln_out[i];
      d_ln[i] += dz * w[i];
    }
  }

  for (std::size_t i = 0; i < d; ++i) {
    g.ln_gain[i] += d_ln[i] * c.x_hat[i];
    g.ln_bias[i] += d_ln[i];
  }
}

Logits role_head_forward(const RoleHeadParams& params, std::span<const float> h, bool training,
                         Rng* rng) {
  ForwardCache cache;
  if (!training || params.dropout_rate == 0.0f) {
    return forward_cached(params, h, {}, cache);
  }
  if (!rng) throw Error(ErrorKind::kInvalidInput, "training-mode forward needs an rng");
  std::vector<std::uint8_t> keep(params.hidden_units());
  std::bernoulli_distribution survive(1.0 - params.dropout_rate);
  for (auto& k : keep) k = survive(*rng) ? 1 : 0;
  return forward_cached(params, h, keep, cache);
}

Role argmax_role(const Logits& logits) noexcept {
  std::size_t best = 0;
  for (std::size_t k = 1; k < kNumRoles; ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  return static_cast<Role>(best);
}

Role predict_role(const RoleHeadParams& params, std::span<const float> h) {
  ForwardCache cache;
  return argmax_role(forward_cached(params, h, {}, cache));
}

std::vector<Role> predict_roles_serial(const RoleHeadParams& params, const HiddenMatrix& hidden,
                                       std::span<const Position> rows) {
  std::vector<Role> out(rows.size());
  ForwardCache cache;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out[i] = argmax_role(forward_cached(params, hidden.row(rows[i]), {}, cache));
  }
  return out;
}

std::vector<Role> predict_roles(const RoleHeadParams& params, const HiddenMatrix& hidden,
                                std::span<const Position> rows) {
  if (hidden.cols != params.dim) {
    throw Error(ErrorKind::kShape, "hidden width does not match the role head");
  }
  std::vector<Role> out(rows.size());
  const auto n = static_cast<std::int64_t>(rows.size());
#pragma omp parallel if (n >= 64)
  {
    ForwardCache cache;
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      out[idx] = argmax_role(forward_cached(params, hidden.row(rows[idx]), {}, cache));
    }
  }
  return out;
}

LossGrad weighted_ce_loss(const Logits& logits, Role gold, const ClassWeights& weights) noexcept {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - m);
  const double log_z = m + std::log(sum);
  const auto g = static_cast<std::size_t>(gold);
  const double w = weights[gold];
  LossGrad out;
  out.loss = -w * (logits[g] - log_z);
  for (std::size_t k = 0; k < kNumRoles; ++k) {
    const double p = std::exp(logits[k] - log_z);
    out.grad_logits[k] = w * (p - (k == g ? 1.0 : 0.0));
  }
  return out;
}

RoleHeadGrads::RoleHeadGrads(std::size_t dim)
    : ln_gain(dim),
      ln_bias(dim),
      w1((dim / 4) * dim),
      b1(dim / 4),
      w2(kNumRoles * (dim / 4)),
      b2(kNumRoles) {}

void RoleHeadGrads::zero() {
  for (auto* v : {&ln_gain, &ln_bias, &w1, &b1, &w2, &b2}) std::fill(v->begin(), v->end(), 0.0);
}

std::array<std::span<float>, 6> param_tensors(RoleHeadParams& p) {
  return {p.ln_gain, p.ln_bias, p.w1, p.b1, p.w2, p.b2};
}

std::array<std::span<double>, 6> grad_tensors(RoleHeadGrads& g) {
  return {g.ln_gain, g.ln_bias, g.w1, g.b1, g.w2, g.b2};
}

void LabeledHidden::push(std::span<const float> h, Role r) {
  if (dim == 0) dim = h.size();
  if (h.size() != dim) throw Error(ErrorKind::kShape, "inconsistent hidden dimension");
  features.insert(features.end(), h.begin(), h.end());
  labels.push_back(r);
}

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0) {
    throw Error(ErrorKind::kInvalidConfig, "epochs and batch_size must be positive");
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw Error(ErrorKind::kInvalidConfig, "val_fraction must be in (0, 1)");
  }
  if (!(learning_rate >= 0.0) || !(momentum >= 0.0 && momentum < 1.0)) {
    throw Error(ErrorKind::kInvalidConfig, "bad learning rate or momentum");
  }
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
    throw Error(ErrorKind::kInvalidConfig, "dropout_rate must be in [0, 1)");
  }
  for (double w : weights.weight) {
    if (!(w > 0.0)) throw Error(ErrorKind::kInvalidConfig, "class weights must be positive");
  }
}

double accuracy(const RoleHeadParams& params, const LabeledHidden& data) {
  if (data.size() == 0) return 0.0;
  std::size_t hit = 0;
  ForwardCache cache;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (argmax_role(forward_cached(params, data.row(i), {}, cache)) == data.labels[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

TrainResult train_role_head(const LabeledHidden& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw Error(ErrorKind::kInvalidInput, "empty training dataset");
  Rng init_rng = make_rng(cfg.rng_seed, 0);
  return train_role_head(data, cfg, RoleHeadParams::initialized(data.dim, init_rng, cfg.dropout_rate));
}

TrainResult train_role_head(const LabeledHidden& data, const TrainConfig& cfg,
                            RoleHeadParams params) {
  cfg.validate();
  if (data.size() == 0) throw Error(ErrorKind::kInvalidInput, "empty training dataset");
  if (params.dim != data.dim) throw Error(ErrorKind::kShape, "head and data dimensions differ");
  params.dropout_rate = cfg.dropout_rate;

  std::array<std::vector<std::size_t>, kNumRoles> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) {
    by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
  }
  const auto present = std::count_if(by_class.begin(), by_class.end(),
                                     [](const auto& v) { return !v.empty(); });
  if (present < 2) throw Error(ErrorKind::kInvalidInput, "need at least two classes present");

  Rng rng = make_rng(cfg.rng_seed, 1);
  std::vector<std::size_t> train_idx, val_idx;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_val = static_cast<std::size_t>(
        std::floor(cfg.val_fraction * static_cast<double>(members.size())));
    val_idx.insert(val_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_idx.insert(train_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  TrainResult result;
  result.n_train = train_idx.size();
  result.n_val = val_idx.size();

  RoleHeadGrads grads(params.dim);
  RoleHeadGrads velocity(params.dim);
  ForwardCache cache;
  std::vector<std::uint8_t> keep(params.hidden_units(), 1);
  std::bernoulli_distribution survive(1.0 - params.dropout_rate);
  const bool use_dropout = params.dropout_rate > 0.0f;

  auto epoch_loss = [&] {
    double total = 0.0;
    for (std::size_t i : train_idx) {
      const auto& logits = forward_cached(params, data.row(i), {}, cache);
      total += weighted_ce_loss(logits, data.labels[i], cfg.weights).loss;
    }
    return train_idx.empty() ? 0.0 : total / static_cast<double>(train_idx.size());
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(train_idx.size(), start + cfg.batch_size);
      grads.zero();
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = train_idx[b];
        if (use_dropout) {
          for (auto& k : keep) k = survive(rng) ? 1 : 0;
        }
        const auto& logits =
            forward_cached(params, data.row(i), use_dropout ? std::span<const std::uint8_t>(keep)
                                                            : std::span<const std::uint8_t>(),
                           cache);
        const LossGrad lg = weighted_ce_loss(logits, data.labels[i], cfg.weights);
        backward(params, cache, lg.grad_logits, grads);
      }
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      auto p_tensors = param_tensors(params);
      auto g_tensors = grad_tensors(grads);
      auto v_tensors = grad_tensors(velocity);
      for (std::size_t t = 0; t < p_tensors.size(); ++t) {
        for (std::size_t k = 0; k < p_tensors[t].size(); ++k) {
          double& v = v_tensors[t][k];
          v = cfg.momentum * v + g_tensors[t][k] * inv_batch;
          p_tensors[t][k] = static_cast<float>(p_tensors[t][k] - cfg.learning_rate * v);
        }
      }
    }
    result.epoch_loss.push_back(epoch_loss());
  }

  std::array<std::size_t, kNumRoles> hits{}, totals{};
  std::size_t correct = 0;
  for (std::size_t i : val_idx) {
    const auto k = static_cast<std::size_t>(data.labels[i]);
    ++totals[k];
    if (argmax_role(forward_cached(params, data.row(i), {}, cache)) == data.labels[i]) {
      ++hits[k];
      ++correct;
    }
  }
  result.val_accuracy =
      val_idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(val_idx.size());
  for (std::size_t k = 0; k < kNumRoles; ++k) {
    result.per_class_recall[k] = totals[k] ? static_cast<double>(hits[k]) / static_cast<double>(totals[k])
                                           : std::numeric_limits<double>::quiet_NaN();
  }
  result.params = std::move(params);
  return result;
}

void save_checkpoint(const RoleHeadParams& p, std::ostream& out) {
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(p.dim));
  put_u32(out, static_cast<std::uint32_t>(kNumRoles));
  put_floats(out, p.ln_gain);
  put_floats(out, p.ln_bias);
  put_floats(out, p.w1);
  put_floats(out, p.b1);
  put_floats(out, p.w2);
  put_floats(out, p.b2);
  put_u32(out, std::bit_cast<std::uint32_t>(p.dropout_rate));
  if (!out) throw Error(ErrorKind::kIo, "checkpoint write failed");
}

void save_checkpoint(const RoleHeadParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  save_checkpoint(p, out);
}

RoleHeadParams load_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorKind::kInvalidInput, "not a role-head checkpoint");
  }
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::kInvalidInput, "unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t dim = get_u32(in);
  const std::uint32_t roles = get_u32(in);
  if (roles != kNumRoles) throw Error(ErrorKind::kShape, "checkpoint has R != 5");
  RoleHeadParams p = RoleHeadParams::zeros(dim);
  get_floats(in, p.ln_gain);
  get_floats(in, p.ln_bias);
  get_floats(in, p.w1);
  get_floats(in, p.b1);
  get_floats(in, p.w2);
  get_floats(in, p.b2);
  p.dropout_rate = std::bit_cast<float>(get_u32(in));
  return p;
}

RoleHeadParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  return load_checkpoint(in);
}

}  // namespace logicdiff
