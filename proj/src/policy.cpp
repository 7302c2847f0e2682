#include "vtla/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "vtla/parallel.hpp"

namespace vtla {
namespace {

double log_sum_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

void pool_into(const RgbImage& img, int side, std::vector<double>& out) {
  if (img.width % side != 0 || img.height % side != 0) {
    throw std::invalid_argument("image size is not a multiple of the feature grid");
  }
  const int bw = img.width / side;
  const int bh = img.height / side;
  const double inv = 1.0 / (bw * bh);
  for (int gy = 0; gy < side; ++gy) {
    for (int gx = 0; gx < side; ++gx) {
      double acc = 0.0;
      for (int y = gy * bh; y < (gy + 1) * bh; ++y) {
        for (int x = gx * bw; x < (gx + 1) * bw; ++x) {
          const double r = quantize(img.at(x, y, 0)) / 255.0;
          const double g = quantize(img.at(x, y, 1)) / 255.0;
          const double b = quantize(img.at(x, y, 2)) / 255.0;
          acc += 0.299 * r + 0.587 * g + 0.114 * b;
        }
      }
      out.push_back(2.0 * (acc * inv - 0.5));
    }
  }
}

void write_u32(std::ostream& o, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  o.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& o, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  o.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_le(std::istream& in, int bytes) {
  unsigned char b[8] = {};
  in.read(reinterpret_cast<char*>(b), bytes);
  if (!in) throw std::runtime_error("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

nlohmann::json Architecture::to_json() const {
  return {{"image_side", image_side},
          {"hidden1", hidden1},
          {"hidden2", hidden2},
          {"vision_last", vision_last},
          {"feature_dim", feature_dim()},
          {"vocab", kVocabSizes}};
}

Architecture Architecture::from_json(const nlohmann::json& j) {
  Architecture a;
  a.image_side = j.at("image_side").get<int>();
  a.hidden1 = j.at("hidden1").get<int>();
  a.hidden2 = j.at("hidden2").get<int>();
  a.vision_last = j.at("vision_last").get<bool>();
  if (j.at("vocab").get<std::array<int, 3>>() != kVocabSizes) {
    throw std::runtime_error("checkpoint vocabulary does not match this build");
  }
  return a;
}

FeatureVector featurize(const RgbImage& tactile_left, const RgbImage& tactile_right,
                        const RgbImage& vision, ShapeKind shape, const Architecture& arch) {
  FeatureVector f;
  f.reserve(static_cast<std::size_t>(arch.feature_dim()));
  if (arch.vision_last) {
    pool_into(tactile_left, arch.image_side, f);
    pool_into(tactile_right, arch.image_side, f);
    pool_into(vision, arch.image_side, f);
  } else {
    pool_into(vision, arch.image_side, f);
    pool_into(tactile_left, arch.image_side, f);
    pool_into(tactile_right, arch.image_side, f);
  }
  for (int k = 0; k < kNumShapes; ++k) f.push_back(k == shape_index(shape) ? 1.0 : 0.0);
  return f;
}

FeatureVector featurize(const Observation& obs, ShapeKind shape, const Architecture& arch) {
  return featurize(obs.tactile_left.image, obs.tactile_right.image, obs.vision, shape, arch);
}

std::vector<LabeledExample> load_examples(const std::vector<InstructionSample>& samples,
                                          const std::filesystem::path& root,
                                          const Architecture& arch, int workers) {
  std::vector<LabeledExample> out(samples.size());
  parallel_for(samples.size(), workers, [&](std::size_t i) {
    const auto& s = samples[i];
    const RgbImage tl = decode_png(read_file(root / s.images.tactile_left));
    const RgbImage tr = decode_png(read_file(root / s.images.tactile_right));
    const RgbImage vis = decode_png(read_file(root / s.images.vision));
    out[i] = {featurize(tl, tr, vis, s.shape, arch), s.label};
  });
  return out;
}

PolicyModel::Layout PolicyModel::make_layout(const Architecture& a) {
  const std::size_t f = static_cast<std::size_t>(a.feature_dim());
  const std::size_t h1 = static_cast<std::size_t>(a.hidden1);
  const std::size_t h2 = static_cast<std::size_t>(a.hidden2);
  const std::size_t vx = kVocabXY, vy = kVocabXY, vr = kVocabRz;
  Layout l{};
  std::size_t o = 0;
  l.w1 = o; o += h1 * f;
  l.b1 = o; o += h1;
  l.w2 = o; o += h2 * h1;
  l.b2 = o; o += h2;
  l.wx = o; o += vx * h2;
  l.bx = o; o += vx;
  l.wy = o; o += vy * h2;
  l.eyx = o; o += vy * vx;
  l.by = o; o += vy;
  l.wr = o; o += vr * h2;
  l.erx = o; o += vr * vx;
  l.ery = o; o += vr * vy;
  l.br = o; o += vr;
  l.total = o;
  return l;
}

PolicyModel::PolicyModel(Architecture arch)
    : arch_(arch), layout_(make_layout(arch)), theta_(layout_.total, 0.0) {
  if (arch.image_side < 1 || arch.hidden1 < 1 || arch.hidden2 < 1) {
    throw std::invalid_argument("invalid architecture");
  }
}

std::span<double> PolicyModel::head_bias(int axis) {
  switch (axis) {
    case 0: return std::span<double>(theta_).subspan(layout_.bx, kVocabXY);
    case 1: return std::span<double>(theta_).subspan(layout_.by, kVocabXY);
    case 2: return std::span<double>(theta_).subspan(layout_.br, kVocabRz);
    default: throw std::out_of_range("axis must be 0, 1 or 2");
  }
}

PolicyModel PolicyModel::initialized(const Architecture& arch, std::uint64_t seed) {
  PolicyModel m(arch);
  RandomStream rng(seed, "init");
  const auto fill = [&](std::size_t offset, std::size_t fan_out, std::size_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < fan_out * fan_in; ++i) {
      m.theta_[offset + i] = rng.uniform(-limit, limit);
    }
  };
  fill(m.layout_.w1, arch.hidden1, arch.feature_dim());
  fill(m.layout_.w2, arch.hidden2, arch.hidden1);
  m.snap_to_f32();
  return m;
}

void PolicyModel::snap_to_f32() {
  for (double& v : theta_) v = static_cast<double>(static_cast<float>(v));
}

std::string PolicyModel::params_hash() const {
  std::vector<std::uint8_t> bytes(theta_.size() * sizeof(double));
  std::memcpy(bytes.data(), theta_.data(), bytes.size());
  return sha256_hex(bytes);
}

PolicyModel::Activations PolicyModel::trunk(std::span<const double> features) const {
  const std::size_t f = static_cast<std::size_t>(arch_.feature_dim());
  if (features.size() != f) throw std::invalid_argument("feature length does not match architecture");
  const std::size_t h1n = static_cast<std::size_t>(arch_.hidden1);
  const std::size_t h2n = static_cast<std::size_t>(arch_.hidden2);
  Activations a;
  a.h1.resize(h1n);
  for (std::size_t j = 0; j < h1n; ++j) {
    const double* w = &theta_[layout_.w1 + j * f];
    double s = theta_[layout_.b1 + j];
    for (std::size_t i = 0; i < f; ++i) s += w[i] * features[i];
    a.h1[j] = std::tanh(s);
  }
  a.h2.resize(h2n);
  for (std::size_t j = 0; j < h2n; ++j) {
    const double* w = &theta_[layout_.w2 + j * h1n];
    double s = theta_[layout_.b2 + j];
    for (std::size_t i = 0; i < h1n; ++i) s += w[i] * a.h1[i];
    a.h2[j] = std::tanh(s);
  }
  return a;
}

void PolicyModel::head_logits(const Activations& act, int axis, const ActionTokens& prefix,
                              std::vector<double>& out) const {
  const std::size_t h2n = static_cast<std::size_t>(arch_.hidden2);
  std::size_t w = 0, b = 0;
  int vocab = 0;
  switch (axis) {
    case 0: w = layout_.wx; b = layout_.bx; vocab = kVocabXY; break;
    case 1: w = layout_.wy; b = layout_.by; vocab = kVocabXY; break;
    case 2: w = layout_.wr; b = layout_.br; vocab = kVocabRz; break;
    default: throw std::invalid_argument("axis out of range");
  }
  for (int n = 0; n < axis; ++n) {
    if (prefix.ids[n] < 0 || prefix.ids[n] >= kVocabSizes[n]) {
      throw std::out_of_range("prefix token out of range");
    }
  }
  out.assign(static_cast<std::size_t>(vocab), 0.0);
  for (int v = 0; v < vocab; ++v) {
    double s = theta_[b + v];
    const double* row = &theta_[w + static_cast<std::size_t>(v) * h2n];
    for (std::size_t i = 0; i < h2n; ++i) s += row[i] * act.h2[i];
    if (axis == 1) {
      s += theta_[layout_.eyx + static_cast<std::size_t>(v) * kVocabXY + prefix.ids[0]];
    } else if (axis == 2) {
      s += theta_[layout_.erx + static_cast<std::size_t>(v) * kVocabXY + prefix.ids[0]];
      s += theta_[layout_.ery + static_cast<std::size_t>(v) * kVocabXY + prefix.ids[1]];
    }
    out[static_cast<std::size_t>(v)] = s;
  }
}

std::vector<double> PolicyModel::logits(std::span<const double> features, int axis,
                                        const ActionTokens& prefix) const {
  std::vector<double> out;
  head_logits(trunk(features), axis, prefix, out);
  return out;
}

LogProbTables PolicyModel::forward_logprobs(std::span<const double> features,
                                            const ActionTokens& prefix) const {
  const Activations act = trunk(features);
  LogProbTables t;
  for (int axis = 0; axis < 3; ++axis) {
    head_logits(act, axis, prefix, t.axes[axis]);
    const double lse = log_sum_exp(t.axes[axis]);
    for (double& v : t.axes[axis]) v -= lse;
  }
  return t;
}

double PolicyModel::sequence_logprob(std::span<const double> features,
                                     const ActionTokens& tokens) const {
  const LogProbTables t = forward_logprobs(features, tokens);
  double s = 0.0;
  for (int n = 0; n < 3; ++n) s += t.axes[n][static_cast<std::size_t>(tokens.ids[n])];
  return s;
}

double PolicyModel::accumulate_logprob_grad(std::span<const double> features,
                                            const ActionTokens& tokens, double weight,
                                            std::span<double> grad) const {
  const Activations act = trunk(features);
  const std::size_t f = static_cast<std::size_t>(arch_.feature_dim());
  const std::size_t h1n = static_cast<std::size_t>(arch_.hidden1);
  const std::size_t h2n = static_cast<std::size_t>(arch_.hidden2);
  std::vector<double> dh2(h2n, 0.0);
  std::vector<double> z;
  double logp = 0.0;

  const std::size_t head_w[3] = {layout_.wx, layout_.wy, layout_.wr};
  const std::size_t head_b[3] = {layout_.bx, layout_.by, layout_.br};
  for (int axis = 0; axis < 3; ++axis) {
    head_logits(act, axis, tokens, z);
    const double lse = log_sum_exp(z);
    const std::size_t target = static_cast<std::size_t>(tokens.ids[axis]);
    logp += z[target] - lse;
    for (std::size_t v = 0; v < z.size(); ++v) {
      // d log softmax_target / d z_v = [v == target] - p_v
      const double g = weight * ((v == target ? 1.0 : 0.0) - std::exp(z[v] - lse));
      grad[head_b[axis] + v] += g;
      double* gw = &grad[head_w[axis] + v * h2n];
      const double* w = &theta_[head_w[axis] + v * h2n];
      for (std::size_t i = 0; i < h2n; ++i) {
        gw[i] += g * act.h2[i];
        dh2[i] += g * w[i];
      }
      if (axis == 1) {
        grad[layout_.eyx + v * kVocabXY + tokens.ids[0]] += g;
      } else if (axis == 2) {
        grad[layout_.erx + v * kVocabXY + tokens.ids[0]] += g;
        grad[layout_.ery + v * kVocabXY + tokens.ids[1]] += g;
      }
    }
  }

  std::vector<double> dh1(h1n, 0.0);
  for (std::size_t j = 0; j < h2n; ++j) {
    const double d = dh2[j] * (1.0 - act.h2[j] * act.h2[j]);
    grad[layout_.b2 + j] += d;
    double* gw = &grad[layout_.w2 + j * h1n];
    const double* w = &theta_[layout_.w2 + j * h1n];
    for (std::size_t i = 0; i < h1n; ++i) {
      gw[i] += d * act.h1[i];
      dh1[i] += d * w[i];
    }
  }
  for (std::size_t j = 0; j < h1n; ++j) {
    const double d = dh1[j] * (1.0 - act.h1[j] * act.h1[j]);
    if (d == 0.0) continue;
    grad[layout_.b1 + j] += d;
    double* gw = &grad[layout_.w1 + j * f];
    for (std::size_t i = 0; i < f; ++i) gw[i] += d * features[i];
  }
  return logp;
}

LossAndGrad ntp_loss(const PolicyModel& model, std::span<const LabeledExample> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  LossAndGrad out;
  out.grad.assign(model.num_params(), 0.0);
  const double w = -1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& ex : batch) {
    total += model.accumulate_logprob_grad(ex.features, ex.label, w, out.grad);
  }
  out.loss = -total / static_cast<double>(batch.size());
  if (!std::isfinite(out.loss)) throw std::runtime_error("non-finite NTP loss");
  return out;
}

double ntp_loss_value(const PolicyModel& model, std::span<const LabeledExample> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  double total = 0.0;
  for (const auto& ex : batch) total += model.sequence_logprob(ex.features, ex.label);
  return -total / static_cast<double>(batch.size());
}

SftHyper SftHyper::reference() { return SftHyper{5e-4, 64, 10, 0.9, 0}; }

SftHyper SftHyper::desk() { return SftHyper{0.005, 32, 60, 0.9, 0}; }

nlohmann::json SftHyper::to_json() const {
  return {{"lr", lr}, {"batch", batch}, {"epochs", epochs}, {"momentum", momentum}, {"seed", seed}};
}

TrainCurve sft_train(PolicyModel& model, std::span<const LabeledExample> data,
                     const SftHyper& hyper) {
  if (hyper.batch < 1) throw std::invalid_argument("batch size must be >= 1");
  if (data.size() < static_cast<std::size_t>(hyper.batch)) {
    throw std::invalid_argument("training set smaller than one batch");
  }
  TrainCurve curve;
  curve.initial_loss = ntp_loss_value(model, data);
  std::vector<double> velocity(model.num_params(), 0.0);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  RandomStream shuffle_rng(hyper.seed, "sft_shuffle");
  std::vector<LabeledExample> batch;
  std::size_t step_index = 0;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    double epoch_total = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch));
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(data[order[k]]);
      LossAndGrad lg;
      try {
        lg = ntp_loss(model, batch);
      } catch (const std::runtime_error& e) {
        throw TrainingDiverged(e.what(), step_index);
      }
      auto theta = model.mutable_params();
      for (std::size_t p = 0; p < theta.size(); ++p) {
        velocity[p] = hyper.momentum * velocity[p] + lg.grad[p];
        theta[p] -= hyper.lr * velocity[p];
      }
      model.snap_to_f32();
      epoch_total += lg.loss * static_cast<double>(batch.size());
      epoch_count += batch.size();
      ++step_index;
    }
    curve.epoch_loss.push_back(epoch_total / static_cast<double>(epoch_count));
  }
  return curve;
}

int argmax_index(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of empty range");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

void SamplingConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (top_k && *top_k < 1) throw std::invalid_argument("top_k must be >= 1");
}

nlohmann::json SamplingConfig::to_json() const {
  nlohmann::json j{{"temperature", temperature}, {"seed", seed}};
  j["top_k"] = top_k ? nlohmann::json(*top_k) : nlohmann::json(nullptr);
  return j;
}

std::array<SamplingConfig, 2> default_generation_configs() {
  return {SamplingConfig{0.7, 5, 0}, SamplingConfig{1.2, std::nullopt, 1}};
}

ActionTokens greedy_tokens(const PolicyModel& model, std::span<const double> features) {
  ActionTokens t;
  for (int axis = 0; axis < 3; ++axis) t.ids[axis] = argmax_index(model.logits(features, axis, t));
  return t;
}

ActionTokens sample_tokens(const PolicyModel& model, std::span<const double> features,
                           const SamplingConfig& cfg, RandomStream& rng) {
  cfg.validate();
  ActionTokens t;
  std::vector<double> z;
  std::vector<std::size_t> idx;
  for (int axis = 0; axis < 3; ++axis) {
    z = model.logits(features, axis, t);
    for (double& v : z) v /= cfg.temperature;
    idx.resize(z.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Descending by logit, ties by index, so truncation is deterministic.
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
    const std::size_t keep =
        cfg.top_k ? std::min<std::size_t>(static_cast<std::size_t>(*cfg.top_k), z.size()) : z.size();
    const double mx = z[idx[0]];
    double total = 0.0;
    std::vector<double> p(keep);
    for (std::size_t k = 0; k < keep; ++k) {
      p[k] = std::exp(z[idx[k]] - mx);
      total += p[k];
    }
    const double u = rng.uniform() * total;
    double acc = 0.0;
    std::size_t chosen = idx[0];
    for (std::size_t k = 0; k < keep; ++k) {
      acc += p[k];
      if (u < acc) {
        chosen = idx[k];
        break;
      }
    }
    t.ids[axis] = static_cast<int>(chosen);
  }
  return t;
}

Action sample_action(const PolicyModel& model, std::span<const double> features,
                     const SamplingConfig& cfg) {
  RandomStream rng(cfg.seed, "sampling");
  return detokenize_action(sample_tokens(model, features, cfg, rng));
}

void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model,
                     const nlohmann::json& metadata) {
  nlohmann::json header{{"architecture", model.arch().to_json()},
                        {"num_params", model.num_params()},
                        {"metadata", metadata}};
  const std::string text = header.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path.string());
  f.write("VTLP", 4);
  write_u32(f, kCheckpointVersion);
  write_u32(f, static_cast<std::uint32_t>(text.size()));
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_u64(f, model.num_params());
  for (double v : model.params()) {
    const float x = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &x, 4);
    write_u32(f, bits);
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path.string());
}

PolicyModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "VTLP", 4) != 0) throw std::runtime_error("not a VTLP checkpoint");
  const auto version = static_cast<std::uint32_t>(read_le(f, 4));
  if (version != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  const auto len = static_cast<std::size_t>(read_le(f, 4));
  std::string text(len, '\0');
  f.read(text.data(), static_cast<std::streamsize>(len));
  if (!f) throw std::runtime_error("truncated checkpoint");
  const nlohmann::json header = nlohmann::json::parse(text);
  PolicyModel model(Architecture::from_json(header.at("architecture")));
  const std::uint64_t n = read_le(f, 8);
  if (n != model.num_params()) throw std::runtime_error("checkpoint parameter count mismatch");
  auto theta = model.mutable_params();
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto bits = static_cast<std::uint32_t>(read_le(f, 4));
    float x;
    std::memcpy(&x, &bits, 4);
    theta[i] = static_cast<double>(x);
  }
  if (metadata) *metadata = header.value("metadata", nlohmann::json::object());
  return model;
}

Action OraclePolicy::act(const PolicyQuery& query) {
  if (!query.ground_truth) throw std::logic_error("oracle policy requires simulator ground truth");
  return *query.ground_truth;
}

Action RandomPolicy::act(const PolicyQuery&) { return random_bin_action(rng_); }

ModelPolicy::ModelPolicy(std::shared_ptr<const PolicyModel> model,
                         std::optional<SamplingConfig> sampling)
    : model_(std::move(model)), sampling_(sampling) {
  if (sampling_) {
    sampling_->validate();
    rng_.emplace(sampling_->seed, "model_policy");
  }
}

Action ModelPolicy::act(const PolicyQuery& query) {
  const FeatureVector f = featurize(query.observation, query.shape, model_->arch());
  const ActionTokens t = sampling_ ? sample_tokens(*model_, f, *sampling_, *rng_)
                                   : greedy_tokens(*model_, f);
  return detokenize_action(t);
}

}  // namespace vtla
