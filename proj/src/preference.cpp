#include "vtla/preference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "vtla/parallel.hpp"

namespace vtla {

double action_l1(const Action& a, const Action& b) {
  return std::abs(a.dx - b.dx) + std::abs(a.dy - b.dy) + std::abs(a.drz - b.drz);
}

std::vector<Candidate> generate_candidates(const PolicyModel& model,
                                           std::span<const LabeledExample> examples,
                                           std::span<const std::string> sample_ids,
                                           std::span<const SamplingConfig> configs,
                                           int per_config, int workers) {
  if (examples.empty()) throw std::invalid_argument("no samples to generate candidates for");
  if (sample_ids.size() != examples.size()) throw std::invalid_argument("sample id count mismatch");
  if (configs.empty() || per_config < 1) throw std::invalid_argument("no sampling configurations");
  for (const auto& c : configs) c.validate();
  const std::size_t per_sample = configs.size() * static_cast<std::size_t>(per_config);
  std::vector<Candidate> out(examples.size() * per_sample);
  parallel_for(examples.size(), workers, [&](std::size_t i) {
    const Action gt = detokenize_action(examples[i].label);
    std::size_t slot = i * per_sample;
    for (int draw = 0; draw < per_config; ++draw) {
      for (std::size_t c = 0; c < configs.size(); ++c) {
        const std::uint64_t key = hash_combine(
            hash_combine(configs[c].seed, hash_name(sample_ids[i])), static_cast<std::uint64_t>(draw));
        RandomStream rng(key);
        Candidate cand;
        cand.example_index = i;
        cand.sample_id = sample_ids[i];
        cand.config_index = static_cast<int>(c);
        cand.draw = draw;
        cand.tokens = sample_tokens(model, examples[i].features, configs[c], rng);
        cand.gt = examples[i].label;
        cand.distance = action_l1(detokenize_action(cand.tokens), gt);
        out[slot++] = std::move(cand);
      }
    }
  });
  return out;
}

PairBuild build_preference_pairs(std::span<const Candidate> candidates) {
  PairBuild result;
  std::size_t i = 0;
  while (i < candidates.size()) {
    std::size_t j = i;
    while (j < candidates.size() && candidates[j].example_index == candidates[i].example_index) ++j;
    if (j - i >= 2) {
      std::size_t best = i, worst = i;
      for (std::size_t k = i; k < j; ++k) {
        if (candidates[k].distance < candidates[best].distance) best = k;
        if (candidates[k].distance > candidates[worst].distance) worst = k;
      }
      const Candidate& c = candidates[best];
      const Candidate& r = candidates[worst];
      if (!(c.distance < r.distance)) {
        // Equal distances: distinct sequences are a tie, a single repeated one is identical.
        const bool identical = std::all_of(candidates.begin() + i, candidates.begin() + j,
                                           [&](const Candidate& k) { return k.tokens == c.tokens; });
        ++(identical ? result.dropped_identical : result.dropped_ties);
      } else {
        result.pairs.push_back({c.sample_id, c.example_index, c.tokens, r.tokens, c.gt, c.distance,
                                r.distance, {c.config_index, r.config_index}});
      }
    }
    i = j;
  }
  for (const auto& p : result.pairs) {
    if (!(p.d_chosen < p.d_rejected)) throw std::logic_error("preference pair ordering violated");
  }
  return result;
}

nlohmann::json to_json(const PreferencePair& p, std::span<const SamplingConfig> configs) {
  nlohmann::json gen = nlohmann::json::array();
  for (int idx : p.gen_configs) {
    nlohmann::json c = configs.size() > static_cast<std::size_t>(idx)
                           ? configs[static_cast<std::size_t>(idx)].to_json()
                           : nlohmann::json::object();
    c["index"] = idx;
    gen.push_back(c);
  }
  return {{"sample_id", p.sample_id},     {"chosen_tokens", p.chosen.ids},
          {"rejected_tokens", p.rejected.ids}, {"gt_tokens", p.gt.ids},
          {"d_chosen", p.d_chosen},       {"d_rejected", p.d_rejected},
          {"gen_configs", gen}};
}

PreferencePair pair_from_json(const nlohmann::json& j) {
  PreferencePair p;
  p.sample_id = j.at("sample_id").get<std::string>();
  p.chosen.ids = j.at("chosen_tokens").get<std::array<int, 3>>();
  p.rejected.ids = j.at("rejected_tokens").get<std::array<int, 3>>();
  p.gt.ids = j.at("gt_tokens").get<std::array<int, 3>>();
  p.d_chosen = j.at("d_chosen").get<double>();
  p.d_rejected = j.at("d_rejected").get<double>();
  const auto& gen = j.at("gen_configs");
  p.gen_configs = {gen.at(0).at("index").get<int>(), gen.at(1).at("index").get<int>()};
  if (!(p.d_chosen < p.d_rejected)) {
    throw std::runtime_error("preference pair " + p.sample_id + " has d_chosen >= d_rejected");
  }
  return p;
}

void write_preferences(const std::filesystem::path& path, std::span<const PreferencePair> pairs,
                       std::span<const SamplingConfig> configs) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write preferences: " + path.string());
  for (const auto& p : pairs) f << to_json(p, configs).dump() << '\n';
  if (!f) throw std::runtime_error("preference write failed: " + path.string());
}

std::vector<PreferencePair> read_preferences(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read preferences: " + path.string());
  std::vector<PreferencePair> out;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) out.push_back(pair_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

DpoConfig DpoConfig::reference() { return DpoConfig{0.1, 5e-6, 32, 3, 0.9, 0}; }

DpoConfig DpoConfig::desk() { return DpoConfig{1.0, 3e-3, 32, 60, 0.9, 0}; }

nlohmann::json DpoConfig::to_json() const {
  return {{"beta", beta}, {"lr", lr}, {"batch", batch}, {"epochs", epochs},
          {"momentum", momentum}, {"seed", seed}};
}

std::vector<DpoItem> make_dpo_items(const PolicyModel& reference,
                                    std::span<const PreferencePair> pairs,
                                    std::span<const LabeledExample> examples) {
  std::vector<DpoItem> items;
  items.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.example_index >= examples.size()) throw std::out_of_range("pair references unknown sample");
    const auto& f = examples[p.example_index].features;
    items.push_back({f, p.chosen, p.rejected, reference.sequence_logprob(f, p.chosen),
                     reference.sequence_logprob(f, p.rejected)});
  }
  return items;
}

double dpo_margin(const PolicyModel& policy, const DpoItem& item) {
  return (policy.sequence_logprob(item.features, item.chosen) - item.ref_chosen) -
         (policy.sequence_logprob(item.features, item.rejected) - item.ref_rejected);
}

double dpo_loss_from_margin(double margin, double beta) {
  const double z = beta * margin;
  // -log sigmoid(z) = softplus(-z)
  return z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

LossAndGrad dpo_loss(const PolicyModel& policy, std::span<const DpoItem> batch, double beta) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  LossAndGrad out;
  out.grad.assign(policy.num_params(), 0.0);
  std::vector<double> gc(policy.num_params()), gr(policy.num_params());
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const DpoItem& item = batch[k];
    std::fill(gc.begin(), gc.end(), 0.0);
    std::fill(gr.begin(), gr.end(), 0.0);
    const double lc = policy.accumulate_logprob_grad(item.features, item.chosen, 1.0, gc);
    const double lr = policy.accumulate_logprob_grad(item.features, item.rejected, 1.0, gr);
    const double margin = (lc - item.ref_chosen) - (lr - item.ref_rejected);
    const double loss = dpo_loss_from_margin(margin, beta);
    if (!std::isfinite(loss)) {
      throw std::runtime_error("non-finite DPO loss for pair " + std::to_string(k));
    }
    out.loss += loss * inv;
    // d/dm softplus(-beta m) = -beta * sigmoid(-beta m)
    const double coeff = -beta / (1.0 + std::exp(beta * margin)) * inv;
    for (std::size_t p = 0; p < gc.size(); ++p) out.grad[p] += coeff * (gc[p] - gr[p]);
  }
  return out;
}

double dpo_loss_value(const PolicyModel& policy, std::span<const DpoItem> batch, double beta) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  double total = 0.0;
  for (const auto& item : batch) total += dpo_loss_from_margin(dpo_margin(policy, item), beta);
  return total / static_cast<double>(batch.size());
}

double preference_accuracy(const PolicyModel& policy, std::span<const DpoItem> items) {
  if (items.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& item : items) ok += dpo_margin(policy, item) > 0.0 ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(items.size());
}

DpoCurve dpo_train(PolicyModel& policy, std::span<const DpoItem> items, const DpoConfig& cfg) {
  if (items.empty()) throw std::invalid_argument("no preference pairs");
  if (cfg.batch < 1) throw std::invalid_argument("batch size must be >= 1");
  DpoCurve curve;
  curve.initial_loss = dpo_loss_value(policy, items, cfg.beta);
  std::vector<double> velocity(policy.num_params(), 0.0);
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  RandomStream shuffle_rng(cfg.seed, "dpo_shuffle");
  std::vector<DpoItem> batch;
  std::size_t step_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(items[order[k]]);
      LossAndGrad lg;
      try {
        lg = dpo_loss(policy, batch, cfg.beta);
      } catch (const std::runtime_error& e) {
        throw TrainingDiverged(e.what(), step_index);
      }
      auto theta = policy.mutable_params();
      for (std::size_t p = 0; p < theta.size(); ++p) {
        velocity[p] = cfg.momentum * velocity[p] + lg.grad[p];
        theta[p] -= cfg.lr * velocity[p];
      }
      policy.snap_to_f32();
      ++step_index;
    }
    curve.epoch_loss.push_back(dpo_loss_value(policy, items, cfg.beta));
    curve.epoch_accuracy.push_back(preference_accuracy(policy, items));
  }
  return curve;
}

}  // namespace vtla
