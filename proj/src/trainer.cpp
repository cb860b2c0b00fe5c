#include "molmix/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace molmix {

std::string loss_name(LossKind k) { return k == LossKind::MAE ? "mae" : "mse"; }

LossKind loss_parse(const std::string& name) {
    if (name == "mae") return LossKind::MAE;
    if (name == "mse") return LossKind::MSE;
    throw std::invalid_argument("unknown loss '" + name + "' (expected mae or mse)");
}

std::string metric_name(MetricKind k) { return k == MetricKind::MAE ? "mae" : "rmse"; }

MetricKind metric_parse(const std::string& name) {
    if (name == "mae") return MetricKind::MAE;
    if (name == "rmse") return MetricKind::RMSE;
    throw std::invalid_argument("unknown metric '" + name + "' (expected mae or rmse)");
}

std::string precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

Precision precision_parse(const std::string& name) {
    if (name == "f32") return Precision::F32;
    if (name == "f64") return Precision::F64;
    throw std::invalid_argument("unknown precision '" + name + "' (expected f32 or f64)");
}

std::string format_double(double value) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

void TrainConfig::validate() const {
    if (lr <= 0) throw std::invalid_argument("train config: lr must be positive");
    if (batch_tokens < 1) throw std::invalid_argument("train config: batch_tokens must be >= 1");
    if (max_steps < 1) throw std::invalid_argument("train config: max_steps must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("train config: eval_every must be >= 1");
    if (!mask.any()) throw std::invalid_argument("train config: empty modality mask");
}

std::string TrainConfig::to_json_string() const {
    nlohmann::ordered_json j;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["adam_eps"] = adam_eps;
    j["batch_tokens"] = batch_tokens;
    j["max_steps"] = max_steps;
    j["eval_every"] = eval_every;
    j["warmup_steps"] = warmup_steps;
    j["loss"] = loss_name(loss);
    j["metric"] = metric_name(metric);
    j["mask"] = mask.label();
    j["seed"] = seed;
    j["precision"] = precision_name(precision);
    j["target"] = target;
    j["stop_at_train_metric"] = stop_at_train_metric;
    return j.dump(2);
}

TrainConfig TrainConfig::from_json_string(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    TrainConfig cfg;
    auto set = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).template get<std::decay_t<decltype(field)>>();
    };
    set("lr", cfg.lr);
    set("weight_decay", cfg.weight_decay);
    set("beta1", cfg.beta1);
    set("beta2", cfg.beta2);
    set("adam_eps", cfg.adam_eps);
    set("batch_tokens", cfg.batch_tokens);
    set("max_steps", cfg.max_steps);
    set("eval_every", cfg.eval_every);
    set("warmup_steps", cfg.warmup_steps);
    if (j.contains("loss")) cfg.loss = loss_parse(j.at("loss"));
    if (j.contains("metric")) cfg.metric = metric_parse(j.at("metric"));
    if (j.contains("mask")) cfg.mask = ModalityMask::parse(j.at("mask"));
    set("seed", cfg.seed);
    if (j.contains("precision")) cfg.precision = precision_parse(j.at("precision"));
    set("target", cfg.target);
    set("stop_at_train_metric", cfg.stop_at_train_metric);
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// optimizer

template <typename S>
AdamWState<S> AdamWState<S>::init(const std::vector<NamedTensor<S>>& params) {
    AdamWState<S> state;
    for (const auto& p : params) {
        state.first_moment.emplace_back(p.tensor.numel(), S(0));
        state.second_moment.emplace_back(p.tensor.numel(), S(0));
    }
    return state;
}

template <typename S>
void adamw_step(std::vector<NamedTensor<S>>& params, AdamWState<S>& state,
                const TrainConfig& cfg, double lr_now) {
    if (params.size() != state.first_moment.size())
        throw std::invalid_argument("adamw_step: optimizer state does not match parameter list");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& tensor = params[pi].tensor;
        if (!tensor.requires_grad()) continue;
        auto grad = tensor.grad();
        auto data = tensor.mutable_data();
        auto& m = state.first_moment[pi];
        auto& v = state.second_moment[pi];
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = double(grad[i]);
            if (!std::isfinite(g))
                throw std::runtime_error("adamw_step: non-finite gradient in " + params[pi].name);
            const double m_new = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * g;
            const double v_new = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * g * g;
            m[i] = S(m_new);
            v[i] = S(v_new);
            const double m_hat = m_new / bc1;
            const double v_hat = v_new / bc2;
            const double update =
                m_hat / (std::sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * double(data[i]);
            data[i] = S(double(data[i]) - lr_now * update);
        }
    }
}

// ---------------------------------------------------------------------------
// evaluation

std::size_t resolve_target_index(const Dataset& ds, const std::string& name) {
    if (name.empty()) return 0;
    for (std::size_t i = 0; i < ds.target_names.size(); ++i)
        if (ds.target_names[i] == name) return i;
    std::string have;
    for (const auto& n : ds.target_names) have += (have.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown target '" + name + "' (dataset has: " + have + ")");
}

SmilesVocab vocab_from_dataset(const Dataset& ds) {
    std::vector<std::string> corpus;
    for (std::size_t i : ds.indices_of(Split::Train)) corpus.push_back(ds.molecules[i].smiles);
    if (corpus.empty())
        for (const auto& mol : ds.molecules) corpus.push_back(mol.smiles);
    return SmilesVocab::build(corpus);
}

std::size_t sequence_length(const Molecule& mol, const ModalityMask& mask,
                            std::size_t gine_layers) {
    std::size_t len = 1;  // CLS
    if (mask.use_1d) len += mol.smiles.size() + 1;
    if (mask.use_2d) len += mol.graph.num_atoms * gine_layers + 1;
    if (mask.use_3d) len += mol.graph.num_atoms * mol.conformers.size() + 1;
    return len;
}

namespace {

// Greedy packing under a token budget; every batch holds at least one
// molecule.
template <typename S>
std::vector<std::vector<std::size_t>> pack_batches(const MolMixModel<S>& model, const Dataset& ds,
                                                   const std::vector<std::size_t>& order,
                                                   const ModalityMask& mask,
                                                   std::size_t batch_tokens) {
    std::vector<std::vector<std::size_t>> batches;
    std::vector<std::size_t> current;
    std::size_t current_tokens = 0;
    for (std::size_t idx : order) {
        const std::size_t len =
            sequence_length(ds.molecules[idx], mask, model.config.gine_layers);
        if (!current.empty() && current_tokens + len > batch_tokens) {
            batches.push_back(std::move(current));
            current.clear();
            current_tokens = 0;
        }
        current.push_back(idx);
        current_tokens += len;
    }
    if (!current.empty()) batches.push_back(std::move(current));
    return batches;
}

struct KahanSum {
    double total = 0;
    double carry = 0;

    void add(double value) {
        const double y = value - carry;
        const double t = total + y;
        carry = (t - total) - y;
        total = t;
    }
};

}  // namespace

template <typename S>
EvalResult evaluate(const MolMixModel<S>& model, const Dataset& ds, Split split,
                    const ModalityMask& mask, std::size_t target_index,
                    std::size_t batch_tokens) {
    auto indices = ds.indices_of(split);
    EvalResult result;
    if (indices.empty()) return result;
    KahanSum abs_sum, sq_sum;
    auto batches = pack_batches(model, ds, indices, mask, batch_tokens);
    for (const auto& batch : batches) {
        std::vector<const Molecule*> mols;
        for (std::size_t idx : batch) mols.push_back(&ds.molecules[idx]);
        Tensor<S> pred = model.predict_batch(mols, mask);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const double denorm =
                ds.denormalize(double(pred.data()[b * model.config.targets]), target_index);
            const double err = denorm - ds.molecules[batch[b]].targets[target_index];
            abs_sum.add(std::abs(err));
            sq_sum.add(err * err);
        }
    }
    result.count = indices.size();
    result.mae = abs_sum.total / double(result.count);
    result.rmse = std::sqrt(sq_sum.total / double(result.count));
    if (result.rmse + 1e-12 < result.mae)
        throw std::logic_error("evaluate: RMSE fell below MAE, metric accumulation is broken");
    return result;
}

// ---------------------------------------------------------------------------
// training

template <typename S>
TrainResult train(MolMixModel<S>& model, const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (ds.target_mean.size() != ds.target_names.size())
        throw std::invalid_argument("train: dataset normalization stats missing");
    auto train_indices = ds.indices_of(Split::Train);
    auto val_indices = ds.indices_of(Split::Val);
    if (train_indices.empty()) throw std::invalid_argument("train: empty train split");
    if (val_indices.empty()) throw std::invalid_argument("train: empty val split");
    const std::size_t target_index = resolve_target_index(ds, cfg.target);

    auto params = model.named_params();
    auto opt_state = AdamWState<S>::init(params);
    std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

    TrainResult result;
    std::ostringstream csv;
    csv << "step,split,metric,value\n";
    const std::string mname = metric_name(cfg.metric);

    std::vector<std::vector<S>> best_params;
    auto snapshot_params = [&] {
        best_params.clear();
        for (const auto& p : params)
            best_params.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    };
    auto restore_params = [&] {
        for (std::size_t i = 0; i < params.size(); ++i)
            std::copy(best_params[i].begin(), best_params[i].end(),
                      params[i].tensor.mutable_data().begin());
    };

    std::size_t step = 0;
    bool stop = false;
    while (!stop && step < cfg.max_steps) {
        std::vector<std::size_t> order = train_indices;
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        auto batches = pack_batches(model, ds, order, cfg.mask, cfg.batch_tokens);
        for (const auto& batch : batches) {
            if (step >= cfg.max_steps) break;
            std::vector<const Molecule*> mols;
            std::vector<S> target_data;
            for (std::size_t idx : batch) {
                mols.push_back(&ds.molecules[idx]);
                target_data.push_back(
                    S(ds.normalize(ds.molecules[idx].targets[target_index], target_index)));
            }
            model.zero_grads();
            Tensor<S> pred = model.predict_batch(mols, cfg.mask);
            Tensor<S> target =
                Tensor<S>::from_data({batch.size(), model.config.targets}, std::move(target_data));
            Tensor<S> diff = sub(pred, target);
            Tensor<S> loss =
                cfg.loss == LossKind::MAE ? mean(abs_val(diff)) : mean(mul(diff, diff));
            loss.backward();
            const double lr_now =
                cfg.warmup_steps > 0 && step < cfg.warmup_steps
                    ? cfg.lr * double(step + 1) / double(cfg.warmup_steps)
                    : cfg.lr;
            adamw_step(params, opt_state, cfg, lr_now);
            ++step;

            if (step % cfg.eval_every == 0) {
                EvalResult train_eval =
                    evaluate(model, ds, Split::Train, cfg.mask, target_index, cfg.batch_tokens);
                EvalResult val_eval =
                    evaluate(model, ds, Split::Val, cfg.mask, target_index, cfg.batch_tokens);
                csv << step << ",train," << mname << ','
                    << format_double(train_eval.metric(cfg.metric)) << '\n';
                csv << step << ",val," << mname << ','
                    << format_double(val_eval.metric(cfg.metric)) << '\n';
                result.val_history.push_back({step, val_eval.metric(cfg.metric)});
                result.final_train_metric = train_eval.metric(cfg.metric);
                if (val_eval.metric(cfg.metric) < result.best_val) {
                    result.best_val = val_eval.metric(cfg.metric);
                    result.best_step = step;
                    snapshot_params();
                }
                if (cfg.stop_at_train_metric > 0 &&
                    train_eval.metric(cfg.metric) < cfg.stop_at_train_metric) {
                    stop = true;
                    break;
                }
            }
        }
    }
    result.steps_run = step;

    if (best_params.empty()) snapshot_params();
    restore_params();
    EvalResult test_eval =
        evaluate(model, ds, Split::Test, cfg.mask, target_index, cfg.batch_tokens);
    if (test_eval.count > 0) {
        result.test_metric = test_eval.metric(cfg.metric);
        csv << result.best_step << ",test," << mname << ',' << format_double(result.test_metric)
            << '\n';
    }
    result.metrics_csv = csv.str();
    return result;
}

// ---------------------------------------------------------------------------
// ablation

template <typename S>
std::vector<AblateRow> ablate(const Dataset& ds, const ModelConfig& model_cfg,
                              const TrainConfig& train_cfg,
                              const std::vector<ModalityMask>& masks,
                              const std::vector<std::uint64_t>& seeds, std::size_t jobs) {
    if (masks.empty()) throw std::invalid_argument("ablate: no masks given");
    if (seeds.empty()) throw std::invalid_argument("ablate: no seeds given");
    const SmilesVocab vocab = vocab_from_dataset(ds);
    struct Job {
        ModalityMask mask;
        std::uint64_t seed;
    };
    std::vector<Job> run_list;
    for (const auto& mask : masks)
        for (std::uint64_t seed : seeds) run_list.push_back({mask, seed});
    std::vector<AblateRow> rows(run_list.size());

    auto run_one = [&](std::size_t i) {
        ModelConfig cfg = model_cfg;
        cfg.modalities = run_list[i].mask;
        TrainConfig tcfg = train_cfg;
        tcfg.mask = run_list[i].mask;
        tcfg.seed = run_list[i].seed;
        MolMixModel<S> model = MolMixModel<S>::init(cfg, vocab, tcfg.seed);
        TrainResult res = train(model, ds, tcfg);
        rows[i] = {run_list[i].mask.label(), run_list[i].seed, res.best_val, res.test_metric};
    };

    if (jobs <= 1) {
        for (std::size_t i = 0; i < run_list.size(); ++i) run_one(i);
    } else {
        std::vector<std::thread> workers;
        std::size_t next = 0;
        std::mutex mutex;
        for (std::size_t w = 0; w < std::min(jobs, run_list.size()); ++w) {
            workers.emplace_back([&] {
                while (true) {
                    std::size_t i;
                    {
                        std::lock_guard<std::mutex> lock(mutex);
                        if (next >= run_list.size()) return;
                        i = next++;
                    }
                    run_one(i);
                }
            });
        }
        for (auto& worker : workers) worker.join();
    }
    return rows;
}

// ---------------------------------------------------------------------------
// transfer

template <typename S>
TrainResult transfer(MolMixModel<S>& model, const Dataset& ds, const TrainConfig& cfg) {
    // fresh readout head for the new target, sized per the current config
    std::mt19937_64 rng(cfg.seed ^ 0x5851f42d4c957f2dull);
    Tensor<S> new_w = glorot_uniform<S>(model.config.d_model, model.config.targets, rng);
    std::copy(new_w.data().begin(), new_w.data().end(),
              model.fusion.readout_w2.mutable_data().begin());
    auto b = model.fusion.readout_b2.mutable_data();
    std::fill(b.begin(), b.end(), S(0));

    model.set_all_trainable(false);
    model.fusion.readout_w2.set_requires_grad(true);
    model.fusion.readout_b2.set_requires_grad(true);
    return train(model, ds, cfg);
}

// ---------------------------------------------------------------------------
// gradient checking

template <typename S>
std::vector<GradCheckGroup> gradcheck_model(MolMixModel<S>& model, const Molecule& mol,
                                            const ModalityMask& mask, double h,
                                            std::size_t max_entries_per_group,
                                            const std::string& corrupt_group) {
    auto params = model.named_params();
    auto loss_value = [&]() -> double {
        Tensor<S> out = fusion_forward(model.sequence_for(mol, mask), model.fusion, model.config);
        double total = 0;
        for (S v : out.data()) total += double(v);
        return total;
    };

    model.zero_grads();
    {
        Tensor<S> out = fusion_forward(model.sequence_for(mol, mask), model.fusion, model.config);
        sum(out).backward();
    }
    std::vector<std::vector<double>> analytic;
    bool corrupt_found = corrupt_group.empty();
    for (auto& p : params) {
        std::vector<double> g(p.tensor.grad().begin(), p.tensor.grad().end());
        if (p.name == corrupt_group) {
            for (auto& v : g) v = v * 1.1 + 0.25;
            corrupt_found = true;
        }
        analytic.push_back(std::move(g));
    }
    if (!corrupt_found)
        throw std::invalid_argument("gradcheck: unknown corrupt group '" + corrupt_group + "'");

    std::mt19937_64 pick_rng(20240915);
    std::vector<GradCheckGroup> report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& tensor = params[pi].tensor;
        std::vector<std::size_t> entries(tensor.numel());
        std::iota(entries.begin(), entries.end(), 0);
        if (max_entries_per_group > 0 && entries.size() > max_entries_per_group) {
            std::shuffle(entries.begin(), entries.end(), pick_rng);
            entries.resize(max_entries_per_group);
        }
        GradCheckGroup group;
        group.name = params[pi].name;
        group.checked = entries.size();
        auto data = tensor.mutable_data();
        for (std::size_t idx : entries) {
            const S saved = data[idx];
            data[idx] = S(double(saved) + h);
            const double up = loss_value();
            data[idx] = S(double(saved) - h);
            const double down = loss_value();
            data[idx] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[pi][idx];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            group.worst_rel_err = std::max(group.worst_rel_err, std::abs(a - numeric) / denom);
        }
        report.push_back(std::move(group));
    }
    return report;
}

// ---------------------------------------------------------------------------
// explicit instantiation

#define MOLMIX_INSTANTIATE_TRAINER(S)                                                             \
    template struct AdamWState<S>;                                                                \
    template void adamw_step(std::vector<NamedTensor<S>>&, AdamWState<S>&, const TrainConfig&,    \
                             double);                                                             \
    template EvalResult evaluate(const MolMixModel<S>&, const Dataset&, Split,                    \
                                 const ModalityMask&, std::size_t, std::size_t);                  \
    template TrainResult train(MolMixModel<S>&, const Dataset&, const TrainConfig&);              \
    template std::vector<AblateRow> ablate<S>(const Dataset&, const ModelConfig&,                 \
                                              const TrainConfig&,                                 \
                                              const std::vector<ModalityMask>&,                   \
                                              const std::vector<std::uint64_t>&, std::size_t);    \
    template TrainResult transfer(MolMixModel<S>&, const Dataset&, const TrainConfig&);           \
    template std::vector<GradCheckGroup> gradcheck_model(MolMixModel<S>&, const Molecule&,        \
                                                         const ModalityMask&, double,             \
                                                         std::size_t, const std::string&);

MOLMIX_INSTANTIATE_TRAINER(float)
MOLMIX_INSTANTIATE_TRAINER(double)

#undef MOLMIX_INSTANTIATE_TRAINER

}  // namespace molmix
