#pragma once

// Optimization loop over packed variable-length batches, losses and metrics,
// modality-ablation and frozen-backbone transfer runs, plus the
// finite-difference gradient checker used by the verification command.

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "molmix/config.hpp"
#include "molmix/data.hpp"
#include "molmix/fusion.hpp"

namespace molmix {

enum class LossKind { MAE, MSE };
enum class MetricKind { MAE, RMSE };

std::string loss_name(LossKind k);
LossKind loss_parse(const std::string& name);
std::string metric_name(MetricKind k);
MetricKind metric_parse(const std::string& name);
std::string precision_name(Precision p);
Precision precision_parse(const std::string& name);

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_tokens = 4096;  // packed-batch budget, not molecule count
    std::size_t max_steps = 1000;
    std::size_t eval_every = 100;
    std::size_t warmup_steps = 0;     // linear warmup to lr, then constant
    LossKind loss = LossKind::MAE;
    MetricKind metric = MetricKind::MAE;
    ModalityMask mask;
    std::uint64_t seed = 0;
    Precision precision = Precision::F32;
    std::string target;               // target column name; empty = first column
    double stop_at_train_metric = 0;  // early stop once train metric drops below; 0 = off

    void validate() const;
    std::string to_json_string() const;
    static TrainConfig from_json_string(const std::string& text);
};

// ---- optimizer ----

template <typename S>
struct AdamWState {
    std::vector<std::vector<S>> first_moment;
    std::vector<std::vector<S>> second_moment;
    std::size_t step = 0;

    static AdamWState init(const std::vector<NamedTensor<S>>& params);
};

// Decoupled weight decay with bias-corrected moments. Parameters whose
// tensors do not require gradients are left untouched. Throws on non-finite
// gradients, naming the parameter.
template <typename S>
void adamw_step(std::vector<NamedTensor<S>>& params, AdamWState<S>& state,
                const TrainConfig& cfg, double lr_now);

// ---- evaluation ----

struct EvalResult {
    double mae = 0;
    double rmse = 0;
    std::size_t count = 0;

    double metric(MetricKind k) const { return k == MetricKind::MAE ? mae : rmse; }
};

// Metrics on de-normalized predictions over the given split.
template <typename S>
EvalResult evaluate(const MolMixModel<S>& model, const Dataset& ds, Split split,
                    const ModalityMask& mask, std::size_t target_index,
                    std::size_t batch_tokens);

// ---- training ----

struct TrainResult {
    std::vector<std::pair<std::size_t, double>> val_history;  // (step, val metric)
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_step = 0;
    double test_metric = std::numeric_limits<double>::quiet_NaN();
    double final_train_metric = std::numeric_limits<double>::quiet_NaN();
    std::size_t steps_run = 0;
    std::string metrics_csv;  // "step,split,metric,value" rows
};

// Mini-batch loop with packed variable-length batches. Keeps the best
// validation parameters, restores them at the end and reports the test
// metric with them. The dataset must carry splits and normalization stats.
template <typename S>
TrainResult train(MolMixModel<S>& model, const Dataset& ds, const TrainConfig& cfg);

std::size_t resolve_target_index(const Dataset& ds, const std::string& name);
SmilesVocab vocab_from_dataset(const Dataset& ds);

// Fusion sequence length of one molecule under a mask (without running
// the encoders).
std::size_t sequence_length(const Molecule& mol, const ModalityMask& mask,
                            std::size_t gine_layers);

// ---- ablation ----

struct AblateRow {
    std::string mask_label;
    std::uint64_t seed = 0;
    double best_val = 0;
    double test_metric = 0;
};

// One independently seeded run per (mask, seed) with an identical downstream
// transformer configuration. jobs > 1 runs them on worker threads; the row
// order is fixed regardless.
template <typename S>
std::vector<AblateRow> ablate(const Dataset& ds, const ModelConfig& model_cfg,
                              const TrainConfig& train_cfg,
                              const std::vector<ModalityMask>& masks,
                              const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1);

// ---- transfer ----

// Re-initializes the readout's final linear layer for the new target, freezes
// everything else and trains. The model must already hold the pretrained
// weights.
template <typename S>
TrainResult transfer(MolMixModel<S>& model, const Dataset& ds, const TrainConfig& cfg);

// ---- gradient checking ----

struct GradCheckGroup {
    std::string name;
    double worst_rel_err = 0;
    std::size_t checked = 0;
};

// Central finite differences of sum(predict(mol)) against the analytic
// gradients, over up to max_entries_per_group sampled coordinates of each
// parameter tensor. corrupt_group, when set, perturbs that group's analytic
// gradient first (negative control for the verification command).
template <typename S>
std::vector<GradCheckGroup> gradcheck_model(MolMixModel<S>& model, const Molecule& mol,
                                            const ModalityMask& mask, double h,
                                            std::size_t max_entries_per_group,
                                            const std::string& corrupt_group = "");

std::string format_double(double value);  // shortest exact decimal, locale-free

}  // namespace molmix
