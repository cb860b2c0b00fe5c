#include "molmix/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "molmix/data.hpp"
#include "molmix/fusion.hpp"
#include "molmix/runio.hpp"
#include "molmix/trainer.hpp"

namespace molmix {

namespace {

namespace fs = std::filesystem;

std::uint64_t default_seed() {
    if (const char* env = std::getenv("MOLMIX_SEED")) return std::strtoull(env, nullptr, 10);
    return 0;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ','))
        if (!part.empty()) seeds.push_back(std::strtoull(part.c_str(), nullptr, 10));
    if (seeds.empty()) throw std::invalid_argument("empty seed list '" + text + "'");
    return seeds;
}

std::array<double, 3> parse_fractions(const std::string& text) {
    std::array<double, 3> fracs{};
    std::stringstream ss(text);
    std::string part;
    for (auto& f : fracs) {
        if (!std::getline(ss, part, ','))
            throw std::invalid_argument("split fractions need three comma-separated values");
        f = std::strtod(part.c_str(), nullptr);
    }
    return fracs;
}

// Shared model/train option block; *_opt pointers record what the user set.
struct RunOptions {
    std::string data_path;
    std::string out_dir;
    std::string config_path;
    std::string splits_path;
    std::string split_fracs = "0.8,0.1,0.1";
    std::uint64_t split_seed = 0;
    std::uint64_t seed = default_seed();

    ModelConfig model;
    TrainConfig train;
    std::string modalities = "1d+2d+3d";
    std::string loss = "mae";
    std::string metric = "mae";
    std::string precision = "f32";
    std::string attn_impl = "tiled";
    std::string target;

    std::map<std::string, CLI::Option*> opts;

    void add_model_flags(CLI::App* cmd) {
        opts["d_enc"] = cmd->add_option("--d-enc", model.d_enc, "encoder hidden dimension");
        opts["d_model"] = cmd->add_option("--d-model", model.d_model,
                                          "downstream transformer dimension");
        opts["smiles_layers"] =
            cmd->add_option("--smiles-layers", model.smiles_layers, "SMILES encoder layers");
        opts["smiles_heads"] =
            cmd->add_option("--smiles-heads", model.smiles_heads, "SMILES encoder heads");
        opts["gine_layers"] =
            cmd->add_option("--gine-layers", model.gine_layers, "2D message-passing layers");
        opts["schnet_blocks"] =
            cmd->add_option("--schnet-blocks", model.schnet_blocks, "3D interaction blocks");
        opts["schnet_rbf"] =
            cmd->add_option("--schnet-rbf", model.schnet_rbf, "radial basis size");
        opts["schnet_cutoff"] =
            cmd->add_option("--schnet-cutoff", model.schnet_cutoff, "3D cutoff radius (A)");
        opts["schnet_gamma"] =
            cmd->add_option("--schnet-gamma", model.schnet_gamma, "radial basis width");
        opts["downstream_layers"] = cmd->add_option("--downstream-layers",
                                                    model.downstream_layers,
                                                    "downstream transformer layers");
        opts["downstream_heads"] = cmd->add_option("--downstream-heads", model.downstream_heads,
                                                   "downstream transformer heads");
        opts["ffn_mult"] = cmd->add_option("--ffn-mult", model.ffn_mult, "FFN width multiplier");
        opts["attn_impl"] =
            cmd->add_option("--attn-impl", attn_impl, "attention core: naive or tiled");
        opts["attn_block"] =
            cmd->add_option("--attn-block", model.attn_block, "tiled attention block size");
        opts["modalities"] =
            cmd->add_option("--modalities", modalities, "modality mask, e.g. 1d+2d+3d");
    }

    void add_train_flags(CLI::App* cmd) {
        opts["lr"] = cmd->add_option("--lr", train.lr, "learning rate");
        opts["weight_decay"] =
            cmd->add_option("--weight-decay", train.weight_decay, "decoupled weight decay");
        opts["batch_tokens"] =
            cmd->add_option("--batch-tokens", train.batch_tokens, "token budget per batch");
        opts["max_steps"] = cmd->add_option("--max-steps", train.max_steps, "optimizer steps");
        opts["eval_every"] =
            cmd->add_option("--eval-every", train.eval_every, "steps between evaluations");
        opts["warmup_steps"] =
            cmd->add_option("--warmup-steps", train.warmup_steps, "linear warmup steps");
        opts["loss"] = cmd->add_option("--loss", loss, "training loss: mae or mse");
        opts["metric"] = cmd->add_option("--metric", metric, "reported metric: mae or rmse");
        opts["precision"] = cmd->add_option("--precision", precision, "f32 or f64");
        opts["target"] = cmd->add_option("--target", target, "target column name");
        opts["stop_train"] = cmd->add_option("--stop-at-train-metric", train.stop_at_train_metric,
                                             "early stop once the train metric drops below");
        cmd->add_option("--seed", seed, "run seed (env MOLMIX_SEED is the fallback)");
    }

    void add_data_flags(CLI::App* cmd) {
        cmd->add_option("--data", data_path, "dataset JSONL path")->required();
        cmd->add_option("--splits", splits_path, "explicit split file (JSON)");
        cmd->add_option("--split-fracs", split_fracs, "train,val,test fractions");
        cmd->add_option("--split-seed", split_seed, "seed for the deterministic split");
        cmd->add_option("--config", config_path, "JSON config file with model/train sections");
    }

    bool passed(const std::string& key) const {
        auto it = opts.find(key);
        return it != opts.end() && it->second->count() > 0;
    }

    // Resolution order: defaults, then the config file, then explicit flags.
    void resolve() {
        if (!config_path.empty()) {
            nlohmann::json j = nlohmann::json::parse(read_text_file(config_path));
            if (j.contains("model"))
                model = ModelConfig::from_json_string(j.at("model").dump());
            if (j.contains("train"))
                train = TrainConfig::from_json_string(j.at("train").dump());
        }
        ModelConfig flag_model;  // capture flag values bound during parsing
        flag_model = model;
        if (passed("attn_impl")) model.attn_impl = attention_impl_parse(attn_impl);
        if (passed("modalities")) {
            model.modalities = ModalityMask::parse(modalities);
        }
        train.mask = model.modalities;
        if (passed("loss")) train.loss = loss_parse(loss);
        if (passed("metric")) train.metric = metric_parse(metric);
        if (passed("precision")) train.precision = precision_parse(precision);
        if (passed("target")) train.target = target;
        train.seed = seed;
        model.validate();
        train.validate();
    }

    Dataset load_dataset_with_splits() {
        Dataset ds = load_jsonl(data_path);
        if (!splits_path.empty())
            apply_split_file(ds, splits_path);
        else
            ds = split_deterministic(std::move(ds), parse_fractions(split_fracs), split_seed);
        ds.compute_normalization();
        return ds;
    }
};

RunManifest make_manifest(const std::string& command, const std::vector<std::string>& argv,
                          const RunOptions& opt) {
    RunManifest m;
    m.command = command;
    m.argv = argv;
    m.dataset_path = opt.data_path;
    m.dataset_hash = opt.data_path.empty() ? "" : sha256_file(opt.data_path);
    m.model_config_json = opt.model.to_json_string();
    m.train_config_json = opt.train.to_json_string();
    m.seeds = {opt.seed};
    m.out_dir = opt.out_dir;
    return m;
}

void write_train_report(const std::string& path, const TrainResult& result,
                        const std::string& target, MetricKind metric) {
    nlohmann::ordered_json j;
    j["target"] = target;
    j["metric"] = metric_name(metric);
    j["best_val"] = result.best_val;
    j["best_step"] = result.best_step;
    j["test_metric"] = result.test_metric;
    j["final_train_metric"] = result.final_train_metric;
    j["steps_run"] = result.steps_run;
    auto history = nlohmann::ordered_json::array();
    for (auto [step, value] : result.val_history) history.push_back({step, value});
    j["val_history"] = std::move(history);
    write_text_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// gen

int cmd_gen(const std::vector<std::string>& argv, GenConfig cfg, const std::string& target_spec,
            const std::string& out_dir) {
    if (target_spec != "all") {
        cfg.targets.clear();
        std::stringstream ss(target_spec);
        std::string part;
        while (std::getline(ss, part, ','))
            if (!part.empty()) cfg.targets.push_back(part);
    }
    Dataset ds = gen_synthetic(cfg);
    ensure_directory(out_dir);
    const std::string dataset_path = (fs::path(out_dir) / "dataset.jsonl").string();
    save_jsonl(ds, dataset_path);
    save_dataset_meta(ds, dataset_path, cfg.to_json_string());

    RunManifest manifest;
    manifest.command = "gen";
    manifest.argv = argv;
    manifest.dataset_path = dataset_path;
    manifest.dataset_hash = sha256_file(dataset_path);
    manifest.seeds = {cfg.seed};
    manifest.out_dir = out_dir;
    manifest.write((fs::path(out_dir) / "manifest.json").string());

    std::cout << "wrote " << ds.size() << " molecules to " << dataset_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

template <typename S>
int run_train(RunOptions& opt, const Dataset& ds, const std::string& out_dir) {
    SmilesVocab vocab = vocab_from_dataset(ds);
    vocab.save((fs::path(out_dir) / "vocab.txt").string());
    MolMixModel<S> model = MolMixModel<S>::init(opt.model, vocab, opt.seed);
    TrainResult result = train(model, ds, opt.train);
    model.save((fs::path(out_dir) / "checkpoint.bin").string());
    write_text_file((fs::path(out_dir) / "metrics.csv").string(), result.metrics_csv);
    write_train_report((fs::path(out_dir) / "report.json").string(), result,
                       opt.train.target.empty() ? ds.target_names.at(0) : opt.train.target,
                       opt.train.metric);
    std::cout << "best val " << metric_name(opt.train.metric) << " " << result.best_val
              << " at step " << result.best_step << ", test " << result.test_metric << "\n";
    return 0;
}

int cmd_train(const std::vector<std::string>& argv, RunOptions& opt) {
    opt.resolve();
    Dataset ds = opt.load_dataset_with_splits();
    ensure_directory(opt.out_dir);
    make_manifest("train", argv, opt).write((fs::path(opt.out_dir) / "manifest.json").string());
    write_text_file((fs::path(opt.out_dir) / "model.json").string(),
                    opt.model.to_json_string() + "\n");
    save_split(ds, (fs::path(opt.out_dir) / "split.json").string());
    if (opt.train.precision == Precision::F64) return run_train<double>(opt, ds, opt.out_dir);
    return run_train<float>(opt, ds, opt.out_dir);
}

// ---------------------------------------------------------------------------
// eval

template <typename S>
int run_eval(const RunManifest& manifest, const ModelConfig& mcfg, const TrainConfig& tcfg,
             const Dataset& ds, const std::string& run_dir, Split split,
             const std::string& out_dir) {
    SmilesVocab vocab = SmilesVocab::load((fs::path(run_dir) / "vocab.txt").string());
    MolMixModel<S> model = MolMixModel<S>::init(mcfg, vocab, manifest.seeds.at(0));
    model.load((fs::path(run_dir) / "checkpoint.bin").string());
    const std::size_t target_index = resolve_target_index(ds, tcfg.target);
    EvalResult eval = evaluate(model, ds, split, tcfg.mask, target_index, tcfg.batch_tokens);
    const double value = eval.metric(tcfg.metric);
    std::cout << split_name(split) << " " << metric_name(tcfg.metric) << " "
              << format_double(value) << " over " << eval.count << " molecules\n";
    if (!out_dir.empty()) {
        ensure_directory(out_dir);
        nlohmann::ordered_json j;
        j["split"] = split_name(split);
        j["metric"] = metric_name(tcfg.metric);
        j["value"] = value;
        j["count"] = eval.count;
        write_text_file((fs::path(out_dir) / "eval.json").string(), j.dump(2) + "\n");
    }
    return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& data_override,
             const std::string& split_label, const std::string& out_dir) {
    RunManifest manifest = RunManifest::load((fs::path(run_dir) / "manifest.json").string());
    ModelConfig mcfg = ModelConfig::from_json_string(manifest.model_config_json);
    TrainConfig tcfg = TrainConfig::from_json_string(manifest.train_config_json);
    Dataset ds = load_jsonl(data_override.empty() ? manifest.dataset_path : data_override);
    apply_split_file(ds, (fs::path(run_dir) / "split.json").string());
    ds.compute_normalization();
    Split split = Split::Val;
    if (split_label == "train") split = Split::Train;
    else if (split_label == "val") split = Split::Val;
    else if (split_label == "test") split = Split::Test;
    else throw std::invalid_argument("unknown split '" + split_label + "'");
    if (tcfg.precision == Precision::F64)
        return run_eval<double>(manifest, mcfg, tcfg, ds, run_dir, split, out_dir);
    return run_eval<float>(manifest, mcfg, tcfg, ds, run_dir, split, out_dir);
}

// ---------------------------------------------------------------------------
// ablate

template <typename S>
int run_ablate(RunOptions& opt, const Dataset& ds, const std::vector<ModalityMask>& masks,
               const std::vector<std::uint64_t>& seeds, std::size_t jobs) {
    auto rows = ablate<S>(ds, opt.model, opt.train, masks, seeds, jobs);
    std::ostringstream csv;
    csv << "mask,seed,best_val,test_metric\n";
    for (const auto& row : rows)
        csv << row.mask_label << ',' << row.seed << ',' << format_double(row.best_val) << ','
            << format_double(row.test_metric) << '\n';
    write_text_file((fs::path(opt.out_dir) / "ablation.csv").string(), csv.str());

    nlohmann::ordered_json report;
    for (const auto& mask : masks) {
        std::vector<double> metrics;
        for (const auto& row : rows)
            if (row.mask_label == mask.label()) metrics.push_back(row.test_metric);
        std::sort(metrics.begin(), metrics.end());
        const double median = metrics[metrics.size() / 2];
        report[mask.label()] = {{"median_test_metric", median}, {"runs", metrics.size()}};
        std::cout << mask.label() << ": median test " << metric_name(opt.train.metric) << " "
                  << format_double(median) << " over " << metrics.size() << " runs\n";
    }
    write_text_file((fs::path(opt.out_dir) / "report.json").string(), report.dump(2) + "\n");
    return 0;
}

int cmd_ablate(const std::vector<std::string>& argv, RunOptions& opt,
               const std::vector<std::string>& mask_labels, const std::string& seed_list,
               std::size_t jobs) {
    opt.resolve();
    Dataset ds = opt.load_dataset_with_splits();
    std::vector<ModalityMask> masks;
    for (const auto& label : mask_labels) masks.push_back(ModalityMask::parse(label));
    auto seeds = parse_seed_list(seed_list);
    ensure_directory(opt.out_dir);
    RunManifest manifest = make_manifest("ablate", argv, opt);
    manifest.seeds = seeds;
    manifest.write((fs::path(opt.out_dir) / "manifest.json").string());
    save_split(ds, (fs::path(opt.out_dir) / "split.json").string());
    if (opt.train.precision == Precision::F64) return run_ablate<double>(opt, ds, masks, seeds, jobs);
    return run_ablate<float>(opt, ds, masks, seeds, jobs);
}

// ---------------------------------------------------------------------------
// transfer

template <typename S>
int run_transfer(RunOptions& opt, const Dataset& ds, const std::string& pretrained_dir) {
    SmilesVocab vocab = SmilesVocab::load((fs::path(pretrained_dir) / "vocab.txt").string());

    MolMixModel<S> pretrained = MolMixModel<S>::init(opt.model, vocab, opt.seed);
    pretrained.load((fs::path(pretrained_dir) / "checkpoint.bin").string());
    TrainResult from_pretrained = transfer(pretrained, ds, opt.train);

    MolMixModel<S> random_model = MolMixModel<S>::init(opt.model, vocab, opt.seed);
    TrainResult from_random = transfer(random_model, ds, opt.train);

    std::ostringstream csv;
    csv << "variant,best_val,test_metric\n";
    csv << "pretrained," << format_double(from_pretrained.best_val) << ','
        << format_double(from_pretrained.test_metric) << '\n';
    csv << "random," << format_double(from_random.best_val) << ','
        << format_double(from_random.test_metric) << '\n';
    write_text_file((fs::path(opt.out_dir) / "transfer.csv").string(), csv.str());

    nlohmann::ordered_json j;
    j["pretrained_test_metric"] = from_pretrained.test_metric;
    j["random_test_metric"] = from_random.test_metric;
    write_text_file((fs::path(opt.out_dir) / "report.json").string(), j.dump(2) + "\n");
    std::cout << "pretrained-frozen test " << format_double(from_pretrained.test_metric)
              << ", random-frozen test " << format_double(from_random.test_metric) << "\n";
    return 0;
}

int cmd_transfer(const std::vector<std::string>& argv, RunOptions& opt,
                 const std::string& pretrained_dir) {
    RunManifest pre_manifest =
        RunManifest::load((fs::path(pretrained_dir) / "manifest.json").string());
    opt.model = ModelConfig::from_json_string(pre_manifest.model_config_json);
    opt.resolve();
    // architecture comes from the pretrained run; only run-level settings vary
    opt.model = ModelConfig::from_json_string(pre_manifest.model_config_json);
    opt.train.mask = opt.model.modalities;
    Dataset ds = opt.load_dataset_with_splits();
    ensure_directory(opt.out_dir);
    make_manifest("transfer", argv, opt).write((fs::path(opt.out_dir) / "manifest.json").string());
    save_split(ds, (fs::path(opt.out_dir) / "split.json").string());
    if (opt.train.precision == Precision::F64)
        return run_transfer<double>(opt, ds, pretrained_dir);
    return run_transfer<float>(opt, ds, pretrained_dir);
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(std::size_t atoms, double h, std::size_t max_entries,
                  const std::string& corrupt_group, std::uint64_t seed,
                  const std::string& mask_label, const std::string& out_dir) {
    if (atoms > 8) throw std::invalid_argument("gradcheck: needs a small molecule (atoms <= 8)");
    ModelConfig cfg;
    cfg.d_enc = 16;
    cfg.d_model = 32;
    cfg.smiles_layers = 2;
    cfg.smiles_heads = 4;
    cfg.gine_layers = 2;
    cfg.schnet_blocks = 2;
    cfg.schnet_rbf = 16;
    cfg.downstream_layers = 2;
    cfg.downstream_heads = 4;
    cfg.ffn_mult = 2;
    cfg.attn_block = 8;
    cfg.modalities = ModalityMask::parse(mask_label);

    GenConfig gen_cfg;
    gen_cfg.count = 1;
    gen_cfg.atoms_min = atoms;
    gen_cfg.atoms_max = atoms;
    gen_cfg.k_conformers = 2;
    gen_cfg.seed = seed;
    Dataset ds = gen_synthetic(gen_cfg);
    const Molecule& mol = ds.molecules[0];

    SmilesVocab vocab = SmilesVocab::build({mol.smiles});
    MolMixModel<double> model = MolMixModel<double>::init(cfg, vocab, seed);
    auto report =
        gradcheck_model(model, mol, cfg.modalities, h, max_entries, corrupt_group);

    constexpr double kTolerance = 1e-3;
    double worst = 0;
    std::string worst_group = "(none)";
    bool pass = true;
    for (const auto& group : report) {
        const bool ok = group.worst_rel_err < kTolerance;
        if (group.worst_rel_err > worst) {
            worst = group.worst_rel_err;
            worst_group = group.name;
        }
        if (!ok) {
            pass = false;
            std::cout << "FAIL " << group.name << " rel_err " << format_double(group.worst_rel_err)
                      << " (" << group.checked << " entries)\n";
        }
    }
    std::cout << (pass ? "PASS" : "FAIL") << ": " << report.size() << " parameter groups, worst "
              << format_double(worst) << " in " << worst_group << "\n";
    if (!out_dir.empty()) {
        ensure_directory(out_dir);
        nlohmann::ordered_json j;
        for (const auto& group : report)
            j[group.name] = {{"worst_rel_err", group.worst_rel_err},
                             {"checked", group.checked}};
        write_text_file((fs::path(out_dir) / "gradcheck.json").string(), j.dump(2) + "\n");
    }
    return pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// attnbench

int cmd_attnbench(const std::string& lengths_list, const std::string& segments_list,
                  std::size_t heads, std::size_t block, std::size_t d, std::uint64_t seed,
                  const std::string& out_dir) {
    auto lengths = parse_seed_list(lengths_list);
    auto segment_counts = parse_seed_list(segments_list);
    std::ostringstream csv;
    csv << "impl,length,segments,peak_scratch_elements,flops_estimate\n";
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (std::uint64_t L : lengths) {
        for (std::uint64_t segs : segment_counts) {
            const std::size_t total = std::size_t(L) * std::size_t(segs);
            std::vector<float> data(total * d);
            for (auto& v : data) v = float(dist(rng));
            PackedBatch<float> packed;
            packed.tokens = Tensor<float>::from_data({total, d}, std::move(data));
            packed.seq_offsets = {0};
            for (std::uint64_t s = 1; s <= segs; ++s)
                packed.seq_offsets.push_back(std::size_t(s * L));
            for (AttentionImpl impl : {AttentionImpl::Naive, AttentionImpl::Tiled}) {
                AttentionStats stats = measure_stats(impl, packed, heads, block);
                csv << attention_impl_name(impl) << ',' << L << ',' << segs << ','
                    << stats.peak_scratch_elements << ',' << stats.flops_estimate << '\n';
            }
        }
    }
    std::cout << csv.str();
    if (!out_dir.empty()) {
        ensure_directory(out_dir);
        write_text_file((fs::path(out_dir) / "attnbench.csv").string(), csv.str());
    }
    return 0;
}

// ---------------------------------------------------------------------------
// attndump

template <typename S>
int run_attndump(const RunManifest& manifest, const ModelConfig& mcfg, const TrainConfig& tcfg,
                 const Dataset& ds, const std::string& run_dir, const std::string& molecule_id,
                 double clip, const std::string& out_dir) {
    SmilesVocab vocab = SmilesVocab::load((fs::path(run_dir) / "vocab.txt").string());
    MolMixModel<S> model = MolMixModel<S>::init(mcfg, vocab, manifest.seeds.at(0));
    model.load((fs::path(run_dir) / "checkpoint.bin").string());
    const Molecule* mol = nullptr;
    if (molecule_id.empty()) {
        mol = &ds.molecules.at(0);
    } else {
        for (const auto& m : ds.molecules)
            if (m.id == molecule_id) mol = &m;
        if (!mol) throw std::invalid_argument("molecule id '" + molecule_id + "' not in dataset");
    }
    ensure_directory(out_dir);
    std::size_t files = 0;
    for (std::size_t layer = 0; layer < mcfg.downstream_layers; ++layer) {
        for (std::size_t head = 0; head < mcfg.downstream_heads; ++head) {
            ScoreDump dump = fusion_attention_scores(model, *mol, tcfg.mask, layer, head, clip);
            char name[64];
            std::snprintf(name, sizeof(name), "scores_layer%zu_head%zu.txt", layer, head);
            write_score_matrix((fs::path(out_dir) / name).string(), dump);
            ++files;
        }
    }
    std::cout << "wrote " << files << " score matrices for " << mol->id << " to " << out_dir
              << "\n";
    return 0;
}

int cmd_attndump(const std::string& run_dir, const std::string& data_override,
                 const std::string& molecule_id, double clip, const std::string& out_dir) {
    RunManifest manifest = RunManifest::load((fs::path(run_dir) / "manifest.json").string());
    ModelConfig mcfg = ModelConfig::from_json_string(manifest.model_config_json);
    TrainConfig tcfg = TrainConfig::from_json_string(manifest.train_config_json);
    Dataset ds = load_jsonl(data_override.empty() ? manifest.dataset_path : data_override);
    if (tcfg.precision == Precision::F64)
        return run_attndump<double>(manifest, mcfg, tcfg, ds, run_dir, molecule_id, clip, out_dir);
    return run_attndump<float>(manifest, mcfg, tcfg, ds, run_dir, molecule_id, clip, out_dir);
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"MolMix: multimodal molecular transformer workflows"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic molecule dataset");
    GenConfig gen_cfg;
    std::string gen_out, gen_targets = "all", gen_marked = "N";
    gen_cfg.seed = default_seed();
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--count", gen_cfg.count, "number of molecules");
    gen->add_option("--atoms-min", gen_cfg.atoms_min, "minimum atoms per molecule");
    gen->add_option("--atoms-max", gen_cfg.atoms_max, "maximum atoms per molecule");
    gen->add_option("--k-conformers", gen_cfg.k_conformers, "conformers per molecule");
    gen->add_option("--noise-sigma", gen_cfg.noise_sigma, "per-conformer coordinate noise (A)");
    gen->add_option("--ring-prob", gen_cfg.ring_probability, "probability of closing one ring");
    gen->add_option("--target", gen_targets,
                    "target columns: all or a comma list of geom,topo,str,mix");
    gen->add_option("--marked-char", gen_marked, "character counted by the str target");
    gen->add_option("--seed", gen_cfg.seed, "generator seed");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model");
    RunOptions train_opt;
    train_opt.add_data_flags(train_cmd);
    train_cmd->add_option("--out", train_opt.out_dir, "output directory")->required();
    train_opt.add_model_flags(train_cmd);
    train_opt.add_train_flags(train_cmd);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained run");
    std::string eval_run, eval_data, eval_split = "val", eval_out;
    eval_cmd->add_option("--run", eval_run, "training run directory")->required();
    eval_cmd->add_option("--data", eval_data, "dataset override");
    eval_cmd->add_option("--split", eval_split, "train, val or test");
    eval_cmd->add_option("--out", eval_out, "optional output directory");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "train one run per modality mask");
    RunOptions ablate_opt;
    std::vector<std::string> ablate_masks{"1d", "2d", "3d", "1d+2d", "1d+3d", "2d+3d",
                                          "1d+2d+3d"};
    std::string ablate_seeds = "0,1,2,3,4";
    std::size_t ablate_jobs = 1;
    ablate_opt.add_data_flags(ablate_cmd);
    ablate_cmd->add_option("--out", ablate_opt.out_dir, "output directory")->required();
    ablate_cmd->add_option("--masks", ablate_masks, "modality masks to compare");
    ablate_cmd->add_option("--seeds", ablate_seeds, "comma-separated seeds");
    ablate_cmd->add_option("--jobs", ablate_jobs, "parallel training runs");
    ablate_opt.add_model_flags(ablate_cmd);
    ablate_opt.add_train_flags(ablate_cmd);

    // transfer
    auto* transfer_cmd =
        app.add_subcommand("transfer", "freeze a pretrained model, train the readout only");
    RunOptions transfer_opt;
    std::string transfer_pretrained;
    transfer_opt.add_data_flags(transfer_cmd);
    transfer_cmd->add_option("--out", transfer_opt.out_dir, "output directory")->required();
    transfer_cmd->add_option("--pretrained", transfer_pretrained, "pretrained run directory")
        ->required();
    transfer_opt.add_train_flags(transfer_cmd);

    // gradcheck
    auto* gradcheck_cmd =
        app.add_subcommand("gradcheck", "finite-difference verification of all gradients");
    std::size_t gc_atoms = 6, gc_entries = 24;
    double gc_h = 1e-4;
    std::string gc_corrupt, gc_mask = "1d+2d+3d", gc_out;
    std::uint64_t gc_seed = default_seed();
    gradcheck_cmd->add_option("--atoms", gc_atoms, "molecule size (at most 8)");
    gradcheck_cmd->add_option("--h", gc_h, "finite-difference step");
    gradcheck_cmd->add_option("--max-entries", gc_entries, "checked entries per parameter group");
    gradcheck_cmd->add_option("--corrupt-group", gc_corrupt,
                              "test hook: corrupt this group's analytic gradient");
    gradcheck_cmd->add_option("--seed", gc_seed, "seed");
    gradcheck_cmd->add_option("--modalities", gc_mask, "modality mask");
    gradcheck_cmd->add_option("--out", gc_out, "optional output directory");

    // attnbench
    auto* attnbench_cmd =
        app.add_subcommand("attnbench", "scratch-memory accounting for both attention cores");
    std::string ab_lengths = "64,128,256,512", ab_segments = "1", ab_out;
    std::size_t ab_heads = 8, ab_block = 32, ab_d = 64;
    std::uint64_t ab_seed = default_seed();
    attnbench_cmd->add_option("--lengths", ab_lengths, "comma-separated segment lengths");
    attnbench_cmd->add_option("--segments", ab_segments, "comma-separated segment counts");
    attnbench_cmd->add_option("--heads", ab_heads, "attention heads");
    attnbench_cmd->add_option("--block", ab_block, "tiled block size");
    attnbench_cmd->add_option("--d", ab_d, "token width");
    attnbench_cmd->add_option("--seed", ab_seed, "seed");
    attnbench_cmd->add_option("--out", ab_out, "optional output directory");

    // attndump
    auto* attndump_cmd =
        app.add_subcommand("attndump", "dump clipped pre-softmax attention scores");
    std::string ad_run, ad_data, ad_mol, ad_out;
    double ad_clip = 10.0;
    attndump_cmd->add_option("--run", ad_run, "training run directory")->required();
    attndump_cmd->add_option("--data", ad_data, "dataset override");
    attndump_cmd->add_option("--molecule", ad_mol, "molecule id (default: first)");
    attndump_cmd->add_option("--clip", ad_clip, "score clipping range");
    attndump_cmd->add_option("--out", ad_out, "output directory")->required();

    std::vector<const char*> argv_c;
    argv_c.push_back("molmix");
    for (const auto& a : args) argv_c.push_back(a.c_str());
    try {
        app.parse(int(argv_c.size()), argv_c.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    std::vector<std::string> argv_record = args;
    try {
        if (*gen) {
            if (gen_marked.size() != 1)
                throw std::invalid_argument("--marked-char needs exactly one character");
            gen_cfg.marked_char = gen_marked[0];
            return cmd_gen(argv_record, gen_cfg, gen_targets, gen_out);
        }
        if (*train_cmd) return cmd_train(argv_record, train_opt);
        if (*eval_cmd) return cmd_eval(eval_run, eval_data, eval_split, eval_out);
        if (*ablate_cmd)
            return cmd_ablate(argv_record, ablate_opt, ablate_masks, ablate_seeds, ablate_jobs);
        if (*transfer_cmd) return cmd_transfer(argv_record, transfer_opt, transfer_pretrained);
        if (*gradcheck_cmd)
            return cmd_gradcheck(gc_atoms, gc_h, gc_entries, gc_corrupt, gc_seed, gc_mask, gc_out);
        if (*attnbench_cmd)
            return cmd_attnbench(ab_lengths, ab_segments, ab_heads, ab_block, ab_d, ab_seed,
                                 ab_out);
        if (*attndump_cmd) return cmd_attndump(ad_run, ad_data, ad_mol, ad_clip, ad_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace molmix
