// Command-line front end: training, evaluation, gradient checking,
// convergence benchmarking and latent-graph export.
//
// Exit codes: 0 success, 1 check failure, 2 usage/config error,
// 3 numerical divergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "eigencent/config_json.hpp"
#include "eigencent/checkpoint.hpp"
#include "eigencent/data.hpp"
#include "eigencent/graph_export.hpp"
#include "eigencent/model.hpp"
#include "eigencent/powergrad.hpp"
#include "eigencent/train.hpp"

namespace {

using namespace eigencent;
namespace fs = std::filesystem;

struct DataSpec {
    TaskKind task{TaskKind::synthetic};
    std::string train_path, dev_path, test_path, embeddings_path;
    std::size_t synthetic_classes{4};
    std::size_t synthetic_vocab{200};
    double synthetic_distractor_rate{0.9};
    std::size_t synthetic_len_lo{10};
    std::size_t synthetic_len_hi{30};
    std::size_t synthetic_train{2000};
    std::size_t synthetic_dev{500};
    std::size_t synthetic_test{500};
};

DataSpec data_spec_from_json(const nlohmann::json& j) {
    DataSpec d;
    if (j.contains("task")) d.task = task_from_name(j.at("task").get<std::string>());
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("train_path", d.train_path);
    get("dev_path", d.dev_path);
    get("test_path", d.test_path);
    get("embeddings_path", d.embeddings_path);
    get("synthetic_classes", d.synthetic_classes);
    get("synthetic_vocab", d.synthetic_vocab);
    get("synthetic_distractor_rate", d.synthetic_distractor_rate);
    get("synthetic_len_lo", d.synthetic_len_lo);
    get("synthetic_len_hi", d.synthetic_len_hi);
    get("synthetic_train", d.synthetic_train);
    get("synthetic_dev", d.synthetic_dev);
    get("synthetic_test", d.synthetic_test);
    return d;
}

nlohmann::json data_spec_to_json(const DataSpec& d) {
    nlohmann::json j;
    j["task"] = task_name(d.task);
    if (!d.train_path.empty()) j["train_path"] = d.train_path;
    if (!d.dev_path.empty()) j["dev_path"] = d.dev_path;
    if (!d.test_path.empty()) j["test_path"] = d.test_path;
    if (!d.embeddings_path.empty()) j["embeddings_path"] = d.embeddings_path;
    j["synthetic_classes"] = d.synthetic_classes;
    j["synthetic_vocab"] = d.synthetic_vocab;
    j["synthetic_distractor_rate"] = d.synthetic_distractor_rate;
    j["synthetic_len_lo"] = d.synthetic_len_lo;
    j["synthetic_len_hi"] = d.synthetic_len_hi;
    j["synthetic_train"] = d.synthetic_train;
    j["synthetic_dev"] = d.synthetic_dev;
    j["synthetic_test"] = d.synthetic_test;
    return j;
}

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ContractViolation("bad JSON in " + path + ": " + e.what());
    }
    return j;
}

struct Corpus {
    Vocab vocab;
    Dataset train, dev, test;
};

Corpus load_corpus(const DataSpec& spec, const TrainConfig& cfg) {
    Corpus c;
    if (spec.task == TaskKind::synthetic) {
        const std::size_t total = spec.synthetic_train + spec.synthetic_dev + spec.synthetic_test;
        SyntheticTask t = make_synthetic_task(cfg.seed, spec.synthetic_classes,
                                              spec.synthetic_vocab,
                                              spec.synthetic_distractor_rate,
                                              spec.synthetic_len_lo, spec.synthetic_len_hi, total);
        c.vocab = std::move(t.vocab);
        c.train = slice_dataset(t.data, 0, spec.synthetic_train);
        c.dev = slice_dataset(t.data, spec.synthetic_train,
                              spec.synthetic_train + spec.synthetic_dev);
        c.test = slice_dataset(t.data, spec.synthetic_train + spec.synthetic_dev, total);
        return c;
    }
    require(!spec.train_path.empty(), "config: train_path is required for corpus tasks");
    const auto raw_train = read_tsv_file(spec.train_path, spec.task);
    c.vocab = build_vocab(raw_train, cfg.vocab_min_freq);
    c.train = encode_dataset(raw_train, c.vocab, spec.task);
    require(!c.train.examples.empty(), "training corpus is empty after filtering");
    if (!spec.dev_path.empty()) {
        c.dev = encode_dataset(read_tsv_file(spec.dev_path, spec.task), c.vocab, spec.task);
        c.dev.n_classes = c.train.n_classes;
    }
    if (!spec.test_path.empty()) {
        c.test = encode_dataset(read_tsv_file(spec.test_path, spec.task), c.vocab, spec.task);
        c.test.n_classes = c.train.n_classes;
    }
    return c;
}

Matrix random_positive_stochastic(std::size_t n, Rng& rng) {
    Matrix a(n, n);
    for (std::size_t k = 0; k < a.size(); ++k) a.data()[k] = rng.uniform(0.05, 1.05);
    for (std::size_t j = 0; j < n; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += a(i, j);
        for (std::size_t i = 0; i < n; ++i) a(i, j) /= sum;
    }
    return a;
}

/// Random-scorer mode for bench-converge: one seeded scorer applied to random
/// hidden states, exactly the adjacency distribution an untrained model sees.
std::vector<AdjacencyMatrix> random_scorer_batch(std::size_t count, std::size_t n,
                                                 std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t d = 8;
    const ConnectivityScorer scorer = ConnectivityScorer::init(d, 8, rng);
    std::vector<AdjacencyMatrix> batch;
    batch.reserve(count);
    const std::vector<std::uint8_t> mask(n, 1);
    for (std::size_t i = 0; i < count; ++i) {
        Matrix h(d, n);
        for (std::size_t k = 0; k < h.size(); ++k) h.data()[k] = rng.normal(0.0, 1.5);
        batch.push_back(build_adjacency(scorer, h, mask));
    }
    return batch;
}

/// Adjacency matrices a trained eigen model induces over a dataset, one per
/// aggregation (per sentence for documents, both sides for pairs).
std::vector<AdjacencyMatrix> collect_adjacencies(const Model& model, const Dataset& ds,
                                                 std::size_t limit) {
    require(model.cfg.aggregator == AggregatorKind::eigen,
            "bench-converge over a corpus needs an eigen-aggregator checkpoint");
    std::vector<AdjacencyMatrix> out;
    for (const Example& ex : ds.examples) {
        if (out.size() >= limit) break;
        for (const auto& part : ex.parts) {
            const EmbedResult emb = embed(model.embedding, part);
            EncodeCache cache;
            encode(model.encoder, emb.x, emb.mask, &cache);
            out.push_back(cache.adj);
        }
    }
    require(!out.empty(), "no sequences to benchmark");
    return out;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot open for writing: " + path);
    f << content;
    require(f.good(), "failed writing " + path);
}

DataSpec spec_from_checkpoint(const RestoredModel& r, const LoadedCheckpoint& loaded) {
    (void)r;
    return data_spec_from_json(loaded.meta.at("config"));
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const TrainConfig& cfg, const DataSpec& spec, const std::string& out_dir,
              const std::string& resume_path) {
    cfg.validate();
    fs::create_directories(out_dir);
    const Corpus corpus = load_corpus(spec, cfg);

    std::unique_ptr<Model> model;
    std::unique_ptr<ModelGrads> grads;
    ParamStore ps;
    TrainState state;

    if (!resume_path.empty()) {
        RestoredModel r = restore_model(read_checkpoint_file(resume_path));
        require(r.vocab.size() == corpus.vocab.size(), "resume: vocabulary size changed");
        model = std::move(r.model);
        grads = std::move(r.grads);
        ps = std::move(r.ps);
        state = r.state;
    } else {
        Rng rng(cfg.seed);
        model = std::make_unique<Model>(Model::init(
            cfg.model_config(spec.task, corpus.vocab.size(), corpus.train.n_classes), rng));
        grads = std::make_unique<ModelGrads>(ModelGrads::zeros_like(*model));
        ps = build_param_store(*model, *grads);
        if (!spec.embeddings_path.empty()) {
            std::ifstream emb_in(spec.embeddings_path);
            require(emb_in.good(), "cannot open embeddings file: " + spec.embeddings_path);
            const auto lookup = [&](const std::string& tok) { return corpus.vocab.find(tok); };
            const std::size_t loaded =
                load_pretrained_embeddings(model->embedding, lookup, emb_in);
            std::fprintf(stderr, "loaded %zu pretrained embedding rows\n", loaded);
        }
    }

    const std::string log_path = out_dir + "/train_log.jsonl";
    std::ofstream log(log_path, std::ios::binary);
    require(log.good(), "cannot open log for writing: " + log_path);

    const TrainResult res =
        train_loop(*model, *grads, ps, corpus.train, corpus.dev, cfg, state,
                   [&](const EpochLog& l) { log << to_json_line(l) << "\n"; });
    log.close();

    const nlohmann::json spec_json = data_spec_to_json(spec);
    nlohmann::json meta = make_checkpoint_meta(cfg, spec.task, corpus.vocab,
                                               corpus.train.n_classes, res.final_state);
    for (const auto& [k, v] : spec_json.items()) meta["config"][k] = v;
    write_checkpoint_file(out_dir + "/checkpoint.eigc", ps, meta);

    res.best.restore(ps);
    nlohmann::json best_meta = make_checkpoint_meta(cfg, spec.task, corpus.vocab,
                                                    corpus.train.n_classes, res.best.state);
    for (const auto& [k, v] : spec_json.items()) best_meta["config"][k] = v;
    write_checkpoint_file(out_dir + "/checkpoint_best.eigc", ps, best_meta);

    nlohmann::json summary;
    summary["best_epoch"] = res.best_epoch;
    summary["best_dev_acc"] = res.best_dev_acc;
    summary["epochs_run"] = res.logs.size();
    summary["log"] = log_path;
    summary["checkpoint"] = out_dir + "/checkpoint.eigc";
    summary["checkpoint_best"] = out_dir + "/checkpoint_best.eigc";
    std::cout << summary.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& split) {
    const LoadedCheckpoint loaded = read_checkpoint_file(checkpoint_path);
    RestoredModel r = restore_model(loaded);
    Dataset ds;
    if (!data_path.empty()) {
        ds = encode_dataset(read_tsv_file(data_path, r.task), r.vocab, r.task);
        ds.n_classes = r.n_classes;
    } else {
        const DataSpec spec = spec_from_checkpoint(r, loaded);
        require(spec.task == TaskKind::synthetic,
                "eval: --data is required for non-synthetic checkpoints");
        Corpus corpus = load_corpus(spec, r.cfg);
        ds = split == "train" ? std::move(corpus.train)
                              : (split == "dev" ? std::move(corpus.dev) : std::move(corpus.test));
    }
    require(!ds.examples.empty(), "eval: dataset is empty");
    const EvalResult res = evaluate(*r.model, ds);
    nlohmann::json j;
    j["accuracy"] = res.accuracy;
    j["correct"] = res.correct;
    j["total"] = res.total;
    j["mean_loss"] = res.mean_loss;
    j["mean_power_steps"] = res.mean_power_steps;
    j["per_class_correct"] = res.per_class_correct;
    j["per_class_total"] = res.per_class_total;
    std::cout << j.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck(std::uint64_t seed, std::size_t max_n, std::size_t trials, bool theorem1,
                  std::ostream& os) {
    require(max_n >= 2, "gradcheck: --n must be at least 2");
    require(trials >= 1, "gradcheck: --trials must be at least 1");
    Rng rng(seed);
    PowerConfig tight;
    tight.epsilon = 1e-13;
    tight.max_converge_steps = 20000;

    double worst_fd = 0.0;        // analytic vs central differences, relative
    double worst_unroll = 0.0;    // analytic vs unrolled, absolute
    double worst_initgrad = 0.0;  // ||gamma^T J^200||

    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t n = 2 + rng.uniform_below(max_n - 1);
        const Matrix a = random_positive_stochastic(n, rng);
        Vector gamma(n);
        for (double& x : gamma) x = rng.normal();

        const EigenPair eig = power_method(a, tight);
        const Matrix analytic = analytic_grad_a(a, eig, gamma, 200);
        const auto loss = [&](const Matrix& m) {
            return dot(gamma, power_method(m, tight).alpha);
        };
        const Matrix fd = finite_diff_grad(loss, a, 1e-6);
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < fd.size(); ++k) {
            const double diff = analytic.data()[k] - fd.data()[k];
            num += diff * diff;
            den += fd.data()[k] * fd.data()[k];
        }
        worst_fd = std::max(worst_fd, std::sqrt(num / den));

        PowerConfig deflt;  // epsilon 1e-10, 200-step cap, 20 gradient steps
        const EigenPair eig_d = power_method(a, deflt);
        const Matrix truncated = analytic_grad_a(a, eig_d, gamma, deflt.grad_steps);
        const auto unrolled = unrolled_grad_a(a, deflt, gamma);
        double worst_entry = 0.0;
        for (std::size_t k = 0; k < truncated.size(); ++k)
            worst_entry = std::max(worst_entry,
                                   std::abs(truncated.data()[k] - unrolled.grad_a.data()[k]));
        worst_unroll = std::max(worst_unroll, worst_entry);

        PowerConfig full;
        full.epsilon = 1e-300;  // unreachable: run all 200 steps
        full.max_converge_steps = 200;
        const auto decay = grad_wrt_init_z(a, full, gamma);
        worst_initgrad = std::max(worst_initgrad, l2_norm(decay.grad_z));
        if (theorem1) {
            for (std::size_t k = 0; k < decay.norms.size(); ++k) {
                nlohmann::json line;
                line["trial"] = trial;
                line["step"] = k + 1;
                line["norm"] = decay.norms[k];
                os << line.dump() << "\n";
            }
        }
    }

    const bool fd_ok = worst_fd <= 1e-5;
    const bool unroll_ok = worst_unroll <= 1e-8;
    const bool init_ok = worst_initgrad <= 1e-8;
    os << "gradcheck: analytic vs finite differences  max rel err = " << worst_fd
       << (fd_ok ? "  [ok]" : "  [FAIL > 1e-5]") << "\n";
    os << "gradcheck: analytic vs unrolled (depth 20) max abs err = " << worst_unroll
       << (unroll_ok ? "  [ok]" : "  [FAIL > 1e-8]") << "\n";
    os << "gradcheck: ||dL/dz|| after 200 steps       max norm    = " << worst_initgrad
       << (init_ok ? "  [ok]" : "  [FAIL > 1e-8]") << "\n";
    return (fd_ok && unroll_ok && init_ok) ? 0 : 1;
}

// ---------------------------------------------------------------------------
// bench-converge
// ---------------------------------------------------------------------------

int cmd_bench_converge(const std::string& checkpoint_path, const std::string& data_path,
                       std::size_t random_count, std::size_t random_dim, std::uint64_t seed,
                       std::size_t limit, const std::string& out_dir) {
    fs::create_directories(out_dir);
    PowerConfig cfg;
    std::vector<AdjacencyMatrix> batch;
    if (!checkpoint_path.empty()) {
        const LoadedCheckpoint loaded = read_checkpoint_file(checkpoint_path);
        RestoredModel r = restore_model(loaded);
        cfg = r.cfg.power;
        Dataset ds;
        if (!data_path.empty()) {
            ds = encode_dataset(read_tsv_file(data_path, r.task), r.vocab, r.task);
        } else {
            const DataSpec spec = spec_from_checkpoint(r, loaded);
            require(spec.task == TaskKind::synthetic,
                    "bench-converge: --data is required for non-synthetic checkpoints");
            Corpus corpus = load_corpus(spec, r.cfg);
            ds = std::move(corpus.test);
        }
        batch = collect_adjacencies(*r.model, ds, limit);
    } else {
        require(random_count >= 1 && random_dim >= 1, "bench-converge: bad --random/--dim");
        batch = random_scorer_batch(random_count, random_dim, seed);
    }

    const ConvergeStats stats = converge_stats(batch, cfg);

    nlohmann::json hist;
    nlohmann::json bins = nlohmann::json::array();
    nlohmann::json counts = nlohmann::json::array();
    for (std::size_t s = 0; s < stats.counts.size(); ++s) {
        if (stats.counts[s] == 0) continue;
        bins.push_back(s);
        counts.push_back(stats.counts[s]);
    }
    hist["bins"] = std::move(bins);
    hist["counts"] = std::move(counts);
    hist["total"] = stats.total;
    hist["unconverged"] = stats.unconverged;
    hist["max_steps"] = cfg.max_converge_steps;
    hist["epsilon"] = cfg.epsilon;
    hist["median_steps"] = stats.median_steps();
    hist["p95_steps"] = stats.p95_steps();
    const std::string hist_path = out_dir + "/convergence_histogram.json";
    write_text_file(hist_path, hist.dump(2) + "\n");

    const double pct_unconverged =
        100.0 * static_cast<double>(stats.unconverged) / static_cast<double>(stats.total);
    std::cout << "sequences: " << stats.total << "\n"
              << "median steps: " << stats.median_steps() << "\n"
              << "p95 steps: " << stats.p95_steps() << "\n"
              << "unconverged at " << cfg.max_converge_steps << ": " << stats.unconverged << " ("
              << pct_unconverged << "%)\n"
              << "histogram: " << hist_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// export-graph
// ---------------------------------------------------------------------------

int cmd_export_graph(const std::string& checkpoint_path, const std::string& sentence,
                     const std::string& out_path) {
    RestoredModel r = restore_model(read_checkpoint_file(checkpoint_path));
    require(r.cfg.aggregator == AggregatorKind::eigen,
            "export-graph needs an eigen-aggregator checkpoint");
    std::istringstream iss(sentence);
    std::vector<std::string> tokens;
    std::string tok;
    while (iss >> tok) tokens.push_back(tok);
    require(!tokens.empty(), "export-graph: sentence is empty");

    std::vector<TokenId> ids;
    for (const auto& t : tokens) ids.push_back(r.vocab.id_of(t));

    const EmbedResult emb = embed(r.model->embedding, ids);
    EncodeCache cache;
    encode(r.model->encoder, emb.x, emb.mask, &cache);

    GraphExport g;
    g.tokens = tokens;
    g.weights = cache.weights.weights;
    g.adjacency = cache.adj.a;
    g.lambda = cache.eig.lambda;
    g.steps_taken = cache.eig.steps_taken;
    g.converged = cache.eig.converged;
    write_text_file(out_path, to_json(g).dump(2) + "\n");
    std::cout << "graph: " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"eigen-centrality attention for sequence aggregation"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    std::optional<std::uint64_t> seed_flag;
    std::optional<std::string> aggregator_flag, task_flag;

    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed_flag, "override the config seed");
    app.add_option("--aggregator", aggregator_flag, "eigen|self_attn|max|avg");
    app.add_option("--task", task_flag, "sentence|document|pair|synthetic");
    app.add_option("--out", out_dir, "output directory")->capture_default_str();

    auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoint + log");
    std::string resume_path;
    train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_checkpoint, eval_data, eval_split = "test";
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "TSV corpus to evaluate");
    eval_cmd->add_option("--split", eval_split, "synthetic split: train|dev|test");

    auto* grad_cmd = app.add_subcommand("gradcheck", "verify the backward passes");
    std::size_t grad_n = 6, grad_trials = 20;
    bool theorem1 = false;
    grad_cmd->add_option("--n", grad_n, "max matrix size")->capture_default_str();
    grad_cmd->add_option("--trials", grad_trials, "random instances")->capture_default_str();
    grad_cmd->add_flag("--theorem1", theorem1, "emit per-step init-gradient decay JSON lines");

    auto* bench_cmd = app.add_subcommand("bench-converge", "power-method convergence histogram");
    std::string bench_checkpoint, bench_data;
    std::size_t bench_random = 1000, bench_dim = 10, bench_limit = 2000;
    bench_cmd->add_option("--checkpoint", bench_checkpoint, "trained eigen checkpoint");
    bench_cmd->add_option("--data", bench_data, "TSV corpus (with --checkpoint)");
    bench_cmd->add_option("--random", bench_random, "random-matrix count (without --checkpoint)")
        ->capture_default_str();
    bench_cmd->add_option("--dim", bench_dim, "random-matrix size")->capture_default_str();
    bench_cmd->add_option("--limit", bench_limit, "max sequences to draw from the corpus")
        ->capture_default_str();

    auto* export_cmd = app.add_subcommand("export-graph", "write the latent graph of a sentence");
    std::string export_checkpoint, export_sentence, export_out;
    export_cmd->add_option("--checkpoint", export_checkpoint, "checkpoint file")->required();
    export_cmd->add_option("--sentence", export_sentence, "whitespace-tokenized input")
        ->required();
    export_cmd->add_option("--file", export_out, "output JSON path (default <out>/graph.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        nlohmann::json config_json = nlohmann::json::object();
        if (!config_path.empty()) config_json = load_json_file(config_path);
        TrainConfig cfg = train_config_from_json(config_json);
        DataSpec spec = data_spec_from_json(config_json);
        if (seed_flag) cfg.seed = *seed_flag;
        if (aggregator_flag) cfg.aggregator = aggregator_from_name(*aggregator_flag);
        if (task_flag) spec.task = task_from_name(*task_flag);

        if (train_cmd->parsed()) return cmd_train(cfg, spec, out_dir, resume_path);
        if (eval_cmd->parsed()) return cmd_eval(eval_checkpoint, eval_data, eval_split);
        if (grad_cmd->parsed())
            return cmd_gradcheck(seed_flag.value_or(7), grad_n, grad_trials, theorem1,
                                 std::cout);
        if (bench_cmd->parsed())
            return cmd_bench_converge(bench_checkpoint, bench_data, bench_random, bench_dim,
                                      seed_flag.value_or(7), bench_limit, out_dir);
        if (export_cmd->parsed()) {
            const std::string out_path =
                export_out.empty() ? out_dir + "/graph.json" : export_out;
            if (export_out.empty()) fs::create_directories(out_dir);
            return cmd_export_graph(export_checkpoint, export_sentence, out_path);
        }
        return 2;
    } catch (const NumericalDivergence& e) {
        std::cerr << "numerical divergence: " << e.what() << "\n";
        return 3;
    } catch (const ContractViolation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
