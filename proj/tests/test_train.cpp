#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "eigencent/checkpoint.hpp"
#include "eigencent/data.hpp"
#include "eigencent/train.hpp"
#include "test_helpers.hpp"

using namespace eigencent;

namespace {

TrainConfig tiny_train_config() {
    TrainConfig cfg;
    cfg.embedding_size = 8;
    cfg.lstm_hidden_unit = 6;
    cfg.connectivity_hidden_units = 4;
    cfg.head_hidden = 8;
    cfg.initial_learning_rate = 3e-3;
    cfg.learning_rate_decay = 0.95;
    cfg.learning_rate_decay_steps = 100;
    cfg.initial_batch_size = 8;
    cfg.batch_size_low_bound = 2;
    cfg.dropout_rate = 0.1;
    cfg.epochs = 2;
    cfg.seed = 5;
    cfg.fusion = FusionKind::identity_projection;
    return cfg;
}

struct TinyRun {
    SyntheticTask task;
    Dataset train, dev;
    Model model;
    ModelGrads grads;
    ParamStore ps;
    TrainConfig cfg;

    explicit TinyRun(AggregatorKind agg = AggregatorKind::eigen, std::uint64_t seed = 5)
        : task(make_synthetic_task(11, 3, 20, 0.5, 2, 6, 80)),
          train(slice_dataset(task.data, 0, 60)),
          dev(slice_dataset(task.data, 60, 80)),
          model(Model{}),
          cfg(tiny_train_config()) {
        cfg.aggregator = agg;
        cfg.seed = seed;
        Rng rng(cfg.seed);
        model = Model::init(cfg.model_config(task.data.task, task.vocab.size(),
                                             task.data.n_classes),
                            rng);
        grads = ModelGrads::zeros_like(model);
        ps = build_param_store(model, grads);
    }
};

}  // namespace

TEST_CASE("default configs mirror the hyper-parameter table") {
    const TrainConfig cls = TrainConfig::classification_defaults();
    CHECK(cls.embedding_size == 300);
    CHECK(cls.lstm_hidden_unit == 300);
    CHECK(cls.connectivity_hidden_units == 50);
    CHECK(cls.regularization_rate == 1e-6);
    CHECK(cls.initial_learning_rate == 1e-4);
    CHECK(cls.learning_rate_decay == 0.9);
    CHECK(cls.learning_rate_decay_steps == 2000);
    CHECK(cls.initial_batch_size == 64);
    CHECK(cls.batch_size_low_bound == 32);
    CHECK(cls.dropout_rate == 0.6);

    const TrainConfig nli = TrainConfig::nli_defaults();
    CHECK(nli.connectivity_hidden_units == 30);
    CHECK(nli.regularization_rate == 1e-20);
    CHECK(nli.learning_rate_decay == 0.95);
    CHECK(nli.learning_rate_decay_steps == 20000);
    CHECK(nli.initial_batch_size == 128);
    CHECK(nli.batch_size_low_bound == 128);
    CHECK(nli.dropout_rate == 0.2);

    const PowerConfig power;
    CHECK(power.epsilon == 1e-10);
    CHECK(power.max_converge_steps == 200);
    CHECK(power.grad_steps == 20);

    CHECK(default_connectivity_hidden(TaskKind::sentence) == 50);
    CHECK(default_connectivity_hidden(TaskKind::pair) == 30);
}

TEST_CASE("adam_step") {
    // one scalar parameter registered by hand
    double param = 0.0, grad = 0.0;
    ParamStore ps;
    ps.add("w", &param, &grad, 1);
    TrainConfig cfg;
    cfg.initial_learning_rate = 0.1;
    cfg.learning_rate_decay = 1.0;
    cfg.regularization_rate = 0.0;

    SECTION("zero gradient is a fixed point") {
        param = 1.25;
        grad = 0.0;
        adam_step(ps, cfg, 1);
        CHECK(param == 1.25);
    }
    SECTION("first bias-corrected step moves by about -lr") {
        param = 0.0;
        grad = 1.0;
        adam_step(ps, cfg, 1);
        // mhat = 1, vhat = 1 => update = -lr / (1 + eps)
        CHECK(param == Catch::Approx(-0.1).margin(1e-8));
    }
    SECTION("decay multiplies the rate at step == decay_steps") {
        cfg.learning_rate_decay = 0.9;
        cfg.learning_rate_decay_steps = 50;
        CHECK(cfg.effective_lr(50) == Catch::Approx(0.1 * 0.9).epsilon(1e-12));
        CHECK(cfg.effective_lr(100) == Catch::Approx(0.1 * 0.81).epsilon(1e-12));
    }
    SECTION("weight decay enters as an L2 gradient term") {
        cfg.regularization_rate = 0.5;
        param = 2.0;
        grad = 0.0;
        adam_step(ps, cfg, 1);
        // effective gradient 1.0 => same as the unit-gradient case
        CHECK(param == Catch::Approx(2.0 - 0.1).margin(1e-8));
    }
}

TEST_CASE("make_synthetic_task") {
    SECTION("degenerate config gives pure keyword examples") {
        const SyntheticTask t = make_synthetic_task(3, 2, 10, 0.0, 1, 1, 50);
        for (const Example& ex : t.data.examples) {
            REQUIRE(ex.parts[0].size() == 1);
            const std::string& tok = t.vocab.tokens[ex.parts[0][0]];
            CHECK(tok == "kw" + std::to_string(ex.label));
        }
    }
    SECTION("label distribution is uniform within 2 percent") {
        const SyntheticTask t = make_synthetic_task(4, 4, 50, 0.8, 5, 15, 10000);
        std::vector<std::size_t> counts(4, 0);
        for (const Example& ex : t.data.examples) counts[ex.label] += 1;
        for (std::size_t c = 0; c < 4; ++c) {
            const double frac = static_cast<double>(counts[c]) / 10000.0;
            CHECK(std::abs(frac - 0.25) <= 0.02);
        }
    }
    SECTION("same seed reproduces the dataset exactly") {
        const SyntheticTask a = make_synthetic_task(9, 3, 30, 0.7, 4, 9, 200);
        const SyntheticTask b = make_synthetic_task(9, 3, 30, 0.7, 4, 9, 200);
        REQUIRE(a.data.examples.size() == b.data.examples.size());
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            CHECK(a.data.examples[i].label == b.data.examples[i].label);
            CHECK(a.data.examples[i].parts == b.data.examples[i].parts);
        }
    }
    SECTION("every example contains its keyword") {
        const SyntheticTask t = make_synthetic_task(12, 4, 40, 0.95, 3, 8, 500);
        for (const Example& ex : t.data.examples) {
            const TokenId kw = t.vocab.id_of("kw" + std::to_string(ex.label));
            bool found = false;
            for (TokenId id : ex.parts[0]) found = found || id == kw;
            REQUIRE(found);
        }
    }
}

TEST_CASE("tsv ingestion") {
    SECTION("sentence format") {
        std::istringstream in("1\thello world\n0\tfoo\n");
        const auto raws = read_tsv(in, TaskKind::sentence);
        REQUIRE(raws.size() == 2);
        CHECK(raws[0].label == 1);
        CHECK(raws[0].parts[0] == std::vector<std::string>{"hello", "world"});
        const Vocab v = build_vocab(raws, 1);
        const Dataset ds = encode_dataset(raws, v, TaskKind::sentence);
        CHECK(ds.n_classes == 2);
        CHECK(ds.examples[0].parts[0].size() == 2);
    }
    SECTION("document format with sentence separators") {
        std::istringstream in("2\ta b ||| c d e ||| f\n");
        const auto raws = read_tsv(in, TaskKind::document);
        REQUIRE(raws.size() == 1);
        REQUIRE(raws[0].parts.size() == 3);
        CHECK(raws[0].parts[1] == std::vector<std::string>{"c", "d", "e"});
    }
    SECTION("pair format") {
        std::istringstream in("0\ta man sleeps\ta person rests\n");
        const auto raws = read_tsv(in, TaskKind::pair);
        REQUIRE(raws.size() == 1);
        REQUIRE(raws[0].parts.size() == 2);
        CHECK(raws[0].parts[1][2] == "rests");
    }
    SECTION("frequency threshold maps rare tokens to unk") {
        std::istringstream in("0\ta a b\n1\ta c\n");
        const auto raws = read_tsv(in, TaskKind::sentence);
        const Vocab v = build_vocab(raws, 2);
        CHECK(v.find("a").has_value());
        CHECK_FALSE(v.find("b").has_value());
        const Dataset ds = encode_dataset(raws, v, TaskKind::sentence);
        CHECK(ds.examples[0].parts[0][2] == v.unk);
    }
    SECTION("missing tab is rejected") {
        std::istringstream in("0 no tabs here\n");
        CHECK_THROWS_AS(read_tsv(in, TaskKind::sentence), ContractViolation);
    }
}

TEST_CASE("evaluate") {
    TinyRun run;
    SECTION("constant-prediction model scores the majority rate on balanced data") {
        // zero head weights => uniform probabilities => argmax picks class 0
        run.model.head.w1.fill(0.0);
        run.model.head.w2.fill(0.0);
        std::fill(run.model.head.b1.begin(), run.model.head.b1.end(), 0.0);
        std::fill(run.model.head.b2.begin(), run.model.head.b2.end(), 0.0);
        Dataset balanced = run.train;
        balanced.examples.resize(30);  // labels cycle 0,1,2 under the generator
        const EvalResult res = evaluate(run.model, balanced);
        std::size_t zeros = 0;
        for (const auto& ex : balanced.examples) zeros += ex.label == 0 ? 1 : 0;
        CHECK(res.correct == zeros);
    }
    SECTION("a hand-built perfect model scores exactly 1.0") {
        // keyword embeddings are one-hot, distractors zero; max pooling turns
        // the sequence into a presence indicator the head reads off directly
        const SyntheticTask t = make_synthetic_task(21, 2, 12, 0.8, 3, 9, 60);
        ModelConfig mc;
        mc.task = TaskKind::sentence;
        mc.aggregator = AggregatorKind::max;
        mc.fusion = FusionKind::identity_projection;
        mc.vocab_size = t.vocab.size();
        mc.n_classes = 2;
        mc.embedding_dim = 2;
        mc.fusion_hidden = 2;
        mc.connectivity_hidden = 2;
        mc.head_hidden = 2;
        Rng rng(22);
        Model perfect = Model::init(mc, rng);
        perfect.embedding.vectors.fill(0.0);
        perfect.embedding.vectors(t.vocab.id_of("kw0"), 0) = 1.0;
        perfect.embedding.vectors(t.vocab.id_of("kw1"), 1) = 1.0;
        perfect.encoder.fusion.proj = Matrix::identity(2);
        perfect.head.w1 = Matrix::identity(2);
        perfect.head.w1 *= 10.0;
        std::fill(perfect.head.b1.begin(), perfect.head.b1.end(), 0.0);
        perfect.head.w2 = Matrix::from_rows({{10.0, -10.0}, {-10.0, 10.0}});
        std::fill(perfect.head.b2.begin(), perfect.head.b2.end(), 0.0);
        CHECK(evaluate(perfect, t.data).accuracy == 1.0);
    }
    SECTION("accuracy is invariant to example order") {
        const EvalResult a = evaluate(run.model, run.dev);
        Dataset reversed = run.dev;
        std::reverse(reversed.examples.begin(), reversed.examples.end());
        const EvalResult b = evaluate(run.model, reversed);
        CHECK(a.accuracy == b.accuracy);
        CHECK(a.mean_loss == Catch::Approx(b.mean_loss).margin(1e-12));
    }
    SECTION("evaluation does not mutate parameters") {
        const double before = run.ps.param_checksum();
        evaluate(run.model, run.dev);
        CHECK(run.ps.param_checksum() == before);
    }
    SECTION("per-class counts sum to the totals") {
        const EvalResult res = evaluate(run.model, run.dev);
        std::size_t total = 0, correct = 0;
        for (std::size_t c = 0; c < res.per_class_total.size(); ++c) {
            total += res.per_class_total[c];
            correct += res.per_class_correct[c];
        }
        CHECK(total == res.total);
        CHECK(correct == res.correct);
    }
}

TEST_CASE("train_loop") {
    SECTION("zero epochs returns the initial state") {
        TinyRun run;
        run.cfg.epochs = 0;
        const double before = run.ps.param_checksum();
        const TrainResult res = train_loop(run.model, run.grads, run.ps, run.train, run.dev,
                                           run.cfg, TrainState{});
        CHECK(res.logs.empty());
        CHECK(run.ps.param_checksum() == before);
        CHECK_FALSE(res.best.params.empty());
    }
    SECTION("one epoch reduces the training loss") {
        TinyRun run;
        run.cfg.epochs = 1;
        const EvalResult init = evaluate(run.model, run.train);
        const TrainResult res = train_loop(run.model, run.grads, run.ps, run.train, run.dev,
                                           run.cfg, TrainState{});
        REQUIRE(res.logs.size() == 1);
        const EvalResult after = evaluate(run.model, run.train);
        CHECK(after.mean_loss <= init.mean_loss);
    }
    SECTION("the pad embedding row stays frozen at zero through training") {
        TinyRun run;
        run.cfg.epochs = 2;
        run.cfg.regularization_rate = 1e-4;
        train_loop(run.model, run.grads, run.ps, run.train, run.dev, run.cfg, TrainState{});
        const auto pad = run.model.embedding.pad_id;
        for (std::size_t k = 0; k < run.model.embedding.dim(); ++k)
            REQUIRE(run.model.embedding.vectors(pad, k) == 0.0);
    }
    SECTION("same seed gives byte-identical logs") {
        TinyRun a, b;
        std::string log_a, log_b;
        train_loop(a.model, a.grads, a.ps, a.train, a.dev, a.cfg, TrainState{},
                   [&](const EpochLog& l) { log_a += to_json_line(l) + "\n"; });
        train_loop(b.model, b.grads, b.ps, b.train, b.dev, b.cfg, TrainState{},
                   [&](const EpochLog& l) { log_b += to_json_line(l) + "\n"; });
        CHECK(log_a == log_b);
        CHECK(a.ps.param_checksum() == b.ps.param_checksum());
    }
    SECTION("resume from mid-training matches the uninterrupted run bit for bit") {
        TinyRun full;
        full.cfg.epochs = 4;
        std::string log_full;
        train_loop(full.model, full.grads, full.ps, full.train, full.dev, full.cfg,
                   TrainState{}, [&](const EpochLog& l) { log_full += to_json_line(l) + "\n"; });

        TinyRun split;
        split.cfg.epochs = 2;
        std::string log_split;
        const TrainResult first =
            train_loop(split.model, split.grads, split.ps, split.train, split.dev, split.cfg,
                       TrainState{}, [&](const EpochLog& l) { log_split += to_json_line(l) + "\n"; });
        split.cfg.epochs = 4;
        train_loop(split.model, split.grads, split.ps, split.train, split.dev, split.cfg,
                   first.final_state,
                   [&](const EpochLog& l) { log_split += to_json_line(l) + "\n"; });
        CHECK(log_full == log_split);
        CHECK(full.ps.param_checksum() == split.ps.param_checksum());
        for (std::size_t e = 0; e < full.ps.entries.size(); ++e)
            for (std::size_t i = 0; i < full.ps.entries[e].size; ++i)
                REQUIRE(full.ps.entries[e].param[i] == split.ps.entries[e].param[i]);
    }
    SECTION("best-dev snapshot restores cleanly") {
        TinyRun run;
        run.cfg.epochs = 3;
        const TrainResult res = train_loop(run.model, run.grads, run.ps, run.train, run.dev,
                                           run.cfg, TrainState{});
        res.best.restore(run.ps);
        const EvalResult dev_res = evaluate(run.model, run.dev);
        CHECK(dev_res.accuracy == Catch::Approx(res.best_dev_acc).margin(1e-12));
    }
    SECTION("oversized batches split down to the low bound but not past it") {
        TinyRun run;
        run.cfg.epochs = 1;
        run.cfg.initial_batch_size = 16;
        run.cfg.batch_size_low_bound = 4;
        run.cfg.batch_token_budget = 8;  // forces splitting
        const TrainResult res = train_loop(run.model, run.grads, run.ps, run.train, run.dev,
                                           run.cfg, TrainState{});
        CHECK(res.logs.size() == 1);  // smoke: split batching still trains
    }
}

TEST_CASE("checkpoint round-trip") {
    TinyRun run;
    run.cfg.epochs = 1;
    const TrainResult res = train_loop(run.model, run.grads, run.ps, run.train, run.dev,
                                       run.cfg, TrainState{});

    nlohmann::json meta;
    meta["step"] = res.final_state.step;
    meta["epoch"] = res.final_state.epoch;
    meta["rng_state"] = res.final_state.rng_state;
    meta["vocab"] = run.task.vocab.tokens;

    const std::string bytes = serialize_checkpoint(run.ps, meta);
    const LoadedCheckpoint loaded = parse_checkpoint(bytes);
    CHECK(loaded.meta.at("step").get<std::size_t>() == res.final_state.step);
    CHECK(loaded.meta.at("vocab").get<std::vector<std::string>>() == run.task.vocab.tokens);

    // fresh model, same shapes; loading restores bit-identical forwards
    TinyRun fresh(AggregatorKind::eigen, 77);
    loaded.apply_to(fresh.ps);
    const Vector p1 = classify_flat(run.model, {2, 3, 4});
    const Vector p2 = classify_flat(fresh.model, {2, 3, 4});
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] == p2[i]);

    // moments survive the round-trip exactly
    for (std::size_t e = 0; e < run.ps.entries.size(); ++e)
        for (std::size_t i = 0; i < run.ps.entries[e].size; ++i) {
            REQUIRE(fresh.ps.entries[e].m[i] == run.ps.entries[e].m[i]);
            REQUIRE(fresh.ps.entries[e].v[i] == run.ps.entries[e].v[i]);
        }

    SECTION("corrupted magic is rejected") {
        std::string bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_AS(parse_checkpoint(bad), ContractViolation);
    }
}

TEST_CASE("divergence aborts with a diagnostic") {
    TinyRun run;
    run.cfg.epochs = 1;
    run.cfg.grad_clip_norm = 0.0;               // no safety net
    run.cfg.initial_learning_rate = 1e280;      // force a blow-up
    run.cfg.regularization_rate = 1e280;
    CHECK_THROWS_AS(train_loop(run.model, run.grads, run.ps, run.train, run.dev, run.cfg,
                               TrainState{}),
                    NumericalDivergence);
}
