#include <catch2/catch_amalgamated.hpp>

#include "eigencent/model.hpp"
#include "eigencent/train.hpp"
#include "test_helpers.hpp"

using namespace eigencent;

namespace {

/// Tiny shapes + long-converged power config so finite differences are clean.
ModelConfig toy_config(TaskKind task, AggregatorKind agg, FusionKind fusion) {
    ModelConfig cfg;
    cfg.task = task;
    cfg.aggregator = agg;
    cfg.fusion = fusion;
    cfg.vocab_size = 12;
    cfg.n_classes = 3;
    cfg.embedding_dim = 4;
    cfg.fusion_hidden = 3;
    cfg.connectivity_hidden = 3;
    cfg.head_hidden = 5;
    cfg.dropout_rate = 0.0;
    cfg.power.epsilon = 1e-13;
    cfg.power.max_converge_steps = 20000;
    cfg.power.grad_steps = 200;  // deep series so truncation never dominates
    return cfg;
}

double batch_loss(const Model& model, const std::vector<Example>& batch) {
    double acc = 0.0;
    for (const Example& ex : batch) {
        const ExampleRun run = run_example(model, ex, false, nullptr, nullptr);
        acc += run.loss;
    }
    return acc / static_cast<double>(batch.size());
}

/// Central-difference check of every registered parameter against the manual
/// backward; returns the worst relative L2 error per named array.
double max_param_grad_error(Model& model, const std::vector<Example>& batch) {
    ModelGrads grads = ModelGrads::zeros_like(model);
    ParamStore ps = build_param_store(model, grads);
    ps.zero_grads();
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const Example& ex : batch) run_example(model, ex, false, nullptr, &grads, inv);

    double worst = 0.0;
    const double h = 1e-5;
    for (auto& e : ps.entries) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < e.size; ++i) {
            const double orig = e.param[i];
            e.param[i] = orig + h;
            const double fp = batch_loss(model, batch);
            e.param[i] = orig - h;
            const double fm = batch_loss(model, batch);
            e.param[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            num += (e.grad[i] - fd) * (e.grad[i] - fd);
            den += fd * fd;
        }
        if (den < 1e-16) {
            worst = std::max(worst, std::sqrt(num));  // absolute when fd is ~zero
        } else {
            worst = std::max(worst, std::sqrt(num / den));
        }
    }
    return worst;
}

Example sentence_example(std::initializer_list<TokenId> ids, int label) {
    Example ex;
    ex.parts.push_back(std::vector<TokenId>(ids));
    ex.label = label;
    return ex;
}

}  // namespace

TEST_CASE("embed") {
    Rng rng(401);
    EmbeddingTable table = EmbeddingTable::init(6, 3, rng);
    SECTION("pad id embeds to a masked zero column") {
        const EmbedResult r = embed(table, {table.pad_id});
        CHECK(r.mask[0] == 0);
        for (std::size_t k = 0; k < 3; ++k) CHECK(r.x(k, 0) == 0.0);
    }
    SECTION("repeated ids give identical columns") {
        const EmbedResult r = embed(table, {3, 3});
        for (std::size_t k = 0; k < 3; ++k) CHECK(r.x(k, 0) == r.x(k, 1));
    }
    SECTION("backward scatters into exactly one row") {
        const EmbedResult r = embed(table, {4});
        Matrix grad(6, 3);
        Matrix dx(3, 1);
        dx(1, 0) = 2.0;
        embed_backward(table, {4}, r.mask, dx, grad);
        for (std::size_t row = 0; row < 6; ++row)
            for (std::size_t k = 0; k < 3; ++k)
                CHECK(grad(row, k) == ((row == 4 && k == 1) ? 2.0 : 0.0));
    }
    SECTION("out-of-range id throws") {
        CHECK_THROWS_AS(embed(table, {17}), ContractViolation);
    }
    SECTION("pad row is zero after init") {
        for (std::size_t k = 0; k < 3; ++k) CHECK(table.vectors(table.pad_id, k) == 0.0);
    }
}

TEST_CASE("fuse") {
    Rng rng(402);
    SECTION("zero weights and zero input give zero states") {
        FusionEncoder enc;
        enc.kind = FusionKind::bidirectional_elman;
        enc.fwd = ElmanCell::zeros(2, 3);
        enc.bwd = ElmanCell::zeros(2, 3);
        const HiddenStates hs = fuse(enc, Matrix(2, 4), std::vector<std::uint8_t>(4, 1));
        CHECK(max_abs(hs.h) == 0.0);
    }
    SECTION("identity projection with W = I copies the input") {
        FusionEncoder enc;
        enc.kind = FusionKind::identity_projection;
        enc.proj = Matrix::identity(3);
        Matrix x(3, 2);
        for (std::size_t k = 0; k < x.size(); ++k) x.data()[k] = rng.normal();
        const HiddenStates hs = fuse(enc, x, std::vector<std::uint8_t>(2, 1));
        CHECK(testutil::max_abs_diff(hs.h, x) == 0.0);
    }
    SECTION("masked columns stay zero and do not affect neighbors") {
        FusionEncoder enc = FusionEncoder::bidirectional_elman_init(2, 3, rng);
        Matrix x(2, 3);
        for (std::size_t k = 0; k < x.size(); ++k) x.data()[k] = rng.normal();
        Matrix x_nopad(2, 2);
        for (std::size_t k = 0; k < 2; ++k) {
            x_nopad(k, 0) = x(k, 0);
            x_nopad(k, 1) = x(k, 2);
        }
        const HiddenStates with_pad = fuse(enc, x, {1, 0, 1});
        const HiddenStates without = fuse(enc, x_nopad, {1, 1});
        for (std::size_t k = 0; k < 6; ++k) {
            CHECK(with_pad.h(k, 1) == 0.0);
            CHECK(with_pad.h(k, 0) == Catch::Approx(without.h(k, 0)).margin(1e-15));
            CHECK(with_pad.h(k, 2) == Catch::Approx(without.h(k, 1)).margin(1e-15));
        }
    }
    SECTION("BPTT gradient matches finite differences") {
        FusionEncoder enc = FusionEncoder::bidirectional_elman_init(2, 2, rng);
        Matrix x(2, 3);
        for (std::size_t k = 0; k < x.size(); ++k) x.data()[k] = rng.normal();
        const std::vector<std::uint8_t> mask(3, 1);
        Matrix cot(4, 3);
        for (std::size_t k = 0; k < cot.size(); ++k) cot.data()[k] = rng.normal();

        FuseCache cache;
        fuse(enc, x, mask, &cache);
        FusionGrads grads = FusionGrads::zeros_like(enc);
        const Matrix dx = fuse_backward(enc, cache, cot, grads);

        const auto loss_given = [&](const FusionEncoder& e, const Matrix& xin) {
            const HiddenStates hs = fuse(e, xin, mask);
            double acc = 0.0;
            for (std::size_t k = 0; k < hs.h.size(); ++k) acc += hs.h.data()[k] * cot.data()[k];
            return acc;
        };
        const Matrix fd_x =
            finite_diff_grad([&](const Matrix& xin) { return loss_given(enc, xin); }, x, 1e-6);
        CHECK(testutil::rel_frobenius_err(dx, fd_x) <= 1e-5);

        const Matrix fd_wf = finite_diff_grad(
            [&](const Matrix& w) {
                FusionEncoder e = enc;
                e.fwd.w = w;
                return loss_given(e, x);
            },
            enc.fwd.w, 1e-6);
        CHECK(testutil::rel_frobenius_err(grads.fwd.w, fd_wf) <= 1e-5);

        const Matrix fd_ub = finite_diff_grad(
            [&](const Matrix& u) {
                FusionEncoder e = enc;
                e.bwd.u = u;
                return loss_given(e, x);
            },
            enc.bwd.u, 1e-6);
        CHECK(testutil::rel_frobenius_err(grads.bwd.u, fd_ub) <= 1e-5);
    }
}

TEST_CASE("classify_flat basics") {
    Rng rng(403);
    Model model = Model::init(toy_config(TaskKind::sentence, AggregatorKind::eigen,
                                         FusionKind::bidirectional_elman),
                              rng);
    SECTION("probabilities sum to one") {
        const Vector p = classify_flat(model, {2, 3, 4});
        double sum = 0.0;
        for (double x : p) sum += x;
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
    SECTION("zero-weight head gives uniform probabilities") {
        Model m = model;
        m.head.w1.fill(0.0);
        m.head.w2.fill(0.0);
        std::fill(m.head.b1.begin(), m.head.b1.end(), 0.0);
        std::fill(m.head.b2.begin(), m.head.b2.end(), 0.0);
        const Vector p = classify_flat(m, {2, 3, 4});
        for (double x : p) CHECK(x == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
    }
    SECTION("single-token sentence flows through the degenerate path") {
        const Vector p = classify_flat(model, {5});
        CHECK(p.size() == 3);
        CHECK(all_finite(p));
    }
    SECTION("empty and all-pad inputs throw") {
        CHECK_THROWS_AS(classify_flat(model, {}), EmptySequenceError);
        CHECK_THROWS_AS(classify_flat(model, {model.embedding.pad_id, model.embedding.pad_id}),
                        EmptySequenceError);
    }
    SECTION("two forwards are bit-identical with dropout disabled") {
        const Vector p1 = classify_flat(model, {2, 3, 4, 5});
        const Vector p2 = classify_flat(model, {2, 3, 4, 5});
        for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] == p2[i]);
    }
    SECTION("appending pad tokens never changes the output") {
        const Vector base = classify_flat(model, {2, 3, 4});
        const Vector padded = classify_flat(model, {2, 3, 4, 0, 0, 0});
        for (std::size_t i = 0; i < base.size(); ++i) CHECK(padded[i] == base[i]);
        // interior padding is excised the same way
        const Vector interior = classify_flat(model, {2, 0, 3, 0, 4});
        for (std::size_t i = 0; i < base.size(); ++i) CHECK(interior[i] == base[i]);
    }
}

TEST_CASE("end-to-end gradients match finite differences") {
    const std::vector<Example> batch = {sentence_example({2, 3, 4, 5}, 0),
                                        sentence_example({6, 7}, 2),
                                        sentence_example({8}, 1)};
    SECTION("flat, eigen aggregator, recurrent fusion") {
        Rng rng(404);
        Model model = Model::init(toy_config(TaskKind::sentence, AggregatorKind::eigen,
                                             FusionKind::bidirectional_elman),
                                  rng);
        CHECK(max_param_grad_error(model, batch) <= 1e-4);
    }
    SECTION("flat, eigen aggregator, identity projection") {
        Rng rng(405);
        Model model = Model::init(toy_config(TaskKind::sentence, AggregatorKind::eigen,
                                             FusionKind::identity_projection),
                                  rng);
        CHECK(max_param_grad_error(model, batch) <= 1e-4);
    }
    SECTION("flat, self-attention aggregator") {
        Rng rng(406);
        Model model = Model::init(toy_config(TaskKind::sentence, AggregatorKind::self_attn,
                                             FusionKind::bidirectional_elman),
                                  rng);
        CHECK(max_param_grad_error(model, batch) <= 1e-4);
    }
    SECTION("flat, max pooling (tie-free inputs)") {
        Rng rng(407);
        Model model = Model::init(toy_config(TaskKind::sentence, AggregatorKind::max,
                                             FusionKind::bidirectional_elman),
                                  rng);
        CHECK(max_param_grad_error(model, batch) <= 1e-4);
    }
    SECTION("flat, average pooling") {
        Rng rng(408);
        Model model = Model::init(toy_config(TaskKind::sentence, AggregatorKind::avg,
                                             FusionKind::bidirectional_elman),
                                  rng);
        CHECK(max_param_grad_error(model, batch) <= 1e-4);
    }
    SECTION("hierarchical, eigen aggregator") {
        Rng rng(409);
        Model model = Model::init(toy_config(TaskKind::document, AggregatorKind::eigen,
                                             FusionKind::bidirectional_elman),
                                  rng);
        Example doc;
        doc.parts = {{2, 3, 4}, {5, 6}};
        doc.label = 1;
        Example doc2;
        doc2.parts = {{7, 8, 9}};
        doc2.label = 2;
        CHECK(max_param_grad_error(model, {doc, doc2}) <= 1e-4);
    }
    SECTION("pair, eigen aggregator") {
        Rng rng(410);
        Model model = Model::init(toy_config(TaskKind::pair, AggregatorKind::eigen,
                                             FusionKind::bidirectional_elman),
                                  rng);
        Example pair;
        pair.parts = {{2, 3, 4}, {5, 6}};
        pair.label = 0;
        Example pair2;
        pair2.parts = {{7, 8}, {9, 10, 11}};
        pair2.label = 2;
        CHECK(max_param_grad_error(model, {pair, pair2}) <= 1e-4);
    }
}

TEST_CASE("classify_hierarchical structure") {
    Rng rng(411);
    Model model = Model::init(toy_config(TaskKind::document, AggregatorKind::eigen,
                                         FusionKind::identity_projection),
                              rng);
    SECTION("empty document throws") {
        CHECK_THROWS_AS(classify_hierarchical(model, {}), EmptySequenceError);
    }
    SECTION("sentence permutation is irrelevant under identity outer fusion") {
        const Vector p1 = classify_hierarchical(model, {{2, 3}, {4, 5, 6}, {7}});
        const Vector p2 = classify_hierarchical(model, {{7}, {2, 3}, {4, 5, 6}});
        for (std::size_t i = 0; i < p1.size(); ++i)
            CHECK(p1[i] == Catch::Approx(p2[i]).margin(1e-12));
    }
    SECTION("one-sentence document runs the nested n=1 path") {
        const Vector p = classify_hierarchical(model, {{2, 3, 4}});
        CHECK(all_finite(p));
        double sum = 0.0;
        for (double x : p) sum += x;
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("nli_combine") {
    SECTION("identical inputs zero the difference block") {
        const Vector r = nli_combine({1.0, 2.0}, {1.0, 2.0});
        const Vector expected = {1.0, 2.0, 1.0, 2.0, 0.0, 0.0, 1.0, 4.0};
        for (std::size_t i = 0; i < expected.size(); ++i) CHECK(r[i] == expected[i]);
    }
    SECTION("hand concatenation") {
        const Vector r = nli_combine({1.0, 0.0}, {0.0, 1.0});
        const Vector expected = {1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0};
        for (std::size_t i = 0; i < expected.size(); ++i) CHECK(r[i] == expected[i]);
    }
    SECTION("length mismatch throws") {
        CHECK_THROWS_AS(nli_combine({1.0}, {1.0, 2.0}), ContractViolation);
    }
    SECTION("abs backward uses subgradient zero at zero") {
        Vector drp, drh;
        // rp == rh in the first coordinate: the |.| block contributes nothing
        nli_combine_backward({1.0, 3.0}, {1.0, 2.0}, Vector(8, 1.0), drp, drh);
        CHECK(drp[0] == Catch::Approx(1.0 + 0.0 + 1.0));   // direct + 0 + rh*1
        CHECK(drp[1] == Catch::Approx(1.0 + 1.0 + 2.0));   // direct + sign + rh*1
        CHECK(drh[0] == Catch::Approx(1.0 - 0.0 + 1.0));
        CHECK(drh[1] == Catch::Approx(1.0 - 1.0 + 3.0));
    }
}

TEST_CASE("cross_entropy") {
    SECTION("uniform two-class loss is ln 2") {
        CHECK(cross_entropy({0.5, 0.5}, 0) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SECTION("probability one gives zero loss") {
        CHECK(cross_entropy({0.0, 1.0}, 1) == 0.0);
    }
    SECTION("zero gold probability clamps at 1e-12") {
        CHECK(cross_entropy({0.0, 1.0}, 0) == Catch::Approx(-std::log(1e-12)));
    }
    SECTION("gradient at logits is softmax minus one-hot") {
        Rng rng(412);
        Vector logits(4);
        for (double& x : logits) x = rng.normal();
        const Vector probs = softmax(logits);
        const Vector grad = cross_entropy_grad_logits(probs, 2);
        const auto f = [&](const Vector& z) { return cross_entropy(softmax(z), 2); };
        const Vector fd = finite_diff_grad_vec(f, logits, 1e-6);
        for (std::size_t i = 0; i < 4; ++i) CHECK(grad[i] == Catch::Approx(fd[i]).margin(1e-8));
    }
}

TEST_CASE("row-only scorer makes eigen and self-attention models agree") {
    Rng rng(413);
    ModelConfig cfg = toy_config(TaskKind::sentence, AggregatorKind::eigen,
                                 FusionKind::bidirectional_elman);
    cfg.connectivity_hidden = 1;
    Model eigen_model = Model::init(cfg, rng);

    ModelConfig cfg2 = cfg;
    cfg2.aggregator = AggregatorKind::self_attn;
    Rng rng2(414);
    Model attn_model = Model::init(cfg2, rng2);

    // share every non-aggregator parameter
    attn_model.embedding = eigen_model.embedding;
    attn_model.encoder.fusion = eigen_model.encoder.fusion;
    attn_model.head = eigen_model.head;

    // constrain the scorer to a near-linear row-only function matching the
    // self-attention logits: score(i,j) = (1/eps) tanh(eps * q . h_i)
    const double eps = 1e-6;
    const std::size_t dh = eigen_model.encoder.fusion.output_dim();
    eigen_model.encoder.scorer.w1 = Matrix(1, 2 * dh);
    for (std::size_t k = 0; k < dh; ++k)
        eigen_model.encoder.scorer.w1(0, k) = eps * attn_model.encoder.attn.q[k];
    eigen_model.encoder.scorer.b1 = {0.0};
    eigen_model.encoder.scorer.w2 = {1.0 / eps};
    eigen_model.encoder.scorer.b2 = 0.0;

    const std::vector<TokenId> tokens = {2, 3, 4, 5, 6};
    const Vector pe = classify_flat(eigen_model, tokens);
    const Vector pa = classify_flat(attn_model, tokens);
    for (std::size_t i = 0; i < pe.size(); ++i)
        CHECK(pe[i] == Catch::Approx(pa[i]).margin(1e-8));
}

TEST_CASE("pretrained embedding loader") {
    Rng rng(415);
    EmbeddingTable table = EmbeddingTable::init(5, 3, rng);
    const Matrix before = table.vectors;
    std::istringstream file("apple 1.0 2.0 3.0\nmissing 9 9 9\nbanana -1 0.5 0\n");
    const auto lookup = [](const std::string& tok) -> std::optional<TokenId> {
        if (tok == "apple") return TokenId{2};
        if (tok == "banana") return TokenId{4};
        return std::nullopt;
    };
    const std::size_t loaded = load_pretrained_embeddings(table, lookup, file);
    CHECK(loaded == 2);
    CHECK(table.vectors(2, 0) == 1.0);
    CHECK(table.vectors(2, 2) == 3.0);
    CHECK(table.vectors(4, 0) == -1.0);
    // untouched rows keep their seeded values
    CHECK(table.vectors(3, 0) == before(3, 0));
}
