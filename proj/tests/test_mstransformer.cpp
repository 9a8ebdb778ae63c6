#include <catch2/catch_amalgamated.hpp>

#include "melodist/mstransformer.hpp"

using namespace melodist;

namespace {

MsModelConfig tiny_config(int n_q = 2, int cond_dim = 0) {
    MsModelConfig c;
    c.global_layers = 1;
    c.global_width = 16;
    c.global_heads = 2;
    c.global_ffn = 32;
    c.local_layers = 1;
    c.local_width = 16;
    c.local_heads = 2;
    c.local_ffn = 32;
    c.n_q = n_q;
    c.max_frames = 64;
    c.cond_dim = cond_dim;
    return c;
}

VocabLayout tiny_layout(int n_q = 2) {
    VocabLayout L;
    L.n_q = n_q;
    return L;
}

AcousticTokenGrid random_grid(int T, int n_q, Rng& rng) {
    AcousticTokenGrid g;
    g.n_q_used = n_q;
    for (int t = 0; t < T; ++t) {
        std::vector<int> row;
        for (int k = 0; k < n_q; ++k) row.push_back(int(rng() % kCodebookSize));
        g.tokens.push_back(row);
    }
    return g;
}

UnifiedSequence pack(const VocabLayout& L, const ConditionSequence& cond,
                     const AcousticTokenGrid& g) {
    Eigen::MatrixXd rows;
    auto patches = expand_condition(cond, L.n_q, &rows);
    return pack_sequence(patches, g, L, std::move(rows));
}

UnifiedSequence prefix_only(const VocabLayout& L, const ConditionSequence& cond) {
    AcousticTokenGrid empty;
    empty.n_q_used = L.n_q;
    auto u = pack(L, cond, empty);
    u.patches.resize(size_t(u.boundary));  // keep BOS + condition + SEP
    u.loss_mask.resize(size_t(u.boundary));
    return u;
}

}  // namespace

TEST_CASE("parameter count matches closed form") {
    auto cfg = tiny_config();
    auto L = tiny_layout();
    auto m = make_mstransformer(cfg, L, 1);
    int V = L.vocab_size();
    int dl = cfg.local_width, dg = cfg.global_width;
    auto block_params = [](int d, int ffn) {
        // attention qkv + out projections, two layernorms, two ffn linears
        return 4 * (d * d + d) + 2 * (2 * d) + (d * ffn + ffn) + (ffn * d + d);
    };
    std::int64_t expect = 0;
    expect += std::int64_t(V) * dl;                  // token table
    expect += dl;                                    // start embedding
    expect += std::int64_t(cfg.n_q) * dl;            // cell index embeddings
    expect += std::int64_t(cfg.max_frames) * dg;     // global positions
    expect += std::int64_t(cfg.n_q) * dl * dg + dg;  // patch projection
    expect += std::int64_t(cfg.global_layers) * block_params(dg, cfg.global_ffn) + 2 * dg;
    expect += std::int64_t(dg) * dl + dl;            // global-to-local
    expect += std::int64_t(cfg.local_layers) * block_params(dl, cfg.local_ffn) + 2 * dl;
    expect += std::int64_t(dl) * V + V;              // output head
    CHECK(m.params.count() == expect);

    auto paper = MsModelConfig::paper_preset();
    CHECK(paper.global_layers == 20);
    CHECK(paper.global_width == 1152);
    CHECK(paper.local_layers == 6);
    CHECK(paper.global_width % paper.global_heads == 0);
    CHECK(paper.local_width % paper.local_heads == 0);
}

TEST_CASE("teacher-forced logits are causal at both levels") {
    auto cfg = tiny_config(2);
    auto L = tiny_layout(2);
    auto m = make_mstransformer(cfg, L, 7);
    Rng rng = make_rng(11);
    auto grid = random_grid(6, 2, rng);
    ConditionSequence cond = {CondElem::discrete(L.phoneme_offset + 3)};
    auto u = pack(L, cond, grid);

    auto base = ms_forward(m, u).logits->value;
    int n_q = cfg.n_q;
    for (int trial = 0; trial < 100; ++trial) {
        auto u2 = u;
        // perturb one target cell; logits for cells at or before it (patch
        // order first, cell order within patch) see only earlier inputs and
        // must be bitwise unchanged
        int p = u.boundary + int(rng() % std::uint64_t(grid.frames()));
        int k = int(rng() % std::uint64_t(n_q));
        int old_id = u2.patches[size_t(p)].cells[size_t(k)].id;
        int new_id = L.audio_offset + int(rng() % kCodebookSize);
        if (new_id == old_id)
            new_id = L.audio_offset + (new_id - L.audio_offset + 1) % kCodebookSize;
        u2.patches[size_t(p)].cells[size_t(k)].id = new_id;
        auto pert = ms_forward(m, u2).logits->value;
        // logits row for patch q cell j is (q-1)*n_q + j
        int changed_row = (p - 1) * n_q + k;
        for (int r = 0; r <= changed_row; ++r) REQUIRE(base.row(r) == pert.row(r));
        if (changed_row + 1 < int(base.rows()))
            REQUIRE(base.row(changed_row + 1) != pert.row(changed_row + 1));
    }
}

TEST_CASE("cross entropy analytic values") {
    auto L = tiny_layout(2);
    int V = L.vocab_size();

    SECTION("uniform logits give ln V") {
        ag::Var logits = ag::constant(Eigen::MatrixXd::Zero(4, V));
        auto loss = ag::cross_entropy_rows(logits, {1, 2, 3, 4}, {1, 1, 1, 1});
        CHECK(loss->value(0, 0) == Catch::Approx(std::log(double(V))).epsilon(1e-12));
    }
    SECTION("confident logits give near zero") {
        Eigen::MatrixXd lg = Eigen::MatrixXd::Zero(2, V);
        lg(0, 5) = 50.0;
        lg(1, 9) = 50.0;
        auto loss = ag::cross_entropy_rows(ag::constant(lg), {5, 9}, {1, 1});
        CHECK(loss->value(0, 0) < 1e-12);
    }
}

TEST_CASE("gradient check against finite differences") {
    auto cfg = tiny_config(2, 4);
    auto L = tiny_layout(2);
    auto m = make_mstransformer(cfg, L, 3);
    Rng rng = make_rng(5);
    auto grid = random_grid(4, 2, rng);
    Eigen::RowVectorXd cv(4);
    cv << 0.3, -0.2, 0.5, 0.1;
    ConditionSequence cond = {CondElem::discrete(L.phoneme_offset + 2),
                              CondElem::continuous(cv)};
    auto u = pack(L, cond, grid);

    auto rep = grad_check(m, u, 60, 1e-5, 17);
    REQUIRE(rep.entries.size() >= 50);
    for (const auto& e : rep.entries) {
        INFO(e.param << "[" << e.row << "," << e.col << "] analytic=" << e.analytic
                     << " numeric=" << e.numeric);
        CHECK(e.rel_error < 1e-4);
    }
    CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("training memorizes a small set and greedy sampling reproduces it") {
    auto cfg = tiny_config(2);
    cfg.global_width = 32;
    cfg.local_width = 32;
    cfg.global_ffn = 64;
    cfg.local_ffn = 64;
    auto L = tiny_layout(2);
    auto m = make_mstransformer(cfg, L, 21);
    Rng rng = make_rng(99);

    std::vector<AcousticTokenGrid> grids;
    std::vector<ConditionSequence> conds;
    std::vector<UnifiedSequence> seqs;
    for (int i = 0; i < 4; ++i) {
        grids.push_back(random_grid(5, 2, rng));
        conds.push_back({CondElem::discrete(L.phoneme_offset + i)});
        seqs.push_back(pack(L, conds.back(), grids.back()));
    }
    auto batch = pad_batch(seqs, L);

    MsTrainer trainer(m, {.lr = 3e-3});
    double loss = 0.0;
    for (int s = 0; s < 600; ++s) {
        loss = trainer.train_step(batch);
        if (loss < 0.02) break;
    }
    CHECK(loss < 0.1);
    CHECK(teacher_forced_accuracy(m, seqs) == 1.0);

    for (int i = 0; i < 4; ++i) {
        SamplingParams sp;
        sp.top_k = 1;
        auto out = generate(m, prefix_only(L, conds[size_t(i)]), 32, sp);
        REQUIRE(out.frames() == grids[size_t(i)].frames());
        CHECK(out == grids[size_t(i)]);
    }
}

TEST_CASE("generation respects frame bounds") {
    auto cfg = tiny_config(2);
    auto L = tiny_layout(2);
    auto m = make_mstransformer(cfg, L, 2);
    auto prefix = prefix_only(L, {});

    SECTION("max_frames caps length") {
        SamplingParams sp;
        sp.seed = 4;
        auto out = generate(m, prefix, 6, sp);
        CHECK(out.frames() <= 6);
        CHECK(out.n_q_used == L.n_q);
        out.validate();
    }
    SECTION("force_stop yields exactly that many frames") {
        SamplingParams sp;
        sp.seed = 4;
        sp.force_stop_frames = 5;
        auto out = generate(m, prefix, 20, sp);
        CHECK(out.frames() == 5);
    }
    SECTION("min_frames suppresses early stop") {
        SamplingParams sp;
        sp.seed = 4;
        sp.min_frames = 3;
        auto out = generate(m, prefix, 10, sp);
        CHECK(out.frames() >= 3);
    }
    SECTION("same seed gives identical output") {
        SamplingParams sp;
        sp.seed = 123;
        auto a = generate(m, prefix, 8, sp);
        auto b = generate(m, prefix, 8, sp);
        CHECK(a == b);
    }
    SECTION("zero max_frames gives empty grid") {
        auto out = generate(m, prefix, 0, {});
        CHECK(out.frames() == 0);
    }
}

TEST_CASE("batch padding excludes pad patches from the loss") {
    auto L = tiny_layout(2);
    Rng rng = make_rng(1);
    auto u1 = pack(L, {}, random_grid(3, 2, rng));
    auto u2 = pack(L, {}, random_grid(6, 2, rng));
    auto batch = pad_batch({u1, u2}, L);
    REQUIRE(batch[0].length() == batch[1].length());
    int masked = 0;
    for (const auto& row : batch[0].loss_mask)
        for (bool b : row) masked += b ? 1 : 0;
    // only the 3 real target patches plus EOS carry loss
    CHECK(masked == 4 * 2);
    for (std::size_t p = size_t(u1.length()); p < batch[0].patches.size(); ++p)
        for (const auto& c : batch[0].patches[p].cells) CHECK(c.id == L.pad_id());
}

TEST_CASE("train_step validates its batch") {
    auto cfg = tiny_config(2);
    auto L = tiny_layout(2);
    auto m = make_mstransformer(cfg, L, 2);
    MsTrainer trainer(m);
    CHECK_THROWS_AS(trainer.train_step({}), ValidationError);

    UnifiedSequence u;
    u.n_q = L.n_q;
    u.patches.push_back(seq_detail::special_patch(L.bos_id(), L.n_q));
    u.patches.push_back(seq_detail::special_patch(L.eos_id(), L.n_q));
    u.loss_mask.assign(2, std::vector<bool>(size_t(L.n_q), false));
    CHECK_THROWS_AS(trainer.train_step({u}), ValidationError);
}

TEST_CASE("checkpoint round trip preserves behavior") {
    auto cfg = tiny_config(2, 4);
    auto L = tiny_layout(2);
    auto m = make_mstransformer(cfg, L, 8);
    Rng rng = make_rng(2);
    auto grid = random_grid(4, 2, rng);
    auto u = pack(L, {CondElem::discrete(L.phoneme_offset + 1)}, grid);
    auto before = ms_forward(m, u).logits->value;

    std::string path = "ms_ckpt_test.mckp";
    save_mstransformer(path, m, "svs");
    std::string role;
    auto m2 = load_mstransformer(path, &role);
    CHECK(role == "svs");
    auto after = ms_forward(m2, u).logits->value;
    CHECK(before == after);
    std::remove(path.c_str());
}
