#include <catch2/catch_amalgamated.hpp>

#include "melodist/seqlayout.hpp"

using namespace melodist;

namespace {

AcousticTokenGrid random_grid(int frames, int n_q, Rng& rng) {
    AcousticTokenGrid g;
    g.n_q_used = n_q;
    for (int t = 0; t < frames; ++t) {
        std::vector<int> row;
        for (int k = 0; k < n_q; ++k) row.push_back(int(rng() % kCodebookSize));
        g.tokens.push_back(std::move(row));
    }
    return g;
}

}  // namespace

TEST_CASE("expand_condition repeats discrete tokens per patch") {
    ConditionSequence cond = {CondElem::discrete(5), CondElem::discrete(9)};
    auto patches = expand_condition(cond, 3);
    REQUIRE(patches.size() == 2);
    for (const auto& c : patches[0].cells) REQUIRE(c.id == 5);
    for (const auto& c : patches[1].cells) REQUIRE(c.id == 9);

    REQUIRE(expand_condition({}, 3).empty());
}

TEST_CASE("expand_condition repeats continuous rows and collects them") {
    ConditionSequence cond;
    for (int i = 0; i < 4; ++i) {
        Eigen::RowVectorXd r(2);
        r << double(i), double(-i);
        cond.push_back(CondElem::continuous(r));
    }
    Eigen::MatrixXd rows;
    auto patches = expand_condition(cond, 3, &rows);
    REQUIRE(patches.size() == 4);
    REQUIRE(rows.rows() == 4);
    for (int i = 0; i < 4; ++i) {
        for (const auto& c : patches[size_t(i)].cells) {
            REQUIRE(c.continuous);
            REQUIRE(c.cont_row == i);
        }
        REQUIRE(rows(i, 0) == double(i));
    }
}

TEST_CASE("pack_sequence layout, counts and loss mask") {
    VocabLayout layout;
    auto rng = make_rng(1);
    AcousticTokenGrid target = random_grid(3, 3, rng);
    ConditionSequence cond = {CondElem::discrete(layout.phoneme_offset),
                              CondElem::discrete(layout.phoneme_offset + 1)};
    UnifiedSequence u = pack_sequence(expand_condition(cond, 3), target, layout);

    REQUIRE(u.length() == 8);  // BOS + 2 cond + SEP + 3 targets + EOS
    REQUIRE(u.boundary == 4);
    int masked_patches = 0;
    for (std::size_t p = 0; p < u.loss_mask.size(); ++p)
        if (u.loss_mask[p][0]) ++masked_patches;
    REQUIRE(masked_patches == 4);  // 3 targets + EOS
    for (int p = 0; p < u.boundary; ++p)
        for (bool b : u.loss_mask[size_t(p)]) REQUIRE_FALSE(b);
    REQUIRE(u.patches[0].cells[0].id == layout.bos_id());
    REQUIRE(u.patches[3].cells[0].id == layout.sep_id());
    REQUIRE(u.patches[7].cells[0].id == layout.eos_id());
}

TEST_CASE("empty target masks only the EOS patch") {
    VocabLayout layout;
    AcousticTokenGrid empty;
    empty.n_q_used = 3;
    UnifiedSequence u = pack_sequence({}, empty, layout);
    REQUIRE(u.length() == 3);
    REQUIRE(u.loss_mask[2][0]);
    REQUIRE_FALSE(u.loss_mask[0][0]);
    REQUIRE_FALSE(u.loss_mask[1][0]);
    REQUIRE(unpack_targets(u, layout).frames() == 0);
}

TEST_CASE("pack/unpack is a bijection on the target region") {
    VocabLayout layout;
    auto rng = make_rng(2);
    for (int trial = 0; trial < 25; ++trial) {
        int frames = int(rng() % 12);
        int n_cond = int(rng() % 5);
        AcousticTokenGrid g = random_grid(frames, 3, rng);
        ConditionSequence cond;
        for (int i = 0; i < n_cond; ++i)
            cond.push_back(CondElem::discrete(layout.phoneme_offset + int(rng() % 40)));
        UnifiedSequence u = pack_sequence(expand_condition(cond, 3), g, layout);
        REQUIRE(u.length() == n_cond + frames + 3);
        AcousticTokenGrid back = unpack_targets(u, layout);
        REQUIRE(back == g);
    }
}

TEST_CASE("single frame round trip") {
    VocabLayout layout;
    AcousticTokenGrid g;
    g.n_q_used = 3;
    g.tokens = {{5, 9, 2}};
    UnifiedSequence u = pack_sequence({}, g, layout);
    REQUIRE(unpack_targets(u, layout).tokens == g.tokens);
}

TEST_CASE("n_q mismatch is rejected") {
    VocabLayout layout;
    auto rng = make_rng(3);
    AcousticTokenGrid wrong = random_grid(2, 2, rng);
    REQUIRE_THROWS_AS(pack_sequence({}, wrong, layout), ValidationError);
}

TEST_CASE("malformed boundary is rejected") {
    VocabLayout layout;
    auto rng = make_rng(4);
    UnifiedSequence u = pack_sequence({}, random_grid(2, 3, rng), layout);
    u.boundary = 0;
    REQUIRE_THROWS_AS(unpack_targets(u, layout), ValidationError);
}

TEST_CASE("vocab ranges are disjoint and specials sit on top") {
    VocabLayout layout;
    REQUIRE(layout.audio_offset + layout.audio_size == layout.phoneme_offset);
    REQUIRE(layout.phoneme_offset + layout.phoneme_size == layout.duration_offset);
    REQUIRE(layout.duration_offset + layout.duration_size == layout.pitch_offset);
    REQUIRE(layout.pitch_offset + layout.pitch_size == layout.special_offset());
    REQUIRE(layout.eos_id() == layout.vocab_size() - 1);
}
