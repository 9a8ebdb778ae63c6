#include <catch2/catch_amalgamated.hpp>

#include "melodist/tritower.hpp"

using namespace melodist;

namespace {

TriTowerConfig tiny_config() {
    TriTowerConfig c;
    c.width = 32;
    c.embed_dim = 16;
    c.layers = 1;
    c.heads = 2;
    c.ffn = 64;
    c.max_patches = 60;
    return c;
}

TriTower tiny_model(std::uint64_t seed = 1) {
    TextVocab v = TextVocab::build({"mellow piano ballad", "energetic rock with drums",
                                    "dreamy synth pop", "sentimental jazz guitar"});
    return make_tritower(tiny_config(), v, seed);
}

Eigen::MatrixXd random_spec(int F, int T, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::MatrixXd s(F, T);
    for (int i = 0; i < F; ++i)
        for (int j = 0; j < T; ++j) s(i, j) = nd(rng);
    return s;
}

// Scalar brute-force symmetric InfoNCE on raw row matrices.
double nce_oracle(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double tau) {
    int N = int(X.rows());
    double total = 0.0;
    for (int dir = 0; dir < 2; ++dir) {
        const Eigen::MatrixXd& A = dir == 0 ? X : Y;
        const Eigen::MatrixXd& B = dir == 0 ? Y : X;
        double acc = 0.0;
        for (int i = 0; i < N; ++i) {
            double denom = 0.0;
            for (int j = 0; j < N; ++j) denom += std::exp(A.row(i).dot(B.row(j)) / tau);
            acc += -std::log(std::exp(A.row(i).dot(B.row(i)) / tau) / denom);
        }
        total += acc / N;
    }
    return total / 2.0;
}

Eigen::MatrixXd random_unit_rows(int N, int d, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::MatrixXd Z(N, d);
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < d; ++j) Z(i, j) = nd(rng);
        Z.row(i).normalize();
    }
    return Z;
}

}  // namespace

TEST_CASE("text embeddings are unit-norm, deterministic, and capped at 77 chars") {
    auto m = tiny_model();
    auto z = encode_text(m, "mellow piano ballad");
    CHECK(std::abs(z.norm() - 1.0) < 1e-6);
    CHECK(z == encode_text(m, "mellow piano ballad"));
    CHECK(int(z.size()) == m.cfg.embed_dim);

    std::string long_caption(200, 'x');
    for (std::size_t i = 0; i < long_caption.size(); i += 7) long_caption[i] = ' ';
    CHECK(encode_text(m, long_caption) == encode_text(m, long_caption.substr(0, 77)));

    CHECK_THROWS_AS(encode_text(m, ""), ValidationError);
    CHECK_THROWS_AS(encode_text(m, " ,.! "), ValidationError);
}

TEST_CASE("audio embeddings: unit norm, patch counting, distinct towers") {
    auto m = tiny_model();
    Rng rng = make_rng(3);
    Eigen::MatrixXd spec = random_spec(80, 48, rng);

    auto zv = encode_audio(m, spec, AudioModality::Vocal);
    auto za = encode_audio(m, spec, AudioModality::Accompaniment);
    CHECK(std::abs(zv.norm() - 1.0) < 1e-6);
    CHECK(std::abs(za.norm() - 1.0) < 1e-6);
    CHECK(zv != za);  // independent parameters

    // 80x48 -> 5x3 = 15 patches
    CHECK(tri_detail::patchify(spec, 16).rows() == 15);
    // padding: 80x50 -> 5x4 patches
    CHECK(tri_detail::patchify(random_spec(80, 50, rng), 16).rows() == 20);
    // patch content is row-major pixels
    Eigen::MatrixXd small = Eigen::MatrixXd::Zero(16, 16);
    small(1, 2) = 7.0;
    auto p = tri_detail::patchify(small, 16);
    CHECK(p(0, 1 * 16 + 2) == 7.0);

    CHECK_THROWS_AS(encode_audio(m, Eigen::MatrixXd(), AudioModality::Vocal), ValidationError);
}

TEST_CASE("pairwise loss matches a scalar brute-force oracle") {
    Rng rng = make_rng(9);
    for (int N : {1, 2, 3, 4}) {
        auto X = random_unit_rows(N, 16, rng);
        auto Y = random_unit_rows(N, 16, rng);
        auto loss = info_nce_pair(ag::constant(X), ag::constant(Y), 0.2);
        if (N == 1)
            CHECK(loss->value(0, 0) == Catch::Approx(0.0).margin(1e-12));
        CHECK(loss->value(0, 0) == Catch::Approx(nce_oracle(X, Y, 0.2)).margin(1e-6));
        CHECK(loss->value(0, 0) >= -1e-12);
    }
    // identical batches beat the uniform-similarity bound ln N
    auto Z = random_unit_rows(5, 16, rng);
    auto self_loss = info_nce_pair(ag::constant(Z), ag::constant(Z), 0.2);
    CHECK(self_loss->value(0, 0) < std::log(5.0));
    CHECK_THROWS_AS(info_nce_pair(ag::constant(Eigen::MatrixXd(0, 4)),
                                  ag::constant(Eigen::MatrixXd(0, 4)), 0.2),
                    ValidationError);
}

TEST_CASE("triple loss decomposes, permutes, and survives rotations") {
    Rng rng = make_rng(13);
    int N = 4, d = 16;
    auto P = random_unit_rows(N, d, rng);
    auto V = random_unit_rows(N, d, rng);
    auto A = random_unit_rows(N, d, rng);
    double tau = 0.2;

    double total = tritower_loss(ag::constant(P), ag::constant(V), ag::constant(A), tau)->value(0, 0);
    double sum = info_nce_pair(ag::constant(P), ag::constant(V), tau)->value(0, 0) +
                 info_nce_pair(ag::constant(P), ag::constant(A), tau)->value(0, 0) +
                 info_nce_pair(ag::constant(V), ag::constant(A), tau)->value(0, 0);
    CHECK(total == sum);

    // shared batch permutation
    std::vector<int> perm = {2, 0, 3, 1};
    Eigen::MatrixXd Pp(N, d), Vp(N, d), Ap(N, d);
    for (int i = 0; i < N; ++i) {
        Pp.row(i) = P.row(perm[size_t(i)]);
        Vp.row(i) = V.row(perm[size_t(i)]);
        Ap.row(i) = A.row(perm[size_t(i)]);
    }
    double permuted =
        tritower_loss(ag::constant(Pp), ag::constant(Vp), ag::constant(Ap), tau)->value(0, 0);
    CHECK(permuted == Catch::Approx(total).margin(1e-10));

    // orthogonal transform applied to both sides of one pair
    Eigen::MatrixXd G = Eigen::MatrixXd::Random(d, d);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
    Eigen::MatrixXd Q = qr.householderQ();
    double before = info_nce_pair(ag::constant(P), ag::constant(V), tau)->value(0, 0);
    double after = info_nce_pair(ag::constant((P * Q).eval()), ag::constant((V * Q).eval()), tau)
                       ->value(0, 0);
    CHECK(after == Catch::Approx(before).margin(1e-9));

    CHECK_THROWS_AS(tritower_loss(ag::constant(P), ag::constant(V.topRows(2)), ag::constant(A), tau),
                    ValidationError);
}

TEST_CASE("normalization op gradients are exact") {
    Rng rng = make_rng(4);
    Eigen::MatrixXd X = Eigen::MatrixXd::Random(3, 5);
    auto x = ag::param(X);
    auto y = ag::l2_normalize_rows(x);
    Eigen::MatrixXd W = Eigen::MatrixXd::Random(5, 2);
    auto loss = ag::mean_all(ag::square(ag::matmul(y, ag::constant(W))));
    ag::backward(loss);
    double base = loss->value(0, 0);
    double h = 1e-6;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 5; ++j) {
            double orig = x->value(i, j);
            x->value(i, j) = orig + h;
            auto up = ag::mean_all(
                ag::square(ag::matmul(ag::l2_normalize_rows(x), ag::constant(W))));
            x->value(i, j) = orig - h;
            auto dn = ag::mean_all(
                ag::square(ag::matmul(ag::l2_normalize_rows(x), ag::constant(W))));
            x->value(i, j) = orig;
            double fd = (up->value(0, 0) - dn->value(0, 0)) / (2 * h);
            double an = x->grad(i, j);
            if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;
            CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}) < 1e-4);
        }
    (void)base;
    (void)rng;
}

TEST_CASE("text augmentation contract") {
    Rng rng = make_rng(7);
    CHECK(augment_text("a song", {}, 0.5, rng) == "a song");
    CHECK(augment_text("a song", {"rock"}, 0.0, rng) == "a song");
    Rng r1 = make_rng(42), r2 = make_rng(42);
    std::vector<std::string> tags = {"rock", "drums", "energetic"};
    CHECK(augment_text("a song", tags, 1.0, r1) == augment_text("a song", tags, 1.0, r2));
    // p = 1 always appends at least one tag
    Rng r3 = make_rng(5);
    auto out = augment_text("a song", tags, 1.0, r3);
    CHECK(out.size() > std::string("a song").size());
    CHECK(out.rfind("a song", 0) == 0);
}

TEST_CASE("spectrogram augmentation contract") {
    Rng rng = make_rng(8);
    Eigen::MatrixXd spec = random_spec(80, 64, rng);
    double mean = spec.mean();
    Rng r1 = make_rng(3);
    auto out = augment_spectrogram(spec, r1);
    REQUIRE(out.rows() == spec.rows());
    REQUIRE(out.cols() == spec.cols());
    // every changed cell equals the pre-mask global mean
    for (int i = 0; i < spec.rows(); ++i)
        for (int j = 0; j < spec.cols(); ++j)
            if (out(i, j) != spec(i, j)) REQUIRE(out(i, j) == mean);

    SpecAugParams off;
    off.max_freq_bands = 0;
    off.max_time_bands = 0;
    Rng r2 = make_rng(3);
    CHECK(augment_spectrogram(spec, r2, off) == spec);

    Rng r3 = make_rng(11), r4 = make_rng(11);
    CHECK(augment_spectrogram(spec, r3) == augment_spectrogram(spec, r4));
}

TEST_CASE("training separates matched from mismatched pairs") {
    TextVocab v = TextVocab::build({"bright energetic drums", "soft mellow piano",
                                    "dreamy airy synth", "warm jazz guitar"});
    auto m = make_tritower(tiny_config(), v, 5);
    Rng rng = make_rng(20);

    // four distinct styles with correlated vocal/accomp spectrograms
    std::vector<std::string> caps = {"bright energetic drums", "soft mellow piano",
                                     "dreamy airy synth", "warm jazz guitar"};
    std::vector<Triplet> corpus;
    for (int s = 0; s < 4; ++s) {
        Eigen::MatrixXd base = random_spec(80, 48, rng) * 0.2;
        for (int r = 0; r < 3; ++r) {
            Triplet t;
            t.id = "s" + std::to_string(s) + "_" + std::to_string(r);
            t.caption = caps[size_t(s)];
            t.tags = {"tag" + std::to_string(s)};
            t.vocal_spec = base + random_spec(80, 48, rng) * 0.05;
            t.accomp_spec = base + random_spec(80, 48, rng) * 0.05;
            corpus.push_back(std::move(t));
        }
    }

    TriTrainOptions opt;
    opt.steps = 120;
    opt.batch_size = 4;
    opt.crop_frames = 48;
    opt.seed = 30;
    auto report = train_tritower(m, corpus, opt);
    CHECK_FALSE(report.degenerate_corpus);
    CHECK(report.final_loss < report.initial_loss);

    double matched = 0.0, mismatched = 0.0;
    int nm = 0, nx = 0;
    std::vector<Eigen::RowVectorXd> zp, za;
    for (const auto& t : corpus) {
        zp.push_back(encode_text(m, t.caption));
        za.push_back(encode_audio(m, t.accomp_spec, AudioModality::Accompaniment));
    }
    for (std::size_t i = 0; i < corpus.size(); ++i)
        for (std::size_t j = 0; j < corpus.size(); ++j) {
            bool same = corpus[i].caption == corpus[j].caption;
            (same ? matched : mismatched) += zp[i].dot(za[j]);
            (same ? nm : nx) += 1;
        }
    CHECK(matched / nm > mismatched / nx);
}

TEST_CASE("frozen encoders are deterministic and checkpoints round trip") {
    auto m = tiny_model(2);
    Rng rng = make_rng(6);
    Eigen::MatrixXd spec = random_spec(80, 32, rng);
    m.params.freeze();
    auto z1 = encode_audio(m, spec, AudioModality::Vocal);
    auto z2 = encode_audio(m, spec, AudioModality::Vocal);
    CHECK(z1 == z2);

    std::string path = "tritower_ckpt_test.mckp";
    save_tritower(path, m);
    auto m2 = load_tritower(path);
    CHECK(encode_text(m2, "dreamy synth pop") == encode_text(m, "dreamy synth pop"));
    CHECK(encode_audio(m2, spec, AudioModality::Accompaniment) ==
          encode_audio(m, spec, AudioModality::Accompaniment));
    auto tok1 = encode_text_tokens(m, "dreamy synth pop");
    auto tok2 = encode_text_tokens(m2, "dreamy synth pop");
    CHECK(tok1 == tok2);
    CHECK(tok1.cols() == m.cfg.width);
    std::remove(path.c_str());
}

TEST_CASE("training input validation and degenerate corpus") {
    auto m = tiny_model(4);
    CHECK_THROWS_AS(train_tritower(m, {}), ValidationError);

    Rng rng = make_rng(2);
    Triplet t;
    t.id = "x";
    t.caption = "mellow piano ballad";
    t.vocal_spec = random_spec(80, 32, rng);
    t.accomp_spec = random_spec(80, 32, rng);
    std::vector<Triplet> degenerate = {t, t, t};
    TriTrainOptions opt;
    opt.steps = 2;
    opt.crop_frames = 32;
    auto report = train_tritower(m, degenerate, opt);  // warning case, not an error
    CHECK(report.degenerate_corpus);
}

TEST_CASE("embedding dump emits one row per modality") {
    auto m = tiny_model(3);
    Rng rng = make_rng(12);
    std::vector<Triplet> corpus;
    for (int i = 0; i < 2; ++i) {
        Triplet t;
        t.id = "clip" + std::to_string(i);
        t.caption = "dreamy synth pop";
        t.vocal_spec = random_spec(80, 32, rng);
        t.accomp_spec = random_spec(80, 32, rng);
        corpus.push_back(std::move(t));
    }
    std::string path = "tritower_dump_test.jsonl";
    dump_corpus_embeddings(path, m, corpus);
    std::ifstream is(path);
    std::string line;
    int rows = 0;
    std::set<std::string> mods;
    while (std::getline(is, line)) {
        auto j = Json::parse(line);
        CHECK(j.at("vector").size() == std::size_t(m.cfg.embed_dim));
        mods.insert(j.at("modality").get<std::string>());
        ++rows;
    }
    CHECK(rows == 6);
    CHECK(mods == std::set<std::string>{"p", "v", "a"});
    std::remove(path.c_str());
}
