#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "jmvl/arch.hpp"
#include "jmvl/net.hpp"
#include "jmvl/rng.hpp"

using namespace jmvl;

TEST_CASE("parse_arch on the documented notation") {
    SECTION("plain chain") {
        ArchSpec s = parse_arch("D512R-D512R");
        REQUIRE_FALSE(s.has_branches());
        REQUIRE(s.tail.size() == 2);
        REQUIRE(s.tail[0].units == 512);
        REQUIRE(s.tail[0].relu);
        REQUIRE(render_arch(s) == "D512R-D512R");
    }
    SECTION("two-branch group") {
        ArchSpec s = parse_arch("(D512R-D512R, D512R-D512R)");
        REQUIRE(s.has_branches());
        REQUIRE(s.branches->first.size() == 2);
        REQUIRE(s.branches->second.size() == 2);
        REQUIRE(s.tail.empty());
        REQUIRE(render_arch(s) == "(D512R-D512R, D512R-D512R)");
    }
    SECTION("branch group with tail") {
        ArchSpec s = parse_arch("(D512R, D64R)-D128R-D32");
        REQUIRE(s.has_branches());
        REQUIRE(s.tail.size() == 2);
        REQUIRE(render_arch(s) == "(D512R, D64R)-D128R-D32");
    }
    SECTION("linear layer without activation") {
        ArchSpec s = parse_arch("D64");
        REQUIRE(s.tail.size() == 1);
        REQUIRE_FALSE(s.tail[0].relu);
    }
    SECTION("whitespace is insignificant, canonical form is fixed") {
        REQUIRE(render_arch(parse_arch("( D512R-D512R ,D512R-D512R )")) ==
                "(D512R-D512R, D512R-D512R)");
    }
    SECTION("canonical form round-trips") {
        for (const char* text : {"D1", "D512R-D512R", "(D512R-D512R, D512R-D512R)",
                                 "D512R-D512R-D64-D512R-D512R", "(D3R, D4)-D5R", "D512BR-D10"}) {
            std::string canon = render_arch(parse_arch(text));
            REQUIRE(render_arch(parse_arch(canon)) == canon);
        }
    }
}

TEST_CASE("parse_arch rejects malformed input with a position") {
    auto pos_of = [](const std::string& text) -> std::size_t {
        try {
            parse_arch(text);
        } catch (const ParseError& e) {
            return e.position;
        }
        FAIL("expected ParseError for: " << text);
        return SIZE_MAX;
    };
    REQUIRE(pos_of("") == 0);
    REQUIRE(pos_of("X512") == 0);
    REQUIRE(pos_of("D512R-Q") == 6);
    REQUIRE(pos_of("D") == 1);
    REQUIRE(pos_of("D0") == 0);
    REQUIRE(pos_of("D512R-") == 6);
    REQUIRE(pos_of("(D512R,)") == 7);       // empty branch
    REQUIRE(pos_of("(, D512R)") == 1);      // empty branch
    REQUIRE(pos_of("((D1, D2), D3)") == 1); // nested group
    REQUIRE(pos_of("(D1, D2") == 0);        // unterminated
    REQUIRE(pos_of("D5-(D1, D2)") == 3);    // group not leading
    REQUIRE(pos_of("D512R D2") == 6);
}

TEST_CASE("parse_arch fuzz: success or ParseError, nothing else") {
    Rng rng(1234);
    const std::string alphabet = "DR,()-0123456789BS X";
    int parsed = 0, rejected = 0;
    for (int i = 0; i < 10000; ++i) {
        std::string s;
        std::size_t len = 1 + rng.below(12);
        for (std::size_t j = 0; j < len; ++j) s += alphabet[rng.below(alphabet.size())];
        try {
            ArchSpec spec = parse_arch(s);
            std::string canon = render_arch(spec);
            REQUIRE(render_arch(parse_arch(canon)) == canon);
            ++parsed;
        } catch (const ParseError&) {
            ++rejected;
        }
    }
    REQUIRE(parsed + rejected == 10000);
    REQUIRE(parsed > 0);
    REQUIRE(rejected > 0);
}

TEST_CASE("build_network shapes and determinism") {
    SECTION("joint encoder from the MNIST table") {
        Rng rng(11);
        auto net = build_network<float>("q_joint", parse_arch("(D512R-D512R, D512R-D512R)"), {784, 10},
                                        HeadKind::diag_gaussian, 64, rng);
        REQUIRE(net.trunk_dim() == 1024);
        for (std::size_t batch : {std::size_t{1}, std::size_t{7}, std::size_t{64}}) {
            Tape<float> t;
            auto x = t.constant({batch, 784}, std::vector<float>(batch * 784, 0.1f));
            auto w = t.constant({batch, 10}, std::vector<float>(batch * 10, 0.0f));
            auto out = net.forward(t, x, &w);
            REQUIRE(out.mean.shape() == Shape{batch, 64});
            REQUIRE(out.var.shape() == Shape{batch, 64});
            for (float v : out.var.values()) REQUIRE(v > 0.0f);
        }
    }
    SECTION("categorical decoder head") {
        Rng rng(11);
        auto net = build_network<float>("dec_w", parse_arch("D512R-D512R"), {64},
                                        HeadKind::categorical, 10, rng);
        Tape<float> t;
        auto z = t.constant({7, 64}, std::vector<float>(7 * 64, 0.05f));
        auto out = net.forward(t, z);
        REQUIRE(out.mean.shape() == Shape{7, 10});
        const auto& v = out.mean.values();
        for (std::size_t r = 0; r < 7; ++r) {
            float row = 0.0f;
            for (std::size_t j = 0; j < 10; ++j) row += v[r * 10 + j];
            REQUIRE_THAT(row, Catch::Matchers::WithinAbs(1.0f, 1e-5f));
        }
    }
    SECTION("degenerate D1 chain") {
        Rng rng(2);
        auto net = build_network<double>("tiny", parse_arch("D1"), {1}, HeadKind::diag_gaussian, 1, rng);
        Tape<double> t;
        auto x = t.constant({1, 1}, {0.0});
        auto out = net.forward(t, x);
        REQUIRE(out.mean.shape() == Shape{1, 1});
        // biases are zero-initialized and the input is zero, so mu is the bias path only
        REQUIRE(out.mean.values()[0] == 0.0);
    }
    SECTION("same seed bit-identical, different seed differs") {
        auto collect = [](std::uint64_t seed) {
            Rng rng(seed);
            auto net = build_network<float>("n", parse_arch("D16R-D8"), {4}, HeadKind::diag_gaussian, 3,
                                            rng);
            std::vector<float> all;
            for (auto* p : net.parameters()) all.insert(all.end(), p->value.begin(), p->value.end());
            return all;
        };
        REQUIRE(collect(42) == collect(42));
        REQUIRE(collect(42) != collect(43));
    }
    SECTION("input arity must match branch count") {
        Rng rng(1);
        REQUIRE_THROWS_AS(build_network<float>("n", parse_arch("(D4R, D4R)"), {8},
                                               HeadKind::diag_gaussian, 2, rng),
                          ShapeError);
        REQUIRE_THROWS_AS(build_network<float>("n", parse_arch("D4R"), {8, 3},
                                               HeadKind::diag_gaussian, 2, rng),
                          ShapeError);
    }
    SECTION("batch-norm and sigmoid atoms parse but do not build") {
        Rng rng(1);
        REQUIRE_NOTHROW(parse_arch("D512BR-D10"));
        REQUIRE_THROWS_AS(build_network<float>("n", parse_arch("D512BR-D10"), {4},
                                               HeadKind::diag_gaussian, 2, rng),
                          UnsupportedLayer);
        REQUIRE_THROWS_AS(build_network<float>("n", parse_arch("D1S"), {4},
                                               HeadKind::diag_gaussian, 2, rng),
                          UnsupportedLayer);
    }
}

TEST_CASE("network trunk is exposed for hierarchical taps") {
    Rng rng(9);
    auto net = build_network<double>("q_z1", parse_arch("(D6R, D5R)"), {3, 2},
                                     HeadKind::diag_gaussian, 2, rng);
    Tape<double> t;
    auto x = t.constant({4, 3}, std::vector<double>(12, 0.2));
    auto w = t.constant({4, 2}, std::vector<double>(8, 1.0));
    auto out = net.forward(t, x, &w);
    REQUIRE(out.trunk.shape() == Shape{4, 11});
}
