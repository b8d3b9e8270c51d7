#include "duet/attrspace.hpp"

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "duet/rng.hpp"
#include "helpers.hpp"

using namespace duet;
using duet::testing::build_matrix;
using duet::testing::build_space;

TEST_CASE("attribute_set_of thresholding") {
    auto m = build_matrix({"a", "b"}, {{1, 0, 1}, {0.9, 0.1, 0.0}});
    m.theta_mem = 0.5;
    CHECK(attribute_set_of(0, m) == std::vector<int>{0, 2});
    m.theta_mem = 0.0;
    CHECK(attribute_set_of(1, m) == std::vector<int>{0, 1});  // strict at zero
}

TEST_CASE("attribute_set_of real-valued row matches a linear scan") {
    SeededRng rng(3);
    std::vector<double> row(12);
    for (auto& v : row) v = rng.uniform();
    auto m = build_matrix({"c"}, {row});
    m.theta_mem = 0.1;
    auto got = attribute_set_of(0, m);
    std::vector<int> expect;
    for (int a = 0; a < 12; ++a)
        if (row[static_cast<size_t>(a)] > 0.1) expect.push_back(a);
    CHECK(got == expect);
}

TEST_CASE("attribute_set_of rejects attribute-less classes") {
    auto m = build_matrix({"a"}, {{0.0, 0.0}});
    CHECK_THROWS_AS(attribute_set_of(0, m), DataError);
}

TEST_CASE("freq reproduces the flowers worked example") {
    // 717 classes; "flowers" held by 49 of them.
    std::vector<std::vector<double>> rows;
    std::vector<std::string> names;
    std::vector<int> all;
    for (int c = 0; c < 717; ++c) {
        names.push_back("class" + std::to_string(c));
        rows.push_back({c < 49 ? 1.0 : 0.0, 1.0});
        all.push_back(c);
    }
    auto m = build_matrix(names, rows);
    const double f = freq(0, m, all);
    CHECK(f == doctest::Approx(100.0 * 49.0 / 717.0).epsilon(1e-12));
    CHECK(std::round(f * 100.0) / 100.0 == 6.83);
    CHECK(freq(1, m, all) == 100.0);
}

TEST_CASE("freq edge cases") {
    auto m = build_matrix({"a", "b"}, {{1, 0}, {1, 0}});
    CHECK(freq(1, m, {0, 1}) == 0.0);
    CHECK(freq(0, m, {0, 1}) == 100.0);
    CHECK_THROWS_AS(freq(0, m, {}), DataError);
}

TEST_CASE("co_occurrence reproduces the leaves<-flowers worked example") {
    // 39 classes with both, 10 with flowers only, the rest with neither.
    std::vector<std::vector<double>> rows;
    std::vector<std::string> names;
    std::vector<int> all;
    for (int c = 0; c < 717; ++c) {
        const bool flowers = c < 49;
        const bool leaves = c < 39;  // every leaves class also has flowers
        names.push_back("class" + std::to_string(c));
        rows.push_back({leaves ? 1.0 : 0.0, flowers ? 1.0 : 0.0});
        all.push_back(c);
    }
    auto m = build_matrix(names, rows);
    auto r = co_occurrence(0, 1, m, all);
    CHECK(r.kind == CoOccurrence::Kind::Finite);
    CHECK(r.ratio == doctest::Approx(3.9).epsilon(1e-12));
}

TEST_CASE("co_occurrence sentinels") {
    auto m = build_matrix({"a", "b"}, {{1, 1, 0}, {1, 1, 0}});
    CHECK(co_occurrence(0, 2, m, {0, 1}).kind == CoOccurrence::Kind::Undefined);
    CHECK(co_occurrence(0, 1, m, {0, 1}).kind == CoOccurrence::Kind::AlwaysCoOccurring);
    CHECK_THROWS_AS(co_occurrence(1, 1, m, {0, 1}), DataError);
}

TEST_CASE("co_occurrence matches brute-force recount on random matrices") {
    SeededRng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const int nc = 6, na = 5;
        std::vector<std::vector<double>> rows(nc, std::vector<double>(na));
        std::vector<std::string> names;
        std::vector<int> all;
        for (int c = 0; c < nc; ++c) {
            names.push_back("c" + std::to_string(c));
            all.push_back(c);
            for (int a = 0; a < na; ++a)
                rows[static_cast<size_t>(c)][static_cast<size_t>(a)] =
                    rng.uniform() < 0.5 ? 1.0 : 0.0;
        }
        auto m = build_matrix(names, rows);
        for (int i = 0; i < na; ++i) {
            for (int j = 0; j < na; ++j) {
                if (i == j) continue;
                int both = 0, jonly = 0;
                for (int c = 0; c < nc; ++c) {
                    if (rows[static_cast<size_t>(c)][static_cast<size_t>(i)] > 0 &&
                        rows[static_cast<size_t>(c)][static_cast<size_t>(j)] > 0)
                        ++both;
                    if (rows[static_cast<size_t>(c)][static_cast<size_t>(i)] == 0 &&
                        rows[static_cast<size_t>(c)][static_cast<size_t>(j)] > 0)
                        ++jonly;
                }
                auto r = co_occurrence(i, j, m, all);
                if (jonly > 0) {
                    CHECK(r.kind == CoOccurrence::Kind::Finite);
                    CHECK(r.ratio == static_cast<double>(both) / jonly);
                } else {
                    CHECK(r.kind == (both > 0 ? CoOccurrence::Kind::AlwaysCoOccurring
                                              : CoOccurrence::Kind::Undefined));
                }
            }
        }
    }
}

TEST_CASE("class_distance basics") {
    auto m = build_matrix({"a", "b", "c"}, {{1, 0}, {0, 1}, {1, 0}});
    auto d = class_distance(0, 1, m);
    CHECK(d.dist == 2.0);
    CHECK(d.sim.has_value());
    CHECK(*d.sim == 0.5);
    auto deg = class_distance(0, 2, m);  // identical rows
    CHECK(deg.dist == 0.0);
    CHECK(!deg.sim.has_value());
    CHECK(class_distance(1, 1, m).dist == 0.0);
}

TEST_CASE("class_distance matches direct summation and metric axioms") {
    SeededRng rng(29);
    const int nc = 7, na = 9;
    std::vector<std::vector<double>> rows(nc, std::vector<double>(na));
    std::vector<std::string> names;
    for (int c = 0; c < nc; ++c) {
        names.push_back("c" + std::to_string(c));
        for (int a = 0; a < na; ++a) rows[static_cast<size_t>(c)][static_cast<size_t>(a)] = rng.uniform();
    }
    auto m = build_matrix(names, rows);
    for (int c = 0; c < nc; ++c) {
        for (int c2 = 0; c2 < nc; ++c2) {
            long double acc = 0;
            for (int a = 0; a < na; ++a)
                acc += std::fabs(rows[static_cast<size_t>(c)][static_cast<size_t>(a)] -
                                 rows[static_cast<size_t>(c2)][static_cast<size_t>(a)]);
            CHECK(std::abs(class_distance(c, c2, m).dist - static_cast<double>(acc)) < 1e-12);
            CHECK(class_distance(c, c2, m).dist == class_distance(c2, c, m).dist);
            for (int c3 = 0; c3 < nc; ++c3) {
                CHECK(class_distance(c, c3, m).dist <=
                      class_distance(c, c2, m).dist + class_distance(c2, c3, m).dist + 1e-12);
            }
        }
        CHECK(class_distance(c, c, m).dist == 0.0);
    }
}

TEST_CASE("kg_to_matrix direct triples at h=1") {
    std::vector<Triple> triples{{"Zebra", "hasPart", "Four_legs"},
                                {"Zebra", "hasColor", "Stripes"},
                                {"Horse", "hasPart", "Four_legs"}};
    auto [space, m] = kg_to_matrix(triples, 1);
    REQUIRE(space.n_prompts() == 2);
    CHECK(space.prompts[0].name() == "has color");
    CHECK(space.prompts[1].name() == "has part");
    const int zebra = static_cast<int>(
        std::find(m.class_names.begin(), m.class_names.end(), "Zebra") - m.class_names.begin());
    bool found = false;
    for (int a : attribute_set_of(zebra, m)) {
        const auto& attr = space.attributes[static_cast<size_t>(a)];
        if (attr.surface() == "four legs") {
            CHECK(space.prompts[static_cast<size_t>(attr.prompt_id)].name() == "has part");
            found = true;
        }
    }
    CHECK(found);
}

TEST_CASE("kg_to_matrix follows exact-length same-direction paths at h=2") {
    std::vector<Triple> triples{{"Zebra", "hasPart", "Four_legs"},
                                {"Four_legs", "subClassOf", "Leg"},
                                {"Zebra", "livesIn", "Plains"},
                                {"Plains", "partOf", "Grassland"}};
    auto [space, m] = kg_to_matrix(triples, 2);
    REQUIRE(m.class_names == std::vector<std::string>{"Zebra"});
    std::vector<std::string> surfaces;
    for (int a : attribute_set_of(0, m))
        surfaces.push_back(space.attributes[static_cast<size_t>(a)].surface());
    CHECK(std::find(surfaces.begin(), surfaces.end(), "leg") != surfaces.end());
    CHECK(std::find(surfaces.begin(), surfaces.end(), "grassland") != surfaces.end());
    // Distance-1 entities are not members at h=2.
    CHECK(std::find(surfaces.begin(), surfaces.end(), "four legs") == surfaces.end());
    // The prompt of a path is its first relation.
    for (int a : attribute_set_of(0, m)) {
        const auto& attr = space.attributes[static_cast<size_t>(a)];
        if (attr.surface() == "leg")
            CHECK(space.prompts[static_cast<size_t>(attr.prompt_id)].name() == "has part");
    }
}

TEST_CASE("kg_to_matrix error paths") {
    CHECK_THROWS_AS(kg_to_matrix({}, 1), DataError);
    CHECK_THROWS_AS(kg_to_matrix({{"A", "r", "B"}, {"B", "r", "A"}}, 1), DataError);  // cycle
    CHECK_THROWS_AS(kg_to_matrix({{"A", "r", ""}}, 1), DataError);  // dangling reference
    // Class with no entity at the requested distance.
    CHECK_THROWS_AS(kg_to_matrix({{"A", "r", "B"}}, 2), DataError);
    CHECK_THROWS_AS(kg_to_matrix({{"A", "r", "B"}}, 0), ConfigError);
}

TEST_CASE("kg_to_matrix is invariant under triple reordering at h=1") {
    std::vector<Triple> triples{{"Zebra", "hasPart", "Four_legs"},
                                {"Zebra", "hasColor", "Stripes"},
                                {"Horse", "hasPart", "Mane"},
                                {"Horse", "hasColor", "Brown"},
                                {"Okapi", "hasPart", "Four_legs"}};
    auto [s1, m1] = kg_to_matrix(triples, 1);
    SeededRng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        // Fisher-Yates with the seeded generator.
        auto shuffled = triples;
        for (size_t i = shuffled.size(); i > 1; --i)
            std::swap(shuffled[i - 1], shuffled[rng.uniform_int(i)]);
        auto [s2, m2] = kg_to_matrix(shuffled, 1);
        CHECK(format_space(s1, m1) == format_space(s2, m2));
    }
}

TEST_CASE("space validation enforces the full partition") {
    auto space = build_space({{"color", {"red", "green"}}, {"shape", {"round"}}});
    space.validate();
    auto broken = space;
    broken.prompts[1].member_ids.push_back(0);  // id 0 now in two prompt sets
    CHECK_THROWS_AS(broken.validate(), DataError);
    auto empty_prompt = space;
    empty_prompt.prompts[1].member_ids.clear();
    CHECK_THROWS_AS(empty_prompt.validate(), DataError);
}

TEST_CASE("space file format round-trips") {
    auto space = build_space(
        {{"color", {"brown", "still water"}}, {"has part", {"tail", "flippers", "still water"}}});
    auto m = build_matrix({"Otter", "Beaver"}, {{1, 0, 1, 1, 0}, {0, 0.25, 0, 0, 1}}, 0.1);
    const std::string text = format_space(space, m);
    auto [s2, m2] = parse_space(text);
    CHECK(format_space(s2, m2) == text);
    CHECK(m2.theta_mem == 0.1);
    CHECK(m2.class_names == m.class_names);
    CHECK((m2.z - m.z).cwiseAbs().maxCoeff() == 0.0);
    CHECK(s2.attributes[1].surface() == "still water");
    CHECK(s2.attributes[4].prompt_id == 1);
}

TEST_CASE("space file parser rejects malformed input") {
    CHECK_THROWS_AS(parse_space(""), DataError);
    CHECK_THROWS_AS(parse_space("prompt\tcolor\tred\nOtter\t1 1\n"), DataError);  // degree count
    CHECK_THROWS_AS(parse_space("prompt\tcolor\tred\nOtter\t2\n"), DataError);    // range
    CHECK_THROWS_AS(parse_space("prompt\tcolor\tred\nOtter\tx\n"), DataError);    // not a number
    CHECK_THROWS_AS(parse_space("prompt\tcolor\tred\n"), DataError);              // no classes
    CHECK_THROWS_AS(parse_space("prompt\tcolor\tred\nOtter\t0\n"), DataError);    // empty class
}

TEST_CASE("split format round-trips and validates") {
    Split s{{0, 2, 3}, {1, 4}};
    auto s2 = parse_split(format_split(s), 5);
    CHECK(s2.seen == s.seen);
    CHECK(s2.unseen == s.unseen);
    CHECK(s2.is_seen(2));
    CHECK(!s2.is_seen(4));
    CHECK_THROWS_AS(parse_split("0 1\n1 2\n", 3), DataError);  // overlap
    CHECK_THROWS_AS(parse_split("0\n2\n", 4), DataError);      // class 1,3 missing
}

TEST_CASE("triple file parsing") {
    auto ts = parse_triples("Zebra\thasPart\tFour_legs\n\nHorse\thasColor\tBrown\n");
    REQUIRE(ts.size() == 2);
    CHECK(ts[1].relation == "hasColor");
    CHECK_THROWS_AS(parse_triples("a b c\n"), DataError);
}
