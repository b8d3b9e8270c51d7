#include "duet/fst.hpp"

#include <algorithm>

#include "doctest.h"
#include "duet/rng.hpp"
#include "helpers.hpp"

using namespace duet;
using duet::testing::build_matrix;
using duet::testing::build_space;

namespace {

AttributeSpace otter_space() {
    return build_space({{"color", {"brown"}}, {"has part", {"tail", "flippers"}}});
}

}  // namespace

TEST_CASE("serialize emits prompt-structured attribute sentences") {
    auto space = otter_space();
    auto vocab = Vocabulary::build(space);
    auto seq = serialize({0, 1, 2}, space, vocab);
    CHECK(detokenize(seq, vocab) == "| color : brown | has part : tail , flippers");
    // Positional tags line up with what each token realizes.
    CHECK(seq.tags[0] == SegTag::Separator);
    CHECK(seq.tags[1] == SegTag::PromptName);
    CHECK(seq.tags[3] == SegTag::Attribute);
    CHECK(seq.attr_ids[3] == 0);
    CHECK(seq.attr_ids[0] == -1);
}

TEST_CASE("serialize keeps empty prompt slots and equals the template on the empty set") {
    auto space = otter_space();
    auto vocab = Vocabulary::build(space);
    auto empty = serialize({}, space, vocab);
    CHECK(empty == prompt_template(space, vocab));
    CHECK(detokenize(empty, vocab) == "| color : | has part :");
    // A partially filled class still carries every prompt group.
    auto seq = serialize({1}, space, vocab);
    CHECK(detokenize(seq, vocab) == "| color : | has part : tail");
}

TEST_CASE("prompt_template over a two-prompt space") {
    auto space = build_space({{"color", {"red"}}, {"shape", {"round"}}});
    auto vocab = Vocabulary::build(space);
    CHECK(detokenize(prompt_template(space, vocab), vocab) == "| color : | shape :");
}

TEST_CASE("prompt_template emits one group per prompt set on a 12-prompt space") {
    // AWA2-style prompt inventory: 12 aspects.
    auto space = build_space({{"color", {"black", "white"}},
                              {"pattern", {"patches", "spots", "stripes"}},
                              {"texture", {"furry"}},
                              {"shape", {"big", "small"}},
                              {"has part", {"tail", "paws"}},
                              {"behaviour", {"swims"}},
                              {"character", {"fast", "slow"}},
                              {"limb", {"bipedal", "quadrupedal"}},
                              {"diet", {"fish", "meat"}},
                              {"role", {"hunter"}},
                              {"habitat", {"forest", "ocean"}},
                              {"habit", {"group"}}});
    auto vocab = Vocabulary::build(space);
    auto seq = prompt_template(space, vocab);
    const int bars = static_cast<int>(
        std::count(seq.ids.begin(), seq.ids.end(), vocab.bar_id()));
    CHECK(bars == 12);
    CHECK(seq.size() == 12u * 3u + 1u);  // "has part" adds one extra name token
}

TEST_CASE("serialize rejects attributes outside the space") {
    auto space = otter_space();
    auto vocab = Vocabulary::build(space);
    CHECK_THROWS_AS(serialize({7}, space, vocab), DataError);
}

TEST_CASE("serialize round-trips through detokenization") {
    auto space = build_space({{"color", {"red", "green", "deep blue"}},
                              {"shape", {"round", "square"}},
                              {"texture", {"furry", "smooth stone"}},
                              {"size", {"big", "small"}}});
    auto vocab = Vocabulary::build(space);
    SeededRng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> attrs;
        for (int a = 0; a < space.n_attributes(); ++a)
            if (rng.uniform() < 0.5) attrs.push_back(a);
        auto seq = serialize(attrs, space, vocab);
        CHECK(tokenize(detokenize(seq, vocab), vocab) == seq.ids);
    }
}

TEST_CASE("mask_attribute masks whole phrases token by token") {
    auto space = build_space({{"material", {"still water", "sand"}}});
    auto vocab = Vocabulary::build(space);
    auto seq = serialize({0, 1}, space, vocab);
    auto masked = mask_attribute(seq, 0, vocab);
    REQUIRE(masked.targets.size() == 2);  // "still water" is two tokens
    CHECK(masked.seq.ids[static_cast<size_t>(masked.targets[0].first)] == vocab.mask_id());
    CHECK(masked.seq.ids[static_cast<size_t>(masked.targets[1].first)] == vocab.mask_id());
    CHECK(detokenize(masked.seq, vocab) == "| material : [MASK] [MASK] , sand");

    auto single = mask_attribute(seq, 1, vocab);
    CHECK(single.targets.size() == 1);
}

TEST_CASE("masking then restoring targets reproduces the original sequence") {
    auto space = build_space({{"color", {"red", "green"}}, {"material", {"still water", "sand"}}});
    auto vocab = Vocabulary::build(space);
    SeededRng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> attrs;
        for (int a = 0; a < space.n_attributes(); ++a)
            if (rng.uniform() < 0.7) attrs.push_back(a);
        if (attrs.empty()) continue;
        const int target = attrs[rng.uniform_int(attrs.size())];
        auto seq = serialize(attrs, space, vocab);
        auto masked = mask_attribute(seq, target, vocab);
        auto restored = masked.seq;
        for (auto [pos, id] : masked.targets) {
            restored.ids[static_cast<size_t>(pos)] = id;
            restored.tags[static_cast<size_t>(pos)] = SegTag::Attribute;
        }
        CHECK(restored == seq);
    }
}

TEST_CASE("masking one attribute leaves shared surfaces under other prompts intact") {
    // "spotted" exists under two prompt sets as two distinct ids.
    auto space = build_space({{"wing pattern", {"solid", "spotted"}},
                              {"head pattern", {"spotted", "plain"}}});
    auto vocab = Vocabulary::build(space);
    auto seq = serialize({1, 2}, space, vocab);  // spotted wings, spotted head
    auto masked = mask_attribute(seq, 1, vocab);
    REQUIRE(masked.targets.size() == 1);
    // The masked occurrence is gone; the other prompt still shows the surface.
    CHECK(detokenize(masked.seq, vocab) == "| wing pattern : [MASK] | head pattern : spotted");
    // Masked positions keep the target attribute id for the loss.
    CHECK(masked.seq.attr_ids[static_cast<size_t>(masked.targets[0].first)] == 1);
}

TEST_CASE("mask_attribute rejects absent targets") {
    auto space = otter_space();
    auto vocab = Vocabulary::build(space);
    auto seq = serialize({0}, space, vocab);
    CHECK_THROWS_AS(mask_attribute(seq, 2, vocab), DataError);
}

TEST_CASE("grounding template carries one mask slot per prompt") {
    auto space = otter_space();
    auto vocab = Vocabulary::build(space);
    auto gt = grounding_template(space, vocab);
    CHECK(detokenize(gt.seq, vocab) == "| color : [MASK] | has part : [MASK]");
    REQUIRE(gt.mask_pos.size() == 2);
    CHECK(gt.seq.ids[static_cast<size_t>(gt.mask_pos[0])] == vocab.mask_id());
    CHECK(gt.seq.ids[static_cast<size_t>(gt.mask_pos[1])] == vocab.mask_id());
}

TEST_CASE("vocabulary is deterministic and stable across file round-trips") {
    auto space = build_space({{"color", {"brown", "still water"}}, {"shape", {"round"}}});
    auto m = build_matrix({"A", "B"}, {{1, 0, 1}, {0, 1, 0}});
    auto v1 = Vocabulary::build(space);
    auto [space2, m2] = parse_space(format_space(space, m));
    auto v2 = Vocabulary::build(space2);
    REQUIRE(v1.size() == v2.size());
    for (int i = 0; i < v1.size(); ++i) CHECK(v1.token(i) == v2.token(i));
    // Serialized ids are identical through the round-trip.
    CHECK(serialize({0, 2}, space, v1).ids == serialize({0, 2}, space2, v2).ids);
}

TEST_CASE("vocabulary basics") {
    auto space = otter_space();
    auto vocab = Vocabulary::build(space);
    CHECK(vocab.token(Vocabulary::kPad) == "[PAD]");
    CHECK(vocab.id("[MASK]") == vocab.mask_id());
    CHECK(vocab.contains("flippers"));
    CHECK_THROWS_AS(vocab.id("unknown-word"), DataError);
    CHECK_THROWS_AS(vocab.token(vocab.size()), DataError);
}
