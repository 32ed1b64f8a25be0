#include <doctest.h>

#include <set>

#include "oracles.hpp"
#include "tsim/scenegen.hpp"

using namespace tsim;
using namespace tsim::scenegen;

namespace {

Catalog test_catalog() { return load_asset_catalog(TSIM_ASSETS_DIR "/catalog_default.json"); }
Lexicon test_lexicon() { return load_lexicon(TSIM_ASSETS_DIR "/lexicon_en_it.json"); }

int word_count(const std::string& s) {
    int n = 0;
    bool in_word = false;
    for (const char c : s) {
        const bool sep = c == ' ';
        if (!sep && !in_word) ++n;
        in_word = !sep;
    }
    return n;
}

}  // namespace

TEST_CASE("catalog loading") {
    SUBCASE("empty array gives an empty catalog") {
        CHECK(catalog_from_json_text("[]").empty());
    }
    SUBCASE("duplicate ids are rejected") {
        const char* dup = R"([
            {"id":"sofa_01","category":"sofa","half_extents":[1.0,0.5],"color":"red","material":"fabric","style_attrs":[]},
            {"id":"sofa_01","category":"sofa","half_extents":[1.0,0.5],"color":"blue","material":"fabric","style_attrs":[]}
        ])";
        CHECK_THROWS_AS(catalog_from_json_text(dup), DuplicateId);
    }
    SUBCASE("the bundled default catalog has 40 assets") {
        CHECK(test_catalog().size() == 40);
    }
    SUBCASE("missing file and parse errors") {
        CHECK_THROWS_AS(load_asset_catalog("/nonexistent/x.json"), MissingFile);
        CHECK_THROWS_AS(catalog_from_json_text("not json"), ParseError);
    }
}

TEST_CASE("caption templates") {
    const Lexicon lex = test_lexicon();
    AssetSpec sofa;
    sofa.id = "s";
    sofa.category = "sofa";
    sofa.half_w = 1.05;
    sofa.half_d = 0.44;
    sofa.color = "red";
    sofa.material = "fabric";
    sofa.style_attrs = {"modern"};

    SUBCASE("level 1 is the bare category noun") {
        CHECK(generate_captions(sofa, Language::EN, lex).levels[0] == "sofa");
    }
    SUBCASE("level 3 adds color and material") {
        CHECK(generate_captions(sofa, Language::EN, lex).levels[2] == "a red fabric sofa");
    }
    SUBCASE("italian level 1 comes from the lexicon") {
        CHECK(generate_captions(sofa, Language::IT, lex).levels[0] == "divano");
    }
    SUBCASE("multi-word category nouns") {
        AssetSpec table = sofa;
        table.category = "dining_table";
        CHECK(generate_captions(table, Language::EN, lex).levels[0] == "dining table");
    }
    SUBCASE("missing lexicon entry is reported") {
        AssetSpec odd = sofa;
        odd.color = "chartreuse";
        CHECK_THROWS_AS(generate_captions(odd, Language::IT, lex), MissingLexiconEntry);
        CHECK_NOTHROW(generate_captions(odd, Language::EN, lex));
    }
    SUBCASE("unsupported language name") {
        CHECK_THROWS_AS(language_from_name("fr"), UnsupportedLanguage);
    }
}

TEST_CASE("caption word counts are non-decreasing in level for the whole catalog") {
    const Catalog catalog = test_catalog();
    const Lexicon lex = test_lexicon();
    for (const auto& asset : catalog) {
        for (const Language lang : {Language::EN, Language::IT}) {
            const CaptionSet caps = generate_captions(asset, lang, lex);
            for (int l = 0; l + 1 < 5; ++l) {
                INFO(asset.id, " ", language_name(lang), " level ", l + 1, ": '",
                     caps.levels[l], "' -> '", caps.levels[l + 1], "'");
                CHECK(word_count(caps.levels[l + 1]) >= word_count(caps.levels[l]));
            }
        }
    }
}

TEST_CASE("scene sampling determinism and soundness") {
    const Catalog catalog = test_catalog();
    const auto recipe = PlacementRecipe::default_recipe();

    SUBCASE("same seed gives byte-identical serialized scenes") {
        const Scene a = sample_scene(catalog, recipe, 12345);
        const Scene b = sample_scene(catalog, recipe, 12345);
        CHECK(scene_to_json(a) == scene_to_json(b));
    }
    SUBCASE("scenes have no overlaps and stay in the room (oracle check)") {
        for (std::uint64_t seed = 0; seed < 200; ++seed) {
            const Scene s = sample_scene(catalog, recipe, seed);
            REQUIRE(!s.instances.empty());
            std::vector<geom::OrientedRect> rects;
            for (const auto& inst : s.instances)
                rects.push_back(find_asset(catalog, inst.asset_id).footprint(inst.pose));
            for (std::size_t i = 0; i < rects.size(); ++i) {
                CHECK(geom::rect_inside_room(rects[i], s.room));
                for (std::size_t j = i + 1; j < rects.size(); ++j)
                    CHECK(!oracles::sat_overlap(rects[i], rects[j]));
            }
            const geom::OrientedRect robot{{s.robot_init.x, s.robot_init.y}, 0.275, 0.175,
                                           s.robot_init.theta};
            const geom::OrientedRect trolley{{s.trolley_init.x, s.trolley_init.y}, 0.30, 0.20,
                                             s.trolley_init.theta};
            CHECK(!oracles::sat_overlap(robot, trolley));
            for (const auto& r : rects) {
                CHECK(!oracles::sat_overlap(robot, r));
                CHECK(!oracles::sat_overlap(trolley, r));
            }
        }
    }
    SUBCASE("an asset larger than the room is never placed") {
        Catalog tiny;
        AssetSpec huge;
        huge.id = "huge";
        huge.category = "sofa";
        huge.half_w = 4.0;
        huge.half_d = 4.0;
        huge.color = "red";
        huge.material = "fabric";
        tiny.push_back(huge);
        AssetSpec small = huge;
        small.id = "small";
        small.category = "coffee_table";
        small.half_w = 0.4;
        small.half_d = 0.3;
        tiny.push_back(small);

        PlacementRecipe recipe5;
        recipe5.room_min = {5.0, 5.0};
        recipe5.room_max = {6.0, 6.0};
        recipe5.clearance = 0.7;
        recipe5.areas = {{"lounge", AreaKind::Free, 1.0, 0.4,
                          {{"sofa", 1, 1}, {"coffee_table", 1, 2}}}};
        for (std::uint64_t seed = 0; seed < 30; ++seed) {
            const Scene s = sample_scene(tiny, recipe5, seed);
            for (const auto& inst : s.instances) CHECK(inst.asset_id != "huge");
        }
    }
    SUBCASE("empty catalog is rejected") {
        CHECK_THROWS_AS(sample_scene({}, recipe, 1), EmptyCatalog);
    }
}

TEST_CASE("task sampling") {
    const Catalog catalog = test_catalog();
    const Lexicon lex = test_lexicon();
    const auto recipe = PlacementRecipe::reduced_recipe();

    SUBCASE("single-instance scene always targets index 0") {
        Scene s = sample_scene(catalog, recipe, 5);
        s.instances.resize(1);
        for (std::uint64_t seed = 0; seed < 50; ++seed)
            CHECK(sample_task(s, catalog, seed, Language::EN, lex).target_index == 0);
    }
    SUBCASE("uniform target distribution within 4 sigma over 10k draws") {
        Scene s;
        std::uint64_t seed = 0;
        do {
            s = sample_scene(catalog, recipe, seed++);
        } while (s.instances.size() != 4);
        std::array<int, 4> counts{};
        const int n = 10000;
        for (int i = 0; i < n; ++i)
            counts[sample_task(s, catalog, derive_seed(99, i), Language::EN, lex).target_index]++;
        const double sigma = std::sqrt(0.25 * 0.75 / n);
        for (const int c : counts)
            CHECK(std::abs(static_cast<double>(c) / n - 0.25) <= 4.0 * sigma);
    }
    SUBCASE("caption matches the catalog caption for the drawn level exactly") {
        const Scene s = sample_scene(catalog, recipe, 8);
        for (std::uint64_t seed = 0; seed < 40; ++seed) {
            const TaskSpec t = sample_task(s, catalog, seed, Language::EN, lex);
            const auto& asset = find_asset(catalog, s.instances[t.target_index].asset_id);
            CHECK(t.caption ==
                  generate_captions(asset, Language::EN, lex).levels[t.caption_level - 1]);
        }
    }
    SUBCASE("empty scene is rejected") {
        Scene s = sample_scene(catalog, recipe, 5);
        s.instances.clear();
        CHECK_THROWS_AS(sample_task(s, catalog, 1, Language::EN, lex), EmptyScene);
    }
}

TEST_CASE("description overlap") {
    LevelSets a, b;
    for (int l = 0; l < 5; ++l) {
        a[l] = {"x", "y", "z"};
        b[l] = {"x", "y", "z"};
    }
    SUBCASE("identical sets overlap fully") {
        for (int l = 1; l <= 5; ++l) CHECK(description_overlap(a, b, l) == doctest::Approx(1.0));
    }
    SUBCASE("disjoint sets have zero overlap") {
        LevelSets c;
        for (int l = 0; l < 5; ++l) c[l] = {"p", "q"};
        for (int l = 1; l <= 5; ++l) CHECK(description_overlap(a, c, l) == doctest::Approx(0.0));
    }
    SUBCASE("empty level set is rejected") {
        LevelSets c;
        CHECK_THROWS_AS(description_overlap(a, c, 1), EmptyLevelSet);
    }
}

TEST_CASE("scene file round trip is byte identical") {
    const Catalog catalog = test_catalog();
    const Scene s = sample_scene(catalog, PlacementRecipe::default_recipe(), 77);
    const std::string j = scene_to_json(s);
    const Scene back = scene_from_json(j);
    CHECK(scene_to_json(back) == j);
}
