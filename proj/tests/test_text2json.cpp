// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "kvlab/text2json.hpp"

using namespace kvlab::text2json;
using nlohmann::json;

namespace {

std::vector<EntryRecord> doctors() {
    return {{"Anna Petrova", {{"specialization", "Cardiologist"}, {"city", "Kazan"}}},
            {"Boris Ivanov", {{"specialization", "Dentist"}, {"city", "Omsk"}}},
            {"Clara Smith", {{"specialization", "Surgeon"}, {"city", "Tver"}}}};
}

}  // namespace

TEST_CASE("instance generation") {
    for (Subset sub : {Subset::Doctors, Subset::Movies, Subset::Organizations, Subset::Products}) {
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            const auto inst = generate_instance(sub, seed);
            CHECK(inst.gold.size() >= 3);
            CHECK(inst.gold.size() <= 20);
            CHECK(inst.n_passages >= 3);
            CHECK(inst.n_passages <= 10);
            const auto [f1, f2] = required_fields(sub);
            for (const auto& g : inst.gold) {
                CHECK(inst.prompt_text.find(g.name) != std::string::npos);
                CHECK(g.fields.size() == 2);
                CHECK(g.fields.count(f1) == 1);
                CHECK(g.fields.count(f2) == 1);
            }
        }
        const auto a = generate_instance(sub, 7), b = generate_instance(sub, 7);
        CHECK(a.prompt_text == b.prompt_text);
        CHECK(a.gold == b.gold);
        CHECK_FALSE(generate_instance(sub, 8).prompt_text == a.prompt_text);
    }
}

TEST_CASE("gold against itself scores one") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto inst = generate_instance(Subset::Products, seed);
        const auto rep = score(to_json(inst.gold).dump(), inst.gold);
        CHECK(rep.score == 1.0);
        CHECK(rep.matched == inst.gold.size());
    }
    CHECK(score("[]", {}).score == 1.0);
}

TEST_CASE("empty prediction") {
    std::vector<EntryRecord> gold = doctors();
    gold.push_back({"D", {{"specialization", "x"}, {"city", "y"}}});
    gold.push_back({"E", {{"specialization", "x"}, {"city", "y"}}});
    for (const char* empty : {"[]", "", "```json\n[]\n```"}) {
        const auto rep = score(empty, gold);
        CHECK(rep.score == 0.0);
        CHECK(rep.false_negatives == 5);
        CHECK_FALSE(rep.parse_error);
    }
}

TEST_CASE("hand-computed partial credit") {
    const auto gold = doctors();
    // Anna fully right (3/3), Boris one field wrong (2/3), Clara missing,
    // one invented doctor: (1 + 2/3) / (2 + 1 + 1).
    const json pred = json::array({
        {{"name", "Anna Petrova"}, {"specialization", "Cardiologist"}, {"city", "Kazan"}},
        {{"name", "Boris Ivanov"}, {"specialization", "Dentist"}, {"city", "Tomsk"}},
        {{"name", "Zed Nobody"}, {"specialization", "Dentist"}, {"city", "Omsk"}},
    });
    const auto rep = score(pred.dump(), gold);
    CHECK(rep.matched == 2);
    CHECK(rep.false_positives == 1);
    CHECK(rep.false_negatives == 1);
    CHECK(rep.score == doctest::Approx((1.0 + 2.0 / 3.0) / 4.0));

    // Two of three fields right on every card.
    json two = json::array();
    for (const auto& g : gold) two.push_back({{"name", g.name}, {"city", g.fields.at("city")}});
    CHECK(score(two.dump(), gold).score == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("accepted prediction shapes") {
    const auto gold = doctors();
    const json arr = to_json(gold);
    CHECK(score(json{{"doctors", arr}}.dump(), gold).score == 1.0);
    CHECK(score(arr[0].dump(), {gold[0]}).score == 1.0);
    json keyed;
    for (const auto& g : gold) keyed[g.name] = {{"specialization", g.fields.at("specialization")}, {"city", g.fields.at("city")}};
    CHECK(score(keyed.dump(), gold).score == 1.0);
    CHECK(score("```\n" + arr.dump(2) + "\n```", gold).score == 1.0);

    json rev = json::array();
    for (auto it = arr.rbegin(); it != arr.rend(); ++it) rev.push_back(*it);
    CHECK(score(rev.dump(), gold).score == 1.0);
}

TEST_CASE("parse errors") {
    const auto gold = doctors();
    for (const char* bad : {"[{\"name\": ", "not json", "42", "\"text\""}) {
        const auto rep = score(bad, gold);
        CHECK(rep.parse_error);
        CHECK(rep.score == 0.0);
        CHECK(rep.false_negatives == 3);
    }
}

TEST_CASE("perturbations move the score the right way") {
    const auto gold = doctors();
    json arr = to_json(gold);
    json extra = arr;
    extra.push_back({{"name", "Someone Else"}, {"specialization", "x"}, {"city", "y"}});
    CHECK(score(extra.dump(), gold).score < 1.0);
    json dup = arr;
    dup.push_back(arr[0]);
    CHECK(score(dup.dump(), gold).false_positives == 1);
    json fewer = arr;
    fewer.erase(1);
    const auto rep = score(fewer.dump(), gold);
    CHECK(rep.score == doctest::Approx(2.0 / 3.0));
    CHECK(rep.false_negatives == 1);
}

TEST_CASE("unicode normalization") {
    // U+00E9 precomposed against e + U+0301.
    const std::vector<EntryRecord> gold{{"Ren\xC3\xA9 Dupont", {{"specialization", "Caf\xC3\xA9"}, {"city", "Lyon"}}}};
    const json pred = json::array({{{"name", "  Rene\xCC\x81 Dupont "}, {"specialization", "Cafe\xCC\x81"}, {"city", "Lyon"}}});
    CHECK(score(pred.dump(), gold).score == 1.0);
    CHECK(normalize("  e\xCC\x81 \n") == "\xC3\xA9");
}

TEST_CASE("numbers compare by text") {
    const std::vector<EntryRecord> gold{{"Blue Harbor", {{"country", "France"}, {"year", "1998"}}}};
    CHECK(score(R"([{"name": "Blue Harbor", "country": "France", "year": 1998}])", gold).score == 1.0);
}

TEST_CASE("subsets and prompts") {
    CHECK(parse_subset("doctors") == Subset::Doctors);
    CHECK(parse_subset("products") == Subset::Products);
    CHECK_THROWS_AS(parse_subset("recipes"), std::invalid_argument);
    CHECK_THROWS_AS(extraction_prompt("recipes"), std::invalid_argument);
    const std::string p = extraction_prompt(Subset::Movies);
    CHECK(p.find("movie review cards") != std::string::npos);
    CHECK(p.find("year --- year of release") != std::string::npos);
    CHECK(extraction_prompt("organizations").find("exactly as written in the card") != std::string::npos);
    CHECK(to_string(Subset::Organizations) == "organizations");
}

TEST_CASE("json round trip") {
    const auto gold = doctors();
    CHECK(records_from_json(to_json(gold)) == gold);
    const auto j = to_json(score("[]", gold));
    CHECK(j["false_negatives"] == 3);
}

TEST_CASE("filler corpus") {
    const auto dir = std::filesystem::temp_directory_path() / "kvlab_test_filler";
    std::filesystem::create_directories(dir);
    CHECK_THROWS_AS(load_filler_corpus(dir / "missing.txt"), std::runtime_error);
    { std::ofstream(dir / "empty.txt") << "\n\n  \n"; }
    CHECK_THROWS_AS(load_filler_corpus(dir / "empty.txt"), std::runtime_error);
    { std::ofstream(dir / "ok.txt") << "First passage line one.\nline two.\n\nSecond passage.\n"; }
    const auto filler = load_filler_corpus(dir / "ok.txt");
    CHECK(filler.size() == 2);
    const auto inst = generate_instance(Subset::Doctors, 1, filler);
    CHECK(((inst.prompt_text.find("First passage") != std::string::npos) ||
           (inst.prompt_text.find("Second passage") != std::string::npos)));
    std::filesystem::remove_all(dir);
}
