// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/text2json.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

namespace kvlab::text2json {

namespace {

template <std::size_t N>
using Pool = std::array<const char*, N>;

constexpr Pool<24> kFirstNames{"Anna", "Boris", "Clara", "Daniel", "Elena", "Felix", "Greta", "Hugo",
                               "Irina", "Jonas", "Katya", "Leon", "Marta", "Nikolai", "Olga", "Pavel",
                               "Rosa", "Stefan", "Tamara", "Victor", "Wanda", "Yuri", "Zoe", "Mikhail"};
constexpr Pool<24> kSurnames{"Abramov", "Bauer", "Castillo", "Dorn", "Engel", "Fischer", "Gromov", "Hart",
                             "Ivanova", "Jensen", "Kowalski", "Lindqvist", "Morozova", "Novak", "Orlov",
                             "Petrenko", "Quinn", "Rossi", "Sokolova", "Tanaka", "Ulrich", "Volkov",
                             "Weber", "Zhukova"};
constexpr Pool<14> kSpecializations{"Cardiologist", "Dermatologist", "Neurologist", "Pediatrician",
                                    "Ophthalmologist", "Endocrinologist", "Orthopedic Surgeon",
                                    "Gastroenterologist", "Otolaryngologist", "Psychiatrist", "Urologist",
                                    "Rheumatologist", "Allergist", "Pulmonologist"};
constexpr Pool<16> kCities{"Kazan", "Lisbon", "Tbilisi", "Krakow", "Tallinn", "Porto", "Novosibirsk", "Graz",
                           "Bergen", "Ljubljana", "Valencia", "Tampere", "Brno", "Samara", "Gdansk", "Leipzig"};
constexpr Pool<10> kReviews{"Very attentive, explained every step of the treatment.",
                            "Long queue, but the consultation was worth the wait.",
                            "Friendly staff and a thorough examination.",
                            "Prescribed exactly what helped, would visit again.",
                            "A bit rushed, though the diagnosis was correct.",
                            "Clear recommendations and a careful follow-up call.",
                            "Calm manner, answered all of my questions.",
                            "The appointment started on time and felt unhurried.",
                            "Helpful advice about prevention and diet.",
                            "Sent me for the right tests on the first visit."};

constexpr Pool<20> kTitleAdjectives{"Silent", "Crimson", "Hidden", "Last", "Distant", "Frozen", "Golden",
                                    "Broken", "Restless", "Northern", "Paper", "Quiet", "Burning", "Hollow",
                                    "Electric", "Wandering", "Velvet", "Iron", "Glass", "Midnight"};
constexpr Pool<20> kTitleNouns{"Harbor", "Orchard", "Signal", "Lantern", "Frontier", "Garden", "Witness",
                               "Voyage", "Archive", "Meridian", "Carousel", "Tide", "Summit", "Parade",
                               "Labyrinth", "Horizon", "Bridge", "Season", "Echo", "Compass"};
constexpr Pool<14> kCountries{"France", "Japan", "Brazil", "Italy", "South Korea", "Mexico", "Sweden",
                              "India", "Argentina", "Poland", "Iran", "Denmark", "Spain", "Canada"};
constexpr Pool<8> kMovieReviews{"Slow first act, but the ending lands beautifully.",
                                "Gorgeous cinematography and a restrained score.",
                                "The lead performance carries an uneven script.",
                                "Funny, warm and surprisingly sad in places.",
                                "A tense story told with very little dialogue.",
                                "Worth seeing on a big screen for the landscapes alone.",
                                "Overlong, yet full of memorable scenes.",
                                "Smart editing keeps the mystery alive until the end."};

constexpr Pool<20> kOrgPrefixes{"Northwind", "Bluestone", "Greenfield", "Silverline", "Redwood", "Brightpath",
                                "Clearwater", "Ironbridge", "Sunvale", "Oakridge", "Highmark", "Lakeshore",
                                "Stonegate", "Westbrook", "Amberfield", "Riverbend", "Fairport", "Cobalt",
                                "Maplewood", "Eastgate"};
constexpr Pool<14> kOrgKinds{"Logistics", "Dental Clinic", "Software", "Bakery", "Architects", "Consulting",
                             "Printing House", "Veterinary Center", "Language School", "Robotics",
                             "Law Office", "Travel Agency", "Fitness Club", "Analytics"};
constexpr Pool<6> kOrgSuffixes{"LLC", "Ltd", "Group", "Inc", "Co", "Partners"};
constexpr Pool<16> kStreets{"Elm Street", "Harbor Road", "Station Square", "Mill Lane", "Park Avenue",
                            "Cedar Boulevard", "Market Street", "River Embankment", "Garden Row",
                            "Bridge Street", "Hill Road", "Lake Drive", "Forest Way", "Kings Road",
                            "Church Lane", "Victory Prospect"};

constexpr Pool<18> kProductAdjectives{"Compact", "Classic", "Ultra", "Nordic", "Urban", "Travel", "Pro",
                                      "Eco", "Deluxe", "Vintage", "Smart", "Soft", "Rugged", "Mini",
                                      "Studio", "Everyday", "Alpine", "Coastal"};
constexpr Pool<18> kProductNouns{"Backpack", "Desk Lamp", "Water Bottle", "Throw Blanket", "Chef Knife",
                                 "Yoga Mat", "Umbrella", "Notebook", "Headphones", "Tea Kettle", "Scarf",
                                 "Cutting Board", "Wallet", "Sneakers", "Picture Frame", "Planter",
                                 "Wall Clock", "Duffel Bag"};
constexpr Pool<14> kColors{"Black", "White", "Navy Blue", "Forest Green", "Burgundy", "Sand Beige", "Graphite",
                           "Mustard Yellow", "Sky Blue", "Terracotta", "Silver", "Olive", "Coral", "Charcoal"};
constexpr Pool<14> kMaterials{"Cotton", "Stainless Steel", "Bamboo", "Recycled Polyester", "Oak Wood",
                              "Genuine Leather", "Borosilicate Glass", "Merino Wool", "Aluminum",
                              "Ceramic", "Silicone", "Linen", "Nylon", "Cork"};
constexpr Pool<10> kCategories{"Outdoor", "Home", "Kitchen", "Office", "Travel", "Sports", "Accessories",
                               "Decor", "Electronics", "Apparel"};

constexpr Pool<32> kSentences{
    "Photosynthesis converts light energy into chemical energy stored in glucose.",
    "The water cycle moves moisture between oceans, the atmosphere and land.",
    "Early printing presses made books far cheaper to produce.",
    "Volcanic soils are often rich in minerals that support agriculture.",
    "A balanced diet includes proteins, carbohydrates, fats and fiber.",
    "The Roman road network connected distant provinces to the capital.",
    "Plate tectonics explains the slow drift of the continents.",
    "Bees play an important role in pollinating many food crops.",
    "Fractions describe parts of a whole and can be added with a common denominator.",
    "Glaciers carve valleys as they advance and retreat over centuries.",
    "Students remember more when they test themselves instead of rereading.",
    "The heart pumps blood through a closed system of arteries and veins.",
    "Trade routes spread ideas, religions and technologies along with goods.",
    "Sound travels faster in water than in air.",
    "Wetlands filter pollutants and reduce the impact of floods.",
    "The invention of the telescope changed how people saw the night sky.",
    "Compound interest grows savings because interest is earned on interest.",
    "Many desert plants store water in thick leaves or stems.",
    "A hypothesis must be testable to be useful in science.",
    "Coral reefs host a quarter of all marine species.",
    "Reading aloud to children builds vocabulary and attention.",
    "Electric circuits need a closed loop for current to flow.",
    "The industrial revolution shifted work from farms to factories.",
    "Migratory birds navigate using the sun, stars and magnetic fields.",
    "Regular sleep helps the brain consolidate new memories.",
    "Maps use scale bars so that distances can be measured accurately.",
    "Clouds form when rising air cools and water vapor condenses.",
    "Ancient libraries preserved knowledge by copying manuscripts by hand.",
    "Recycling aluminum saves most of the energy needed to make it new.",
    "Vaccines train the immune system to recognize specific pathogens.",
    "The moon's gravity is the main cause of ocean tides.",
    "Good experiments change one variable at a time."};

template <std::size_t N>
const char* pick(const Pool<N>& pool, std::mt19937_64& rng) {
    return pool[std::uniform_int_distribution<std::size_t>(0, N - 1)(rng)];
}

std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

std::string slug(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

struct Card {
    EntryRecord record;
    std::string text;
};

Card make_card(Subset subset, std::mt19937_64& rng) {
    Card c;
    auto& r = c.record;
    switch (subset) {
        case Subset::Doctors: {
            r.name = std::string(pick(kFirstNames, rng)) + " " + pick(kSurnames, rng);
            r.fields["specialization"] = pick(kSpecializations, rng);
            r.fields["city"] = pick(kCities, rng);
            c.text = r.name + ", " + r.fields["specialization"] + ", " + r.fields["city"] + "\nReview: " +
                     pick(kReviews, rng);
            break;
        }
        case Subset::Movies: {
            r.name = std::string("The ") + pick(kTitleAdjectives, rng) + " " + pick(kTitleNouns, rng);
            r.fields["country"] = pick(kCountries, rng);
            r.fields["year"] = std::to_string(uniform(rng, 1950, 2024));
            c.text = r.name + ", " + r.fields["country"] + ", " + r.fields["year"] + "\nReview: " +
                     pick(kMovieReviews, rng);
            break;
        }
        case Subset::Organizations: {
            const std::string prefix = pick(kOrgPrefixes, rng);
            const std::string kind = pick(kOrgKinds, rng);
            r.name = prefix + " " + kind + " " + pick(kOrgSuffixes, rng);
            r.fields["address"] = std::to_string(uniform(rng, 1, 199)) + " " + pick(kStreets, rng) + ", " +
                                  pick(kCities, rng);
            r.fields["site"] = "www." + slug(prefix + kind) + ".example";
            c.text = r.name + ", " + r.fields["address"] + ", " + r.fields["site"];
            break;
        }
        case Subset::Products: {
            r.name = std::string(pick(kProductAdjectives, rng)) + " " + pick(kProductNouns, rng) + " " +
                     static_cast<char>('A' + uniform(rng, 0, 25)) + std::to_string(uniform(rng, 10, 99));
            r.fields["color"] = pick(kColors, rng);
            r.fields["material"] = pick(kMaterials, rng);
            c.text = "Product name: " + r.name + "\n* Color: " + r.fields["color"] + "\n* Material: " +
                     r.fields["material"] + "\n* Length: " + std::to_string(uniform(rng, 5, 200)) +
                     " cm\n* Category: " + pick(kCategories, rng);
            break;
        }
    }
    return c;
}

std::string builtin_passage(std::mt19937_64& rng) {
    const std::size_t n = uniform(rng, 3, 6);
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out += ' ';
        out += pick(kSentences, rng);
    }
    return out;
}

std::string strip_code_fence(std::string_view text) {
    std::string t = normalize(text);
    if (t.rfind("```", 0) != 0) return t;
    const auto nl = t.find('\n');
    if (nl == std::string::npos) return {};
    t.erase(0, nl + 1);
    const auto close = t.rfind("```");
    if (close != std::string::npos) t.erase(close);
    return t;
}

std::optional<std::string> value_text(const nlohmann::json& v) {
    if (v.is_string()) return normalize(v.get<std::string>());
    if (v.is_number_integer() || v.is_number_unsigned() || v.is_number_float() || v.is_boolean()) {
        return normalize(v.dump());
    }
    return std::nullopt;
}

// Records of a prediction, or nullopt for an unsupported top-level shape.
std::optional<std::vector<nlohmann::json>> prediction_records(const nlohmann::json& j) {
    if (j.is_array()) return std::vector<nlohmann::json>(j.begin(), j.end());
    if (!j.is_object()) return std::nullopt;
    if (j.contains("name")) return std::vector<nlohmann::json>{j};
    if (j.empty()) return std::vector<nlohmann::json>{};
    if (j.size() == 1 && j.begin().value().is_array()) {
        const auto& arr = j.begin().value();
        return std::vector<nlohmann::json>(arr.begin(), arr.end());
    }
    // Name-keyed map: {"Anna Bauer": {"city": ...}, ...}.
    std::vector<nlohmann::json> out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it.value().is_object()) return std::nullopt;
        nlohmann::json rec = it.value();
        rec["name"] = it.key();
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace

Subset parse_subset(std::string_view name) {
    if (name == "doctors") return Subset::Doctors;
    if (name == "movies") return Subset::Movies;
    if (name == "organizations") return Subset::Organizations;
    if (name == "products") return Subset::Products;
    throw std::invalid_argument("text2json: unknown subset '" + std::string(name) + "'");
}

std::string_view to_string(Subset s) {
    switch (s) {
        case Subset::Doctors: return "doctors";
        case Subset::Movies: return "movies";
        case Subset::Organizations: return "organizations";
        case Subset::Products: return "products";
    }
    return "?";
}

std::pair<std::string, std::string> required_fields(Subset s) {
    switch (s) {
        case Subset::Doctors: return {"specialization", "city"};
        case Subset::Movies: return {"country", "year"};
        case Subset::Organizations: return {"address", "site"};
        case Subset::Products: return {"material", "color"};
    }
    throw std::invalid_argument("text2json: bad subset");
}

std::string normalize(std::string_view text) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) throw std::runtime_error("text2json: NFC normalizer unavailable");
    icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    icu::UnicodeString n = nfc->normalize(u, status);
    if (U_FAILURE(status)) throw std::runtime_error("text2json: normalization failed");
    n.trim();
    std::string out;
    n.toUTF8String(out);
    return out;
}

std::vector<std::string> load_filler_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("text2json: cannot read filler corpus " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw std::runtime_error("text2json: error reading filler corpus " + path.string());
    std::vector<std::string> out;
    std::string para, line;
    std::istringstream lines(ss.str());
    auto flush = [&] {
        const std::string p = normalize(para);
        if (!p.empty()) out.push_back(p);
        para.clear();
    };
    while (std::getline(lines, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (normalize(line).empty()) {
            flush();
        } else {
            if (!para.empty()) para += '\n';
            para += line;
        }
    }
    flush();
    if (out.empty()) throw std::runtime_error("text2json: filler corpus has no passages");
    return out;
}

Text2JsonInstance generate_instance(Subset subset, std::uint64_t seed, const std::vector<std::string>& filler) {
    std::mt19937_64 rng(seed);
    Text2JsonInstance inst;
    inst.subset = subset;
    const std::size_t n_entries = uniform(rng, 3, 20);
    inst.n_passages = uniform(rng, 3, 10);

    std::vector<std::string> segments;
    std::set<std::string> names;
    while (inst.gold.size() < n_entries) {
        Card c = make_card(subset, rng);
        if (!names.insert(c.record.name).second) continue;
        inst.gold.push_back(std::move(c.record));
        segments.push_back(std::move(c.text));
    }
    for (std::size_t i = 0; i < inst.n_passages; ++i) {
        segments.push_back(filler.empty() ? builtin_passage(rng) : filler[uniform(rng, 0, filler.size() - 1)]);
    }
    std::shuffle(segments.begin(), segments.end(), rng);
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (i) inst.prompt_text += "\n\n";
        inst.prompt_text += segments[i];
    }
    return inst;
}

ScoreReport score(std::string_view prediction_text, const std::vector<EntryRecord>& gold) {
    ScoreReport rep;
    std::vector<nlohmann::json> predicted;
    const std::string body = strip_code_fence(prediction_text);
    if (!body.empty()) {
        nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
        std::optional<std::vector<nlohmann::json>> recs;
        if (!j.is_discarded()) recs = prediction_records(j);
        if (!recs) {
            rep.parse_error = true;
            rep.false_negatives = gold.size();
            return rep;
        }
        predicted = std::move(*recs);
    }

    std::unordered_map<std::string, std::size_t> gold_index;
    for (std::size_t i = 0; i < gold.size(); ++i) gold_index.emplace(normalize(gold[i].name), i);
    std::vector<bool> gold_hit(gold.size(), false);
    double total = 0.0;
    for (const auto& rec : predicted) {
        std::optional<std::string> name;
        if (rec.is_object() && rec.contains("name")) name = value_text(rec["name"]);
        const auto it = name ? gold_index.find(*name) : gold_index.end();
        if (it == gold_index.end() || gold_hit[it->second]) {
            ++rep.false_positives;
            continue;
        }
        gold_hit[it->second] = true;
        const EntryRecord& g = gold[it->second];
        const std::size_t m = g.fields.size();
        std::size_t correct = 0;
        for (const auto& [field, want] : g.fields) {
            if (!rec.contains(field)) continue;
            const auto got = value_text(rec[field]);
            if (got && *got == normalize(want)) ++correct;
        }
        const double s = static_cast<double>(1 + correct) / static_cast<double>(1 + m);
        rep.per_entry.emplace_back(g.name, s);
        total += s;
        ++rep.matched;
    }
    rep.false_negatives = static_cast<std::size_t>(std::count(gold_hit.begin(), gold_hit.end(), false));
    const std::size_t denom = rep.matched + rep.false_positives + rep.false_negatives;
    rep.score = denom == 0 ? 1.0 : total / static_cast<double>(denom);
    return rep;
}

std::string extraction_prompt(Subset subset) {
    switch (subset) {
        case Subset::Doctors:
            return "Find all doctor review cards in the text and compose a JSON object with the following fields: "
                   "name --- doctor's name; specialization --- specialization; city --- city. There is no need to "
                   "reproduce the reviews. Output only JSON. Do not skip cards and do not produce duplicates.";
        case Subset::Movies:
            return "Find all movie review cards in the text and compose a JSON object with the following fields: "
                   "name --- movie title; country --- country of production; year --- year of release. There is no "
                   "need to reproduce the reviews. Output only JSON. Do not skip cards and do not produce "
                   "duplicates.";
        case Subset::Organizations:
            return "Find all organization cards in the text and compose a JSON object with the following fields: "
                   "name --- the name of the organization (exactly as written in the card); address --- the "
                   "address; site --- the website. There is no need to reproduce the reviews. Output only JSON. Do "
                   "not skip cards and do not produce duplicates.";
        case Subset::Products:
            return "Find all product cards in the text and compose a JSON object with the following fields: name "
                   "--- product name (exactly as written in the card); material --- material; color --- color. "
                   "There is no need to reproduce the descriptions. Output only JSON. Do not skip cards and do not "
                   "produce duplicates.";
    }
    throw std::invalid_argument("text2json: bad subset");
}

std::string extraction_prompt(std::string_view subset) { return extraction_prompt(parse_subset(subset)); }

nlohmann::json to_json(const std::vector<EntryRecord>& records) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : records) {
        nlohmann::json o;
        o["name"] = r.name;
        for (const auto& [k, v] : r.fields) o[k] = v;
        arr.push_back(std::move(o));
    }
    return arr;
}

std::vector<EntryRecord> records_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw std::invalid_argument("text2json: gold must be a JSON array");
    std::vector<EntryRecord> out;
    for (const auto& o : j) {
        if (!o.is_object() || !o.contains("name") || !o["name"].is_string()) {
            throw std::invalid_argument("text2json: gold record without a string name");
        }
        EntryRecord r;
        r.name = o["name"].get<std::string>();
        for (auto it = o.begin(); it != o.end(); ++it) {
            if (it.key() == "name") continue;
            r.fields[it.key()] = it.value().is_string() ? it.value().get<std::string>() : it.value().dump();
        }
        out.push_back(std::move(r));
    }
    return out;
}

nlohmann::json to_json(const ScoreReport& report) {
    nlohmann::json j;
    j["score"] = report.score;
    j["matched"] = report.matched;
    j["false_positives"] = report.false_positives;
    j["false_negatives"] = report.false_negatives;
    j["parse_error"] = report.parse_error;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [name, s] : report.per_entry) entries.push_back({{"name", name}, {"score", s}});
    j["per_entry"] = std::move(entries);
    return j;
}

}  // namespace kvlab::text2json
