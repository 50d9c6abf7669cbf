#include "doctest.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "lcft/experiments.hpp"
#include "lcft/terms.hpp"

using namespace lcft;
using nlohmann::json;

namespace {

json base_config(const std::string& kind) {
    json c{{"kind", kind}, {"seed", 3}};
    if (kind == "fusion") c["params"] = {{"alphas", {1.5, 1.5, 1.5}}, {"gamma", 1.4142135623730951}};
    return c;
}

std::string error_field(const json& raw) {
    try {
        validate_config(raw);
    } catch (const Error& e) {
        return e.field();
    }
    return "<accepted>";
}

json with_param(json c, const std::string& key, const json& value) {
    c["params"][key] = value;
    return c;
}

// Invalid parameter values per kind. Every entry must be refused.
const std::map<std::string, std::vector<std::pair<std::string, json>>>& semantic_invalid() {
    static const std::map<std::string, std::vector<std::pair<std::string, json>>> m = {
        {"gff-cov",
         {{"l_max", 0}, {"l_max", 100000}, {"pairs", json::array()}, {"pairs", {{0, 0}}}, {"pairs", {{1}}},
          {"pairs", {{{1, 2, 3}, 0}}}, {"pairs", {{"a", 1}}}, {"sigmas", 0}, {"sigmas", -2}}},
        {"gmc-mass",
         {{"gammas", json::array()}, {"gammas", {2.5}}, {"gammas", {0.5, 0}}, {"l_max", 0}, {"n_theta", 4},
          {"n_theta", 16}, {"epsilon", 0}, {"epsilon", 0.01}, {"epsilon", 0.9}, {"gammas", {"one"}}}},
        {"kahane",
         {{"gamma", 2.5}, {"gamma", 1.6}, {"shift", 0}, {"shift", -1}, {"functionals", {"cube"}},
          {"functionals", json::array()}, {"n_theta", 4}, {"functionals", "inverse"}}},
        {"correlator",
         {{"points", {0, 1}}, {"alphas", {2, 2}}, {"alphas", {3, 3, 3}}, {"alphas", {1, 1, 1}},
          {"points", {0, 0, 1}}, {"mu", 0}, {"extra", {0}}, {"l_max", 0}, {"points", {{0, 1, 2}, 1, -1}},
          {"gamma", -0.5}}},
        {"kpz", {{"gamma", 2.5}, {"gamma", 0}, {"mu", -1}, {"alphas", {1, 1, 1}}, {"target_error", 0}}},
        {"fusion",
         {{"anchors", json::array()},
          {"anchors", {0}},
          {"anchors", {4}},
          {"anchors", {1, 2, 3}},
          {"separations", {0.1, 0.2, 0.05, 0.01}},
          {"separations", {0.1, 0.05, 0.01}},
          {"l_fine", 16},
          {"window", 0},
          {"log_correction", "sometimes"},
          {"ball_radii", {5}},
          {"separations", {0.1, 0.05, 0.02, 1e-9}}}},
        {"radial",
         {{"gamma", 2}, {"q", -1}, {"horizons", json::array()}, {"horizons", {0}}, {"k_max", -1},
          {"calibration_band", 10}, {"time_step", 1}, {"lateral_variance", -1}}},
        {"derivative",
         {{"indices", json::array()}, {"indices", {4}}, {"indices", {1, 1, 1, 1, 1}}, {"indices", {1, 2}},
          {"h", 0}, {"h", 0.5}, {"r", 0.9}, {"contour_points", 2}, {"indices", {1.5}}}},
        {"bpz",
         {{"r", 0}, {"r", 9}, {"gamma", 2}, {"degenerate", "22"}, {"test_function", "exp(z)"},
          {"test_function", "(z1-z)^0.5"}}},
        {"lemma-integral",
         {{"exponents", json::array()}, {"exponents", {-1}}, {"exponents", {7}}, {"levels", 2}, {"ball_radius", 3},
          {"half_width", 0.5}}},
    };
    return m;
}

std::vector<json> invalid_corpus() {
    std::vector<json> out;
    // top level
    out.push_back(json::array());
    out.push_back(json("kpz"));
    out.push_back(json::object());
    out.push_back({{"kind", 7}});
    out.push_back({{"kind", "kzp"}});
    for (const json& seed : {json(-1), json(1.5), json("7"), json(nullptr)})
        out.push_back({{"kind", "kpz"}, {"seed", seed}});
    for (const json& rep : {json(0), json(1), json(2.5), json("100"), json(-10), json(100000000)})
        out.push_back({{"kind", "kpz"}, {"replicas", rep}});
    out.push_back({{"kind", "kpz"}, {"out", ""}});
    out.push_back({{"kind", "kpz"}, {"out", 3}});
    out.push_back({{"kind", "kpz"}, {"params", json::array()}});
    out.push_back({{"kind", "kpz"}, {"extra", 1}});
    for (const ExperimentInfo& e : experiment_catalog()) {
        const json base = base_config(e.kind);
        out.push_back(with_param(base, "no_such_parameter", 1));
        // every known parameter with a value of the wrong type
        const ExperimentConfig ok = validate_config(base);
        for (auto it = ok.params.begin(); it != ok.params.end(); ++it) {
            out.push_back(with_param(base, it.key(), json::object()));
            if (!it.value().is_string()) out.push_back(with_param(base, it.key(), "bogus"));
            if (!it.value().is_null() && !it.value().is_array()) out.push_back(with_param(base, it.key(), json::array()));
        }
        for (const auto& [key, value] : semantic_invalid().at(e.kind)) out.push_back(with_param(base, key, value));
    }
    return out;
}

}  // namespace

TEST_CASE("catalog lists the ten kinds with anchors") {
    const std::vector<std::string> kinds = {"gff-cov", "gmc-mass", "kahane", "correlator", "kpz",
                                            "fusion",  "radial",   "derivative", "bpz", "lemma-integral"};
    const auto& c = experiment_catalog();
    REQUIRE(c.size() == kinds.size());
    for (std::size_t k = 0; k < kinds.size(); ++k) {
        CHECK(c[k].kind == kinds[k]);
        CHECK_FALSE(c[k].description.empty());
        CHECK_FALSE(c[k].anchor.empty());
        CHECK_FALSE(c[k].csv.empty());
        CHECK(find_experiment(kinds[k]) == &c[k]);
    }
    CHECK(&experiment_catalog() == &c);
    CHECK(find_experiment("nope") == nullptr);
}

TEST_CASE("gamma outside (0, 2) is a config error naming the field") {
    json c{{"kind", "kpz"}, {"params", {{"gamma", 2.5}}}};
    try {
        validate_config(c);
        FAIL("accepted");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "params.gamma");
        CHECK(std::string(e.what()).find("(0, 2)") != std::string::npos);
    }
}

TEST_CASE("library errors keep their category and gain the params prefix") {
    CHECK_THROWS_AS(validate_config(with_param(base_config("kpz"), "alphas", {1, 1, 1})), PreconditionError);
    CHECK(error_field(with_param(base_config("kpz"), "alphas", {1, 1, 1})) == "params.alphas");
    CHECK_THROWS_AS(validate_config(with_param(base_config("derivative"), "indices", {1, 1, 1, 1, 1})),
                    PreconditionError);
    CHECK(error_field(with_param(with_param(base_config("correlator"), "alphas", {2, 2, 2}), "points", {{0, 1}, 1, -1, 5})) ==
          "params.alphas");
    CHECK(error_field(with_param(base_config("correlator"), "points", {0, {1, 2, 3}, -1})) == "params.points[1]");
    CHECK(error_field(with_param(base_config("gmc-mass"), "gammas", {0.5, 3})) == "params.gammas[1]");
    CHECK(error_field(with_param(base_config("radial"), "time_step", 1)) == "params.time_step");
    CHECK(error_field({{"kind", "kpz"}, {"replicas", 1}}) == "replicas");
    CHECK(error_field({{"kind", "kpz"}, {"sed", 1}}) == "sed");
    CHECK_THROWS_AS(parse_config_text("{\"kind\": "), ParseError);
}

TEST_CASE("defaults are filled in and the fingerprint follows the computation") {
    const ExperimentConfig a = validate_config({{"kind", "kpz"}});
    CHECK(a.replicas == 2000);
    CHECK(a.seed == 1);
    CHECK(a.params.at("gamma") == 1.0);
    CHECK(a.params.at("points").size() == 3);
    // spelling out a default does not change the fingerprint
    const ExperimentConfig b = validate_config({{"kind", "kpz"}, {"params", {{"gamma", 1.0}, {"l_max", 32}}}});
    CHECK(a.fingerprint() == b.fingerprint());
    const ExperimentConfig c = validate_config({{"kind", "kpz"}, {"seed", 2}});
    CHECK(a.fingerprint() != c.fingerprint());
    const ExperimentConfig d = validate_config({{"kind", "kpz"}, {"out", "/tmp/x"}});
    CHECK(a.fingerprint() == d.fingerprint());
    CHECK(a.fingerprint_hex().size() == 16);
    // normalized params validate to themselves
    const ExperimentConfig again = validate_config(a.canonical());
    CHECK(again.canonical() == a.canonical());
    // symbolic kinds ignore the replica budget
    CHECK(validate_config({{"kind", "bpz"}, {"replicas", 500}}).replicas == 0);
}

TEST_CASE("every config of the invalid corpus is refused before execution") {
    const std::vector<json> corpus = invalid_corpus();
    CHECK(corpus.size() > 150);
    std::size_t refused = 0;
    for (const json& c : corpus) {
        CAPTURE(c.dump());
        try {
            validate_config(c);
            FAIL("accepted");
        } catch (const ConfigError& e) {
            CHECK_FALSE(e.field().empty());
            ++refused;
        } catch (const PreconditionError& e) {
            CHECK_FALSE(e.field().empty());
            ++refused;
        }
    }
    CHECK(refused == corpus.size());
    // and the bases are valid
    for (const ExperimentInfo& e : experiment_catalog()) CHECK_NOTHROW(validate_config(base_config(e.kind)));
}

TEST_CASE("random mutations of valid configs are refused or normalize cleanly") {
    std::mt19937_64 gen(99);
    const std::vector<json> junk = {json(-1), json(0), json(1e300), json("x"), json::array(), json::object(),
                                    json(nullptr), json(true)};
    int refused = 0, accepted = 0;
    for (int k = 0; k < 400; ++k) {
        const auto& info = experiment_catalog()[gen() % experiment_catalog().size()];
        const json base = base_config(info.kind);
        const ExperimentConfig ok = validate_config(base);
        auto it = ok.params.begin();
        std::advance(it, static_cast<long>(gen() % ok.params.size()));
        const json mutated = with_param(base, it.key(), junk[gen() % junk.size()]);
        try {
            const ExperimentConfig c = validate_config(mutated);
            // accepted values must survive a round trip
            CHECK(validate_config(c.canonical()).canonical() == c.canonical());
            ++accepted;
        } catch (const ConfigError&) {
            ++refused;
        } catch (const PreconditionError&) {
            ++refused;
        }
    }
    CHECK(refused > 300);
    CHECK(refused + accepted == 400);
}

TEST_CASE("symbolic runs produce records, CSV and text") {
    const ExperimentConfig c = validate_config(
        {{"kind", "bpz"}, {"params", {{"r", 4}, {"alphas", {1.0}}, {"test_function", "z^2*(z1-z)^-1"}}}});
    const ResultRecord r = run_experiment(c);
    CHECK(r.passed());
    CHECK(r.scalar("words")->value == 8.0);
    REQUIRE(r.series.size() == 1);
    const std::string csv = r.series[0].csv();
    CHECK(csv.rfind("index,word,length,coefficient,value\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);
    REQUIRE(r.text.size() == 2);
    CHECK(r.text[0].first == "operator");
    CHECK(r.text[0].second.find("1/64*gamma^6 * L[-4]") != std::string::npos);
    CHECK(r.text[1].first == "applied");
}

TEST_CASE("scalars are bitwise identical across runs and worker counts") {
    const json raw{{"kind", "gff-cov"}, {"seed", 8}, {"replicas", 400}, {"params", {{"l_max", 16}}}};
    const char* saved = std::getenv("LCFT_WORKERS");
    const std::string restore = saved ? saved : "";
    setenv("LCFT_WORKERS", "1", 1);
    const ResultRecord a = run_experiment(validate_config(raw));
    setenv("LCFT_WORKERS", "3", 1);
    const ResultRecord b = run_experiment(validate_config(raw));
    if (saved)
        setenv("LCFT_WORKERS", restore.c_str(), 1);
    else
        unsetenv("LCFT_WORKERS");
    REQUIRE(a.scalars.size() == b.scalars.size());
    for (std::size_t k = 0; k < a.scalars.size(); ++k) {
        CHECK(std::memcmp(&a.scalars[k].value, &b.scalars[k].value, sizeof(double)) == 0);
        CHECK(std::memcmp(&a.scalars[k].stderr_, &b.scalars[k].stderr_, sizeof(double)) == 0);
    }
    json ja = a.to_json(), jb = b.to_json();
    ja.erase("wall_clock_seconds");
    jb.erase("wall_clock_seconds");
    CHECK(ja.dump() == jb.dump());
    CHECK(ja.at("fingerprint") == a.config.fingerprint_hex());
}

TEST_CASE("result files") {
    const ResultRecord r = run_experiment(validate_config({{"kind", "lemma-integral"}, {"params", {{"exponents", {1, 4}}}}}));
    CHECK(r.passed());
    const auto dir = std::filesystem::temp_directory_path() / ("lcft-test-" + r.config.fingerprint_hex());
    const auto files = write_result(r, dir);
    CHECK(files.size() == 3);
    std::ifstream in(dir / "result.json");
    const json j = json::parse(in);
    CHECK(j.at("kind") == "lemma-integral");
    CHECK(j.at("pass") == true);
    CHECK(j.at("series").at("verdicts").at("rows") == 2);
    CHECK(j.at("params").at("exponents") == json({1.0, 4.0}));
    for (const char* key : {"fingerprint", "version", "scalars", "checks", "wall_clock_seconds", "seed", "replicas"})
        CHECK(j.contains(key));
    std::ifstream csv(dir / "verdicts.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "exponent,growth_exponent,increment_ratio,limit,verdict,expected");
    std::filesystem::remove_all(dir);
}

TEST_CASE("csv cells") {
    Series s{"t", {"a", "b"}, {{1.5, "x,y"}, {nullptr, "say \"hi\""}, {true, 3}}};
    CHECK(s.csv() == "a,b\n1.5,\"x,y\"\n,\"say \"\"hi\"\"\"\n1,3\n");
}
