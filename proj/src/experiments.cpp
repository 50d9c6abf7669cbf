#include "lcft/experiments.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "experiment_detail.hpp"
#include "lcft/hash.hpp"
#include "lcft/terms.hpp"

namespace lcft {

using nlohmann::json;

const std::vector<ExperimentInfo>& experiment_catalog() {
    static const std::vector<ExperimentInfo> catalog = {
        {"gff-cov", "empirical covariance of the spectral GFF sampler against the round-sphere Green function",
         "round-metric covariance of the zero-mean field",
         {"pairs: a_re,a_im,b_re,b_im,empirical,stderr,exact,truncated,truncation_bound,deviation"}},
        {"gmc-mass", "mean total chaos mass 4 pi for several gamma, spectral and mollified backends",
         "mollified chaos measure and its normalization", {"mass: gamma,backend,l_max,mean,stderr,expected"}},
        {"kahane", "convex functional ordering of chaos masses for a field and its shifted copy",
         "Proposition (Kahane convexity inequality)", {"kahane: functional,field,mean,stderr"}},
        {"correlator", "Monte Carlo estimate of the regularized correlation function G(z)",
         "reduction of correlations to negative chaos moments", {"estimate: value,stderr,replicas,l_max,nodes"}},
        {"kpz", "mu gamma int G(x;z) d^2x against (sum alpha - 2Q) G(z)", "Lemma KPZ",
         {"ratio: convention,value,stderr,expected"}},
        {"fusion", "log-log slope of G(x,y;z) as a pair straddling a ball boundary merges",
         "Lemma fusion (n-pair fusion estimate)",
         {"points: separation,estimate,stderr", "joint: separation,estimate,stderr"}},
        {"radial", "band moments of the drifted radial process against the lemma shape with one constant",
         "band moment bound for Brownian motion with drift",
         {"cells: horizon,band,estimate,stderr,probability,probability_stderr,shape,ratio"}},
        {"derivative", "symbolic expansion of d/dz_i G evaluated by Monte Carlo against finite differences",
         "first derivative formula and convergence of the class F_n",
         {"terms: index,re,im,stderr_re,stderr_im,convergent,contour",
          "agreement: part,expansion,expansion_stderr,fd,fd_stderr,difference,difference_stderr"}},
        {"bpz", "degenerate-field operators D_r as sums over compositions of r", "BPZ operators D_r",
         {"words: index,word,length,coefficient,value"}},
        {"lemma-integral", "convergence of the ball/complement integral of |x-y|^-a",
         "Lemma integral (phase boundary at a = 3)",
         {"verdicts: exponent,growth_exponent,increment_ratio,limit,verdict,expected",
          "values: exponent,cutoff,value"}},
    };
    return catalog;
}

const ExperimentInfo* find_experiment(const std::string& kind) {
    for (const ExperimentInfo& e : experiment_catalog())
        if (e.kind == kind) return &e;
    return nullptr;
}

json ExperimentConfig::canonical() const {
    return json{{"kind", kind}, {"seed", seed}, {"replicas", replicas}, {"params", params}};
}

std::uint64_t ExperimentConfig::fingerprint() const { return fnv1a64(canonical().dump()); }

std::string ExperimentConfig::fingerprint_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fingerprint()));
    return buf;
}

json parse_config_text(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config is not valid JSON: ") + e.what(), "<root>");
    }
}

json read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config file " + path.string());
    std::stringstream s;
    s << in.rdbuf();
    return parse_config_text(s.str());
}

ExperimentConfig validate_config(const json& raw) {
    if (!raw.is_object()) throw ConfigError("config must be a JSON object", "<root>");
    for (auto it = raw.begin(); it != raw.end(); ++it) {
        static const std::set<std::string> allowed{"kind", "seed", "replicas", "out", "params"};
        if (!allowed.count(it.key())) throw ConfigError("unknown key", it.key());
    }
    ExperimentConfig cfg;
    const auto kind = raw.find("kind");
    if (kind == raw.end()) throw ConfigError("missing experiment kind", "kind");
    if (!kind->is_string()) throw ConfigError("kind must be a string", "kind");
    cfg.kind = kind->get<std::string>();
    if (!find_experiment(cfg.kind)) throw ConfigError("unknown experiment kind '" + cfg.kind + "'", "kind");

    if (const auto s = raw.find("seed"); s != raw.end()) {
        if (!s->is_number_integer() || (s->is_number_integer() && !s->is_number_unsigned() && s->get<long long>() < 0))
            throw ConfigError("seed must be a non-negative 64-bit integer", "seed");
        cfg.seed = s->get<std::uint64_t>();
    }
    cfg.replicas = detail::default_replicas(cfg.kind);
    if (const auto r = raw.find("replicas"); r != raw.end()) {
        // symbolic kinds take no replicas; 0 is what their records echo
        const long long least = cfg.replicas > 0 ? 2 : 0;
        if (!r->is_number_integer() || r->get<long long>() < least)
            throw ConfigError("replicas must be an integer >= 2", "replicas");
        const auto n = r->get<unsigned long long>();
        if (cfg.replicas > 0) {
            if (n > detail::max_replicas(cfg.kind))
                throw ConfigError("replicas above the limit " + std::to_string(detail::max_replicas(cfg.kind)) +
                                      " for " + cfg.kind,
                                  "replicas");
            cfg.replicas = static_cast<std::size_t>(n);
        }
    }
    if (const auto o = raw.find("out"); o != raw.end()) {
        if (!o->is_string() || o->get<std::string>().empty()) throw ConfigError("out must be a non-empty path", "out");
        cfg.out = o->get<std::string>();
    }
    if (const auto p = raw.find("params"); p != raw.end()) {
        if (!p->is_object()) throw ConfigError("params must be an object", "params");
        cfg.params = *p;
    }
    detail::dispatch(cfg, nullptr);
    return cfg;
}

std::string Series::csv() const {
    auto cell = [](const json& v) -> std::string {
        if (v.is_null()) return "";
        if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
        if (v.is_number_integer()) return v.dump();
        if (v.is_number()) {
            const double d = v.get<double>();
            if (std::isnan(d)) return "nan";
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", d);
            return buf;
        }
        std::string s = v.is_string() ? v.get<std::string>() : v.dump();
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) {
            if (c == '"') q += '"';
            q += c;
        }
        return q + "\"";
    };
    std::string out;
    for (std::size_t c = 0; c < columns.size(); ++c) out += (c ? "," : "") + columns[c];
    out += "\n";
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + cell(row[c]);
        out += "\n";
    }
    return out;
}

bool ResultRecord::passed() const {
    for (const Check& c : checks)
        if (!c.pass) return false;
    return true;
}

const Scalar* ResultRecord::scalar(const std::string& name) const {
    for (const Scalar& s : scalars)
        if (s.name == name) return &s;
    return nullptr;
}

const Check* ResultRecord::check(const std::string& name) const {
    for (const Check& c : checks)
        if (c.name == name) return &c;
    return nullptr;
}

json ResultRecord::to_json() const {
    json j;
    j["version"] = version;
    j["fingerprint"] = config.fingerprint_hex();
    j["kind"] = config.kind;
    j["seed"] = config.seed;
    j["replicas"] = config.replicas;
    j["params"] = config.params;
    json sc = json::array();
    for (const Scalar& s : scalars) {
        json e{{"name", s.name}, {"value", s.value}};
        e["stderr"] = std::isnan(s.stderr_) ? json(nullptr) : json(s.stderr_);
        sc.push_back(e);
    }
    j["scalars"] = sc;
    json se = json::object();
    for (const Series& s : series) se[s.name] = {{"file", s.name + ".csv"}, {"columns", s.columns}, {"rows", s.rows.size()}};
    j["series"] = se;
    json ch = json::array();
    for (const Check& c : checks) ch.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    j["checks"] = ch;
    j["pass"] = passed();
    json tx = json::object();
    for (const auto& [name, body] : text) tx[name] = name + ".txt";
    j["text"] = tx;
    j["wall_clock_seconds"] = wall_clock;
    return j;
}

ResultRecord run_experiment(const ExperimentConfig& config) {
    const auto t0 = std::chrono::steady_clock::now();
    ResultRecord rec;
    rec.config = config;
    detail::dispatch(rec.config, &rec);
    rec.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

std::vector<std::filesystem::path> write_result(const ResultRecord& record, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw PreconditionError("cannot create output directory " + dir.string() + ": " + ec.message(), "out");
    std::vector<std::filesystem::path> written;
    auto put = [&](const std::filesystem::path& p, const std::string& body) {
        std::ofstream f(p, std::ios::binary);
        f << body;
        if (!f) throw PreconditionError("cannot write " + p.string(), "out");
        written.push_back(p);
    };
    put(dir / "result.json", record.to_json().dump(2) + "\n");
    for (const Series& s : record.series) put(dir / (s.name + ".csv"), s.csv());
    for (const auto& [name, body] : record.text) put(dir / (name + ".txt"), body);
    return written;
}

namespace detail {

ParamReader::ParamReader(const json& in, std::string prefix) : in_(in), prefix_(std::move(prefix)) {
    if (!in_.is_object()) throw ConfigError("params must be an object", prefix_);
}

void ParamReader::fail(const std::string& key, const std::string& msg) const { throw ConfigError(msg, path(key)); }

const json* ParamReader::find(const std::string& key) {
    used_.insert(key);
    const auto it = in_.find(key);
    return it == in_.end() ? nullptr : &*it;
}

double ParamReader::real(const std::string& key, double def) {
    double v = def;
    if (const json* j = find(key)) {
        if (!j->is_number()) fail(key, key + " must be a number");
        v = j->get<double>();
    }
    out_[key] = v;
    return v;
}

std::optional<double> ParamReader::optional_real(const std::string& key) {
    const json* j = find(key);
    if (!j || j->is_null()) {
        out_[key] = nullptr;
        return std::nullopt;
    }
    if (!j->is_number()) fail(key, key + " must be a number or null");
    out_[key] = j->get<double>();
    return j->get<double>();
}

long ParamReader::integer(const std::string& key, long def) {
    long v = def;
    if (const json* j = find(key)) {
        if (!j->is_number_integer()) fail(key, key + " must be an integer");
        if (j->is_number_unsigned() && j->get<unsigned long long>() > 1000000000ULL) fail(key, key + " is too large");
        v = static_cast<long>(j->get<long long>());
    }
    out_[key] = v;
    return v;
}

bool ParamReader::flag(const std::string& key, bool def) {
    bool v = def;
    if (const json* j = find(key)) {
        if (!j->is_boolean()) fail(key, key + " must be true or false");
        v = j->get<bool>();
    }
    out_[key] = v;
    return v;
}

std::string ParamReader::text(const std::string& key, const std::string& def) {
    std::string v = def;
    if (const json* j = find(key)) {
        if (!j->is_string()) fail(key, key + " must be a string");
        v = j->get<std::string>();
    }
    out_[key] = v;
    return v;
}

std::string ParamReader::choice(const std::string& key, const std::string& def,
                                const std::vector<std::string>& options) {
    const std::string v = text(key, def);
    for (const std::string& o : options)
        if (o == v) return v;
    std::string list;
    for (const std::string& o : options) list += (list.empty() ? "" : ", ") + o;
    fail(key, key + " must be one of: " + list);
}

std::vector<double> ParamReader::reals(const std::string& key, const std::vector<double>& def) {
    std::vector<double> v = def;
    if (const json* j = find(key)) {
        if (!j->is_array()) fail(key, key + " must be a list of numbers");
        v.clear();
        for (std::size_t k = 0; k < j->size(); ++k) {
            if (!(*j)[k].is_number()) fail(key + "[" + std::to_string(k) + "]", "expected a number");
            v.push_back((*j)[k].get<double>());
        }
    }
    out_[key] = v;
    return v;
}

std::vector<std::string> ParamReader::strings(const std::string& key, const std::vector<std::string>& def) {
    std::vector<std::string> v = def;
    if (const json* j = find(key)) {
        if (!j->is_array()) fail(key, key + " must be a list of strings");
        v.clear();
        for (std::size_t k = 0; k < j->size(); ++k) {
            if (!(*j)[k].is_string()) fail(key + "[" + std::to_string(k) + "]", "expected a string");
            v.push_back((*j)[k].get<std::string>());
        }
    }
    out_[key] = v;
    return v;
}

std::vector<long> ParamReader::integers(const std::string& key, const std::vector<long>& def) {
    std::vector<long> v = def;
    if (const json* j = find(key)) {
        if (!j->is_array()) fail(key, key + " must be a list of integers");
        v.clear();
        for (std::size_t k = 0; k < j->size(); ++k) {
            const json& e = (*j)[k];
            if (!e.is_number_integer() || std::llabs(e.get<long long>()) > 1000000)
                fail(key + "[" + std::to_string(k) + "]", "expected a small integer");
            v.push_back(static_cast<long>(e.get<long long>()));
        }
    }
    out_[key] = v;
    return v;
}

Complex ParamReader::point(const json& v, const std::string& where) const {
    if (v.is_number()) return {v.get<double>(), 0.0};
    if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number())
        return {v[0].get<double>(), v[1].get<double>()};
    fail(where, "a point is a number or [re, im]");
}

json point_json(Complex z) { return json::array({z.real(), z.imag()}); }

std::vector<Complex> ParamReader::points(const std::string& key, const std::vector<Complex>& def) {
    std::vector<Complex> v = def;
    if (const json* j = find(key)) {
        if (!j->is_array()) fail(key, key + " must be a list of points");
        v.clear();
        for (std::size_t k = 0; k < j->size(); ++k) v.push_back(point((*j)[k], key + "[" + std::to_string(k) + "]"));
    }
    json o = json::array();
    for (Complex z : v) o.push_back(point_json(z));
    out_[key] = o;
    return v;
}

std::vector<std::pair<Complex, Complex>> ParamReader::point_pairs(const std::string& key,
                                                                  const std::vector<std::pair<Complex, Complex>>& def) {
    std::vector<std::pair<Complex, Complex>> v = def;
    if (const json* j = find(key)) {
        if (!j->is_array()) fail(key, key + " must be a list of point pairs");
        v.clear();
        for (std::size_t k = 0; k < j->size(); ++k) {
            const std::string where = key + "[" + std::to_string(k) + "]";
            const json& e = (*j)[k];
            if (!e.is_array() || e.size() != 2) fail(where, "a pair is [point, point]");
            v.emplace_back(point(e[0], where + "[0]"), point(e[1], where + "[1]"));
        }
    }
    json o = json::array();
    for (const auto& [a, b] : v) o.push_back(json::array({point_json(a), point_json(b)}));
    out_[key] = o;
    return v;
}

void ParamReader::finish() const {
    for (auto it = in_.begin(); it != in_.end(); ++it)
        if (!used_.count(it.key())) fail(it.key(), "unknown parameter for this experiment kind");
}

}  // namespace detail
}  // namespace lcft
