#pragma once

#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lcft/experiments.hpp"

namespace lcft::detail {

using nlohmann::json;

/// Reads one params object: every accessor records the value it used
/// (defaults included) so `normalized()` is the complete parameter set.
class ParamReader {
  public:
    ParamReader(const json& in, std::string prefix);

    std::string path(const std::string& key) const { return prefix_ + "." + key; }
    [[noreturn]] void fail(const std::string& key, const std::string& msg) const;
    void check(bool ok, const std::string& key, const std::string& msg) const {
        if (!ok) fail(key, msg);
    }

    double real(const std::string& key, double def);
    std::optional<double> optional_real(const std::string& key);
    long integer(const std::string& key, long def);
    bool flag(const std::string& key, bool def);
    std::string choice(const std::string& key, const std::string& def, const std::vector<std::string>& options);
    std::string text(const std::string& key, const std::string& def);
    std::vector<double> reals(const std::string& key, const std::vector<double>& def);
    std::vector<std::string> strings(const std::string& key, const std::vector<std::string>& def);
    std::vector<long> integers(const std::string& key, const std::vector<long>& def);
    /// A point is a number or [re, im].
    std::vector<Complex> points(const std::string& key, const std::vector<Complex>& def);
    std::vector<std::pair<Complex, Complex>> point_pairs(const std::string& key,
                                                         const std::vector<std::pair<Complex, Complex>>& def);

    /// Rejects keys no accessor asked for.
    void finish() const;
    const json& normalized() const { return out_; }

  private:
    const json* find(const std::string& key);
    Complex point(const json& v, const std::string& where) const;

    const json& in_;
    std::string prefix_;
    std::set<std::string> used_;
    json out_ = json::object();
};

json point_json(Complex z);

/// Runs f and rethrows library errors with "params." prepended to the field.
template <class F>
void prefixed(F&& f) {
    auto field = [](const Error& e) {
        const std::string& f0 = e.field();
        return std::string("params.") + (f0.empty() ? "<kind>" : f0 == "momenta" ? "alphas" : f0);
    };
    try {
        f();
    } catch (const ConfigError& e) {
        throw ConfigError(e.what(), field(e));
    } catch (const PreconditionError& e) {
        throw PreconditionError(e.what(), field(e));
    } catch (const DegeneracyError& e) {
        throw DegeneracyError(e.what(), field(e));
    } catch (const DomainError& e) {
        throw DomainError(e.what(), field(e));
    }
}

std::size_t default_replicas(const std::string& kind);
std::size_t max_replicas(const std::string& kind);

/// Parses cfg.params for cfg.kind, replaces it by the normalized set and,
/// when `record` is given, runs the experiment into it.
void dispatch(ExperimentConfig& cfg, ResultRecord* record);

}  // namespace lcft::detail
