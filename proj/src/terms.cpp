#include "lcft/terms.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <tuple>

namespace lcft {

// ---------------------------------------------------------------- rationals

namespace {

std::int64_t narrow(__int128 v) {
    if (v > INT64_MAX || v < -INT64_MAX) throw DomainError("rational coefficient overflow");
    return static_cast<std::int64_t>(v);
}

Rational make(__int128 n, __int128 d) {
    if (d == 0) throw DomainError("rational with zero denominator");
    if (d < 0) n = -n, d = -d;
    __int128 a = n < 0 ? -n : n, b = d;
    while (b != 0) {
        const __int128 t = a % b;
        a = b;
        b = t;
    }
    if (a > 1) n /= a, d /= a;
    return Rational(narrow(n), narrow(d));
}

}  // namespace

Rational::Rational(std::int64_t num, std::int64_t den) : num_(num), den_(den) {
    if (den == 0) throw DomainError("rational with zero denominator");
    if (den_ < 0) num_ = -num_, den_ = -den_;
    const std::int64_t g = std::gcd(num_ < 0 ? -num_ : num_, den_);
    if (g > 1) num_ /= g, den_ /= g;
    if (num_ == 0) den_ = 1;
}

Rational Rational::operator+(const Rational& o) const {
    return make(static_cast<__int128>(num_) * o.den_ + static_cast<__int128>(o.num_) * den_,
                static_cast<__int128>(den_) * o.den_);
}

Rational Rational::operator*(const Rational& o) const {
    return make(static_cast<__int128>(num_) * o.num_, static_cast<__int128>(den_) * o.den_);
}

Rational Rational::operator/(const Rational& o) const {
    if (o.is_zero()) throw DomainError("division by a zero rational");
    return make(static_cast<__int128>(num_) * o.den_, static_cast<__int128>(den_) * o.num_);
}

std::string Rational::str() const {
    return den_ == 1 ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_);
}

Rational Rational::parse(const std::string& text) {
    const auto slash = text.find('/');
    try {
        std::size_t used = 0;
        const long long n = std::stoll(text.substr(0, slash), &used);
        if (used != (slash == std::string::npos ? text.size() : slash)) throw ParseError("bad rational '" + text + "'");
        if (slash == std::string::npos) return Rational(n);
        const std::string ds = text.substr(slash + 1);
        const long long d = std::stoll(ds, &used);
        if (used != ds.size() || d == 0) throw ParseError("bad rational '" + text + "'");
        return Rational(n, d);
    } catch (const std::logic_error&) {
        throw ParseError("bad rational '" + text + "'");
    }
}

// ---------------------------------------------------------------- coefficients

Coefficient Coefficient::symbol(const std::string& name, int power) {
    Coefficient c;
    c.sym_[name] = power;
    return c * Coefficient();
}

Coefficient Coefficient::operator*(const Coefficient& o) const {
    Coefficient c;
    c.q_ = q_ * o.q_;
    c.sym_ = sym_;
    for (const auto& [name, p] : o.sym_) c.sym_[name] += p;
    auto it = c.sym_.find("i");
    if (it != c.sym_.end()) {
        const int e = ((it->second % 4) + 4) % 4;
        if (e >= 2) c.q_ = -c.q_;
        it->second = e % 2;
    }
    for (auto i = c.sym_.begin(); i != c.sym_.end();) i = i->second == 0 ? c.sym_.erase(i) : std::next(i);
    return c;
}

Coefficient Coefficient::operator*(const Rational& o) const { return with_rational(q_ * o); }

Coefficient Coefficient::with_rational(Rational q) const {
    Coefficient c = *this;
    c.q_ = q;
    return c;
}

std::string Coefficient::monomial() const {
    std::string out;
    for (const auto& [name, p] : sym_) {
        if (!out.empty()) out += '*';
        out += name;
        if (p != 1) out += '^' + std::to_string(p);
    }
    return out;
}

std::string Coefficient::str() const {
    const std::string m = monomial();
    return m.empty() ? q_.str() : q_.str() + "*" + m;
}

Coefficient Coefficient::parse(const std::string& text) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, '*');) parts.push_back(p);
    if (parts.empty()) throw ParseError("empty coefficient");
    Coefficient c(Rational::parse(parts[0]));
    for (std::size_t k = 1; k < parts.size(); ++k) {
        const auto hat = parts[k].find('^');
        const std::string name = parts[k].substr(0, hat);
        if (name.empty() || !std::isalpha(static_cast<unsigned char>(name[0])))
            throw ParseError("bad symbol '" + parts[k] + "'");
        int p = 1;
        if (hat != std::string::npos) {
            try {
                p = std::stoi(parts[k].substr(hat + 1));
            } catch (const std::logic_error&) {
                throw ParseError("bad exponent in '" + parts[k] + "'");
            }
        }
        c = c * symbol(name, p);
    }
    return c;
}

Complex Coefficient::value(const std::function<double(const std::string&)>& lookup) const {
    Complex v = q_.value();
    for (const auto& [name, p] : sym_) {
        if (name == "i")
            v *= Complex(0.0, 1.0);
        else
            v *= std::pow(lookup(name), p);
    }
    return v;
}

// ---------------------------------------------------------------- factors

std::string Slot::str() const { return (z ? "z" : "x") + std::to_string(index); }

std::string Kernel::str() const { return "(" + u.str() + "-" + v.str() + ")^-" + std::to_string(power); }

std::string FFactor::str() const {
    return "F" + std::to_string(ball) + "(x" + std::to_string(a) + ",x" + std::to_string(b) + ")";
}

std::string Indicator::str() const {
    return std::string(inside ? "in" : "out") + "(x" + std::to_string(var) + ",B" + std::to_string(ball) + ")";
}

std::pair<double, double> BallGeometry::annulus(int j) const {
    const double w = r / (4.0 * j * (j + 1));
    return {radius(j) - 0.5 * w, radius(j) + 0.5 * w};
}

// ---------------------------------------------------------------- phi

namespace {

Phi node(PhiNode n) { return std::make_shared<const PhiNode>(std::move(n)); }

// Orientation of a kernel pair: x before z, lower index first.
bool oriented(Slot u, Slot v) {
    if (u.z != v.z) return !u.z;
    return u.index < v.index;
}

}  // namespace

Phi phi_indicator(int var, int ball, bool inside) {
    PhiNode n;
    n.op = PhiNode::Op::Ind;
    n.u = Slot::x(var);
    n.ball = ball;
    n.inside = inside;
    return node(std::move(n));
}

Phi phi_kernel(Slot u, Slot v, int power) {
    PhiNode n;
    n.op = PhiNode::Op::Ker;
    n.u = u;
    n.v = v;
    n.power = power;
    return node(std::move(n));
}

Phi phi_F(int ball, int a, int b) {
    PhiNode n;
    n.op = PhiNode::Op::F;
    n.ball = ball;
    n.u = Slot::x(a);
    n.v = Slot::x(b);
    return node(std::move(n));
}

Phi phi_mul(std::vector<Phi> args) {
    PhiNode n;
    n.op = PhiNode::Op::Mul;
    n.args = std::move(args);
    return node(std::move(n));
}

Phi phi_dq(int a, int b, Phi e) {
    PhiNode n;
    n.op = PhiNode::Op::DQ;
    n.u = Slot::x(a);
    n.v = Slot::x(b);
    n.args = {std::move(e)};
    return node(std::move(n));
}

Phi phi_d(Slot u, Phi e) {
    PhiNode n;
    n.op = PhiNode::Op::D;
    n.u = u;
    n.args = {std::move(e)};
    return node(std::move(n));
}

std::string phi_str(const Phi& p) {
    switch (p->op) {
        case PhiNode::Op::Ind:
            return std::string("(") + (p->inside ? "in " : "out ") + p->u.str() + " B" + std::to_string(p->ball) + ")";
        case PhiNode::Op::Ker:
            return "(k " + p->u.str() + " " + p->v.str() + " " + std::to_string(p->power) + ")";
        case PhiNode::Op::F:
            return "(F" + std::to_string(p->ball) + " " + p->u.str() + " " + p->v.str() + ")";
        case PhiNode::Op::Mul: {
            std::string s = "(mul";
            for (const Phi& a : p->args) s += " " + phi_str(a);
            return s + ")";
        }
        case PhiNode::Op::DQ:
            return "(dq " + p->u.str() + " " + p->v.str() + " " + phi_str(p->args[0]) + ")";
        case PhiNode::Op::D:
            return "(d " + p->u.str() + " " + phi_str(p->args[0]) + ")";
    }
    return {};
}

bool phi_depends(const Phi& p, Slot s) {
    switch (p->op) {
        case PhiNode::Op::Ind:
            return p->u == s;
        case PhiNode::Op::Ker:
        case PhiNode::Op::F:
            return p->u == s || p->v == s;
        case PhiNode::Op::Mul:
            return std::any_of(p->args.begin(), p->args.end(), [&](const Phi& a) { return phi_depends(a, s); });
        case PhiNode::Op::DQ:
            // DQ mentions both variables even when E depends on one only.
            return p->u == s || p->v == s || phi_depends(p->args[0], s);
        case PhiNode::Op::D:
            return phi_depends(p->args[0], s);
    }
    return false;
}

namespace {

Phi map_slots(const Phi& p, const std::function<Slot(Slot)>& f) {
    PhiNode n = *p;
    if (p->op != PhiNode::Op::Mul) {
        n.u = f(p->u);
        if (p->op == PhiNode::Op::Ker || p->op == PhiNode::Op::F || p->op == PhiNode::Op::DQ) n.v = f(p->v);
    }
    for (Phi& a : n.args) a = map_slots(a, f);
    return node(std::move(n));
}

}  // namespace

Phi phi_swap(const Phi& p, int a, int b) {
    return map_slots(p, [a, b](Slot s) {
        if (s.z) return s;
        if (s.index == a) return Slot::x(b);
        if (s.index == b) return Slot::x(a);
        return s;
    });
}

Phi phi_relabel(const Phi& p, const std::vector<int>& perm) {
    return map_slots(p, [&perm](Slot s) { return s.z ? s : Slot::x(perm.at(static_cast<std::size_t>(s.index))); });
}

namespace {

// Returns the normalized expression and a sign (0 when it vanishes
// identically).
std::pair<Phi, int> normalize(const Phi& p) {
    switch (p->op) {
        case PhiNode::Op::Ind:
        case PhiNode::Op::F:
            return {p, 1};
        case PhiNode::Op::Ker: {
            if (p->u == p->v) throw RewriteError("kernel with coinciding arguments");
            if (oriented(p->u, p->v)) return {p, 1};
            return {phi_kernel(p->v, p->u, p->power), p->power % 2 ? -1 : 1};
        }
        case PhiNode::Op::Mul: {
            int sign = 1;
            std::vector<Phi> flat;
            for (const Phi& a : p->args) {
                auto [na, s] = normalize(a);
                if (s == 0) return {p, 0};
                sign *= s;
                if (na->op == PhiNode::Op::Mul)
                    flat.insert(flat.end(), na->args.begin(), na->args.end());
                else
                    flat.push_back(na);
            }
            // Indicators are idempotent.
            std::vector<std::pair<std::string, Phi>> keyed;
            for (const Phi& a : flat) keyed.emplace_back(phi_str(a), a);
            std::sort(keyed.begin(), keyed.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
            std::vector<Phi> out;
            for (std::size_t k = 0; k < keyed.size(); ++k) {
                if (k > 0 && keyed[k].first == keyed[k - 1].first && keyed[k].second->op == PhiNode::Op::Ind) continue;
                out.push_back(keyed[k].second);
            }
            if (out.size() == 1) return {out[0], sign};
            return {phi_mul(std::move(out)), sign};
        }
        case PhiNode::Op::DQ: {
            auto [e, s] = normalize(p->args[0]);
            if (s == 0) return {p, 0};
            const int a = p->u.index, b = p->v.index;
            auto [sw, ss] = normalize(phi_swap(e, a, b));
            const std::string es = phi_str(e), sws = phi_str(sw);
            if (sws == es && ss == 1) return {p, 0};  // symmetric: the quotient vanishes
            // DQ(a, b, E) = -DQ(a, b, E[a <-> b]); keep the smaller spelling.
            int sign = a < b ? s : -s;
            if (sws < es) {
                e = sw;
                sign *= -ss;
            }
            return {phi_dq(std::min(a, b), std::max(a, b), e), sign};
        }
        case PhiNode::Op::D: {
            auto [e, s] = normalize(p->args[0]);
            if (s == 0 || !phi_depends(e, p->u)) return {p, 0};
            return {phi_d(p->u, e), s};
        }
    }
    return {p, 1};
}

}  // namespace

Phi phi_normalize(const Phi& p) { return normalize(p).first; }

// ---------------------------------------------------------------- terms

bool Term::on_contour(int var) const {
    return std::any_of(contours.begin(), contours.end(), [var](const Contour& c) { return c.var == var; });
}

int Term::contour_ball(int var) const {
    for (const Contour& c : contours)
        if (c.var == var) return c.ball;
    return 0;
}

void Term::add_kernel(Slot u, Slot v, int power) {
    if (u == v) throw RewriteError("kernel with coinciding arguments " + u.str());
    if (power < 1) throw RewriteError("kernel power must be positive");
    if (!oriented(u, v)) {
        std::swap(u, v);
        if (power % 2) coeff = coeff * Rational(-1);
    }
    for (Kernel& k : kernels)
        if (k.u == u && k.v == v) {
            k.power += power;
            return;
        }
    kernels.push_back({u, v, power});
}

void Term::add_F(int ball, int a, int b) {
    if (a == b) throw RewriteError("F_j(x_a, x_b) requires a != b");
    fs.push_back({ball, a, b});
}

void Term::add_indicator(int var, int ball, bool inside) {
    const Indicator ind{var, ball, inside};
    if (std::find(inds.begin(), inds.end(), ind) == inds.end()) inds.push_back(ind);
}

void Term::sort() {
    std::vector<Kernel> ks;
    ks.swap(kernels);
    for (const Kernel& k : ks) add_kernel(k.u, k.v, k.power);
    std::sort(kernels.begin(), kernels.end(), [](const Kernel& a, const Kernel& b) {
        if (a.u != b.u) return a.u < b.u;
        if (a.v != b.v) return a.v < b.v;
        return a.power < b.power;
    });
    std::sort(fs.begin(), fs.end(), [](const FFactor& a, const FFactor& b) {
        return std::tie(a.ball, a.a, a.b) < std::tie(b.ball, b.a, b.b);
    });
    std::sort(inds.begin(), inds.end(), [](const Indicator& a, const Indicator& b) {
        return std::make_tuple(a.var, a.ball, !a.inside) < std::make_tuple(b.var, b.ball, !b.inside);
    });
    inds.erase(std::unique(inds.begin(), inds.end()), inds.end());
    std::sort(contours.begin(), contours.end(), [](const Contour& a, const Contour& b) { return a.var < b.var; });
    std::vector<std::pair<std::string, Phi>> keyed;
    for (const Phi& p : phis) {
        auto [np, s] = normalize(p);
        if (s == 0) {
            coeff = coeff.with_rational(Rational(0));
            continue;
        }
        if (s < 0) coeff = coeff * Rational(-1);
        if (np->op == PhiNode::Op::Mul) {
            for (const Phi& a : np->args) keyed.emplace_back(phi_str(a), a);
        } else {
            keyed.emplace_back(phi_str(np), np);
        }
    }
    std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    phis.clear();
    for (auto& [k, p] : keyed) phis.push_back(p);
}

std::string Term::structure() const {
    std::ostringstream out;
    auto field = [&out](const std::vector<std::string>& items, const char* sep) {
        if (items.empty()) {
            out << "-";
            return;
        }
        for (std::size_t k = 0; k < items.size(); ++k) out << (k ? sep : "") << items[k];
    };
    std::vector<std::string> ks;
    for (const Kernel& k : kernels) ks.push_back(k.str());
    for (const FFactor& f : fs) ks.push_back(f.str());
    field(ks, " ");
    out << " | ";
    std::vector<bool> mentioned(static_cast<std::size_t>(vars) + 1, false);
    auto mark = [&mentioned](Slot s) {
        if (!s.z && s.index >= 1 && static_cast<std::size_t>(s.index) < mentioned.size())
            mentioned[static_cast<std::size_t>(s.index)] = true;
    };
    for (const Kernel& k : kernels) mark(k.u), mark(k.v);
    for (const FFactor& f : fs) mark(Slot::x(f.a)), mark(Slot::x(f.b));
    for (const Indicator& i : inds) mark(Slot::x(i.var));
    for (const Contour& c : contours) mark(Slot::x(c.var));
    for (const Phi& p : phis)
        for (int k = 1; k <= vars; ++k)
            if (phi_depends(p, Slot::x(k))) mark(Slot::x(k));
    std::vector<std::string> is;
    for (const Indicator& i : inds) is.push_back(i.str());
    for (int k = 1; k <= vars; ++k)
        if (!mentioned[static_cast<std::size_t>(k)]) is.push_back("free(x" + std::to_string(k) + ")");
    field(is, " ");
    out << " | ";
    std::vector<std::string> cs;
    for (const Contour& c : contours) cs.push_back("x" + std::to_string(c.var) + "@dB" + std::to_string(c.ball));
    field(cs, " ");
    out << " | ";
    std::vector<std::string> ps;
    for (const Phi& p : phis) ps.push_back(phi_str(p));
    field(ps, " ; ");
    return out.str();
}

std::string Term::str() const { return coeff.str() + " | " + structure(); }

// ---------------------------------------------------------------- parsing

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> words(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

Slot parse_slot(const std::string& s) {
    if (s.size() < 2 || (s[0] != 'x' && s[0] != 'z')) throw ParseError("bad slot '" + s + "'");
    int k = 0;
    try {
        std::size_t used = 0;
        k = std::stoi(s.substr(1), &used);
        if (used != s.size() - 1) throw ParseError("bad slot '" + s + "'");
    } catch (const std::logic_error&) {
        throw ParseError("bad slot '" + s + "'");
    }
    if (k < 1) throw ParseError("slot index must be positive: '" + s + "'");
    return s[0] == 'z' ? Slot::zi(k) : Slot::x(k);
}

int parse_ball(const std::string& s) {
    if (s.size() < 2 || s[0] != 'B') throw ParseError("bad ball '" + s + "'");
    try {
        const int j = std::stoi(s.substr(1));
        if (j < 1) throw ParseError("bad ball '" + s + "'");
        return j;
    } catch (const std::logic_error&) {
        throw ParseError("bad ball '" + s + "'");
    }
}

// "name(arg1,arg2)" -> {name, args}
std::pair<std::string, std::vector<std::string>> call(const std::string& tok) {
    const auto open = tok.find('('), close = tok.rfind(')');
    if (open == std::string::npos || close == std::string::npos || close < open)
        throw ParseError("bad factor '" + tok + "'");
    std::vector<std::string> args;
    std::stringstream ss(tok.substr(open + 1, close - open - 1));
    for (std::string a; std::getline(ss, a, ',');) args.push_back(a);
    return {tok.substr(0, open), args};
}

class PhiParser {
  public:
    explicit PhiParser(const std::string& s) {
        std::string spaced;
        for (char c : s) {
            if (c == '(' || c == ')') {
                spaced += ' ';
                spaced += c;
                spaced += ' ';
            } else {
                spaced += c;
            }
        }
        toks_ = words(spaced);
    }

    Phi parse() {
        Phi p = expr();
        if (pos_ != toks_.size()) throw ParseError("trailing tokens in phi expression");
        return p;
    }

  private:
    const std::string& next() {
        if (pos_ >= toks_.size()) throw ParseError("truncated phi expression");
        return toks_[pos_++];
    }
    void expect(const std::string& t) {
        if (next() != t) throw ParseError("expected '" + t + "' in phi expression");
    }
    int number() {
        const std::string& t = next();
        try {
            return std::stoi(t);
        } catch (const std::logic_error&) {
            throw ParseError("bad number '" + t + "' in phi expression");
        }
    }
    Phi expr() {
        expect("(");
        const std::string head = next();
        Phi out;
        if (head == "in" || head == "out") {
            const Slot x = parse_slot(next());
            if (x.z) throw ParseError("indicator on an insertion point");
            out = phi_indicator(x.index, parse_ball(next()), head == "in");
        } else if (head == "k") {
            const Slot u = parse_slot(next());
            const Slot v = parse_slot(next());
            out = phi_kernel(u, v, number());
        } else if (head.size() > 1 && head[0] == 'F') {
            const Slot a = parse_slot(next()), b = parse_slot(next());
            if (a.z || b.z || a == b) throw ParseError("bad F factor in phi expression");
            out = phi_F(std::stoi(head.substr(1)), a.index, b.index);
        } else if (head == "mul") {
            std::vector<Phi> args;
            while (pos_ < toks_.size() && toks_[pos_] == "(") args.push_back(expr());
            if (args.empty()) throw ParseError("empty product in phi expression");
            out = phi_mul(std::move(args));
        } else if (head == "dq") {
            const Slot a = parse_slot(next()), b = parse_slot(next());
            if (a.z || b.z || a == b) throw ParseError("bad difference quotient");
            out = phi_dq(a.index, b.index, expr());
        } else if (head == "d") {
            const Slot u = parse_slot(next());
            out = phi_d(u, expr());
        } else {
            throw ParseError("unknown phi node '" + head + "'");
        }
        expect(")");
        return out;
    }

    std::vector<std::string> toks_;
    std::size_t pos_ = 0;
};

void note_var(int& vars, Slot s) {
    if (!s.z) vars = std::max(vars, s.index);
}

void note_phi_vars(int& vars, const Phi& p) {
    if (p->op != PhiNode::Op::Mul) {
        note_var(vars, p->u);
        if (p->op == PhiNode::Op::Ker || p->op == PhiNode::Op::F || p->op == PhiNode::Op::DQ) note_var(vars, p->v);
    }
    for (const Phi& a : p->args) note_phi_vars(vars, a);
}

}  // namespace

Term Term::parse(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, '|');) fields.push_back(trim(f));
    if (fields.size() != 5) throw ParseError("a term line has 5 fields separated by '|'");
    Term t;
    t.coeff = Coefficient::parse(fields[0]);
    int vars = 0;
    if (fields[1] != "-") {
        for (const std::string& w : words(fields[1])) {
            if (w[0] == 'F') {
                auto [name, args] = call(w);
                if (args.size() != 2) throw ParseError("F takes two arguments: '" + w + "'");
                const Slot a = parse_slot(args[0]), b = parse_slot(args[1]);
                if (a.z || b.z) throw ParseError("F arguments are gamma-insertions: '" + w + "'");
                int j = 0;
                try {
                    j = std::stoi(name.substr(1));
                } catch (const std::logic_error&) {
                    throw ParseError("bad F index in '" + w + "'");
                }
                if (j < 1) throw ParseError("bad F index in '" + w + "'");
                t.add_F(j, a.index, b.index);
                note_var(vars, a);
                note_var(vars, b);
            } else {
                // (u-v)^-p
                const auto close = w.find(')'), dash = w.find('-');
                if (w[0] != '(' || close == std::string::npos || dash == std::string::npos || dash > close ||
                    w.compare(close, 3, ")^-") != 0)
                    throw ParseError("bad kernel '" + w + "'");
                const Slot u = parse_slot(w.substr(1, dash - 1)), v = parse_slot(w.substr(dash + 1, close - dash - 1));
                int p = 0;
                try {
                    p = std::stoi(w.substr(close + 3));
                } catch (const std::logic_error&) {
                    throw ParseError("bad kernel power in '" + w + "'");
                }
                t.add_kernel(u, v, p);
                note_var(vars, u);
                note_var(vars, v);
            }
        }
    }
    if (fields[2] != "-") {
        for (const std::string& w : words(fields[2])) {
            auto [name, args] = call(w);
            if (name == "free") {
                if (args.size() != 1) throw ParseError("bad free marker '" + w + "'");
                note_var(vars, parse_slot(args[0]));
                continue;
            }
            if ((name != "in" && name != "out") || args.size() != 2) throw ParseError("bad indicator '" + w + "'");
            const Slot x = parse_slot(args[0]);
            if (x.z) throw ParseError("indicator on an insertion point: '" + w + "'");
            t.add_indicator(x.index, parse_ball(args[1]), name == "in");
            note_var(vars, x);
        }
    }
    if (fields[3] != "-") {
        for (const std::string& w : words(fields[3])) {
            const auto at = w.find("@d");
            if (at == std::string::npos) throw ParseError("bad contour '" + w + "'");
            const Slot x = parse_slot(w.substr(0, at));
            if (x.z) throw ParseError("contour on an insertion point: '" + w + "'");
            if (t.on_contour(x.index)) throw ParseError("variable bound to two contours: '" + w + "'");
            t.contours.push_back({x.index, parse_ball(w.substr(at + 2))});
            note_var(vars, x);
        }
    }
    if (fields[4] != "-") {
        std::stringstream ps(fields[4]);
        for (std::string e; std::getline(ps, e, ';');) {
            const std::string te = trim(e);
            if (te.empty()) throw ParseError("empty phi expression");
            Phi p = PhiParser(te).parse();
            note_phi_vars(vars, p);
            t.phis.push_back(std::move(p));
        }
    }
    t.vars = vars;
    t.sort();
    return t;
}

std::string TermList::serialize() const {
    std::ostringstream out;
    out << "# terms balls=";
    for (std::size_t j = 0; j < centers.size(); ++j) out << (j ? "," : "") << centers[j];
    out << " conj=" << (conjugate ? 1 : 0) << "\n";
    for (const Term& t : terms) out << t.str() << "\n";
    return out.str();
}

TermList TermList::parse(const std::string& text) {
    TermList list;
    std::istringstream in(text);
    bool header = false;
    for (std::string line; std::getline(in, line);) {
        const std::string l = trim(line);
        if (l.empty()) continue;
        if (l[0] == '#') {
            if (l.rfind("# terms", 0) != 0) continue;
            for (const std::string& w : words(l.substr(7))) {
                if (w.rfind("balls=", 0) == 0) {
                    std::stringstream ss(w.substr(6));
                    for (std::string c; std::getline(ss, c, ',');) {
                        try {
                            list.centers.push_back(std::stoi(c));
                        } catch (const std::logic_error&) {
                            throw ParseError("bad ball table '" + w + "'");
                        }
                    }
                } else if (w == "conj=1") {
                    list.conjugate = true;
                } else if (w != "conj=0") {
                    throw ParseError("unknown header field '" + w + "'");
                }
            }
            header = true;
            continue;
        }
        if (!header) throw ParseError("missing '# terms' header");
        list.terms.push_back(Term::parse(l));
    }
    if (!header) throw ParseError("missing '# terms' header");
    return list;
}

// ---------------------------------------------------------------- canonical form

namespace {

Term relabeled(const Term& t, const std::vector<int>& perm) {
    Term r;
    r.coeff = t.coeff;
    r.vars = t.vars;
    auto px = [&perm](int k) { return perm[static_cast<std::size_t>(k)]; };
    auto ps = [&](Slot s) { return s.z ? s : Slot::x(px(s.index)); };
    for (const Kernel& k : t.kernels) r.add_kernel(ps(k.u), ps(k.v), k.power);
    for (const FFactor& f : t.fs) r.fs.push_back({f.ball, px(f.a), px(f.b)});
    for (const Indicator& i : t.inds) r.inds.push_back({px(i.var), i.ball, i.inside});
    for (const Contour& c : t.contours) r.contours.push_back({px(c.var), c.ball});
    for (const Phi& p : t.phis) r.phis.push_back(phi_relabel(p, perm));
    r.sort();
    return r;
}

// Local view of a phi tree from one variable. Both DQ slots see the union
// of their views since normalization may exchange them.
void phi_tokens(const Phi& p, Slot me, int depth, std::vector<std::string>& tok) {
    const std::string d = std::to_string(depth);
    auto other = [](Slot s) { return s.z ? s.str() : std::string("x"); };
    switch (p->op) {
        case PhiNode::Op::Ind:
            if (p->u == me) tok.push_back("p" + d + (p->inside ? "in" : "out") + std::to_string(p->ball));
            break;
        case PhiNode::Op::Ker:
            if (p->u == me) tok.push_back("p" + d + "k" + other(p->v) + "^" + std::to_string(p->power));
            if (p->v == me) tok.push_back("p" + d + "k" + other(p->u) + "^" + std::to_string(p->power));
            break;
        case PhiNode::Op::F:
            if (p->u == me) tok.push_back("p" + d + "F" + std::to_string(p->ball) + "a");
            if (p->v == me) tok.push_back("p" + d + "F" + std::to_string(p->ball) + "b");
            break;
        case PhiNode::Op::DQ:
            if (p->u == me || p->v == me) {
                tok.push_back("p" + d + "dq");
                phi_tokens(p->args[0], p->u, depth + 1, tok);
                phi_tokens(p->args[0], p->v, depth + 1, tok);
                return;
            }
            break;
        case PhiNode::Op::D:
            if (p->u == me) tok.push_back("p" + d + "d");
            break;
        case PhiNode::Op::Mul:
            break;
    }
    for (const Phi& a : p->args) phi_tokens(a, me, depth + 1, tok);
}

std::string signature(const Term& t, int k) {
    std::vector<std::string> tok;
    const Slot me = Slot::x(k);
    auto other = [](Slot s) { return s.z ? s.str() : std::string("x"); };
    for (const Kernel& kr : t.kernels) {
        // Orientation of an x-x kernel only costs a sign, so both ends look alike.
        if (kr.u == me) tok.push_back("k" + other(kr.v) + "^" + std::to_string(kr.power));
        if (kr.v == me) tok.push_back("k" + other(kr.u) + "^" + std::to_string(kr.power));
    }
    for (const FFactor& f : t.fs) {
        if (f.a == k) tok.push_back("F" + std::to_string(f.ball) + "a");
        if (f.b == k) tok.push_back("F" + std::to_string(f.ball) + "b");
    }
    for (const Indicator& i : t.inds)
        if (i.var == k) tok.push_back((i.inside ? "in" : "out") + std::to_string(i.ball));
    for (const Contour& c : t.contours)
        if (c.var == k) tok.push_back("on" + std::to_string(c.ball));
    for (const Phi& p : t.phis)
        if (phi_depends(p, me)) phi_tokens(p, me, 0, tok);
    std::sort(tok.begin(), tok.end());
    std::string s;
    for (const std::string& x : tok) s += x + ",";
    return s;
}

}  // namespace

Term canonical_term(const Term& in, bool* vanishes) {
    Term t = in;
    t.sort();
    if (vanishes) *vanishes = t.coeff.is_zero();
    if (t.coeff.is_zero() || t.vars == 0) return t;

    const auto n = static_cast<std::size_t>(t.vars);
    std::vector<std::pair<std::string, int>> sig;
    for (int k = 1; k <= t.vars; ++k) sig.emplace_back(signature(t, k), k);
    std::stable_sort(sig.begin(), sig.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    // Groups of equal signatures; position p in the sorted order gets label p + 1.
    std::vector<std::pair<std::size_t, std::size_t>> groups;
    for (std::size_t p = 0; p < n;) {
        std::size_t q = p + 1;
        while (q < n && sig[q].first == sig[p].first) ++q;
        groups.emplace_back(p, q);
        p = q;
    }
    std::vector<int> order(n);
    for (std::size_t p = 0; p < n; ++p) order[p] = sig[p].second;

    std::size_t budget = 5040;
    std::string best;
    Term best_term;
    bool have = false, zero = false;
    // Enumerate permutations within groups (odometer over next_permutation).
    for (auto& g : groups) std::sort(order.begin() + static_cast<std::ptrdiff_t>(g.first), order.begin() + static_cast<std::ptrdiff_t>(g.second));
    while (true) {
        std::vector<int> perm(n + 1, 0);
        for (std::size_t p = 0; p < n; ++p) perm[static_cast<std::size_t>(order[p])] = static_cast<int>(p + 1);
        Term r = relabeled(t, perm);
        const std::string s = r.structure();
        if (!have || s < best) {
            best = s;
            best_term = r;
            have = true;
        } else if (s == best && r.coeff.rational() == -best_term.coeff.rational()) {
            zero = true;
        }
        if (--budget == 0) break;
        std::size_t g = 0;
        for (; g < groups.size(); ++g) {
            auto b = order.begin() + static_cast<std::ptrdiff_t>(groups[g].first);
            auto e = order.begin() + static_cast<std::ptrdiff_t>(groups[g].second);
            if (std::next_permutation(b, e)) break;
        }
        if (g == groups.size()) break;
    }
    if (zero) {
        best_term.coeff = best_term.coeff.with_rational(Rational(0));
        if (vanishes) *vanishes = true;
    }
    return best_term;
}

TermList canonicalize(const TermList& list) {
    std::map<std::string, Term> merged;
    for (const Term& t : list.terms) {
        Term c = canonical_term(t);
        if (c.coeff.is_zero()) continue;
        const std::string key = c.structure() + " #" + c.coeff.monomial();
        auto it = merged.find(key);
        if (it == merged.end()) {
            merged.emplace(key, std::move(c));
        } else {
            it->second.coeff = it->second.coeff.with_rational(it->second.coeff.rational() + c.coeff.rational());
        }
    }
    TermList out;
    out.centers = list.centers;
    out.conjugate = list.conjugate;
    for (auto& [k, t] : merged)
        if (!t.coeff.is_zero()) out.terms.push_back(std::move(t));
    return out;
}

}  // namespace lcft
