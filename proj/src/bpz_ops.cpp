#include "lcft/bpz_ops.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

namespace lcft {

double conformal_weight(double alpha, double gamma) {
    const double Q = 2.0 / gamma + gamma / 2.0;
    return alpha / 2.0 * (Q - alpha / 2.0);
}

int VirasoroWord::order() const {
    int s = 0;
    for (int k : n) s += k;
    return s;
}

std::string VirasoroWord::str() const {
    std::string s = coeff.str() + " * ";
    for (int k : n) s += "L[-" + std::to_string(k) + "]";
    return s;
}

double SymbolicOperator::degenerate_alpha() const {
    return kind == Degenerate::R1 ? -(r - 1) * gamma / 2.0 : -2.0 * (r - 1) / gamma;
}

double SymbolicOperator::symbol(const std::string& name) const {
    if (name == "gamma") return gamma;
    if (name.rfind("Delta", 0) == 0 && name.size() > 5) {
        const int i = std::stoi(name.substr(5));
        if (i >= 1 && i <= static_cast<int>(weights.size())) return weights[static_cast<std::size_t>(i - 1)];
    }
    throw DomainError("no value for symbol '" + name + "'");
}

std::string SymbolicOperator::str() const {
    std::string s;
    for (const VirasoroWord& w : words) s += w.str() + "\n";
    return s;
}

namespace {

void compositions(int left, std::vector<int>& prefix, std::vector<std::vector<int>>& out) {
    if (left == 0) {
        out.push_back(prefix);
        return;
    }
    for (int k = 1; k <= left; ++k) {
        prefix.push_back(k);
        compositions(left - k, prefix, out);
        prefix.pop_back();
    }
}

}  // namespace

SymbolicOperator build_Dr(int r, double gamma, Degenerate kind, std::vector<double> alphas) {
    if (r < 1 || r > 8) throw ConfigError("operator order must lie in 1..8", "r");
    if (!(gamma > 0.0) || !(gamma < 2.0)) throw ConfigError("gamma must lie in (0, 2)", "gamma");
    SymbolicOperator op;
    op.r = r;
    op.kind = kind;
    op.gamma = gamma;
    op.alphas = std::move(alphas);
    for (double a : op.alphas) op.weights.push_back(conformal_weight(a, gamma));

    std::vector<std::vector<int>> all;
    std::vector<int> prefix;
    compositions(r, prefix, all);
    for (const auto& n : all) {
        const int k = static_cast<int>(n.size());
        Rational denom(1);
        int head = 0;
        for (int j = 0; j + 1 < k; ++j) {
            head += n[static_cast<std::size_t>(j)];
            denom = denom * Rational(head * (r - head));
        }
        // b^2 = gamma^2/4 or 4/gamma^2
        const int p = r - k;
        Rational scale(1);
        for (int q = 0; q < p; ++q) scale = scale * (kind == Degenerate::R1 ? Rational(1, 4) : Rational(4));
        VirasoroWord w;
        w.n = n;
        w.coeff = Coefficient(scale / denom) * Coefficient::symbol("gamma", kind == Degenerate::R1 ? 2 * p : -2 * p);
        op.words.push_back(w);
    }
    return op;
}

// ---------------------------------------------------------------- rational expressions

RationalExpr RationalExpr::constant(int insertions, const Coefficient& c) {
    RationalExpr e(insertions);
    e.add(Powers{0, std::vector<int>(static_cast<std::size_t>(insertions), 0)}, c);
    return e;
}

RationalExpr RationalExpr::monomial(int insertions, const Coefficient& c, Powers p) {
    if (static_cast<int>(p.w.size()) != insertions) throw ConfigError("monomial has the wrong number of insertions");
    if (p.z < 0) throw UnsupportedExpression("negative power of z");
    RationalExpr e(insertions);
    e.add(p, c);
    return e;
}

void RationalExpr::add(const Powers& p, const Coefficient& c) {
    if (c.is_zero()) return;
    const auto key = std::make_pair(p, c.monomial());
    auto it = terms_.find(key);
    if (it == terms_.end()) {
        terms_.emplace(key, c);
        return;
    }
    const Rational q = it->second.rational() + c.rational();
    if (q.is_zero())
        terms_.erase(it);
    else
        it->second = it->second.with_rational(q);
}

RationalExpr RationalExpr::operator+(const RationalExpr& o) const {
    if (o.n_ != n_) throw ConfigError("adding expressions in different variables");
    RationalExpr e = *this;
    for (const auto& [k, c] : o.terms_) e.add(k.first, c);
    return e;
}

RationalExpr RationalExpr::operator*(const Coefficient& c) const {
    RationalExpr e(n_);
    for (const auto& [k, t] : terms_) e.add(k.first, t * c);
    return e;
}

RationalExpr RationalExpr::times_w(int i, int power, const Coefficient& c) const {
    RationalExpr e(n_);
    for (const auto& [k, t] : terms_) {
        Powers p = k.first;
        p.w.at(static_cast<std::size_t>(i - 1)) += power;
        e.add(p, t * c);
    }
    return e;
}

RationalExpr RationalExpr::d_z() const {
    RationalExpr e(n_);
    for (const auto& [k, t] : terms_) {
        const Powers& p = k.first;
        if (p.z > 0) {
            Powers q = p;
            q.z -= 1;
            e.add(q, t * Rational(p.z));
        }
        // d/dz (z_i - z)^e = -e (z_i - z)^(e-1)
        for (std::size_t i = 0; i < p.w.size(); ++i) {
            if (p.w[i] == 0) continue;
            Powers q = p;
            q.w[i] -= 1;
            e.add(q, t * Rational(-p.w[i]));
        }
    }
    return e;
}

RationalExpr RationalExpr::d_zi(int i) const {
    if (i < 1 || i > n_) throw ConfigError("insertion index out of range");
    RationalExpr e(n_);
    const auto s = static_cast<std::size_t>(i - 1);
    for (const auto& [k, t] : terms_) {
        const Powers& p = k.first;
        if (p.w[s] == 0) continue;
        Powers q = p;
        q.w[s] -= 1;
        e.add(q, t * Rational(p.w[s]));
    }
    return e;
}

Complex RationalExpr::value(Complex z, const std::vector<Complex>& zs,
                            const std::function<double(const std::string&)>& lookup) const {
    if (static_cast<int>(zs.size()) != n_) throw ConfigError("wrong number of insertion points");
    Complex v = 0.0;
    for (const auto& [k, t] : terms_) {
        Complex m = t.value(lookup) * std::pow(z, k.first.z);
        for (std::size_t i = 0; i < zs.size(); ++i) {
            if (k.first.w[i] == 0) continue;
            const Complex d = zs[i] - z;
            if (d == 0.0 && k.first.w[i] < 0) throw DomainError("evaluation at an insertion");
            m *= std::pow(d, k.first.w[i]);
        }
        v += m;
    }
    return v;
}

std::string RationalExpr::str() const {
    if (terms_.empty()) return "0";
    std::string s;
    for (const auto& [k, t] : terms_) {
        if (!s.empty()) s += " + ";
        s += t.str();
        const Powers& p = k.first;
        if (p.z == 1) s += "*z";
        if (p.z > 1) s += "*z^" + std::to_string(p.z);
        for (std::size_t i = 0; i < p.w.size(); ++i)
            if (p.w[i] != 0) s += "*(z" + std::to_string(i + 1) + "-z)^" + std::to_string(p.w[i]);
    }
    return s;
}

namespace {

class Parser {
  public:
    Parser(const std::string& text, int n) : s_(text), n_(n) {}

    RationalExpr run() {
        RationalExpr e(n_);
        skip();
        bool first = true;
        while (pos_ < s_.size()) {
            int sign = 1;
            if (peek() == '+' || peek() == '-') {
                sign = get() == '-' ? -1 : 1;
            } else if (!first) {
                fail("expected + or -");
            }
            e = e + term() * Coefficient(Rational(sign));
            first = false;
        }
        if (first) fail("empty expression");
        return e;
    }

  private:
    RationalExpr term() {
        Coefficient c(Rational(1));
        RationalExpr::Powers p{0, std::vector<int>(static_cast<std::size_t>(n_), 0)};
        while (true) {
            factor(c, p);
            if (peek() != '*') break;
            get();
        }
        return RationalExpr::monomial(n_, c, p);
    }

    void factor(Coefficient& c, RationalExpr::Powers& p) {
        const char ch = peek();
        if (std::isdigit(static_cast<unsigned char>(ch))) {
            const std::int64_t num = integer();
            std::int64_t den = 1;
            if (peek() == '/') {
                get();
                den = integer();
                if (den == 0) fail("zero denominator");
            }
            c = c * Rational(num, den);
            return;
        }
        if (ch == '(') {
            get();
            const std::string a = name();
            expect('-');
            const std::string b = name();
            expect(')');
            const int e = power();
            if (a != "z" && b == "z") {
                p.w[static_cast<std::size_t>(insertion(a) - 1)] += e;
            } else if (a == "z" && b != "z") {
                p.w[static_cast<std::size_t>(insertion(b) - 1)] += e;
                if (e % 2) c = c * Rational(-1);
            } else {
                fail("only (zi - z) differences are supported");
            }
            return;
        }
        if (std::isalpha(static_cast<unsigned char>(ch))) {
            const std::string id = name();
            if (peek() == '(') fail("function '" + id + "' is not rational");
            const int e = power();
            if (id == "z") {
                if (e < 0) fail("negative powers of z are not supported");
                p.z += e;
            } else if (id[0] == 'z' && id.size() > 1 && std::isdigit(static_cast<unsigned char>(id[1]))) {
                fail("bare insertion point '" + id + "'; write it through (zi - z)");
            } else {
                c = c * Coefficient::symbol(id, e);
            }
            return;
        }
        fail("unexpected character");
    }

    int insertion(const std::string& id) {
        if (id.size() < 2 || id[0] != 'z') fail("expected an insertion zi");
        for (std::size_t k = 1; k < id.size(); ++k)
            if (!std::isdigit(static_cast<unsigned char>(id[k]))) fail("expected an insertion zi");
        const int i = std::stoi(id.substr(1));
        if (i < 1 || i > n_) fail("insertion index out of range");
        return i;
    }

    int power() {
        if (peek() != '^') return 1;
        get();
        int sign = 1;
        if (peek() == '-') {
            get();
            sign = -1;
        }
        if (!std::isdigit(static_cast<unsigned char>(peek()))) fail("powers must be integers");
        const auto v = integer();
        if (peek() == '.' || peek() == '/') fail("powers must be integers");
        return sign * static_cast<int>(v);
    }

    std::int64_t integer() {
        std::int64_t v = 0;
        if (!std::isdigit(static_cast<unsigned char>(s_[pos_]))) fail("expected a number");
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
            v = v * 10 + (s_[pos_++] - '0');
            if (v > 1000000000000LL) fail("number too large");
        }
        if (pos_ < s_.size() && (s_[pos_] == '.' || s_[pos_] == 'e')) fail("only exact rationals are supported");
        skip();
        return v;
    }

    std::string name() {
        std::string id;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
            id += s_[pos_++];
        if (id.empty()) fail("expected a name");
        skip();
        return id;
    }

    void expect(char ch) {
        if (peek() != ch) fail(std::string("expected '") + ch + "'");
        get();
    }
    char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
    char get() {
        const char ch = s_[pos_++];
        skip();
        return ch;
    }
    void skip() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    [[noreturn]] void fail(const std::string& why) const {
        throw UnsupportedExpression(why + " at position " + std::to_string(pos_) + " in '" + s_ + "'", "function");
    }

    std::string s_;
    int n_;
    std::size_t pos_ = 0;
};

}  // namespace

RationalExpr RationalExpr::parse(const std::string& text, int insertions) {
    if (insertions < 0) throw ConfigError("negative number of insertions");
    return Parser(text, insertions).run();
}

// ---------------------------------------------------------------- generators

RationalExpr apply_generator(int n, const RationalExpr& f) {
    if (n < 1) throw ConfigError("generator index must be positive");
    if (n == 1) return f.d_z();
    RationalExpr out(f.insertions());
    for (int i = 1; i <= f.insertions(); ++i) {
        out = out + f.d_zi(i).times_w(i, 1 - n, Coefficient(Rational(-1)));
        out = out + f.times_w(i, -n, Coefficient(Rational(n - 1)) * Coefficient::symbol("Delta" + std::to_string(i)));
    }
    return out;
}

RationalExpr apply_word(const VirasoroWord& w, const RationalExpr& f) {
    RationalExpr g = f;
    for (auto it = w.n.rbegin(); it != w.n.rend(); ++it) g = apply_generator(*it, g);
    return g * w.coeff;
}

RationalExpr apply_to_rational(const SymbolicOperator& op, const RationalExpr& f) {
    if (!op.alphas.empty() && static_cast<int>(op.alphas.size()) != f.insertions())
        throw ConfigError("operator and test function disagree on the number of insertions");
    RationalExpr out(f.insertions());
    for (const VirasoroWord& w : op.words) out = out + apply_word(w, f);
    return out;
}

}  // namespace lcft
