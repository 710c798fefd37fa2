/* Command-line harness: configuration, persistence, the randomized identity
 * suite, and the six commands behind `cocycle-lab`.
 *
 * Conventions baked in here:
 *   - Every energy in a config file is a *working* energy: the potential is
 *     shifted so its minimum is 0 (over theta = 0) and rescaled to
 *     oscillation 1, and the energy absorbs lambda_sq * min(v).  The raw
 *     energy is recovered as E_raw = E_working + e_shift and reported next
 *     to the working value in the JSON outputs.
 *   - Outputs are written with a temp-file + rename discipline and all
 *     doubles rendered with 17 significant digits, so identical configs
 *     produce bit-identical files for any thread count.
 *   - The sweep command owns a checkpoint sidecar keyed by the config
 *     digest; a killed sweep resumes at the first missing row and ends with
 *     the same bytes a one-shot run would have produced.
 */

#include "cocycle_lab/harness.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <utility>

#include "CLI11.hpp"
#include "json.hpp"

#include "cocycle_lab/ladder.hpp"
#include "cocycle_lab/parallel.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace cocycle_lab {

static constexpr const char* kVersion = "1.0.0";

/* ---- small string helpers ------------------------------------------------ */

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string now_iso() {
    std::time_t t = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

[[noreturn]] void config_error(const std::string& msg) {
    throw LabError(ErrorCode::MissingSystemConstants, msg);
}

} // namespace

/* ---- expression evaluator -------------------------------------------------- */

namespace {

/* Grammar: expr := term (('+'|'-') term)*
 *          term := factor (('*'|'/') factor)*
 *          factor := number | pi | sqrt '(' expr ')' | '(' expr ')' | ('+'|'-') factor */
struct ExprParser {
    const char* p;

    void skip() {
        while (*p && std::isspace(static_cast<unsigned char>(*p))) ++p;
    }

    double factor() {
        skip();
        if (*p == '+') { ++p; return factor(); }
        if (*p == '-') { ++p; return -factor(); }
        if (*p == '(') {
            ++p;
            double v = expr();
            skip();
            if (*p != ')') config_error("expression: missing ')'");
            ++p;
            return v;
        }
        if (std::isalpha(static_cast<unsigned char>(*p))) {
            std::string ident;
            while (std::isalnum(static_cast<unsigned char>(*p)) || *p == '_') ident.push_back(*p++);
            if (ident == "pi") return M_PI;
            if (ident == "sqrt") {
                skip();
                if (*p != '(') config_error("expression: sqrt needs '('");
                ++p;
                double v = expr();
                skip();
                if (*p != ')') config_error("expression: missing ')' after sqrt");
                ++p;
                return std::sqrt(v);
            }
            config_error("expression: unknown identifier '" + ident + "'");
        }
        char* q = nullptr;
        double v = std::strtod(p, &q);
        if (q == p) config_error(std::string("expression: expected a number at '") + p + "'");
        p = q;
        return v;
    }

    double term() {
        double v = factor();
        for (;;) {
            skip();
            if (*p == '*') { ++p; v *= factor(); }
            else if (*p == '/') { ++p; v /= factor(); }
            else return v;
        }
    }

    double expr() {
        double v = term();
        for (;;) {
            skip();
            if (*p == '+') { ++p; v += term(); }
            else if (*p == '-') { ++p; v -= term(); }
            else return v;
        }
    }
};

} // namespace

double eval_expression(const std::string& text) {
    std::string t = trim(text);
    if (t.empty()) config_error("expression: empty string");
    ExprParser parser{t.c_str()};
    double v = parser.expr();
    parser.skip();
    if (*parser.p != '\0')
        config_error("expression: trailing input at '" + std::string(parser.p) + "'");
    if (!std::isfinite(v))
        config_error("expression '" + t + "' does not evaluate to a finite number");
    return v;
}

/* ---- configuration --------------------------------------------------------- */

namespace {

double to_double(const std::string& key, const std::string& val) {
    try {
        return eval_expression(val);
    } catch (const LabError&) {
        config_error("config key '" + key + "': cannot parse numeric value '" + val + "'");
    }
}

long long to_int(const std::string& key, const std::string& val) {
    double d = to_double(key, val);
    if (!std::isfinite(d) || std::abs(d) > 9.2e18)
        config_error("config key '" + key + "': integer out of range");
    return std::llround(d);
}

bool to_bool(const std::string& key, const std::string& val) {
    std::string v = val;
    std::transform(v.begin(), v.end(), v.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    config_error("config key '" + key + "': expected a boolean, got '" + val + "'");
}

void set_key(RunConfig& c, const std::string& raw_key, const std::string& val) {
    /* section-qualified spellings map onto the flat keys so an INI
     * [potential] or [execution] block reads naturally */
    std::string key = raw_key;
    if (key == "potential.lambda_sq") key = "lambda_sq";
    else if (key == "potential.omega") key = "omega";
    else if (key == "execution.threads") key = "threads";
    else if (key == "execution.precision") key = "precision";

    if (key == "potential.kind") c.potential_kind = val;
    else if (key == "potential.table") c.potential_table = val;
    else if (key == "lambda_sq") c.lambda_sq = to_double(key, val);
    else if (key == "omega") {
        c.omega_expr = val;
        c.omega = to_double(key, val);
    }
    else if (key == "threads") c.threads = (val == "auto") ? 0 : static_cast<int>(to_int(key, val));
    else if (key == "precision") c.precision = val;
    else if (key == "energy.mode") c.energy_mode = val;
    else if (key == "energy.value") c.energy_value = to_double(key, val);
    else if (key == "energy.g") c.sweep_g = to_double(key, val);
    else if (key == "energy.rho") c.sweep_rho = to_double(key, val);
    else if (key == "energy.points") c.sweep_points = static_cast<int>(to_int(key, val));
    else if (key == "energy.bracket_lo") c.bracket_lo = to_double(key, val);
    else if (key == "energy.bracket_hi") c.bracket_hi = to_double(key, val);
    else if (key == "energy.E0") c.sweep_E0 = to_double(key, val);
    else if (key == "grid.base_points") c.base_points = static_cast<int>(to_int(key, val));
    else if (key == "grid.refine_depth") c.refine_depth = static_cast<int>(to_int(key, val));
    else if (key == "tolerances.tol_psi") c.tol_psi = to_double(key, val);
    else if (key == "tolerances.tol_deriv") c.tol_deriv = to_double(key, val);
    else if (key == "tolerances.gap_floor") c.gap_floor = to_double(key, val);
    else if (key == "tolerances.edge_tol") c.edge_tol = to_double(key, val);
    else if (key == "horizon.T_max") c.T_max = to_int(key, val);
    else if (key == "output.dir") c.output_dir = val;
    else if (key == "output.formats") {
        c.output_formats.clear();
        for (const std::string& f : split(val, ','))
            if (!f.empty()) c.output_formats.push_back(f);
    }
    else if (key == "curve.points") c.curve_points = static_cast<int>(to_int(key, val));
    else if (key == "ladder.max_level") c.ladder_max_level = static_cast<int>(to_int(key, val));
    else if (key == "ladder.c1_samples") c.ladder_c1_samples = to_int(key, val);
    else if (key == "ladder.energy") c.ladder_energy = to_double(key, val);
    else if (key == "ladder.bisect_level") c.ladder_bisect_level = static_cast<int>(to_int(key, val));
    else if (key == "check.inject_fault") c.inject_fault = to_bool(key, val);
    else if (key == "check.orbits") c.check_orbits = to_int(key, val);
    else if (key == "fit.input") c.fit_input = val;
    else config_error("unknown configuration key '" + key + "'");
}

void flatten_json(RunConfig& c, const ojson& j, const std::string& prefix) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        const ojson& v = it.value();
        if (v.is_object()) {
            flatten_json(c, v, key);
        } else if (v.is_array()) {
            std::string joined;
            for (const ojson& el : v) {
                if (!joined.empty()) joined += ",";
                joined += el.is_string() ? el.get<std::string>() : el.dump();
            }
            set_key(c, key, joined);
        } else if (v.is_string()) {
            set_key(c, key, v.get<std::string>());
        } else if (v.is_boolean()) {
            set_key(c, key, v.get<bool>() ? "true" : "false");
        } else if (v.is_null()) {
            /* null leaves the default in place */
        } else {
            set_key(c, key, v.dump());
        }
    }
}

void parse_ini(RunConfig& c, const std::string& content) {
    std::istringstream in(content);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        /* inline comments: ' #' or ' ;' end the value */
        for (const char* marker : {" #", " ;"}) {
            size_t pos = line.find(marker);
            if (pos != std::string::npos) line.erase(pos);
        }
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                config_error("config line " + std::to_string(lineno) + ": unterminated section");
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            config_error("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (key.empty())
            config_error("config line " + std::to_string(lineno) + ": empty key");
        if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
        set_key(c, key, val);
    }
}

} // namespace

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) config_error("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string content = buf.str();

    RunConfig c;
    c.omega = eval_expression(c.omega_expr);

    size_t first = content.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && content[first] == '{') {
        ojson j;
        try {
            j = ojson::parse(content, nullptr, true, /*ignore_comments=*/true);
        } catch (const std::exception& e) {
            config_error(std::string("config JSON parse error: ") + e.what());
        }
        flatten_json(c, j, "");
    } else {
        parse_ini(c, content);
    }
    return c;
}

void apply_override(RunConfig& config, const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        config_error("override '" + assignment + "': expected key=value");
    std::string key = trim(assignment.substr(0, eq));
    std::string val = trim(assignment.substr(eq + 1));
    set_key(config, key, val);
}

void RunConfig::validate() const {
    if (potential_kind != "cosine" && potential_kind != "cosine_normalized" &&
        potential_kind != "table")
        config_error("potential.kind must be cosine, cosine_normalized, or table");
    if (potential_kind == "table" && potential_table.empty())
        config_error("potential.kind = table needs potential.table");
    if (!(lambda_sq > 0.0) || !std::isfinite(lambda_sq))
        config_error("lambda_sq must be positive and finite");
    if (!std::isfinite(omega) || mod1(omega) == 0.0)
        config_error("omega must be finite and irrational (non-integer)");
    try {
        estimate_diophantine(mod1(omega), 40);
    } catch (const LabError&) {
        config_error("omega is numerically rational: the rotation orbit would be periodic");
    }
    if (energy_mode != "single" && energy_mode != "sweep" && energy_mode != "edge")
        config_error("energy.mode must be single, sweep, or edge");
    if (!(sweep_g > 0.0) || !std::isfinite(sweep_g))
        config_error("energy.g must be positive");
    if (!(sweep_rho > 0.0) || !(sweep_rho < 1.0))
        config_error("energy.rho must lie in (0, 1)");
    if (sweep_points < 1 || sweep_points > 4096)
        config_error("energy.points must lie in [1, 4096]");
    if (!(bracket_lo < bracket_hi))
        config_error("energy.bracket_lo must be below energy.bracket_hi");
    if (base_points < 8 || base_points > (1 << 22) || (base_points & (base_points - 1)) != 0)
        config_error("grid.base_points must be a power of two in [8, 2^22]");
    if (refine_depth < 0 || refine_depth > 16)
        config_error("grid.refine_depth must lie in [0, 16]");
    if (tol_psi == 0.0 || !std::isfinite(tol_psi))
        config_error("tolerances.tol_psi must be nonzero (negative chooses the default)");
    if (!(tol_deriv > 0.0) || !std::isfinite(tol_deriv))
        config_error("tolerances.tol_deriv must be positive");
    if (!std::isfinite(gap_floor))
        config_error("tolerances.gap_floor must be finite");
    if (!(edge_tol >= 1e-15) || !std::isfinite(edge_tol))
        config_error("tolerances.edge_tol must be >= 1e-15");
    if (T_max < 4096)
        config_error("horizon.T_max must be at least 4096");
    if (output_dir.empty()) config_error("output.dir must not be empty");
    if (output_formats.empty()) config_error("output.formats needs csv and/or json");
    for (const std::string& f : output_formats)
        if (f != "csv" && f != "json")
            config_error("output.formats entries must be csv or json, got '" + f + "'");
    if (threads < 0 || threads > 1024) config_error("threads must lie in [0, 1024]");
    if (precision != "f64" && precision != "dd")
        config_error("precision must be f64 or dd");
    if (curve_points < 2 || curve_points > (1 << 22))
        config_error("curve.points must lie in [2, 2^22]");
    if (ladder_max_level < 0 || ladder_max_level > 2)
        config_error("ladder.max_level must lie in [0, 2]");
    if (ladder_c1_samples < 0) config_error("ladder.c1_samples must be >= 0");
    if (ladder_bisect_level > ladder_max_level)
        config_error("ladder.bisect_level exceeds ladder.max_level");
    if (check_orbits < 1) config_error("check.orbits must be >= 1");
}

std::string canonical_config(const RunConfig& c) {
    std::vector<std::pair<std::string, std::string>> kv;
    auto add = [&kv](const std::string& k, const std::string& v) { kv.emplace_back(k, v); };
    add("check.inject_fault", c.inject_fault ? "true" : "false");
    add("check.orbits", std::to_string(c.check_orbits));
    add("curve.points", std::to_string(c.curve_points));
    add("energy.E0", format_g17(c.sweep_E0));
    add("energy.bracket_hi", format_g17(c.bracket_hi));
    add("energy.bracket_lo", format_g17(c.bracket_lo));
    add("energy.g", format_g17(c.sweep_g));
    add("energy.mode", c.energy_mode);
    add("energy.points", std::to_string(c.sweep_points));
    add("energy.rho", format_g17(c.sweep_rho));
    add("energy.value", format_g17(c.energy_value));
    add("fit.input", c.fit_input);
    add("grid.base_points", std::to_string(c.base_points));
    add("grid.refine_depth", std::to_string(c.refine_depth));
    add("horizon.T_max", std::to_string(c.T_max));
    add("ladder.bisect_level", std::to_string(c.ladder_bisect_level));
    add("ladder.c1_samples", std::to_string(c.ladder_c1_samples));
    add("ladder.energy", format_g17(c.ladder_energy));
    add("ladder.max_level", std::to_string(c.ladder_max_level));
    add("lambda_sq", format_g17(c.lambda_sq));
    add("omega", c.omega_expr);
    add("omega_value", format_g17(c.omega));
    add("output.dir", c.output_dir);
    std::string fmts;
    for (const std::string& f : c.output_formats) {
        if (!fmts.empty()) fmts += ",";
        fmts += f;
    }
    add("output.formats", fmts);
    add("potential.kind", c.potential_kind);
    add("potential.table", c.potential_table);
    add("precision", c.precision);
    add("threads", std::to_string(c.threads));
    add("tolerances.edge_tol", format_g17(c.edge_tol));
    add("tolerances.gap_floor", format_g17(c.gap_floor));
    add("tolerances.tol_deriv", format_g17(c.tol_deriv));
    add("tolerances.tol_psi", format_g17(c.tol_psi));
    std::sort(kv.begin(), kv.end());
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

/* ---- persistence ------------------------------------------------------------ */

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string format_g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
    fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) config_error("cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) config_error("short write to '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) config_error("rename '" + tmp.string() + "' -> '" + path + "': " + ec.message());
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
    std::string out;
    for (size_t i = 0; i < header.size(); ++i) {
        if (i) out += ",";
        out += header[i];
    }
    out += "\n";
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out += ",";
            out += format_g17(row[i]);
        }
        out += "\n";
    }
    write_file_atomic(path, out);
}

/* ---- potentials and the working frame ---------------------------------------- */

namespace {

/* Periodic table potential: knots (theta_i, v_i) on [0,1), linear
 * interpolation, derivatives from centered periodic differences of the
 * knot values. */
Potential table_potential(const std::string& path) {
    std::ifstream in(path);
    if (!in) config_error("cannot open potential table '" + path + "'");
    auto th = std::make_shared<std::vector<double>>();
    auto va = std::make_shared<std::vector<double>>();
    std::string line;
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::vector<std::string> cells = split(t, ',');
        if (cells.size() < 2) config_error("potential table: need 'theta,value' rows");
        char* q = nullptr;
        double x = std::strtod(cells[0].c_str(), &q);
        if (q == cells[0].c_str()) continue; // header row
        double y = std::strtod(cells[1].c_str(), &q);
        th->push_back(x);
        va->push_back(y);
    }
    size_t n = th->size();
    if (n < 8) config_error("potential table: need at least 8 rows");
    for (size_t i = 0; i < n; ++i) {
        if ((*th)[i] < 0.0 || (*th)[i] >= 1.0)
            config_error("potential table: theta values must lie in [0, 1)");
        if (i > 0 && (*th)[i] <= (*th)[i - 1])
            config_error("potential table: theta values must be strictly increasing");
    }

    /* centered periodic differences on the knots */
    auto derive = [n](const std::vector<double>& t,
                      const std::vector<double>& f) {
        std::vector<double> d(n);
        for (size_t i = 0; i < n; ++i) {
            size_t ip = (i + 1) % n, im = (i + n - 1) % n;
            double dt = t[ip] - t[im];
            if (ip < i) dt += 1.0;  // wrapped forward neighbour
            if (im > i) dt += 1.0;  // wrapped backward neighbour
            d[i] = (f[ip] - f[im]) / dt;
        }
        return d;
    };
    auto dv = std::make_shared<std::vector<double>>(derive(*th, *va));
    auto d2v = std::make_shared<std::vector<double>>(derive(*th, *dv));

    auto interp = [th](std::shared_ptr<std::vector<double>> f) {
        return [th, f](double x) {
            const std::vector<double>& t = *th;
            const std::vector<double>& v = *f;
            size_t n = t.size();
            double u = mod1(x);
            /* segment index: largest i with t[i] <= u, else the wrap segment */
            size_t i = std::upper_bound(t.begin(), t.end(), u) - t.begin();
            if (i == 0 || i > n) {
                /* u below the first knot: wrap segment [t[n-1], t[0]+1) */
                double left = t[n - 1], span = t[0] + 1.0 - left;
                double frac = (u + (u < left ? 1.0 : 0.0) - left) / span;
                return v[n - 1] + frac * (v[0] - v[n - 1]);
            }
            size_t j = i - 1;
            if (j == n - 1) {
                double left = t[n - 1], span = t[0] + 1.0 - left;
                double frac = (u - left) / span;
                return v[n - 1] + frac * (v[0] - v[n - 1]);
            }
            double span = t[j + 1] - t[j];
            double frac = (u - t[j]) / span;
            return v[j] + frac * (v[j + 1] - v[j]);
        };
    };

    Potential p;
    p.v = interp(va);
    p.dv = interp(dv);
    p.d2v = interp(d2v);
    return p;
}

Potential make_potential(const RunConfig& c) {
    if (c.potential_kind == "cosine") return Potential::cosine();
    if (c.potential_kind == "cosine_normalized") return Potential::cosine_normalized();
    return table_potential(c.potential_table);
}

struct Workspace {
    NormalizedSystem sys;   // working potential / coupling; E set per use
    double e_shift = 0.0;   // raw E = working E + e_shift
    double theta_shift = 0.0;
};

Workspace make_workspace(const RunConfig& c) {
    CocycleParams raw;
    raw.lambda_sq = c.lambda_sq;
    raw.E = 0.0;
    raw.potential = make_potential(c);
    Workspace w;
    w.sys = normalize_system(raw);
    w.e_shift = w.sys.info.e_shift;
    w.theta_shift = w.sys.info.theta_shift;
    return w;
}

CurveOptions curve_options(const RunConfig& c) {
    CurveOptions o;
    o.tol_psi = c.tol_psi;
    o.tol_deriv = c.tol_deriv;
    o.horizon_cap = c.T_max;
    o.use_dd = (c.precision == "dd");
    return o;
}

GridOptions grid_options(const RunConfig& c) {
    GridOptions g;
    int log2_pts = 0;
    while ((1 << (log2_pts + 1)) <= c.base_points) ++log2_pts;
    g.base_log2 = log2_pts;
    g.zoom_rounds = c.refine_depth;
    g.max_points = std::max(1 << 16, 4 * c.base_points);
    return g;
}

/* ---- manifest ----------------------------------------------------------------- */

struct OutputRecord {
    std::string path;
    std::uint64_t digest = 0;
};

OutputRecord emit(const std::string& path, const std::string& bytes) {
    write_file_atomic(path, bytes);
    return {path, fnv1a(bytes)};
}

void write_manifest(const RunConfig& cfg, const std::string& command,
                    const std::string& started,
                    const std::vector<OutputRecord>& outputs, const ojson& tasks,
                    const ojson& extra = ojson::object()) {
    ojson m;
    m["tool"] = "cocycle-lab";
    m["version"] = kVersion;
    m["command"] = command;
    m["config_digest"] = hex64(fnv1a(canonical_config(cfg)));
    m["config"] = canonical_config(cfg);
    m["started"] = started;
    m["finished"] = now_iso();
    m["tasks"] = tasks;
    ojson outs = ojson::array();
    for (const OutputRecord& o : outputs)
        outs.push_back({{"path", o.path}, {"fnv1a", hex64(o.digest)}});
    m["outputs"] = outs;
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    write_file_atomic((fs::path(cfg.output_dir) / "manifest.json").string(), m.dump(2) + "\n");
}

bool wants(const RunConfig& c, const char* fmt) {
    return std::find(c.output_formats.begin(), c.output_formats.end(), fmt) !=
           c.output_formats.end();
}

} // namespace

/* ---- identity suite ------------------------------------------------------------ */

namespace {

struct WorstTracker {
    bool is_margin = false; // margins track the minimum; errors track the maximum
    double worst = 0.0;
    long long orbit = -1, step = -1;
    bool seen = false;

    void see(double v, long long o, long long s) {
        bool take = !seen || (is_margin ? v < worst : v > worst);
        if (take) {
            worst = v;
            orbit = o;
            step = s;
        }
        seen = true;
    }

    IdentityCheckResult result(const std::string& name, double tol) const {
        IdentityCheckResult r;
        r.name = name;
        r.worst = worst;
        r.worst_orbit = orbit;
        r.worst_step = step;
        r.pass = seen && (is_margin ? worst >= -tol : worst <= tol);
        return r;
    }
};

} // namespace

std::vector<IdentityCheckResult> run_identity_suite(const IdentitySuiteOptions& opts) {
    const double omega = (opts.omega == 0.0) ? (std::sqrt(5.0) - 1.0) / 4.0 : opts.omega;
    CocycleParams params;
    params.lambda_sq = opts.lambda_sq;
    params.E = opts.energy;
    params.potential = Potential::cosine_normalized();
    const int n = opts.steps;
    if (n < 3 || opts.orbits < 1)
        throw LabError(ErrorCode::InvalidSection, "identity suite needs >= 3 steps and >= 1 orbit");

    const double lambda = std::sqrt(opts.lambda_sq);
    const double lambda4 = opts.lambda_sq * opts.lambda_sq;
    const Bands bands{lambda};
    const double slack = Bands::slack(lambda, opts.energy);
    const double tol = opts.tol;

    WorstTracker e_next, e_prod, e_diff;
    WorstTracker m_corr, m_dist, m_rem, m_band;
    m_corr.is_margin = m_dist.is_margin = m_rem.is_margin = m_band.is_margin = true;

    std::mt19937_64 rng(opts.rng_seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    long long fault_detected = -1;

    std::vector<double> th(n + 1), r(n + 1), dr(n + 1), s(n + 1), ds(n + 1), z(n + 1);
    /* prefix sums with a leading 0 so window sums are P[k+1] - P[j] */
    std::vector<double> P_rs(n + 2), P_sr(n + 2), P_rz(n + 2), P_sz(n + 2), P_zr(n + 2);

    for (long long o = 0; o < opts.orbits; ++o) {
        double theta0 = unif(rng);
        double logl = std::log(lambda);
        double r0 = std::exp(logl + unif(rng) * logl);              // B^u: [lambda, lambda^2]
        double s_end = std::exp(-2.0 * logl + unif(rng) * logl);    // B^s: [lambda^-2, lambda^-1]
        double z_end = s_end * std::exp(unif(rng) * std::log(1.0 / (lambda * s_end)));
        double dr0 = (unif(rng) < 0.5 ? -1.0 : 1.0) * (0.5 + 1.5 * unif(rng));
        double ds_end = (unif(rng) < 0.5 ? -1.0 : 1.0) * (0.5 + 1.5 * unif(rng)) * s_end;

        for (int k = 0; k <= n; ++k) th[k] = RotationOrbit::at(theta0, omega, k);

        /* upper orbit forward, lower two backward (contracting direction) */
        FibreState fu{r0, dr0, 0.0, 0.0, 0.0};
        r[0] = r0;
        dr[0] = dr0;
        for (int k = 0; k < n; ++k) {
            fu = fibre_step_with_derivatives(th[k], fu, params);
            r[k + 1] = fu.r;
            dr[k + 1] = fu.dr_dtheta;
        }
        FibreState fsb{s_end, ds_end, 0.0, 0.0, 0.0};
        s[n] = s_end;
        ds[n] = ds_end;
        for (int k = n - 1; k >= 0; --k) {
            fsb = fibre_unstep_with_derivatives(th[k], fsb, params);
            s[k] = fsb.r;
            ds[k] = fsb.dr_dtheta;
        }
        z[n] = z_end;
        for (int k = n - 1; k >= 0; --k) z[k] = fibre_unstep(th[k], z[k + 1], params);

        if (o == opts.fault_orbit && opts.fault_step >= 0 && opts.fault_step <= n)
            r[opts.fault_step] *= (1.0 + opts.fault_size);

        /* band confinement, relative clearance against the slackened band */
        for (int k = 0; k <= n; ++k) {
            for (double val : {r[k], s[k], z[k]}) {
                double lo = bands.b_lo() * (1.0 - slack), hi = bands.b_hi() * (1.0 + slack);
                double margin = std::min(val / lo - 1.0, 1.0 - val / hi);
                m_band.see(margin, o, k);
            }
        }

        P_rs[0] = P_sr[0] = P_rz[0] = P_sz[0] = P_zr[0] = 0.0;
        for (int k = 0; k <= n; ++k) {
            P_rs[k + 1] = P_rs[k] + std::log(r[k] * s[k]);
            P_sr[k + 1] = P_sr[k] + std::log(s[k] / r[k]);
            P_rz[k + 1] = P_rz[k] + std::log(r[k] * z[k]);
            P_sz[k + 1] = P_sz[k] + std::log(s[k] / z[k]);
            P_zr[k + 1] = P_zr[k] + std::log(z[k] / r[k]);
        }

        /* one-step distance recursion, both coupled pairs */
        for (int k = 0; k < n; ++k) {
            for (const std::vector<double>* low : {&s, &z}) {
                double lhs = r[k + 1] - (*low)[k + 1];
                double rhs = (r[k] - (*low)[k]) / (r[k] * (*low)[k]);
                double rel = std::abs(lhs - rhs) /
                             std::max({std::abs(lhs), std::abs(rhs), 1e-300});
                e_next.see(rel, o, k);
                if (o == opts.fault_orbit && rel > tol && fault_detected < 0)
                    fault_detected = k;
            }
        }

        /* window identities */
        const std::array<std::pair<int, int>, 4> windows{
            {{0, n - 1}, {0, n / 2}, {n / 3, n - 1}, {n / 3, n / 2}}};
        for (const auto& [j, k] : windows) {
            if (j > k) continue;
            /* D_{j,k}(r,z) = D_{j,k}(r,s) * Pi_{j,k}(s,z), compared in logs */
            double lhs_log = -(P_rz[k + 1] - P_rz[j]);
            double rhs_log = -(P_rs[k + 1] - P_rs[j]) + (P_sz[k + 1] - P_sz[j]);
            e_prod.see(std::abs(lhs_log - rhs_log), o, k);

            /* 0 <= Pi(s,r) <= Pi(z,r) <= 1 for s <= z <= r */
            double log_sr = P_sr[k + 1] - P_sr[j];
            double log_zr = P_zr[k + 1] - P_zr[j];
            m_corr.see(log_zr - log_sr, o, k);
            m_corr.see(-log_zr, o, k);
        }

        /* distortion bound from the start: exp(-lambda^4 sum_j 1/D_{j,k}) <=
         * Pi_{0,k}(s,r) <= 1 */
        for (int k : {n / 2, n - 1}) {
            double log_pi = P_sr[k + 1] - P_sr[0];
            m_dist.see(-log_pi, o, k);
            double sum_invD = 0.0;
            bool saturated = false;
            for (int j = 0; j <= k; ++j) {
                double e = P_rs[k + 1] - P_rs[j];
                if (e > 700.0) {
                    saturated = true; // bound is effectively -inf: trivially true
                    break;
                }
                sum_invD += std::exp(e);
            }
            if (!saturated) {
                double bound = -lambda4 * sum_invD;
                m_dist.see((log_pi - bound) / std::max(1.0, std::abs(bound)), o, k);
            }
        }

        /* forward theta-derivative of the pair distance: main transported
         * term plus the remainder R_{0,k}.  The remainder kernel enters with
         * a minus sign: expanding the one-step recursion,
         *   d(r' - s') = d(r - s)/r^2 - ds * (1/s^2 - 1/r^2)
         * and 1/s^2 - 1/r^2 = (1/r + 1/s)(r' - s') > 0 for s < r, so each
         * remainder summand is -ds_j (1/r_j + 1/s_j)(r_{j+1} - s_{j+1})
         * transported by D_{j+1,k} Pi_{j+1,k} = prod 1/r_i^2.  (The
         * magnitude bound below is insensitive to the sign.) */
        double max_ds = 0.0;
        for (int k = 0; k < n; ++k) {
            max_ds = std::max(max_ds, std::abs(ds[k]));
            double d_next = r[k + 1] - s[k + 1];
            double lhs = dr[k + 1] - ds[k + 1];
            double main = d_next * ((dr[0] - ds[0]) / (r[0] - s[0])) *
                          std::exp(P_sr[k + 1] - P_sr[0]);
            double R = -ds[k] * (1.0 / r[k] + 1.0 / s[k]) * d_next;
            for (int j = 0; j < k; ++j) {
                double logD = -(P_rs[k + 1] - P_rs[j + 1]);
                double logPi = P_sr[k + 1] - P_sr[j + 1];
                R -= std::exp(logD + logPi) * ds[j] * (1.0 / r[j] + 1.0 / s[j]) *
                     (r[j + 1] - s[j + 1]);
            }
            double rel = std::abs(lhs - (main + R)) /
                         std::max({std::abs(lhs), std::abs(main) + std::abs(R), 1e-300});
            e_diff.see(rel, o, k);

            if (k >= 2) {
                double bound = 2.0 * lambda4 * static_cast<double>(k) * max_ds;
                m_rem.see((bound - std::abs(R)) / std::max(bound, 1e-300), o, k);
            }
        }
    }

    std::vector<IdentityCheckResult> out;
    IdentityCheckResult next = e_next.result("distance_next_step", tol);
    if (opts.fault_orbit >= 0) {
        next.note = "fault injected at orbit " + std::to_string(opts.fault_orbit) + ", step " +
                    std::to_string(opts.fault_step) + "; first failing step " +
                    (fault_detected >= 0 ? std::to_string(fault_detected) : "none");
    }
    out.push_back(next);
    out.push_back(e_prod.result("distance_products_relation", tol));
    out.push_back(m_corr.result("correlation_monotone", tol));
    out.push_back(m_dist.result("distortion_factor_inequality", tol));
    out.push_back(e_diff.result("derivative_difference_formula", tol));
    out.push_back(m_rem.result("derivative_remainder_bound", tol));
    out.push_back(m_band.result("band_confinement", tol));
    return out;
}

/* ---- commands -------------------------------------------------------------------- */

namespace {

/* Shared edge options: the configured tolerance, horizon capped by T_max. */
EdgeOptions edge_options(const RunConfig& cfg) {
    EdgeOptions e;
    e.tol = cfg.edge_tol;
    e.horizon_cap = std::min(e.horizon_cap, static_cast<double>(cfg.T_max));
    return e;
}

ojson interval_json(double lo, double hi) { return ojson::array({lo, hi}); }

} // namespace

int cmd_curve(const RunConfig& cfg) {
    std::string started = now_iso();
    Workspace w = make_workspace(cfg);
    CocycleParams p = w.sys.params;
    p.E = cfg.energy_value;

    std::vector<double> thetas(cfg.curve_points);
    for (int i = 0; i < cfg.curve_points; ++i)
        thetas[i] = static_cast<double>(i) / cfg.curve_points;

    CurveOptions copt = curve_options(cfg);
    std::vector<CurvePoint> u = evaluate_unstable_many(thetas, p, cfg.omega, copt);
    std::vector<CurvePoint> sl = evaluate_stable_many(thetas, p, cfg.omega, copt);

    double min_gap = std::numeric_limits<double>::infinity(), argmin = 0.0;
    double res_u = 0.0, res_s = 0.0;
    for (int i = 0; i < cfg.curve_points; ++i) {
        double gap = u[i].psi - sl[i].psi;
        if (gap < min_gap) {
            min_gap = gap;
            argmin = thetas[i];
        }
        res_u = std::max(res_u, u[i].residual);
        res_s = std::max(res_s, sl[i].residual);
    }
    if (cfg.gap_floor > 0.0 && min_gap < cfg.gap_floor)
        throw LabError(ErrorCode::NotUniformlyHyperbolic,
                       "minimum gap " + format_g17(min_gap) +
                           " is below the configured floor " + format_g17(cfg.gap_floor));

    CurveNorms nu = curve_norms(u), ns = curve_norms(sl);

    std::vector<OutputRecord> outputs;
    fs::path dir(cfg.output_dir);
    if (wants(cfg, "csv")) {
        std::vector<std::vector<double>> rows;
        rows.reserve(thetas.size());
        for (int i = 0; i < cfg.curve_points; ++i)
            rows.push_back({thetas[i], u[i].psi, sl[i].psi, u[i].dpsi_dtheta,
                            sl[i].dpsi_dtheta, u[i].d2psi_dtheta2, sl[i].d2psi_dtheta2,
                            u[i].dpsi_dE, sl[i].dpsi_dE, u[i].residual, sl[i].residual});
        std::string csv_path = (dir / "curve.csv").string();
        write_csv(csv_path,
                  {"theta", "psi_u", "psi_s", "d_theta_u", "d_theta_s", "d2_theta_u",
                   "d2_theta_s", "d_E_u", "d_E_s", "residual_u", "residual_s"},
                  rows);
        std::ifstream back(csv_path, std::ios::binary);
        std::ostringstream sink;
        sink << back.rdbuf();
        outputs.push_back({csv_path, fnv1a(sink.str())});
    }
    if (wants(cfg, "json")) {
        ojson j;
        j["command"] = "curve";
        j["E_working"] = p.E;
        j["E_raw"] = p.E + w.e_shift;
        j["lambda_w_sq"] = w.sys.info.lambda_w_sq;
        j["e_shift"] = w.e_shift;
        j["theta_shift"] = w.theta_shift;
        j["points"] = cfg.curve_points;
        j["min_gap"] = min_gap;
        j["argmin_theta"] = argmin;
        j["c1_norm_u"] = nu.c1;
        j["c1_norm_s"] = ns.c1;
        j["c2_norm_u"] = nu.c2;
        j["c2_norm_s"] = ns.c2;
        j["residual_max_u"] = res_u;
        j["residual_max_s"] = res_s;
        outputs.push_back(emit((dir / "curve.json").string(), j.dump(2) + "\n"));
    }

    ojson tasks = ojson::array();
    tasks.push_back({{"name", "curve"}, {"status", "ok"}});
    write_manifest(cfg, "curve", started, outputs, tasks);
    return 0;
}

int cmd_edge(const RunConfig& cfg) {
    std::string started = now_iso();
    Workspace w = make_workspace(cfg);
    CocycleParams p = w.sys.params;

    EdgeResult res = find_edge(p, cfg.omega, cfg.bracket_lo, cfg.bracket_hi, edge_options(cfg));

    ojson history = ojson::array();
    for (const auto& [lo, hi] : res.bracket_history) history.push_back(interval_json(lo, hi));

    std::vector<OutputRecord> outputs;
    if (wants(cfg, "json")) {
        ojson j;
        j["command"] = "edge";
        j["E0_working"] = res.E0;
        j["E0_raw"] = res.E0 + w.e_shift;
        j["bracket"] = interval_json(res.bracket_lo, res.bracket_hi);
        j["bracket_width"] = res.bracket_hi - res.bracket_lo;
        j["theta_c"] = res.theta_c;
        j["E0_extrapolated"] = res.E0_extrapolated;
        j["extrapolation_diff"] = res.extrapolation_diff;
        j["lambda_w_sq"] = w.sys.info.lambda_w_sq;
        j["e_shift"] = w.e_shift;
        j["bracket_history"] = history;
        outputs.push_back(emit((fs::path(cfg.output_dir) / "edge.json").string(),
                               j.dump(2) + "\n"));
    }

    ojson tasks = ojson::array();
    tasks.push_back({{"name", "edge"}, {"status", "ok"}});
    ojson extra;
    extra["bracket_history"] = history;
    write_manifest(cfg, "edge", started, outputs, tasks, extra);
    return 0;
}

/* ---- sweep: checkpointed geometric energy schedule ------------------------------- */

namespace {

ojson sweep_point_json(const SweepPoint& r) {
    ojson j;
    j["E"] = r.E;
    j["dE"] = r.dE;
    j["delta"] = r.delta;
    j["theta_c"] = r.theta_c;
    j["quad_coeff"] = r.quad_coeff;
    j["c1_norm_u"] = r.c1_norm_u;
    j["c1_norm_s"] = r.c1_norm_s;
    j["c2_norm_u"] = r.c2_norm_u;
    j["sigma_plus_max"] = r.sigma_plus_max;
    j["sigma_minus_max"] = r.sigma_minus_max;
    j["level_k"] = r.level_k;
    j["eta"] = r.eta;
    j["lyapunov"] = r.lyapunov;
    j["residual_max"] = r.residual_max;
    j["ok"] = r.ok;
    j["note"] = r.note;
    return j;
}

SweepPoint sweep_point_from_json(const ojson& j) {
    SweepPoint r;
    r.E = j.at("E").get<double>();
    r.dE = j.at("dE").get<double>();
    r.delta = j.at("delta").get<double>();
    r.theta_c = j.at("theta_c").get<double>();
    r.quad_coeff = j.at("quad_coeff").get<double>();
    r.c1_norm_u = j.at("c1_norm_u").get<double>();
    r.c1_norm_s = j.at("c1_norm_s").get<double>();
    r.c2_norm_u = j.at("c2_norm_u").get<double>();
    r.sigma_plus_max = j.at("sigma_plus_max").get<long long>();
    r.sigma_minus_max = j.at("sigma_minus_max").get<long long>();
    r.level_k = j.at("level_k").get<int>();
    r.eta = j.at("eta").get<double>();
    r.lyapunov = j.at("lyapunov").get<double>();
    r.residual_max = j.at("residual_max").get<double>();
    r.ok = j.at("ok").get<bool>();
    r.note = j.at("note").get<std::string>();
    return r;
}

void save_checkpoint(const std::string& path, const std::string& digest, double E0,
                     const std::vector<SweepPoint>& rows) {
    ojson j;
    j["config_digest"] = digest;
    j["E0"] = E0;
    ojson arr = ojson::array();
    for (const SweepPoint& r : rows) arr.push_back(sweep_point_json(r));
    j["rows"] = arr;
    write_file_atomic(path, j.dump(2) + "\n");
}

ojson fit_block_linear(const std::vector<double>& dE, const std::vector<double>& delta) {
    ojson j;
    try {
        LinearGapFit f = fit_linear_gap(dE, delta);
        j["slope"] = f.slope;
        j["stderr"] = f.stderr_slope;
        j["r2"] = f.r2;
        j["slope_affine"] = f.slope_affine;
        j["intercept_affine"] = f.intercept_affine;
        j["n"] = f.n;
        j["decades"] = f.decades;
    } catch (const LabError& e) {
        j["error"] = e.what();
    }
    return j;
}

ojson fit_block_norm(const std::vector<double>& delta, const std::vector<double>& norm) {
    ojson j;
    try {
        NormExponentFit f = fit_norm_exponent(delta, norm);
        j["exponent"] = f.exponent;
        j["stderr"] = f.stderr_exponent;
        j["eps_hat"] = f.eps_hat;
        j["n"] = f.n;
        j["decades"] = f.decades;
    } catch (const LabError& e) {
        j["error"] = e.what();
    }
    return j;
}

/* Build fit.json content from sweep rows; shared by sweep and fit. */
ojson fit_report(double E0, double e_shift, double lambda_w, double bracket_lo,
                 double bracket_hi, const std::vector<SweepPoint>& rows) {
    std::vector<double> dE, delta, c1u, c1s;
    double eps_trace_max = 0.0;
    bool have_trace = false;
    for (const SweepPoint& r : rows) {
        if (!r.ok || !(r.delta > 0.0)) continue;
        dE.push_back(r.dE);
        delta.push_back(r.delta);
        c1u.push_back(r.c1_norm_u);
        c1s.push_back(r.c1_norm_s);
        if (r.sigma_plus_max > 0 && r.delta < 1.0) {
            eps_trace_max = std::max(
                eps_trace_max, epsilon_trace(lambda_w, r.eta, r.sigma_plus_max, r.delta));
            have_trace = true;
        }
    }
    ojson j;
    j["edge"] = {{"E0", E0}, {"E0_raw", E0 + e_shift},
                 {"bracket", interval_json(bracket_lo, bracket_hi)}};
    j["linear"] = fit_block_linear(dE, delta);
    j["norm_u"] = fit_block_norm(delta, c1u);
    j["norm_s"] = fit_block_norm(delta, c1s);
    ojson eps;
    if (have_trace) {
        eps["trace_max"] = eps_trace_max;
        if (j["norm_u"].contains("eps_hat"))
            eps["consistent_u"] =
                epsilon_consistent(eps_trace_max, j["norm_u"]["eps_hat"].get<double>());
    } else {
        eps["trace_max"] = nullptr;
    }
    j["epsilon"] = eps;
    ojson notes = ojson::array();
    for (size_t i = 0; i < rows.size(); ++i)
        if (!rows[i].note.empty())
            notes.push_back({{"row", i}, {"note", rows[i].note}});
    j["row_notes"] = notes;
    return j;
}

const std::vector<std::string> kSweepColumns = {
    "E", "E0_minus_E", "delta", "theta_c", "quad_coeff", "c1_norm_u", "c1_norm_s",
    "c2_norm_u", "sigma_plus_max", "sigma_minus_max", "level_k", "eta", "lyapunov",
    "residual_max"};

std::vector<double> sweep_csv_row(const SweepPoint& r) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (!r.ok)
        return {r.E, r.dE, nan, nan, nan, nan, nan, nan, nan, nan, -1.0, nan, nan, nan};
    return {r.E,
            r.dE,
            r.delta,
            r.theta_c,
            r.quad_coeff,
            r.c1_norm_u,
            r.c1_norm_s,
            r.c2_norm_u,
            static_cast<double>(r.sigma_plus_max),
            static_cast<double>(r.sigma_minus_max),
            static_cast<double>(r.level_k),
            r.eta,
            r.lyapunov,
            r.residual_max};
}

} // namespace

int cmd_sweep(const RunConfig& cfg) {
    std::string started = now_iso();
    Workspace w = make_workspace(cfg);
    CocycleParams p = w.sys.params;
    const std::string digest = hex64(fnv1a(canonical_config(cfg)));
    fs::path dir(cfg.output_dir);
    {
        std::error_code ec;
        fs::create_directories(dir, ec);
    }
    const std::string ck_path = (dir / "sweep.checkpoint.json").string();

    double E0 = cfg.sweep_E0;
    std::vector<SweepPoint> rows;
    bool resumed = false;

    if (fs::exists(ck_path)) {
        try {
            std::ifstream in(ck_path, std::ios::binary);
            ojson j = ojson::parse(in);
            if (j.at("config_digest").get<std::string>() == digest) {
                E0 = j.at("E0").get<double>();
                for (const ojson& rj : j.at("rows")) rows.push_back(sweep_point_from_json(rj));
                resumed = true;
            }
        } catch (const std::exception&) {
            rows.clear();       // unreadable checkpoint: start over
            E0 = cfg.sweep_E0;
            resumed = false;
        }
    }

    if (std::isnan(E0)) {
        EdgeResult edge = find_edge(p, cfg.omega, cfg.bracket_lo, cfg.bracket_hi,
                                    edge_options(cfg));
        E0 = edge.E0;
    }
    save_checkpoint(ck_path, digest, E0, rows);

    SweepConfig base;
    base.g = cfg.sweep_g;
    base.rho = cfg.sweep_rho;
    base.E0 = E0;
    base.bracket_lo = cfg.bracket_lo;
    base.bracket_hi = cfg.bracket_hi;
    base.max_level = cfg.ladder_max_level;
    base.grid = grid_options(cfg);
    base.curve = curve_options(cfg);
    base.gap.curve = base.curve;

    /* One energy per run_sweep call so every finished row hits the
     * checkpoint before the next one starts. */
    if (static_cast<int>(rows.size()) > cfg.sweep_points) rows.resize(cfg.sweep_points);
    for (int j = static_cast<int>(rows.size()); j < cfg.sweep_points; ++j) {
        SweepConfig one = base;
        one.points = 1;
        one.g = cfg.sweep_g * std::pow(cfg.sweep_rho, j);
        SweepResult r = run_sweep(p, cfg.omega, one);
        rows.push_back(r.rows.at(0));
        save_checkpoint(ck_path, digest, E0, rows);
    }

    const double lambda_w = std::sqrt(w.sys.info.lambda_w_sq);
    std::vector<OutputRecord> outputs;
    if (wants(cfg, "csv")) {
        std::vector<std::vector<double>> csv_rows;
        csv_rows.reserve(rows.size());
        for (const SweepPoint& r : rows) csv_rows.push_back(sweep_csv_row(r));
        std::string csv_path = (dir / "sweep.csv").string();
        write_csv(csv_path, kSweepColumns, csv_rows);
        std::ifstream back(csv_path, std::ios::binary);
        std::ostringstream sink;
        sink << back.rdbuf();
        outputs.push_back({csv_path, fnv1a(sink.str())});
    }
    if (wants(cfg, "json")) {
        ojson j = fit_report(E0, w.e_shift, lambda_w, cfg.bracket_lo, cfg.bracket_hi, rows);
        j["schedule"] = {{"g", cfg.sweep_g}, {"rho", cfg.sweep_rho},
                         {"points", cfg.sweep_points}};
        j["resumed"] = resumed;
        outputs.push_back(emit((dir / "fit.json").string(), j.dump(2) + "\n"));
    }

    ojson tasks = ojson::array();
    int n_ok = 0;
    for (size_t i = 0; i < rows.size(); ++i) {
        ojson t;
        t["name"] = "row " + std::to_string(i) + " (dE = " + format_g17(rows[i].dE) + ")";
        t["status"] = rows[i].ok ? "ok" : "failed";
        if (!rows[i].note.empty()) t["note"] = rows[i].note;
        tasks.push_back(t);
        if (rows[i].ok) ++n_ok;
    }
    write_manifest(cfg, "sweep", started, outputs, tasks);

    {
        std::error_code ec;
        fs::remove(ck_path, ec); // completed: the CSV/fit now own the data
    }
    return n_ok > 0 ? 0 : 3;
}

int cmd_ladder(const RunConfig& cfg) {
    std::string started = now_iso();
    Workspace w = make_workspace(cfg);
    const double lambda_w = std::sqrt(w.sys.info.lambda_w_sq);

    DiophantineEstimate dioph = estimate_diophantine(cfg.omega, 40);
    SystemConstants constants{lambda_w, dioph.kappa, dioph.tau,
                              potential_c0(w.sys.params.potential, lambda_w)};
    ScaleLadder ladder = build_ladder(constants, cfg.omega, cfg.ladder_max_level);

    ojson tasks = ojson::array();
    tasks.push_back({{"name", "build"}, {"status", "ok"}});

    ojson c2 = ojson::array();
    for (size_t nlev = 0; nlev < ladder.levels.size(); ++nlev) {
        ojson entry;
        entry["n"] = static_cast<int>(nlev);
        std::string status = "ok";
        try {
            C2Report rep = check_condition_C2(ladder, static_cast<int>(nlev));
            entry["pass"] = rep.pass;
            entry["clearance"] = rep.clearance;
        } catch (const LabError& e) {
            entry["error"] = e.what();
            status = "failed";
        }
        c2.push_back(entry);
        tasks.push_back({{"name", "C2 level " + std::to_string(nlev)}, {"status", status}});
    }

    ojson c1 = nullptr;
    if (cfg.ladder_c1_samples > 0 && !ladder.levels.empty()) {
        CocycleParams p = w.sys.params;
        p.E = cfg.ladder_energy;
        std::string status = "ok";
        ojson entry;
        try {
            C1Report rep = check_condition_C1(ladder, 0, p, cfg.ladder_c1_samples);
            entry["level"] = 0;
            entry["pass"] = rep.pass;
            entry["inconclusive"] = rep.inconclusive;
            entry["seeds"] = rep.seeds;
            entry["violations"] = rep.violations;
            entry["worst_clearance"] = rep.worst_clearance;
            entry["max_first_entry"] = rep.max_first_entry;
            if (rep.bad_theta0) entry["bad_theta0"] = *rep.bad_theta0;
            if (rep.bad_r0) entry["bad_r0"] = *rep.bad_r0;
            if (rep.bad_step) entry["bad_step"] = *rep.bad_step;
        } catch (const LabError& e) {
            entry["error"] = e.what();
            status = "failed";
        }
        c1 = entry;
        tasks.push_back({{"name", "C1 level 0"}, {"status", status}});
    }

    ojson boxes = nullptr;
    if (cfg.ladder_bisect_level >= 0 &&
        cfg.ladder_bisect_level < static_cast<int>(ladder.levels.size())) {
        CocycleParams p = w.sys.params;
        p.E = cfg.ladder_energy;
        std::string status = "ok";
        ojson entry;
        entry["level"] = cfg.ladder_bisect_level;
        try {
            bracket_level_energies(ladder, cfg.ladder_bisect_level, p, cfg.bracket_lo,
                                   cfg.bracket_hi, std::max(cfg.edge_tol, 1e-12));
            const LadderLevel& lvl = ladder.levels[cfg.ladder_bisect_level];
            entry["E_minus"] = lvl.E_minus ? ojson(*lvl.E_minus) : ojson(nullptr);
            entry["E_plus"] = lvl.E_plus ? ojson(*lvl.E_plus) : ojson(nullptr);
            if (lvl.E_minus) {
                CocycleParams pm = p;
                pm.E = *lvl.E_minus;
                BoxImagePair pair = box_images(ladder, cfg.ladder_bisect_level, pm);
                entry["separation_at_E_minus"] = pair.min_separation;
                entry["argmin_theta"] = pair.argmin_theta;
            }
        } catch (const LabError& e) {
            entry["error"] = e.what();
            status = "failed";
        }
        boxes = entry;
        tasks.push_back(
            {{"name", "bisect level " + std::to_string(cfg.ladder_bisect_level)},
             {"status", status}});
    }

    std::vector<OutputRecord> outputs;
    if (wants(cfg, "json")) {
        ojson j;
        j["command"] = "ladder";
        j["constants"] = {{"lambda", constants.lambda},
                          {"kappa", constants.kappa},
                          {"tau", constants.tau},
                          {"c0", constants.c0}};
        j["omega"] = cfg.omega;
        j["truncated"] = ladder.truncated;
        ojson levels = ojson::array();
        for (const LadderLevel& lvl : ladder.levels) {
            ojson e;
            e["n"] = lvl.n;
            e["I_center"] = lvl.I.center;
            e["I_halflength"] = lvl.I.halflength;
            e["M"] = lvl.M;
            e["M_degenerate"] = lvl.M_degenerate;
            e["N"] = lvl.N;
            e["E_minus"] = lvl.E_minus ? ojson(*lvl.E_minus) : ojson(nullptr);
            e["E_plus"] = lvl.E_plus ? ojson(*lvl.E_plus) : ojson(nullptr);
            levels.push_back(e);
        }
        j["levels"] = levels;
        j["C2"] = c2;
        j["C1"] = c1;
        j["boxes"] = boxes;
        outputs.push_back(emit((fs::path(cfg.output_dir) / "ladder.json").string(),
                               j.dump(2) + "\n"));
    }

    write_manifest(cfg, "ladder", started, outputs, tasks);
    return 0;
}

int cmd_check(const RunConfig& cfg) {
    std::string started = now_iso();
    ojson checks = ojson::array();
    bool all_pass = true;
    auto add = [&checks, &all_pass](const std::string& name, bool pass, ojson details) {
        ojson c;
        c["name"] = name;
        c["pass"] = pass;
        c["details"] = std::move(details);
        checks.push_back(c);
        all_pass = all_pass && pass;
    };

    /* 1. distance / distortion identity suite on coupled orbit triples */
    IdentitySuiteOptions iopt;
    iopt.orbits = cfg.check_orbits;
    if (cfg.inject_fault) {
        iopt.fault_orbit = 0;
        iopt.fault_step = iopt.steps / 2;
    }
    for (const IdentityCheckResult& r : run_identity_suite(iopt)) {
        ojson d;
        d["worst"] = r.worst;
        d["worst_orbit"] = r.worst_orbit;
        d["worst_step"] = r.worst_step;
        if (!r.note.empty()) d["note"] = r.note;
        add(r.name, r.pass, d);
    }

    /* 2. chain-rule derivative recursions vs central differences */
    {
        Workspace w = make_workspace(cfg);
        CocycleParams p = w.sys.params;
        p.E = cfg.energy_value;
        ojson d;
        bool pass = true;
        try {
            double worst = 0.0;
            CurveOptions copt = curve_options(cfg);
            for (double theta : {0.13, 0.37, 0.81}) {
                DerivativeCheck chk =
                    derivative_recursion_check(theta, p, cfg.omega, 1e-4, copt);
                worst = std::max({worst, chk.rel_err_dtheta, chk.rel_err_d2theta,
                                  chk.rel_err_dE, chk.rel_err_d2E});
            }
            d["worst"] = worst;
            d["tolerance"] = 1e-4;
            pass = worst <= 1e-4;
        } catch (const LabError& e) {
            d["error"] = e.what();
            pass = false;
        }
        add("derivative_recursion_fd", pass, d);
    }

    /* 3. visit-frequency counting bounds on random interval systems */
    {
        ojson d;
        bool pass = true;
        try {
            DiophantineEstimate dioph = estimate_diophantine(cfg.omega, 40);
            SystemConstants constants{std::max(2.0, std::sqrt(cfg.lambda_sq)), dioph.kappa,
                                      dioph.tau, 1.0};
            std::mt19937_64 rng(987654321u);
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            const long long t = 10'000;
            int violations = 0;
            double worst_ratio = 0.0;
            for (int i = 0; i < 100; ++i) {
                double len = std::exp(std::log(1e-4) +
                                      unif(rng) * std::log(3e-2 / 1e-4));
                Arc I{unif(rng), len / 2.0};
                long long spread = 1 + static_cast<long long>(unif(rng) * 5.0);
                IntervalSystem sys;
                for (long long m = -spread; m <= spread; ++m)
                    sys.push_back(translate(I, m * cfg.omega));
                sys = normalize_arcs(sys);
                SystemBounds bounds = interval_system_bounds(constants, len, spread);
                VisitStats stats = empirical_visit_frequency(sys, unif(rng), cfg.omega, t,
                                                             Direction::Forward);
                double bound = bounds.frequency_bound(static_cast<double>(t));
                worst_ratio = std::max(worst_ratio, stats.frequency / std::max(bound, 1e-300));
                if (stats.frequency > bound + 1e-12) ++violations;
            }
            d["systems"] = 100;
            d["violations"] = violations;
            d["worst_ratio"] = worst_ratio;
            pass = violations == 0;
        } catch (const LabError& e) {
            d["error"] = e.what();
            pass = false;
        }
        add("counting_bounds", pass, d);
    }

    /* 4. ladder conditions at the strong-coupling demo scale */
    {
        ojson d;
        bool pass = true;
        try {
            CocycleParams demo;
            demo.lambda_sq = 1e8;
            demo.E = -5.0;
            demo.potential = Potential::cosine_normalized();
            DiophantineEstimate dioph = estimate_diophantine(cfg.omega, 40);
            SystemConstants constants{1e4, dioph.kappa, dioph.tau,
                                      potential_c0(demo.potential, 1e4)};
            ScaleLadder ladder = build_ladder(constants, cfg.omega, 1);
            C2Report c2_0 = check_condition_C2(ladder, 0);
            d["C2_level0"] = {{"pass", c2_0.pass}, {"clearance", c2_0.clearance}};
            pass = pass && c2_0.pass;
            if (ladder.levels.size() > 1) {
                C2Report c2_1 = check_condition_C2(ladder, 1);
                d["C2_level1"] = {{"pass", c2_1.pass}, {"clearance", c2_1.clearance}};
                pass = pass && c2_1.pass;
            }
            C1Report c1 = check_condition_C1(ladder, 0, demo, 50);
            d["C1_level0"] = {{"pass", c1.pass},
                              {"seeds", c1.seeds},
                              {"violations", c1.violations},
                              {"worst_clearance", c1.worst_clearance}};
            pass = pass && c1.pass;
            BoxImagePair boxes = box_images(ladder, 0, demo);
            d["boxes_disjoint"] = boxes.disjoint;
            d["box_separation"] = boxes.min_separation;
            pass = pass && boxes.disjoint;
        } catch (const LabError& e) {
            d["error"] = e.what();
            pass = false;
        }
        add("ladder_conditions", pass, d);
    }

    ojson report;
    report["version"] = kVersion;
    report["command"] = "check";
    report["config_digest"] = hex64(fnv1a(canonical_config(cfg)));
    report["all_pass"] = all_pass;
    report["checks"] = checks;

    std::vector<OutputRecord> outputs;
    outputs.push_back(emit((fs::path(cfg.output_dir) / "check_report.json").string(),
                           report.dump(2) + "\n"));

    ojson tasks = ojson::array();
    for (const ojson& c : checks)
        tasks.push_back({{"name", c["name"]},
                         {"status", c["pass"].get<bool>() ? "ok" : "failed"}});
    write_manifest(cfg, "check", started, outputs, tasks);
    /* failing checks are data, not a crash: the report carries them */
    return 0;
}

int cmd_fit(const RunConfig& cfg) {
    std::string started = now_iso();
    fs::path dir(cfg.output_dir);
    std::string input =
        cfg.fit_input.empty() ? (dir / "sweep.csv").string() : cfg.fit_input;

    std::ifstream in(input);
    if (!in) config_error("cannot open sweep CSV '" + input + "'");
    std::string line;
    if (!std::getline(in, line)) config_error("empty sweep CSV '" + input + "'");
    std::vector<std::string> header = split(trim(line), ',');
    auto col = [&header, &input](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            config_error("sweep CSV '" + input + "' is missing column '" + name + "'");
        return static_cast<size_t>(it - header.begin());
    };
    size_t cE = col("E"), cdE = col("E0_minus_E"), cdelta = col("delta");
    size_t cc1u = col("c1_norm_u"), cc1s = col("c1_norm_s");

    std::vector<SweepPoint> rows;
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t.empty()) continue;
        std::vector<std::string> cells = split(t, ',');
        if (cells.size() < header.size())
            config_error("sweep CSV '" + input + "': short row");
        SweepPoint r;
        r.E = std::strtod(cells[cE].c_str(), nullptr);
        r.dE = std::strtod(cells[cdE].c_str(), nullptr);
        r.delta = std::strtod(cells[cdelta].c_str(), nullptr);
        r.c1_norm_u = std::strtod(cells[cc1u].c_str(), nullptr);
        r.c1_norm_s = std::strtod(cells[cc1s].c_str(), nullptr);
        r.ok = std::isfinite(r.delta) && r.delta > 0.0 && r.dE > 0.0;
        rows.push_back(r);
    }
    if (rows.empty()) config_error("sweep CSV '" + input + "' has no data rows");

    double E0 = rows.front().E + rows.front().dE;
    Workspace w = make_workspace(cfg);
    const double lambda_w = std::sqrt(w.sys.info.lambda_w_sq);

    ojson j = fit_report(E0, w.e_shift, lambda_w, cfg.bracket_lo, cfg.bracket_hi, rows);
    j["input"] = input;

    std::vector<OutputRecord> outputs;
    outputs.push_back(emit((dir / "fit.json").string(), j.dump(2) + "\n"));

    ojson tasks = ojson::array();
    tasks.push_back({{"name", "fit"}, {"status", "ok"}});
    write_manifest(cfg, "fit", started, outputs, tasks);
    return 0;
}

/* ---- CLI ---------------------------------------------------------------------------- */

namespace {

int exit_code_for(const LabError& e) {
    switch (e.code()) {
        case ErrorCode::BracketInvalid:
        case ErrorCode::NonMonotonePredicate:
            return 4;
        case ErrorCode::MissingSystemConstants:
            return 2;
        default:
            return 3;
    }
}

} // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"cocycle-lab: invariant sections of quasi-periodic projective "
                 "cocycles near the lowest spectral edge"};
    app.set_version_flag("--version", std::string("cocycle-lab ") + kVersion);
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    struct Entry {
        const char* name;
        const char* desc;
        int (*fn)(const RunConfig&);
    };
    const std::array<Entry, 6> entries{{
        {"curve", "sample both invariant sections at one energy", cmd_curve},
        {"edge", "bisect the lowest spectral edge and cross-check by extrapolation",
         cmd_edge},
        {"sweep", "run the geometric energy schedule with checkpoint/resume", cmd_sweep},
        {"ladder", "build the scale ladder and check its conditions", cmd_ladder},
        {"check", "run the randomized identity and counting diagnostics", cmd_check},
        {"fit", "refit the asymptotic laws from an existing sweep CSV", cmd_fit},
    }};
    std::map<std::string, int (*)(const RunConfig&)> dispatch;
    for (const Entry& e : entries) {
        CLI::App* sub = app.add_subcommand(e.name, e.desc);
        sub->add_option("--config", config_path, "INI or JSON configuration file");
        sub->add_option("--set", overrides, "key=value override (repeatable)");
        dispatch[e.name] = e.fn;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    RunConfig cfg;
    try {
        if (!config_path.empty()) {
            cfg = load_config(config_path);
        } else {
            cfg.omega = eval_expression(cfg.omega_expr);
        }
        for (const std::string& s : overrides) apply_override(cfg, s);
        cfg.validate();
    } catch (const LabError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    }

    if (cfg.threads > 0)
        ::setenv("COCYCLE_LAB_THREADS", std::to_string(cfg.threads).c_str(), 1);

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return dispatch.at(command)(cfg);
    } catch (const LabError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}

} // namespace cocycle_lab
