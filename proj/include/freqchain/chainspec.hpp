#pragma once

// Phase-coherent frequency chain descriptions.
//
// A chain file declares the oscillators of a measurement and the phase locks
// that tie them together; compile_equation() eliminates every locked
// oscillator and returns the target frequency as an exact linear form over
// the independently known quantities (references, constants, counted beats
// and comb parameters).
//
// File format, one statement per line, '#' starts a comment:
//
//   ref     <name> <frequency> sigma <frequency>
//   const   <name> <frequency>
//   osc     <name>
//   comb    <name> rep <frequency> [sigma <frequency>]
//   counted <name>
//   lock <out> = <k> * <in> [(+|-) <const-or-literal>] [div <n>]
//   lock <out> = mode(<comb>, <m>) [(+|-) <const-or-literal>] [div <n>]
//   lock mode(<comb>, <m>) = <k> * <in> [(+|-) <const-or-literal>] [div <n>]
//   beat <counted> = <a> - <b>
//   target <name>
//
// The third lock form steers a comb so that mode m follows an oscillator; it
// fixes the comb's offset frequency. "div <n>" records a servo prescaler and
// has no effect on the frequency relation.

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "freqchain/error.hpp"
#include "freqchain/exactfreq.hpp"

namespace freqchain {

enum class NodeKind { kReference, kOscillator, kComb, kCounted, kConstant };

inline std::string_view to_string(NodeKind k) {
  switch (k) {
    case NodeKind::kReference: return "ref";
    case NodeKind::kOscillator: return "osc";
    case NodeKind::kComb: return "comb";
    case NodeKind::kCounted: return "counted";
    case NodeKind::kConstant: return "const";
  }
  return "?";
}

struct NodeDecl {
  std::string name;
  NodeKind kind = NodeKind::kOscillator;
  // reference/constant: the value; comb: the nominal repetition rate.
  std::optional<UncertainFrequency> value;
  int line = 0;
};

// Additive offset of a lock: a named constant or a literal, with a sign.
struct LockOffset {
  int sign = +1;
  std::optional<std::string> constant;
  Frequency literal;

  bool present() const { return constant.has_value() || literal != Frequency{}; }
};

struct HarmonicLock {
  std::string out;
  Int128 multiplier = 1;
  std::string in;
  LockOffset offset;
};

struct CombModeLock {
  std::string out;
  std::string comb;
  Int128 mode = 0;
  LockOffset offset;
};

// mode(comb, m) = k * in + offset; fixes the comb's offset frequency.
struct CombSteerLock {
  std::string comb;
  Int128 mode = 0;
  Int128 multiplier = 1;
  std::string in;
  LockOffset offset;
};

// counted = a - b
struct BeatLock {
  std::string counted;
  std::string a;
  std::string b;
};

struct LockDecl {
  std::variant<HarmonicLock, CombModeLock, CombSteerLock, BeatLock> lock;
  int line = 0;
  std::optional<int> divider;
};

struct ChainSpec {
  std::vector<NodeDecl> nodes;
  std::vector<LockDecl> locks;
  std::string target;

  const NodeDecl* find(std::string_view name) const {
    for (const auto& n : nodes) {
      if (n.name == name) return &n;
    }
    return nullptr;
  }
};

// Symbol names of the two internal degrees of freedom every comb owns.
inline std::string comb_rep_symbol(std::string_view comb) { return std::string(comb) + ".f_rep"; }
inline std::string comb_ceo_symbol(std::string_view comb) { return std::string(comb) + ".f_ceo"; }

class ChainError : public Error {
 public:
  enum class Kind { kUnderdetermined, kOverdetermined, kCyclic, kInvalid };
  ChainError(Kind kind, const std::string& what) : Error(prefix(kind) + what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  static std::string prefix(Kind k) {
    switch (k) {
      case Kind::kUnderdetermined: return "underdetermined: ";
      case Kind::kOverdetermined: return "overdetermined: ";
      case Kind::kCyclic: return "cyclic lock graph: ";
      case Kind::kInvalid: return "invalid chain: ";
    }
    return "";
  }
  Kind kind_;
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

struct Token {
  std::string text;
  int column = 0;  // 1-based
};

inline bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
inline bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

inline std::vector<Token> tokenize_chain_line(std::string_view line, int line_no) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < line.size()) {
    const char c = line[i];
    if (c == '#') break;
    if (c == ' ' || c == '\t' || c == '\r') {
      ++i;
      continue;
    }
    const int col = static_cast<int>(i) + 1;
    if (c == '=' || c == '*' || c == '(' || c == ')' || c == ',') {
      out.push_back({std::string(1, c), col});
      ++i;
      continue;
    }
    // A sign directly followed by a digit or '.' is part of a number.
    const bool signed_number =
        (c == '+' || c == '-') && i + 1 < line.size() && (std::isdigit(static_cast<unsigned char>(line[i + 1])) || line[i + 1] == '.');
    if ((c == '+' || c == '-') && !signed_number) {
      out.push_back({std::string(1, c), col});
      ++i;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' || signed_number) {
      std::size_t j = i + 1;
      while (j < line.size() && (std::isdigit(static_cast<unsigned char>(line[j])) || line[j] == '.')) ++j;
      out.push_back({std::string(line.substr(i, j - i)), col});
      i = j;
      continue;
    }
    if (is_ident_start(c)) {
      std::size_t j = i + 1;
      while (j < line.size() && is_ident_char(line[j])) ++j;
      out.push_back({std::string(line.substr(i, j - i)), col});
      i = j;
      continue;
    }
    throw ParseError(std::string("unexpected character '") + c + "'", line_no, col);
  }
  return out;
}

inline bool is_unit(std::string_view s) {
  return s == "Hz" || s == "kHz" || s == "MHz" || s == "GHz" || s == "THz";
}

class LineCursor {
 public:
  LineCursor(std::vector<Token> tokens, int line, std::size_t line_length)
      : tokens_(std::move(tokens)), line_(line), end_column_(static_cast<int>(line_length) + 1) {}

  bool done() const { return pos_ >= tokens_.size(); }
  int line() const { return line_; }
  int column() const { return done() ? end_column_ : tokens_[pos_].column; }
  const std::string& peek() const {
    static const std::string empty;
    return done() ? empty : tokens_[pos_].text;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, line_, column()); }

  std::string next(const char* what) {
    if (done()) fail(std::string("expected ") + what);
    return tokens_[pos_++].text;
  }

  void expect(std::string_view literal) {
    if (done() || tokens_[pos_].text != literal) fail("expected '" + std::string(literal) + "'");
    ++pos_;
  }

  bool accept(std::string_view literal) {
    if (!done() && tokens_[pos_].text == literal) {
      ++pos_;
      return true;
    }
    return false;
  }

  std::string identifier(const char* what) {
    if (done() || !is_ident_start(tokens_[pos_].text[0])) fail(std::string("expected ") + what);
    return tokens_[pos_++].text;
  }

  Int128 integer(const char* what) {
    if (done()) fail(std::string("expected ") + what);
    const std::string& t = tokens_[pos_].text;
    std::size_t k = (t[0] == '+' || t[0] == '-') ? 1 : 0;
    if (k == t.size()) fail(std::string("expected ") + what);
    Int128 v = 0;
    for (; k < t.size(); ++k) {
      if (!std::isdigit(static_cast<unsigned char>(t[k]))) fail(std::string("expected ") + what);
      v = checked_add(checked_mul(v, 10), t[k] - '0');
    }
    ++pos_;
    return t[0] == '-' ? -v : v;
  }

  Frequency frequency() {
    if (done()) fail("expected frequency");
    const int col = column();
    std::string text = tokens_[pos_++].text;
    if (!done() && is_unit(peek())) text += " " + tokens_[pos_++].text;
    try {
      return parse_frequency(text);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_, col);
    } catch (const OverflowError& e) {
      throw ParseError(e.what(), line_, col);
    }
  }

  void finish() {
    if (!done()) fail("unexpected '" + tokens_[pos_].text + "'");
  }

 private:
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  int line_;
  int end_column_;
};

inline LockOffset parse_offset(LineCursor& cur) {
  LockOffset off;
  if (cur.peek() == "+" || cur.peek() == "-") {
    off.sign = cur.next("sign") == "+" ? +1 : -1;
    if (!cur.done() && is_ident_start(cur.peek()[0])) {
      off.constant = cur.identifier("constant");
    } else {
      off.literal = cur.frequency();
    }
  }
  return off;
}

inline std::optional<int> parse_divider(LineCursor& cur) {
  if (!cur.accept("div")) return std::nullopt;
  const Int128 n = cur.integer("divider ratio");
  if (n < 1 || n > 1'000'000'000) cur.fail("divider ratio out of range");
  return static_cast<int>(n);
}

inline void parse_mode_ref(LineCursor& cur, std::string& comb, Int128& mode) {
  cur.expect("mode");
  cur.expect("(");
  comb = cur.identifier("comb name");
  cur.expect(",");
  mode = cur.integer("mode index");
  cur.expect(")");
}

inline Int128 parse_multiplier(LineCursor& cur) {
  const Int128 k = cur.integer("harmonic multiplier");
  if (k < 1) cur.fail("harmonic multiplier must be >= 1");
  cur.expect("*");
  return k;
}

}  // namespace detail

// Parses a chain file and checks that it is structurally valid: unique names,
// every reference declared with a compatible kind, exactly one target.
inline ChainSpec parse_chain(std::string_view text) {
  ChainSpec spec;
  std::optional<int> target_line;
  std::map<std::string, int, std::less<>> lock_name_lines;  // name -> first line it was used on

  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view raw = text.substr(start, end - start);
    ++line_no;
    start = end + 1;

    detail::LineCursor cur(detail::tokenize_chain_line(raw, line_no), line_no, raw.size());
    if (cur.done()) {
      if (end == text.size()) break;
      continue;
    }
    const std::string keyword = cur.identifier("statement keyword");

    auto declare = [&](NodeDecl decl) {
      if (spec.find(decl.name)) {
        throw ParseError("duplicate node '" + decl.name + "' (first declared on line " +
                             std::to_string(spec.find(decl.name)->line) + ")",
                         line_no, 1);
      }
      decl.line = line_no;
      spec.nodes.push_back(std::move(decl));
    };
    auto use = [&](const std::string& name) { lock_name_lines.try_emplace(name, line_no); };

    if (keyword == "ref") {
      NodeDecl d{cur.identifier("node name"), NodeKind::kReference, std::nullopt, 0};
      const Frequency v = cur.frequency();
      cur.expect("sigma");
      const Frequency s = cur.frequency();
      if (s < Frequency{}) cur.fail("sigma must be non-negative");
      d.value = UncertainFrequency(v, s);
      cur.finish();
      declare(std::move(d));
    } else if (keyword == "const") {
      NodeDecl d{cur.identifier("node name"), NodeKind::kConstant, std::nullopt, 0};
      d.value = UncertainFrequency(cur.frequency(), Frequency{});
      cur.finish();
      declare(std::move(d));
    } else if (keyword == "osc" || keyword == "counted") {
      NodeDecl d{cur.identifier("node name"), keyword == "osc" ? NodeKind::kOscillator : NodeKind::kCounted,
                 std::nullopt, 0};
      cur.finish();
      declare(std::move(d));
    } else if (keyword == "comb") {
      NodeDecl d{cur.identifier("node name"), NodeKind::kComb, std::nullopt, 0};
      cur.expect("rep");
      const Frequency rep = cur.frequency();
      if (rep <= Frequency{}) cur.fail("repetition rate must be positive");
      Frequency sigma;
      if (cur.accept("sigma")) sigma = cur.frequency();
      if (sigma < Frequency{}) cur.fail("sigma must be non-negative");
      d.value = UncertainFrequency(rep, sigma);
      cur.finish();
      declare(std::move(d));
    } else if (keyword == "lock") {
      LockDecl decl;
      decl.line = line_no;
      if (cur.peek() == "mode") {
        CombSteerLock l;
        detail::parse_mode_ref(cur, l.comb, l.mode);
        cur.expect("=");
        l.multiplier = detail::parse_multiplier(cur);
        l.in = cur.identifier("input node");
        l.offset = detail::parse_offset(cur);
        use(l.comb);
        use(l.in);
        if (l.offset.constant) use(*l.offset.constant);
        decl.lock = std::move(l);
      } else {
        const std::string out = cur.identifier("locked node");
        cur.expect("=");
        use(out);
        if (cur.peek() == "mode") {
          CombModeLock l;
          l.out = out;
          detail::parse_mode_ref(cur, l.comb, l.mode);
          l.offset = detail::parse_offset(cur);
          use(l.comb);
          if (l.offset.constant) use(*l.offset.constant);
          decl.lock = std::move(l);
        } else {
          HarmonicLock l;
          l.out = out;
          l.multiplier = detail::parse_multiplier(cur);
          l.in = cur.identifier("input node");
          l.offset = detail::parse_offset(cur);
          use(l.in);
          if (l.offset.constant) use(*l.offset.constant);
          decl.lock = std::move(l);
        }
      }
      decl.divider = detail::parse_divider(cur);
      cur.finish();
      spec.locks.push_back(std::move(decl));
    } else if (keyword == "beat") {
      BeatLock l;
      l.counted = cur.identifier("counted node");
      cur.expect("=");
      l.a = cur.identifier("node");
      cur.expect("-");
      l.b = cur.identifier("node");
      cur.finish();
      use(l.counted);
      use(l.a);
      use(l.b);
      spec.locks.push_back({std::move(l), line_no, std::nullopt});
    } else if (keyword == "target") {
      if (target_line) throw ParseError("second target (first on line " + std::to_string(*target_line) + ")", line_no, 1);
      spec.target = cur.identifier("target node");
      cur.finish();
      target_line = line_no;
      use(spec.target);
    } else {
      throw ParseError("unknown statement '" + keyword + "'", line_no, 1);
    }
    if (end == text.size()) break;
  }

  if (!target_line) throw ParseError("no target");

  for (const auto& [name, line] : lock_name_lines) {
    if (!spec.find(name)) throw ParseError("undeclared node '" + name + "'", line, 1);
  }

  // Kind checks.
  auto kind_of = [&](const std::string& n) { return spec.find(n)->kind; };
  auto require = [&](bool ok, int line, const std::string& what) {
    if (!ok) throw ParseError(what, line, 1);
  };
  auto check_offset = [&](const LockOffset& off, int line) {
    if (off.constant)
      require(kind_of(*off.constant) == NodeKind::kConstant, line, "offset '" + *off.constant + "' is not a constant");
  };
  for (const auto& decl : spec.locks) {
    const int ln = decl.line;
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, HarmonicLock>) {
            require(kind_of(l.out) == NodeKind::kOscillator, ln, "locked node '" + l.out + "' is not an oscillator");
            require(kind_of(l.in) != NodeKind::kComb, ln, "harmonic input '" + l.in + "' is a comb; use mode()");
            check_offset(l.offset, ln);
          } else if constexpr (std::is_same_v<T, CombModeLock>) {
            require(kind_of(l.out) == NodeKind::kOscillator, ln, "locked node '" + l.out + "' is not an oscillator");
            require(kind_of(l.comb) == NodeKind::kComb, ln, "'" + l.comb + "' is not a comb");
            require(l.mode >= 0, ln, "mode index must be >= 0");
            check_offset(l.offset, ln);
          } else if constexpr (std::is_same_v<T, CombSteerLock>) {
            require(kind_of(l.comb) == NodeKind::kComb, ln, "'" + l.comb + "' is not a comb");
            require(l.mode >= 0, ln, "mode index must be >= 0");
            require(kind_of(l.in) != NodeKind::kComb, ln, "steering input '" + l.in + "' is a comb");
            check_offset(l.offset, ln);
          } else {
            require(kind_of(l.counted) == NodeKind::kCounted, ln, "'" + l.counted + "' is not a counted node");
            require(kind_of(l.a) != NodeKind::kComb && kind_of(l.b) != NodeKind::kComb, ln,
                    "beat partners must not be combs; lock an oscillator to a mode first");
            require(kind_of(l.a) != NodeKind::kCounted && kind_of(l.b) != NodeKind::kCounted, ln,
                    "beat partners must not be counted nodes");
          }
        },
        decl.lock);
  }
  require(kind_of(spec.target) != NodeKind::kComb, *target_line, "target must not be a comb");
  return spec;
}

// ---------------------------------------------------------------------------
// Compilation

struct SymbolInfo {
  NodeKind kind = NodeKind::kReference;  // kComb for comb internals
  UncertainFrequency nominal;           // value from the chain file, where it has one
};

struct MeasurementEquation {
  std::string target;
  // Canonical (sorted) coefficient map. Comb internals are always listed,
  // with coefficient 0 when they cancel or are eliminated.
  std::map<std::string, Ratio> terms;
  std::map<std::string, SymbolInfo> symbols;

  Ratio coefficient(const std::string& symbol) const {
    const auto it = terms.find(symbol);
    return it == terms.end() ? Ratio(0) : it->second;
  }

  friend bool operator==(const MeasurementEquation& a, const MeasurementEquation& b) {
    return a.target == b.target && a.terms == b.terms;
  }
};

namespace detail {

using LinearForm = std::map<std::string, Ratio>;  // symbol -> coefficient

inline void add_to(LinearForm& f, const std::string& sym, const Ratio& c) {
  if (c.is_zero()) return;
  auto [it, inserted] = f.try_emplace(sym, c);
  if (!inserted) {
    it->second += c;
    if (it->second.is_zero()) f.erase(it);
  }
}

inline std::string literal_symbol(int line) { return "literal@" + std::to_string(line); }

// One constraint row: sum(unknown coefficients) = known linear form.
struct Row {
  std::vector<Ratio> lhs;
  LinearForm rhs;
  int line = 0;
};

}  // namespace detail

inline MeasurementEquation compile_equation(const ChainSpec& spec) {
  using detail::add_to;

  // Comb offsets become unknowns when a steering lock fixes them.
  std::set<std::string> steered;
  for (const auto& decl : spec.locks) {
    if (const auto* s = std::get_if<CombSteerLock>(&decl.lock)) {
      if (!steered.insert(s->comb).second) {
        throw ChainError(ChainError::Kind::kOverdetermined,
                         "comb '" + s->comb + "' steered twice (line " + std::to_string(decl.line) + ")");
      }
    }
  }

  // Unknown columns: oscillators in declaration order, then steered comb offsets.
  std::vector<std::string> unknowns;
  std::map<std::string, std::size_t> column;
  for (const auto& n : spec.nodes) {
    if (n.kind == NodeKind::kOscillator) {
      column[n.name] = unknowns.size();
      unknowns.push_back(n.name);
    }
  }
  for (const auto& n : spec.nodes) {
    if (n.kind == NodeKind::kComb && steered.count(n.name)) {
      column[comb_ceo_symbol(n.name)] = unknowns.size();
      unknowns.push_back(comb_ceo_symbol(n.name));
    }
  }

  MeasurementEquation eq;
  eq.target = spec.target;
  for (const auto& n : spec.nodes) {
    switch (n.kind) {
      case NodeKind::kReference:
      case NodeKind::kConstant: eq.symbols[n.name] = {n.kind, *n.value}; break;
      case NodeKind::kCounted: eq.symbols[n.name] = {n.kind, {}}; break;
      case NodeKind::kComb:
        eq.symbols[comb_rep_symbol(n.name)] = {NodeKind::kComb, *n.value};
        eq.symbols[comb_ceo_symbol(n.name)] = {NodeKind::kComb, {}};
        break;
      case NodeKind::kOscillator: break;
    }
  }

  // Which unknown each lock fixes. Beats fix whichever partner nothing else fixes.
  std::vector<std::string> fixes(spec.locks.size());
  std::map<std::string, int> fixed_at;  // unknown -> line
  auto claim = [&](const std::string& u, std::size_t i) {
    const auto [it, inserted] = fixed_at.try_emplace(u, spec.locks[i].line);
    if (!inserted) {
      throw ChainError(ChainError::Kind::kOverdetermined, "'" + u + "' fixed twice (lines " +
                                                              std::to_string(it->second) + " and " +
                                                              std::to_string(spec.locks[i].line) + ")");
    }
    fixes[i] = u;
  };
  for (std::size_t i = 0; i < spec.locks.size(); ++i) {
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, HarmonicLock> || std::is_same_v<T, CombModeLock>) {
            claim(l.out, i);
          } else if constexpr (std::is_same_v<T, CombSteerLock>) {
            claim(comb_ceo_symbol(l.comb), i);
          }
        },
        spec.locks[i].lock);
  }
  auto is_unknown = [&](const std::string& n) { return column.count(n) != 0; };
  for (bool progress = true; progress;) {
    progress = false;
    for (std::size_t i = 0; i < spec.locks.size(); ++i) {
      const auto* b = std::get_if<BeatLock>(&spec.locks[i].lock);
      if (!b || !fixes[i].empty()) continue;
      std::vector<std::string> free;
      for (const auto* side : {&b->a, &b->b}) {
        if (is_unknown(*side) && !fixed_at.count(*side)) free.push_back(*side);
      }
      if (free.size() == 1) {
        claim(free[0], i);
        progress = true;
      }
    }
  }
  for (std::size_t i = 0; i < spec.locks.size(); ++i) {
    const auto* b = std::get_if<BeatLock>(&spec.locks[i].lock);
    if (!b || !fixes[i].empty()) continue;
    const bool a_free = is_unknown(b->a) && !fixed_at.count(b->a);
    const bool b_free = is_unknown(b->b) && !fixed_at.count(b->b);
    if (a_free && b_free) {
      throw ChainError(ChainError::Kind::kUnderdetermined,
                       "beat on line " + std::to_string(spec.locks[i].line) + " joins two unlocked oscillators '" +
                           b->a + "' and '" + b->b + "'");
    }
    throw ChainError(ChainError::Kind::kOverdetermined,
                     "beat on line " + std::to_string(spec.locks[i].line) + " has both partners already fixed");
  }
  for (const auto& u : unknowns) {
    if (!fixed_at.count(u)) {
      throw ChainError(ChainError::Kind::kUnderdetermined, "oscillator '" + u + "' has no lock");
    }
  }

  // Dependency graph on unknowns for cycle detection.
  std::map<std::string, std::vector<std::string>> depends;
  for (std::size_t i = 0; i < spec.locks.size(); ++i) {
    std::vector<std::string> inputs;
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, HarmonicLock>) {
            inputs.push_back(l.in);
          } else if constexpr (std::is_same_v<T, CombModeLock>) {
            inputs.push_back(comb_ceo_symbol(l.comb));
          } else if constexpr (std::is_same_v<T, CombSteerLock>) {
            inputs.push_back(l.in);
          } else {
            inputs.push_back(l.a == fixes[i] ? l.b : l.a);
          }
        },
        spec.locks[i].lock);
    for (const auto& in : inputs) {
      if (is_unknown(in)) depends[fixes[i]].push_back(in);
    }
  }
  {
    std::map<std::string, int> state;  // 0 new, 1 on stack, 2 done
    std::vector<std::string> stack;
    std::function<void(const std::string&)> visit = [&](const std::string& u) {
      state[u] = 1;
      stack.push_back(u);
      for (const auto& v : depends[u]) {
        if (state[v] == 1) {
          std::string path;
          auto it = std::find(stack.begin(), stack.end(), v);
          for (; it != stack.end(); ++it) path += *it + " -> ";
          throw ChainError(ChainError::Kind::kCyclic, path + v);
        }
        if (state[v] == 0) visit(v);
      }
      stack.pop_back();
      state[u] = 2;
    };
    for (const auto& u : unknowns) {
      if (state[u] == 0) visit(u);
    }
  }

  // Build constraint rows: unknown part on the left, known part on the right.
  const std::size_t n = unknowns.size();
  std::vector<detail::Row> rows;
  for (const auto& decl : spec.locks) {
    detail::Row row{std::vector<Ratio>(n), {}, decl.line};
    // Adds c * name to the left-hand side of "lhs = rhs" (moves knowns right).
    auto lhs = [&](const std::string& name, const Ratio& c) {
      if (auto it = column.find(name); it != column.end()) {
        row.lhs[it->second] += c;
      } else {
        add_to(row.rhs, name, -c);
      }
    };
    auto offset_rhs = [&](const LockOffset& off, const Ratio& scale) {
      if (off.constant) {
        add_to(row.rhs, *off.constant, scale * Ratio(off.sign));
      } else if (off.literal != Frequency{}) {
        const std::string sym = detail::literal_symbol(decl.line);
        eq.symbols[sym] = {NodeKind::kConstant, UncertainFrequency(off.literal, Frequency{})};
        add_to(row.rhs, sym, scale * Ratio(off.sign));
      }
    };
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, HarmonicLock>) {
            lhs(l.out, 1);
            lhs(l.in, -Ratio(l.multiplier));
            offset_rhs(l.offset, 1);
          } else if constexpr (std::is_same_v<T, CombModeLock>) {
            lhs(l.out, 1);
            lhs(comb_ceo_symbol(l.comb), -1);
            lhs(comb_rep_symbol(l.comb), -Ratio(l.mode));
            offset_rhs(l.offset, 1);
          } else if constexpr (std::is_same_v<T, CombSteerLock>) {
            lhs(comb_ceo_symbol(l.comb), 1);
            lhs(comb_rep_symbol(l.comb), Ratio(l.mode));
            lhs(l.in, -Ratio(l.multiplier));
            offset_rhs(l.offset, 1);
          } else {
            lhs(l.a, 1);
            lhs(l.b, -1);
            add_to(row.rhs, l.counted, 1);
          }
        },
        decl.lock);
    rows.push_back(std::move(row));
  }

  // Gauss-Jordan elimination; pivots chosen in declaration order.
  std::vector<bool> used(rows.size(), false);
  std::vector<std::size_t> pivot_row(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = rows.size();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (!used[r] && !rows[r].lhs[c].is_zero()) {
        p = r;
        break;
      }
    }
    if (p == rows.size()) {
      throw ChainError(ChainError::Kind::kUnderdetermined, "no independent lock fixes '" + unknowns[c] + "'");
    }
    used[p] = true;
    pivot_row[c] = p;
    const Ratio inv = Ratio(1) / rows[p].lhs[c];
    for (auto& v : rows[p].lhs) v *= inv;
    for (auto& [s, v] : rows[p].rhs) v *= inv;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (r == p || rows[r].lhs[c].is_zero()) continue;
      const Ratio f = rows[r].lhs[c];
      for (std::size_t k = 0; k < n; ++k) rows[r].lhs[k] -= f * rows[p].lhs[k];
      for (const auto& [s, v] : rows[p].rhs) add_to(rows[r].rhs, s, -(f * v));
    }
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!used[r]) {
      throw ChainError(ChainError::Kind::kOverdetermined,
                       "lock on line " + std::to_string(rows[r].line) + " is redundant with the others");
    }
  }

  const NodeDecl* target = spec.find(spec.target);
  if (target->kind == NodeKind::kOscillator) {
    eq.terms = rows[pivot_row[column.at(spec.target)]].rhs;
  } else {
    eq.terms[spec.target] = 1;
  }
  for (const auto& node : spec.nodes) {
    if (node.kind == NodeKind::kComb) {
      eq.terms.try_emplace(comb_rep_symbol(node.name), 0);
      eq.terms.try_emplace(comb_ceo_symbol(node.name), 0);
    }
  }
  // Keep only symbols that can appear in the result.
  for (auto it = eq.symbols.begin(); it != eq.symbols.end();) {
    if (!eq.terms.count(it->first) && it->first.rfind("literal@", 0) == 0) {
      it = eq.symbols.erase(it);
    } else {
      ++it;
    }
  }
  return eq;
}

// ---------------------------------------------------------------------------
// Evaluation

using Assignment = std::map<std::string, Frequency>;

inline Frequency evaluate(const MeasurementEquation& eq, const Assignment& assignment) {
  Frequency sum;
  for (const auto& [sym, c] : eq.terms) {
    if (c.is_zero()) continue;
    const auto it = assignment.find(sym);
    if (it == assignment.end()) throw Error("no value for symbol '" + sym + "'");
    sum += scale_exact(it->second, c);
  }
  return sum;
}

// Quadrature of |coefficient| * sigma; symbols without a sigma contribute 0.
inline Frequency propagate_uncertainty(const MeasurementEquation& eq, const Assignment& sigmas) {
  Ratio sum_sq;
  for (const auto& [sym, c] : eq.terms) {
    const auto it = sigmas.find(sym);
    if (it == sigmas.end()) continue;
    if (it->second < Frequency{}) throw Error("negative sigma for '" + sym + "'");
    const Ratio contribution = c.abs() * Ratio(it->second.ticks());
    sum_sq += contribution * contribution;
  }
  return sqrt_rounded(sum_sq);
}

// Values and sigmas carried by the chain file itself. Comb offsets default
// to 0; counted nodes have no nominal value and are left out.
inline Assignment nominal_values(const MeasurementEquation& eq) {
  Assignment a;
  for (const auto& [sym, info] : eq.symbols) {
    if (info.kind != NodeKind::kCounted) a[sym] = info.nominal.value;
  }
  return a;
}

inline Assignment nominal_sigmas(const MeasurementEquation& eq) {
  Assignment a;
  for (const auto& [sym, info] : eq.symbols) {
    if (info.nominal.sigma != Frequency{}) a[sym] = info.nominal.sigma;
  }
  return a;
}

inline std::string describe(const MeasurementEquation& eq) {
  std::ostringstream os;
  os << eq.target << " =";
  bool first = true;
  for (const auto& [sym, c] : eq.terms) {
    if (c.is_zero()) continue;
    const bool neg = c < Ratio(0);
    os << (first ? (neg ? " -" : " ") : (neg ? " - " : " + "));
    const Ratio mag = c.abs();
    if (mag != Ratio(1)) os << mag << " * ";
    os << sym;
    first = false;
  }
  if (first) os << " 0";
  return os.str();
}

}  // namespace freqchain
