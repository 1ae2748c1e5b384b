#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "freqchain/chainspec.hpp"
#include "freqchain/rng.hpp"
#include "freqchain/scenario.hpp"

using namespace freqchain;

namespace {

Frequency hz(std::int64_t v) { return Frequency::from_hz(v); }

std::string shipped_chain() { return read_text_file(std::string(FREQCHAIN_DATA_DIR) + "/indium.chain"); }

ChainError::Kind compile_error_kind(const std::string& text) {
  try {
    compile_equation(parse_chain(text));
  } catch (const ChainError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected a ChainError for:\n" << text;
  return ChainError::Kind::kInvalid;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

std::string join(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

}  // namespace

TEST(ChainParse, ShippedChainShape) {
  const ChainSpec spec = parse_chain(shipped_chain());
  EXPECT_EQ(spec.nodes.size(), 9u);
  EXPECT_EQ(spec.locks.size(), 6u);
  EXPECT_EQ(spec.target, "f_In");
  ASSERT_NE(spec.find("comb"), nullptr);
  EXPECT_EQ(spec.find("comb")->kind, NodeKind::kComb);
  EXPECT_EQ(spec.find("comb")->value->value, hz(76'000'000));
  EXPECT_EQ(spec.find("f_HeNe")->value->sigma, hz(10));
  // The 848 nm servo runs through a divide-by-128 prescaler.
  const auto steer = std::find_if(spec.locks.begin(), spec.locks.end(),
                                  [](const LockDecl& l) { return std::holds_alternative<CombSteerLock>(l.lock); });
  ASSERT_NE(steer, spec.locks.end());
  EXPECT_EQ(steer->divider, 128);
}

TEST(ChainParse, EmptyInputHasNoTarget) {
  try {
    parse_chain("");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("no target"), std::string::npos);
  }
}

TEST(ChainParse, DuplicateNode) {
  try {
    parse_chain("osc a\nosc a\ntarget a\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
    EXPECT_EQ(e.line(), 2);
  }
}

TEST(ChainParse, DiagnosticsCarryLineAndColumn) {
  try {
    parse_chain("ref r 1 Hz sigma 0 Hz\nosc a\nlock a = 2 * r $\ntarget a\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
    EXPECT_EQ(e.column(), 16);
  }
}

TEST(ChainParse, StructuralErrors) {
  const char* bad[] = {
      "osc a\nlock a = 2 * missing\ntarget a\n",           // undeclared
      "osc a\ntarget a\ntarget a\n",                        // second target
      "ref r 1 Hz sigma 0 Hz\nosc a\nlock a = 0 * r\ntarget a\n",  // k < 1
      "ref r 1 Hz sigma 0 Hz\nosc a\nlock r = 2 * a\ntarget a\n",  // output not an oscillator
      "ref r 1 Hz sigma 0 Hz\nosc a\nlock a = mode(r, 3)\ntarget a\n",  // not a comb
      "ref r 1 Hz\ntarget r\n",                             // missing sigma
      "ref r 0.0000001 Hz sigma 0 Hz\ntarget r\n",          // sub-uHz
      "frobnicate x\n",                                     // unknown statement
      "osc a\nlock a = mode(c, -1)\ntarget a\ncomb c rep 1 MHz\n",
  };
  for (const char* text : bad) EXPECT_THROW(parse_chain(text), ParseError) << text;
}

TEST(ChainCompile, ShippedChainCoefficients) {
  const auto eq = compile_equation(parse_chain(shipped_chain()));
  const std::map<std::string, Ratio> expected{
      {"f_HeNe", Ratio(16)}, {"f_B", Ratio(-4)}, {"comb.f_rep", Ratio(-4 * 482'285)},
      {"f_LO", Ratio(-1)},   {"comb.f_ceo", Ratio(0)}};
  EXPECT_EQ(eq.terms, expected);
  EXPECT_EQ(eq.target, "f_In");
}

TEST(ChainCompile, SingleHarmonicStage) {
  const auto eq = compile_equation(parse_chain("ref r 5 Hz sigma 1 Hz\nosc t\nlock t = 2 * r\ntarget t\n"));
  EXPECT_EQ(eq.terms, (std::map<std::string, Ratio>{{"r", Ratio(2)}}));
}

TEST(ChainCompile, IdenticalModesCancel) {
  // Steer mode 1000 to r, then lock y to the same mode: the comb drops out.
  const auto eq = compile_equation(parse_chain(
      "comb c rep 100 MHz\nref r 1 THz sigma 1 Hz\nosc y\n"
      "lock mode(c, 1000) = 1 * r\nlock y = mode(c, 1000) + 25 MHz\n"
      "target y\n"));
  EXPECT_EQ(eq.coefficient("c.f_rep"), Ratio(0));
  EXPECT_EQ(eq.coefficient("c.f_ceo"), Ratio(0));
  EXPECT_EQ(eq.coefficient("r"), Ratio(1));
  EXPECT_EQ(eq.coefficient("literal@5"), Ratio(1));
  EXPECT_EQ(evaluate(eq, nominal_values(eq)), parse_frequency("1000025 MHz"));
}

TEST(ChainCompile, ModeDifferenceHasNoOffsetTerm) {
  Rng rng(21);
  for (int i = 0; i < 200; ++i) {
    const auto m1 = rng.uniform_int(0, 10'000'000), m2 = rng.uniform_int(0, 10'000'000);
    const auto k = rng.uniform_int(1, 4);
    const std::string text = "comb c rep 250 MHz\nref r 1 THz sigma 1 Hz\nosc y\n"
                             "lock mode(c, " + std::to_string(m1) + ") = " + std::to_string(k) + " * r\n"
                             "lock y = mode(c, " + std::to_string(m2) + ")\n"
                             "target y\n";
    const auto eq = compile_equation(parse_chain(text));
    EXPECT_EQ(eq.coefficient("c.f_ceo"), Ratio(0));
    EXPECT_EQ(eq.coefficient("c.f_rep"), Ratio(m2 - m1));
    EXPECT_EQ(eq.coefficient("r"), Ratio(k));
  }
}

TEST(ChainCompile, UnsteeredCombKeepsItsOffset) {
  const auto eq = compile_equation(parse_chain("comb c rep 100 MHz\nosc y\nlock y = mode(c, 7)\ntarget y\n"));
  EXPECT_EQ(eq.coefficient("c.f_ceo"), Ratio(1));
  EXPECT_EQ(eq.coefficient("c.f_rep"), Ratio(7));
}

TEST(ChainCompile, Errors) {
  EXPECT_EQ(compile_error_kind("ref r 1 Hz sigma 0 Hz\nosc a\nosc t\nlock t = 2 * a\ntarget t\n"),
            ChainError::Kind::kUnderdetermined);
  EXPECT_EQ(compile_error_kind("ref r 1 Hz sigma 0 Hz\nosc t\nlock t = 2 * r\nlock t = 3 * r\ntarget t\n"),
            ChainError::Kind::kOverdetermined);
  EXPECT_EQ(compile_error_kind("osc a\nosc b\nlock a = 2 * b\nlock b = 2 * a\ntarget a\n"), ChainError::Kind::kCyclic);
  EXPECT_EQ(compile_error_kind("osc a\nlock a = 2 * a\ntarget a\n"), ChainError::Kind::kCyclic);
  EXPECT_EQ(compile_error_kind("counted c\nosc a\nosc b\nbeat c = a - b\ntarget a\n"),
            ChainError::Kind::kUnderdetermined);
}

TEST(ChainCompile, DividerIsIgnored) {
  const auto a = compile_equation(parse_chain("ref r 1 Hz sigma 0 Hz\nosc t\nlock t = 2 * r div 128\ntarget t\n"));
  const auto b = compile_equation(parse_chain("ref r 1 Hz sigma 0 Hz\nosc t\nlock t = 2 * r\ntarget t\n"));
  EXPECT_EQ(a, b);
}

TEST(ChainCompile, DeclarationOrderIndependence) {
  const auto base = compile_equation(parse_chain(shipped_chain()));
  const auto lines = lines_of(shipped_chain());
  Rng rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    auto shuffled = lines;
    for (std::size_t k = shuffled.size(); k > 1; --k)
      std::swap(shuffled[k - 1], shuffled[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(k) - 1))]);
    const auto eq = compile_equation(parse_chain(join(shuffled)));
    EXPECT_EQ(eq, base);
  }
}

TEST(ChainEvaluate, Examples) {
  const auto eq = compile_equation(parse_chain(shipped_chain()));
  Assignment in{{"f_HeNe", hz(88'376'182'599'976)}, {"f_B", hz(49'174'925)}, {"comb.f_rep", hz(76'000'000)},
                {"f_LO", hz(1'632'000'000)}};
  EXPECT_EQ(evaluate(eq, in), hz(1'267'402'452'899'916));
  Assignment zero;
  for (const auto& [s, c] : eq.terms) zero[s] = Frequency{};
  EXPECT_EQ(evaluate(eq, zero), Frequency{});
  in.erase("f_B");
  EXPECT_THROW(evaluate(eq, in), Error);

  const auto id = compile_equation(parse_chain("ref r 3 Hz sigma 0 Hz\nosc t\nlock t = 1 * r\ntarget t\n"));
  EXPECT_EQ(evaluate(id, {{"r", hz(123)}}), hz(123));
}

TEST(ChainUncertainty, Examples) {
  const auto eq = compile_equation(parse_chain(shipped_chain()));
  EXPECT_EQ(propagate_uncertainty(eq, {{"f_HeNe", hz(10)}, {"f_B", hz(42)}}), hz(232));
  EXPECT_EQ(propagate_uncertainty(eq, {{"f_HeNe", Frequency{}}}), Frequency{});
  EXPECT_EQ(propagate_uncertainty(eq, {{"f_B", hz(1)}}), hz(4));
  EXPECT_THROW(propagate_uncertainty(eq, {{"f_B", hz(-1)}}), Error);
}

TEST(ChainUncertainty, SplittingAConstantChangesNothing) {
  const std::string one = "ref r 1 THz sigma 3 Hz\nconst lo 1632 MHz\nosc a\nosc t\n"
                          "lock a = 2 * r\nlock t = 4 * a - lo\ntarget t\n";
  const std::string two = "ref r 1 THz sigma 3 Hz\nconst lo1 1000 MHz\nconst lo2 632 MHz\nosc a\nosc m\nosc t\n"
                          "lock a = 2 * r\nlock m = 4 * a - lo1\nlock t = 1 * m - lo2\ntarget t\n";
  const auto e1 = compile_equation(parse_chain(one));
  const auto e2 = compile_equation(parse_chain(two));
  EXPECT_EQ(propagate_uncertainty(e1, nominal_sigmas(e1)), propagate_uncertainty(e2, nominal_sigmas(e2)));
  EXPECT_EQ(evaluate(e1, nominal_values(e1)), evaluate(e2, nominal_values(e2)));
}

// Random acyclic chains checked against direct forward substitution.
TEST(ChainCompile, MatchesForwardSubstitution) {
  Rng rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    std::ostringstream text;
    std::map<std::string, Frequency> value;
    std::vector<std::string> sources;
    const int n_refs = static_cast<int>(rng.uniform_int(1, 3));
    for (int i = 0; i < n_refs; ++i) {
      const std::string name = "r" + std::to_string(i);
      value[name] = Frequency::from_ticks(rng.uniform_int(1, 1'000'000'000'000'000));
      text << "ref " << name << ' ' << format_frequency(value[name]) << " sigma 1 Hz\n";
      sources.push_back(name);
    }
    text << "const lo 35 MHz\n";
    value["lo"] = hz(35'000'000);
    text << "comb c rep 80 MHz\n";
    value["c.f_rep"] = hz(80'000'000);
    // Either the first comb lock steers the comb, or its offset is a free known.
    const bool will_steer = rng.bernoulli(0.5);
    bool steered = false;
    if (!will_steer) value["c.f_ceo"] = Frequency::from_ticks(rng.uniform_int(-20'000'000'000'000, 20'000'000'000'000));

    const int n_osc = static_cast<int>(rng.uniform_int(1, 7));
    std::vector<std::string> lock_lines;
    for (int i = 0; i < n_osc; ++i) {
      const std::string out = "o" + std::to_string(i);
      text << "osc " << out << '\n';
      const std::string in = sources[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(sources.size()) - 1))];
      const auto kind = rng.uniform_int(0, 2);
      if (kind == 0) {
        const auto k = rng.uniform_int(1, 9);
        const bool plus_lo = rng.bernoulli(0.5);
        value[out] = value[in] * k + (plus_lo ? value["lo"] : Frequency{});
        lock_lines.push_back("lock " + out + " = " + std::to_string(k) + " * " + in + (plus_lo ? " + lo" : ""));
      } else if (kind == 1) {
        const auto m = rng.uniform_int(1'000, 100'000);
        if (will_steer && !steered) {
          const auto k = rng.uniform_int(1, 3);
          value["c.f_ceo"] = value[in] * k - value["c.f_rep"] * m;
          steered = true;
          lock_lines.push_back("lock mode(c, " + std::to_string(m) + ") = " + std::to_string(k) + " * " + in);
        }
        const bool minus_lo = rng.bernoulli(0.5);
        value[out] = value["c.f_ceo"] + value["c.f_rep"] * m - (minus_lo ? value["lo"] : Frequency{});
        lock_lines.push_back("lock " + out + " = mode(c, " + std::to_string(m) + ")" + (minus_lo ? " - lo" : ""));
      } else {
        const std::string counted = "b" + std::to_string(i);
        text << "counted " << counted << '\n';
        value[counted] = Frequency::from_ticks(rng.uniform_int(-50'000'000'000'000, 50'000'000'000'000));
        value[out] = value[in] - value[counted];
        lock_lines.push_back("beat " + counted + " = " + in + " - " + out);
      }
      sources.push_back(out);
    }
    if (will_steer && !steered) value["c.f_ceo"] = Frequency{};  // comb unused
    // Declaration order of the locks does not matter; reverse it.
    std::reverse(lock_lines.begin(), lock_lines.end());
    for (const auto& l : lock_lines) text << l << '\n';
    const std::string target = sources.back();
    text << "target " << target << '\n';

    const auto eq = compile_equation(parse_chain(text.str()));
    Assignment knowns;
    for (const auto& [sym, c] : eq.terms) knowns[sym] = value.at(sym);
    EXPECT_EQ(evaluate(eq, knowns), value.at(target)) << text.str() << describe(eq);
  }
}
