#pragma once

#include <cctype>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "subgrad/branch_program.hpp"
#include "subgrad/library.hpp"
#include "subgrad/program.hpp"
#include "subgrad/rational.hpp"

namespace subgrad {

struct ParseError : std::runtime_error {
  int line;
  int column;
  ParseError(const std::string& msg, int line_, int col_)
      : std::runtime_error(msg), line(line_), column(col_) {}
};

struct ParsedFile {
  ProgramDef program;
  std::vector<LibraryFunction> libs;  // user deflib blocks, in file order
};

namespace dsl_detail {

struct Token {
  enum class Kind { word, lbrace, rbrace, eol, eof };
  Kind kind = Kind::eof;
  std::string text;
  int line = 0;
  int col = 0;
};

inline std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  int line = 1, col = 1;
  std::size_t i = 0;
  bool line_has_tokens = false;
  auto push_eol = [&]() {
    if (line_has_tokens) out.push_back({Token::Kind::eol, "", line, col});
    line_has_tokens = false;
  };
  while (i < text.size()) {
    const char c = text[i];
    if (c == '\n') {
      push_eol();
      ++line;
      col = 1;
      ++i;
    } else if (c == '#') {
      while (i < text.size() && text[i] != '\n') ++i;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      ++col;
    } else if (c == '{' || c == '}') {
      out.push_back({c == '{' ? Token::Kind::lbrace : Token::Kind::rbrace, std::string(1, c),
                     line, col});
      line_has_tokens = true;
      ++i;
      ++col;
    } else {
      const int start_col = col;
      std::string w;
      while (i < text.size()) {
        const char d = text[i];
        if (d == '\n' || d == '#' || d == '{' || d == '}' ||
            std::isspace(static_cast<unsigned char>(d)))
          break;
        w.push_back(d);
        ++i;
        ++col;
      }
      out.push_back({Token::Kind::word, std::move(w), line, start_col});
      line_has_tokens = true;
    }
  }
  push_eol();
  out.push_back({Token::Kind::eof, "", line, col});
  return out;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : toks_(tokenize(text)) {}

  ParsedFile parse_file() {
    ParsedFile out;
    bool have_inputs = false, have_output = false;
    for (;;) {
      skip_eols();
      const Token& t = peek();
      if (t.kind == Token::Kind::eof) break;
      if (t.kind != Token::Kind::word) fail("unexpected token '" + t.text + "'", t);
      if (t.text == "inputs") {
        if (have_inputs) fail("duplicate inputs header", t);
        next();
        out.program.input_arity = expect_positive_int("input arity");
        have_inputs = true;
        end_line();
      } else if (t.text == "deflib") {
        next();
        out.libs.push_back(parse_deflib());
      } else if (t.text == "output") {
        if (!have_inputs) fail("output before inputs header", t);
        if (have_output) fail("duplicate output line", t);
        next();
        out.program.output = expect_node_ref();
        have_output = true;
        end_line();
      } else {
        if (!have_inputs) fail("instruction before inputs header", t);
        const int expected = out.program.node_of(out.program.instructions.size());
        out.program.instructions.push_back(parse_instruction(expected, /*allow_call=*/true));
        end_line();
      }
    }
    if (!have_inputs) fail("missing inputs header", peek());
    if (!have_output) fail("missing output line", peek());
    return out;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  const Token& next() { return toks_[pos_++]; }
  void skip_eols() {
    while (peek().kind == Token::Kind::eol) next();
  }
  [[noreturn]] void fail(const std::string& msg, const Token& t) const {
    throw ParseError(msg, t.line, t.col);
  }
  void end_line() {
    const Token& t = peek();
    if (t.kind == Token::Kind::eol || t.kind == Token::Kind::eof) {
      if (t.kind == Token::Kind::eol) next();
      return;
    }
    fail("unexpected trailing token '" + t.text + "'", t);
  }

  std::string expect_word(const std::string& what) {
    const Token& t = peek();
    if (t.kind != Token::Kind::word) fail("expected " + what, t);
    return next().text;
  }

  int expect_positive_int(const std::string& what) {
    const Token& t = peek();
    if (t.kind != Token::Kind::word) fail("expected " + what, t);
    int value = 0;
    for (char c : t.text) {
      if (!std::isdigit(static_cast<unsigned char>(c))) fail("expected " + what, t);
      value = value * 10 + (c - '0');
      if (value > 1000000) fail(what + " out of range", t);
    }
    if (t.text.empty() || value < 1) fail("expected " + what, t);
    next();
    return value;
  }

  int expect_node_ref() {
    const Token& t = peek();
    if (t.kind != Token::Kind::word || t.text.size() < 2 || t.text[0] != 'n')
      fail("expected node reference n<k>", t);
    int value = 0;
    for (std::size_t i = 1; i < t.text.size(); ++i) {
      if (!std::isdigit(static_cast<unsigned char>(t.text[i])))
        fail("expected node reference n<k>", t);
      value = value * 10 + (t.text[i] - '0');
      if (value > 1000000) fail("node index out of range", t);
    }
    if (value < 1) fail("node indices start at 1", t);
    next();
    return value;
  }

  Coefficient expect_coefficient() {
    const Token& t = peek();
    if (t.kind != Token::Kind::word) fail("expected a number", t);
    auto q = parse_rational(t.text);
    if (!q) fail("malformed number '" + t.text + "'", t);
    next();
    return Coefficient(std::move(*q));
  }

  bool at_word() const { return peek().kind == Token::Kind::word; }

  /// One `n<k> = affine|mono|call ...` line; `expected` pins SSA indexing.
  Instruction parse_instruction(int expected, bool allow_call) {
    const Token& head = peek();
    const int node = expect_node_ref();
    if (node != expected)
      fail("expected definition of node n" + std::to_string(expected) + ", got n" +
               std::to_string(node),
           head);
    const Token& eq = peek();
    if (eq.kind != Token::Kind::word || eq.text != "=") fail("expected '='", eq);
    next();
    const Token& op = peek();
    const std::string kind = expect_word("instruction kind");
    auto check_parent = [&](int p, const Token& where) {
      if (p >= node) fail("forward reference at node " + std::to_string(node), where);
    };
    if (kind == "affine") {
      AffineInstr a;
      a.constant = expect_coefficient();
      while (at_word()) {
        Coefficient c = expect_coefficient();
        const Token& ref = peek();
        const int p = expect_node_ref();
        check_parent(p, ref);
        for (const auto& [c2, p2] : a.terms)
          if (p2 == p) fail("duplicate parent n" + std::to_string(p), ref);
        a.terms.emplace_back(std::move(c), p);
      }
      return a;
    }
    if (kind == "mono") {
      MonomialInstr m;
      m.coefficient = expect_coefficient();
      while (at_word()) {
        const Token& t = peek();
        auto caret = t.text.find('^');
        if (t.text.empty() || t.text[0] != 'n') fail("expected factor n<j>^<e>", t);
        std::string node_part = caret == std::string::npos ? t.text : t.text.substr(0, caret);
        unsigned e = 1;
        if (caret != std::string::npos) {
          std::string exp_part = t.text.substr(caret + 1);
          if (exp_part.empty()) fail("missing exponent in '" + t.text + "'", t);
          e = 0;
          for (char c : exp_part) {
            if (!std::isdigit(static_cast<unsigned char>(c)))
              fail("malformed exponent in '" + t.text + "'", t);
            e = e * 10 + static_cast<unsigned>(c - '0');
            if (e > 64) fail("exponent out of range in '" + t.text + "'", t);
          }
          if (e < 1) fail("monomial exponents must be at least 1", t);
        }
        int p = 0;
        if (node_part.size() < 2) fail("expected factor n<j>^<e>", t);
        for (std::size_t i = 1; i < node_part.size(); ++i) {
          if (!std::isdigit(static_cast<unsigned char>(node_part[i])))
            fail("expected factor n<j>^<e>", t);
          p = p * 10 + (node_part[i] - '0');
        }
        if (p < 1) fail("node indices start at 1", t);
        check_parent(p, t);
        for (const auto& [q, eq2] : m.factors)
          if (q == p) fail("duplicate factor n" + std::to_string(p), t);
        m.factors.emplace_back(p, e);
        next();
      }
      return m;
    }
    if (kind == "call") {
      if (!allow_call)
        fail("library function bodies admit only affine and monomial steps", op);
      LibCallInstr c;
      c.function = expect_word("library function name");
      while (at_word()) {
        const Token& ref = peek();
        const int p = expect_node_ref();
        check_parent(p, ref);
        c.args.push_back(p);
      }
      if (c.args.empty()) fail("call needs at least one argument", op);
      return c;
    }
    fail("unknown instruction kind '" + kind + "'", op);
  }

  LibraryFunction parse_deflib() {
    const Token& name_tok = peek();
    const std::string name = expect_word("library function name");
    if (name == "inputs" || name == "output" || name == "deflib" || name == "branch" ||
        name == "return")
      fail("reserved word cannot name a library function", name_tok);
    const int arity = expect_positive_int("library function arity");
    end_line();
    auto body = parse_steps(arity);
    try {
      auto program = std::make_shared<const BranchProgram>(arity, std::move(body));
      return LibraryFunction{name, arity, std::move(program), true};
    } catch (const std::invalid_argument& e) {
      fail(std::string("invalid library function '") + name + "': " + e.what(), name_tok);
    }
  }

  /// A straight-line run of instructions ending in `return n<k>` or a
  /// `branch n<k> { ... } else { ... }` whose sides contain the
  /// continuations. Self-terminating, so deflib blocks need no end marker.
  BranchProgram::StepPtr parse_steps(int last_defined) {
    skip_eols();
    const Token& t = peek();
    if (t.kind != Token::Kind::word) fail("expected instruction, branch, or return", t);
    if (t.text == "return") {
      next();
      const Token& ref = peek();
      const int node = expect_node_ref();
      if (node > last_defined) fail("return of an undefined node", ref);
      return make_return(node);
    }
    if (t.text == "branch") {
      next();
      const Token& ref = peek();
      const int test = expect_node_ref();
      if (test != last_defined) fail("branch must test the most recently defined node", ref);
      expect_brace(Token::Kind::lbrace);
      auto then_side = parse_steps(last_defined);
      close_and_else();
      auto else_side = parse_steps(last_defined);
      skip_eols();
      expect_brace(Token::Kind::rbrace);
      if (peek().kind == Token::Kind::eol) next();
      return make_branch(test, std::move(then_side), std::move(else_side));
    }
    Instruction instr = parse_instruction(last_defined + 1, /*allow_call=*/false);
    end_line();
    auto nxt = parse_steps(last_defined + 1);
    return make_compute(last_defined + 1, std::move(instr), std::move(nxt));
  }

  void expect_brace(Token::Kind kind) {
    skip_eols();
    const Token& t = peek();
    if (t.kind != kind) fail(kind == Token::Kind::lbrace ? "expected '{'" : "expected '}'", t);
    next();
    if (peek().kind == Token::Kind::eol) next();
  }

  void close_and_else() {
    skip_eols();
    expect_brace(Token::Kind::rbrace);
    skip_eols();
    const Token& t = peek();
    if (t.kind != Token::Kind::word || t.text != "else") fail("expected 'else'", t);
    next();
    expect_brace(Token::Kind::lbrace);
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

}  // namespace dsl_detail

inline ParsedFile parse_program_text(std::string_view text) {
  return dsl_detail::Parser(text).parse_file();
}

/// Query points for a program: one per line, `x1,x2,...` optionally followed
/// by `; v1,v2,...`. Values accept the same literals as the DSL.
struct QueryPoint {
  std::vector<Rational> at;
  std::optional<std::vector<Rational>> dir;
};

inline std::vector<QueryPoint> parse_points_text(std::string_view text) {
  std::vector<QueryPoint> out;
  int line_no = 0;
  std::size_t pos = 0;
  auto parse_csv = [&](std::string_view csv, int col0) {
    std::vector<Rational> vals;
    std::size_t start = 0;
    while (start <= csv.size()) {
      std::size_t comma = csv.find(',', start);
      std::string_view piece = csv.substr(start, comma == std::string_view::npos
                                                     ? std::string_view::npos
                                                     : comma - start);
      std::size_t b = piece.find_first_not_of(" \t");
      std::size_t e = piece.find_last_not_of(" \t");
      if (b == std::string_view::npos)
        throw ParseError("empty value in point list", line_no, col0 + static_cast<int>(start));
      auto q = parse_rational(piece.substr(b, e - b + 1));
      if (!q)
        throw ParseError("malformed number '" + std::string(piece.substr(b, e - b + 1)) + "'",
                         line_no, col0 + static_cast<int>(start));
      vals.push_back(std::move(*q));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    return vals;
  };
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view raw =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    ++line_no;
    std::size_t hash = raw.find('#');
    if (hash != std::string_view::npos) raw = raw.substr(0, hash);
    std::size_t b = raw.find_first_not_of(" \t\r");
    if (b != std::string_view::npos) {
      std::size_t e = raw.find_last_not_of(" \t\r");
      std::string_view body = raw.substr(b, e - b + 1);
      QueryPoint qp;
      std::size_t semi = body.find(';');
      qp.at = parse_csv(body.substr(0, semi), static_cast<int>(b) + 1);
      if (semi != std::string_view::npos)
        qp.dir = parse_csv(body.substr(semi + 1), static_cast<int>(b + semi) + 2);
      out.push_back(std::move(qp));
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return out;
}

}  // namespace subgrad
