#pragma once

// Syntax tree for rule files. Nodes are plain values with deep copy and deep
// structural equality; source positions never take part in equality.

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace exsum::dsl {

struct SourcePos {
  std::size_t line = 0;
  std::size_t column = 0;
  // Positions are diagnostics only.
  friend bool operator==(const SourcePos&, const SourcePos&) { return true; }
};

/// Owning pointer with value semantics.
template <class T>
class Box {
 public:
  Box(T value) : ptr_(std::make_unique<T>(std::move(value))) {}  // NOLINT(implicit)
  Box(const Box& other) : ptr_(std::make_unique<T>(*other.ptr_)) {}
  Box(Box&&) noexcept = default;
  Box& operator=(const Box& other) {
    if (this != &other) ptr_ = std::make_unique<T>(*other.ptr_);
    return *this;
  }
  Box& operator=(Box&&) noexcept = default;
  ~Box() = default;

  T& operator*() { return *ptr_; }
  const T& operator*() const { return *ptr_; }
  T* operator->() { return ptr_.get(); }
  const T* operator->() const { return ptr_.get(); }

  friend bool operator==(const Box& a, const Box& b) { return *a.ptr_ == *b.ptr_; }

 private:
  std::unique_ptr<T> ptr_;
};

struct Expr;
struct Pred;

/// Zero-argument built-in terms.
enum class Builtin {
  len,              // number of tokens in the instance
  index,            // 1-based position of the FEU
  label,            // gold label
  prediction,       // predicted class
  pred_confidence,  // probability of the predicted class
  token,            // the token text
  lower_token,      // the token text, ASCII lower-cased
  match_attr,       // attribution of the token at feature match_index
};

inline const char* builtin_name(Builtin b) {
  switch (b) {
    case Builtin::len: return "len";
    case Builtin::index: return "index";
    case Builtin::label: return "label";
    case Builtin::prediction: return "prediction";
    case Builtin::pred_confidence: return "pred_confidence";
    case Builtin::token: return "token";
    case Builtin::lower_token: return "lower_token";
    case Builtin::match_attr: return "match_attr";
  }
  return "?";
}

inline std::optional<Builtin> builtin_from_name(const std::string& name) {
  for (auto b : {Builtin::len, Builtin::index, Builtin::label, Builtin::prediction,
                 Builtin::pred_confidence, Builtin::token, Builtin::lower_token,
                 Builtin::match_attr}) {
    if (name == builtin_name(b)) return b;
  }
  return std::nullopt;
}

struct NumberLit {
  double value = 0.0;
  friend bool operator==(const NumberLit& a, const NumberLit& b) {
    // Bitwise-style equality so that +inf/-inf compare equal to themselves.
    return a.value == b.value || (a.value != a.value && b.value != b.value);
  }
};

struct StringLit {
  std::string value;
  friend bool operator==(const StringLit&, const StringLit&) = default;
};

struct ParamRef {
  std::string name;
  friend bool operator==(const ParamRef&, const ParamRef&) = default;
};

struct FeatureRef {
  std::string name;
  friend bool operator==(const FeatureRef&, const FeatureRef&) = default;
};

struct BuiltinCall {
  Builtin fn = Builtin::len;
  friend bool operator==(const BuiltinCall&, const BuiltinCall&) = default;
};

/// max_attr / min_attr over the sibling FEUs that satisfy `where`.
struct Aggregate {
  bool is_max = true;
  Box<Pred> where;
  friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

struct Negate {
  Box<Expr> operand;
  friend bool operator==(const Negate&, const Negate&) = default;
};

struct Arith {
  char op = '+';  // '+' or '-'
  Box<Expr> lhs;
  Box<Expr> rhs;
  friend bool operator==(const Arith&, const Arith&) = default;
};

struct Expr {
  std::variant<NumberLit, StringLit, ParamRef, FeatureRef, BuiltinCall, Aggregate, Negate, Arith> node;
  SourcePos pos;
  friend bool operator==(const Expr&, const Expr&) = default;
};

enum class CmpOp { lt, le, gt, ge, eq, ne };

inline const char* cmp_symbol(CmpOp op) {
  switch (op) {
    case CmpOp::lt: return "<";
    case CmpOp::le: return "<=";
    case CmpOp::gt: return ">";
    case CmpOp::ge: return ">=";
    case CmpOp::eq: return "==";
    case CmpOp::ne: return "!=";
  }
  return "?";
}

using Literal = std::variant<double, std::string>;

struct ConstPred {
  bool value = true;
  friend bool operator==(const ConstPred&, const ConstPred&) = default;
};

struct Compare {
  CmpOp op = CmpOp::eq;
  Expr lhs;
  Expr rhs;
  friend bool operator==(const Compare&, const Compare&) = default;
};

struct Member {
  Expr term;
  std::vector<Literal> set;
  friend bool operator==(const Member&, const Member&) = default;
};

struct Not {
  Box<Pred> operand;
  friend bool operator==(const Not&, const Not&) = default;
};

struct And {
  std::vector<Pred> operands;
  friend bool operator==(const And&, const And&) = default;
};

struct Or {
  std::vector<Pred> operands;
  friend bool operator==(const Or&, const Or&) = default;
};

struct Pred {
  std::variant<ConstPred, Compare, Member, Not, And, Or> node;
  SourcePos pos;
  friend bool operator==(const Pred&, const Pred&) = default;
};

/// Interval whose endpoints are scalar expressions.
struct IntervalExpr {
  bool lo_closed = true;
  Expr lo;
  Expr hi;
  bool hi_closed = true;
  friend bool operator==(const IntervalExpr&, const IntervalExpr&) = default;
};

/// Per-key constant intervals with a fallback for unseen keys.
struct KeyedRange {
  Expr key;
  std::map<std::string, IntervalExpr> entries;
  Box<IntervalExpr> fallback;
  friend bool operator==(const KeyedRange&, const KeyedRange&) = default;
};

using RangeExpr = std::variant<IntervalExpr, KeyedRange>;

struct ParamDecl {
  std::string name;
  double value = 0.0;  // current value; persisted by save
  double lo = 0.0;
  double hi = 0.0;
  SourcePos pos;
  friend bool operator==(const ParamDecl&, const ParamDecl&) = default;
};

struct RuleSpec {
  std::string name;
  Pred applies;
  RangeExpr range;
  std::vector<ParamDecl> params;
  SourcePos pos;

  const ParamDecl* find_param(const std::string& p) const {
    for (const auto& d : params) {
      if (d.name == p) return &d;
    }
    return nullptr;
  }
  friend bool operator==(const RuleSpec&, const RuleSpec&) = default;
};

enum class ComposeOp { precedence, intersection };

inline const char* compose_symbol(ComposeOp op) { return op == ComposeOp::precedence ? ">" : "&"; }

struct UnionExpr;

struct RuleLeaf {
  std::string name;
  SourcePos pos;
  friend bool operator==(const RuleLeaf&, const RuleLeaf&) = default;
};

struct Compose {
  ComposeOp op = ComposeOp::precedence;
  Box<UnionExpr> lhs;
  Box<UnionExpr> rhs;
  friend bool operator==(const Compose&, const Compose&) = default;
};

struct UnionExpr {
  std::variant<RuleLeaf, Compose> node;
  friend bool operator==(const UnionExpr&, const UnionExpr&) = default;
};

inline UnionExpr leaf(std::string name) { return UnionExpr{RuleLeaf{std::move(name), {}}}; }
inline UnionExpr compose(ComposeOp op, UnionExpr lhs, UnionExpr rhs) {
  return UnionExpr{Compose{op, std::move(lhs), std::move(rhs)}};
}

/// Rule names in left-to-right leaf order.
inline void collect_leaves(const UnionExpr& e, std::vector<std::string>& out) {
  if (const auto* l = std::get_if<RuleLeaf>(&e.node)) {
    out.push_back(l->name);
  } else {
    const auto& c = std::get<Compose>(e.node);
    collect_leaves(*c.lhs, out);
    collect_leaves(*c.rhs, out);
  }
}

inline constexpr int kFormatVersion = 1;

struct UnionSpec {
  std::string name;
  std::optional<UnionExpr> expr;  // nullopt is the empty union
  std::vector<RuleSpec> rules;

  const RuleSpec* find_rule(const std::string& r) const {
    for (const auto& rule : rules) {
      if (rule.name == r) return &rule;
    }
    return nullptr;
  }
  RuleSpec* find_rule(const std::string& r) {
    for (auto& rule : rules) {
      if (rule.name == r) return &rule;
    }
    return nullptr;
  }
  std::vector<std::string> leaf_names() const {
    std::vector<std::string> out;
    if (expr) collect_leaves(*expr, out);
    return out;
  }
  friend bool operator==(const UnionSpec&, const UnionSpec&) = default;
};

// Small constructors used by builders and tests.

inline Expr num(double v) { return Expr{NumberLit{v}, {}}; }
inline Expr str(std::string v) { return Expr{StringLit{std::move(v)}, {}}; }
inline Expr param(std::string name) { return Expr{ParamRef{std::move(name)}, {}}; }
inline Expr feature(std::string name) { return Expr{FeatureRef{std::move(name)}, {}}; }
inline Expr call(Builtin b) { return Expr{BuiltinCall{b}, {}}; }
inline Pred always(bool v = true) { return Pred{ConstPred{v}, {}}; }
inline Pred cmp(CmpOp op, Expr lhs, Expr rhs) { return Pred{Compare{op, std::move(lhs), std::move(rhs)}, {}}; }
inline Pred member(Expr term, std::vector<Literal> set) {
  return Pred{Member{std::move(term), std::move(set)}, {}};
}
inline IntervalExpr closed_interval(Expr lo, Expr hi) { return IntervalExpr{true, std::move(lo), std::move(hi), true}; }

}  // namespace exsum::dsl
