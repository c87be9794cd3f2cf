"""
数式モジュール
x1..xn と t を変数とするスカラー式の構文解析・表示・評価

評価はキャリア（通常の数値、numpy配列、Dual、HyperDual）に依存しない
numpy配列を渡せば多数のサンプル点を一度に評価できる
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger


UNARY_OPS = ("neg", "sin", "cos", "exp", "sqrt", "abs", "tanh")
BINARY_OPS = ("add", "sub", "mul", "div", "pow")
FUNCTIONS = ("sin", "cos", "exp", "sqrt", "abs", "tanh")

# 入れ子の深さ上限（再帰の上限に達する前に診断として返す）
MAX_NESTING = 200
# 構文木の深さ上限（評価と表示は木を再帰で辿る）
MAX_TREE_DEPTH = 400

_BINARY_SYMBOLS = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


# ---------------------------------------------------------------------------
# 構文木
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    """数値定数"""
    value: float
    offset: int = field(default=-1, compare=False)


@dataclass(frozen=True)
class VarX:
    """状態変数 x_i（1始まり）"""
    index: int
    offset: int = field(default=-1, compare=False)


@dataclass(frozen=True)
class VarT:
    """時間変数 t"""
    offset: int = field(default=-1, compare=False)


@dataclass(frozen=True)
class Unary:
    """単項演算・関数呼び出し"""
    op: str
    child: "Expr"
    offset: int = field(default=-1, compare=False)


@dataclass(frozen=True)
class Binary:
    """二項演算（pow の右辺は常に Constant）"""
    op: str
    left: "Expr"
    right: "Expr"
    offset: int = field(default=-1, compare=False)


Expr = Union[Constant, VarX, VarT, Unary, Binary]


# ---------------------------------------------------------------------------
# 構文解析の診断情報
# ---------------------------------------------------------------------------

class ParseErrorKind(str, Enum):
    """構文エラーの種類"""
    UNEXPECTED_TOKEN = "unexpected_token"
    UNKNOWN_IDENTIFIER = "unknown_identifier"
    ARITY_MISMATCH = "arity_mismatch"
    DIMENSION_OVERFLOW = "dimension_overflow"
    NON_CONSTANT_EXPONENT = "non_constant_exponent"
    TOO_DEEP = "too_deep"


@dataclass(frozen=True)
class ParseDiagnostics:
    """構文エラーの詳細（offset は入力のバイト位置）"""
    kind: ParseErrorKind
    offset: int
    message: str


class ExpressionSyntaxError(ValueError):
    """式の構文エラー"""

    def __init__(self, diagnostics: ParseDiagnostics):
        super().__init__(f"{diagnostics.kind.value} at byte {diagnostics.offset}: {diagnostics.message}")
        self.diagnostics = diagnostics


class EvaluationDomainError(ArithmeticError):
    """評価時の定義域エラー（ゼロ除算、負数の平方根など）"""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (node at offset {offset})")
        self.offset = offset


# ---------------------------------------------------------------------------
# 字句解析
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
    |(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
    |(?P<ident>[A-Za-z_][A-Za-z_0-9]*)
    |(?P<op>\*\*|[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str   # number / ident / op / end
    text: str
    pos: int    # 文字位置


class _Parser:
    """
    再帰下降パーサ

    優先順位: pow > 単項マイナス > 乗除 > 加減
    pow のみ右結合、それ以外は左結合
    """

    def __init__(self, text: str, dimension: int):
        self.text = text
        self.dimension = dimension
        self.tokens = self._tokenize(text)
        self.index = 0
        self.depth = 0

    # --- 診断 ---

    def _fail(self, kind: ParseErrorKind, pos: int, message: str):
        byte_offset = len(self.text[:pos].encode("utf-8"))
        raise ExpressionSyntaxError(ParseDiagnostics(kind, byte_offset, message))

    def _tokenize(self, text: str) -> List[_Token]:
        tokens = []
        pos = 0
        while pos < len(text):
            match = _TOKEN_RE.match(text, pos)
            if match is None:
                self._fail(ParseErrorKind.UNEXPECTED_TOKEN, pos, f"unexpected character {text[pos]!r}")
            kind = match.lastgroup
            if kind != "ws":
                value = match.group()
                tokens.append(_Token(kind, "^" if value == "**" else value, pos))
            pos = match.end()
        tokens.append(_Token("end", "", len(text)))
        return tokens

    # --- トークン操作 ---

    @property
    def current(self) -> _Token:
        return self.tokens[self.index]

    def _advance(self) -> _Token:
        token = self.tokens[self.index]
        if token.kind != "end":
            self.index += 1
        return token

    def _accept(self, op: str) -> Optional[_Token]:
        if self.current.kind == "op" and self.current.text == op:
            return self._advance()
        return None

    def _expect(self, op: str) -> _Token:
        token = self._accept(op)
        if token is None:
            found = self.current.text or "end of input"
            self._fail(ParseErrorKind.UNEXPECTED_TOKEN, self.current.pos, f"expected {op!r}, found {found!r}")
        return token

    def _enter(self):
        self.depth += 1
        if self.depth > MAX_NESTING:
            self._fail(ParseErrorKind.UNEXPECTED_TOKEN, self.current.pos, "expression nested too deeply")

    # --- 文法 ---

    def parse(self) -> Expr:
        if self.current.kind == "end":
            self._fail(ParseErrorKind.UNEXPECTED_TOKEN, 0, "empty expression")
        expr = self._additive()
        if self.current.kind != "end":
            self._fail(ParseErrorKind.UNEXPECTED_TOKEN, self.current.pos, f"unexpected token {self.current.text!r}")
        self._check_depth(expr)
        return expr

    def _check_depth(self, expr: Expr):
        depth = tree_depth(expr)
        if depth > MAX_TREE_DEPTH:
            self._fail(
                ParseErrorKind.TOO_DEEP,
                max(expr.offset, 0),
                f"expression tree is {depth} levels deep (limit {MAX_TREE_DEPTH}); split long sums or products",
            )

    def _additive(self) -> Expr:
        left = self._term()
        while self.current.kind == "op" and self.current.text in ("+", "-"):
            token = self._advance()
            right = self._term()
            left = Binary("add" if token.text == "+" else "sub", left, right, token.pos)
        return left

    def _term(self) -> Expr:
        left = self._unary()
        while self.current.kind == "op" and self.current.text in ("*", "/"):
            token = self._advance()
            right = self._unary()
            left = Binary("mul" if token.text == "*" else "div", left, right, token.pos)
        return left

    def _unary(self) -> Expr:
        self._enter()
        try:
            token = self._accept("-")
            if token is not None:
                return Unary("neg", self._unary(), token.pos)
            if self._accept("+") is not None:
                return self._unary()
            return self._power()
        finally:
            self.depth -= 1

    def _power(self) -> Expr:
        base = self._primary()
        token = self._accept("^")
        if token is None:
            return base
        exponent_pos = self.current.pos
        exponent = self._unary()
        return Binary("pow", base, self._fold_exponent(exponent, exponent_pos), token.pos)

    def _fold_exponent(self, exponent: Expr, pos: int) -> Constant:
        if isinstance(exponent, Constant):
            return exponent
        if depends_on_variables(exponent):
            self._fail(ParseErrorKind.NON_CONSTANT_EXPONENT, pos, "exponent must be a constant")
        self._check_depth(exponent)
        try:
            value = evaluate(exponent, [], 0.0)
        except EvaluationDomainError as e:
            self._fail(ParseErrorKind.UNEXPECTED_TOKEN, pos, f"invalid constant exponent: {e}")
        return Constant(value, pos)

    def _primary(self) -> Expr:
        token = self.current
        if token.kind == "number":
            self._advance()
            value = float(token.text)
            if not np.isfinite(value):
                self._fail(ParseErrorKind.UNEXPECTED_TOKEN, token.pos, f"numeric literal out of range: {token.text}")
            return Constant(value, token.pos)

        if token.kind == "ident":
            self._advance()
            return self._identifier(token)

        if token.kind == "op" and token.text == "(":
            self._advance()
            self._enter()
            try:
                inner = self._additive()
            finally:
                self.depth -= 1
            self._expect(")")
            return inner

        found = token.text or "end of input"
        self._fail(ParseErrorKind.UNEXPECTED_TOKEN, token.pos, f"unexpected token {found!r}")

    def _identifier(self, token: _Token) -> Expr:
        name = token.text
        if name in FUNCTIONS:
            self._expect("(")
            args = []
            if self.current.kind == "op" and self.current.text == ")":
                self._advance()
            else:
                self._enter()
                try:
                    args.append(self._additive())
                    while self._accept(",") is not None:
                        args.append(self._additive())
                finally:
                    self.depth -= 1
                self._expect(")")
            if len(args) != 1:
                self._fail(ParseErrorKind.ARITY_MISMATCH, token.pos, f"{name}() takes 1 argument, got {len(args)}")
            return Unary(name, args[0], token.pos)

        if name == "t":
            return VarT(token.pos)

        match = re.fullmatch(r"x([1-9]\d*)", name)
        if match:
            index = int(match.group(1))
            if index > self.dimension:
                self._fail(
                    ParseErrorKind.DIMENSION_OVERFLOW,
                    token.pos,
                    f"{name} exceeds declared dimension {self.dimension}",
                )
            return VarX(index, token.pos)

        self._fail(ParseErrorKind.UNKNOWN_IDENTIFIER, token.pos, f"unknown identifier {name!r}")


def parse(text: Union[str, bytes], dimension: int) -> Expr:
    """
    式を構文解析する

    Args:
        text: 式の文字列（bytes の場合は UTF-8 として解釈）
        dimension: 状態の次元（x の添字の上限）

    Returns:
        構文木

    Raises:
        ExpressionSyntaxError: 構文エラー（診断情報付き）
    """
    if dimension < 0:
        raise ValueError(f"dimension must be non-negative, got {dimension}")
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ExpressionSyntaxError(
                ParseDiagnostics(ParseErrorKind.UNEXPECTED_TOKEN, e.start, "input is not valid UTF-8")
            ) from e
    return _Parser(text, dimension).parse()


# ---------------------------------------------------------------------------
# 表示
# ---------------------------------------------------------------------------

def format_number(value: float) -> str:
    if float(value).is_integer() and abs(value) < 1e16:
        text = str(int(value))
    else:
        text = repr(float(value))
    return f"({text})" if value < 0 else text


def to_text(expr: Expr) -> str:
    """
    構文木を完全に括弧付けした文字列に戻す（再構文解析で同じ値になる）
    """
    if isinstance(expr, Constant):
        return format_number(expr.value)
    if isinstance(expr, VarX):
        return f"x{expr.index}"
    if isinstance(expr, VarT):
        return "t"
    if isinstance(expr, Unary):
        if expr.op == "neg":
            return f"(-{to_text(expr.child)})"
        return f"{expr.op}({to_text(expr.child)})"
    if isinstance(expr, Binary):
        return f"({to_text(expr.left)} {_BINARY_SYMBOLS[expr.op]} {to_text(expr.right)})"
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# 構文木ユーティリティ
# ---------------------------------------------------------------------------

def children(expr: Expr) -> Tuple[Expr, ...]:
    """子ノードの一覧"""
    if isinstance(expr, Unary):
        return (expr.child,)
    if isinstance(expr, Binary):
        return (expr.left, expr.right)
    return ()


def walk(expr: Expr) -> Iterator[Expr]:
    """全ノードを列挙する（明示的なスタックで辿るので木の深さに制限されない）"""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(children(node))


def tree_depth(expr: Expr) -> int:
    """木の深さ（葉だけなら1）"""
    deepest = 0
    stack = [(expr, 1)]
    while stack:
        node, level = stack.pop()
        deepest = max(deepest, level)
        stack.extend((c, level + 1) for c in children(node))
    return deepest


def max_state_index(expr: Expr) -> int:
    """式に現れる x の最大添字（なければ0）"""
    return max((node.index for node in walk(expr) if isinstance(node, VarX)), default=0)


def depends_on_variables(expr: Expr) -> bool:
    """x または t を含むか"""
    return any(isinstance(node, (VarX, VarT)) for node in walk(expr))


def depends_on_time(expr: Expr) -> bool:
    """t を含むか"""
    return any(isinstance(node, VarT) for node in walk(expr))


# ---------------------------------------------------------------------------
# 評価
# ---------------------------------------------------------------------------

class Carrier:
    """
    微分キャリアの基底クラス（Dual / HyperDual）

    value に主値を持ち、chain で一変数関数の連鎖律を適用する
    numpy に演算を横取りされないよう __array_ufunc__ を無効化する
    """
    __array_ufunc__ = None
    value: object

    def chain(self, f0: Callable, f1: Callable, f2: Callable) -> "Carrier":
        raise NotImplementedError


def primal(v):
    """キャリアなら主値、数値ならそのまま"""
    return v.value if isinstance(v, Carrier) else v


class EvalContext:
    """
    評価中に検出した特異点を記録するコンテキスト

    invalid: 定義域エラー（ゼロ除算、負数の平方根など）
    kink: abs の 0 における微分（0 と定義し、フラグだけ立てる）
    """

    def __init__(self, shape: Tuple[int, ...] = ()):
        self.shape = shape
        self.invalid = np.zeros(shape, dtype=bool)
        self.kink = np.zeros(shape, dtype=bool)
        self.first_error: Optional[Tuple[str, int]] = None

    def _broadcast(self, mask) -> np.ndarray:
        return np.broadcast_to(np.asarray(mask, dtype=bool), self.shape)

    def flag_invalid(self, mask, message: str, node: Expr):
        mask = self._broadcast(mask)
        if mask.any():
            if self.first_error is None:
                self.first_error = (message, node.offset)
            self.invalid = self.invalid | mask

    def flag_kink(self, mask):
        self.kink = self.kink | self._broadcast(mask)


def _safe_power(u, k: float):
    return np.power(u, k)


def _pow_rules(c: float):
    def f0(u):
        return _safe_power(u, c)

    def f1(u):
        if c == 0:
            return np.zeros_like(np.asarray(u, dtype=float))
        return c * _safe_power(u, c - 1)

    def f2(u):
        if c * (c - 1) == 0:
            return np.zeros_like(np.asarray(u, dtype=float))
        return c * (c - 1) * _safe_power(u, c - 2)

    return f0, f1, f2


def _tanh_d1(u):
    return 1.0 - np.tanh(u) ** 2


# (値, 1階導関数, 2階導関数)
UNARY_RULES = {
    "sin": (np.sin, np.cos, lambda u: -np.sin(u)),
    "cos": (np.cos, lambda u: -np.sin(u), lambda u: -np.cos(u)),
    "exp": (np.exp, np.exp, np.exp),
    "sqrt": (np.sqrt, lambda u: 0.5 / np.sqrt(u), lambda u: -0.25 * np.power(u, -1.5)),
    "abs": (np.abs, np.sign, lambda u: np.zeros_like(np.asarray(u, dtype=float))),
    "tanh": (np.tanh, _tanh_d1, lambda u: -2.0 * np.tanh(u) * _tanh_d1(u)),
}


def _apply_unary(node: Unary, v, ctx: EvalContext):
    if node.op == "neg":
        return -v

    a = primal(v)
    carrier = isinstance(v, Carrier)
    if node.op == "sqrt":
        ctx.flag_invalid(a < 0, "sqrt of negative value", node)
        if carrier:
            ctx.flag_invalid(a == 0, "sqrt is not differentiable at 0", node)
    elif node.op == "abs" and carrier:
        ctx.flag_kink(a == 0)

    f0, f1, f2 = UNARY_RULES[node.op]
    return v.chain(f0, f1, f2) if carrier else f0(v)


def _apply_pow(node: Binary, v, c: float, ctx: EvalContext):
    a = primal(v)
    if not float(c).is_integer():
        ctx.flag_invalid(a < 0, "negative base with non-integer exponent", node)
    if c < 0:
        ctx.flag_invalid(a == 0, "zero base with negative exponent", node)

    if isinstance(v, Carrier):
        if 0 < c < 1:
            ctx.flag_invalid(a == 0, "power derivative undefined at 0", node)
        if getattr(v, "second_order", False) and 1 < c < 2:
            ctx.flag_invalid(a == 0, "power second derivative undefined at 0", node)
        return v.chain(*_pow_rules(c))
    return _pow_rules(c)[0](v)


def _evaluate(node: Expr, xs: Sequence, t, ctx: EvalContext):
    if isinstance(node, Constant):
        return np.float64(node.value)
    if isinstance(node, VarX):
        return xs[node.index - 1]
    if isinstance(node, VarT):
        return t
    if isinstance(node, Unary):
        return _apply_unary(node, _evaluate(node.child, xs, t, ctx), ctx)

    left = _evaluate(node.left, xs, t, ctx)
    if node.op == "pow":
        return _apply_pow(node, left, node.right.value, ctx)
    right = _evaluate(node.right, xs, t, ctx)
    if node.op == "add":
        return left + right
    if node.op == "sub":
        return left - right
    if node.op == "mul":
        return left * right
    ctx.flag_invalid(primal(right) == 0, "division by zero", node)
    return left / right


def evaluate_carrier(expr: Expr, xs: Sequence, t, ctx: EvalContext):
    """
    任意のキャリアで式を評価する

    Args:
        expr: 構文木
        xs: 各状態変数の値（数値・配列・キャリア）
        t: 時間の値
        ctx: 特異点を記録するコンテキスト

    Returns:
        評価結果（入力と同じ種類のキャリア）
    """
    needed = max_state_index(expr)
    if needed > len(xs):
        raise ValueError(f"expression uses x{needed} but only {len(xs)} state values were given")
    with np.errstate(all="ignore"):
        result = _evaluate(expr, xs, t, ctx)
        finite = np.isfinite(primal(result))
    ctx.flag_invalid(~finite, "non-finite result", expr)
    return result


def evaluate(expr: Expr, x: Sequence[float], t: float) -> float:
    """
    1点での評価（IEEE倍精度）

    Raises:
        EvaluationDomainError: 定義域エラー（ノード位置付き）
    """
    ctx = EvalContext()
    xs = [np.float64(v) for v in x]
    value = evaluate_carrier(expr, xs, np.float64(t), ctx)
    if ctx.invalid.any():
        message, offset = ctx.first_error
        raise EvaluationDomainError(message, offset)
    return float(value)


def evaluate_batch(expr: Expr, points: np.ndarray, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    多数の点で一括評価する

    Args:
        expr: 構文木
        points: 形状 (m, n) の状態
        times: 形状 (m,) の時刻

    Returns:
        (値, 無効点マスク)。無効点の値は NaN
    """
    points = np.asarray(points, dtype=float)
    times = np.asarray(times, dtype=float)
    m = times.shape[0]
    ctx = EvalContext((m,))
    value = evaluate_carrier(expr, [points[:, j] for j in range(points.shape[1])], times, ctx)
    values = np.broadcast_to(np.asarray(value, dtype=float), (m,)).copy()
    values[ctx.invalid] = np.nan
    if ctx.invalid.any():
        logger.debug(f"{int(ctx.invalid.sum())} of {m} points outside the domain of {to_text(expr)}")
    return values, ctx.invalid
