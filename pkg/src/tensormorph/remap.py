"""Coordinate remapping notation: parser, evaluator, counters, bounds.

A remap statement like ``(i,j) -> (j-i,i,j)`` maps each nonzero's canonical
coordinates to a tuple of equal or higher arity whose lexicographic order is
the target format's physical nonzero order. The grammar (recursive descent,
whitespace-insensitive) stratifies operators as ``|`` < ``^`` < ``&`` <
``<< >>`` < ``+ -`` < ``* / %``, with parenthesization, prefix let chains
(``k = expr in body``), counters (``#i``), and a variadic bit-interleave
builtin ``morton(bits, e1, ..., en)`` equivalent to the expanded shift/mask
form.

Counters assign consecutive ordinals to nonzeros sharing a key tuple and are
therefore iteration-order dependent: formats that place nonzeros by counter
value (ELL) produce per-key slot assignments that follow the order the source
was iterated in. Only order-insensitive facts (the ordinal multiset per key
is {0..cnt-1}) are format invariants.

Identifiers that are neither source vars nor let-bound become free parameters
(block sizes M, N, morton bit widths) and must be bound before evaluation.
Integer division and modulo require a positive constant or parameter divisor
and a nonnegative dividend, so floor and truncation semantics coincide.
"""

import re
from dataclasses import dataclass

import numpy as np

from .core import DimBounds
from .errors import (
    ArityError,
    BitsOutOfRange,
    CounterOrderViolation,
    DivisorNotPositive,
    DslSyntaxError,
    NegativeDividend,
    UnboundedDim,
    UnboundVariable,
)

# --- AST ---


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str  # one of | ^ & << >> + - * / %
    lhs: object
    rhs: object


@dataclass(frozen=True)
class Let:
    name: str
    value: object
    body: object


@dataclass(frozen=True)
class CounterRef:
    counter_id: int


@dataclass(frozen=True)
class MortonCall:
    bits: object  # Const or parameter Var
    args: tuple


@dataclass(frozen=True)
class CounterSpec:
    key_vars: tuple


@dataclass(frozen=True)
class RemapProgram:
    src_vars: tuple
    dst_exprs: tuple
    counters: tuple  # CounterSpec per distinct key tuple
    free_params: frozenset
    let_bounds_env: tuple  # ((name, value_expr), ...) in definition order
    text: str

    @property
    def src_arity(self):
        return len(self.src_vars)

    @property
    def dst_arity(self):
        return len(self.dst_exprs)


# --- tokenizer ---

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<arrow>->)|(?P<shl><<)|(?P<shr>>>)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<int>\d+)|(?P<sym>[()\[\],#=|^&+\-*/%]))"
)

_KEYWORDS = {"in"}


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == m.start():
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise DslSyntaxError(f"unexpected character {stripped[0]!r}",
                                 len(text) - len(stripped))
        if m.lastgroup == "arrow":
            tokens.append(("->", "->", m.start("arrow")))
        elif m.lastgroup == "shl":
            tokens.append(("<<", "<<", m.start("shl")))
        elif m.lastgroup == "shr":
            tokens.append((">>", ">>", m.start("shr")))
        elif m.lastgroup == "ident":
            word = m.group("ident")
            kind = word if word in _KEYWORDS else "ident"
            tokens.append((kind, word, m.start("ident")))
        elif m.lastgroup == "int":
            tokens.append(("int", m.group("int"), m.start("int")))
        else:
            s = m.group("sym")
            tokens.append((s, s, m.start("sym")))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


class _ExprParser:
    """Recursive-descent parser for the expression grammar.

    Shared by remap statements, query group/arg lists, and the small
    parameter expressions in format definitions.
    """

    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.k = 0
        self.counters = []  # CounterSpec in first-appearance order
        self.scope = set()  # src vars + lets visible here
        self.free = set()

    def peek(self, ahead=0):
        return self.tokens[min(self.k + ahead, len(self.tokens) - 1)]

    def next(self):
        tok = self.tokens[self.k]
        if tok[0] != "eof":
            self.k += 1
        return tok

    def expect(self, kind):
        tok = self.next()
        if tok[0] != kind:
            raise DslSyntaxError(f"expected {kind!r}, found {tok[1]!r}", tok[2])
        return tok

    def at_end(self):
        return self.peek()[0] == "eof"

    # expression grammar, lowest precedence first

    def expr(self):
        return self._binchain(self.xor, ("|",))

    def xor(self):
        return self._binchain(self.and_, ("^",))

    def and_(self):
        return self._binchain(self.shift, ("&",))

    def shift(self):
        return self._binchain(self.add, ("<<", ">>"))

    def add(self):
        return self._binchain(self.mul, ("+", "-"))

    def mul(self):
        node = self.factor()
        while self.peek()[0] in ("*", "/", "%"):
            op = self.next()[0]
            rhs = self.factor()
            if op in ("/", "%"):
                self._check_divisor(rhs)
            node = BinOp(op, node, rhs)
        return node

    def _binchain(self, sub, ops):
        node = sub()
        while self.peek()[0] in ops:
            op = self.next()[0]
            node = BinOp(op, node, sub())
        return node

    def _check_divisor(self, rhs):
        if isinstance(rhs, Const):
            if rhs.value <= 0:
                raise DivisorNotPositive(f"divisor {rhs.value} in {self.text!r}")
            return
        if isinstance(rhs, Var) and rhs.name not in self.scope:
            return  # free parameter; positivity checked at bind time
        raise DslSyntaxError(
            "divisor must be a positive constant or a free parameter",
            self.peek()[2])

    def factor(self):
        tok = self.peek()
        if tok[0] == "(":
            self.next()
            node = self.let_expr()
            self.expect(")")
            return node
        if tok[0] == "#":
            self.next()
            keys = []
            while self.peek()[0] == "ident":
                keys.append(self.next()[1])
            return self._counter(tuple(keys), tok[2])
        if tok[0] == "ident":
            if tok[1] == "morton" and self.peek(1)[0] == "(":
                return self._morton()
            self.next()
            if tok[1] not in self.scope:
                self.free.add(tok[1])
            return Var(tok[1])
        if tok[0] == "int":
            self.next()
            return Const(int(tok[1]))
        raise DslSyntaxError(f"unexpected token {tok[1]!r}", tok[2])

    def _counter(self, keys, offset):
        for key in keys:
            if key not in self.scope:
                raise UnboundVariable(
                    f"counter key {key!r} is not a source or let variable")
        spec = CounterSpec(keys)
        if spec in self.counters:
            return CounterRef(self.counters.index(spec))
        self.counters.append(spec)
        return CounterRef(len(self.counters) - 1)

    def _morton(self):
        self.next()  # morton
        self.expect("(")
        args = [self.expr()]
        while self.peek()[0] == ",":
            self.next()
            args.append(self.expr())
        self.expect(")")
        if len(args) < 2:
            raise DslSyntaxError("morton(bits, e1, ...) needs at least two "
                                 "arguments", self.peek()[2])
        bits = args[0]
        if not isinstance(bits, (Const, Var)):
            raise DslSyntaxError("morton bits must be a constant or parameter",
                                 self.peek()[2])
        return MortonCall(bits, tuple(args[1:]))

    def let_expr(self):
        """``{ var '=' expr 'in' } expr`` with each binding opening scope."""
        bindings = []
        while (self.peek()[0] == "ident" and self.peek(1)[0] == "="
               and self.peek()[1] != "morton"):
            name = self.next()[1]
            self.next()  # '='
            value = self.expr()
            self.expect("in")
            bindings.append((name, value))
            self.scope.add(name)
        body = self.expr()
        for name, value in reversed(bindings):
            body = Let(name, value, body)
        return body


def parse_remap(text):
    """Parse a remap statement into a :class:`RemapProgram`."""
    p = _ExprParser(text)
    p.expect("(")
    src = [p.expect("ident")[1]]
    while p.peek()[0] == ",":
        p.next()
        src.append(p.expect("ident")[1])
    p.expect(")")
    if len(set(src)) != len(src):
        raise DslSyntaxError("source index variables must be distinct", 0)
    p.scope.update(src)
    p.expect("->")
    p.expect("(")
    dst = [p.let_expr()]
    while p.peek()[0] == ",":
        p.next()
        dst.append(p.let_expr())
    p.expect(")")
    tok = p.peek()
    if tok[0] != "eof":
        raise DslSyntaxError(f"trailing input {tok[1]!r}", tok[2])
    if len(dst) < len(src):
        raise ArityError(
            f"destination arity {len(dst)} below source arity {len(src)}")
    lets = []
    seen = set()

    def collect_lets(e):
        if isinstance(e, Let):
            collect_lets(e.value)
            if e.name not in seen:
                seen.add(e.name)
                lets.append((e.name, e.value))
            collect_lets(e.body)
        elif isinstance(e, BinOp):
            collect_lets(e.lhs)
            collect_lets(e.rhs)
        elif isinstance(e, MortonCall):
            for a in e.args:
                collect_lets(a)

    for e in dst:
        collect_lets(e)
    return RemapProgram(
        src_vars=tuple(src),
        dst_exprs=tuple(dst),
        counters=tuple(p.counters),
        free_params=frozenset(p.free),
        let_bounds_env=tuple(lets),
        text=text.strip(),
    )


def default_dim_names(prog):
    """Names for destination dims: the carried source var, the let name a dim
    evaluates to, or ``d<k>``."""
    names = []
    for k, e in enumerate(prog.dst_exprs):
        body = e
        while isinstance(body, Let):
            body = body.body
        if isinstance(body, Var) and (body.name in prog.src_vars
                                      or _is_let_name(prog, body.name)):
            name = body.name
        else:
            name = f"d{k}"
        while name in names:
            name += "_"
        names.append(name)
    return tuple(names)


def _is_let_name(prog, name):
    return any(n == name for n, _ in prog.let_bounds_env)


def carried_src_dims(prog):
    """Map src var -> index of the destination dim that carries it verbatim."""
    carried = {}
    for k, e in enumerate(prog.dst_exprs):
        if isinstance(e, Var) and e.name in prog.src_vars and e.name not in carried:
            carried[e.name] = k
    return carried


# --- scalar evaluation ---


class CounterState:
    """Running counts for one counter.

    ``keyed_table`` tracks a count per key tuple; ``scalar_reuse`` keeps a
    single count and requires key tuples to arrive in nondecreasing grouped
    order (the §4.2 optimization for ordered sources).
    """

    def __init__(self, mode="keyed_table"):
        if mode not in ("keyed_table", "scalar_reuse"):
            raise ValueError(f"unknown counter mode {mode!r}")
        self.mode = mode
        self.table = {}
        self.count = 0
        self.last_key = None

    def next(self, key):
        """Current count for ``key``, post-incremented."""
        if self.mode == "keyed_table":
            c = self.table.get(key, 0)
            self.table[key] = c + 1
            return c
        if self.last_key is not None:
            if key < self.last_key:
                raise CounterOrderViolation(
                    f"counter key {key} after {self.last_key} in scalar mode")
            if key != self.last_key:
                self.count = 0
        self.last_key = key
        c = self.count
        self.count += 1
        return c


def choose_counter_mode(counter, grouped_dims):
    """``scalar_reuse`` iff the source iteration visits the counter's key dims
    in grouped order (an empty key is one global group)."""
    return "scalar_reuse" if set(counter.key_vars) <= set(grouped_dims) \
        else "keyed_table"


def _binop_scalar(op, a, b, text=""):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op in ("/", "%"):
        if b <= 0:
            raise DivisorNotPositive(f"divisor {b} in {text!r}")
        if a < 0:
            raise NegativeDividend(f"dividend {a} in {text!r}")
        return a // b if op == "/" else a % b
    if op in ("<<", ">>"):
        if not 0 <= b <= 63:
            raise BitsOutOfRange(f"shift by {b}")
        return a << b if op == "<<" else a >> b
    if op == "&":
        return a & b
    if op == "|":
        return a | b
    if op == "^":
        return a ^ b
    raise ValueError(f"unknown operator {op!r}")


def eval_expr(expr, env, counter_cb=None, text=""):
    """Evaluate one expression with integer semantics.

    ``env`` binds source/let vars and parameters; ``counter_cb(counter_id)``
    supplies counter values.
    """
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var):
        if expr.name not in env:
            raise UnboundVariable(f"unbound variable {expr.name!r} in {text!r}")
        return env[expr.name]
    if isinstance(expr, BinOp):
        return _binop_scalar(expr.op,
                             eval_expr(expr.lhs, env, counter_cb, text),
                             eval_expr(expr.rhs, env, counter_cb, text), text)
    if isinstance(expr, Let):
        inner = dict(env)
        inner[expr.name] = eval_expr(expr.value, env, counter_cb, text)
        return eval_expr(expr.body, inner, counter_cb, text)
    if isinstance(expr, CounterRef):
        if counter_cb is None:
            raise UnboundVariable("counter used without counter state")
        return counter_cb(expr.counter_id)
    if isinstance(expr, MortonCall):
        bits = eval_expr(expr.bits, env, counter_cb, text)
        coords = [eval_expr(a, env, counter_cb, text) for a in expr.args]
        return morton_code(coords, bits)
    raise TypeError(f"not an expression node: {expr!r}")


def eval_remap(prog, params, coord, states=None):
    """Apply the remapping to one coordinate.

    ``states`` is a list of :class:`CounterState`, one per ``prog.counters``
    entry; each counter fires exactly once per coordinate (its value is shared
    between repeated references). Destination exprs are evaluated left to
    right with let bindings visible to later dims.
    """
    if len(coord) != prog.src_arity:
        raise ArityError(f"coord arity {len(coord)} != source arity "
                         f"{prog.src_arity}")
    if prog.counters and (states is None or len(states) != len(prog.counters)):
        raise ValueError("need one CounterState per counter")
    env = dict(params or {})
    for name, value in zip(prog.src_vars, coord):
        env[name] = int(value)
    memo = {}

    def counter_cb(cid):
        if cid not in memo:
            key = tuple(env[k] for k in prog.counters[cid].key_vars)
            memo[cid] = states[cid].next(key)
        return memo[cid]

    out = []
    for e in prog.dst_exprs:
        # hoist let bindings into env so later dims can reference them
        while isinstance(e, Let):
            env[e.name] = eval_expr(e.value, env, counter_cb, prog.text)
            e = e.body
        out.append(eval_expr(e, env, counter_cb, prog.text))
    return tuple(out)


def morton_code(coords, bits):
    """Interleave ``coords`` bitwise: dim d's bit b lands at ``b*ndims + d``.

    Matches the paper's expanded form ``(c0&1) | ((c1&1)<<1) | ...`` and, for
    2-D, the classic Z-curve with the first coordinate in the low bit.
    """
    n = len(coords)
    if bits < 1 or n * bits > 63:
        raise BitsOutOfRange(f"{n} coords at {bits} bits")
    code = 0
    for d, c in enumerate(coords):
        c = int(c)
        if not 0 <= c < (1 << bits):
            raise BitsOutOfRange(f"coordinate {c} needs more than {bits} bits")
        for b in range(bits):
            code |= ((c >> b) & 1) << (b * n + d)
    return code


# --- vectorized evaluation ---


class BulkEvaluator:
    """Evaluates expressions over per-entry coordinate arrays.

    ``arrays`` maps each source var to an int64 array (one slot per nonzero,
    in iteration order); ``counter_ordinals(counter_id, keys, table_size)``
    returns per-entry counter values for a flattened key array (the engine
    routes this to the keyed-table or scalar-reuse kernel per the plan).
    Counter values are memoized so repeated references within one pass share
    one table, matching the scalar semantics.
    """

    def __init__(self, prog, params, arrays, src_bounds, counter_ordinals=None):
        self.prog = prog
        self.params = params or {}
        self.n = 0
        for a in arrays.values():
            self.n = a.shape[0]
            break
        self.env = {k: np.int64(v) for k, v in self.params.items()}
        self.env.update(arrays)
        self.benv = {v: b for v, b in zip(prog.src_vars, src_bounds)}
        self.counter_ordinals = counter_ordinals
        self._memo = {}

    def _counter(self, cid):
        if cid in self._memo:
            return self._memo[cid]
        from . import kernels

        spec = self.prog.counters[cid]
        keys = np.zeros(self.n, dtype=np.int64)
        size = 1
        for name in spec.key_vars:
            kb = _var_bounds(name, self.benv, self.prog, self.params)
            ext = max(kb.extent, 0)
            keys = keys * ext + (np.asarray(self.env[name], dtype=np.int64)
                                 - kb.lower)
            size = size * ext if ext else 0
        fn = self.counter_ordinals or \
            (lambda _cid, k, sz: kernels.grouped_ordinals(k, sz))
        self._memo[cid] = fn(cid, keys, size)
        return self._memo[cid]

    def column(self, expr):
        """Evaluate to a full-length int64 column."""
        col = self.eval(expr)
        if np.ndim(col) == 0:
            return np.full(self.n, int(col), dtype=np.int64)
        return np.asarray(col, dtype=np.int64)

    def eval(self, e):
        from . import kernels

        if isinstance(e, Const):
            return np.int64(e.value)
        if isinstance(e, Var):
            if e.name not in self.env:
                raise UnboundVariable(f"unbound variable {e.name!r} in "
                                      f"{self.prog.text!r}")
            return self.env[e.name]
        if isinstance(e, CounterRef):
            return self._counter(e.counter_id)
        if isinstance(e, MortonCall):
            bits = int(self.eval(e.bits))
            cols = [np.broadcast_to(self.eval(a), (self.n,)) for a in e.args]
            if bits < 1 or len(cols) * bits > 63:
                raise BitsOutOfRange(f"{len(cols)} coords at {bits} bits")
            mat = np.stack(cols, axis=1).astype(np.int64)
            if mat.size and (mat.min() < 0 or mat.max() >= (1 << bits)):
                raise BitsOutOfRange(f"coordinate out of {bits}-bit range")
            return kernels.morton_interleave(np.ascontiguousarray(mat), bits)
        if isinstance(e, Let):
            self.env[e.name] = self.eval(e.value)
            return self.eval(e.body)
        if isinstance(e, BinOp):
            a = self.eval(e.lhs)
            b = self.eval(e.rhs)
            if e.op in ("/", "%"):
                bb = int(b)
                if bb <= 0:
                    raise DivisorNotPositive(f"divisor {bb}")
                if np.any(np.asarray(a) < 0):
                    raise NegativeDividend("negative dividend")
                return a // bb if e.op == "/" else a % bb
            if e.op in ("<<", ">>"):
                shifts = np.asarray(b)
                if shifts.size and (shifts.min() < 0 or shifts.max() > 63):
                    raise BitsOutOfRange("shift amount outside [0, 63]")
                return np.left_shift(a, b) if e.op == "<<" else \
                    np.right_shift(a, b)
            opf = {"+": np.add, "-": np.subtract, "*": np.multiply,
                   "&": np.bitwise_and, "|": np.bitwise_or,
                   "^": np.bitwise_xor}[e.op]
            return opf(a, b)
        raise TypeError(f"not an expression node: {e!r}")


def eval_remap_bulk(prog, params, arrays, src_bounds, counter_ordinals=None):
    """All destination dims of the remap over coordinate arrays, as int64
    columns. Let bindings stay visible across dims like the scalar path."""
    ev = BulkEvaluator(prog, params, arrays, src_bounds, counter_ordinals)
    out = []
    for e in prog.dst_exprs:
        while isinstance(e, Let):
            ev.env[e.name] = ev.eval(e.value)
            e = e.body
        out.append(ev.column(e))
    return out


# --- interval bounds ---


def _var_bounds(name, benv, prog, params):
    if name in benv:
        return benv[name]
    if params and name in params:
        v = int(params[name])
        return DimBounds(v, v)
    raise UnboundedDim(f"no bounds for {name!r}: parameter unbound")


def expr_bounds(expr, benv, prog, params):
    """Interval of ``expr`` given per-var bounds; counters use the safe bound
    t = prod(non-key src extents) - 1."""
    if isinstance(expr, Const):
        return DimBounds(expr.value, expr.value)
    if isinstance(expr, Var):
        return _var_bounds(expr.name, benv, prog, params)
    if isinstance(expr, Let):
        inner = dict(benv)
        inner[expr.name] = expr_bounds(expr.value, benv, prog, params)
        return expr_bounds(expr.body, inner, prog, params)
    if isinstance(expr, CounterRef):
        spec = prog.counters[expr.counter_id]
        prod = 1
        fallback = False
        for v in prog.src_vars:
            if v in spec.key_vars:
                continue
            prod *= max(_var_bounds(v, benv, prog, params).extent, 0)
        for key in spec.key_vars:
            if key not in prog.src_vars:
                fallback = True
        if fallback:
            prod = 1
            for v in prog.src_vars:
                prod *= max(_var_bounds(v, benv, prog, params).extent, 0)
        return DimBounds(0, max(prod - 1, -1))
    if isinstance(expr, MortonCall):
        bits = expr_bounds(expr.bits, benv, prog, params)
        if bits.lower != bits.upper:
            raise UnboundedDim("morton bit width must be a fixed value")
        return DimBounds(0, (1 << (bits.lower * len(expr.args))) - 1)
    if isinstance(expr, BinOp):
        a = expr_bounds(expr.lhs, benv, prog, params)
        b = expr_bounds(expr.rhs, benv, prog, params)
        return _binop_bounds(expr.op, a, b)
    raise TypeError(f"not an expression node: {expr!r}")


def _mk(lo, hi):
    return DimBounds(lo, hi) if lo <= hi + 1 else DimBounds(lo, lo - 1)


def _binop_bounds(op, a, b):
    if a.extent <= 0 or b.extent <= 0:
        return DimBounds(0, -1)
    if op == "+":
        return _mk(a.lower + b.lower, a.upper + b.upper)
    if op == "-":
        return _mk(a.lower - b.upper, a.upper - b.lower)
    if op == "*":
        cands = [a.lower * b.lower, a.lower * b.upper,
                 a.upper * b.lower, a.upper * b.upper]
        return _mk(min(cands), max(cands))
    if op == "/":
        if b.lower <= 0:
            raise DivisorNotPositive(f"divisor bounds {b}")
        return _mk(a.lower // b.upper if a.lower >= 0 else a.lower // b.lower,
                   a.upper // b.lower if a.upper >= 0 else a.upper // b.upper)
    if op == "%":
        if b.lower <= 0:
            raise DivisorNotPositive(f"divisor bounds {b}")
        return DimBounds(0, b.upper - 1)
    if op in ("<<", ">>"):
        if b.lower < 0:
            raise UnboundedDim("negative shift bound")
        sh = (min(b.lower, 63), min(b.upper, 63))
        if op == "<<":
            cands = [a.lower << sh[0], a.lower << sh[1],
                     a.upper << sh[0], a.upper << sh[1]]
        else:
            cands = [a.lower >> sh[0], a.lower >> sh[1],
                     a.upper >> sh[0], a.upper >> sh[1]]
        return _mk(min(cands), max(cands))
    if op in ("&", "|", "^"):
        if a.lower < 0 or b.lower < 0:
            raise UnboundedDim(f"bitwise {op} over signed range")
        width = max(a.upper.bit_length(), b.upper.bit_length())
        return DimBounds(0, (1 << width) - 1)
    raise ValueError(f"unknown operator {op!r}")


def program_bounds(prog, src_dims, params=None):
    """Bounds of each destination dim given source dimension sizes."""
    benv = {v: DimBounds(0, int(d) - 1) for v, d in zip(prog.src_vars, src_dims)}
    out = []
    env = dict(benv)
    for e in prog.dst_exprs:
        body = e
        while isinstance(body, Let):
            env[body.name] = expr_bounds(body.value, env, prog, params)
            body = body.body
        out.append(expr_bounds(body, env, prog, params))
    return out
