"""Attribute query language: parsing, canonical lowering, and optimization.

Queries are coordinate aggregations of the form
``select [i1,...,im] -> agg(args) as label, ...`` with aggregation kinds
``count`` (number of distinct nonzero sub-coordinates), ``max``/``min``
(extreme nonzero coordinate along the next dim), and ``id`` (nonemptiness).
Group vars must be a prefix of the remapped dim order and count args the
contiguous run that follows; max/min take exactly the next dim.

Lowering turns a query into a loop-nest statement over the *source* tensor's
index variables, with results indexed by coordinate expressions taken from
the target's remapping (so an id query per diagonal becomes
``forall i forall j Q[j-i] |= map(B[i,j], 1)``). max/min results are stored
shifted so the zero-initialized reduction identity means "empty":
raw = max(coord - lo + 1) for max and raw = max(hi - coord + 1) for min,
decoded as ``Q = raw + lo - 1`` and ``Q = hi + 1 - raw``.

The optimizer applies, eagerly and to a fixpoint (bounded at 8 passes):
reduction-to-assign, inline-temporary, map constant folding,
simplify-width-count (per-slice counts read off the storage's pos structure
instead of visiting nonzeros), and counter-to-histogram (max over a counter
dim becomes max over a count histogram). simplify-width-count fires only when
every outer dim's level is a full, locatable one and the innermost dim's
level is unique compressed storing only nonzeros; that is what separates the
CSR pos-difference shortcut from the COO full scan.
"""

from dataclasses import dataclass, field

from .errors import DslSyntaxError, NonContiguousCountArgs, UnknownVar
from .remap import (
    BinOp,
    Const,
    CounterRef,
    Let,
    MortonCall,
    Var,
    _ExprParser,
)

AGG_KINDS = ("count", "max", "min", "id")


@dataclass(frozen=True)
class Aggregation:
    kind: str
    args: tuple
    label: str


@dataclass(frozen=True)
class Query:
    group_vars: tuple
    aggs: tuple
    text: str


def parse_query(text, dim_names=None):
    """Parse a ``select`` query; validates against ``dim_names`` when given."""
    p = _ExprParser(text)
    tok = p.expect("ident")
    if tok[1] != "select":
        raise DslSyntaxError("query must start with 'select'", tok[2])
    p.expect("[")
    group = []
    if p.peek()[0] == "ident":
        group.append(p.next()[1])
        while p.peek()[0] == ",":
            p.next()
            group.append(p.expect("ident")[1])
    p.expect("]")
    p.expect("->")
    aggs = []
    while True:
        kind_tok = p.expect("ident")
        kind = kind_tok[1]
        if kind not in AGG_KINDS:
            raise DslSyntaxError(f"unknown aggregation {kind!r}", kind_tok[2])
        p.expect("(")
        args = []
        if p.peek()[0] == "ident":
            args.append(p.next()[1])
            while p.peek()[0] == ",":
                p.next()
                args.append(p.expect("ident")[1])
        p.expect(")")
        as_tok = p.expect("ident")
        if as_tok[1] != "as":
            raise DslSyntaxError("expected 'as'", as_tok[2])
        label = p.expect("ident")[1]
        if kind == "id" and args:
            raise DslSyntaxError("id() takes no arguments", kind_tok[2])
        if kind in ("max", "min") and len(args) != 1:
            raise DslSyntaxError(f"{kind}() takes exactly one argument",
                                 kind_tok[2])
        if kind == "count" and not args:
            raise DslSyntaxError("count() needs at least one argument",
                                 kind_tok[2])
        aggs.append(Aggregation(kind, tuple(args), label))
        if p.peek()[0] != ",":
            break
        p.next()
    tok = p.peek()
    if tok[0] != "eof":
        raise DslSyntaxError(f"trailing input {tok[1]!r}", tok[2])
    q = Query(tuple(group), tuple(aggs), text.strip())
    if dim_names is not None:
        validate_query(q, dim_names)
    return q


def validate_query(q, dim_names):
    """Check group prefix and argument contiguity against the remapped dims."""
    for v in q.group_vars + tuple(a for agg in q.aggs for a in agg.args):
        if v not in dim_names:
            raise UnknownVar(f"{v!r} is not a remapped dim "
                             f"(have {list(dim_names)})")
    m = len(q.group_vars)
    if q.group_vars != tuple(dim_names[:m]):
        raise NonContiguousCountArgs(
            f"group vars {q.group_vars} must be the prefix of {dim_names}")
    for agg in q.aggs:
        if agg.kind == "count":
            want = tuple(dim_names[m:m + len(agg.args)])
            if agg.args != want:
                raise NonContiguousCountArgs(
                    f"count args {agg.args} must be the dims following the "
                    f"group, {want}")
        elif agg.kind in ("max", "min"):
            if agg.args[0] != dim_names[m]:
                raise NonContiguousCountArgs(
                    f"{agg.kind} arg must be dim {dim_names[m]!r}")


# --- concrete index notation ---


@dataclass(frozen=True)
class BoundRef:
    """Symbolic lower/upper bound of a remapped dim, resolved at execution."""

    dim: int
    which: str  # 'lo' | 'hi'


@dataclass(frozen=True)
class Access:
    tensor: str
    indices: tuple


@dataclass(frozen=True)
class MapExpr:
    guard: object  # Access or nested MapExpr
    value: object  # expression


@dataclass(frozen=True)
class Scaled:
    access: Access
    factor: int


@dataclass(frozen=True)
class Reduce:
    target: Access
    op: str  # '+', 'max', '|', ':='
    rhs: object  # MapExpr | Access | Scaled


@dataclass(frozen=True)
class Forall:
    var: str
    body: object


@dataclass(frozen=True)
class Where:
    consumer: object
    producer: object


@dataclass(frozen=True)
class DecodeSpec:
    """How raw result cells map back to coordinates (max/min only)."""

    kind: str
    dim: int = -1  # aggregated remapped dim


@dataclass(frozen=True)
class LoweredAgg:
    label: str
    kind: str
    stmt: object
    decode: DecodeSpec
    group_dims: tuple


@dataclass
class SourceTraits:
    """What the optimizer needs to know about the source storage.

    ``var_order`` lists canonical index vars in stored level order; ``dims``
    maps each var to that level's properties.
    """

    var_order: tuple
    dims: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DimTraits:
    kind: str
    full: bool
    locate: bool
    sonz: bool
    unique: bool
    ordered: bool


def peel_foralls(stmt):
    loop_vars = []
    while isinstance(stmt, Forall):
        loop_vars.append(stmt.var)
        stmt = stmt.body
    return loop_vars, stmt


def wrap_foralls(loop_vars, core):
    for v in reversed(loop_vars):
        core = Forall(v, core)
    return core


def inline_lets(expr, env=None):
    env = env or {}
    if isinstance(expr, Var) and expr.name in env:
        return env[expr.name]
    if isinstance(expr, Let):
        inner = dict(env)
        inner[expr.name] = inline_lets(expr.value, env)
        return inline_lets(expr.body, inner)
    if isinstance(expr, BinOp):
        return BinOp(expr.op, inline_lets(expr.lhs, env),
                     inline_lets(expr.rhs, env))
    if isinstance(expr, MortonCall):
        return MortonCall(expr.bits,
                          tuple(inline_lets(a, env) for a in expr.args))
    return expr


def expr_free_vars(expr):
    if isinstance(expr, Var):
        return {expr.name}
    if isinstance(expr, BinOp):
        return expr_free_vars(expr.lhs) | expr_free_vars(expr.rhs)
    if isinstance(expr, Let):
        return expr_free_vars(expr.value) | (expr_free_vars(expr.body)
                                             - {expr.name})
    if isinstance(expr, MortonCall):
        out = set()
        for a in expr.args:
            out |= expr_free_vars(a)
        return out
    return set()


def expr_has_counter(expr):
    if isinstance(expr, CounterRef):
        return True
    if isinstance(expr, BinOp):
        return expr_has_counter(expr.lhs) or expr_has_counter(expr.rhs)
    if isinstance(expr, Let):
        return expr_has_counter(expr.value) or expr_has_counter(expr.body)
    if isinstance(expr, MortonCall):
        return any(expr_has_counter(a) for a in expr.args)
    return False


def subst_vars(expr, mapping):
    if isinstance(expr, Var) and expr.name in mapping:
        return mapping[expr.name]
    if isinstance(expr, BinOp):
        return BinOp(expr.op, subst_vars(expr.lhs, mapping),
                     subst_vars(expr.rhs, mapping))
    if isinstance(expr, MortonCall):
        return MortonCall(expr.bits,
                          tuple(subst_vars(a, mapping) for a in expr.args))
    if isinstance(expr, Let):
        narrowed = {k: v for k, v in mapping.items() if k != expr.name}
        return Let(expr.name, subst_vars(expr.value, mapping),
                   subst_vars(expr.body, narrowed))
    return expr


# --- lowering ---


def lower_to_canonical(q, remap, dim_names, var_order=None,
                       multiset_count=False):
    """Lower each aggregation of ``q`` to its canonical statement.

    ``var_order`` is the order the source stores (and therefore iterates) its
    canonical dims in; the result is indexed by the remap's destination
    expressions for the group dims. With ``multiset_count`` a count skips the
    distinctness temporary and counts stored entries, which is the correct
    child count for levels that permit duplicate coordinates.
    """
    validate_query(q, dim_names)
    loop_vars = list(var_order or remap.src_vars)
    b_access = Access("B", tuple(Var(v) for v in remap.src_vars))
    dim_expr = [inline_lets(e) for e in remap.dst_exprs]
    m = len(q.group_vars)
    group_dims = tuple(range(m))
    group_idx = tuple(dim_expr[d] for d in group_dims)

    out = []
    for agg in q.aggs:
        if agg.kind == "id":
            core = Reduce(Access("Q", group_idx), "|",
                          MapExpr(b_access, Const(1)))
            stmt = wrap_foralls(loop_vars, core)
            decode = DecodeSpec("id")
        elif agg.kind == "count":
            l = m + len(agg.args)
            if multiset_count:
                core = Reduce(Access("Q", group_idx), "+",
                              MapExpr(b_access, Const(1)))
                stmt = wrap_foralls(loop_vars, core)
            else:
                w_idx = tuple(dim_expr[d] for d in range(l))
                producer = wrap_foralls(
                    loop_vars,
                    Reduce(Access("W", w_idx), "|", MapExpr(b_access, Const(1))))
                c_vars = list(dim_names[:l])
                consumer = wrap_foralls(
                    c_vars,
                    Reduce(Access("Q", tuple(Var(v) for v in c_vars[:m])), "+",
                           MapExpr(Access("W", tuple(Var(v) for v in c_vars)),
                                   Const(1))))
                stmt = Where(consumer, producer)
            decode = DecodeSpec("count")
        else:
            d = m  # the aggregated dim immediately follows the group
            e_d = dim_expr[d]
            if agg.kind == "max":
                lo = Const(0) if expr_has_counter(e_d) else BoundRef(d, "lo")
                value = BinOp("+", _sub(e_d, lo), Const(1))
                decode = DecodeSpec("max", d)
            else:
                value = BinOp("+", BinOp("-", BoundRef(d, "hi"), e_d), Const(1))
                decode = DecodeSpec("min", d)
            core = Reduce(Access("Q", group_idx), "max",
                          MapExpr(b_access, value))
            stmt = wrap_foralls(loop_vars, core)
        out.append(LoweredAgg(agg.label, agg.kind, stmt, decode, group_dims))
    return out


def _sub(a, b):
    if b == Const(0):
        return a
    return BinOp("-", a, b)


# --- optimization ---


def optimize(stmt, src, remap=None, dim_names=None):
    """Apply the rewrite rules eagerly to a fixpoint (at most 8 passes).

    ``src`` carries the source storage's per-dim properties (may be None to
    apply only the storage-independent rules); ``remap`` is needed for
    counter-to-histogram to recover a counter's key vars; ``dim_names`` only
    affects the names of synthesized loop vars.
    """
    ctx = _OptCtx(src, remap, dim_names)
    for _ in range(8):
        new = _one_pass(stmt, ctx)
        if new == stmt:
            break
        stmt = new
    return stmt


@dataclass
class _OptCtx:
    src: object
    remap: object
    dim_names: object


def _one_pass(stmt, ctx):
    for rule in (_reduction_to_assign, _inline_temporary, _constant_fold,
                 _simplify_width_count, _counter_to_histogram):
        stmt = _apply(stmt, rule, ctx)
    return stmt


def _apply(stmt, rule, ctx):
    if isinstance(stmt, Where):
        stmt = Where(_apply(stmt.consumer, rule, ctx),
                     _apply(stmt.producer, rule, ctx))
    new = rule(stmt, ctx)
    return stmt if new is None else new


def _access_var_names(access):
    names = []
    for e in access.indices:
        names.append(e.name if isinstance(e, Var) else None)
    return names


def _reduction_to_assign(stmt, ctx):
    # Every loop var indexes the target directly, so each cell is written by
    # exactly one iteration and the reduction is a plain store.
    loop_vars, core = peel_foralls(stmt)
    if not isinstance(core, Reduce) or core.op == ":=" or not loop_vars:
        return None
    covered = set(n for n in _access_var_names(core.target) if n)
    if not set(loop_vars) <= covered:
        return None
    return wrap_foralls(loop_vars, Reduce(core.target, ":=", core.rhs))


def _inline_temporary(stmt, ctx):
    if not isinstance(stmt, Where):
        return None
    p_vars, p_core = peel_foralls(stmt.producer)
    if not (isinstance(p_core, Reduce) and p_core.op == ":="
            and p_core.target.tensor == "W"):
        return None
    c_vars, c_core = peel_foralls(stmt.consumer)
    if not isinstance(c_core, Reduce):
        return None
    # the consumer's only tensor operand must be W, indexed by its loop vars
    if isinstance(c_core.rhs, MapExpr) and isinstance(c_core.rhs.guard, Access) \
            and c_core.rhs.guard.tensor == "W":
        w_access = c_core.rhs.guard
        value = c_core.rhs.value
    elif isinstance(c_core.rhs, Access) and c_core.rhs.tensor == "W":
        w_access = c_core.rhs
        value = None
    else:
        return None
    names = _access_var_names(w_access)
    if None in names or names != c_vars:
        return None
    if len(p_core.target.indices) != len(names):
        return None
    mapping = dict(zip(names, p_core.target.indices))
    new_target = Access(c_core.target.tensor,
                        tuple(subst_vars(e, mapping)
                              for e in c_core.target.indices))
    if value is None:
        new_rhs = p_core.rhs
    else:
        new_rhs = MapExpr(p_core.rhs, subst_vars(value, mapping))
    return wrap_foralls(p_vars, Reduce(new_target, c_core.op, new_rhs))


def _fold_map(rhs):
    if isinstance(rhs, MapExpr):
        guard = _fold_map(rhs.guard)
        if isinstance(guard, MapExpr) and isinstance(guard.value, Const) \
                and guard.value.value != 0:
            guard = guard.guard
        return MapExpr(guard, rhs.value)
    return rhs


def _constant_fold(stmt, ctx):
    loop_vars, core = peel_foralls(stmt)
    if not isinstance(core, Reduce):
        return None
    folded = _fold_map(core.rhs)
    if folded == core.rhs:
        return None
    return wrap_foralls(loop_vars, Reduce(core.target, core.op, folded))


def _simplify_width_count(stmt, ctx):
    loop_vars, core = peel_foralls(stmt)
    if not (isinstance(core, Reduce) and core.op in ("+", ":=")
            and isinstance(core.rhs, MapExpr)):
        return None
    rhs = core.rhs
    if not (isinstance(rhs.guard, Access) and rhs.guard.tensor == "B"
            and isinstance(rhs.value, Const)):
        return None
    src = ctx.src
    if src is None or tuple(loop_vars) != tuple(src.var_order) \
            or len(loop_vars) < 2:
        return None
    inner = loop_vars[-1]
    target_free = set()
    for e in core.target.indices:
        target_free |= expr_free_vars(e)
    if inner in target_free:
        return None
    t = src.dims.get(inner)
    if t is None or t.kind != "compressed" or not (t.sonz and t.unique):
        return None
    for v in loop_vars[:-1]:
        o = src.dims.get(v)
        if o is None or not (o.full and o.locate):
            return None
    bprime = Access("B'", tuple(Var(v) for v in loop_vars[:-1]))
    return wrap_foralls(loop_vars[:-1],
                        Reduce(core.target, core.op,
                               Scaled(bprime, rhs.value.value)))


def _counter_to_histogram(stmt, ctx):
    loop_vars, core = peel_foralls(stmt)
    if not (isinstance(core, Reduce) and core.op == "max"
            and isinstance(core.rhs, MapExpr)):
        return None
    rhs = core.rhs
    if not (isinstance(rhs.guard, Access) and rhs.guard.tensor == "B"):
        return None
    v = rhs.value
    if not (isinstance(v, BinOp) and v.op == "+" and v.rhs == Const(1)
            and isinstance(v.lhs, CounterRef)):
        return None
    if ctx.remap is None:
        return None
    key_vars = ctx.remap.counters[v.lhs.counter_id].key_vars
    if not set(key_vars) <= set(loop_vars):
        return None
    group_idx = core.target.indices
    m = len(group_idx)
    # fresh loop vars for the consumer: remapped dim names for the group part
    # when available, the counter's own key vars for the histogram part
    if ctx.dim_names is not None:
        g_names = list(ctx.dim_names[:m])
    else:
        g_names = [f"g{t}" for t in range(m)]
    c_vars = g_names + list(key_vars)
    w_prod = Access("W", group_idx + tuple(Var(k) for k in key_vars))
    producer = wrap_foralls(loop_vars,
                            Reduce(w_prod, "+", MapExpr(rhs.guard, Const(1))))
    consumer = wrap_foralls(
        c_vars,
        Reduce(Access(core.target.tensor, tuple(Var(n) for n in g_names)),
               "max", Access("W", tuple(Var(n) for n in c_vars))))
    return Where(consumer, producer)


# --- stable rendering ---

_PRECEDENCE = {"|": 1, "^": 2, "&": 3, "<<": 4, ">>": 4, "+": 5, "-": 5,
               "*": 6, "/": 6, "%": 6}

_OP_TEXT = {"+": "+=", "max": "max=", "|": "|=", ":=": "="}


def expr_text(e, remap=None, dim_names=None, parent_prec=0):
    if isinstance(e, Const):
        return str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, BoundRef):
        name = dim_names[e.dim] if dim_names else f"d{e.dim}"
        return f"{e.which}({name})"
    if isinstance(e, CounterRef):
        if remap is not None:
            keys = ",".join(remap.counters[e.counter_id].key_vars)
            return f"#({keys})"
        return f"#c{e.counter_id}"
    if isinstance(e, MortonCall):
        parts = [expr_text(e.bits, remap, dim_names)]
        parts += [expr_text(a, remap, dim_names) for a in e.args]
        return f"morton({', '.join(parts)})"
    if isinstance(e, Let):
        inner = (f"{e.name} = {expr_text(e.value, remap, dim_names)} in "
                 f"{expr_text(e.body, remap, dim_names)}")
        return f"({inner})" if parent_prec > 0 else inner
    if isinstance(e, BinOp):
        prec = _PRECEDENCE[e.op]
        lhs = expr_text(e.lhs, remap, dim_names, prec)
        rhs = expr_text(e.rhs, remap, dim_names, prec + 1)
        s = f"{lhs} {e.op} {rhs}"
        return f"({s})" if prec < parent_prec else s
    raise TypeError(f"cannot render {e!r}")


def _access_text(a, remap, dim_names):
    idx = ",".join(expr_text(e, remap, dim_names) for e in a.indices)
    return f"{a.tensor}[{idx}]"


def _rhs_text(rhs, remap, dim_names):
    if isinstance(rhs, MapExpr):
        guard = _rhs_text(rhs.guard, remap, dim_names) \
            if isinstance(rhs.guard, MapExpr) \
            else _access_text(rhs.guard, remap, dim_names)
        return f"map({guard}, {expr_text(rhs.value, remap, dim_names)})"
    if isinstance(rhs, Scaled):
        base = _access_text(rhs.access, remap, dim_names)
        return base if rhs.factor == 1 else f"{base} * {rhs.factor}"
    if isinstance(rhs, Access):
        return _access_text(rhs, remap, dim_names)
    raise TypeError(f"cannot render {rhs!r}")


def stmt_text(stmt, remap=None, dim_names=None):
    """Deterministic single-line rendering, used by explain and golden tests."""
    if isinstance(stmt, Where):
        return (f"({stmt_text(stmt.consumer, remap, dim_names)}) where "
                f"({stmt_text(stmt.producer, remap, dim_names)})")
    loop_vars, core = peel_foralls(stmt)
    prefix = "".join(f"forall {v} " for v in loop_vars)
    target = _access_text(core.target, remap, dim_names)
    return (f"{prefix}{target} {_OP_TEXT[core.op]} "
            f"{_rhs_text(core.rhs, remap, dim_names)}")
