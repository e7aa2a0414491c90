"""Symbolic expression trees extracted from trained equation-learner
networks: construction, simplification, evaluation, complexity scoring
and multi-trial model selection.

A tree is built from Const, Var, Sum, Prod, Pow and the unary functions
Sin/Exp/Sigmoid.  Unary nodes carry a scalar ``scale`` applied to their
argument (so ``sin(2*pi*x)`` is one Sin node with scale 2*pi, matching
how the network's activation units are defined).
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit


class ExprEvalError(ArithmeticError):
    """Expression evaluation produced a non-finite value."""


class Expr:
    __slots__ = ()


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    index: int


@dataclass(frozen=True)
class Sum(Expr):
    terms: tuple


@dataclass(frozen=True)
class Prod(Expr):
    factors: tuple


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int

    def __post_init__(self):
        if self.exponent < 2:
            raise ValueError("Pow exponent must be >= 2")


@dataclass(frozen=True)
class Sin(Expr):
    arg: Expr
    scale: float = 1.0


@dataclass(frozen=True)
class Exp(Expr):
    arg: Expr
    scale: float = 1.0


@dataclass(frozen=True)
class Sigmoid(Expr):
    arg: Expr
    scale: float = 1.0


_UNARY = {Sin: np.sin, Exp: np.exp, Sigmoid: expit}


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _ev(e, X):
    if isinstance(e, Const):
        return np.full(X.shape[0], e.value)
    if isinstance(e, Var):
        return X[:, e.index]
    if isinstance(e, Sum):
        out = _ev(e.terms[0], X)
        for t in e.terms[1:]:
            out = out + _ev(t, X)
        return out
    if isinstance(e, Prod):
        out = _ev(e.factors[0], X)
        for f in e.factors[1:]:
            out = out * _ev(f, X)
        return out
    if isinstance(e, Pow):
        return _ev(e.base, X) ** e.exponent
    fn = _UNARY[type(e)]
    return fn(e.scale * _ev(e.arg, X))


def eval_expr(expr, x):
    """Evaluate at a single point (1-D x) or a batch (2-D x, rows are
    points).  Raises ExprEvalError on overflow or other non-finite
    results."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = _ev(expr, X)
    out = np.asarray(out, dtype=float)
    if not np.all(np.isfinite(out)):
        raise ExprEvalError("expression evaluation is not finite")
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# extraction from a network
# ---------------------------------------------------------------------------

def _affine_combo(exprs, col, bias, prune_eps):
    terms = []
    for w, e in zip(col, exprs):
        if abs(w) > prune_eps:
            terms.append(Prod((Const(float(w)), e)))
    if abs(bias) > prune_eps:
        terms.append(Const(float(bias)))
    if not terms:
        return Const(0.0)
    if len(terms) == 1:
        return terms[0]
    return Sum(tuple(terms))


def extract_expression(net, prune_eps=0.0, weight_arrays=None, bias_arrays=None):
    """Symbolic forward propagation of ``net``.

    Every ``g`` entry becomes the weighted sum of the previous layer's
    expressions (terms with |weight| <= prune_eps dropped), wrapped by its
    unit's function.  ``weight_arrays``/``bias_arrays`` override the
    network's stored values (e.g. gated effective weights).  Returns one
    expression per output; a single output comes back unwrapped.
    """
    if prune_eps < 0:
        raise ValueError("prune_eps must be >= 0")
    Ws = weight_arrays if weight_arrays is not None else [w.data for w in net.weights]
    bs = bias_arrays if bias_arrays is not None else [b.data for b in net.biases]

    exprs = [Var(i) for i in range(net.input_dim)]
    for bank, W, b in zip(net.banks, Ws, bs):
        g_exprs = [_affine_combo(exprs, W[:, j], b[j], prune_eps)
                   for j in range(bank.g_dim)]
        h_exprs = []
        gi = 0
        for act in bank.units():
            k = act.kind
            if k == "one":
                h_exprs.append(Const(1.0))
                gi += 1
            elif k == "identity":
                h_exprs.append(g_exprs[gi])
                gi += 1
            elif k == "square":
                h_exprs.append(Pow(g_exprs[gi], 2))
                gi += 1
            elif k == "sine":
                h_exprs.append(Sin(g_exprs[gi], act.scale))
                gi += 1
            elif k == "exp":
                h_exprs.append(Exp(g_exprs[gi], act.scale))
                gi += 1
            elif k == "sigmoid":
                h_exprs.append(Sigmoid(g_exprs[gi], act.scale))
                gi += 1
            else:  # product
                pair = (g_exprs[gi], g_exprs[gi + 1])
                if act.scale == 1.0:
                    h_exprs.append(Prod(pair))
                else:
                    h_exprs.append(Prod((Const(act.scale),) + pair))
                gi += 2
        exprs = h_exprs

    outs = [_affine_combo(exprs, Ws[-1][:, o], bs[-1][o], prune_eps)
            for o in range(net.output_dim)]
    return outs[0] if net.output_dim == 1 else outs


# ---------------------------------------------------------------------------
# canonicalization and simplification
# ---------------------------------------------------------------------------

def _key(e):
    if isinstance(e, Const):
        return f"C{e.value!r}"
    if isinstance(e, Var):
        return f"V{e.index:06d}"
    if isinstance(e, Sum):
        return "S(" + ",".join(_key(t) for t in e.terms) + ")"
    if isinstance(e, Prod):
        return "P(" + ",".join(_key(f) for f in e.factors) + ")"
    if isinstance(e, Pow):
        return f"W({_key(e.base)},{e.exponent})"
    return f"{type(e).__name__}({e.scale!r},{_key(e.arg)})"


def _split_coef(term):
    """term -> (coefficient, tuple of non-const factors)."""
    if isinstance(term, Const):
        return term.value, ()
    if isinstance(term, Prod):
        coef = 1.0
        rest = []
        for f in term.factors:
            if isinstance(f, Const):
                coef *= f.value
            else:
                rest.append(f)
        return coef, tuple(rest)
    return 1.0, (term,)


def _build_term(coef, factors):
    if coef == 0.0:
        return Const(0.0)
    if not factors:
        return Const(coef)
    if coef == 1.0:
        return factors[0] if len(factors) == 1 else Prod(tuple(factors))
    return Prod((Const(coef),) + tuple(factors))


_EXPAND_CAP = 400  # max term count when distributing products over sums


def _distribute(factors, coef):
    """Product of sums -> sum of products, used by the expanding pass."""
    total = 1
    for f in factors:
        total *= len(f.terms) if isinstance(f, Sum) else 1
        if total > _EXPAND_CAP:
            return None
    terms = [(coef, ())]
    for f in factors:
        options = f.terms if isinstance(f, Sum) else (f,)
        new = []
        for c, fs in terms:
            for opt in options:
                c2, extra = _split_coef(opt)
                new.append((c * c2, fs + extra))
        terms = new
    return Sum(tuple(_build_term(c, fs) for c, fs in terms))


def _canon(e, expand=False):
    if isinstance(e, (Const, Var)):
        return e

    if isinstance(e, Pow):
        base = _canon(e.base, expand)
        if isinstance(base, Const):
            return Const(base.value ** e.exponent)
        if isinstance(base, Pow):
            return Pow(base.base, base.exponent * e.exponent)
        if isinstance(base, Prod):
            return _canon(Prod(tuple(
                Pow(f, e.exponent) if not isinstance(f, Const)
                else Const(f.value ** e.exponent)
                for f in base.factors)), expand)
        if expand and isinstance(base, Sum):
            out = _distribute((base,) * e.exponent, 1.0)
            if out is not None:
                return _canon(out, expand)
        return Pow(base, e.exponent)

    if isinstance(e, Prod):
        coef = 1.0
        flat = []
        stack = [_canon(f, expand) for f in e.factors]
        for f in stack:
            if isinstance(f, Const):
                coef *= f.value
            elif isinstance(f, Prod):
                c2, rest = _split_coef(f)
                coef *= c2
                flat.extend(rest)
            else:
                flat.append(f)
        if coef == 0.0:
            return Const(0.0)
        if expand and any(isinstance(f, Sum) for f in flat):
            out = _distribute(flat, coef)
            if out is not None:
                return _canon(out, expand)
        # group repeated factors into powers
        powers = {}
        for f in flat:
            if isinstance(f, Pow):
                b, n = f.base, f.exponent
            else:
                b, n = f, 1
            k = _key(b)
            if k in powers:
                powers[k] = (b, powers[k][1] + n)
            else:
                powers[k] = (b, n)
        factors = [b if n == 1 else Pow(b, n)
                   for b, n in (powers[k] for k in sorted(powers))]
        return _build_term(coef, factors)

    if isinstance(e, Sum):
        merged = {}
        stack = [_canon(t, expand) for t in e.terms]
        flat = []
        for t in stack:
            if isinstance(t, Sum):
                flat.extend(t.terms)
            else:
                flat.append(t)
        for t in flat:
            coef, factors = _split_coef(t)
            k = tuple(_key(f) for f in factors)
            if k in merged:
                merged[k] = (merged[k][0] + coef, factors)
            else:
                merged[k] = (coef, factors)
        terms = [_build_term(c, f)
                 for c, f in (merged[k] for k in sorted(merged))
                 if c != 0.0]
        if not terms:
            return Const(0.0)
        if len(terms) == 1:
            return terms[0]
        return Sum(tuple(terms))

    # unary functions: fold a pure-constant coefficient of the argument
    # into the scale, or collapse entirely when the argument is constant
    arg = _canon(e.arg, expand)
    scale = e.scale
    if isinstance(arg, Const):
        val = float(_UNARY[type(e)](scale * arg.value))
        return Const(val)
    coef, factors = _split_coef(arg)
    if coef != 1.0 and factors:
        scale = scale * coef
        arg = factors[0] if len(factors) == 1 else Prod(tuple(factors))
    if scale == 0.0:
        return Const(float(_UNARY[type(e)](0.0)))
    return type(e)(arg, scale)


def round_sig(v, digits):
    if v == 0.0 or not math.isfinite(v):
        return v
    return round(v, digits - 1 - int(math.floor(math.log10(abs(v)))))


def _prune_round(e, threshold, digits):
    if isinstance(e, Const):
        return Const(round_sig(e.value, digits))
    if isinstance(e, Var):
        return e
    if isinstance(e, Pow):
        return Pow(_prune_round(e.base, threshold, digits), e.exponent)
    if isinstance(e, Prod):
        return Prod(tuple(_prune_round(f, threshold, digits) for f in e.factors))
    if isinstance(e, Sum):
        split = [_split_coef(t) for t in e.terms]
        biggest = max(abs(c) for c, _ in split)
        kept = []
        for coef, factors in split:
            if abs(coef) <= threshold * biggest:
                continue
            coef = round_sig(coef, digits)
            factors = tuple(_prune_round(f, threshold, digits) for f in factors)
            kept.append(_build_term(coef, factors))
        if not kept:
            return Const(0.0)
        return Sum(tuple(kept)) if len(kept) > 1 else kept[0]
    # unary
    return type(e)(_prune_round(e.arg, threshold, digits),
                   round_sig(e.scale, digits))


def simplify(expr, coeff_threshold=0.01, round_digits=3):
    """Flatten and merge like terms, drop additive terms whose coefficient
    is small relative to the largest sibling, and round the remaining
    coefficients to ``round_digits`` significant digits.

    Runs both a factored and a polynomial-expanded canonicalization
    (expansion lets e.g. a difference of squares collapse to a plain
    product) and keeps whichever result is simpler.
    """
    if coeff_threshold < 0:
        raise ValueError("coeff_threshold must be >= 0")
    best = None
    for expand in (False, True):
        e = _canon(expr, expand)
        e = _prune_round(e, coeff_threshold, round_digits)
        e = _canon(e, expand)
        if best is None or complexity(e) < complexity(best):
            best = e
    return best


def complexity(expr):
    """Node-count complexity: Const/Var cost 1, Sum/Prod cost
    (children - 1), unary functions and Pow cost 2."""
    if isinstance(expr, (Const, Var)):
        return 1
    if isinstance(expr, Sum):
        return (len(expr.terms) - 1) + sum(complexity(t) for t in expr.terms)
    if isinstance(expr, Prod):
        return (len(expr.factors) - 1) + sum(complexity(f) for f in expr.factors)
    if isinstance(expr, Pow):
        return 2 + complexity(expr.base)
    return 2 + complexity(expr.arg)


# ---------------------------------------------------------------------------
# printing and serialization
# ---------------------------------------------------------------------------

def _fmt(v, digits):
    return f"{v:.{digits}g}"


def _print(e, digits, names):
    # returns (text, precedence): 3 atom/call, 2 pow, 1 prod, 0 sum
    if isinstance(e, Const):
        txt = _fmt(abs(e.value), digits)
        return (txt, 3) if e.value >= 0 else ("-" + txt, 1)
    if isinstance(e, Var):
        return names(e.index), 3
    if isinstance(e, Pow):
        btxt, bprec = _print(e.base, digits, names)
        if bprec < 3:
            btxt = f"({btxt})"
        return f"{btxt}^{e.exponent}", 2
    if isinstance(e, Prod):
        coef, factors = _split_coef(e)
        parts = []
        for f in factors:
            txt, prec = _print(f, digits, names)
            parts.append(f"({txt})" if prec < 1 else txt)
        body = "*".join(parts) if parts else "1"
        if coef == 1.0:
            return body, 1
        if coef == -1.0:
            return "-" + body, 1
        return _fmt(coef, digits) + "*" + body, 1
    if isinstance(e, Sum):
        out = []
        for i, t in enumerate(e.terms):
            txt, _ = _print(t, digits, names)
            if i == 0:
                out.append(txt)
            elif txt.startswith("-"):
                out.append(" - " + txt[1:])
            else:
                out.append(" + " + txt)
        return "".join(out), 0
    fname = type(e).__name__.lower()
    atxt, aprec = _print(e.arg, digits, names)
    if e.scale == 1.0:
        return f"{fname}({atxt})", 3
    if aprec < 1:
        atxt = f"({atxt})"
    return f"{fname}({_fmt(e.scale, digits)}*{atxt})", 3


def to_infix(expr, round_digits=3, var_names=None):
    """Render as infix text, e.g. ``sin(6.28*x0)`` or
    ``-1.81*z1 - 1.8*z2 + 9``."""
    if var_names is None:
        names = lambda i: f"x{i}"
    elif callable(var_names):
        names = var_names
    else:
        names = lambda i: var_names[i]
    return _print(expr, round_digits, names)[0]


def expr_to_json(e):
    if isinstance(e, Const):
        return {"kind": "const", "value": e.value}
    if isinstance(e, Var):
        return {"kind": "var", "index": e.index}
    if isinstance(e, Sum):
        return {"kind": "sum", "terms": [expr_to_json(t) for t in e.terms]}
    if isinstance(e, Prod):
        return {"kind": "prod", "factors": [expr_to_json(f) for f in e.factors]}
    if isinstance(e, Pow):
        return {"kind": "pow", "base": expr_to_json(e.base), "exponent": e.exponent}
    return {"kind": type(e).__name__.lower(), "scale": e.scale,
            "arg": expr_to_json(e.arg)}


def expr_from_json(d):
    kind = d["kind"]
    if kind == "const":
        return Const(d["value"])
    if kind == "var":
        return Var(d["index"])
    if kind == "sum":
        return Sum(tuple(expr_from_json(t) for t in d["terms"]))
    if kind == "prod":
        return Prod(tuple(expr_from_json(f) for f in d["factors"]))
    if kind == "pow":
        return Pow(expr_from_json(d["base"]), d["exponent"])
    cls = {"sin": Sin, "exp": Exp, "sigmoid": Sigmoid}[kind]
    return cls(expr_from_json(d["arg"]), d["scale"])


def dump_expr(expr, path):
    with open(path, "w") as f:
        json.dump(expr_to_json(expr), f)


def load_expr(path):
    with open(path) as f:
        return expr_from_json(json.load(f))


# ---------------------------------------------------------------------------
# scoring and selection
# ---------------------------------------------------------------------------

@dataclass
class CandidateReport:
    expression: Expr
    complexity: int
    train_rmse: float
    extrapolation_rmse: float
    seed: int


def extrapolation_error(expr, reference, domain, n=4096, seed=0):
    """RMSE between ``expr`` and a reference over uniform samples.

    ``reference`` is either a callable mapping an (n, d) array to (n,)
    values, or an (X, y) dataset pair (then ``domain``/``n``/``seed`` are
    ignored).  Invalid evaluation yields +inf.
    """
    if callable(reference):
        if n <= 0:
            raise ValueError("n must be positive")
        rng = np.random.default_rng(seed)
        lo = np.array([d[0] for d in domain])
        hi = np.array([d[1] for d in domain])
        X = rng.uniform(lo, hi, size=(n, len(domain)))
        y = np.asarray(reference(X), dtype=float)
    else:
        X, y = reference
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
    try:
        pred = eval_expr(expr, X)
    except ExprEvalError:
        return float("inf")
    return float(np.sqrt(np.mean((pred - y) ** 2)))


def select_model(candidates, mu=1e-4):
    """argmin of extrapolation_rmse + mu * complexity; ties break toward
    lower complexity, then lower seed."""
    if not candidates:
        raise ValueError("no candidates")
    finite = [c for c in candidates if math.isfinite(c.extrapolation_rmse)]
    if not finite:
        raise ValueError("all candidates are invalid")
    return min(finite, key=lambda c: (c.extrapolation_rmse + mu * c.complexity,
                                      c.complexity, c.seed))


def numerically_equivalent(candidate, truth, domain, n=4096, seed=7,
                           rmse_tol=0.01, complexity_factor=2.0):
    """Benchmark success criterion: RMSE against the generating function
    below ``rmse_tol`` on the extrapolation domain AND complexity at most
    ``complexity_factor`` times the ground truth's."""
    def ref(X):
        return eval_expr(truth, X)

    rmse = extrapolation_error(candidate, ref, domain, n=n, seed=seed)
    return (rmse < rmse_tol
            and complexity(candidate) <= complexity_factor * complexity(truth))


def affine_parts(expr, nvars):
    """Decompose a (simplified) expression into linear coefficients per
    variable, a constant, and leftover non-linear terms.  Used for
    reporting and for checking extracted update laws."""
    coefs = np.zeros(nvars)
    const = 0.0
    residual = []
    terms = expr.terms if isinstance(expr, Sum) else (expr,)
    for t in terms:
        coef, factors = _split_coef(t)
        if not factors:
            const += coef
        elif len(factors) == 1 and isinstance(factors[0], Var):
            coefs[factors[0].index] += coef
        else:
            residual.append(t)
    return coefs, const, residual
