"""Small expression language for analytic fields on the plane.

Grammar: numbers, ``x1``, ``x2`` (aliases ``x``, ``y``), ``pi``, ``+ - * /``,
``^`` (or ``**``) with a constant exponent, parentheses, ``min``/``max`` with
two or more arguments, and ``sin cos exp sqrt log``.

Expressions are compiled to Python source that propagates value, gradient and
Hessian forward through the tree, once for scalar floats and once for numpy
arrays. ``min``/``max`` take the derivative of the active branch; ties go to
the first argument.
"""
from __future__ import annotations

import math
import re

import numpy as np

from .errors import ConfigError

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>\*\*|[-+*/^(),]))"
)

_FUNCS = {"sin", "cos", "exp", "sqrt", "log", "min", "max"}
_VARS = {"x1": 0, "x2": 1, "x": 0, "y": 1}


def _tokenize(text):
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ConfigError(f"cannot parse expression {text!r} at position {pos}")
        pos = m.end()
        if m.group("num") is not None:
            out.append(("num", float(m.group("num"))))
        elif m.group("name") is not None:
            out.append(("name", m.group("name")))
        else:
            op = m.group("op")
            out.append(("op", "^" if op == "**" else op))
    return out


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, kind=None, value=None):
        tok = self.peek()
        if tok[0] is None or (kind and tok[0] != kind) or (value and tok[1] != value):
            raise ConfigError(f"unexpected token {tok[1]!r} in {self.text!r}")
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.i != len(self.toks):
            raise ConfigError(f"trailing input in {self.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            node = ("add" if op == "+" else "sub", node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            node = ("mul" if op == "*" else "div", node, self.unary())
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            return ("neg", self.unary())
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            return ("pow", base, self.unary())
        return base

    def atom(self):
        kind, val = self.peek()
        if kind == "num":
            self.take()
            return ("num", val)
        if kind == "op" and val == "(":
            self.take()
            node = self.expr()
            self.take("op", ")")
            return node
        if kind == "name":
            self.take()
            if val in _VARS:
                return ("var", _VARS[val])
            if val == "pi":
                return ("num", math.pi)
            if val in _FUNCS:
                self.take("op", "(")
                args = [self.expr()]
                while self.peek() == ("op", ","):
                    self.take()
                    args.append(self.expr())
                self.take("op", ")")
                if val in ("min", "max"):
                    if len(args) < 2:
                        raise ConfigError(f"{val} needs at least two arguments")
                elif len(args) != 1:
                    raise ConfigError(f"{val} takes one argument")
                return ("call", val, args)
            raise ConfigError(f"unknown name {val!r} in {self.text!r}")
        raise ConfigError(f"unexpected token {val!r} in {self.text!r}")


def parse(text):
    return _Parser(text).parse()


def _fold(node):
    """Constant folding; returns a number node when the subtree is constant."""
    kind = node[0]
    if kind in ("num", "var"):
        return node
    if kind == "neg":
        a = _fold(node[1])
        return ("num", -a[1]) if a[0] == "num" else ("neg", a)
    if kind == "call":
        args = [_fold(a) for a in node[2]]
        if all(a[0] == "num" for a in args):
            vals = [a[1] for a in args]
            fn = {"min": min, "max": max}.get(node[1]) or getattr(math, node[1])
            return ("num", fn(*vals) if node[1] in ("min", "max") else fn(vals[0]))
        return ("call", node[1], args)
    a, b = _fold(node[1]), _fold(node[2])
    if a[0] == "num" and b[0] == "num":
        x, y = a[1], b[1]
        return ("num", {"add": x + y, "sub": x - y, "mul": x * y,
                        "div": x / y if y else math.inf, "pow": x ** y}[kind])
    return (kind, a, b)


class _Emitter:
    """Emit straight-line code. A jet is a 6-tuple of source snippets
    (v, gx, gy, hxx, hxy, hyy); ``None`` marks an identically zero entry."""

    def __init__(self, order, array):
        self.order = order
        self.array = array
        self.lines = []
        self.count = 0
        self.mod = "np" if array else "math"

    def tmp(self, expr):
        name = f"t{self.count}"
        self.count += 1
        self.lines.append(f"{name} = {expr}")
        return name

    def emit(self, node):
        kind = node[0]
        if kind == "num":
            return (repr(float(node[1])),) + (None,) * 5
        if kind == "var":
            v = "x1" if node[1] == 0 else "x2"
            if self.order < 1:
                return (v,) + (None,) * 5
            return (v, "1.0" if node[1] == 0 else None, "1.0" if node[1] == 1 else None,
                    None, None, None)
        if kind == "neg":
            a = self.emit(node[1])
            return tuple(None if c is None else self.tmp(f"-({c})") for c in a)
        if kind in ("add", "sub"):
            a, b = self.emit(node[1]), self.emit(node[2])
            s = "+" if kind == "add" else "-"
            out = []
            for k, (ca, cb) in enumerate(zip(a, b)):
                if k > 0 and self._skip(k):
                    out.append(None)
                elif ca is None and cb is None:
                    out.append(None)
                elif cb is None:
                    out.append(ca)
                elif ca is None:
                    out.append(cb if kind == "add" else self.tmp(f"-({cb})"))
                else:
                    out.append(self.tmp(f"{ca} {s} {cb}"))
            return tuple(out)
        if kind == "mul":
            return self._mul(self.emit(node[1]), self.emit(node[2]))
        if kind == "div":
            a, b = self.emit(node[1]), self.emit(node[2])
            if all(c is None for c in b[1:]):
                inv = self.tmp(f"1.0 / ({b[0]})")
                return tuple(None if c is None else self.tmp(f"{c} * {inv}") for c in a)
            bv = b[0]
            f0 = self.tmp(f"1.0 / ({bv})")
            f1 = self.tmp(f"-{f0} * {f0}")
            f2 = self.tmp(f"-2.0 * {f1} * {f0}")
            return self._mul(a, self._chain(b, f0, f1, f2))
        if kind == "pow":
            if node[2][0] != "num":
                raise ConfigError("exponents must be constant")
            c = node[2][1]
            a = self.emit(node[1])
            if c == 0.0:
                return ("1.0",) + (None,) * 5
            if c == 1.0:
                return a
            av = a[0]
            ce = repr(int(c)) if float(c).is_integer() else repr(c)
            cm1 = repr(int(c - 1)) if float(c).is_integer() else repr(c - 1)
            cm2 = repr(int(c - 2)) if float(c).is_integer() else repr(c - 2)
            f0 = self.tmp(f"({av}) ** {ce}")
            f1 = self.tmp(f"{c!r} * ({av}) ** {cm1}") if c != 2.0 else self.tmp(f"2.0 * ({av})")
            f2 = self.tmp(f"{c * (c - 1)!r} * ({av}) ** {cm2}") if c != 2.0 else "2.0"
            return self._chain(a, f0, f1, f2)
        if kind == "call":
            name, args = node[1], node[2]
            if name in ("min", "max"):
                acc = self.emit(args[0])
                for other in args[1:]:
                    acc = self._select(name, acc, self.emit(other))
                return acc
            a = self.emit(args[0])
            m, av = self.mod, a[0]
            if name == "sin":
                f0 = self.tmp(f"{m}.sin({av})")
                f1 = self.tmp(f"{m}.cos({av})")
                f2 = self.tmp(f"-{f0}")
            elif name == "cos":
                f0 = self.tmp(f"{m}.cos({av})")
                f1 = self.tmp(f"-{m}.sin({av})")
                f2 = self.tmp(f"-{f0}")
            elif name == "exp":
                f0 = self.tmp(f"{m}.exp({av})")
                f1 = f2 = f0
            elif name == "sqrt":
                f0 = self.tmp(f"{m}.sqrt({av})")
                f1 = self.tmp(f"0.5 / {f0}")
                f2 = self.tmp(f"-0.25 / ({f0} * ({av}))")
            elif name == "log":
                f0 = self.tmp(f"{m}.log({av})")
                f1 = self.tmp(f"1.0 / ({av})")
                f2 = self.tmp(f"-{f1} * {f1}")
            else:  # pragma: no cover - parser rejects unknown names
                raise ConfigError(name)
            return self._chain(a, f0, f1, f2)
        raise ConfigError(f"bad node {kind}")  # pragma: no cover

    def _skip(self, k):
        return (k in (1, 2) and self.order < 1) or (k >= 3 and self.order < 2)

    def _mul(self, a, b):
        def prod(x, y):
            if x is None or y is None:
                return None
            return f"{x} * {y}"

        def total(*terms):
            terms = [t for t in terms if t is not None]
            return self.tmp(" + ".join(terms)) if terms else None

        av, bv = a[0], b[0]
        out = [self.tmp(f"{av} * {bv}")]
        if self.order >= 1:
            out += [total(prod(av, b[1]), prod(bv, a[1])), total(prod(av, b[2]), prod(bv, a[2]))]
        else:
            out += [None, None]
        if self.order >= 2:
            agx, agy, bgx, bgy = a[1], a[2], b[1], b[2]
            xx = total(prod(av, b[3]), prod(bv, a[3]), prod("2.0", prod(agx, bgx)))
            xy = total(prod(av, b[4]), prod(bv, a[4]), prod(agx, bgy), prod(agy, bgx))
            yy = total(prod(av, b[5]), prod(bv, a[5]), prod("2.0", prod(agy, bgy)))
            out += [xx, xy, yy]
        else:
            out += [None, None, None]
        return tuple(out)

    def _chain(self, a, f0, f1, f2):
        """Jet of f(a) given f, f', f'' snippets at a."""
        out = [f0]
        if self.order >= 1:
            out += [None if a[1] is None else self.tmp(f"{f1} * {a[1]}"),
                    None if a[2] is None else self.tmp(f"{f1} * {a[2]}")]
        else:
            out += [None, None]
        if self.order >= 2:
            gx, gy = a[1], a[2]

            def comb(h, p, q):
                terms = []
                if h is not None:
                    terms.append(f"{f1} * {h}")
                if p is not None and q is not None:
                    terms.append(f"{f2} * {p} * {q}")
                return self.tmp(" + ".join(terms)) if terms else None

            out += [comb(a[3], gx, gx), comb(a[4], gx, gy), comb(a[5], gy, gy)]
        else:
            out += [None, None, None]
        return tuple(out)

    def _select(self, name, a, b):
        op = "<=" if name == "min" else ">="
        cond = self.tmp(f"{a[0]} {op} {b[0]}")
        comps = [0] + ([1, 2] if self.order >= 1 else []) + ([3, 4, 5] if self.order >= 2 else [])
        out = [None] * 6
        if self.array:
            for k in comps:
                ca, cb = a[k] or "0.0", b[k] or "0.0"
                if a[k] is None and b[k] is None:
                    continue
                out[k] = self.tmp(f"np.where({cond}, {ca}, {cb})")
        else:
            names = {}
            for k in comps:
                if a[k] is None and b[k] is None:
                    continue
                names[k] = f"t{self.count}"
                self.count += 1
            self.lines.append(f"if {cond}:")
            for k, nm in names.items():
                self.lines.append(f"    {nm} = {a[k] or '0.0'}")
            self.lines.append("else:")
            for k, nm in names.items():
                self.lines.append(f"    {nm} = {b[k] or '0.0'}")
            if not names:
                self.lines.append("    pass")
            for k, nm in names.items():
                out[k] = nm
        return tuple(out)


def _compile(tree, order, array):
    em = _Emitter(order, array)
    jet = em.emit(tree)
    ncomp = {0: 1, 1: 3, 2: 6}[order]
    zero = "_z" if array else "0.0"
    rets = []
    for k in range(ncomp):
        c = jet[k]
        if c is None:
            rets.append(zero)
        elif array:
            rets.append(f"({c}) + _z")
        else:
            rets.append(c)
    body = ["def _f(x1, x2):"]
    if array:
        body.append("    _z = np.zeros(np.shape(x1))")
    body += ["    " + ln for ln in em.lines]
    body.append(f"    return {', '.join(rets)}" + ("," if ncomp == 1 else ""))
    ns = {"np": np, "math": math}
    exec("\n".join(body), ns)
    return ns["_f"]


class Expression:
    """Analytic scalar field with exact first and second derivatives."""

    def __init__(self, text):
        if isinstance(text, (int, float)):
            text = repr(float(text))
        self.text = str(text).strip()
        self.tree = _fold(parse(self.text))
        self._cache = {}
        self._fn(0, False)  # compile now so malformed input fails early

    def __repr__(self):
        return f"Expression({self.text!r})"

    def _fn(self, order, array):
        key = (order, array)
        if key not in self._cache:
            self._cache[key] = _compile(self.tree, order, array)
        return self._cache[key]

    @property
    def is_constant(self):
        return self.tree[0] == "num"

    # array API
    def value(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return self._fn(0, True)(pts[:, 0], pts[:, 1])[0]

    __call__ = value

    def gradient(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        _, gx, gy = self._fn(1, True)(pts[:, 0], pts[:, 1])
        return np.column_stack([gx, gy])

    def hessian(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        _, _, _, hxx, hxy, hyy = self._fn(2, True)(pts[:, 0], pts[:, 1])
        return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)

    # scalar API
    def value_at(self, x, y):
        return self._fn(0, False)(x, y)[0]

    def grad_at(self, x, y):
        _, gx, gy = self._fn(1, False)(x, y)
        return gx, gy

    def hess_at(self, x, y):
        _, _, _, hxx, hxy, hyy = self._fn(2, False)(x, y)
        return hxx, hxy, hyy
