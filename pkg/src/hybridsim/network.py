"""Reaction-network data model, mass-action propensities and the text format.

A network is a list of species, each either ``continuous`` (large copy
numbers, later treated as real-valued) or ``discrete`` (small integer
counts), and a list of mass-action reactions.  The text format is
line oriented::

    # comment
    param k1=0.5
    species S1 discrete init=1
    species S3 continuous init=1000
    reaction r3: S1 -> S1 + 5 S3 rate=1.0
    reaction r4: S2 + S3 -> S2 + S4 rate=k4 group=diffusion

The literal ``0`` stands for an empty side of a reaction.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .errors import ImpossibleEventError, NetworkSyntaxError, NetworkValidationError

CONTINUOUS = "continuous"
DISCRETE = "discrete"
GROUPS = ("auto", "diffusion", "jump")


@dataclass(frozen=True)
class Species:
    name: str
    kind: str
    init: float

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, DISCRETE):
            raise NetworkValidationError(f"unknown species kind {self.kind!r}")
        if self.init < 0:
            raise NetworkValidationError(f"negative init for species {self.name}")
        if self.kind == DISCRETE and float(self.init) != int(self.init):
            raise NetworkValidationError(
                f"non-integer init {self.init} for discrete species {self.name}"
            )

    @property
    def is_discrete(self) -> bool:
        return self.kind == DISCRETE


@dataclass(frozen=True)
class Reaction:
    """A mass-action channel ``reactants -> products`` with constant ``rate``.

    ``rate_param`` remembers the parameter name the rate was taken from so
    that serialization reproduces the source text.
    """

    id: str
    reactants: Mapping[str, int]
    products: Mapping[str, int]
    rate: float
    group: str = "auto"
    rate_param: str | None = None

    def __post_init__(self):
        if self.rate < 0 or not math.isfinite(self.rate):
            raise NetworkValidationError(f"invalid rate {self.rate} for reaction {self.id}")
        if self.group not in GROUPS:
            raise NetworkValidationError(f"unknown group {self.group!r} for reaction {self.id}")
        if not self.reactants and not self.products:
            raise NetworkValidationError(f"reaction {self.id} has two empty sides")
        for side in (self.reactants, self.products):
            for name, coeff in side.items():
                if int(coeff) != coeff or coeff <= 0:
                    raise NetworkValidationError(
                        f"stoichiometric coefficient {coeff} of {name} in {self.id}"
                    )

    @property
    def net(self) -> dict[str, int]:
        """Net change of each touched species when the reaction fires."""
        change: dict[str, int] = {}
        for name, c in self.reactants.items():
            change[name] = change.get(name, 0) - c
        for name, c in self.products.items():
            change[name] = change.get(name, 0) + c
        return change

    @property
    def species(self) -> set[str]:
        return set(self.reactants) | set(self.products)


class NetworkArrays(NamedTuple):
    """Flat numeric view of a network, consumed by the compiled kernels."""

    rates: np.ndarray  # (R,)
    nu: np.ndarray  # (R, N) float, net stoichiometry
    react_ptr: np.ndarray  # (R+1,) CSR offsets into react_species/react_order
    react_species: np.ndarray
    react_order: np.ndarray
    discrete: np.ndarray  # (N,) bool


@dataclass(frozen=True, eq=False)
class State:
    """Hybrid state: real ``x`` for continuous species, integer ``sigma``
    for discrete species, both in network declaration order."""

    x: np.ndarray
    sigma: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=np.int64))
        if np.any(self.sigma < 0):
            raise ValueError("negative discrete count")

    def __eq__(self, other):
        if not isinstance(other, State):
            return NotImplemented
        return (
            self.t == other.t
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.sigma, other.sigma)
        )

    def __repr__(self):
        return f"State(x={self.x.tolist()}, sigma={self.sigma.tolist()}, t={self.t})"


@dataclass(frozen=True, eq=False)
class ReactionNetwork:
    species: tuple[Species, ...]
    reactions: tuple[Reaction, ...]
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "reactions", tuple(self.reactions))
        object.__setattr__(self, "params", dict(self.params))
        names = [s.name for s in self.species]
        if len(set(names)) != len(names):
            raise NetworkValidationError("duplicate species name")
        ids = [r.id for r in self.reactions]
        if len(set(ids)) != len(ids):
            raise NetworkValidationError("duplicate reaction id")
        declared = set(names)
        for r in self.reactions:
            for name in sorted(r.species - declared):
                raise NetworkValidationError(f"undeclared species {name}")

    def __eq__(self, other):
        if not isinstance(other, ReactionNetwork):
            return NotImplemented
        return (
            self.species == other.species
            and self.reactions == other.reactions
            and self.params == other.params
        )

    @property
    def species_names(self) -> list[str]:
        return [s.name for s in self.species]

    @property
    def reaction_ids(self) -> list[str]:
        return [r.id for r in self.reactions]

    @cached_property
    def species_index(self) -> dict[str, int]:
        return {s.name: i for i, s in enumerate(self.species)}

    @cached_property
    def reaction_index(self) -> dict[str, int]:
        return {r.id: i for i, r in enumerate(self.reactions)}

    @cached_property
    def continuous_idx(self) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.species) if not s.is_discrete], dtype=np.int64)

    @cached_property
    def discrete_idx(self) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.species) if s.is_discrete], dtype=np.int64)

    def reaction(self, rid: str | Reaction) -> Reaction:
        if isinstance(rid, Reaction):
            return rid
        return self.reactions[self.reaction_index[rid]]

    def initial_state(self) -> State:
        full = np.array([s.init for s in self.species], dtype=float)
        return self.state_from_vector(full)

    def state_vector(self, state: State) -> np.ndarray:
        """Full species vector (declaration order) of a hybrid state."""
        full = np.empty(len(self.species))
        full[self.continuous_idx] = state.x
        full[self.discrete_idx] = state.sigma
        return full

    def state_from_vector(self, full, t: float = 0.0) -> State:
        full = np.asarray(full, dtype=float)
        return State(full[self.continuous_idx], np.rint(full[self.discrete_idx]), t)

    @cached_property
    def arrays(self) -> NetworkArrays:
        n_r, n_s = len(self.reactions), len(self.species)
        nu = np.zeros((n_r, n_s))
        ptr = [0]
        sp: list[int] = []
        order: list[int] = []
        for j, r in enumerate(self.reactions):
            for name, c in r.net.items():
                nu[j, self.species_index[name]] = c
            for name, c in r.reactants.items():
                sp.append(self.species_index[name])
                order.append(c)
            ptr.append(len(sp))
        return NetworkArrays(
            rates=np.array([r.rate for r in self.reactions], dtype=float),
            nu=nu,
            react_ptr=np.array(ptr, dtype=np.int64),
            react_species=np.array(sp, dtype=np.int64),
            react_order=np.array(order, dtype=np.int64),
            discrete=np.array([s.is_discrete for s in self.species], dtype=bool),
        )

    def to_text(self) -> str:
        return serialize_network(self)


# ---------------------------------------------------------------------------
# mass-action kinetics


def _binomial_weight(n: float, k: int):
    """C(n, k) extended to real n as the falling factorial over k!.

    Returns an exact ``int`` when ``n`` is integral.  For real ``n`` the
    weight is zero once ``n <= k - 1``, so it never turns negative.
    """
    if k == 0:
        return 1
    if float(n).is_integer():
        return math.comb(int(n), k) if n >= 0 else 0
    if n - (k - 1) <= 0:
        return 0.0
    w = 1.0
    for j in range(k):
        w *= n - j
    return w / math.factorial(k)


def _counts(net: ReactionNetwork, state) -> np.ndarray:
    if isinstance(state, State):
        full = net.state_vector(state)
    else:
        full = np.asarray(state, dtype=float)
    # continuous values are clamped before any propensity evaluation
    return np.maximum(full, 0.0)


def combinatorial_weight(net: ReactionNetwork, reaction, state):
    """Number of distinct reactant combinations h_r available in ``state``."""
    r = net.reaction(reaction)
    counts = _counts(net, state)
    w = 1
    for name, k in r.reactants.items():
        w *= _binomial_weight(float(counts[net.species_index[name]]), k)
    return w


def continuous_weight(net: ReactionNetwork, reaction, state):
    """Combinatorial weight restricted to the continuous reactants.

    Discrete reactants only gate a channel on or off (their counts are
    small), so the large-population part of the weight is what decides
    whether a diffusion approximation is appropriate.
    """
    r = net.reaction(reaction)
    counts = _counts(net, state)
    w = 1
    for name, k in r.reactants.items():
        i = net.species_index[name]
        if not net.species[i].is_discrete:
            w *= _binomial_weight(float(counts[i]), k)
    return w


def propensity(net: ReactionNetwork, reaction, state) -> float:
    r = net.reaction(reaction)
    return r.rate * float(combinatorial_weight(net, r, state))


def propensities(net: ReactionNetwork, state) -> np.ndarray:
    return np.array([propensity(net, r, state) for r in net.reactions])


def apply_stoichiometry(net: ReactionNetwork, state: State, reaction) -> State:
    """Fire ``reaction`` once, updating continuous and discrete parts together."""
    r = net.reaction(reaction)
    full = net.state_vector(state)
    for name, c in r.net.items():
        full[net.species_index[name]] += c
    neg = [net.species_names[i] for i in net.discrete_idx if full[i] < 0]
    if neg:
        raise ImpossibleEventError(f"impossible event: {r.id} drives {', '.join(neg)} negative")
    return net.state_from_vector(full, state.t)


# ---------------------------------------------------------------------------
# partition


@dataclass(frozen=True)
class Partition:
    """Split of the reactions into diffusion channels and jump channels.

    ``jump`` is ordered; that order fixes the layout of the mark intervals.
    ``nu_x`` / ``nu_sigma`` hold each reaction's net change restricted to
    continuous / discrete species.
    """

    diffusion: tuple[str, ...]
    jump: tuple[str, ...]
    nu_x: Mapping[str, np.ndarray] = field(repr=False, compare=False)
    nu_sigma: Mapping[str, np.ndarray] = field(repr=False, compare=False)
    diffusion_idx: np.ndarray = field(repr=False, compare=False)
    jump_idx: np.ndarray = field(repr=False, compare=False)
    # sparse net stoichiometry of the diffusion channels, for the kernels
    d_ptr: np.ndarray = field(repr=False, compare=False, default=None)
    d_species: np.ndarray = field(repr=False, compare=False, default=None)
    d_nu: np.ndarray = field(repr=False, compare=False, default=None)
    clamp_species: np.ndarray = field(repr=False, compare=False, default=None)

    @classmethod
    def from_sets(cls, net: ReactionNetwork, diffusion: Iterable[str]) -> "Partition":
        diffusion = set(diffusion)
        unknown = diffusion - set(net.reaction_ids)
        if unknown:
            raise NetworkValidationError(f"unknown reaction(s) {sorted(unknown)}")
        nu = net.arrays.nu
        nu_x = {r.id: nu[j, net.continuous_idx] for j, r in enumerate(net.reactions)}
        nu_sigma = {r.id: nu[j, net.discrete_idx] for j, r in enumerate(net.reactions)}
        for rid in diffusion:
            if np.any(nu_sigma[rid] != 0):
                raise NetworkValidationError(
                    f"reaction {rid} changes a discrete species and cannot be a diffusion channel"
                )
        d = tuple(r for r in net.reaction_ids if r in diffusion)
        jmp = tuple(r for r in net.reaction_ids if r not in diffusion)
        ptr, sp, vals = [0], [], []
        for rid in d:
            row = nu[net.reaction_index[rid]]
            for i in np.nonzero(row)[0]:
                sp.append(i)
                vals.append(row[i])
            ptr.append(len(sp))
        return cls(
            diffusion=d,
            jump=jmp,
            nu_x=nu_x,
            nu_sigma=nu_sigma,
            diffusion_idx=np.array([net.reaction_index[r] for r in d], dtype=np.int64),
            jump_idx=np.array([net.reaction_index[r] for r in jmp], dtype=np.int64),
            d_ptr=np.array(ptr, dtype=np.int64),
            d_species=np.array(sp, dtype=np.int64),
            d_nu=np.array(vals, dtype=float),
            clamp_species=np.array(sorted(set(sp)), dtype=np.int64),
        )


def partition_reactions(
    net: ReactionNetwork, h_threshold: float = 100.0, probe: State | None = None
) -> Partition:
    """Assign every reaction to the diffusion set or the jump set.

    Hints ``diffusion``/``jump`` are honoured.  An ``auto`` reaction becomes a
    diffusion channel iff it leaves discrete species unchanged and its
    continuous-reactant weight at ``probe`` reaches ``h_threshold``.
    """
    if h_threshold <= 0:
        raise ValueError("h_threshold must be positive")
    if probe is None:
        probe = net.initial_state()
    diffusion = []
    for r in net.reactions:
        touches_sigma = any(
            net.species[net.species_index[name]].is_discrete and c != 0
            for name, c in r.net.items()
        )
        if r.group == "diffusion":
            diffusion.append(r.id)
        elif r.group == "auto" and not touches_sigma:
            if continuous_weight(net, r, probe) >= h_threshold:
                diffusion.append(r.id)
    return Partition.from_sets(net, diffusion)


class ValidityRow(NamedTuple):
    reaction: str
    weight: float
    ok: bool


def diffusion_validity(
    net: ReactionNetwork, partition: Partition, state: State, h_min: float
) -> list[ValidityRow]:
    """Report h_r for every diffusion channel and flag those below ``h_min``."""
    rows = []
    for rid in partition.diffusion:
        w = combinatorial_weight(net, rid, state)
        rows.append(ValidityRow(rid, w, w >= h_min))
    return rows


# ---------------------------------------------------------------------------
# text format

_TOKEN = re.compile(
    r"\s*(?:(?P<arrow>->)|(?P<num>[0-9]+(?:\.[0-9]*)?(?:[eE][+-]?[0-9]+)?|\.[0-9]+(?:[eE][+-]?[0-9]+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[+:=]))"
)


class _Tok(NamedTuple):
    kind: str
    text: str
    col: int  # 1-based


def _tokenize(line: str, lineno: int) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(line):
        if line[pos:].strip() == "":
            break
        m = _TOKEN.match(line, pos)
        if not m or m.end() == pos:
            col = pos + len(line[pos:]) - len(line[pos:].lstrip()) + 1
            raise NetworkSyntaxError(f"unexpected character {line[col - 1]!r}", lineno, col)
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind) + 1))
        pos = m.end()
    return toks


class _Line:
    def __init__(self, toks: list[_Tok], lineno: int, length: int):
        self.toks = toks
        self.i = 0
        self.lineno = lineno
        self.length = length

    def error(self, msg: str, tok: _Tok | None = None):
        col = tok.col if tok else self.length + 1
        return NetworkSyntaxError(msg, self.lineno, col)

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, kind: str, text: str | None = None) -> _Tok:
        tok = self.peek()
        want = text or kind
        if tok is None:
            raise self.error(f"expected {want}, got end of line")
        if tok.kind != kind or (text is not None and tok.text != text):
            raise self.error(f"expected {want}, got {tok.text!r}", tok)
        self.i += 1
        return tok

    def keyword(self, key: str) -> _Tok:
        self.take("name", key)
        self.take("op", "=")
        tok = self.peek()
        if tok is None or tok.kind not in ("num", "name"):
            raise self.error(f"expected value for {key}", tok)
        self.i += 1
        return tok

    def done(self):
        tok = self.peek()
        if tok is not None:
            raise self.error(f"unexpected {tok.text!r}", tok)


def _parse_side(ln: _Line, stop: set[str]) -> tuple[dict[str, int], list[tuple[str, _Tok]]]:
    terms: dict[str, int] = {}
    refs = []
    tok = ln.peek()
    if tok is not None and tok.kind == "num" and tok.text == "0":
        ln.i += 1
        return terms, refs
    while True:
        tok = ln.peek()
        coeff = 1
        if tok is not None and tok.kind == "num":
            if not re.fullmatch(r"[0-9]+", tok.text) or int(tok.text) <= 0:
                raise ln.error(f"stoichiometric coefficient must be a positive integer, got {tok.text!r}", tok)
            coeff = int(tok.text)
            ln.i += 1
        name = ln.take("name")
        terms[name.text] = terms.get(name.text, 0) + coeff
        refs.append((name.text, name))
        tok = ln.peek()
        if tok is not None and tok.kind == "op" and tok.text == "+":
            ln.i += 1
            continue
        if tok is None or tok.text in stop or tok.kind == "arrow":
            return terms, refs
        raise ln.error(f"unexpected {tok.text!r}", tok)


def _number(ln: _Line, tok: _Tok) -> float:
    if tok.kind != "num":
        raise ln.error(f"expected a number, got {tok.text!r}", tok)
    return float(tok.text)


def parse_network(text: str) -> ReactionNetwork:
    """Parse the network text format; parameters are substituted into rates."""
    params: dict[str, float] = {}
    species: list[Species] = []
    pending: list[tuple[_Line, str, dict, dict, _Tok, str, list]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        ln = _Line(_tokenize(line, lineno), lineno, len(line))
        head = ln.take("name")
        if head.text == "param":
            name = ln.take("name")
            ln.take("op", "=")
            value = _number(ln, ln.take("num"))
            ln.done()
            if name.text in params:
                raise ln.error(f"duplicate param {name.text}", name)
            params[name.text] = value
        elif head.text == "species":
            name = ln.take("name")
            kind = ln.take("name")
            if kind.text not in (CONTINUOUS, DISCRETE):
                raise ln.error(f"species kind must be discrete or continuous, got {kind.text!r}", kind)
            init_tok = ln.keyword("init")
            init = _number(ln, init_tok)
            ln.done()
            if any(s.name == name.text for s in species):
                raise ln.error(f"duplicate species {name.text}", name)
            if kind.text == DISCRETE and not init.is_integer():
                raise ln.error(f"non-integer init {init_tok.text} for discrete species {name.text}", init_tok)
            species.append(Species(name.text, kind.text, int(init) if kind.text == DISCRETE else init))
        elif head.text == "reaction":
            rid = ln.take("name")
            ln.take("op", ":")
            reactants, refs_l = _parse_side(ln, {"->"})
            ln.take("arrow")
            products, refs_r = _parse_side(ln, {"rate"})
            rate_tok = ln.keyword("rate")
            group = "auto"
            if ln.peek() is not None:
                g = ln.keyword("group")
                if g.text not in GROUPS:
                    raise ln.error(f"group must be auto, diffusion or jump, got {g.text!r}", g)
                group = g.text
            ln.done()
            if not reactants and not products:
                raise ln.error("reaction with two empty sides", rid)
            pending.append((ln, rid.text, reactants, products, rate_tok, group, refs_l + refs_r))
        else:
            raise ln.error(f"unknown statement {head.text!r}", head)

    declared = {s.name for s in species}
    reactions = []
    for ln, rid, reactants, products, rate_tok, group, refs in pending:
        if any(r.id == rid for r in reactions):
            raise NetworkValidationError(f"duplicate reaction id {rid} (line {ln.lineno})")
        for name, tok in refs:
            if name not in declared:
                raise NetworkValidationError(
                    f"undeclared species {name} (line {ln.lineno}, column {tok.col})"
                )
        rate_param = None
        if rate_tok.kind == "name":
            if rate_tok.text not in params:
                raise ln.error(f"unknown parameter {rate_tok.text}", rate_tok)
            rate_param = rate_tok.text
            rate = params[rate_tok.text]
        else:
            rate = float(rate_tok.text)
        if rate < 0:
            raise NetworkValidationError(f"negative rate for reaction {rid}")
        reactions.append(Reaction(rid, reactants, products, rate, group, rate_param))
    return ReactionNetwork(tuple(species), tuple(reactions), params)


def _fmt_side(side: Mapping[str, int]) -> str:
    if not side:
        return "0"
    return " + ".join(name if c == 1 else f"{c} {name}" for name, c in side.items())


def serialize_network(net: ReactionNetwork) -> str:
    lines = [f"param {k}={v!r}" for k, v in net.params.items()]
    for s in net.species:
        init = int(s.init) if s.is_discrete else repr(float(s.init))
        lines.append(f"species {s.name} {s.kind} init={init}")
    for r in net.reactions:
        rate = r.rate_param if r.rate_param is not None else repr(float(r.rate))
        line = f"reaction {r.id}: {_fmt_side(r.reactants)} -> {_fmt_side(r.products)} rate={rate}"
        if r.group != "auto":
            line += f" group={r.group}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def load_network(path) -> ReactionNetwork:
    with open(path, encoding="utf-8") as fh:
        return parse_network(fh.read())


def conservation_laws(net: ReactionNetwork) -> np.ndarray:
    """Basis (rows) of the left null space of the stoichiometry matrix."""
    nu = net.arrays.nu
    if nu.size == 0:
        return np.eye(len(net.species))
    _, s, vt = np.linalg.svd(nu)
    rank = int(np.sum(s > 1e-10 * max(s.max(), 1.0)))
    return vt[rank:]
