"""Continuous generalized HGF networks.

A network holds continuous state nodes and continuous input nodes joined by
value edges (a parent shifts its child's predicted mean) and volatility
edges (a parent scales its child's predicted variance through
exp(kappa * x + omega)). Each time step predicts every state node from the
previous posteriors, then updates nodes from the inputs upward: value
children are folded into an effective Gaussian prior, volatility children
are handled by the classic or the uHGF volatility update.
"""

import csv
import json
import math
from dataclasses import dataclass, field

from .approx import Expansion, Gaussian, NegativePrecision, UpdateDiagnostics, lambert_mode, moment_match
from .energy import EXP_LIMIT, coupling_terms
from .special import softmax, stable_sigmoid

SCHEMA_VERSION = 1
STATE = "state"
INPUT = "input"
VALUE = "value"
VOLATILITY = "volatility"
CLASSIC = "classic"
UHGF = "uhgf"
MODES = (CLASSIC, UHGF)

TRAJECTORY_HEADER = [
    "step", "node", "mu_hat", "pi_hat", "mu", "pi", "b", "x_star", "classic_pi", "flag",
]


class NetworkError(ValueError):
    """Invalid network specification."""


class NonFiniteState(FloatingPointError):
    def __init__(self, node, step, mu, pi):
        self.node, self.step, self.mu, self.pi = node, step, mu, pi
        super().__init__(f"node {node!r} left the finite range at step {step}: mu={mu!r}, pi={pi!r}")


@dataclass
class NodeState:
    mu: float
    pi: float
    mu_hat: float = math.nan
    pi_hat: float = math.nan


@dataclass(frozen=True)
class NodeParams:
    omega: float = 0.0
    rho: float = 0.0
    lambda_auto: float = 1.0


@dataclass(frozen=True)
class Edge:
    parent: str
    child: str
    kind: str
    strength: float = 1.0


@dataclass
class Node:
    id: str
    kind: str
    params: NodeParams = field(default_factory=NodeParams)
    prior: NodeState = None
    variance: float = None  # input nodes only


@dataclass(frozen=True)
class VolatilityChild:
    """What one volatility child contributes to its parent's energy."""

    t: float
    sigma_child_prev: float
    kappa: float
    omega_eff: float
    beta: float

    def y(self, x):
        return math.log(self.t) + self.kappa * x + self.omega_eff


@dataclass(frozen=True)
class VolatilityUpdateInput:
    t: float
    sigma_child_prev: float
    kappa: float
    omega_eff: float
    beta: float
    mu_hat: float
    pi_hat: float

    def __post_init__(self):
        for name in ("t", "sigma_child_prev", "kappa", "beta", "pi_hat"):
            value = getattr(self, name)
            if not (value > 0.0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value}")

    @property
    def child(self):
        return VolatilityChild(self.t, self.sigma_child_prev, self.kappa, self.omega_eff, self.beta)

    @classmethod
    def canonical(cls, alpha, beta, gamma):
        """Full-form input equivalent to canonical parameters (alpha, beta, gamma)."""
        return cls(t=1.0, sigma_child_prev=alpha, kappa=1.0, omega_eff=0.0,
                   beta=beta, mu_hat=gamma, pi_hat=0.5)


@dataclass(frozen=True)
class ValueChild:
    pi_hat: float
    alpha: float
    c: float


# ---------------------------------------------------------------------------
# Full variational energy of a volatility parent
# ---------------------------------------------------------------------------


def energy_I(x, mu_hat, pi_hat, children):
    total = -0.5 * pi_hat * (x - mu_hat) ** 2
    for ch in children:
        c = coupling_terms(ch.y(x), ch.sigma_child_prev, ch.beta)
        total += -0.5 * c.log_d - 0.5 * c.ratio
    return total


def _child_sums(x, children):
    """Sums over children of the gradient term and both curvature terms at x."""
    g = h_full = h_concave = 0.0
    clamped = False
    for ch in children:
        w, delta, _, _, cl = coupling_terms(ch.y(x), ch.sigma_child_prev, ch.beta)
        k2 = 0.5 * ch.kappa * ch.kappa
        g += 0.5 * ch.kappa * w * delta
        h_full += k2 * w * (w + (2.0 * w - 1.0) * delta)
        h_concave += k2 * w * (1.0 - w)
        clamped = clamped or cl
    return g, h_full, h_concave, clamped


def grad_I(x, mu_hat, pi_hat, children):
    return _child_sums(x, children)[0] - pi_hat * (x - mu_hat)


def hess_I(x, mu_hat, pi_hat, children):
    return -_child_sums(x, children)[1] - pi_hat


def hess_concave_I(x, mu_hat, pi_hat, children):
    return -_child_sums(x, children)[2] - pi_hat


def child_mode(mu_hat, pi_hat, ch):
    """Lambert-W mode of one child's energy, in the parent's variable."""
    log_t = math.log(ch.t)
    gamma_c = log_t + ch.kappa * mu_hat + ch.omega_eff
    y_star = lambert_mode(ch.beta, gamma_c, pi_hat / (ch.kappa * ch.kappa))
    return (y_star - log_t - ch.omega_eff) / ch.kappa


# ---------------------------------------------------------------------------
# Single-node update rules
# ---------------------------------------------------------------------------


def volatility_update_classic(inp):
    """Original HGF volatility update; raises ``NegativePrecision``."""
    w, delta, _, _, _ = coupling_terms(inp.child.y(inp.mu_hat), inp.sigma_child_prev, inp.beta)
    pi = inp.pi_hat + 0.5 * inp.kappa * inp.kappa * w * (w + (2.0 * w - 1.0) * delta)
    if not pi > 0.0:
        raise NegativePrecision(pi)
    return Gaussian(inp.mu_hat + inp.kappa * w / (2.0 * pi) * delta, pi)


def volatility_update_classic_multi(mu_hat, pi_hat, children):
    g, h_full, _, _ = _child_sums(mu_hat, children)
    pi = pi_hat + h_full
    if not pi > 0.0:
        raise NegativePrecision(pi)
    return Gaussian(mu_hat + g / pi, pi)


def _energy_or_ninf(x, mu_hat, pi_hat, children):
    if not math.isfinite(x):
        return -math.inf
    return energy_I(x, mu_hat, pi_hat, children)


def volatility_update_uhgf(inp):
    """uHGF volatility update for a parent with one volatility child.

    Returns ``(Gaussian, UpdateDiagnostics)``; precision is always positive.
    """
    ch = inp.child
    k2 = 0.5 * inp.kappa * inp.kappa
    w, delta, _, _, cl1 = coupling_terms(ch.y(inp.mu_hat), inp.sigma_child_prev, inp.beta)
    pi_l1 = inp.pi_hat + k2 * w * (1.0 - w)
    mu_l1 = inp.mu_hat + inp.kappa * w / (2.0 * pi_l1) * delta
    classic_pi = inp.pi_hat + k2 * w * (w + (2.0 * w - 1.0) * delta)

    x_star = child_mode(inp.mu_hat, inp.pi_hat, ch)
    ws, ds, _, _, cl2 = coupling_terms(ch.y(x_star), inp.sigma_child_prev, inp.beta)
    pi_l2 = inp.pi_hat + k2 * ws * (ws + (2.0 * ws - 1.0) * ds)
    fallback = not pi_l2 > 0.0
    if fallback:
        pi_l2 = inp.pi_hat + k2 * ws * (1.0 - ws)
    mu_l2 = x_star + (0.5 * inp.kappa * ws * ds - inp.pi_hat * (x_star - inp.mu_hat)) / pi_l2

    e1 = Expansion(mu_l1, pi_l1, inp.mu_hat, False)
    e2 = Expansion(mu_l2, pi_l2, x_star, fallback)
    i1 = _energy_or_ninf(mu_l1, inp.mu_hat, inp.pi_hat, (ch,))
    i2 = _energy_or_ninf(mu_l2, inp.mu_hat, inp.pi_hat, (ch,))
    if i1 == i2 == -math.inf:
        b, a = 0.0, 1.0
    else:
        b, a = stable_sigmoid(i2 - i1), stable_sigmoid(i1 - i2)
    result = moment_match(e1, e2, b, a)

    diag = UpdateDiagnostics(
        b=b, x_star=x_star, expansions=(e1, e2), classic_pi=classic_pi,
        classic_failed=not classic_pi > 0.0, weights=(a, b),
        x_stars=(x_star,), clamped=cl1 or cl2,
    )
    return result, diag


def volatility_update_multi(mu_hat, pi_hat, children):
    """uHGF update of a parent with one or more volatility children.

    One expansion at the prediction using the concave curvature, plus one
    expansion per child at that child's Lambert-W mode using the curvature
    of the full energy (all children), blended by a softmax over the energy
    at the expansion means and collapsed by moment matching.
    """
    children = tuple(children)
    if not children:
        raise ValueError("volatility_update_multi needs at least one child")
    g, h_full, h_concave, clamped = _child_sums(mu_hat, children)
    pi_l1 = pi_hat + h_concave
    expansions = [Expansion(mu_hat + g / pi_l1, pi_l1, mu_hat, False)]
    classic_pi = pi_hat + h_full

    x_stars = []
    for ch in children:
        x_i = child_mode(mu_hat, pi_hat, ch)
        g, h_full, h_concave, cl = _child_sums(x_i, children)
        clamped = clamped or cl
        pi_i = pi_hat + h_full
        fallback = not pi_i > 0.0
        if fallback:
            pi_i = pi_hat + h_concave
        mu_i = x_i + (g - pi_hat * (x_i - mu_hat)) / pi_i
        expansions.append(Expansion(mu_i, pi_i, x_i, fallback))
        x_stars.append(x_i)

    energies = [_energy_or_ninf(e.mu, mu_hat, pi_hat, children) for e in expansions]
    if all(v == -math.inf for v in energies):
        weights = [1.0] + [0.0] * len(children)
    else:
        weights = softmax(energies)

    mu = math.fsum(b * e.mu for b, e in zip(weights, expansions) if b > 0.0)
    var = math.fsum(
        b * (1.0 / e.pi + (e.mu - mu) ** 2) for b, e in zip(weights, expansions) if b > 0.0
    )
    heaviest = max(range(len(children)), key=lambda i: weights[i + 1])
    diag = UpdateDiagnostics(
        b=math.fsum(weights[1:]), x_star=x_stars[heaviest], expansions=tuple(expansions),
        classic_pi=classic_pi, classic_failed=not classic_pi > 0.0,
        weights=tuple(weights), x_stars=tuple(x_stars), clamped=clamped,
    )
    return Gaussian(mu, 1.0 / var), diag


def absorb_value_children(mu_hat, pi_hat, children, t=1.0):
    """Fold linear value children into an effective Gaussian prior.

    Each child adds ``-1/2 pi_hat_b alpha^2 t^2 (x - c)^2`` to the energy.
    Returns ``(pi_tilde, mu_tilde)``.
    """
    pi_tilde = pi_hat
    pull = 0.0
    for ch in children:
        prec = ch.pi_hat * (ch.alpha * t) ** 2
        pi_tilde += prec
        pull += prec * (ch.c - mu_hat)
    return pi_tilde, mu_hat + pull / pi_tilde


def value_parent_update(parent, child, alpha):
    """Posterior of a value parent from one linearly coupled child.

    ``parent`` carries the prediction (mu_hat, pi_hat); ``child`` its
    posterior mean and its prediction.
    """
    pi = parent.pi_hat + alpha * alpha * child.pi_hat
    mu = parent.mu_hat + alpha * child.pi_hat / pi * (child.mu - child.mu_hat)
    return NodeState(mu, pi, parent.mu_hat, parent.pi_hat)


def input_update(state, u, alpha_u):
    """Update of the observed state node from one continuous observation
    ``u`` with noise variance ``alpha_u``."""
    if not alpha_u > 0.0:
        raise ValueError("input variance must be positive")
    pi_u = 1.0 / alpha_u
    pi = state.pi_hat + pi_u
    mu = state.mu_hat + pi_u / pi * (u - state.mu_hat)
    return NodeState(mu, pi, state.mu_hat, state.pi_hat)


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


class Network:
    """A gHGF graph with its current per-node sufficient statistics."""

    def __init__(self):
        self.nodes = {}
        self.edges = []
        self.states = {}
        self._cache = None

    # construction -------------------------------------------------------

    def add_state(self, id, mu=0.0, pi=1.0, omega=0.0, rho=0.0, lambda_auto=1.0):
        self._new_id(id)
        self.nodes[id] = Node(id, STATE, NodeParams(omega, rho, lambda_auto), NodeState(mu, pi))
        self.states[id] = NodeState(mu, pi)
        self._cache = None
        return self

    def add_input(self, id, variance):
        self._new_id(id)
        self.nodes[id] = Node(id, INPUT, variance=variance)
        self._cache = None
        return self

    def add_edge(self, parent, child, kind, strength=1.0):
        self.edges.append(Edge(parent, child, kind, strength))
        self._cache = None
        return self

    def _new_id(self, id):
        if id in self.nodes:
            raise NetworkError(f"duplicate node id {id!r}")

    # queries --------------------------------------------------------------

    def _structure(self):
        # adjacency lists are rebuilt whenever nodes or edges are added; the
        # filter asks for them several times per node and step
        key = (len(self.nodes), len(self.edges))
        if self._cache is None or self._cache[0] != key:
            by_child, by_parent = {}, {}
            for e in self.edges:
                by_child.setdefault((e.child, e.kind), []).append(e)
                by_parent.setdefault((e.parent, e.kind), []).append(e)
            states = [n for n, node in self.nodes.items() if node.kind == STATE]
            inputs = [n for n, node in self.nodes.items() if node.kind == INPUT]
            self._cache = (key, by_child, by_parent, states, inputs, {})
        return self._cache

    def parents(self, id, kind):
        return list(self._structure()[1].get((id, kind), ()))

    def children(self, id, kind):
        return list(self._structure()[2].get((id, kind), ()))

    @property
    def state_ids(self):
        return list(self._structure()[3])

    @property
    def input_ids(self):
        return list(self._structure()[4])

    def validate(self):
        if not self.input_ids:
            raise NetworkError("network needs at least one input node")
        for node in self.nodes.values():
            if node.kind == STATE:
                p = node.params
                if not all(math.isfinite(v) for v in (p.omega, p.rho, p.lambda_auto)):
                    raise NetworkError(f"node {node.id!r}: parameters must be finite")
                if not (node.prior.pi > 0.0 and math.isfinite(node.prior.mu)):
                    raise NetworkError(f"node {node.id!r}: prior needs finite mu and pi > 0")
            elif node.kind == INPUT:
                if node.variance is None or not node.variance > 0.0:
                    raise NetworkError(f"input {node.id!r}: variance must be positive")
                vp = self.parents(node.id, VALUE)
                if len(vp) != 1 or vp[0].strength != 1.0:
                    raise NetworkError(
                        f"input {node.id!r}: needs exactly one value parent with strength 1"
                    )
                if self.parents(node.id, VOLATILITY):
                    raise NetworkError(f"input {node.id!r}: volatility parents are not supported")
                if self.children(node.id, VALUE) or self.children(node.id, VOLATILITY):
                    raise NetworkError(f"input {node.id!r} cannot be a parent")
            else:
                raise NetworkError(f"node {node.id!r}: unknown kind {node.kind!r}")
        for e in self.edges:
            for end in (e.parent, e.child):
                if end not in self.nodes:
                    raise NetworkError(f"edge {e.parent}->{e.child}: unknown node {end!r}")
            if e.parent == e.child:
                raise NetworkError(f"self-edge on {e.parent!r}")
            if e.kind not in (VALUE, VOLATILITY):
                raise NetworkError(f"edge {e.parent}->{e.child}: unknown kind {e.kind!r}")
            if not math.isfinite(e.strength):
                raise NetworkError(f"edge {e.parent}->{e.child}: strength must be finite")
            if e.kind == VOLATILITY and not e.strength > 0.0:
                raise NetworkError(f"edge {e.parent}->{e.child}: kappa must be > 0")
        pairs = [(e.parent, e.child) for e in self.edges]
        if len(set(pairs)) != len(pairs):
            raise NetworkError("duplicate edge between the same pair of nodes")
        self.update_order()  # raises on cycles
        return self

    def update_order(self):
        """State nodes sorted so every node comes after all of its children."""
        memo = self._structure()[5]
        if "order" not in memo:
            memo["order"] = self._compute_order()
        return list(memo["order"])

    def _compute_order(self):
        height = {i: 0 for i in self.input_ids}
        pending = set(self.state_ids)
        while pending:
            ready = [
                n for n in pending
                if all(e.child in height for e in self.edges if e.parent == n)
            ]
            if not ready:
                raise NetworkError("network graph has a cycle")
            for n in ready:
                kids = [height[e.child] for e in self.edges if e.parent == n]
                height[n] = 1 + max(kids, default=0)
                pending.discard(n)
        states = self.state_ids
        return sorted(states, key=lambda n: (height[n], states.index(n)))

    def reset(self):
        for id, node in self.nodes.items():
            if node.kind == STATE:
                self.states[id] = NodeState(node.prior.mu, node.prior.pi)
        return self

    # serialization ----------------------------------------------------------

    def to_dict(self):
        nodes = []
        for node in self.nodes.values():
            if node.kind == STATE:
                nodes.append({
                    "id": node.id, "kind": STATE,
                    "mu": node.prior.mu, "pi": node.prior.pi,
                    "omega": node.params.omega, "rho": node.params.rho,
                    "lambda": node.params.lambda_auto,
                })
            else:
                nodes.append({"id": node.id, "kind": INPUT, "variance": node.variance})
        edges = [
            {"parent": e.parent, "child": e.child, "kind": e.kind, "strength": e.strength}
            for e in self.edges
        ]
        return {"schema_version": SCHEMA_VERSION, "nodes": nodes, "edges": edges}

    @classmethod
    def from_dict(cls, data):
        try:
            version = data.get("schema_version", SCHEMA_VERSION)
            if version != SCHEMA_VERSION:
                raise NetworkError(f"unsupported network schema_version {version!r}")
            net = cls()
            for nd in data["nodes"]:
                kind = nd.get("kind", STATE)
                if kind == STATE:
                    net.add_state(
                        str(nd["id"]), float(nd.get("mu", 0.0)), float(nd.get("pi", 1.0)),
                        float(nd.get("omega", 0.0)), float(nd.get("rho", 0.0)),
                        float(nd.get("lambda", 1.0)),
                    )
                elif kind == INPUT:
                    net.add_input(str(nd["id"]), float(nd["variance"]))
                else:
                    raise NetworkError(f"unknown node kind {kind!r}")
            for ed in data.get("edges", []):
                net.add_edge(str(ed["parent"]), str(ed["child"]), str(ed["kind"]),
                             float(ed.get("strength", 1.0)))
        except (KeyError, TypeError, AttributeError) as exc:
            raise NetworkError(f"malformed network specification: {exc!r}") from exc
        return net.validate()

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise NetworkError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def two_level_network(omega1, omega2, alpha_u, mu1=0.0, pi1=1.0, mu2=0.0, pi2=1.0, kappa=1.0):
    """The standard continuous two-level HGF: input <- x1 <-(volatility)- x2."""
    net = Network()
    net.add_input("u", alpha_u)
    net.add_state("x1", mu1, pi1, omega=omega1)
    net.add_state("x2", mu2, pi2, omega=omega2)
    net.add_edge("x1", "u", VALUE)
    net.add_edge("x2", "x1", VOLATILITY, kappa)
    return net.validate()


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def predicted_drift(node, network, t):
    """t * (rho + sum_i alpha_i * mu_i) over the node's value parents."""
    rate = network.nodes[node].params.rho
    for e in network.parents(node, VALUE):
        rate += e.strength * network.states[e.parent].mu
    return t * rate


def _log_volatility(node, network, t, exclude=None):
    exponent = network.nodes[node].params.omega
    for e in network.parents(node, VOLATILITY):
        if e.parent != exclude:
            exponent += e.strength * network.states[e.parent].mu
    return exponent


def predicted_volatility(node, network, t, with_flag=False):
    """t * exp(omega + sum_j kappa_j * mu_j) over the volatility parents.

    The log of the result is clamped to +-EXP_LIMIT.
    """
    if not t > 0.0:
        raise ValueError("time step must be positive")
    log_omega = math.log(t) + _log_volatility(node, network, t)
    clamped = abs(log_omega) > EXP_LIMIT
    value = math.exp(max(-EXP_LIMIT, min(EXP_LIMIT, log_omega)))
    return (value, clamped) if with_flag else value


def predict_node(node, network, t):
    params = network.nodes[node].params
    state = network.states[node]
    mu_hat = params.lambda_auto * state.mu + predicted_drift(node, network, t)
    pi_hat = 1.0 / (1.0 / state.pi + predicted_volatility(node, network, t))
    return NodeState(state.mu, state.pi, mu_hat, pi_hat)


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------


@dataclass
class StepRecord:
    step: int
    node: str
    mu_hat: float
    pi_hat: float
    mu: float
    pi: float
    b: float = math.nan
    x_star: float = math.nan
    classic_pi: float = math.nan
    flag: str = ""


@dataclass
class Failure:
    step: int
    node: str
    pi: float
    reason: str = "negative_precision"


@dataclass
class Trajectory:
    mode: str
    node_ids: list
    records: list = field(default_factory=list)
    n_steps: int = 0
    failure: Failure = None
    min_pi: dict = field(default_factory=dict)
    min_pi_hat: dict = field(default_factory=dict)

    @property
    def completed(self):
        return self.failure is None

    def series(self, node, attr="mu"):
        return [getattr(r, attr) for r in self.records if r.node == node]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRAJECTORY_HEADER)
            for r in self.records:
                writer.writerow([r.step, r.node] + [
                    _fmt(getattr(r, k)) for k in TRAJECTORY_HEADER[2:-1]
                ] + [r.flag])


def _fmt(x):
    if isinstance(x, float) and math.isnan(x):
        return ""
    return format(x, ".17g")


def _volatility_children(network, node, t, old):
    out = []
    for e in network.children(node, VOLATILITY):
        child = e.child
        cs = network.states[child]
        omega_eff = network.nodes[child].params.omega
        for other in network.parents(child, VOLATILITY):
            if other.parent != node:
                omega_eff += other.strength * old[other.parent].mu
        beta = 1.0 / cs.pi + (cs.mu - cs.mu_hat) ** 2
        out.append(VolatilityChild(t, 1.0 / old[child].pi, e.strength, omega_eff, beta))
    return out


def _value_children(network, node, t, pred, observations):
    out = []
    for e in network.children(node, VALUE):
        child = network.nodes[e.child]
        if child.kind == INPUT:
            u = observations[e.child]
            out.append(ValueChild(1.0 / child.variance, 1.0, u))
            continue
        coupling = e.strength * t
        if coupling == 0.0:
            continue
        cs = network.states[e.child]
        c = pred.mu_hat + (cs.mu - cs.mu_hat) / coupling
        out.append(ValueChild(cs.pi_hat, coupling, c))
    return out


def _normalize_observations(network, u):
    inputs = network.input_ids
    if isinstance(u, dict):
        missing = set(inputs) - set(u)
        if missing:
            raise ValueError(f"missing observations for inputs {sorted(missing)}")
        return {k: float(u[k]) for k in inputs}
    if len(inputs) != 1:
        raise ValueError("network has several inputs; pass observations as a dict")
    return {inputs[0]: float(u)}


def filter_step(network, u, t, mode, step=0):
    """Advance ``network`` by one observation. Returns a list of StepRecord.

    Raises ``NegativePrecision`` (classic mode) before touching any state.
    """
    if not t > 0.0:
        raise ValueError("time step must be positive")
    observations = _normalize_observations(network, u)
    old = {n: NodeState(s.mu, s.pi) for n, s in network.states.items()}
    new = {}
    clamps = {}
    for n in network.state_ids:
        pred = predict_node(n, network, t)
        clamps[n] = predicted_volatility(n, network, t, with_flag=True)[1]
        new[n] = pred

    records = []
    # posteriors are written into a scratch copy; the network's states only
    # change once the whole step has succeeded
    saved = network.states
    network.states = new
    try:
        for n in network.update_order():
            pred = new[n]
            value_kids = _value_children(network, n, t, pred, observations)
            pi_tilde, mu_tilde = absorb_value_children(pred.mu_hat, pred.pi_hat, value_kids)
            vol_kids = _volatility_children(network, n, t, old)
            b = x_star = classic_pi = math.nan
            flags = []
            if not vol_kids:
                post = Gaussian(mu_tilde, pi_tilde)
            elif mode == CLASSIC:
                try:
                    if len(vol_kids) == 1:
                        ch = vol_kids[0]
                        post = volatility_update_classic(VolatilityUpdateInput(
                            ch.t, ch.sigma_child_prev, ch.kappa, ch.omega_eff, ch.beta,
                            mu_tilde, pi_tilde))
                    else:
                        post = volatility_update_classic_multi(mu_tilde, pi_tilde, vol_kids)
                except NegativePrecision as exc:
                    raise NegativePrecision(exc.pi, node=n, step=step) from None
                classic_pi = post.pi
            else:
                if len(vol_kids) == 1:
                    ch = vol_kids[0]
                    post, diag = volatility_update_uhgf(VolatilityUpdateInput(
                        ch.t, ch.sigma_child_prev, ch.kappa, ch.omega_eff, ch.beta,
                        mu_tilde, pi_tilde))
                else:
                    post, diag = volatility_update_multi(mu_tilde, pi_tilde, vol_kids)
                b, x_star, classic_pi = diag.b, diag.x_star, diag.classic_pi
                if any(e.used_fallback for e in diag.expansions):
                    flags.append("fallback")
                if diag.clamped:
                    flags.append("clamped")
                if diag.classic_failed:
                    flags.append("classic_negative")
            if clamps[n]:
                flags.append("clamped")
            if not (math.isfinite(post.mu) and math.isfinite(post.pi) and post.pi > 0.0):
                raise NonFiniteState(n, step, post.mu, post.pi)
            new[n] = NodeState(post.mu, post.pi, pred.mu_hat, pred.pi_hat)
            records.append(StepRecord(step, n, pred.mu_hat, pred.pi_hat, post.mu, post.pi,
                                      b, x_star, classic_pi, "|".join(dict.fromkeys(flags))))
    except BaseException:
        network.states = saved
        raise
    network.states = new
    order = {n: i for i, n in enumerate(network.state_ids)}
    records.sort(key=lambda r: order[r.node])
    return records


def filter_sequence(network, inputs, mode=UHGF, record=True):
    """Filter a sequence of ``(u, t)`` pairs (or bare ``u`` with t = 1).

    Steps are numbered from 1. In classic mode the first negative
    precision ends the run: the failure is stored on the trajectory and
    the trajectory stops before the failing step. A posterior that leaves
    the finite range ends the run the same way in either mode.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    network.validate()
    network.reset()
    traj = Trajectory(mode, network.state_ids)
    for n in traj.node_ids:
        traj.min_pi[n] = math.inf
        traj.min_pi_hat[n] = math.inf
    for k, item in enumerate(inputs, start=1):
        if isinstance(item, (tuple, list)):
            u, t = item
        else:
            u, t = item, 1.0
        try:
            recs = filter_step(network, u, t, mode, step=k)
        except NegativePrecision as exc:
            traj.failure = Failure(k, exc.node, exc.pi)
            break
        except NonFiniteState as exc:
            traj.failure = Failure(k, exc.node, exc.pi, "non_finite")
            break
        for r in recs:
            traj.min_pi[r.node] = min(traj.min_pi[r.node], r.pi)
            traj.min_pi_hat[r.node] = min(traj.min_pi_hat[r.node], r.pi_hat)
        if record:
            traj.records.extend(recs)
        traj.n_steps = k
    return traj
