"""Markov-chain throughput model of MAC-RSV in a fully connected network.

The chain tracks the number of contending nodes at the start of each frame.
Packets arrive as a Poisson stream at fresh nodes, need a truncated-geometric
number of slots, and leave once the whole packet is reserved.  Every function
here is a pure function of its arguments.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np
from scipy import linalg, stats

from .errors import DomainError, NoConvergence, TruncationError

NMAX_ENV = "MACRSV_NMAX"
TRUNCATION_BOUND = 1e-6
NMAX_CEILING = 4096


@dataclass(frozen=True)
class AnalysisParams:
    """Inputs of the throughput model.

    ``tau`` may be ``math.inf`` for a network with no arrivals.  ``n_max`` of
    ``None`` selects the default truncation (and lets it grow automatically).
    """

    K: int
    N: int
    q: float
    p: float
    T: float
    tau: float
    n_max: int | None = None
    tol: float = 1e-10

    def __post_init__(self):
        if self.K < 1 or self.N < 1:
            raise DomainError("K and N must be >= 1")
        if not 0.0 < self.q < 1.0:
            raise DomainError(f"q must lie in (0, 1), got {self.q}")
        if not 0.0 < self.p <= 1.0:
            raise DomainError(f"p must lie in (0, 1], got {self.p}")
        if self.T <= 0 or self.tau <= 0:
            raise DomainError("T and tau must be positive")
        if self.n_max is not None and self.n_max < self.K:
            raise DomainError("n_max must be >= K")

    @property
    def load(self) -> float:
        """Mean number of arrivals per frame, T/tau."""
        return 0.0 if math.isinf(self.tau) else self.T / self.tau

    @classmethod
    def from_load(cls, K, N, q, p, load, T=1.0, **kw):
        tau = math.inf if load == 0 else T / load
        return cls(K=K, N=N, q=q, p=p, T=T, tau=tau, **kw)


@dataclass
class MarkovModel:
    params: AnalysisParams
    transition: np.ndarray
    stationary: np.ndarray
    truncation_mass: float
    leak: np.ndarray = field(repr=False)
    residual: float = 0.0

    @property
    def n_max(self) -> int:
        return self.transition.shape[0] - 1


def default_n_max(params: AnalysisParams) -> int:
    env = os.environ.get(NMAX_ENV)
    if env:
        return max(int(env), params.K)
    return 8 * math.ceil(params.load) + params.K + 20


# -- packet sizes ----------------------------------------------------------

def packet_length_pmf(q: float, N: int) -> np.ndarray:
    """P[L = l] for l = 1..N (index 0 holds l = 1)."""
    l = np.arange(N, dtype=float)
    return (1.0 - q) / (1.0 - q**N) * q**l


def reserved_slots_pmf(m: int, q: float, N: int) -> np.ndarray:
    """P[R = r] for r = m..N, the sum of m packet sizes conditioned on R <= N.

    Closed form: weights q**r * prod_{i=1}^{m-1} (r - i), built by the ratio
    recurrence w(r+1)/w(r) = q*r/(r-m+1) in log space.
    """
    if m < 1:
        raise DomainError("m must be >= 1")
    if m > N:
        raise DomainError(f"no feasible total for m={m} > N={N}")
    logw = np.empty(N - m + 1)
    logw[0] = 0.0
    lq = math.log(q)
    for idx in range(1, N - m + 1):
        r = m + idx - 1
        logw[idx] = logw[idx - 1] + lq + math.log(r) - math.log(r - m + 1)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def reserved_slots_pmf_convolution(m: int, q: float, N: int) -> np.ndarray:
    """Same distribution as ``reserved_slots_pmf`` by direct m-fold convolution."""
    if m < 1 or m > N:
        raise DomainError(f"m={m} outside 1..N={N}")
    base = np.zeros(N + 1)
    base[1:] = packet_length_pmf(q, N)
    total = np.zeros(N + 1)
    total[0] = 1.0
    for _ in range(m):
        total = np.convolve(total, base)[: N + 1]
    tail = total[m:]
    return tail / tail.sum()


# -- dropouts and single transmissions ------------------------------------

def dropout_prob(r: int, q: float, N: int) -> float:
    """Probability that a waiting packet no longer fits once r slots are taken."""
    if not 0 <= r <= N:
        raise DomainError(f"r={r} outside 0..N={N}")
    return 1.0 - (1.0 - q ** (N - r)) / (1.0 - q**N)


def dropout_pmf(n_c: int, m: int, s: float) -> np.ndarray:
    """Binomial(n_c - m, s) over the number of dropouts."""
    if m > n_c:
        raise DomainError("m must not exceed n_c")
    n = n_c - m
    return stats.binom.pmf(np.arange(n + 1), n, s)


def single_tx_prob(n: int, p: float) -> float:
    """Probability that exactly one of n p-persistent contenders transmits."""
    if n <= 0:
        return 0.0
    return n * p * (1.0 - p) ** (n - 1)


def p_succ(m: int, n_c: int, params: AnalysisParams) -> float:
    """Success probability of an RTS triple after m earlier successes."""
    if m == 0:
        return single_tx_prob(n_c, params.p)
    if m >= n_c or m > params.N:
        return 0.0
    N, q, p = params.N, params.q, params.p
    g = np.array([single_tx_prob(n, p) for n in range(n_c - m + 1)])
    pr = reserved_slots_pmf(m, q, N)
    total = 0.0
    for r, pr_r in zip(range(m, N + 1), pr):
        pd = dropout_pmf(n_c, m, dropout_prob(r, q, N))
        # g(n_c - m - n_d) for n_d = 0..n_c-m is g reversed
        total += pr_r * float(np.dot(g[::-1], pd))
    return total


# -- successes over the K triples -------------------------------------------

def max_successes(n_c: int, params: AnalysisParams) -> int:
    return min(n_c, params.K, params.N)


def successes_pmf(n_c: int, params: AnalysisParams, psucc=None) -> np.ndarray:
    """P[J = j | N_c = n_c] for j = 0..min(n_c, K, N).

    Dynamic program over (triple, successes so far).  ``psucc(m, n_c)`` can
    replace the model's per-triple success probability.
    """
    psucc = psucc or (lambda m, n: p_succ(m, n, params))
    jmax = max_successes(n_c, params)
    ps = [psucc(m, n_c) for m in range(jmax)] + [0.0]
    dist = np.zeros(jmax + 1)
    dist[0] = 1.0
    for _ in range(params.K):
        nxt = dist * (1.0 - np.asarray(ps))
        nxt[1:] += dist[:-1] * np.asarray(ps[:-1])
        dist = nxt
    return dist


def successes_pmf_enumerated(n_c: int, params: AnalysisParams, psucc=None) -> np.ndarray:
    """Success-count pmf summed over every ordered tuple of success positions."""
    psucc = psucc or (lambda m, n: p_succ(m, n, params))
    K = params.K
    jmax = max_successes(n_c, params)
    ps = [psucc(m, n_c) for m in range(jmax + 1)]
    if jmax == n_c or jmax == params.N:
        ps[jmax] = 0.0
    out = np.zeros(jmax + 1)
    out[0] = (1.0 - ps[0]) ** K
    for j in range(1, jmax + 1):
        acc = 0.0
        for h in combinations(range(1, K + 1), j):
            term = 1.0
            prev = 0
            for m, pos in enumerate(h):
                term *= (1.0 - ps[m]) ** (pos - prev - 1) * ps[m]
                prev = pos
            term *= (1.0 - ps[j]) ** (K - prev)
            acc += term
        out[j] = acc
    return out


# -- contender-count chain --------------------------------------------------

def _poisson(load: float, upto: int) -> tuple[np.ndarray, np.ndarray]:
    """Poisson pmf on 0..upto and survival P[X > k] on 0..upto."""
    k = np.arange(upto + 1)
    if load == 0.0:
        pmf = (k == 0).astype(float)
        return pmf, np.zeros(upto + 1)
    return stats.poisson.pmf(k, load), stats.poisson.sf(k, load)


def transition_matrix(params: AnalysisParams, n_max: int | None = None):
    """Row-stochastic matrix over contender counts 0..n_max.

    Arrivals that would push the count past n_max are clamped into the top
    state.  Returns ``(TP, leak)`` where ``leak[i]`` is the mass row i sends
    beyond n_max before clamping.
    """
    n_max = n_max if n_max is not None else (params.n_max or default_n_max(params))
    if n_max < params.K:
        raise DomainError("n_max must be >= K")
    load = params.load
    pois, sf = _poisson(load, n_max + params.K + 1)
    TP = np.zeros((n_max + 1, n_max + 1))
    leak = np.zeros(n_max + 1)
    for i in range(n_max + 1):
        pj = successes_pmf(i, params)
        for k, pk in enumerate(pj):
            if pk == 0.0:
                continue
            base = i - k
            # arrivals a land in state base + a; a <= n_max - base stay exact
            top = n_max - base
            TP[i, base:n_max] += pk * pois[: top]
            tail = pk * (pois[top] + sf[top])
            TP[i, n_max] += tail
            leak[i] += pk * sf[top]
    return TP, leak


def _gth(P: np.ndarray) -> np.ndarray | None:
    """Grassmann-Taksar-Heyman elimination for a row-stochastic matrix."""
    A = P.astype(float).copy()
    n = A.shape[0]
    for k in range(n - 1, 0, -1):
        s = A[k, :k].sum()
        if s <= 0.0:
            return None
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ A[:k, k]
        # keep the partial vector normalized so heavy upper tails cannot overflow
        pi[: k + 1] /= pi[: k + 1].sum()
    return pi


def stationary_distribution(TP: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Exact stationary vector of a row-stochastic matrix (GTH elimination).

    Raises NoConvergence when the chain has no unique stationary law that
    satisfies ``||pi TP - pi||_inf <= tol``.
    """
    pi = _gth(TP)
    if pi is None or not np.all(np.isfinite(pi)):
        raise NoConvergence("chain is reducible; no unique stationary distribution")
    residual = float(np.max(np.abs(pi @ TP - pi)))
    if residual > tol:
        raise NoConvergence(f"stationary residual {residual:.3e} exceeds {tol:.1e}", residual)
    return pi


def quasi_stationary_distribution(TP: np.ndarray, leak: np.ndarray, tol: float = 1e-10,
                                  max_iter: int = 10_000) -> tuple[np.ndarray, float]:
    """Stationary law of the chain conditioned on never leaving 0..n_max.

    ``leak`` is the per-row mass that ``transition_matrix`` clamped into the
    top state.  Returns ``(pi, escape)`` with ``pi Q = (1 - escape) pi`` for
    the killed matrix ``Q``.  When nothing leaks this is the ordinary
    stationary distribution.
    """
    Q = TP.copy()
    Q[:, -1] -= leak
    Q = np.clip(Q, 0.0, None)
    w, vl = linalg.eig(Q.T)
    k = int(np.argmax(w.real))
    pi = np.abs(vl[:, k].real)
    pi /= pi.sum()
    # polish the eigenvector with a few power steps
    for _ in range(max_iter):
        nxt = pi @ Q
        lam = nxt.sum()
        nxt /= lam
        done = np.max(np.abs(nxt - pi)) <= tol * 1e-3
        pi = nxt
        if done:
            break
    lam = float((pi @ Q).sum())
    residual = float(np.max(np.abs(pi @ Q - lam * pi)))
    if residual > tol:
        raise NoConvergence(f"quasi-stationary residual {residual:.3e} exceeds {tol:.1e}", residual)
    return pi, max(0.0, 1.0 - lam)


def markov_model(params: AnalysisParams, bound: float = TRUNCATION_BOUND) -> MarkovModel:
    """Build the truncated chain and its (quasi-)stationary law.

    The contender count is transient for any positive load (the single-RTS
    probability vanishes as contenders pile up), so the chain is solved
    conditioned on staying within ``n_max``; ``truncation_mass`` is the
    per-frame probability of leaving that range.  With ``params.n_max`` unset
    the range doubles while the escape probability keeps dropping.
    """
    fixed = params.n_max is not None or bool(os.environ.get(NMAX_ENV))
    n_max = params.n_max or default_n_max(params)
    previous = None
    while True:
        TP, leak = transition_matrix(params, n_max)
        pi, escape = quasi_stationary_distribution(TP, leak, params.tol)
        if escape <= bound:
            residual = float(np.max(np.abs(pi @ TP - pi)))
            return MarkovModel(replace(params, n_max=n_max), TP, pi, escape, leak, residual)
        stalled = previous is not None and escape > 0.5 * previous
        if fixed or stalled or n_max * 2 > NMAX_CEILING:
            hint = ("raise n_max (env %s)" % NMAX_ENV) if not stalled else \
                "the load exceeds what the contention can drain; lower T/tau"
            raise TruncationError(
                f"contender count leaves 0..{n_max} with probability {escape:.3e} "
                f"per frame (> {bound:.1e}); {hint}",
                truncation_mass=escape, n_max=n_max)
        previous = escape
        n_max *= 2


@dataclass
class Utilization:
    pmf: np.ndarray
    expected_utilization: float
    model: MarkovModel

    @property
    def expected_reserved(self) -> float:
        return float(np.arange(len(self.pmf)) @ self.pmf)


def utilization(params: AnalysisParams, model: MarkovModel | None = None) -> Utilization:
    """Distribution of reserved slots per frame and E[R]/N."""
    model = model or markov_model(params)
    N = params.N
    cond = {j: reserved_slots_pmf(j, params.q, N) for j in range(1, min(params.K, N) + 1)}
    pmf = np.zeros(N + 1)
    for n_c, pi in enumerate(model.stationary):
        if pi == 0.0:
            continue
        pj = successes_pmf(n_c, params)
        pmf[0] += pi * pj[0]
        for j in range(1, len(pj)):
            pmf[j:] += pi * pj[j] * cond[j]
    pmf = np.clip(pmf, 0.0, None)
    pmf /= pmf.sum()
    expected = float(np.arange(N + 1) @ pmf) / N
    return Utilization(pmf, expected, model)
