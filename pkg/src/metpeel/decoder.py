"""Finite Tanner graphs: configuration-model sampling, channel erasures,
and the actual peeling decoder.

The sampler draws one independent uniform socket permutation per edge type
(multi-edges allowed).  The decoder repeatedly pops a degree-1 check node of
a schedule-chosen type, resolves its variable node, and deletes both with
all the variable node's edges.  All randomness is pre-drawn from seeded
numpy generators into a buffer, so outcomes are reproducible bit-for-bit
with or without the JIT.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import product

import numpy as np

from ._kernels import (
    SCHED_CUSTOM,
    SCHED_FIXED,
    SCHED_NATURAL,
    SCHED_PRIORITY,
    SCHED_PROP_E,
    SCHED_UNIFORM,
    njit,
)
from .ensemble import EnsembleError
from .evolution import erasure_vector

__all__ = [
    "SamplingError",
    "SampledGraph",
    "DecoderState",
    "DecodeOutcome",
    "EmpiricalTrajectory",
    "sample_graph",
    "apply_channel",
    "peel",
    "check_stopping_set",
    "expected_one_step",
    "replay_one_step",
    "validate_state",
]

# kernel exit statuses
_DONE = 0  # no degree-1 supply anywhere in the schedule's reach
_MAXITER = 1
_RNG_EXHAUSTED = 2


class SamplingError(EnsembleError):
    """Node counts cannot be rounded to a socket-balanced graph."""


# ---------------------------------------------------------------------------
# Node-count rounding
# ---------------------------------------------------------------------------


def _largest_remainder(ideals):
    """Integer counts summing to round(sum(ideals)), floor + largest fractions."""
    ideals = np.asarray(ideals, dtype=float)
    base = np.floor(ideals).astype(np.int64)
    want = int(round(float(ideals.sum())))
    short = want - int(base.sum())
    if short > 0:
        order = np.argsort(-(ideals - base), kind="stable")
        for k in order[:short]:
            base[k] += 1
    return base


def _socket_sums(counts, degs):
    return (np.asarray(counts, dtype=np.int64)[:, None] * degs).sum(axis=0)


def balanced_node_counts(spec, N, window=3, max_combos=1_000_000):
    """Integer node counts per term with exact per-type socket balance.

    Starts from largest-remainder rounding of N*coef on each side, then
    searches per-term offsets (within ±window, widened once) for the L1-
    closest feasible assignment.  Terms whose ideal count rounds to zero are
    dropped with a warning.
    """
    v_ideal = np.array([float(t.coef) * N for t in spec.vnodes])
    c_ideal = np.array([float(t.coef) * N for t in spec.cnodes])
    v_deg = np.array([t.d for t in spec.vnodes], dtype=np.int64)
    c_deg = np.array([t.d for t in spec.cnodes], dtype=np.int64)

    v_keep = np.array([round(x) >= 1 for x in v_ideal])
    c_keep = np.array([round(x) >= 1 for x in c_ideal])
    for flag, terms, side in ((v_keep, spec.vnodes, "variable"), (c_keep, spec.cnodes, "check")):
        for keep, term in zip(flag, terms):
            if not keep:
                warnings.warn(
                    f"{side} term with coefficient {term.coef} rounds to zero nodes at N={N}; dropped",
                    stacklevel=3,
                )
    if not v_keep.any() or not c_keep.any():
        raise SamplingError(f"N={N} is too small: one side has no nodes at all")

    v_base = _largest_remainder(v_ideal[v_keep])
    c_base = _largest_remainder(c_ideal[c_keep])
    vd = v_deg[v_keep]
    cd = c_deg[c_keep]

    def deficit(vc, cc):
        return _socket_sums(vc, vd) - _socket_sums(cc, cd)

    if not np.any(deficit(v_base, c_base)):
        best = (v_base, c_base)
    else:
        best = None
        for w in (window, window * 2):
            n_terms = len(v_base) + len(c_base)
            if (2 * w + 1) ** n_terms > max_combos:
                break
            best_cost = None
            offsets = range(-w, w + 1)
            for combo in product(offsets, repeat=n_terms):
                vc = v_base + np.array(combo[: len(v_base)], dtype=np.int64)
                cc = c_base + np.array(combo[len(v_base):], dtype=np.int64)
                if np.any(vc < 1) or np.any(cc < 1):
                    continue
                if np.any(deficit(vc, cc)):
                    continue
                cost = float(np.abs(vc - v_ideal[v_keep]).sum() + np.abs(cc - c_ideal[c_keep]).sum())
                if best_cost is None or cost < best_cost - 1e-12:
                    best_cost = cost
                    best = (vc, cc)
            if best is not None:
                break
        if best is None:
            d = deficit(v_base, c_base)
            detail = ", ".join(f"type {i + 1}: {int(v)}" for i, v in enumerate(d) if v)
            raise SamplingError(f"cannot balance sockets at N={N} (per-type deficit: {detail})")

    counts_v = np.zeros(len(spec.vnodes), dtype=np.int64)
    counts_c = np.zeros(len(spec.cnodes), dtype=np.int64)
    counts_v[v_keep] = best[0]
    counts_c[c_keep] = best[1]
    return counts_v, counts_c


# ---------------------------------------------------------------------------
# Graph sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SampledGraph:
    spec: object
    N: int
    seed: int
    counts_v: np.ndarray  # nodes per variable term
    counts_c: np.ndarray  # nodes per check term
    vn_term: np.ndarray  # VN -> variable term index
    cn_term: np.ndarray  # CN -> check term index
    e_vn: np.ndarray  # edge -> VN
    e_cn: np.ndarray  # edge -> CN
    e_type: np.ndarray  # edge -> 0-based edge type
    vn_ptr: np.ndarray
    vn_edges: np.ndarray  # edge ids grouped by VN
    cn_ptr: np.ndarray
    cn_edges: np.ndarray  # edge ids grouped by CN

    @property
    def nv(self):
        return len(self.vn_term)

    @property
    def nc(self):
        return len(self.cn_term)

    @property
    def n_edges(self):
        return len(self.e_vn)

    def sockets_per_type(self):
        return np.bincount(self.e_type, minlength=self.spec.ne).astype(np.int64)


def _csr(owner, n_nodes):
    order = np.argsort(owner, kind="stable")
    ptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.add.at(ptr, owner + 1, 1)
    np.cumsum(ptr, out=ptr)
    return ptr, order.astype(np.int64)


def sample_graph(spec, N, seed):
    """Sample one code from the ensemble at transmitted block length N."""
    if N < 1:
        raise SamplingError("N must be at least 1")
    counts_v, counts_c = balanced_node_counts(spec, N)
    vn_term = np.repeat(np.arange(len(counts_v), dtype=np.int64), counts_v)
    cn_term = np.repeat(np.arange(len(counts_c), dtype=np.int64), counts_c)
    v_deg = np.array([t.d for t in spec.vnodes], dtype=np.int64)
    c_deg = np.array([t.d for t in spec.cnodes], dtype=np.int64)

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    e_vn_parts, e_cn_parts, e_type_parts = [], [], []
    for i in range(spec.ne):
        v_sockets = np.repeat(np.arange(len(vn_term), dtype=np.int64), v_deg[vn_term, i])
        c_sockets = np.repeat(np.arange(len(cn_term), dtype=np.int64), c_deg[cn_term, i])
        if len(v_sockets) != len(c_sockets):
            raise SamplingError(
                f"internal socket mismatch on type {i + 1}: {len(v_sockets)} vs {len(c_sockets)}"
            )
        perm = rng.permutation(len(c_sockets))
        e_vn_parts.append(v_sockets)
        e_cn_parts.append(c_sockets[perm])
        e_type_parts.append(np.full(len(v_sockets), i, dtype=np.int64))
    e_vn = np.concatenate(e_vn_parts)
    e_cn = np.concatenate(e_cn_parts)
    e_type = np.concatenate(e_type_parts)

    vn_ptr, vn_edges = _csr(e_vn, len(vn_term))
    cn_ptr, cn_edges = _csr(e_cn, len(cn_term))
    return SampledGraph(
        spec=spec, N=int(N), seed=int(seed),
        counts_v=counts_v, counts_c=counts_c,
        vn_term=vn_term, cn_term=cn_term,
        e_vn=e_vn, e_cn=e_cn, e_type=e_type,
        vn_ptr=vn_ptr, vn_edges=vn_edges, cn_ptr=cn_ptr, cn_edges=cn_edges,
    )


# ---------------------------------------------------------------------------
# Channel application and decoder state
# ---------------------------------------------------------------------------


def degree_radix(spec):
    """Mixed-radix encoding of residual check degrees into one integer."""
    c_deg = np.array([t.d for t in spec.cnodes], dtype=np.int64)
    radix = c_deg.max(axis=0) + 1
    weights = np.ones(spec.ne, dtype=np.int64)
    for i in range(1, spec.ne):
        weights[i] = weights[i - 1] * radix[i - 1]
    return radix, weights, int(radix.prod())


def decode_code(code, radix):
    out = []
    for r in radix:
        out.append(int(code % r))
        code //= r
    return tuple(out)


@dataclass(eq=False)
class DecoderState:
    """Mutable residual-graph state of one decode trial."""

    graph: SampledGraph
    eps: np.ndarray
    e_alive: np.ndarray  # uint8 per edge
    vn_alive: np.ndarray  # uint8 per VN
    cn_deg: np.ndarray  # (nc, ne) residual degree
    cn_tot: np.ndarray  # (nc,)
    queues: np.ndarray  # (ne, nc) degree-1 CN stacks (lazy invalidation)
    qsize: np.ndarray  # (ne,)
    in_q: np.ndarray  # uint8 per CN
    n_deg1: np.ndarray  # true degree-1 counts per type
    nbd: np.ndarray  # residual VN count per variable term
    m_codes: np.ndarray  # residual CN count per degree code (degree >= 1)
    e_resid: np.ndarray  # residual edges per type
    radix: np.ndarray
    radix_w: np.ndarray
    iterations: int
    n_resid: int

    @property
    def t(self):
        return self.iterations / self.graph.n_edges


def apply_channel(graph, eps, seed):
    """Erase each transmitted variable independently; punctured variables
    (channel exponent on index 0) are always retained.  Returns the initial
    decoder state with degree-1 queues filled."""
    spec = graph.spec
    eps = erasure_vector(spec, eps)
    b = np.array([t.b for t in spec.vnodes], dtype=np.int64)
    retain_p = np.prod(eps[None, :] ** b, axis=1)  # eps^b per term
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    retained = rng.random(graph.nv) < retain_p[graph.vn_term]

    e_alive = retained[graph.e_vn].astype(np.uint8)
    ne = spec.ne
    cn_deg = np.zeros((graph.nc, ne), dtype=np.int64)
    alive_idx = np.nonzero(e_alive)[0]
    np.add.at(cn_deg, (graph.e_cn[alive_idx], graph.e_type[alive_idx]), 1)
    cn_tot = cn_deg.sum(axis=1)

    radix, radix_w, n_codes = degree_radix(spec)
    codes = cn_deg @ radix_w
    live_cn = cn_tot > 0
    m_codes = np.bincount(codes[live_cn], minlength=n_codes).astype(np.int64)

    queues = np.zeros((ne, graph.nc), dtype=np.int64)
    qsize = np.zeros(ne, dtype=np.int64)
    in_q = np.zeros(graph.nc, dtype=np.uint8)
    deg1 = np.nonzero(cn_tot == 1)[0]
    deg1_type = np.argmax(cn_deg[deg1], axis=1) if len(deg1) else np.empty(0, dtype=np.int64)
    for i in range(ne):
        members = deg1[deg1_type == i]
        queues[i, : len(members)] = members
        qsize[i] = len(members)
        in_q[members] = 1
    n_deg1 = qsize.copy()

    nbd = np.bincount(graph.vn_term[retained], minlength=len(spec.vnodes)).astype(np.int64)
    e_resid = np.bincount(graph.e_type[alive_idx], minlength=ne).astype(np.int64)

    return DecoderState(
        graph=graph, eps=eps,
        e_alive=e_alive, vn_alive=retained.astype(np.uint8),
        cn_deg=cn_deg, cn_tot=cn_tot,
        queues=queues, qsize=qsize, in_q=in_q, n_deg1=n_deg1,
        nbd=nbd, m_codes=m_codes, e_resid=e_resid,
        radix=radix, radix_w=radix_w,
        iterations=0, n_resid=int(retained.sum()),
    )


# ---------------------------------------------------------------------------
# Peeling kernel
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _peel_kernel(
    u,
    vn_ptr, vn_edges, e_vn, e_cn, e_type, e_alive,
    cn_ptr, cn_edges,
    vn_term, vn_alive,
    cn_deg, cn_tot,
    queues, qsize, in_q, n_deg1,
    nbd, m_codes, e_resid, radix_w,
    code, order, weights,
    snap_iters, snaps_nbd, snaps_m, snaps_q, snaps_e,
    t_start, max_iters, n_resid_start,
):
    ne = n_deg1.shape[0]
    t_now = t_start
    n_resid = n_resid_start
    ui = 0
    snap_idx = 0
    n_snaps = snap_iters.shape[0]
    status = _DONE
    while True:
        while snap_idx < n_snaps and snap_iters[snap_idx] <= t_now:
            for k in range(nbd.shape[0]):
                snaps_nbd[snap_idx, k] = nbd[k]
            for k in range(m_codes.shape[0]):
                snaps_m[snap_idx, k] = m_codes[k]
            for k in range(ne):
                snaps_q[snap_idx, k] = n_deg1[k]
                snaps_e[snap_idx, k] = e_resid[k]
            snap_idx += 1
        if t_now >= max_iters:
            status = _MAXITER
            break

        # pick an edge type per the schedule, from true degree-1 counts
        chosen = -1
        if code == SCHED_PRIORITY:
            for k in range(order.shape[0]):
                if n_deg1[order[k]] > 0:
                    chosen = order[k]
                    break
        elif code == SCHED_NATURAL:
            tot = 0
            for i in range(ne):
                tot += n_deg1[i]
            if tot > 0:
                if ui >= u.shape[0]:
                    status = _RNG_EXHAUSTED
                    break
                r = u[ui] * tot
                ui += 1
                acc = 0.0
                for i in range(ne):
                    acc += n_deg1[i]
                    if r < acc:
                        chosen = i
                        break
                if chosen < 0:
                    chosen = ne - 1
        elif code == SCHED_UNIFORM:
            k = 0
            for i in range(ne):
                if n_deg1[i] > 0:
                    k += 1
            if k > 0:
                if ui >= u.shape[0]:
                    status = _RNG_EXHAUSTED
                    break
                j = int(u[ui] * k)
                ui += 1
                if j >= k:
                    j = k - 1
                for i in range(ne):
                    if n_deg1[i] > 0:
                        if j == 0:
                            chosen = i
                            break
                        j -= 1
        elif code == SCHED_PROP_E:
            s = 0.0
            for i in range(ne):
                if n_deg1[i] > 0:
                    s += e_resid[i]
            if s > 0.0:
                if ui >= u.shape[0]:
                    status = _RNG_EXHAUSTED
                    break
                r = u[ui] * s
                ui += 1
                acc = 0.0
                for i in range(ne):
                    if n_deg1[i] > 0:
                        acc += e_resid[i]
                        if r < acc:
                            chosen = i
                            break
                if chosen < 0:
                    for i in range(ne - 1, -1, -1):
                        if n_deg1[i] > 0:
                            chosen = i
                            break
        elif code == SCHED_CUSTOM:
            s = 0.0
            for i in range(ne):
                if n_deg1[i] > 0:
                    s += weights[i]
            if s > 0.0:
                if ui >= u.shape[0]:
                    status = _RNG_EXHAUSTED
                    break
                r = u[ui] * s
                ui += 1
                acc = 0.0
                for i in range(ne):
                    if n_deg1[i] > 0:
                        acc += weights[i]
                        if r < acc:
                            chosen = i
                            break
                if chosen < 0:
                    for i in range(ne - 1, -1, -1):
                        if n_deg1[i] > 0:
                            chosen = i
                            break
        else:  # SCHED_FIXED: draw regardless of availability; fail on empty
            if ui >= u.shape[0]:
                status = _RNG_EXHAUSTED
                break
            r = u[ui]
            ui += 1
            acc = 0.0
            pick = -1
            for i in range(ne):
                acc += weights[i]
                if r < acc:
                    pick = i
                    break
            if pick < 0:
                pick = ne - 1
            if n_deg1[pick] > 0:
                chosen = pick
        if chosen < 0:
            status = _DONE
            break

        # pop a uniformly random valid degree-1 CN of the chosen type
        c = -1
        while qsize[chosen] > 0:
            if ui >= u.shape[0]:
                status = _RNG_EXHAUSTED
                break
            j = int(u[ui] * qsize[chosen])
            ui += 1
            if j >= qsize[chosen]:
                j = qsize[chosen] - 1
            cand = queues[chosen, j]
            queues[chosen, j] = queues[chosen, qsize[chosen] - 1]
            qsize[chosen] -= 1
            if in_q[cand] == 1:
                c = cand
                break
        if status == _RNG_EXHAUSTED:
            break
        if c < 0:
            # stale-only queue should be impossible while n_deg1 > 0
            status = _DONE
            break
        in_q[c] = 0
        n_deg1[chosen] -= 1

        # the popped CN has exactly one alive edge; it leads to the VN
        v = -1
        for k in range(cn_ptr[c], cn_ptr[c + 1]):
            g = cn_edges[k]
            if e_alive[g] == 1:
                v = e_vn[g]
                break

        # delete the VN and all its edges
        for k in range(vn_ptr[v], vn_ptr[v + 1]):
            g = vn_edges[k]
            if e_alive[g] == 0:
                continue
            e_alive[g] = 0
            tt = e_type[g]
            c2 = e_cn[g]
            e_resid[tt] -= 1
            code_old = 0
            for i in range(ne):
                code_old += cn_deg[c2, i] * radix_w[i]
            m_codes[code_old] -= 1
            cn_deg[c2, tt] -= 1
            cn_tot[c2] -= 1
            if cn_tot[c2] > 0:
                m_codes[code_old - radix_w[tt]] += 1
                if cn_tot[c2] == 1:
                    t2 = 0
                    for i in range(ne):
                        if cn_deg[c2, i] == 1:
                            t2 = i
                            break
                    queues[t2, qsize[t2]] = c2
                    qsize[t2] += 1
                    in_q[c2] = 1
                    n_deg1[t2] += 1
            else:
                if in_q[c2] == 1:
                    in_q[c2] = 0
                    n_deg1[tt] -= 1
        vn_alive[v] = 0
        nbd[vn_term[v]] -= 1
        n_resid -= 1
        t_now += 1

    # freeze remaining snapshots at the final state
    while snap_idx < n_snaps:
        for k in range(nbd.shape[0]):
            snaps_nbd[snap_idx, k] = nbd[k]
        for k in range(m_codes.shape[0]):
            snaps_m[snap_idx, k] = m_codes[k]
        for k in range(ne):
            snaps_q[snap_idx, k] = n_deg1[k]
            snaps_e[snap_idx, k] = e_resid[k]
        snap_idx += 1
    return t_now, n_resid, status, ui


@dataclass(frozen=True, eq=False)
class EmpiricalTrajectory:
    """Snapshots of integer counts along one decode, taken on an iteration
    grid (time axis t = iterations / total edges)."""

    iters: np.ndarray
    t: np.ndarray
    nbd: np.ndarray  # (S, n_vterms)
    m_codes: np.ndarray  # (S, n_codes)
    deg1: np.ndarray  # (S, ne)
    e_resid: np.ndarray  # (S, ne)
    n_edges: int
    N: int


@dataclass(frozen=True, eq=False)
class DecodeOutcome:
    success: bool
    iterations: int
    residual_vns: np.ndarray
    trajectory: EmpiricalTrajectory | None
    halted_by_schedule: bool  # unreasonable schedules stop with supply left


def _uniform_buffer(state, seed):
    n = state.n_resid + state.graph.nc + 16
    return np.random.default_rng(np.random.SeedSequence(seed)).random(n)


def peel(state, schedule, seed, snap_iters=None, max_iters=None):
    """Run the peeling decoder to completion (mutates ``state``).

    ``snap_iters`` is a sorted iteration grid for trajectory snapshots; the
    final state is frozen into any grid points past the halt.  Reasonable
    schedules halt only when no degree-1 check nodes remain anywhere; the
    fixed-pmf schedule may halt earlier (a failed draw), in which case the
    residual is not necessarily a stopping set.
    """
    graph = state.graph
    ne = graph.spec.ne
    code, order, weights = schedule.encode(ne)
    if snap_iters is None:
        snap_iters = np.empty(0, dtype=np.int64)
    else:
        snap_iters = np.asarray(snap_iters, dtype=np.int64)
    snaps_nbd = np.zeros((len(snap_iters), len(state.nbd)), dtype=np.int64)
    snaps_m = np.zeros((len(snap_iters), len(state.m_codes)), dtype=np.int64)
    snaps_q = np.zeros((len(snap_iters), ne), dtype=np.int64)
    snaps_e = np.zeros((len(snap_iters), ne), dtype=np.int64)
    u = _uniform_buffer(state, seed)
    cap = np.int64(max_iters) if max_iters is not None else np.int64(2**62)
    t_final, n_resid, status, _ = _peel_kernel(
        u,
        graph.vn_ptr, graph.vn_edges, graph.e_vn, graph.e_cn, graph.e_type, state.e_alive,
        graph.cn_ptr, graph.cn_edges,
        graph.vn_term, state.vn_alive,
        state.cn_deg, state.cn_tot,
        state.queues, state.qsize, state.in_q, state.n_deg1,
        state.nbd, state.m_codes, state.e_resid, state.radix_w,
        np.int64(code), order, weights,
        snap_iters, snaps_nbd, snaps_m, snaps_q, snaps_e,
        np.int64(state.iterations), cap, np.int64(state.n_resid),
    )
    if status == _RNG_EXHAUSTED:
        raise RuntimeError("internal error: uniform buffer exhausted")
    state.iterations = int(t_final)
    state.n_resid = int(n_resid)
    traj = None
    if len(snap_iters):
        traj = EmpiricalTrajectory(
            iters=snap_iters,
            t=snap_iters / graph.n_edges,
            nbd=snaps_nbd, m_codes=snaps_m, deg1=snaps_q, e_resid=snaps_e,
            n_edges=graph.n_edges, N=graph.N,
        )
    success = state.n_resid == 0
    residual = np.nonzero(state.vn_alive)[0]
    halted_by_schedule = (
        not success and status == _DONE and bool(state.n_deg1.sum() > 0)
    )
    return DecodeOutcome(
        success=success,
        iterations=state.iterations,
        residual_vns=residual,
        trajectory=traj,
        halted_by_schedule=halted_by_schedule,
    )


def check_stopping_set(graph, vn_set):
    """True iff every check node adjacent to the set sees >= 2 edges from it."""
    members = np.zeros(graph.nv, dtype=bool)
    members[np.asarray(vn_set, dtype=np.int64)] = True
    into = members[graph.e_vn]
    counts = np.bincount(graph.e_cn[into], minlength=graph.nc)
    return not np.any(counts == 1)


# ---------------------------------------------------------------------------
# One-step transition checks (permutation-uniformity consequences)
# ---------------------------------------------------------------------------


def _gamma_from_counts(state, schedule):
    g = schedule.gamma(
        state.n_deg1.astype(float),
        state.e_resid.astype(float),
        state.e_resid > 0,
    )
    if g is None:
        raise RuntimeError("no degree-1 supply at this state")
    return g


def expected_one_step(state, schedule):
    """Exact conditional one-iteration mean changes given the current state.

    Returns (dn, dm): expected change of the per-variable-term counts and of
    the per-degree-code check counts.  Variable-side values are exact
    consequences of socket-permutation uniformity; the check-side transfer
    uses the distinct-neighbor (tree) approximation, accurate to O(1/N).
    """
    spec = state.graph.spec
    ne = spec.ne
    gamma = _gamma_from_counts(state, schedule)
    v_deg = np.array([t.d for t in spec.vnodes], dtype=float)
    n_w = state.nbd.astype(float)
    e_r = state.e_resid.astype(float)

    ratio = np.zeros(ne)
    for i in range(ne):
        if gamma[i] > 0:
            if e_r[i] <= 0:
                raise RuntimeError(f"schedule selects empty type {i + 1}")
            ratio[i] = gamma[i] / e_r[i]
    # P(peeled VN is of term w) and expected deleted edges per type
    p_term = n_w * (v_deg @ ratio)
    dn = -p_term
    atil = v_deg.T @ p_term  # includes the peeled edge

    radix, radix_w, n_codes = degree_radix(spec)
    m = state.m_codes.astype(float)
    dm = np.zeros(n_codes)
    for code in range(1, n_codes):  # code 0 (empty checks) leaves the state
        d = decode_code(code, radix)
        tot = 0.0
        for j in range(ne):
            if e_r[j] <= 0:
                continue
            up = code + radix_w[j]
            valid_up = d[j] + 1 <= radix[j] - 1
            m_up = m[up] if valid_up and up < n_codes else 0.0
            tot += ((d[j] + 1) * m_up - d[j] * m[code]) * (atil[j] - gamma[j]) / e_r[j]
        if sum(d) == 1:
            tot -= gamma[int(np.argmax(np.array(d) > 0))]
        dm[code] = tot
    return dn, dm


def replay_one_step(state, schedule, seed, n_replays):
    """Empirical one-iteration mean changes from a frozen state (read-only).

    Draws the edge type per the schedule pmf, a uniformly random degree-1
    check node of that type, and tallies the count changes the peel would
    make; repeated ``n_replays`` times with fresh randomness.
    """
    graph = state.graph
    spec = graph.spec
    ne = spec.ne
    radix, radix_w, n_codes = degree_radix(spec)
    gamma = _gamma_from_counts(state, schedule)

    by_type = []
    deg1 = np.nonzero(state.cn_tot == 1)[0]
    d1t = np.argmax(state.cn_deg[deg1], axis=1) if len(deg1) else np.empty(0, dtype=np.int64)
    for i in range(ne):
        by_type.append(deg1[d1t == i])
        if len(by_type[i]) != state.n_deg1[i]:
            raise RuntimeError("degree-1 bookkeeping mismatch")

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    sum_dn = np.zeros(len(state.nbd))
    sumsq_dn = np.zeros(len(state.nbd))
    sum_dm = np.zeros(n_codes)
    sumsq_dm = np.zeros(n_codes)
    dn = np.zeros(len(state.nbd))
    dm = np.zeros(n_codes)
    cum = np.cumsum(gamma)
    for _ in range(n_replays):
        dn[:] = 0.0
        dm[:] = 0.0
        i = int(np.searchsorted(cum, rng.random(), side="right"))
        i = min(i, ne - 1)
        pool = by_type[i]
        c = pool[rng.integers(len(pool))]
        v = -1
        for k in range(graph.cn_ptr[c], graph.cn_ptr[c + 1]):
            g = graph.cn_edges[k]
            if state.e_alive[g]:
                v = graph.e_vn[g]
                break
        # simulate deleting v's edges without mutating
        touched = {}
        for k in range(graph.vn_ptr[v], graph.vn_ptr[v + 1]):
            g = graph.vn_edges[k]
            if not state.e_alive[g]:
                continue
            c2 = graph.e_cn[g]
            touched.setdefault(int(c2), []).append(int(graph.e_type[g]))
        for c2, types in touched.items():
            code_old = int(state.cn_deg[c2] @ radix_w)
            code_new = code_old
            for tt in types:
                code_new -= radix_w[tt]
            dm[code_old] -= 1
            if code_new != 0:
                dm[code_new] += 1
        dn[graph.vn_term[v]] -= 1
        sum_dn += dn
        sumsq_dn += dn * dn
        sum_dm += dm
        sumsq_dm += dm * dm
    mean_dn = sum_dn / n_replays
    mean_dm = sum_dm / n_replays
    se_dn = np.sqrt(np.maximum(sumsq_dn / n_replays - mean_dn**2, 0.0) / n_replays)
    se_dm = np.sqrt(np.maximum(sumsq_dm / n_replays - mean_dm**2, 0.0) / n_replays)
    return mean_dn, se_dn, mean_dm, se_dm


# ---------------------------------------------------------------------------
# Invariant validation (used by tests and debug checks)
# ---------------------------------------------------------------------------


def validate_state(state):
    """Recompute every derived count from the edge flags and compare."""
    graph = state.graph
    spec = graph.spec
    alive = state.e_alive.astype(bool)
    # a dead VN has no alive edges; integer edge balance is structural
    assert not np.any(alive & (state.vn_alive[graph.e_vn] == 0))
    cn_deg = np.zeros_like(state.cn_deg)
    idx = np.nonzero(alive)[0]
    np.add.at(cn_deg, (graph.e_cn[idx], graph.e_type[idx]), 1)
    assert np.array_equal(cn_deg, state.cn_deg)
    assert np.array_equal(cn_deg.sum(axis=1), state.cn_tot)
    assert np.array_equal(
        np.bincount(graph.e_type[idx], minlength=spec.ne), state.e_resid
    )
    assert np.array_equal(
        np.bincount(graph.vn_term[state.vn_alive.astype(bool)], minlength=len(state.nbd)),
        state.nbd,
    )
    radix, radix_w, n_codes = degree_radix(spec)
    codes = state.cn_deg @ radix_w
    live = state.cn_tot > 0
    assert np.array_equal(
        np.bincount(codes[live], minlength=n_codes), state.m_codes
    )
    deg1 = state.cn_tot == 1
    for i in range(spec.ne):
        assert int(np.sum(deg1 & (state.cn_deg[:, i] == 1))) == state.n_deg1[i]
    assert int(state.vn_alive.sum()) == state.n_resid
    return True
