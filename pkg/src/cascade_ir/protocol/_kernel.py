"""Compiled core of the reconciliation engine.

All session state lives in the arrays of a :class:`Workspace` so a single
allocation can be reused across many simulated frames.  Conventions:

* pass ``j`` (0-based) lays the still-active positions out in ``order[j]``;
  ``where[j, p]`` is the slot of original position ``p`` (or -1).
* top-level block ``b`` of pass ``j`` covers slots ``[b*k, min((b+1)*k, plen))``.
  Its bisection tree is an implicit heap: node 1 is the block, node ``2v`` the
  first half (``ceil(len/2)`` slots) and ``2v+1`` the second half.
* a registry node is known in the current frame iff ``known[idx] == epoch``.
* a search is identified by its tree index (one search per tree at a time);
  the two BICONF searches use the slots just past the last tree.

Scheduling.  Every round is one bidirectional exchange.  A pass opens with a
round carrying all top-level parities; every odd block then gets a search and
all searches advance one bisection level per round.  A correction that makes
several registered blocks odd queues them as one group and only the smallest
is searched; the rest wait for it and are re-examined afterwards.  Within a
round, searches whose current nodes overlap a smaller stepping node wait.
"""

from __future__ import annotations

from collections import namedtuple

import numba as nb
import numpy as np

from ..channel import nb_random_bits, nb_transmit
from ..rng import (
    STREAM_BICONF,
    nb_derive_seed2,
    nb_splitmix64,
    STREAM_CONSTRAINED,
    pcg_bounded,
    pcg_next,
    pcg_seed,
    shuffle_inplace,
)

Workspace = namedtuple(
    "Workspace",
    [
        "cfg", "ks", "pinfo", "order", "where",
        "known", "apar", "bpar",
        "tree_pass", "tree_odd", "in_cand", "cand", "cgroup", "wait", "pend",
        "srch", "live", "active", "leaves",
        "single", "px", "fy", "bfs", "stepped", "x", "y", "ctl", "seed", "rng", "hist", "ev", "scratch",
    ],
)

# cfg
CFG_N, CFG_T, CFG_REUSE, CFG_SINGLES, CFG_CONSTRAINED, CFG_BICONF_S, CFG_RECORD, CFG_NTREES = range(8)
# pinfo columns
P_K, P_PLEN, P_NBLK, P_TSIZE, P_NODEBASE, P_TREEBASE, P_M, P_SEARCHES = range(8)
# srch columns
S_PASS, S_BLOCK, S_NODE, S_A, S_LEN, S_APAR, S_BPAR, S_REG, S_START_LEN, S_BITS = range(10)
# ctl
(C_M, C_ROUNDS, C_EPOCH, C_NEV, C_FLIPS, C_ERR0, C_CURPASS, C_NACTIVE, C_NCAND,
 C_EVOVER, C_ABORTS, C_REGHITS, C_INFERRED, C_SEARCHES, C_BADFLIPS, C_BICONF_IT,
 C_BICONF_M, C_SINGLES, C_CONSTRAINED_OK, C_WASTE, C_NPEND, C_GROUP, C_BICONF_ON) = range(23)
N_CTL = 24
# hist columns
H_RESIDUAL, H_M, H_ROUNDS, H_PLEN = range(4)
# events: kind, round, pass, block, node, alice, bob, flag, pos
EV_BLOCK, EV_HALF, EV_FLIP, EV_ABORT, EV_SUBSET, EV_START = 1, 2, 3, 4, 5, 6
FLAG_INFERRED, FLAG_SENT, FLAG_REGISTRY = 0, 1, 2

_HALF32 = np.uint64(1 << 31)


def _next_pow2(k: int) -> int:
    p = 1
    while p < k:
        p <<= 1
    return p


def allocate(n: int, ks, reuse: bool, singles: bool, constrained: bool,
             biconf_s: int, record: bool, event_capacity: int = 0) -> Workspace:
    T = len(ks)
    pinfo = np.zeros((T + 1, 8), np.int64)
    node_base = 0
    tree_base = 0
    tree_pass = []
    for j, k in enumerate(ks):
        k = min(int(k), n)
        nblk = -(-n // k)
        tsize = 2 * _next_pow2(k)
        pinfo[j, P_TSIZE] = tsize
        pinfo[j, P_NODEBASE] = node_base
        pinfo[j, P_TREEBASE] = tree_base
        node_base += nblk * tsize
        tree_base += nblk
        tree_pass.extend([j] * nblk)
    ntrees = tree_base
    cfg = np.array([n, T, int(reuse), int(singles), int(constrained), int(biconf_s),
                    int(record), ntrees], np.int64)
    if record and event_capacity <= 0:
        event_capacity = 64 * n + 4096
    return Workspace(
        cfg=cfg,
        ks=np.array([min(int(k), n) for k in ks], np.int64),
        pinfo=pinfo,
        order=np.zeros((T + 1, n), np.int32),
        where=np.full((T + 1, n), -1, np.int32),
        known=np.zeros(node_base, np.int32),
        apar=np.zeros(node_base, np.uint8),
        bpar=np.zeros(node_base, np.uint8),
        tree_pass=np.array(tree_pass, np.int32),
        tree_odd=np.zeros(ntrees, np.int32),
        in_cand=np.zeros(ntrees, np.uint8),
        cand=np.zeros(ntrees, np.int32),
        cgroup=np.zeros(ntrees, np.int64),
        wait=np.zeros(ntrees, np.int64),
        pend=np.zeros(ntrees, np.int32),
        srch=np.zeros((ntrees + 2, 10), np.int64),
        live=np.zeros(ntrees + 2, np.uint8),
        active=np.zeros(ntrees + 2, np.int32),
        leaves=np.zeros(ntrees + 2, np.int64),
        single=np.zeros(n, np.int32),
        px=np.zeros((T + 1, n + 1), np.uint8),
        fy=np.zeros((T + 1, n + 1), np.uint8),
        bfs=np.zeros((3, 2 * n + 2), np.int64),
        stepped=np.zeros((ntrees + 2, 3), np.int64),
        x=np.zeros(n, np.uint8),
        y=np.zeros(n, np.uint8),
        ctl=np.zeros(N_CTL, np.int64),
        seed=np.zeros(1, np.uint64),
        rng=np.zeros(2, np.uint64),
        hist=np.zeros((T + 1, 4), np.int64),
        ev=np.zeros((max(event_capacity, 1), 9), np.int64),
        scratch=np.zeros(n, np.int64),
    )


# Range parities.  Alice's frame never changes, so each layout keeps a prefix
# XOR of it; Bob's bits live in a XOR Fenwick tree kept current by flip().


@nb.njit(cache=True)
def _index_layout(ws, j, plen):
    o = ws.order[j]
    px = ws.px[j]
    fy = ws.fy[j]
    px[0] = 0
    fy[0] = 0
    for t in range(plen):
        px[t + 1] = px[t] ^ ws.x[o[t]]
        fy[t + 1] = ws.y[o[t]]
    for i in range(1, plen + 1):
        parent = i + (i & -i)
        if parent <= plen:
            fy[parent] ^= fy[i]


@nb.njit(cache=True)
def _alice_parity(px, a, length):
    return np.int64(px[a + length] ^ px[a])


@nb.njit(cache=True)
def _bob_prefix(fy, i):
    acc = np.uint8(0)
    while i > 0:
        acc ^= fy[i]
        i -= i & -i
    return acc


@nb.njit(cache=True)
def _bob_parity(fy, a, length):
    return np.int64(_bob_prefix(fy, a + length) ^ _bob_prefix(fy, a))


@nb.njit(cache=True)
def _bob_toggle(fy, plen, slot):
    i = slot + 1
    while i <= plen:
        fy[i] ^= np.uint8(1)
        i += i & -i


# The small helpers below take the arrays they touch rather than the whole
# workspace: handing the full tuple to a non-inlined call costs far more than
# the work they do.


@nb.njit(cache=True)
def _record(cfg, ctl, ev, kind, pas, block, node, alice, bob, flag, pos):
    if cfg[CFG_RECORD] == 0:
        return
    i = ctl[C_NEV]
    if i >= ev.shape[0]:
        ctl[C_EVOVER] = 1
        return
    e = ev[i]
    e[0] = kind
    e[1] = ctl[C_ROUNDS]
    e[2] = pas
    e[3] = block
    e[4] = node
    e[5] = alice
    e[6] = bob
    e[7] = flag
    e[8] = pos
    ctl[C_NEV] = i + 1


# candidate state per tree (in_cand): idle, queued, or waiting on another search
_IDLE, _QUEUED, _WAITING = 0, 1, 2
_RELEASE_GROUP = np.int64(1) << 40


@nb.njit(cache=True)
def _push_cand(in_cand, cand, cgroup, ctl, t, group):
    """Queue tree ``t`` for a search.

    Trees queued under the same ``group`` turned odd through the same event
    and most likely share their error, so only one of them is searched first.
    """
    if in_cand[t] == _IDLE:
        in_cand[t] = _QUEUED
        n = ctl[C_NCAND]
        cand[n] = t
        cgroup[n] = group
        ctl[C_NCAND] = n + 1


@nb.njit(cache=True)
def _register(known, apar, bpar, tree_odd, epoch, t, idx, pa, pb):
    known[idx] = epoch
    apar[idx] = pa
    bpar[idx] = pb
    if pa != pb:
        tree_odd[t] += 1


@nb.njit(cache=True)
def _mark_single(single, ctl, p):
    if single[p] != ctl[C_EPOCH]:
        single[p] = ctl[C_EPOCH]
        ctl[C_SINGLES] += 1


@nb.njit(cache=True)
def begin(ws, seed):
    """Start a new session on the frames currently in ``ws.x`` / ``ws.y``."""
    epoch = ws.ctl[C_EPOCH] + 1
    ws.ctl[:] = 0
    ws.ctl[C_EPOCH] = epoch
    ws.seed[0] = np.uint64(seed)
    err = 0
    for i in range(ws.x.size):
        if ws.x[i] != ws.y[i]:
            err += 1
    ws.ctl[C_ERR0] = err
    ws.hist[:, :] = 0
    ws.live[:] = 0
    ws.pinfo[:, P_M] = 0
    ws.pinfo[:, P_SEARCHES] = 0


# ---------------------------------------------------------------------------
# shuffles


@nb.njit(cache=True)
def _constrained_order(ws, i, plen, k):
    """Random layout where no two positions of a pass-(i-1) block share a pass-i block.

    Greedy: groups in decreasing size, each spread over the bins with the most
    free room (ties broken at random).  Returns False when the geometry is
    infeasible or the greedy runs out of room.
    """
    prev = i - 1
    kp = ws.pinfo[prev, P_K]
    ng = ws.pinfo[prev, P_NBLK]
    nbins = (plen + k - 1) // k
    if nbins < kp:
        return False
    rng = ws.rng
    pcg_seed(rng, ws.seed[0], STREAM_CONSTRAINED + i)
    # bucket active positions by previous block
    gcount = np.zeros(ng, np.int64)
    for t in range(plen):
        p = ws.scratch[t]
        gcount[ws.where[prev, p] // kp] += 1
    gstart = np.zeros(ng + 1, np.int64)
    for g in range(ng):
        gstart[g + 1] = gstart[g] + gcount[g]
    members = np.empty(plen, np.int64)
    fill = gstart[:ng].copy()
    for t in range(plen):
        p = ws.scratch[t]
        g = ws.where[prev, p] // kp
        members[fill[g]] = p
        fill[g] += 1
    # groups by decreasing size, random among equals
    gkey = np.empty(ng, np.int64)
    for g in range(ng):
        gkey[g] = -(gcount[g] << 32) - np.int64(pcg_next(rng))
    gorder = np.argsort(gkey)
    cap = np.full(nbins, k, np.int64)
    cap[nbins - 1] = plen - (nbins - 1) * k
    bin_of = np.empty(plen, np.int64)
    bkey = np.empty(nbins, np.int64)
    for gi in range(ng):
        g = gorder[gi]
        size = gcount[g]
        if size == 0:
            continue
        for b in range(nbins):
            bkey[b] = -(cap[b] << 32) - np.int64(pcg_next(rng))
        border = np.argsort(bkey)
        shuffle_inplace(rng, members[gstart[g]:gstart[g + 1]], size)
        for r in range(size):
            b = border[r]
            if cap[b] <= 0:
                return False
            cap[b] -= 1
            bin_of[gstart[g] + r] = b
    # lay bins out in order, each bin's content shuffled
    bfill = np.zeros(nbins, np.int64)
    for b in range(nbins):
        bfill[b] = b * k
    o = ws.order[i]
    for r in range(plen):
        b = bin_of[r]
        o[bfill[b]] = members[r]
        bfill[b] += 1
    for b in range(nbins):
        lo = b * k
        hi = min(lo + k, plen)
        shuffle_inplace(rng, o[lo:hi], hi - lo)
    return True


# ---------------------------------------------------------------------------
# searches


@nb.njit(cache=True)
def _find_odd(ws, base, a0, L0):
    """Shallowest odd known node below an even root (breadth first)."""
    ep = ws.ctl[C_EPOCH]
    cap = 2 * (L0 + 1)
    qn = ws.bfs[0]
    qa = ws.bfs[1]
    ql = ws.bfs[2]
    head = 0
    tail = 0
    qn[tail] = 1
    qa[tail] = a0
    ql[tail] = L0
    tail += 1
    while head < tail:
        v = qn[head]
        a = qa[head]
        L = ql[head]
        head += 1
        idx = base + v
        if ws.known[idx] != ep:
            continue
        if ws.apar[idx] != ws.bpar[idx]:
            return v, a, L
        if L > 1 and tail + 2 <= cap:
            h = (L + 1) // 2
            qn[tail] = 2 * v
            qa[tail] = a
            ql[tail] = h
            tail += 1
            qn[tail] = 2 * v + 1
            qa[tail] = a + h
            ql[tail] = L - h
            tail += 1
    return 0, 0, 0


@nb.njit(cache=True)
def _start_point(ws, t, force_root):
    """Node where a search of tree ``t`` would begin: the root if odd, else the shallowest odd known node."""
    j = ws.tree_pass[t]
    b = t - ws.pinfo[j, P_TREEBASE]
    k = ws.pinfo[j, P_K]
    base = ws.pinfo[j, P_NODEBASE] + b * ws.pinfo[j, P_TSIZE]
    a = b * k
    L = min(k, ws.pinfo[j, P_PLEN] - a)
    if ws.apar[base + 1] != ws.bpar[base + 1]:
        return 1, a, L
    if force_root:
        return 0, 0, 0
    return _find_odd(ws, base, a, L)


@nb.njit(cache=True)
def _start_search(ws, t, force_root):
    j = ws.tree_pass[t]
    b = t - ws.pinfo[j, P_TREEBASE]
    base = ws.pinfo[j, P_NODEBASE] + b * ws.pinfo[j, P_TSIZE]
    node, a, L = _start_point(ws, t, force_root)
    if node == 0:
        return False
    s = ws.srch[t]
    s[S_PASS] = j
    s[S_BLOCK] = b
    s[S_NODE] = node
    s[S_A] = a
    s[S_LEN] = L
    s[S_APAR] = ws.apar[base + node]
    s[S_BPAR] = ws.bpar[base + node]
    s[S_REG] = 1
    s[S_START_LEN] = L
    s[S_BITS] = 0
    ws.live[t] = 1
    ws.active[ws.ctl[C_NACTIVE]] = t
    ws.ctl[C_NACTIVE] += 1
    ws.pinfo[j, P_SEARCHES] += 1
    ws.ctl[C_SEARCHES] += 1
    _record(ws.cfg, ws.ctl, ws.ev, EV_START, j, b, node, s[S_APAR], s[S_BPAR], 0, -1)
    return True


@nb.njit(cache=True)
def _step(ws, sid):
    """Advance search ``sid`` by one bisection level (one lockstep round)."""
    s = ws.srch[sid]
    j = s[S_PASS]
    b = s[S_BLOCK]
    node = s[S_NODE]
    a = s[S_A]
    L = s[S_LEN]
    apa = s[S_APAR]
    bpa = s[S_BPAR]
    reg = s[S_REG]
    o = ws.order[j]
    h = (L + 1) // 2
    child = 2 * node
    pb = _bob_parity(ws.fy[j], a, h)
    ep = ws.ctl[C_EPOCH]
    from_registry = False
    ci = 0
    t = 0
    if reg == 1:
        t = ws.pinfo[j, P_TREEBASE] + b
        ci = ws.pinfo[j, P_NODEBASE] + b * ws.pinfo[j, P_TSIZE] + child
        if ws.cfg[CFG_REUSE] == 1 and ws.known[ci] == ep:
            from_registry = True
    if from_registry:
        pa = np.int64(ws.apar[ci])
        ws.ctl[C_REGHITS] += 1
        _record(ws.cfg, ws.ctl, ws.ev, EV_HALF, j, b, child, pa, pb, FLAG_REGISTRY, -1)
    else:
        pa = _alice_parity(ws.px[j], a, h)
        ws.ctl[C_M] += 1
        ws.pinfo[j, P_M] += 1
        s[S_BITS] += 1
        _record(ws.cfg, ws.ctl, ws.ev, EV_HALF, j, b, child, pa, pb, FLAG_SENT, -1)
        if reg == 1 and ws.cfg[CFG_REUSE] == 1:
            _register(ws.known, ws.apar, ws.bpar, ws.tree_odd, ws.ctl[C_EPOCH], t, ci, pa, pb)
            _register(ws.known, ws.apar, ws.bpar, ws.tree_odd, ws.ctl[C_EPOCH], t, ci + 1, apa ^ pa, bpa ^ pb)
    ws.ctl[C_INFERRED] += 1
    if ws.cfg[CFG_SINGLES] == 1:
        if h == 1:
            _mark_single(ws.single, ws.ctl, o[a])
        if L - h == 1:
            _mark_single(ws.single, ws.ctl, o[a + h])
    if pa != pb:
        s[S_NODE] = child
        s[S_LEN] = h
        s[S_APAR] = pa
        s[S_BPAR] = pb
    else:
        s[S_NODE] = child + 1
        s[S_A] = a + h
        s[S_LEN] = L - h
        s[S_APAR] = apa ^ pa
        s[S_BPAR] = bpa ^ pb


@nb.njit(cache=True)
def flip(ws, p, correction):
    """Toggle Bob's bit ``p`` and propagate the change through the registry.

    ``correction`` distinguishes a protocol correction from an injected error.
    """
    if correction:
        if ws.x[p] == ws.y[p]:
            ws.ctl[C_BADFLIPS] += 1
        ws.ctl[C_FLIPS] += 1
    else:
        if ws.x[p] == ws.y[p]:
            ws.ctl[C_ERR0] += 1
        else:
            ws.ctl[C_ERR0] -= 1
    ws.y[p] ^= np.uint8(1)
    ep = ws.ctl[C_EPOCH]
    ws.ctl[C_GROUP] += 1
    group = ws.ctl[C_GROUP]
    if ws.ctl[C_BICONF_ON] == 1:
        _bob_toggle(ws.fy[ws.cfg[CFG_T]], ws.cfg[CFG_N], ws.where[ws.cfg[CFG_T], p])
    for j in range(ws.ctl[C_CURPASS]):
        ti = ws.where[j, p]
        if ti < 0:
            continue
        _bob_toggle(ws.fy[j], ws.pinfo[j, P_PLEN], ti)
        k = ws.pinfo[j, P_K]
        b = ti // k
        t = ws.pinfo[j, P_TREEBASE] + b
        base = ws.pinfo[j, P_NODEBASE] + b * ws.pinfo[j, P_TSIZE]
        node = 1
        a = b * k
        L = min(k, ws.pinfo[j, P_PLEN] - a)
        while True:
            idx = base + node
            if ws.known[idx] != ep:
                break
            ws.bpar[idx] ^= np.uint8(1)
            if ws.apar[idx] == ws.bpar[idx]:
                ws.tree_odd[t] -= 1
            else:
                ws.tree_odd[t] += 1
            if L == 1:
                break
            h = (L + 1) // 2
            if ti < a + h:
                node = 2 * node
                L = h
            else:
                node = 2 * node + 1
                a += h
                L -= h
        if ws.live[t] == 1:
            s = ws.srch[t]
            if s[S_A] <= ti < s[S_A] + s[S_LEN]:
                s[S_BPAR] ^= 1
                if s[S_APAR] == s[S_BPAR]:
                    ws.live[t] = 0
                    ws.ctl[C_ABORTS] += 1
                    ws.ctl[C_WASTE] += s[S_BITS]
                    _record(ws.cfg, ws.ctl, ws.ev, EV_ABORT, j, b, s[S_NODE], 0, 0, 0, p)
        if ws.tree_odd[t] > 0 and ws.live[t] == 0:
            _push_cand(ws.in_cand, ws.cand, ws.cgroup, ws.ctl, t, group)


@nb.njit(cache=True)
def _complete(ws, sid):
    s = ws.srch[sid]
    ws.live[sid] = 0
    p = ws.order[s[S_PASS]][s[S_A]]
    if s[S_APAR] == s[S_BPAR]:
        return -1
    _record(ws.cfg, ws.ctl, ws.ev, EV_FLIP, s[S_PASS], s[S_BLOCK], s[S_NODE], s[S_APAR], s[S_BPAR], 0, p)
    flip(ws, p, True)
    return p


@nb.njit(cache=True)
def _release_waiting(ws):
    """Requeue waiting trees whose blocking search has finished."""
    kept = 0
    for i in range(ws.ctl[C_NPEND]):
        t = ws.pend[i]
        blocker = ws.wait[t]
        if ws.live[blocker] == 1:
            ws.pend[kept] = t
            kept += 1
        else:
            ws.in_cand[t] = _IDLE
            if ws.live[t] == 0 and ws.tree_odd[t] > 0:
                _push_cand(ws.in_cand, ws.cand, ws.cgroup, ws.ctl, t, _RELEASE_GROUP + blocker)
    ws.ctl[C_NPEND] = kept


@nb.njit(cache=True)
def _start_queued(ws):
    """Start searches for queued trees, one per group: the smallest odd node wins.

    The other trees of a group wait for the winner to finish; its correction
    usually makes them even, which saves a redundant search.
    """
    nc = ws.ctl[C_NCAND]
    ws.ctl[C_NCAND] = 0
    if nc == 0:
        return
    ts = ws.cand[:nc].copy()
    groups = ws.cgroup[:nc].copy()
    lens = np.empty(nc, np.int64)
    for c in range(nc):
        t = ts[c]
        ws.in_cand[t] = _IDLE
        lens[c] = -1
        if ws.live[t] == 0 and ws.tree_odd[t] > 0:
            node, a, L = _start_point(ws, t, False)
            if node != 0:
                lens[c] = L
    idx = np.argsort(groups, kind="mergesort")
    c0 = 0
    while c0 < nc:
        g = groups[idx[c0]]
        c1 = c0
        best = -1
        while c1 < nc and groups[idx[c1]] == g:
            c = idx[c1]
            if lens[c] >= 0:
                if best < 0 or lens[c] < lens[best] or (lens[c] == lens[best] and ts[c] < ts[best]):
                    best = c
            c1 += 1
        if best >= 0:
            winner = ts[best]
            _start_search(ws, winner, False)
            for r in range(c0, c1):
                c = idx[r]
                t = ts[c]
                if c != best and lens[c] >= 0 and ws.in_cand[t] == _IDLE:
                    ws.in_cand[t] = _WAITING
                    ws.wait[t] = winner
                    ws.pend[ws.ctl[C_NPEND]] = t
                    ws.ctl[C_NPEND] += 1
        c0 = c1


@nb.njit(cache=True)
def _step_disjoint(ws, na):
    """One lockstep level: step live searches, smallest current node first.

    A search whose node shares a position with a smaller node stepped in the
    same round waits: if both were chasing the same error the smaller one
    resolves it first and the larger search is dropped before it discloses
    anything redundant.  Nodes of one pass never overlap, so the check only
    runs when searches of several passes are live.
    """
    first = ws.srch[ws.active[0], S_PASS]
    mixed = False
    for i in range(1, na):
        if ws.srch[ws.active[i], S_PASS] != first:
            mixed = True
            break
    if not mixed:
        for i in range(na):
            _step(ws, ws.active[i])
        return
    keys = np.empty(na, np.int64)
    for i in range(na):
        sid = ws.active[i]
        keys[i] = (ws.srch[sid, S_LEN] << 32) + sid
    idx = np.argsort(keys)
    st = ws.stepped
    nst = 0
    for r in range(na):
        sid = ws.active[idx[r]]
        s = ws.srch[sid]
        jb = s[S_PASS]
        a = s[S_A]
        hi = a + s[S_LEN]
        wb = ws.where[jb]
        clash = False
        for q in range(nst):
            jq = st[q, 0]
            if jq == jb:
                continue
            oq = ws.order[jq]
            for u in range(st[q, 1], st[q, 1] + st[q, 2]):
                w = wb[oq[u]]
                if a <= w < hi:
                    clash = True
                    break
            if clash:
                break
        if clash:
            continue
        st[nst, 0] = jb
        st[nst, 1] = a
        st[nst, 2] = s[S_LEN]
        nst += 1
        _step(ws, sid)


@nb.njit(cache=True)
def drain(ws):
    """Run searches until no registered block has mismatched parities."""
    while True:
        # drop finished or aborted searches before starting new ones, so a
        # tree never appears twice in the active list
        na = 0
        for i in range(ws.ctl[C_NACTIVE]):
            sid = ws.active[i]
            if ws.live[sid] == 1:
                ws.active[na] = sid
                na += 1
        ws.ctl[C_NACTIVE] = na
        _release_waiting(ws)
        _start_queued(ws)
        na = ws.ctl[C_NACTIVE]
        nl = 0
        for i in range(na):
            sid = ws.active[i]
            if ws.srch[sid, S_LEN] == 1:
                ws.leaves[nl] = sid
                nl += 1
        if nl > 0:
            done = np.sort(ws.leaves[:nl])
            for sid in done:
                if ws.live[sid] == 1:
                    _complete(ws, sid)
            continue
        if na == 0:
            break
        ws.ctl[C_ROUNDS] += 1
        _step_disjoint(ws, na)


@nb.njit(cache=True)
def search_alone(ws, j, b):
    """Bisect top-level block ``b`` of pass ``j`` on its own; return the position found.

    No correction is applied.  Returns -1 when the block's parities match.
    """
    t = ws.pinfo[j, P_TREEBASE] + b
    if ws.live[t] == 1 or not _start_search(ws, t, True):
        return -1
    ws.ctl[C_NACTIVE] -= 1
    while ws.srch[t, S_LEN] > 1:
        ws.ctl[C_ROUNDS] += 1
        _step(ws, t)
    ws.live[t] = 0
    return ws.order[j][ws.srch[t, S_A]]


# ---------------------------------------------------------------------------
# passes


@nb.njit(cache=True)
def build_pass(ws, i):
    """Lay out pass ``i`` (shuffle, block geometry, fresh trees) without exchanging parities."""
    n = ws.cfg[CFG_N]
    ep = ws.ctl[C_EPOCH]
    plen = 0
    if ws.cfg[CFG_SINGLES] == 1 and i > 0:
        for p in range(n):
            if ws.single[p] != ep:
                ws.scratch[plen] = p
                plen += 1
    else:
        for p in range(n):
            ws.scratch[p] = p
        plen = n
    if plen == 0:
        ws.scratch[0] = 0
        plen = 1
    k = min(ws.ks[i], plen)
    nblk = (plen + k - 1) // k
    o = ws.order[i]
    placed = False
    if i > 0 and ws.cfg[CFG_CONSTRAINED] == 1:
        placed = _constrained_order(ws, i, plen, k)
        if placed:
            ws.ctl[C_CONSTRAINED_OK] += 1
    if not placed:
        if i > 0:
            pcg_seed(ws.rng, ws.seed[0], i)
            shuffle_inplace(ws.rng, ws.scratch, plen)
        for t in range(plen):
            o[t] = ws.scratch[t]
    w = ws.where[i]
    w[:] = -1
    for t in range(plen):
        w[o[t]] = t
    ws.pinfo[i, P_K] = k
    ws.pinfo[i, P_PLEN] = plen
    ws.pinfo[i, P_NBLK] = nblk
    _index_layout(ws, i, plen)
    tb = ws.pinfo[i, P_TREEBASE]
    for t in range(tb, tb + nblk):
        ws.tree_odd[t] = 0
        ws.live[t] = 0
        ws.in_cand[t] = 0
    ws.ctl[C_CURPASS] = i + 1


@nb.njit(cache=True)
def exchange_pass(ws, i):
    """One round: both parties send the parity of every top-level block of pass ``i``.

    From the second pass on, the last block's parity follows from the total
    parity and is not sent.
    """
    o = ws.order[i]
    k = ws.pinfo[i, P_K]
    plen = ws.pinfo[i, P_PLEN]
    nblk = ws.pinfo[i, P_NBLK]
    tb = ws.pinfo[i, P_TREEBASE]
    nb_ = ws.pinfo[i, P_NODEBASE]
    tsize = ws.pinfo[i, P_TSIZE]
    ws.ctl[C_ROUNDS] += 1
    for b in range(nblk):
        a = b * k
        L = min(k, plen - a)
        pa = _alice_parity(ws.px[i], a, L)
        pb = _bob_parity(ws.fy[i], a, L)
        t = tb + b
        _register(ws.known, ws.apar, ws.bpar, ws.tree_odd, ws.ctl[C_EPOCH], t, nb_ + b * tsize + 1, pa, pb)
        if i > 0 and b == nblk - 1:
            ws.ctl[C_INFERRED] += 1
            _record(ws.cfg, ws.ctl, ws.ev, EV_BLOCK, i, b, 1, pa, pb, FLAG_INFERRED, -1)
        else:
            ws.ctl[C_M] += 1
            ws.pinfo[i, P_M] += 1
            _record(ws.cfg, ws.ctl, ws.ev, EV_BLOCK, i, b, 1, pa, pb, FLAG_SENT, -1)
        if ws.cfg[CFG_SINGLES] == 1 and L == 1:
            _mark_single(ws.single, ws.ctl, o[a])
        if pa != pb:
            _push_cand(ws.in_cand, ws.cand, ws.cgroup, ws.ctl, t, -1 - t)


@nb.njit(cache=True)
def close_pass(ws, i):
    ws.hist[i, H_RESIDUAL] = ws.ctl[C_ERR0] - ws.ctl[C_FLIPS]
    ws.hist[i, H_M] = ws.ctl[C_M]
    ws.hist[i, H_ROUNDS] = ws.ctl[C_ROUNDS]
    ws.hist[i, H_PLEN] = ws.pinfo[i, P_PLEN]


@nb.njit(cache=True)
def run_pass(ws, i):
    build_pass(ws, i)
    exchange_pass(ws, i)
    drain(ws)
    close_pass(ws, i)


@nb.njit(cache=True)
def biconf_iteration(ws, it):
    """One BICONF iteration; returns the number of corrections it made.

    Corrections update the registry but do not trigger backtracking.
    """
    n = ws.cfg[CFG_N]
    slot = ws.cfg[CFG_T]
    o = ws.order[slot]
    rng = ws.rng
    pcg_seed(rng, ws.seed[0], STREAM_BICONF + it)
    s1 = 0
    s2 = 0
    for p in range(n):
        if pcg_next(rng) < _HALF32:
            o[s1] = p
            s1 += 1
        else:
            ws.scratch[s2] = p
            s2 += 1
    for r in range(s2):
        o[s1 + r] = ws.scratch[r]
    ws.pinfo[slot, P_K] = n
    ws.pinfo[slot, P_PLEN] = n
    ws.pinfo[slot, P_NBLK] = 1
    w = ws.where[slot]
    for t in range(n):
        w[o[t]] = t
    _index_layout(ws, slot, n)
    ws.ctl[C_BICONF_ON] = 1
    ws.ctl[C_BICONF_IT] += 1
    ws.ctl[C_ROUNDS] += 1
    pa = _alice_parity(ws.px[slot], 0, s1)
    pb = _bob_parity(ws.fy[slot], 0, s1)
    ta = _alice_parity(ws.px[slot], 0, n)
    tb = _bob_parity(ws.fy[slot], 0, n)
    ws.ctl[C_M] += 1
    ws.ctl[C_BICONF_M] += 1
    ws.pinfo[slot, P_M] += 1
    ws.ctl[C_INFERRED] += 1
    _record(ws.cfg, ws.ctl, ws.ev, EV_SUBSET, slot, 0, 2, pa, pb, FLAG_SENT, it)
    _record(ws.cfg, ws.ctl, ws.ev, EV_SUBSET, slot, 1, 3, ta ^ pa, tb ^ pb, FLAG_INFERRED, it)
    if pa == pb:
        return 0
    base_id = ws.cfg[CFG_NTREES]
    lo = np.array([0, s1])
    ln = np.array([s1, n - s1])
    al = np.array([pa, ta ^ pa])
    bl = np.array([pb, tb ^ pb])
    for r in range(2):
        sid = base_id + r
        if ln[r] > 0 and al[r] != bl[r]:
            s = ws.srch[sid]
            s[S_PASS] = slot
            s[S_BLOCK] = r
            s[S_NODE] = 2 + r
            s[S_A] = lo[r]
            s[S_LEN] = ln[r]
            s[S_APAR] = al[r]
            s[S_BPAR] = bl[r]
            s[S_REG] = 0
            s[S_START_LEN] = ln[r]
            s[S_BITS] = 0
            ws.live[sid] = 1
            ws.ctl[C_SEARCHES] += 1
            ws.pinfo[slot, P_SEARCHES] += 1
            _record(ws.cfg, ws.ctl, ws.ev, EV_START, slot, r, 2 + r, al[r], bl[r], 0, -1)
    fixed = 0
    while True:
        any_live = False
        for r in range(2):
            sid = base_id + r
            if ws.live[sid] == 1 and ws.srch[sid, S_LEN] == 1:
                if _complete(ws, sid) >= 0:
                    fixed += 1
        for r in range(2):
            if ws.live[base_id + r] == 1:
                any_live = True
        if not any_live:
            break
        ws.ctl[C_ROUNDS] += 1
        for r in range(2):
            if ws.live[base_id + r] == 1:
                _step(ws, base_id + r)
    return fixed


@nb.njit(cache=True)
def run_biconf(ws):
    stop = ws.cfg[CFG_BICONF_S]
    clean = 0
    it = 0
    while clean < stop:
        if biconf_iteration(ws, it) > 0:
            clean = 0
        else:
            clean += 1
        it += 1
    slot = ws.cfg[CFG_T]
    ws.hist[slot, H_RESIDUAL] = ws.ctl[C_ERR0] - ws.ctl[C_FLIPS]
    ws.hist[slot, H_M] = ws.ctl[C_M]
    ws.hist[slot, H_ROUNDS] = ws.ctl[C_ROUNDS]
    ws.hist[slot, H_PLEN] = ws.cfg[CFG_N]


@nb.njit(cache=True)
def reconcile_loaded(ws):
    for i in range(ws.cfg[CFG_T]):
        run_pass(ws, i)
    if ws.cfg[CFG_BICONF_S] > 0:
        run_biconf(ws)


@nb.njit(cache=True)
def simulate_batch(ws, master, point, first, count, threshold,
                   out_m, out_rounds, out_resid, out_err0,
                   pass_fail, pass_m, pass_rounds):
    """Generate, corrupt and reconcile ``count`` frames starting at frame index ``first``.

    Frame ``f`` of grid point ``point`` uses seed ``derive_seed(master, point, f)``
    for its frames and ``splitmix64`` of that seed for the protocol, so any
    single frame can be replayed through the Python session API.  Per-pass
    failure counts and sums of ``m`` and rounds are accumulated in place.
    """
    T = ws.cfg[CFG_T]
    last = T + 1 if ws.cfg[CFG_BICONF_S] > 0 else T
    for f in range(count):
        fseed = nb_derive_seed2(master, point, first + f)
        nb_random_bits(ws.x, fseed)
        nb_transmit(ws.x, ws.y, threshold, fseed)
        begin(ws, nb_splitmix64(fseed))
        reconcile_loaded(ws)
        out_m[f] = ws.ctl[C_M]
        out_rounds[f] = ws.ctl[C_ROUNDS]
        out_resid[f] = ws.ctl[C_ERR0] - ws.ctl[C_FLIPS]
        out_err0[f] = ws.ctl[C_ERR0]
        for j in range(last):
            if ws.hist[j, H_RESIDUAL] > 0:
                pass_fail[j] += 1
            pass_m[j] += ws.hist[j, H_M]
            pass_rounds[j] += ws.hist[j, H_ROUNDS]
