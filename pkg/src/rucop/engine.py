"""Compiled solver for the copy-routing MDP, used by the simulation campaigns.

It computes the same optimum as :func:`rucop.core.solve` but organizes the
work differently:

* every state is canonicalized: a copy at the target makes the state worth 1,
  and copies at positions from which the target is unreachable are dropped.
  One run with budget ``K`` therefore solves every budget ``1..K``;
* paths are only generated when they end at the target or at a position that
  can still reach it, and never pass through the target;
* failures are enumerated rule by rule as "first failed hop" branches rather
  than over the whole power set of contacts;
* for states with several carriers, the choices of all carriers but one are
  summarized once (conditioned on the contacts they share with the last
  carrier's paths) and each option of the last carrier is then scored
  against that summary;
* an action is skipped when the sum of its carriers' stand-alone values
  cannot beat the best action found so far;
* several failure-probability scenarios over the same topology are solved in
  one pass.

Each reduction preserves the optimal value; only argmax ties may resolve
differently from the reference solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .contact_model import UncertainContactGraph, validate
from .core import Action, NetworkState, Rule, SolverError

EPS_TIE = 1e-12
# state codes below this bound are indexed through a dense array
DENSE_LIMIT = 1 << 22


def _dense_index(codes: np.ndarray, size: int) -> np.ndarray:
    if size == 0:
        return np.zeros(0, dtype=np.int64)
    dense = np.full(size, -1, dtype=np.int64)
    dense[codes] = np.arange(len(codes))
    return dense


# -- preprocessing ----------------------------------------------------------


def live_positions(g: UncertainContactGraph, target: int) -> np.ndarray:
    """``live[t, n]``: a copy held by ``n`` at the start of slot ``t`` can still reach the target."""
    T, N = g.slot_count, g.node_count
    live = np.zeros((T + 1, N), dtype=np.bool_)
    live[T, target] = True
    for t in range(T - 1, -1, -1):
        reach = set(np.flatnonzero(live[t + 1]).tolist()) | {target}
        preds: dict[int, list[int]] = {}
        for c in g.slot_contacts(t):
            preds.setdefault(c.dst, []).append(c.src)
        stack = list(reach)
        while stack:
            n = stack.pop()
            for p in preds.get(n, ()):
                if p not in reach:
                    reach.add(p)
                    stack.append(p)
        live[t, list(reach)] = True
    return live


def _slot_paths(g: UncertainContactGraph, t: int, target: int, live_next: np.ndarray):
    """Candidate paths per node for slot ``t`` (storage path first when useful)."""
    succ: dict[int, list[int]] = {}
    for c in g.slot_contacts(t):
        succ.setdefault(c.src, []).append(c.dst)
    by_node: dict[int, list[tuple[int, ...]]] = {}
    for u in range(g.node_count):
        if u == target:
            continue
        found = []

        def walk(path):
            end = path[-1]
            if end == target or live_next[end]:
                found.append(path)
            if end == target:
                return
            for w in succ.get(end, ()):
                if w not in path:
                    walk(path + (w,))

        walk((u,))
        by_node[u] = sorted(found)
    return by_node


@dataclass
class _SlotTables:
    paths: list[tuple[int, ...]]
    node_start: np.ndarray  # first path index of each node
    node_count: np.ndarray  # number of paths of each node
    pnodes: np.ndarray
    plen: np.ndarray
    pcont: np.ndarray  # local contact index of each hop
    contact_ids: np.ndarray  # global contact id of each local contact


def _build_slot_tables(g, t, target, live_next) -> _SlotTables:
    by_node = _slot_paths(g, t, target, live_next)
    local = {c.key[:2]: i for i, c in enumerate(g.slot_contacts(t))}
    contact_ids = np.array([g.contact_id(c) for c in g.slot_contacts(t)], dtype=np.int64)
    paths: list[tuple[int, ...]] = []
    start = np.zeros(g.node_count, dtype=np.int64)
    count = np.zeros(g.node_count, dtype=np.int64)
    for u in range(g.node_count):
        start[u] = len(paths)
        ps = by_node.get(u, [])
        count[u] = len(ps)
        paths.extend(ps)
    maxlen = max((len(p) for p in paths), default=1)
    pnodes = np.full((max(len(paths), 1), maxlen), -1, dtype=np.int64)
    pcont = np.full((max(len(paths), 1), max(maxlen - 1, 1)), -1, dtype=np.int64)
    plen = np.zeros(max(len(paths), 1), dtype=np.int64)
    for i, p in enumerate(paths):
        plen[i] = len(p)
        pnodes[i, : len(p)] = p
        for h, hop in enumerate(zip(p, p[1:])):
            pcont[i, h] = local[hop]
    return _SlotTables(paths, start, count, pnodes, plen, pcont, contact_ids)


def _state_codes(live_t: np.ndarray, target: int, K: int) -> np.ndarray:
    """Sorted codes of every distribution of 1..K copies over live non-target nodes."""
    nodes = [n for n in np.flatnonzero(live_t).tolist() if n != target]
    B = K + 1
    codes = []

    def rec(i, left, code):
        if i == len(nodes):
            if left < K:
                codes.append(code)
            return
        for k in range(left + 1):
            rec(i + 1, left - k, code + k * B ** nodes[i])

    rec(0, K, 0)
    return np.array(sorted(codes), dtype=np.int64)


# -- kernels ----------------------------------------------------------------


@njit(cache=True)
def _lookup(code, dense, codes):
    if dense.shape[0] > 0:
        return dense[code]
    return np.searchsorted(codes, code)


@njit(cache=True)
def _scan(rp, rk, nrules, pnodes, plen, pcont, dec, target, out):
    """Follow every rule through decided contacts.

    Returns -2 when some rule reaches the target, -1 when every rule has come
    to rest (``out`` then holds the outcome), or the first undecided contact.
    """
    out[:] = 0
    pending = -1
    for r in range(nrules):
        p = rp[r]
        last = plen[p] - 1
        h = 0
        while h < last and dec[pcont[p, h]] == 0:
            h += 1
        if h == last:
            if pnodes[p, h] == target:
                return -2
            out[pnodes[p, h]] += rk[r]
        elif dec[pcont[p, h]] == 1:
            out[pnodes[p, h]] += rk[r]
        elif pending < 0:
            pending = pcont[p, h]
    return pending


@njit(cache=True)
def _action_value(rp, rk, nrules, pnodes, plen, pcont, dec, pf_loc, live_next, target,
                  dense_next, codes_next, V_next, powB, out, prob, stack, res):
    """Expected next-slot value of one action, accumulated into ``res``.

    Depth-first over the contacts the action actually reaches; ``dec`` holds
    -1 (undecided), 0 (delivered) or 1 (failed) per local contact.
    """
    nscen = prob.shape[1]
    for s in range(nscen):
        prob[0, s] = 1.0
    depth = 0
    while True:
        c = _scan(rp, rk, nrules, pnodes, plen, pcont, dec, target, out)
        descended = False
        if c == -2:
            for s in range(nscen):
                res[s] += prob[depth, s]
        elif c == -1:
            code = 0
            for n in range(out.shape[0]):
                if out[n] > 0 and live_next[n]:
                    code += out[n] * powB[n]
            if code != 0:
                idx = _lookup(code, dense_next, codes_next)
                for s in range(nscen):
                    res[s] += prob[depth, s] * V_next[idx, s]
        else:
            stack[depth] = c
            dec[c] = 1
            nz = False
            for s in range(nscen):
                prob[depth + 1, s] = prob[depth, s] * pf_loc[s, c]
                if prob[depth + 1, s] > 0.0:
                    nz = True
            depth += 1
            if nz:
                continue
            descended = True
        # backtrack to the next unexplored branch
        if not descended and depth == 0:
            return
        while True:
            if depth == 0:
                return
            depth -= 1
            c = stack[depth]
            if dec[c] == 1:
                dec[c] = 0
                nz = False
                for s in range(nscen):
                    prob[depth + 1, s] = prob[depth, s] * (1.0 - pf_loc[s, c])
                    if prob[depth + 1, s] > 0.0:
                        nz = True
                depth += 1
                if nz:
                    break
                continue
            dec[c] = -1


@njit(cache=True)
def _action_dist(rp, rk, nrules, pnodes, plen, pcont, dec, pf_loc, live_next, target, powB,
                 out, prob, stack, dcode, dprob, base, succ):
    """Like :func:`_action_value` but records the outcome distribution.

    Outcomes are written as (code of surviving live copies, probability)
    entries from ``base`` on, merged by code; reaching the target is summed
    into ``succ``.  Returns the number of entries written.
    """
    nscen = prob.shape[1]
    for s in range(nscen):
        prob[0, s] = 1.0
        succ[s] = 0.0
    n_out = 0
    depth = 0
    while True:
        c = _scan(rp, rk, nrules, pnodes, plen, pcont, dec, target, out)
        descended = False
        if c == -2:
            for s in range(nscen):
                succ[s] += prob[depth, s]
        elif c == -1:
            code = 0
            for n in range(out.shape[0]):
                if out[n] > 0 and live_next[n]:
                    code += out[n] * powB[n]
            slot = -1
            for e in range(base, base + n_out):
                if dcode[e] == code:
                    slot = e
                    break
            if slot < 0:
                slot = base + n_out
                n_out += 1
                dcode[slot] = code
                for s in range(nscen):
                    dprob[slot, s] = 0.0
            for s in range(nscen):
                dprob[slot, s] += prob[depth, s]
        else:
            stack[depth] = c
            dec[c] = 1
            nz = False
            for s in range(nscen):
                prob[depth + 1, s] = prob[depth, s] * pf_loc[s, c]
                if prob[depth + 1, s] > 0.0:
                    nz = True
            depth += 1
            if nz:
                continue
            descended = True
        if not descended and depth == 0:
            return n_out
        while True:
            if depth == 0:
                return n_out
            depth -= 1
            c = stack[depth]
            if dec[c] == 1:
                dec[c] = 0
                nz = False
                for s in range(nscen):
                    prob[depth + 1, s] = prob[depth, s] * (1.0 - pf_loc[s, c])
                    if prob[depth + 1, s] > 0.0:
                        nz = True
                depth += 1
                if nz:
                    break
                continue
            dec[c] = -1


@njit(cache=True)
def _multisets(n, k):
    """Non-decreasing index tuples of length k over range(n), lexicographic."""
    total = 1
    for i in range(k):
        total = total * (n + i) // (i + 1)
    outm = np.empty((total, k), dtype=np.int64)
    cur = np.zeros(k, dtype=np.int64)
    row = 0
    while True:
        outm[row] = cur
        row += 1
        i = k - 1
        while i >= 0 and cur[i] == n - 1:
            i -= 1
        if i < 0:
            break
        v = cur[i] + 1
        for j in range(i, k):
            cur[j] = v
    return outm


@njit(cache=True)
def _grow1(a, need):
    if need <= a.shape[0]:
        return a
    b = np.empty(max(need, 2 * a.shape[0]), dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@njit(cache=True)
def _grow2(a, need):
    if need <= a.shape[0]:
        return a
    b = np.empty((max(need, 2 * a.shape[0]), a.shape[1]), dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@njit(cache=True)
def _sender_pool(carrier_nodes, node_start, node_cnt, pnodes, plen, pcont, nlocal, pf_loc,
                 live_next, target, K, dense_next, codes_next, V_next, powB):
    """Outcome distribution of every copy multiset every carrier could send.

    Multisets of carrier ``u`` with ``k`` copies occupy rows
    ``ms_start[u, k] .. ms_start[u, k] + ms_count[u, k]``.  For a row, the
    probability of reaching the target is ``succ`` and the remaining outcomes
    are ``dcode``/``dprob`` pool entries ``doff .. doff + dlen``; ``w`` is the
    row's value when sent alone and ``mask`` the contacts it may use (-1 when
    the slot has too many contacts for a bitmask).
    """
    N = node_start.shape[0]
    nscen = pf_loc.shape[0]
    ms_start = np.zeros((N, K + 1), dtype=np.int64)
    ms_count = np.zeros((N, K + 1), dtype=np.int64)
    total = 0
    for u in carrier_nodes:
        for k in range(1, K + 1):
            n = node_cnt[u]
            c = 1
            for i in range(k):
                c = c * (n + i) // (i + 1)
            ms_start[u, k] = total
            ms_count[u, k] = c
            total += c
    m_rp = np.full((total, K), -1, dtype=np.int64)
    m_rk = np.zeros((total, K), dtype=np.int64)
    m_nr = np.zeros(total, dtype=np.int64)
    m_mask = np.zeros(total, dtype=np.int64)
    m_doff = np.zeros(total, dtype=np.int64)
    m_dlen = np.zeros(total, dtype=np.int64)
    m_succ = np.zeros((total, nscen))
    m_w = np.zeros((total, nscen))
    dcode = np.zeros(1024, dtype=np.int64)
    dprob = np.zeros((1024, nscen))
    used = 0
    dec = np.full(max(nlocal, 1), -1, dtype=np.int8)
    out = np.zeros(N, dtype=np.int64)
    prob = np.zeros((nlocal + 2, nscen))
    stack = np.zeros(nlocal + 2, dtype=np.int64)
    for u in carrier_nodes:
        for k in range(1, K + 1):
            table = _multisets(node_cnt[u], k)
            for row_i in range(table.shape[0]):
                m = ms_start[u, k] + row_i
                row = table[row_i]
                nr = 0
                prev = -1
                cap = 1
                mask = 0
                for x in range(k):
                    pidx = node_start[u] + row[x]
                    if pidx == prev:
                        m_rk[m, nr - 1] += 1
                    else:
                        m_rp[m, nr] = pidx
                        m_rk[m, nr] = 1
                        nr += 1
                        prev = pidx
                        cap *= plen[pidx]
                        for h in range(plen[pidx] - 1):
                            if nlocal <= 62:
                                mask |= np.int64(1) << pcont[pidx, h]
                m_nr[m] = nr
                m_mask[m] = mask if nlocal <= 62 else -1
                dcode = _grow1(dcode, used + cap)
                dprob = _grow2(dprob, used + cap)
                n_out = _action_dist(m_rp[m], m_rk[m], nr, pnodes, plen, pcont, dec, pf_loc,
                                     live_next, target, powB, out, prob, stack,
                                     dcode, dprob, used, m_succ[m])
                m_doff[m] = used
                m_dlen[m] = n_out
                for s in range(nscen):
                    m_w[m, s] = m_succ[m, s]
                for e in range(used, used + n_out):
                    if dcode[e] != 0:
                        idx = _lookup(dcode[e], dense_next, codes_next)
                        for s in range(nscen):
                            m_w[m, s] += dprob[e, s] * V_next[idx, s]
                used += n_out
    return (ms_start, ms_count, m_rp, m_rk, m_nr, m_mask, m_doff, m_dlen, m_succ, m_w,
            dcode[:used].copy(), dprob[:used].copy())


@njit(cache=True)
def _outcome_lists(carrier_nodes, K, ms_start, ms_count, m_doff, m_dlen, dcode, N):
    """Sorted distinct outcome codes of each (carrier, copies) pair, as ragged segments."""
    o_start = np.zeros((N, K + 1), dtype=np.int64)
    o_len = np.zeros((N, K + 1), dtype=np.int64)
    total = 0
    for u in carrier_nodes:
        for k in range(1, K + 1):
            total += 1
            for m in range(ms_start[u, k], ms_start[u, k] + ms_count[u, k]):
                total += m_dlen[m]
    o_codes = np.zeros(total, dtype=np.int64)
    used = 0
    for u in carrier_nodes:
        for k in range(1, K + 1):
            lo = used
            buf = np.empty(1 + _sum_dlen(ms_start[u, k], ms_count[u, k], m_dlen), dtype=np.int64)
            nb = 0
            buf[nb] = 0
            nb += 1
            for m in range(ms_start[u, k], ms_start[u, k] + ms_count[u, k]):
                for e in range(m_doff[m], m_doff[m] + m_dlen[m]):
                    buf[nb] = dcode[e]
                    nb += 1
            buf = np.unique(buf[:nb])
            o_codes[lo: lo + buf.shape[0]] = buf
            o_start[u, k] = lo
            o_len[u, k] = buf.shape[0]
            used += buf.shape[0]
    return o_start, o_len, o_codes[:used].copy()


@njit(cache=True)
def _sum_dlen(start, count, m_dlen):
    t = 0
    for m in range(start, start + count):
        t += m_dlen[m]
    return t


@njit(cache=True)
def _last_sender_value(rp, rk, nrules, pnodes, plen, pcont, dec, pf_loc, live_next, target,
                       powB, out, prob, stack, sh_pos, ns, W, Wt, stamp, gen, pow3,
                       ocodes, res):
    """Walk the last sender's rules against a prefix summarized in ``W``.

    Contacts shared with the prefix (``sh_pos >= 0``) branch without weight:
    their probability is already inside ``W[sigma]``. A leaf adds its weight
    times the sum of ``W`` over every shared assignment consistent with the
    walk, memoized in ``Wt`` per (partial assignment, outcome).
    """
    nscen = prob.shape[1]
    for s in range(nscen):
        prob[0, s] = 1.0
    depth = 0
    while True:
        c = _scan(rp, rk, nrules, pnodes, plen, pcont, dec, target, out)
        descended = False
        if c == -1:
            code = 0
            for n in range(out.shape[0]):
                if out[n] > 0 and live_next[n]:
                    code += out[n] * powB[n]
            oi = np.searchsorted(ocodes, code)
            pa = 0
            fixed = 0
            val = 0
            for j in range(ns):
                d = dec[sh_pos[j]]
                if d >= 0:
                    pa += (d + 1) * pow3[j]
                    fixed |= 1 << j
                    val |= d << j
            if stamp[pa, oi] != gen:
                stamp[pa, oi] = gen
                for s in range(nscen):
                    Wt[pa, oi, s] = 0.0
                for sig in range(1 << ns):
                    if (sig & fixed) == val:
                        for s in range(nscen):
                            Wt[pa, oi, s] += W[sig, oi, s]
            for s in range(nscen):
                res[s] += prob[depth, s] * Wt[pa, oi, s]
        elif c >= 0:
            stack[depth] = c
            dec[c] = 1
            shared = False
            for j in range(ns):
                if sh_pos[j] == c:
                    shared = True
            nz = False
            for s in range(nscen):
                w = 1.0 if shared else pf_loc[s, c]
                prob[depth + 1, s] = prob[depth, s] * w
                if prob[depth + 1, s] > 0.0:
                    nz = True
            depth += 1
            if nz:
                continue
            descended = True
        if not descended and depth == 0:
            return
        while True:
            if depth == 0:
                return
            depth -= 1
            c = stack[depth]
            if dec[c] == 1:
                dec[c] = 0
                shared = False
                for j in range(ns):
                    if sh_pos[j] == c:
                        shared = True
                nz = False
                for s in range(nscen):
                    w = 1.0 if shared else 1.0 - pf_loc[s, c]
                    prob[depth + 1, s] = prob[depth, s] * w
                    if prob[depth + 1, s] > 0.0:
                        nz = True
                depth += 1
                if nz:
                    break
                continue
            dec[c] = -1


MAX_SHARED = 7


@njit(cache=True)
def _solve_slot(codes, carrier_nodes, dense_next, codes_next, V_next, node_start, node_cnt,
                pnodes, plen, pcont, nlocal, pf_loc, live_next, target, K, B, powB,
                use_bound, factor):
    nstates = codes.shape[0]
    nscen = pf_loc.shape[0]
    N = node_start.shape[0]
    (ms_start, ms_count, m_rp, m_rk, m_nr, m_mask, m_doff, m_dlen, m_succ, m_w,
     dcode, dprob) = _sender_pool(carrier_nodes, node_start, node_cnt, pnodes, plen, pcont,
                                  nlocal, pf_loc, live_next, target, K, dense_next,
                                  codes_next, V_next, powB)
    o_start, o_len, o_codes = _outcome_lists(carrier_nodes, K, ms_start, ms_count, m_doff,
                                             m_dlen, dcode, N)
    # contacts any multiset of a carrier may use
    umask = np.zeros(N, dtype=np.int64)
    for u in carrier_nodes:
        for m in range(ms_start[u, 1], ms_start[u, 1] + ms_count[u, 1]):
            if m_mask[m] < 0:
                umask[u] = -1
                break
            umask[u] |= m_mask[m]
    maxo = 1
    for u in carrier_nodes:
        for k in range(1, K + 1):
            if o_len[u, k] > maxo:
                maxo = o_len[u, k]
    V = np.zeros((nstates, nscen))
    best_p = np.full((nstates, nscen, K), -1, dtype=np.int64)
    best_k = np.zeros((nstates, nscen, K), dtype=np.int64)
    dec = np.full(max(nlocal, 1), -1, dtype=np.int8)
    out = np.zeros(N, dtype=np.int64)
    rp = np.empty(K, dtype=np.int64)
    rk = np.empty(K, dtype=np.int64)
    res = np.zeros(nscen)
    prob = np.zeros((nlocal + 2, nscen))
    stack = np.zeros(nlocal + 2, dtype=np.int64)
    sel = np.zeros(K, dtype=np.int64)
    lo = np.zeros(K, dtype=np.int64)
    hi = np.zeros(K, dtype=np.int64)
    cu = np.zeros(K, dtype=np.int64)
    ck = np.zeros(K, dtype=np.int64)
    stats = np.zeros(4, dtype=np.int64)  # single, factored, joint walk, pruned
    best = np.zeros(nscen)
    best_cost = np.zeros(nscen, dtype=np.int64)
    # copy-hops of each multiset: among equal values the cheaper action wins
    m_cost = np.zeros(m_nr.shape[0], dtype=np.int64)
    for m in range(m_nr.shape[0]):
        for r in range(m_nr[m]):
            m_cost[m] += m_rk[m, r] * (plen[m_rp[m, r]] - 1)
    pow3 = np.ones(MAX_SHARED + 1, dtype=np.int64)
    for j in range(1, MAX_SHARED + 1):
        pow3[j] = 3 * pow3[j - 1]
    W = np.zeros((1 << MAX_SHARED, maxo, nscen))
    Wt = np.zeros((pow3[MAX_SHARED], maxo, nscen))
    stamp = np.zeros((pow3[MAX_SHARED], maxo), dtype=np.int64)
    gen = 0
    sh_pos = np.zeros(MAX_SHARED, dtype=np.int64)
    psig = np.zeros(nscen)
    pcap = 1
    for p in range(plen.shape[0]):
        if plen[p] > pcap:
            pcap = plen[p]
    pcap = pcap ** K + 1
    pcode = np.zeros(pcap, dtype=np.int64)
    pprob = np.zeros((pcap, nscen))
    psucc = np.zeros(nscen)
    for i in range(nstates):
        code = codes[i]
        nc = 0
        for n in range(N):
            q = (code // powB[n]) % B
            if q > 0:
                cu[nc] = n
                ck[nc] = q
                nc += 1
        # the carrier with the most multisets goes last (innermost loop)
        last = 0
        for j in range(nc):
            if ms_count[cu[j], ck[j]] > ms_count[cu[last], ck[last]]:
                last = j
        tu = cu[last]
        tk = ck[last]
        cu[last] = cu[nc - 1]
        ck[last] = ck[nc - 1]
        cu[nc - 1] = tu
        ck[nc - 1] = tk
        for j in range(nc):
            lo[j] = ms_start[cu[j], ck[j]]
            hi[j] = lo[j] + ms_count[cu[j], ck[j]]
            sel[j] = lo[j]
        for s in range(nscen):
            best[s] = -1.0
        uL = cu[nc - 1]
        kL = ck[nc - 1]
        ocodes = o_codes[o_start[uL, kL]: o_start[uL, kL] + o_len[uL, kL]]
        no = ocodes.shape[0]
        while True:
            # one prefix (first nc-1 carriers) against every multiset of the last one
            prefix_ok = False
            ns = 0
            if nc > 1 and factor:
                pm = 0
                prefix_ok = umask[uL] >= 0
                for j in range(nc - 1):
                    if m_mask[sel[j]] < 0:
                        prefix_ok = False
                    pm |= m_mask[sel[j]]
                if prefix_ok:
                    sh = pm & umask[uL]
                    while sh != 0 and ns <= MAX_SHARED:
                        low = sh & -sh
                        if ns < MAX_SHARED:
                            sh_pos[ns] = np.int64(np.log2(low) + 0.5)
                        ns += 1
                        sh ^= low
                    if ns > MAX_SHARED:
                        prefix_ok = False
            if prefix_ok:
                gen += 1
                nr = 0
                for j in range(nc - 1):
                    m = sel[j]
                    for r in range(m_nr[m]):
                        rp[nr] = m_rp[m, r]
                        rk[nr] = m_rk[m, r]
                        nr += 1
                for sig in range(1 << ns):
                    nzs = False
                    for s in range(nscen):
                        psig[s] = 1.0
                    for j in range(ns):
                        c = sh_pos[j]
                        failed = (sig >> j) & 1
                        dec[c] = 1 if failed else 0
                        for s in range(nscen):
                            psig[s] *= pf_loc[s, c] if failed else 1.0 - pf_loc[s, c]
                    for s in range(nscen):
                        if psig[s] > 0.0:
                            nzs = True
                    if not nzs:
                        for oi in range(no):
                            for s in range(nscen):
                                W[sig, oi, s] = 0.0
                        continue
                    npo = _action_dist(rp, rk, nr, pnodes, plen, pcont, dec, pf_loc,
                                       live_next, target, powB, out, prob, stack,
                                       pcode, pprob, 0, psucc)
                    for oi in range(no):
                        oc = ocodes[oi]
                        for s in range(nscen):
                            W[sig, oi, s] = psucc[s]
                        for e in range(npo):
                            cc = pcode[e] + oc
                            if cc != 0:
                                idx = _lookup(cc, dense_next, codes_next)
                                for s in range(nscen):
                                    W[sig, oi, s] += pprob[e, s] * V_next[idx, s]
                        for s in range(nscen):
                            W[sig, oi, s] *= psig[s]
                for j in range(ns):
                    dec[sh_pos[j]] = -1
            # inner loop over the last carrier's multisets
            for mL in range(lo[nc - 1], hi[nc - 1]):
                sel[nc - 1] = mL
                cost = 0
                for j in range(nc):
                    cost += m_cost[sel[j]]
                skip = False
                if use_bound and nc > 1:
                    skip = True
                    for s in range(nscen):
                        ub = 0.0
                        for j in range(nc):
                            ub += m_w[sel[j], s]
                        if ub > 1.0:
                            ub = 1.0
                        if ub > best[s] + EPS_TIE or (ub >= best[s] - EPS_TIE
                                                      and cost < best_cost[s]):
                            skip = False
                            break
                if skip:
                    stats[3] += 1
                    continue
                if nc == 1:
                    stats[0] += 1
                    for s in range(nscen):
                        res[s] = m_w[mL, s]
                elif prefix_ok:
                    stats[1] += 1
                    for s in range(nscen):
                        res[s] = 0.0
                    _last_sender_value(m_rp[mL], m_rk[mL], m_nr[mL], pnodes, plen, pcont, dec,
                                       pf_loc, live_next, target, powB, out, prob, stack,
                                       sh_pos, ns, W, Wt, stamp, gen, pow3, ocodes, res)
                    for s in range(nscen):
                        res[s] += m_succ[mL, s]
                else:
                    stats[2] += 1
                    nr = 0
                    for j in range(nc):
                        m = sel[j]
                        for r in range(m_nr[m]):
                            rp[nr] = m_rp[m, r]
                            rk[nr] = m_rk[m, r]
                            nr += 1
                    for s in range(nscen):
                        res[s] = 0.0
                    _action_value(rp, rk, nr, pnodes, plen, pcont, dec, pf_loc,
                                  live_next, target, dense_next, codes_next, V_next,
                                  powB, out, prob, stack, res)
                for s in range(nscen):
                    if res[s] > best[s] + EPS_TIE or (res[s] >= best[s] - EPS_TIE
                                                      and cost < best_cost[s]):
                        best[s] = res[s]
                        best_cost[s] = cost
                        r = 0
                        for j in range(nc):
                            m = sel[j]
                            for x in range(m_nr[m]):
                                best_p[i, s, r] = m_rp[m, x]
                                best_k[i, s, r] = m_rk[m, x]
                                r += 1
                        while r < K:
                            best_p[i, s, r] = -1
                            best_k[i, s, r] = 0
                            r += 1
            # advance the prefix odometer
            j = nc - 2
            while j >= 0:
                sel[j] += 1
                if sel[j] < hi[j]:
                    break
                sel[j] = lo[j]
                j -= 1
            if j < 0:
                break
        for s in range(nscen):
            V[i, s] = best[s] if best[s] > 0.0 else 0.0
    return V, best_p, best_k, stats


# -- driver -----------------------------------------------------------------


@dataclass
class _SlotResult:
    codes: np.ndarray
    V: np.ndarray
    best_p: np.ndarray
    best_k: np.ndarray
    tables: _SlotTables


class CompiledSolution:
    """Optimal values and actions for every copy budget up to ``max_copies``.

    Scenario ``s`` uses the failure probabilities of row ``s`` of the pf
    matrix given to :func:`solve_compiled`.
    """

    def __init__(self, graph, target, max_copies, live, slots, pf_matrix, stats):
        self.graph = graph
        self.target = target
        self.max_copies = max_copies
        self.live = live
        self.slots: list[_SlotResult] = slots
        self.pf_matrix = pf_matrix
        self.stats = stats
        self._B = max_copies + 1

    @property
    def scenario_count(self) -> int:
        return self.pf_matrix.shape[0]

    def policy(self, scenario: int = 0) -> "CompiledPolicy":
        return CompiledPolicy(self, scenario)

    def _encode(self, copies, slot):
        """Split ``copies`` into (code of live part, delivered?)."""
        if copies[self.target] > 0:
            return 0, True
        live = self.live[slot]
        code = 0
        for n, k in enumerate(copies):
            if k and live[n]:
                code += k * self._B ** n
        return code, False

    def _lookup(self, copies, slot):
        code, done = self._encode(copies, slot)
        if done or code == 0 or slot >= self.graph.slot_count:
            return code, done, -1
        sr = self.slots[slot]
        idx = int(np.searchsorted(sr.codes, code))
        return code, done, idx


class CompiledPolicy:
    """Single-scenario view with the same lookups as :class:`rucop.core.Solution`."""

    def __init__(self, sol: CompiledSolution, scenario: int):
        self.sol = sol
        self.scenario = scenario
        self.graph = sol.graph
        self.target = sol.target
        self.num_copies = sol.max_copies

    def value(self, s: NetworkState) -> float:
        if sum(s.copies) > self.sol.max_copies:
            raise SolverError("state holds more copies than the solved budget")
        if s.copies[self.target] > 0:
            return 1.0
        if s.slot >= self.graph.slot_count:
            return 0.0
        code, _, idx = self.sol._lookup(s.copies, s.slot)
        if code == 0:
            return 0.0
        return float(self.sol.slots[s.slot].V[idx, self.scenario])

    pr = value

    def is_explored(self, s: NetworkState) -> bool:
        if s.copies[self.target] > 0:
            return True
        if s.slot >= self.graph.slot_count:
            return False
        code, _, _ = self.sol._lookup(s.copies, s.slot)
        return code != 0

    def sdp_from(self, source: int, slot: int = 0, copies: int | None = None) -> float:
        k = self.sol.max_copies if copies is None else copies
        return self.value(NetworkState.single(self.graph.node_count, source, k, slot))

    def best_action(self, s: NetworkState) -> Action | None:
        """Optimal action; copies that are delivered or stranded are kept in place."""
        if s.slot >= self.graph.slot_count:
            return None
        code, done, idx = self.sol._lookup(s.copies, s.slot)
        live = self.sol.live[s.slot]
        rules = []
        if not done and code and self.sol.slots[s.slot].V[idx, self.scenario] <= 0.0:
            # nothing can be delivered any more: do not spend transmissions
            code = 0
        if not done and code:
            sr = self.sol.slots[s.slot]
            bp = sr.best_p[idx, self.scenario]
            bk = sr.best_k[idx, self.scenario]
            for p, k in zip(bp, bk):
                if p >= 0:
                    rules.append(Rule(int(k), sr.tables.paths[p]))
        for n, k in enumerate(s.copies):
            if k and (done or not live[n]):
                rules.append(Rule(k, (n,)))
        return Action(rules)


def solve_compiled(
    g: UncertainContactGraph,
    target: int,
    max_copies: int,
    pf_matrix=None,
    use_bound: bool = True,
    factor: bool = True,
) -> CompiledSolution:
    """Solve every budget ``1..max_copies`` for ``target`` under each pf scenario.

    ``pf_matrix`` has one row per scenario and one column per contact id; a
    1-d sequence of floats is read as homogeneous pf values. ``None`` uses
    the graph's own probabilities.
    """
    problems = validate(g)
    if problems:
        raise SolverError("graph rejected: " + "; ".join(problems))
    if max_copies < 1:
        raise SolverError("max_copies must be >= 1")
    if not 0 <= target < g.node_count:
        raise SolverError(f"target {target} out of range")
    B = max_copies + 1
    if g.node_count * np.log2(B) > 62:
        raise SolverError("too many nodes for the state encoding at this copy budget")
    pf_matrix = _pf_matrix(g, pf_matrix)
    live = live_positions(g, target)
    powB = np.array([B ** n for n in range(g.node_count)], dtype=np.int64)
    T = g.slot_count
    slots: list[_SlotResult | None] = [None] * T
    nscen = pf_matrix.shape[0]
    codes_next = np.zeros(0, dtype=np.int64)
    V_next = np.zeros((0, nscen))
    stats = {"states": 0, "transitions": 0, "single": 0, "factored": 0, "joint": 0, "pruned": 0}
    use_dense = B ** g.node_count <= DENSE_LIMIT
    dense_next = _dense_index(codes_next, B ** g.node_count if use_dense else 0)
    for t in range(T - 1, -1, -1):
        tables = _build_slot_tables(g, t, target, live[t + 1])
        codes = _state_codes(live[t], target, max_copies)
        pf_loc = np.ascontiguousarray(pf_matrix[:, tables.contact_ids]) if len(tables.contact_ids) \
            else np.zeros((nscen, 1))
        if len(codes):
            carrier_nodes = np.array(
                [n for n in range(g.node_count) if live[t, n] and n != target], dtype=np.int64)
            V, bp, bk, st = _solve_slot(
                codes, carrier_nodes, dense_next, codes_next, V_next, tables.node_start,
                tables.node_count, tables.pnodes, tables.plen, tables.pcont,
                len(tables.contact_ids), pf_loc, live[t + 1], target, max_copies, B, powB,
                use_bound, factor,
            )
            for key, v in zip(("single", "factored", "joint", "pruned"), st):
                stats[key] += int(v)
            stats["transitions"] += int(st[:3].sum())
        else:
            V = np.zeros((0, nscen))
            bp = np.zeros((0, nscen, max_copies), dtype=np.int64)
            bk = np.zeros((0, nscen, max_copies), dtype=np.int64)
        stats["states"] += len(codes)
        slots[t] = _SlotResult(codes, V, bp, bk, tables)
        codes_next, V_next = codes, V
        dense_next = _dense_index(codes, B ** g.node_count if use_dense else 0)
    return CompiledSolution(g, target, max_copies, live, slots, pf_matrix, stats)


def _pf_matrix(g: UncertainContactGraph, pf_matrix) -> np.ndarray:
    n = len(g.contacts)
    if pf_matrix is None:
        return np.array([[c.pf for c in g.contacts]], dtype=np.float64).reshape(1, n)
    arr = np.asarray(pf_matrix, dtype=np.float64)
    if arr.ndim == 1:
        arr = np.repeat(arr[:, None], n, axis=1)
    if arr.ndim != 2 or arr.shape[1] != n:
        raise SolverError(f"pf matrix must have {n} columns")
    if np.any(arr < 0) or np.any(arr > 1):
        raise SolverError("pf values must lie in [0, 1]")
    return np.ascontiguousarray(arr)
