# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled episode kernel for single-resource games.

Behavior-locked against the pure NumPy backend: identical per-role RNG stream
consumption (one uniform per step for random/awakening agents, one per network
action sample, one delay draw at reset when the delay is random) and the same
first-layer accumulation order in the network forward, so heuristic episodes
replay bit-exactly and network episodes agree to floating-point rounding.
"""

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, log, tanh
from libc.stdlib cimport free, malloc

import numpy as np

cimport numpy as cnp
from numpy.random cimport bitgen_t

cnp.import_array()

# keep in sync with fliplab.learner.network.LOGIT_BOUND
cdef double LOGIT_BOUND = 3.0

cdef enum ActorKind:
    H_SLEEP = 0
    H_RANDOM = 1
    H_PERIODIC = 2
    H_BURST = 3
    H_AWAKE = 4
    H_RETA = 5
    H_PC = 6
    H_PAC = 7
    H_NET = 100

# python-visible copy of the codes above, used by the wrapper
KIND_CODES = {
    "sleep": 0,
    "random": 1,
    "periodic": 2,
    "burst": 3,
    "awake": 4,
    "reta": 5,
    "pc": 6,
    "pac": 7,
}
NET_CODE = 100


ctypedef struct Side:
    # static description
    int kind
    int phase
    int delay          # -1 means redrawn uniformly from {0..phase-1} each episode
    int burst
    double prob
    double lam
    int min_eff
    bint greedy
    # network dims/pointers (valid when kind == H_NET)
    int n1
    int n2
    int n_act
    double *w1t
    double *b1
    double *w2
    double *b2
    double *wp
    double *bp
    double *v1t
    double *c1
    double *v2
    double *c2
    double *wv
    double bv
    # per-episode runtime
    int step
    int delay_resolved
    int t_since
    int eff
    int next_flip
    int flip_step
    bint awaiting
    bint pending
    int flip_at
    bitgen_t *rng
    # knowledge
    long own_flip_age
    long obs_owner
    long obs_capture_age


cdef inline void side_reset(Side *s, int me, int initial_owner) nogil:
    s.step = 0
    s.delay_resolved = 0
    if s.kind == H_PERIODIC or s.kind == H_BURST or s.kind == H_PC:
        if s.delay < 0:
            s.delay_resolved = <int>(s.rng.next_double(s.rng.state) * s.phase)
        else:
            s.delay_resolved = s.delay
    s.t_since = 0
    s.eff = s.phase
    s.next_flip = 0
    s.flip_step = -1
    s.awaiting = 0
    s.pending = 0
    s.flip_at = -1
    s.own_flip_age = -1
    if me == initial_owner:
        s.obs_owner = me
        s.obs_capture_age = 0
    else:
        s.obs_owner = -1
        s.obs_capture_age = -1


cdef inline int heur_act(Side *s, int me) nogil:
    cdef int act = 0
    cdef int pos, cyc
    cdef double u, p
    cdef bint recaptured
    if s.kind == H_RANDOM:
        u = s.rng.next_double(s.rng.state)
        if u < s.prob:
            act = 1
    elif s.kind == H_PERIODIC:
        pos = s.step - s.delay_resolved
        if pos >= 0 and pos % s.phase == 0:
            act = 1
    elif s.kind == H_BURST:
        pos = s.step - s.delay_resolved
        cyc = s.burst + s.phase - 1
        if pos >= 0 and pos % cyc < s.burst:
            act = 1
    elif s.kind == H_AWAKE:
        u = s.rng.next_double(s.rng.state)
        p = 1.0 - exp(-s.lam * s.t_since)
        if u < p:
            act = 1
        s.t_since += 1
        if act == 1:
            s.t_since = 0
    elif s.kind == H_RETA:
        if s.awaiting:
            recaptured = (s.obs_owner == me
                          and s.obs_capture_age == s.own_flip_age
                          and s.flip_step > 0)
            if s.obs_owner == 1 - me or recaptured:
                s.eff = s.eff // 2
                if s.eff < s.min_eff:
                    s.eff = s.min_eff
            else:
                s.eff += 1
                if s.eff > s.phase:
                    s.eff = s.phase
            s.next_flip = s.flip_step + s.eff
            s.awaiting = 0
        if s.step >= s.next_flip:
            act = 1
            s.awaiting = 1
            s.flip_step = s.step
    elif s.kind == H_PC:
        if s.awaiting:
            if s.obs_owner == 1 - me:
                s.pending = 1
            s.awaiting = 0
        pos = s.step - s.delay_resolved
        if pos >= 0 and pos % s.phase == 0:
            if s.pending:
                act = 1
                s.pending = 0
            else:
                act = 2
                s.awaiting = 1
    elif s.kind == H_PAC:
        if s.awaiting:
            if s.obs_owner == 1 - me:
                s.flip_at = s.step
            s.awaiting = 0
        if s.flip_at >= 0 and s.step >= s.flip_at:
            act = 1
            s.flip_at = -1
            s.awaiting = 1
        elif s.step % s.phase == 0:
            act = 2
            s.awaiting = 1
    s.step += 1
    return act


cdef inline void obs_cells(Side *s, int me, int memory, int *out_ia, int *out_ib) nogil:
    cdef int m = memory
    cdef long age = s.own_flip_age
    if age < 0:
        out_ia[0] = m
    else:
        out_ia[0] = <int>age if age < m - 1 else m - 1
    cdef long cage
    if s.obs_owner == 1 - me:
        cage = s.obs_capture_age
        out_ib[0] = (m + 1) + (<int>cage if cage < m - 1 else m - 1)
    else:
        out_ib[0] = (m + 1) + m


cdef inline int net_act(Side *s, int ia, int ib, double *h1, double *h2,
                        double *sh, double *ex,
                        double *out_logp, double *out_value) nogil:
    cdef int i, j, a, best
    cdef double acc, mx, tot, u, cum
    for i in range(s.n1):
        h1[i] = tanh((s.w1t[ia * s.n1 + i] + s.w1t[ib * s.n1 + i]) + s.b1[i])
    for j in range(s.n2):
        acc = s.b2[j]
        for i in range(s.n1):
            acc += s.w2[j * s.n1 + i] * h1[i]
        h2[j] = tanh(acc)
    for a in range(s.n_act):
        acc = s.bp[a]
        for j in range(s.n2):
            acc += s.wp[a * s.n2 + j] * h2[j]
        # soft-clip to +/-LOGIT_BOUND; mirrors network.bound_logits
        sh[a] = LOGIT_BOUND * tanh(acc / LOGIT_BOUND)
    # value comes from its own network; reuse the h1/h2 scratch space
    for i in range(s.n1):
        h1[i] = tanh((s.v1t[ia * s.n1 + i] + s.v1t[ib * s.n1 + i]) + s.c1[i])
    for j in range(s.n2):
        acc = s.c2[j]
        for i in range(s.n1):
            acc += s.v2[j * s.n1 + i] * h1[i]
        h2[j] = tanh(acc)
    acc = s.bv
    for j in range(s.n2):
        acc += s.wv[j] * h2[j]
    out_value[0] = acc
    mx = sh[0]
    for a in range(1, s.n_act):
        if sh[a] > mx:
            mx = sh[a]
    tot = 0.0
    for a in range(s.n_act):
        sh[a] = sh[a] - mx
        ex[a] = exp(sh[a])
        tot += ex[a]
    if s.greedy:
        best = 0
        for a in range(1, s.n_act):
            if ex[a] > ex[best]:
                best = a
    else:
        u = s.rng.next_double(s.rng.state)
        best = s.n_act - 1
        cum = 0.0
        for a in range(s.n_act):
            cum += ex[a] / tot
            if u < cum:
                best = a
                break
    out_logp[0] = sh[best] - log(tot)
    s.step += 1
    return best


cdef void fill_side(Side *s, conf, arrays) except *:
    """Populate the static part of a Side from wrapper-prepared data."""
    s.kind = conf["kind"]
    s.phase = conf.get("phase") or 1
    delay = conf.get("delay")
    s.delay = -1 if delay == "random" else (delay if delay is not None else 0)
    s.burst = conf.get("burst") or 1
    s.prob = conf.get("prob") or 0.0
    s.lam = conf.get("lam") or 0.0
    s.min_eff = max(1, s.phase // 2)
    s.greedy = 1 if conf.get("greedy") else 0
    cdef double[::1] b1, b2, bp, c1, c2, wv, bv
    cdef double[:, ::1] w1t, w2, wp, v1t, v2
    if s.kind == H_NET:
        w1t = arrays["w1t"]
        b1 = arrays["b1"]
        w2 = arrays["w2"]
        b2 = arrays["b2"]
        wp = arrays["wp"]
        bp = arrays["bp"]
        v1t = arrays["v1t"]
        c1 = arrays["c1"]
        v2 = arrays["v2"]
        c2 = arrays["c2"]
        wv = arrays["wv"]
        bv = arrays["bv"]
        s.n1 = w1t.shape[1]
        s.n2 = w2.shape[0]
        s.n_act = wp.shape[0]
        s.w1t = &w1t[0, 0]
        s.b1 = &b1[0]
        s.w2 = &w2[0, 0]
        s.b2 = &b2[0]
        s.wp = &wp[0, 0]
        s.bp = &bp[0]
        s.v1t = &v1t[0, 0]
        s.c1 = &c1[0]
        s.v2 = &v2[0, 0]
        s.c2 = &c2[0]
        s.wv = &wv[0]
        s.bv = bv[0]


def run_batch(int horizon, int memory, int initial_owner, double gain,
              double cost_sleep, double cost_flip, double cost_check,
              side0_conf, side0_arrays, side1_conf, side1_arrays,
              list gens0, list gens1,
              double[:, ::1] rewards, double[:, :, ::1] ownership,
              bint want_trace, short[:, :, ::1] trace_actions,
              signed char[:, :, ::1] trace_owners, double[:, :, ::1] trace_rewards,
              int learner_side, int[:, :, ::1] lrn_cells, short[:, ::1] lrn_actions,
              double[:, ::1] lrn_logp, double[:, ::1] lrn_values,
              double[:, ::1] lrn_rewards):
    """Drive a batch of episodes. All output arrays are wrapper-allocated."""
    cdef int n = len(gens0)
    cdef Side base0, base1
    fill_side(&base0, side0_conf, side0_arrays)
    fill_side(&base1, side1_conf, side1_arrays)

    # keep references so the BitGenerators stay alive while we hold pointers
    cdef bitgen_t **rng0 = <bitgen_t **>malloc(n * sizeof(void *))
    cdef bitgen_t **rng1 = <bitgen_t **>malloc(n * sizeof(void *))
    if rng0 == NULL or rng1 == NULL:
        free(rng0); free(rng1)
        raise MemoryError()
    cdef int e
    try:
        for e in range(n):
            rng0[e] = <bitgen_t *>PyCapsule_GetPointer(
                gens0[e].bit_generator.capsule, "BitGenerator")
            rng1[e] = <bitgen_t *>PyCapsule_GetPointer(
                gens1[e].bit_generator.capsule, "BitGenerator")

        _run_all(horizon, memory, initial_owner, gain,
                 cost_sleep, cost_flip, cost_check,
                 &base0, &base1, rng0, rng1, n,
                 rewards, ownership,
                 want_trace, trace_actions, trace_owners, trace_rewards,
                 learner_side, lrn_cells, lrn_actions, lrn_logp, lrn_values,
                 lrn_rewards)
    finally:
        free(rng0)
        free(rng1)


cdef void _run_all(int horizon, int memory, int initial_owner, double gain,
                   double cost_sleep, double cost_flip, double cost_check,
                   Side *base0, Side *base1, bitgen_t **rng0, bitgen_t **rng1, int n,
                   double[:, ::1] rewards, double[:, :, ::1] ownership,
                   bint want_trace, short[:, :, ::1] trace_actions,
                   signed char[:, :, ::1] trace_owners, double[:, :, ::1] trace_rewards,
                   int learner_side, int[:, :, ::1] lrn_cells, short[:, ::1] lrn_actions,
                   double[:, ::1] lrn_logp, double[:, ::1] lrn_values,
                   double[:, ::1] lrn_rewards) except *:
    cdef int maxn = 1
    if base0.kind == H_NET and base0.n1 > maxn:
        maxn = base0.n1
    if base0.kind == H_NET and base0.n2 > maxn:
        maxn = base0.n2
    if base1.kind == H_NET and base1.n1 > maxn:
        maxn = base1.n1
    if base1.kind == H_NET and base1.n2 > maxn:
        maxn = base1.n2
    cdef double *scratch = <double *>malloc((2 * maxn + 2 * 8) * sizeof(double))
    if scratch == NULL:
        raise MemoryError()
    cdef double *h1 = scratch
    cdef double *h2 = scratch + maxn
    cdef double *sh = scratch + 2 * maxn
    cdef double *ex = scratch + 2 * maxn + 8

    cdef Side s0, s1
    cdef double costs[3]
    costs[0] = cost_sleep
    costs[1] = cost_flip
    costs[2] = cost_check

    cdef int e, t, a0, a1, owner, capture, ia0, ib0, ia1, ib1
    cdef double rew0, rew1, lp, val
    cdef double own_steps0, own_steps1

    with nogil:
        for e in range(n):
            s0 = base0[0]
            s1 = base1[0]
            s0.rng = rng0[e]
            s1.rng = rng1[e]
            side_reset(&s0, 0, initial_owner)
            side_reset(&s1, 1, initial_owner)
            owner = initial_owner
            capture = 0
            own_steps0 = 0.0
            own_steps1 = 0.0
            rewards[e, 0] = 0.0
            rewards[e, 1] = 0.0
            for t in range(horizon):
                # defender decides
                if s0.kind == H_NET:
                    obs_cells(&s0, 0, memory, &ia0, &ib0)
                    a0 = net_act(&s0, ia0, ib0, h1, h2, sh, ex, &lp, &val)
                    if learner_side == 0:
                        lrn_cells[e, t, 0] = ia0
                        lrn_cells[e, t, 1] = ib0
                        lrn_actions[e, t] = <short>a0
                        lrn_logp[e, t] = lp
                        lrn_values[e, t] = val
                else:
                    a0 = heur_act(&s0, 0)
                # attacker decides
                if s1.kind == H_NET:
                    obs_cells(&s1, 1, memory, &ia1, &ib1)
                    a1 = net_act(&s1, ia1, ib1, h1, h2, sh, ex, &lp, &val)
                    if learner_side == 1:
                        lrn_cells[e, t, 0] = ia1
                        lrn_cells[e, t, 1] = ib1
                        lrn_actions[e, t] = <short>a1
                        lrn_logp[e, t] = lp
                        lrn_values[e, t] = val
                else:
                    a1 = heur_act(&s1, 1)

                # ownership: a lone flipper takes the resource, the holder
                # keeps it when contested or idle
                if a0 == 1 and a1 != 1:
                    if owner != 0:
                        owner = 0
                        capture = t
                elif a1 == 1 and a0 != 1:
                    if owner != 1:
                        owner = 1
                        capture = t

                rew0 = (gain if owner == 0 else 0.0) - costs[a0]
                rew1 = (gain if owner == 1 else 0.0) - costs[a1]
                rewards[e, 0] += rew0
                rewards[e, 1] += rew1
                if owner == 0:
                    own_steps0 += 1.0
                else:
                    own_steps1 += 1.0

                # reveals, then aging
                if a0 != 0:
                    s0.obs_owner = owner
                    s0.obs_capture_age = t - capture
                    if a0 == 1:
                        s0.own_flip_age = 0
                if a1 != 0:
                    s1.obs_owner = owner
                    s1.obs_capture_age = t - capture
                    if a1 == 1:
                        s1.own_flip_age = 0
                if s0.own_flip_age >= 0:
                    s0.own_flip_age += 1
                if s0.obs_capture_age >= 0:
                    s0.obs_capture_age += 1
                if s1.own_flip_age >= 0:
                    s1.own_flip_age += 1
                if s1.obs_capture_age >= 0:
                    s1.obs_capture_age += 1

                if want_trace:
                    trace_actions[e, t, 0] = <short>a0
                    trace_actions[e, t, 1] = <short>a1
                    trace_owners[e, t, 0] = <signed char>owner
                    trace_rewards[e, t, 0] = rew0
                    trace_rewards[e, t, 1] = rew1
                if learner_side == 0:
                    lrn_rewards[e, t] = rew0
                elif learner_side == 1:
                    lrn_rewards[e, t] = rew1

            ownership[e, 0, 0] = own_steps0 / horizon
            ownership[e, 1, 0] = own_steps1 / horizon

    free(scratch)
