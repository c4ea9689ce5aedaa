"""Independent reference implementations used to cross-check the package.

Everything here deliberately avoids the package's vectorized formulations:
matrix products are explicit loops or einsum contractions, neuron updates run
one scalar lane at a time, and cycle counts come from literally stepping a
wavefront until every processing element has consumed its operands.  Nothing
in this module imports from spikesim.
"""

import math

import numpy as np

I16_MIN = -(2**15)
I16_MAX = 2**15 - 1


def saturate_scalar(acc):
    if acc > I16_MAX:
        return I16_MAX, 1
    if acc < I16_MIN:
        return I16_MIN, 1
    return acc, 0


def triple_loop_matmul(s, w):
    """(n, d_in) 0/1 rows times (d_in, d_out) integer weights, int16 saturating."""
    n, d_in, d_out = len(s), len(w), len(w[0])
    out = [[0] * d_out for _ in range(n)]
    saturated = 0
    for i in range(n):
        for j in range(d_out):
            acc = 0
            for r in range(d_in):
                acc += s[i][r] * w[r][j]
            out[i][j], sat = saturate_scalar(acc)
            saturated += sat
    return out, saturated


def scalar_lif_lane(xs, v_th=1.0, v_leak=0, v0=0):
    """One neuron stepped through its input sequence.

    Returns the spike list and the final potential.  Strict-greater threshold,
    hard reset to zero, leak applied every step, no lower clamp.
    """
    v = v0
    spikes = []
    for x in xs:
        v = v + x - v_leak
        if v > v_th:
            spikes.append(1)
            v = 0
        else:
            spikes.append(0)
    return spikes, v


def scalar_lif_run(x, v_th=1.0, v_leak=0, v0=0):
    """(n, t, d) integration array to (n, t, d) spikes, one lane at a time."""
    x = np.asarray(x)
    n, t, d = x.shape
    out = np.zeros((n, t, d), dtype=np.uint8)
    for i in range(n):
        for j in range(d):
            lane, _ = scalar_lif_lane([int(x[i, s, j]) for s in range(t)], v_th, v_leak, v0)
            out[i, :, j] = lane
    return out


def dense_moe_forward(s_in, w_r, expert_w, v_th=1.0, v_leak=0):
    """Per-token dense reference for the whole mixture layer.

    Each token is routed on its own (argmax score, ties toward the lower
    expert id), multiplied against that expert's full weight matrix, and fed
    through scalar neuron lanes.  No gather, no scatter, no batching.
    """
    s = np.asarray(s_in, dtype=np.int64)
    n, t, _ = s.shape
    w_r = np.asarray(w_r, dtype=np.int64)
    d_out = np.asarray(expert_w[0]).shape[1]
    out = np.zeros((n, t, d_out), dtype=np.uint8)
    for token in range(n):
        counts = s[token].sum(axis=0)
        best, best_score = 0, None
        for e in range(w_r.shape[1]):
            score = int(counts @ w_r[:, e])
            if best_score is None or score > best_score:
                best, best_score = e, score
        x = s[token] @ np.asarray(expert_w[best], dtype=np.int64)
        x = np.clip(x, I16_MIN, I16_MAX)
        for j in range(d_out):
            lane, _ = scalar_lif_lane([int(x[step, j]) for step in range(t)], v_th, v_leak)
            out[token, :, j] = lane
    return out


def topk_sort_oracle(scores, k):
    """Per-token full sort with (score descending, id ascending) ordering."""
    table = []
    for row in scores:
        order = sorted(range(len(row)), key=lambda e: (-int(row[e]), e))
        table.append(order[:k])
    return table


def coincidence_counts(q, k):
    """(n, t, d) binary arrays to (t, n, n) coincidence counts, scalar loops."""
    q = np.asarray(q)
    k = np.asarray(k)
    n, t, d = q.shape
    out = np.zeros((t, n, n), dtype=np.int64)
    for step in range(t):
        for i in range(n):
            for j in range(n):
                acc = 0
                for r in range(d):
                    acc += int(q[i, step, r]) * int(k[j, step, r])
                out[step, i, j] = acc
    return out


def brute_force_mha(q, k, v, heads, d_head, v_th=1.0, v_leak=0):
    """Per head: A = Q Kᵀ and X = A V as einsum contractions, scalar neurons."""
    q = np.asarray(q, dtype=np.int64)
    k = np.asarray(k, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    n, t, dm = q.shape
    out = np.zeros((n, t, dm), dtype=np.uint8)
    for h in range(heads):
        lo, hi = h * d_head, (h + 1) * d_head
        x = np.zeros((n, t, d_head), dtype=np.int64)
        for step in range(t):
            a = np.einsum("id,jd->ij", q[:, step, lo:hi], k[:, step, lo:hi])
            x[:, step, :] = np.einsum("ij,jd->id", a, v[:, step, lo:hi])
        x = np.clip(x, I16_MIN, I16_MAX)
        out[:, :, lo:hi] = scalar_lif_run(x, v_th, v_leak)
    return out


def stepped_systolic_cycles(reduction, rows_used, cols_used):
    """March a literal wavefront until every processing element is done.

    Operand index i reaches element (r, c) at cycle i + r + c; the loop
    advances one cycle at a time, each element consumes at most one operand
    per cycle, and a single commit cycle follows the last consumption.
    """
    pending = {(r, c) for r in range(rows_used) for c in range(cols_used)}
    consumed = {pe: 0 for pe in pending}
    cycle = 0
    while pending:
        done = set()
        for pe in pending:
            r, c = pe
            if 0 <= cycle - r - c < reduction:
                consumed[pe] += 1
                if consumed[pe] == reduction:
                    done.add(pe)
        pending -= done
        cycle += 1
    return cycle + 1


def stepped_extraction_cycles(values, ports):
    """Drain a value count through a fixed number of readout ports."""
    cycles = 0
    left = values
    while left > 0:
        left -= ports
        cycles += 1
    return cycles


def ceil_chunks(extent, chunk):
    """[(start, stop)] covering [0, extent) in ceiling-division chunks."""
    return [(lo, min(lo + chunk, extent)) for lo in range(0, extent, chunk)]


def stepped_expert_cycles(n_e, t, d_in, d_out, rows, cols, ports):
    """Re-enumerate the expert tiling and step every tile: fill then drain."""
    compute = extract = 0
    for r0, r1 in ceil_chunks(d_out, rows):
        for c0, c1 in ceil_chunks(n_e * t, cols):
            compute += stepped_systolic_cycles(d_in, r1 - r0, c1 - c0)
            extract += stepped_extraction_cycles((r1 - r0) * (c1 - c0), ports)
    return compute + extract, compute, extract


def stepped_routing_cycles(n, t, d_in, e, rows, cols, ports):
    compute = extract = 0
    for r0, r1 in ceil_chunks(n, rows):
        for c0, c1 in ceil_chunks(e, cols):
            compute += stepped_systolic_cycles(t * d_in, r1 - r0, c1 - c0)
            extract += stepped_extraction_cycles((r1 - r0) * (c1 - c0), ports)
    return compute + extract, compute, extract


def stepped_attention_cycles(n, d, t, heads, rows, cols):
    """Phase 1 steps the full map tile; phase 2 streams through one column
    of the wavefront because the value block is reused inside the tile."""
    phase1 = phase2 = 0
    for _ in range(heads * t):
        for q0, q1 in ceil_chunks(n, rows):
            for _k0, _k1 in ceil_chunks(n, cols):
                phase1 += stepped_systolic_cycles(d, q1 - q0, _k1 - _k0)
                phase2 += stepped_systolic_cycles(d, q1 - q0, 1)
    return phase1 + phase2, phase1, phase2


def lpt_makespan(loads, cores):
    """Longest-processing-time-first list scheduling, ties toward lower ids."""
    order = sorted(range(len(loads)), key=lambda i: (-loads[i], i))
    core_loads = [0] * cores
    for i in order:
        c = min(range(cores), key=lambda j: core_loads[j])
        core_loads[c] += loads[i]
    return max(core_loads) if loads else 0


def _words(bits, width=128):
    return math.ceil(bits / width)


def attention_trace_catalogue(n, d, t, heads, rows, cols):
    """Every (level, direction, words) shape a legal attention trace may emit.

    The catalogue is closed: head ingress, per-group staging, operand reads,
    output-block writes, read-modify-write rereads, and spike-out writes.
    There is no entry for map data because the map never moves.
    """
    allowed = set()
    allowed.add(("act_glb", "read", _words(3 * n * t * d)))
    allowed.add(("act_lb", "write", _words(3 * n * t * d)))
    allowed.add(("act_lb", "read", _words(3 * n * d)))
    allowed.add(("act_buffer", "write", _words(3 * n * d)))
    for q0, q1 in ceil_chunks(n, rows):
        ru = q1 - q0
        allowed.add(("act_buffer", "read", _words(ru * d)))
        allowed.add(("act_buffer", "write", _words(ru * d * 16)))
        allowed.add(("act_buffer", "read", _words(ru * d * 16)))
        allowed.add(("act_lb", "write", _words(ru * d)))
    for k0, k1 in ceil_chunks(n, cols):
        allowed.add(("act_buffer", "read", _words((k1 - k0) * d)))
    return allowed


def attention_integration_words(n, d, t, heads, rows, cols):
    """Exact integration-tagged word totals (writes, reads) for one run."""
    writes = reads = 0
    key_tiles = len(ceil_chunks(n, cols))
    for _ in range(heads * t):
        for q0, q1 in ceil_chunks(n, rows):
            w = _words((q1 - q0) * d * 16)
            writes += key_tiles * w
            reads += (key_tiles - 1) * w + w
    return writes, reads


def attention_event_count(n, d, t, heads, rows, cols):
    """Exact number of access events an attention run must emit."""
    row_tiles = len(ceil_chunks(n, rows))
    key_tiles = len(ceil_chunks(n, cols))
    per_group = 2 * row_tiles * key_tiles  # phase-1 query and key reads
    per_group += row_tiles * key_tiles * 2  # phase-2 value read plus block write
    per_group += row_tiles * (key_tiles - 1)  # read-modify-write rereads
    per_group += row_tiles * 2  # completion read plus spike-out write
    return 2 * heads + heads * t * (2 + per_group)
