"""LDPC forward error correction.

Codes are built by progressive edge growth (PEG): variables acquire
their edges one at a time, each new edge landing on a check node that is
as far as possible from the variable in the current Tanner graph (ties
broken toward low check degree), which keeps short cycles rare without
any stored code tables.  Encoding is systematic via GF(2) elimination of
H; decoding is log-domain sum-product belief propagation with early exit
once the syndrome clears.

The on-disk description is deliberately minimal: an (n, k) header
followed by the (row, col) coordinates of the nonzeros of H; the encoder
is re-derived on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

_PHI_MIN = 1e-9
_PHI_MAX = 38.0


class RankDeficientError(ValueError):
    """Parity-check matrix does not have full row rank."""


def _phi(x: np.ndarray) -> np.ndarray:
    # involution phi(x) = -log tanh(x/2); clipping keeps it finite
    x = np.clip(x, _PHI_MIN, _PHI_MAX)
    return -np.log(np.tanh(0.5 * x))


def _gf2_systematize(H: np.ndarray):
    """Row-reduce H over GF(2).  Returns (pivot_cols, info_cols, enc)
    with parity = enc @ info mod 2 placed at the pivot columns."""
    m, n = H.shape
    R = H.astype(np.uint8).copy()
    pivots = []
    r = 0
    for col in range(n):
        if r == m:
            break
        hits = np.nonzero(R[r:, col])[0]
        if hits.size == 0:
            continue
        pr = r + int(hits[0])
        if pr != r:
            R[[r, pr]] = R[[pr, r]]
        elim = np.nonzero(R[:, col])[0]
        elim = elim[elim != r]
        R[elim] ^= R[r]
        pivots.append(col)
        r += 1
    if r < m:
        raise RankDeficientError(f"rank {r} < {m} rows")
    pivot_cols = np.array(pivots, dtype=np.int64)
    info_cols = np.setdiff1d(np.arange(n, dtype=np.int64), pivot_cols)
    return pivot_cols, info_cols, R[:, info_cols].copy()


@dataclass
class LdpcCode:
    H: np.ndarray
    max_iter: int = 50
    pivot_cols: np.ndarray = field(init=False, repr=False)
    info_cols: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.H = np.ascontiguousarray(self.H, dtype=np.uint8)
        if self.H.ndim != 2:
            raise ValueError("H must be 2-D")
        self.pivot_cols, self.info_cols, self._enc = _gf2_systematize(self.H)
        # edge lists in check-major order for the BP passes
        ec, ev = np.nonzero(self.H)
        self._ec = ec.astype(np.int64)
        self._ev = ev.astype(np.int64)
        counts = np.bincount(self._ec, minlength=self.H.shape[0])
        if counts.min() == 0:
            raise ValueError("check node with no edges")
        self._check_ptr = np.concatenate([[0], np.cumsum(counts)])[:-1]

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def k(self) -> int:
        return self.H.shape[1] - self.H.shape[0]

    @property
    def rate(self) -> float:
        return self.k / self.n


def build_ldpc(n: int, rate: float, dv: int = 3, seed: int = 0,
               max_iter: int = 50, max_tries: int = 20) -> LdpcCode:
    """PEG construction for the requested rate; retries the seed when the
    resulting H is rank deficient."""
    k = int(round(n * rate))
    m = n - k
    if m < dv:
        raise ValueError(f"rate {rate} leaves only {m} checks for dv={dv}")
    if abs(k / n - rate) > 0.01:
        raise ValueError(f"cannot hit rate {rate} within 0.01 at n={n}")
    last = None
    for t in range(max_tries):
        H = _peg_matrix(n, m, dv, seed + t)
        try:
            return LdpcCode(H=H, max_iter=max_iter)
        except RankDeficientError as e:
            last = e
    raise RankDeficientError(f"no full-rank H in {max_tries} tries: {last}")


def _peg_matrix(n: int, m: int, dv: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    check_deg = np.zeros(m, dtype=np.int64)
    checks_of_var = [[] for _ in range(n)]
    vars_of_check = [[] for _ in range(m)]
    # visiting variables in random order avoids systematic structure at
    # the low-index checks
    order = rng.permutation(n)
    for v in order:
        for _ in range(dv):
            cands = _peg_candidates(v, m, checks_of_var, vars_of_check)
            deg = check_deg[cands]
            best = cands[deg == deg.min()]
            c = int(best[rng.integers(best.size)])
            checks_of_var[v].append(c)
            vars_of_check[c].append(v)
            check_deg[c] += 1
    H = np.zeros((m, n), dtype=np.uint8)
    for v in range(n):
        H[checks_of_var[v], v] = 1
    return H


def _peg_candidates(v, m, checks_of_var, vars_of_check):
    """Checks at maximal graph distance from variable v (all checks when
    v has no edges yet)."""
    if not checks_of_var[v]:
        return np.arange(m, dtype=np.int64)
    reached = np.zeros(m, dtype=bool)
    reached[checks_of_var[v]] = True
    visited_v = np.zeros(len(checks_of_var), dtype=bool)
    visited_v[v] = True
    frontier_c = list(checks_of_var[v])
    while True:
        new_v = []
        for c in frontier_c:
            for u in vars_of_check[c]:
                if not visited_v[u]:
                    visited_v[u] = True
                    new_v.append(u)
        new_c = []
        for u in new_v:
            for c in checks_of_var[u]:
                if not reached[c]:
                    reached[c] = True
                    new_c.append(c)
        if not new_c:
            break
        if reached.all():
            # every check covered: the last layer is the farthest set
            return np.array(sorted(new_c), dtype=np.int64)
        frontier_c = new_c
    return np.nonzero(~reached)[0]


def ldpc_encode(code: LdpcCode, info: np.ndarray) -> np.ndarray:
    info = np.asarray(info, dtype=np.uint8)
    if info.shape != (code.k,):
        raise ValueError(f"info length {info.shape} != k={code.k}")
    cw = np.zeros(code.n, dtype=np.uint8)
    cw[code.info_cols] = info
    cw[code.pivot_cols] = (code._enc.astype(np.int64) @ info.astype(np.int64)) % 2
    return cw


def syndrome(code: LdpcCode, bits: np.ndarray) -> np.ndarray:
    return (code.H.astype(np.int64) @ np.asarray(bits, dtype=np.int64)) % 2


def ldpc_decode(code: LdpcCode, llrs: np.ndarray):
    """Sum-product decoding of one block.

    llrs follow the log P(bit=0)/P(bit=1) convention.  Returns
    (info bits, codeword bits, iterations used, converged flag).
    """
    llrs = np.asarray(llrs, dtype=np.float64)
    if llrs.shape != (code.n,):
        raise ValueError(f"llr length {llrs.shape} != n={code.n}")
    if not np.all(np.isfinite(llrs)):
        raise ValueError("LLRs must be finite")
    ec, ev, ptr = code._ec, code._ev, code._check_ptr
    m_cv = np.zeros(ec.size)
    total = llrs.copy()
    bits = (total < 0).astype(np.uint8)
    for it in range(1, code.max_iter + 1):
        m_vc = total[ev] - m_cv
        mag = _phi(np.abs(m_vc))
        sgn = np.where(m_vc < 0, -1.0, 1.0)
        seg_mag = np.add.reduceat(mag, ptr)
        seg_sgn = np.multiply.reduceat(sgn, ptr)
        m_cv = (seg_sgn[ec] * sgn) * _phi(seg_mag[ec] - mag)
        total = llrs + np.bincount(ev, weights=m_cv, minlength=code.n)
        bits = (total < 0).astype(np.uint8)
        if not syndrome(code, bits).any():
            return bits[code.info_cols], bits, it, True
    return bits[code.info_cols], bits, code.max_iter, False


def save_ldpc(code: LdpcCode, path) -> None:
    """Header n, k as u32 LE, then one (row, col) u32 LE pair per
    nonzero of H."""
    rows, cols = np.nonzero(code.H)
    with open(path, "wb") as f:
        f.write(struct.pack("<II", code.n, code.k))
        pairs = np.empty((rows.size, 2), dtype="<u4")
        pairs[:, 0] = rows
        pairs[:, 1] = cols
        f.write(pairs.tobytes())


def load_ldpc(path, max_iter: int = 50) -> LdpcCode:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8 or (len(blob) - 8) % 8 != 0:
        raise ValueError(f"{path}: malformed length {len(blob)}")
    n, k = struct.unpack_from("<II", blob, 0)
    pairs = np.frombuffer(blob, dtype="<u4", offset=8).reshape(-1, 2)
    m = n - k
    if pairs.size and (pairs[:, 0].max() >= m or pairs[:, 1].max() >= n):
        raise ValueError(f"{path}: edge index out of range for ({n}, {k})")
    H = np.zeros((m, n), dtype=np.uint8)
    H[pairs[:, 0], pairs[:, 1]] = 1
    return LdpcCode(H=H, max_iter=max_iter)
