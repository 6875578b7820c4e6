"""Constant fitting against a target function image.

The optimizer minimizes MSE in normalized-image space: the candidate tree is
re-rendered and min-max normalized per channel each evaluation (min/max
treated as stop-gradient), then compared with the target over the target's
finite mask. L-BFGS (two-loop recursion with a strong-Wolfe line search) is
the primary optimizer; a decoupled-weight-decay first-order baseline exists
for the optimizer comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoFinitePoints
from .funcimg import FuncImg, meshgrid
from .numeric import TreeProgram
from .tree import OpTree, decode_structure
from .treegen import rng_stream
from .vocab import Vocab, default_vocab


@dataclass(frozen=True)
class FitConfig:
    optimizer: str = "lbfgs"  # "lbfgs" | "first_order"
    learning_rate: float = 1.0
    stop_delta: float = 1e-5
    max_iters: int = 200
    lbfgs_memory: int = 10
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    init_range: tuple[float, float] = (-2.0, 2.0)
    restarts: int = 4
    # when > 0, restarts begin at the best of this many stratified loss-only
    # probes instead of raw uniform draws; catches the needle-thin basins of
    # pole-bearing candidates (tan/inv). 0 keeps pure random initialization.
    init_probes: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("lbfgs", "first_order"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0 or self.stop_delta <= 0:
            raise ValueError("learning_rate and stop_delta must be positive")
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")


@dataclass(frozen=True)
class FitResult:
    constants: tuple[float, ...]
    final_mse: float
    iterations: int
    converged: bool
    restart_index: int


class _Objective:
    """Normalized-space MSE of one candidate tree against one target image.

    All channels evaluate in one concatenated pass; normalization stays
    per-channel on row segments.
    """

    def __init__(self, tree: OpTree, target: FuncImg, vocab: Vocab):
        if target.scale_meta is None:
            raise ValueError("target image carries no scale metadata")
        self.program = TreeProgram(tree, vocab)
        if self.program.max_var >= target.n_vars:
            raise NoFinitePoints(
                f"tree uses x{self.program.max_var} but the target grid has "
                f"{target.n_vars} variable(s)"
            )
        self.evals = 0
        res = target.resolution
        point_blocks, value_blocks, mask_blocks, self.segments = [], [], [], []
        start = 0
        for k, scale in enumerate(target.scale_meta):
            if target.n_vars == 1:
                # broadcast images repeat the curve across columns; one column
                # carries the full information at 1/res the cost
                point_blocks.append(meshgrid(scale, res, 1))
                value_blocks.append(target.data[k, :, 0])
                mask_blocks.append(target.mask[k, :, 0])
            else:
                point_blocks.append(meshgrid(scale, res, 2))
                value_blocks.append(target.data[k].ravel())
                mask_blocks.append(target.mask[k].ravel())
            end = start + len(value_blocks[-1])
            self.segments.append((start, end))
            start = end
        self.points = np.vstack(point_blocks)
        self.t_vals = np.concatenate(value_blocks)
        self.t_mask = np.concatenate(mask_blocks)

    def loss_only(self, theta: np.ndarray) -> float:
        """Forward-only loss for cheap init probing."""
        self.evals += 1
        root = self.program.forward(self.points, theta)[0]
        finite = np.isfinite(root)
        loss = 0.0
        n_total = 0
        for start, end in self.segments:
            fslice = finite[start:end]
            if not fslice.any():
                continue
            seg = root[start:end]
            joint = fslice & self.t_mask[start:end]
            n_joint = int(joint.sum())
            if n_joint == 0:
                continue
            n_total += n_joint
            lo = float(seg[fslice].min())
            hi = float(seg[fslice].max())
            span = hi - lo
            if span > 0 and np.isinf(span):
                norm = (seg[joint] * 0.5 - lo * 0.5) / (hi * 0.5 - lo * 0.5)
            elif span > 0:
                norm = (seg[joint] - lo) / span
            else:
                norm = np.zeros(n_joint)
            residual = norm - self.t_vals[start:end][joint]
            loss += float(residual @ residual)
        if n_total == 0 or not np.isfinite(loss):
            return math.inf
        return loss / n_total

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        """Loss and gradient; (inf, zeros) when no point survives masking."""
        self.evals += 1
        values = self.program.forward(self.points, theta)
        root = values[0]
        finite = np.isfinite(root)
        seed = np.zeros(root.shape[0])
        loss = 0.0
        n_total = 0
        for start, end in self.segments:
            fslice = finite[start:end]
            if not fslice.any():
                continue
            seg = root[start:end]
            joint = fslice & self.t_mask[start:end]
            n_joint = int(joint.sum())
            if n_joint == 0:
                continue
            n_total += n_joint
            lo = float(seg[fslice].min())
            hi = float(seg[fslice].max())
            span = hi - lo
            if span > 0 and np.isinf(span):
                # span beyond float64 range: halve to keep ratios exact; the
                # 1/span gradient factor underflows to 0 at this magnitude
                norm = (seg[joint] * 0.5 - lo * 0.5) / (hi * 0.5 - lo * 0.5)
                inv_span = 0.0
            elif span > 0:
                norm = (seg[joint] - lo) / span
                inv_span = 1.0 / span
            else:
                norm = np.zeros(n_joint)
                inv_span = 0.0
            residual = norm - self.t_vals[start:end][joint]
            loss += float(residual @ residual)
            if inv_span > 0:
                seed[start:end][joint] = 2.0 * residual * inv_span
        if n_total == 0 or not np.isfinite(loss):
            return math.inf, np.zeros_like(theta)
        loss /= n_total
        if self.program.n_slots == 0:
            return loss, np.zeros(0)
        # restrict the reverse sweep to finite points so excluded points
        # cannot leak 0*inf into the sums
        sub_values = [v[finite] for v in values]
        grad = self.program.backward(sub_values, seed[finite] / n_total, theta)
        return loss, grad


def _two_loop(grad: np.ndarray, memory: list[tuple[np.ndarray, np.ndarray, float]]) -> np.ndarray:
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(memory):
        a = rho * float(np.dot(s, q))
        alphas.append(a)
        q -= a * y
    if memory:
        s, y, _ = memory[-1]
        q *= float(np.dot(s, y) / np.dot(y, y))
    for (s, y, rho), a in zip(memory, reversed(alphas)):
        b = rho * float(np.dot(y, q))
        q += (a - b) * s
    return q


def _interp_step(a, fa, da, b, fb, db) -> float:
    """Trial step inside (a, b): cubic if both slopes known, else quadratic."""
    span = b - a
    if span == 0:
        return a
    lo, hi = (a, b) if a < b else (b, a)
    margin = 0.1 * (hi - lo)
    candidate = None
    with np.errstate(all="ignore"):
        if np.isfinite(db) and np.isfinite(fb):
            d1 = da + db - 3.0 * (fa - fb) / (a - b)
            disc = d1 * d1 - da * db
            if disc >= 0:
                d2 = math.copysign(math.sqrt(disc), span)
                denom = db - da + 2.0 * d2
                if denom != 0:
                    candidate = b - span * (db + d2 - d1) / denom
        if candidate is None and np.isfinite(fb):
            denom = 2.0 * (fb - fa - da * span)
            if denom != 0:
                candidate = a - da * span * span / denom
    if candidate is None or not np.isfinite(candidate):
        return a + 0.5 * span
    if candidate < lo + margin or candidate > hi - margin:
        return a + 0.5 * span
    return candidate


def _strong_wolfe(obj, x, f0, g0, direction, cfg: FitConfig, max_trials: int = 20):
    """Line search returning (alpha, f, g) satisfying strong Wolfe, or None.

    Trial points with non-finite loss (e.g. the tree left its domain) count
    as infinitely bad and shrink the bracket.
    """
    d_phi0 = float(np.dot(g0, direction))
    if d_phi0 >= 0:
        return None

    def phi(alpha):
        f, g = obj(x + alpha * direction)
        return f, g, (float(np.dot(g, direction)) if np.isfinite(f) else math.inf)

    c1, c2 = cfg.wolfe_c1, cfg.wolfe_c2
    alpha_prev, f_prev, d_prev = 0.0, f0, d_phi0
    alpha = cfg.learning_rate
    bracket = None
    for _ in range(max_trials):
        f, g, d = phi(alpha)
        if not np.isfinite(f) or f > f0 + c1 * alpha * d_phi0 or f >= f_prev:
            bracket = (alpha_prev, f_prev, d_prev, alpha, f, d)
            break
        if abs(d) <= -c2 * d_phi0:
            return alpha, f, g
        if d >= 0:
            bracket = (alpha, f, d, alpha_prev, f_prev, d_prev)
            break
        alpha_prev, f_prev, d_prev = alpha, f, d
        alpha *= 2.0
    if bracket is None:
        return None

    lo, f_lo, d_lo, hi, f_hi, d_hi = bracket
    for _ in range(max_trials):
        if abs(hi - lo) <= 1e-14 * max(1.0, abs(lo)):
            return None
        alpha = _interp_step(lo, f_lo, d_lo, hi, f_hi, d_hi)
        f, g, d = phi(alpha)
        if not np.isfinite(f) or f > f0 + c1 * alpha * d_phi0 or f >= f_lo:
            hi, f_hi, d_hi = alpha, f, d
            continue
        if abs(d) <= -c2 * d_phi0:
            return alpha, f, g
        if d * (hi - lo) >= 0:
            hi, f_hi, d_hi = lo, f_lo, d_lo
        lo, f_lo, d_lo = alpha, f, d
    return None


def _run_lbfgs(obj, theta0: np.ndarray, cfg: FitConfig):
    theta = theta0.astype(np.float64).copy()
    f, g = obj(theta)
    if not np.isfinite(f):
        return theta, math.inf, 0, False
    memory: list[tuple[np.ndarray, np.ndarray, float]] = []
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm < 1e-10:
            converged = True
            iterations -= 1
            break
        direction = -_two_loop(g, memory)
        if float(np.dot(g, direction)) >= 0:
            direction = -g
        found = _strong_wolfe(obj, theta, f, g, direction, cfg)
        if found is None:
            break
        alpha, f_new, g_new = found
        if __debug__:
            d_phi0 = float(np.dot(g, direction))
            assert f_new <= f + cfg.wolfe_c1 * alpha * d_phi0 + 1e-12
            assert abs(float(np.dot(g_new, direction))) <= -cfg.wolfe_c2 * d_phi0 + 1e-12
        step = alpha * direction
        y = g_new - g
        sy = float(np.dot(step, y))
        if sy > 1e-12 * float(np.linalg.norm(step)) * float(np.linalg.norm(y)):
            memory.append((step, y, 1.0 / sy))
            if len(memory) > cfg.lbfgs_memory:
                memory.pop(0)
        theta = theta + step
        delta = abs(f - f_new)
        f, g = f_new, g_new
        if delta < cfg.stop_delta:
            converged = True
            break
    return theta, f, iterations, converged


def _run_first_order(obj, theta0: np.ndarray, cfg: FitConfig):
    # moment estimates per the decoupled-weight-decay scheme; decay itself is
    # 0 because shrinking tree constants toward 0 would bias the fit
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    theta = theta0.astype(np.float64).copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    f, g = obj(theta)
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        if np.isfinite(f) and float(np.linalg.norm(g)) < 1e-10:
            converged = True
            iterations -= 1
            break
        with np.errstate(all="ignore"):
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            m_hat = m / (1 - beta1 ** iterations)
            v_hat = v / (1 - beta2 ** iterations)
            step = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        theta = theta - np.nan_to_num(step, nan=0.0, posinf=0.0, neginf=0.0)
        f_new, g = obj(theta)
        if np.isfinite(f) and np.isfinite(f_new) and abs(f - f_new) < cfg.stop_delta:
            f = f_new
            converged = True
            break
        f = f_new
    return theta, f if np.isfinite(f) else math.inf, iterations, converged


def fit(
    ots,
    target: FuncImg,
    cfg: FitConfig,
    vocab: Vocab | None = None,
    init_constants=None,
) -> FitResult:
    """Fit the constants of the tree an OTS encodes to a target image.

    Runs cfg.restarts independent optimizations from uniform random inits
    (the first restart can start at init_constants instead) and keeps the
    best final loss. Raises NoFinitePoints when the decoded tree never
    overlaps the target mask.
    """
    vocab = vocab or default_vocab()
    tree = decode_structure(ots, vocab)
    objective = _Objective(tree, target, vocab)
    n_slots = objective.program.n_slots
    if n_slots == 0:
        loss, _ = objective(np.zeros(0))
        if not np.isfinite(loss):
            raise NoFinitePoints("tree has no finite overlap with the target mask")
        return FitResult((), float(loss), 0, True, 0)

    runner = _run_lbfgs if cfg.optimizer == "lbfgs" else _run_first_order
    lo, hi = cfg.init_range
    starts = _probe_starts(objective, n_slots, cfg) if cfg.init_probes > 0 else []
    best = None
    for restart in range(max(1, cfg.restarts)):
        if restart == 0 and init_constants is not None:
            theta0 = np.asarray(init_constants, dtype=np.float64)
        elif restart < len(starts):
            theta0 = starts[restart]
        else:
            theta0 = rng_stream(cfg.seed, restart).uniform(lo, hi, n_slots)
        theta, loss, iterations, converged = runner(objective, theta0, cfg)
        if best is None or loss < best[1]:
            best = (theta, loss, iterations, converged, restart)
    theta, loss, iterations, converged, restart = best
    if not np.isfinite(loss):
        raise NoFinitePoints("tree has no finite overlap with the target mask")
    return FitResult(tuple(float(t) for t in theta), float(loss), iterations, converged, restart)


def _probe_starts(objective: _Objective, n_slots: int, cfg: FitConfig) -> list[np.ndarray]:
    """Best starting points among stratified (Latin hypercube) probes."""
    rng = rng_stream(cfg.seed, 1_000_003)
    lo, hi = cfg.init_range
    n_probes = cfg.init_probes
    strata = np.stack(
        [(rng.permutation(n_probes) + rng.uniform(0, 1, n_probes)) / n_probes
         for _ in range(n_slots)],
        axis=1,
    )
    probes = lo + strata * (hi - lo)
    losses = np.array([objective.loss_only(p) for p in probes])
    order = np.argsort(losses, kind="stable")
    return [probes[i] for i in order[: max(1, cfg.restarts)]]


def fit_first_order(ots, target: FuncImg, cfg: FitConfig, vocab: Vocab | None = None,
                    init_constants=None) -> FitResult:
    """The first-order baseline with the same pipeline and stopping rule."""
    from dataclasses import replace

    return fit(ots, target, replace(cfg, optimizer="first_order"), vocab, init_constants)


@dataclass(frozen=True)
class BatchSummary:
    median_mse: float
    q1_mse: float
    q3_mse: float
    median_iterations: float
    n_errors: int


def fit_batch(items, cfg: FitConfig, vocab: Vocab | None = None, threads: int = 1):
    """Independent fits of (ots, target) pairs; per-item errors never abort.

    Returns (outcomes, summary) where each outcome is a FitResult or the
    exception that item raised. Item i uses seed stream (cfg.seed, i) so the
    batch is reproducible regardless of scheduling.
    """
    from dataclasses import replace

    vocab = vocab or default_vocab()
    items = list(items)

    def run_one(index_item):
        index, (ots, target) = index_item
        item_cfg = replace(cfg, seed=_mix_seed(cfg.seed, index))
        try:
            return fit(ots, target, item_cfg, vocab)
        except Exception as exc:  # recorded in-slot per the isolation contract
            return exc

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_one, enumerate(items)))
    else:
        outcomes = [run_one(pair) for pair in enumerate(items)]
    losses = sorted(r.final_mse for r in outcomes if isinstance(r, FitResult))
    iters = sorted(r.iterations for r in outcomes if isinstance(r, FitResult))
    if losses:
        summary = BatchSummary(
            median_mse=float(np.median(losses)),
            q1_mse=float(np.quantile(losses, 0.25)),
            q3_mse=float(np.quantile(losses, 0.75)),
            median_iterations=float(np.median(iters)),
            n_errors=sum(1 for r in outcomes if not isinstance(r, FitResult)),
        )
    else:
        summary = BatchSummary(math.nan, math.nan, math.nan, math.nan, len(outcomes))
    return outcomes, summary


def _mix_seed(seed: int, index: int) -> int:
    return (int(seed) * 1000003 + index) % (2**63)
