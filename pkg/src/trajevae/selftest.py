"""Quick correctness checks against independent references.

Each check returns a :class:`CheckResult`; :func:`run_all` is what ``trajevae selftest``
prints.  The loop-based reference metrics here are deliberately naive so they share no
code with :mod:`trajevae.metrics`.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .dct import dct_basis, dct_time, idct_time
from .gradcheck import PRIMITIVE_CASES, primitive_gradient_error, relative_error
from .model import DistributionStats, ModelConfig, TrajeVAE, kl_divergence
from .motion_data import sample_mask
from . import metrics


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34s} value={self.value:.3e}  tol={self.tolerance:.0e}  {self.detail}"


# ---------------------------------------------------------------------------
# reference implementations
# ---------------------------------------------------------------------------

def _dist(a, b) -> float:
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def ref_apd(samples) -> float:
    K = len(samples)
    if K < 2:
        return 0.0
    total = 0.0
    for i, j in itertools.combinations(range(K), 2):
        total += _dist(np.ravel(samples[i]), np.ravel(samples[j]))
    return total / (K * (K - 1) / 2)


def ref_ade(samples, gt) -> float:
    best = math.inf
    for s in samples:
        err = sum(_dist(s[t], gt[t]) for t in range(len(gt))) / len(gt)
        best = min(best, err)
    return best


def ref_fde(samples, gt) -> float:
    return min(_dist(s[-1], gt[-1]) for s in samples)


def ref_groups(x0s, eps):
    return [[j for j in range(len(x0s)) if _dist(x0s[i], x0s[j]) < eps] for i in range(len(x0s))]


def ref_mm(samples, group, gts, kind="ade") -> float:
    fn = ref_ade if kind == "ade" else ref_fde
    return sum(fn(samples, gts[j]) for j in group) / len(group)


def ref_dct(x: np.ndarray) -> np.ndarray:
    """Direct sum definition of the orthonormal DCT-II along axis 0."""
    T = x.shape[0]
    out = np.zeros_like(x, dtype=np.float64)
    for k in range(T):
        a = math.sqrt(1.0 / T) if k == 0 else math.sqrt(2.0 / T)
        for n in range(T):
            out[k] += a * math.cos(math.pi * (2 * n + 1) * k / (2 * T)) * x[n]
    return out


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------

def check_primitive_gradients(instances: int = 100, seed: int = 0, tol: float = 1e-4) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for kind in PRIMITIVE_CASES:
        worst = max(primitive_gradient_error(kind, rng) for _ in range(instances))
        out.append(CheckResult(f"grad[{kind}]", worst, tol, worst < tol, f"n={instances}"))
    return out


def gradcheck_model_config() -> ModelConfig:
    return ModelConfig(joints=2, frames=4, latent_dim=8, hidden_dim=4, heads=2, ff_dim=8,
                       shared_layers=1, branch_layers=1, decoder_layers=1, dropout=0.1)


def model_gradient_error(seed: int = 0, h: float = 1e-5, config: ModelConfig | None = None,
                         beta: float = 1.0, per_tensor: int | None = None) -> float:
    """Relative error of the full training loss gradient over all parameters.

    Dropout and the reparameterisation noise are frozen by reseeding the generator
    before every forward pass.  The error is the max-norm relative error of the
    concatenated gradient vector.  ``per_tensor`` limits the finite differences to
    that many random coordinates of each parameter tensor.
    """
    from .training import loss_total

    cfg = config or gradcheck_model_config()
    rng = np.random.default_rng(seed)
    model = TrajeVAE(cfg, rng)
    B, D = 2, 3 * cfg.joints
    x0 = rng.normal(size=(B, D))
    frames = rng.normal(size=(B, cfg.frames, D))
    bits = np.array([[True] + [False] * (cfg.joints - 1), [False] * cfg.joints])
    cmask = np.repeat(bits, 3, axis=1).astype(np.float64)[:, None, :]

    def loss() -> Tensor:
        recon, prior, post = model.forward_arrays(x0, frames, cmask, np.random.default_rng(seed + 1))
        return loss_total(recon, frames, prior, post, beta)[0]

    params = model.parameters()
    for p in params:
        p.grad = None
    loss().backward()
    pick = np.random.default_rng(seed + 2)
    analytic, numeric = [], []
    for p in params:
        flat = p.data.reshape(-1)
        grad = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
        coords = np.arange(flat.size)
        if per_tensor is not None and flat.size > per_tensor:
            coords = np.sort(pick.choice(flat.size, per_tensor, replace=False))
        analytic.extend(grad[coords])
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            plus = loss().item()
            flat[i] = orig - h
            minus = loss().item()
            flat[i] = orig
            numeric.append((plus - minus) / (2 * h))
    return relative_error(np.array(analytic), np.array(numeric))


def check_model_gradient(tol: float = 1e-3, per_tensor: int | None = None) -> CheckResult:
    err = model_gradient_error(per_tensor=per_tensor)
    scope = "all coordinates" if per_tensor is None else f"{per_tensor} coords/tensor"
    return CheckResult("grad[model end-to-end]", err, tol, err < tol, f"J=2 T=4 Dz=8 {scope}")


def check_dct(tol: float = 1e-9, max_len: int = 128, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    round_trip = energy = 0.0
    for T in range(1, max_len + 1):
        x = rng.normal(size=(T, 5))
        y = dct_time(x)
        round_trip = max(round_trip, float(np.abs(idct_time(y) - x).max()))
        energy = max(energy, abs(float((y ** 2).sum() - (x ** 2).sum())) / float((x ** 2).sum()))
    impulse = np.zeros((4, 1))
    impulse[0] = 1.0
    oracle_err = float(np.abs(dct_time(impulse) - ref_dct(impulse)).max())
    oracle_err = max(oracle_err, float(np.abs(dct_basis(4) - ref_dct(np.eye(4))).max()))
    return [
        CheckResult("dct round trip T=1..128", round_trip, tol, round_trip < tol),
        CheckResult("dct energy T=1..128", energy, tol, energy < tol),
        CheckResult("dct T=4 direct definition", oracle_err, 1e-4, oracle_err < 1e-4),
    ]


def _random_stats(rng, shape):
    return DistributionStats(Tensor(rng.normal(size=shape) * 2), Tensor(rng.uniform(-4, 4, size=shape)))


def check_kl(pairs: int = 10_000, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    q = _random_stats(rng, (pairs, 1))
    self_kl = abs(kl_divergence(q, q).item())
    p = _random_stats(rng, (pairs, 1))
    worst = 0.0
    for i in range(pairs):
        qi = DistributionStats(q.mean[i], q.logvar[i])
        pi = DistributionStats(p.mean[i], p.logvar[i])
        worst = min(worst, kl_divergence(qi, pi).item())
    return [
        CheckResult("kl(q||q) = 0", self_kl, 1e-12, self_kl < 1e-12),
        CheckResult("kl >= 0", abs(worst), 0.0, worst >= 0.0, f"pairs={pairs}"),
    ]


def check_masks(count: int = 100_000, joints: int = 17, p_mask: float = 0.85,
                seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    bad = 0
    visible = np.empty(count)
    T = 3
    for n in range(count):
        m = sample_mask(joints, p_mask, rng)
        M = m.expand(T)
        triples = M.reshape(T, joints, 3)
        if not (np.all(M == M[0]) and np.all(triples == triples[..., :1])):
            bad += 1
        visible[n] = m.k
    expected = joints * (1 - p_mask)
    sigma = math.sqrt(joints * p_mask * (1 - p_mask) / count)
    z = abs(visible.mean() - expected) / sigma
    X = rng.normal(size=(T, 3 * joints))
    m = sample_mask(joints, p_mask, rng).expand(T)
    comp = float(np.abs(X * m + X * (1 - m) - X).max())
    return [
        CheckResult("mask structure", float(bad), 0.0, bad == 0, f"n={count}"),
        CheckResult("mask mean visible (sigmas)", z, 3.0, z < 3.0,
                    f"mean={visible.mean():.4f} expected={expected:.2f}"),
        CheckResult("mask complementarity", comp, 0.0, comp == 0.0),
    ]


def check_metrics(instances: int = 200, seed: int = 0, tol: float = 1e-12) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        K, T, J, N = (int(rng.integers(1, 9)), int(rng.integers(1, 11)),
                      int(rng.integers(1, 6)), int(rng.integers(1, 6)))
        samples = rng.normal(size=(K, T, 3 * J))
        gts = rng.normal(size=(N, T, 3 * J))
        x0s = rng.normal(size=(N, 3 * J)) * 0.5
        eps = float(rng.uniform(0.1, 3.0))
        groups = metrics.build_groups(x0s, eps)
        ref = ref_groups(x0s, eps)
        if any(list(g) != r for g, r in zip(groups, ref)):
            worst = math.inf
            break
        pairs = [
            (metrics.apd(samples), ref_apd(samples)),
            (metrics.ade(samples, gts[0]), ref_ade(samples, gts[0])),
            (metrics.fde(samples, gts[0]), ref_fde(samples, gts[0])),
            (metrics.mmade(samples, groups[0], gts), ref_mm(samples, ref[0], gts, "ade")),
            (metrics.mmfde(samples, groups[0], gts), ref_mm(samples, ref[0], gts, "fde")),
        ]
        worst = max(worst, max(abs(a - b) for a, b in pairs))
    return CheckResult("metric oracles", worst, tol, worst < tol, f"n={instances}")


def run_all(fast: bool = True) -> list[CheckResult]:
    """All checks; ``fast`` trims instance counts so the run stays well under a minute."""
    results = check_primitive_gradients(instances=20 if fast else 100)
    results.append(check_model_gradient(per_tensor=4 if fast else None))
    results += check_dct()
    results += check_kl()
    results += check_masks(count=20_000 if fast else 100_000)
    results.append(check_metrics(instances=100 if fast else 1000))
    return results


def report(results: list[CheckResult], elapsed: float | None = None) -> str:
    lines = [r.line() for r in results]
    failed = sum(not r.passed for r in results)
    tail = f"{len(results) - failed}/{len(results)} checks passed"
    if elapsed is not None:
        tail += f" in {elapsed:.1f}s"
    return "\n".join(lines + [tail])


def main(fast: bool = True) -> tuple[bool, str]:
    t = time.perf_counter()
    results = run_all(fast)
    return all(r.passed for r in results), report(results, time.perf_counter() - t)
