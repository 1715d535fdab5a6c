"""PSNR / SSIM and the model-vs-last-input evaluation report."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError

PSNR_CAP = 99.0
_C1 = 0.01**2
_C2 = 0.03**2


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def ssim(a, b) -> float:
    """SSIM over a single window covering the whole frame (peak 1)."""
    a, b = _pair(a, b)
    mu_a, mu_b = a.mean(), b.mean()
    var_a = np.mean((a - mu_a) ** 2)
    var_b = np.mean((b - mu_b) ** 2)
    cov = np.mean((a - mu_a) * (b - mu_b))
    num = (2 * mu_a * mu_b + _C1) * (2 * cov + _C2)
    den = (mu_a**2 + mu_b**2 + _C1) * (var_a + var_b + _C2)
    return float(num / den)


@dataclass
class EvalReport:
    model_psnr: np.ndarray  # (m,), index h-1 is horizon h
    model_ssim: np.ndarray
    baseline_psnr: np.ndarray
    baseline_ssim: np.ndarray
    count: int

    @property
    def horizon(self) -> int:
        return len(self.model_psnr)

    def rows(self) -> list[tuple[int, float, float, float, float]]:
        return [
            (h + 1, self.model_psnr[h], self.model_ssim[h], self.baseline_psnr[h], self.baseline_ssim[h])
            for h in range(self.horizon)
        ]

    def to_csv(self) -> str:
        lines = ["horizon,model_psnr,model_ssim,baseline_psnr,baseline_ssim"]
        for h, *vals in self.rows():
            lines.append(",".join([str(h)] + [f"{v:.6f}" for v in vals]))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())


def _score(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean PSNR/SSIM per horizon for (N, m, ...) prediction and truth arrays."""
    N, m = truth.shape[:2]
    p = np.array([[psnr(pred[i, h], truth[i, h]) for h in range(m)] for i in range(N)])
    s = np.array([[ssim(pred[i, h], truth[i, h]) for h in range(m)] for i in range(N)])
    return p.mean(axis=0), s.mean(axis=0)


def last_input_baseline(sequences: np.ndarray, k: int, m: int) -> np.ndarray:
    """Repeat frame k-1 for every horizon; (N, m, ...) output."""
    last = sequences[:, k - 1 : k]
    return np.repeat(last, m, axis=1)


def evaluate(model, sequences, k: int, m: int, cfg) -> EvalReport:
    """Condition on the first k frames, score m predicted frames against truth.

    ``sequences`` is (N, T, H, W) or (N, T, D).
    """
    from .model import predict_frames

    seqs = np.asarray(sequences, dtype=np.float64)
    if seqs.ndim < 3:
        raise ConfigError("sequences must have shape (N, T, ...)")
    N, T = seqs.shape[:2]
    if k < 1 or m < 1 or k + m > T:
        raise ConfigError(f"k + m = {k + m} exceeds sequence length {T}")
    if N == 0:
        raise ConfigError("no sequences to evaluate")
    flat = seqs.reshape(N, T, -1)
    truth = flat[:, k : k + m]
    pred = predict_frames(model, flat[:, :k], m, cfg)
    model_psnr, model_ssim = _score(pred, truth)
    base_psnr, base_ssim = _score(last_input_baseline(flat, k, m), truth)
    return EvalReport(model_psnr, model_ssim, base_psnr, base_ssim, N)
