"""Grid-based fuzzy interpolation of the affine market drift.

A rule premise axis is covered by piecewise-linear hat functions whose end
members saturate at 1 beyond the boundary peaks.  Inputs are clamped to
the axis range before evaluation, which keeps the partition of unity
everywhere and leaves the blend defined during transients that exit the
identification box.

Rule indexing is C-order over (p_g axis, p_d axis, e axis): rule
m = i0 * (n1 * n2) + i1 * n2 + i2 pairs membership i0 on the first axis
with i1 on the second and i2 on the third.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataSizeError, DomainError, ParameterError, RankDeficiencyError
from .market import MarketParams, assemble_system_matrices

__all__ = [
    "AxisPartition",
    "FuzzyBox",
    "IdentifiedModel",
    "membership_value",
    "rule_activation",
    "active_rules",
    "activation_matrix",
    "generate_training_data",
    "identify_rule_matrices",
    "blend_dynamics",
    "approximation_error_sup",
    "model_to_text",
    "model_from_text",
]


@dataclass(frozen=True)
class AxisPartition:
    """One premise axis: range [lower, upper] and membership peak locations."""

    lower: float
    upper: float
    peaks: tuple[float, ...]

    def __post_init__(self):
        # normalize to builtin floats so serialized values round-trip via repr
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))
        object.__setattr__(self, "peaks", tuple(float(p) for p in self.peaks))
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise ParameterError("axis bounds must be finite")
        if not self.lower < self.upper:
            raise ParameterError(f"need lower < upper, got [{self.lower}, {self.upper}]")
        pk = np.asarray(self.peaks, dtype=float)
        if len(pk) == 0 or np.any(np.diff(pk) <= 0):
            raise ParameterError("peaks must be strictly increasing and nonempty")
        if len(pk) == 1:
            # constant-membership axis; the single peak just names a location
            if not self.lower <= pk[0] <= self.upper:
                raise ParameterError("single peak must lie inside the range")
        elif pk[0] != self.lower or pk[-1] != self.upper:
            raise ParameterError("peaks must start at lower and end at upper")

    @classmethod
    def uniform(cls, lower: float, upper: float, n: int = 4) -> "AxisPartition":
        if n == 1:
            return cls(lower, upper, (0.5 * (lower + upper),))
        return cls(lower, upper, tuple(np.linspace(lower, upper, n)))

    @property
    def size(self) -> int:
        return len(self.peaks)

    def clamp(self, value: float) -> float:
        return min(max(value, self.lower), self.upper)

    def active_memberships(self, value: float) -> tuple[tuple[int, float], ...]:
        """Nonzero memberships at ``value`` as (index, degree) pairs."""
        if self.size == 1:
            return ((0, 1.0),)
        v = self.clamp(value)
        pk = self.peaks
        j = int(np.searchsorted(pk, v, side="right")) - 1
        j = min(max(j, 0), len(pk) - 2)
        f = (v - pk[j]) / (pk[j + 1] - pk[j])
        return ((j, 1.0 - f), (j + 1, f))


def membership_value(axis: AxisPartition, mf_index: int, value: float) -> float:
    """Degree of membership ``mf_index`` at ``value`` (hat with end shoulders)."""
    if not 0 <= mf_index < axis.size:
        raise IndexError(f"mf_index {mf_index} out of range [0, {axis.size})")
    if not np.isfinite(value):
        raise DomainError(f"membership_value: non-finite input {value!r}")
    for idx, degree in axis.active_memberships(value):
        if idx == mf_index:
            return degree
    return 0.0


@dataclass(frozen=True)
class FuzzyBox:
    """Three premise axes for (p_g, p_d, e)."""

    axes: tuple[AxisPartition, AxisPartition, AxisPartition]

    def __post_init__(self):
        if len(self.axes) != 3:
            raise ParameterError("FuzzyBox needs exactly 3 axes")

    @classmethod
    def default(cls) -> "FuzzyBox":
        """Input space [5,25] x [5,25] x [-10,10], four memberships per axis."""
        return cls((
            AxisPartition.uniform(5.0, 25.0, 4),
            AxisPartition.uniform(5.0, 25.0, 4),
            AxisPartition.uniform(-10.0, 10.0, 4),
        ))

    @classmethod
    def uniform(cls, bounds, counts=(4, 4, 4)) -> "FuzzyBox":
        return cls(tuple(
            AxisPartition.uniform(lo, hi, n)
            for (lo, hi), n in zip(bounds, counts)
        ))

    @property
    def rule_count(self) -> int:
        n0, n1, n2 = (ax.size for ax in self.axes)
        return n0 * n1 * n2

    @property
    def lower(self) -> np.ndarray:
        return np.array([ax.lower for ax in self.axes])

    @property
    def upper(self) -> np.ndarray:
        return np.array([ax.upper for ax in self.axes])

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def rule_vertex(self, m: int) -> np.ndarray:
        """Grid vertex (peak combination) of rule m."""
        n0, n1, n2 = (ax.size for ax in self.axes)
        i0, rest = divmod(m, n1 * n2)
        i1, i2 = divmod(rest, n2)
        return np.array([self.axes[0].peaks[i0], self.axes[1].peaks[i1],
                         self.axes[2].peaks[i2]])


def active_rules(box: FuzzyBox, x) -> tuple[np.ndarray, np.ndarray]:
    """Indices and weights of the at most 8 rules active at ``x``.

    Weights are the normalized activations restricted to their support;
    they sum to 1.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError(f"active_rules: non-finite input {x!r}")
    n1, n2 = box.axes[1].size, box.axes[2].size
    act = [ax.active_memberships(v) for ax, v in zip(box.axes, x)]
    idx = []
    wts = []
    for d0, w0 in act[0]:
        for d1, w1 in act[1]:
            w01 = w0 * w1
            for d2, w2 in act[2]:
                idx.append((d0 * n1 + d1) * n2 + d2)
                wts.append(w01 * w2)
    idx = np.asarray(idx, dtype=int)
    wts = np.asarray(wts, dtype=float)
    total = wts.sum()
    return idx, wts / total


def rule_activation(box: FuzzyBox, x) -> np.ndarray:
    """Normalized activation h_m(x) for every rule (dense vector).

    Product of per-axis memberships, normalized over all rules.  With
    hat partitions the raw products already sum to one; the explicit
    normalization guards against user-supplied non-hat peak layouts.
    """
    idx, wts = active_rules(box, x)
    h = np.zeros(box.rule_count)
    np.add.at(h, idx, wts)
    return h


def activation_matrix(box: FuzzyBox, X: np.ndarray) -> np.ndarray:
    """Row-wise rule activations for a batch of states (vectorized)."""
    X = np.asarray(X, dtype=float)
    L = X.shape[0]
    per_axis = []
    for ax_i, ax in enumerate(box.axes):
        if ax.size == 1:
            per_axis.append(np.ones((L, 1)))
            continue
        pk = np.asarray(ax.peaks)
        v = np.clip(X[:, ax_i], pk[0], pk[-1])
        j = np.clip(np.searchsorted(pk, v, side="right") - 1, 0, ax.size - 2)
        f = (v - pk[j]) / (pk[j + 1] - pk[j])
        w = np.zeros((L, ax.size))
        rows = np.arange(L)
        w[rows, j] = 1.0 - f
        w[rows, j + 1] = f
        per_axis.append(w)
    H = np.einsum("li,lj,lk->lijk", per_axis[0], per_axis[1], per_axis[2])
    H = H.reshape(L, box.rule_count)
    return H / H.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class IdentifiedModel:
    """Per-rule consequent matrices with the fit quality achieved."""

    box: FuzzyBox
    A_list: np.ndarray          # (M, 3, 3)
    sup_error: float            # worst ||residual||^2 / ||x||^2 on the fit samples
    sample_count: int

    def __post_init__(self):
        if self.A_list.shape != (self.box.rule_count, 3, 3):
            raise ParameterError(
                f"A_list shape {self.A_list.shape} does not match rule count "
                f"{self.box.rule_count}")


def generate_training_data(params: MarketParams, box: FuzzyBox, L: int,
                           seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw L states uniformly from the box and evaluate the open drift.

    Targets are y = A x + b (price and disturbance at zero), evaluated
    exactly from the assembled system matrices.  Deterministic in ``seed``.
    """
    if L < box.rule_count:
        raise DataSizeError(
            f"need at least {box.rule_count} samples for {box.rule_count} rules, got {L}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(box.lower, box.upper, size=(L, 3))
    mats = assemble_system_matrices(params)
    Y = X @ mats.A.T + mats.b
    return X, Y


def identify_rule_matrices(samples: tuple[np.ndarray, np.ndarray], box: FuzzyBox,
                           ridge: float = 1e-8, reweight_passes: int = 1) -> IdentifiedModel:
    """Fit the consequent matrices A_m by regularized least squares.

    The residual y_l - sum_m h_m(x_l) A_m x_l is linear in the stacked
    consequents, so the fit is a single linear solve.  Rows are weighted
    by 1/||x_l||, matching the relative error metric the fit is judged
    by; ``reweight_passes`` additional solves re-emphasize the currently
    worst-fit samples, pulling down the sup ratio.  Both steps are
    deterministic.
    """
    X, Y = samples
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.size == 0:
        raise DataSizeError("empty sample set")
    if ridge < 0:
        raise ParameterError(f"ridge must be >= 0, got {ridge}")
    L = X.shape[0]
    M = box.rule_count
    H = activation_matrix(box, X)
    Phi = np.einsum("lm,li->lmi", H, X).reshape(L, 3 * M)
    xx = np.sum(X * X, axis=1)
    if np.any(xx == 0.0):
        raise DomainError("identification samples must be nonzero vectors")

    weights = 1.0 / xx
    G = None
    ratios = None
    for _ in range(1 + max(0, reweight_passes)):
        sw = np.sqrt(weights)
        Phw = Phi * sw[:, None]
        Yw = Y * sw[:, None]
        normal = Phw.T @ Phw + ridge * np.eye(3 * M)
        try:
            cho = np.linalg.cholesky(normal)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError(
                "normal equations are singular; rerun with a positive ridge") from exc
        rhs = Phw.T @ Yw
        G = np.linalg.solve(cho.T, np.linalg.solve(cho, rhs)).T  # 3 x 3M
        R = Y - Phi @ G.T
        ratios = np.sum(R * R, axis=1) / xx
        rmax = ratios.max()
        if rmax > 0:
            weights = (1.0 / xx) * (1.0 + 4.0 * ratios / rmax)

    A_list = G.reshape(3, M, 3).transpose(1, 0, 2).copy()
    return IdentifiedModel(box=box, A_list=A_list, sup_error=float(ratios.max()),
                           sample_count=L)


def blend_dynamics(model: IdentifiedModel, x) -> np.ndarray:
    """Blend value sum_m h_m(x) A_m x of the identified model."""
    x = np.asarray(x, dtype=float)
    idx, wts = active_rules(model.box, x)
    return np.einsum("m,mij,j->i", wts, model.A_list[idx], x)


def approximation_error_sup(model: IdentifiedModel,
                            samples: tuple[np.ndarray, np.ndarray]) -> float:
    """Worst ||y - blend(x)||^2 / ||x||^2 over the samples.

    Zero state vectors are excluded from the supremum (with a warning):
    the relative metric is undefined there.
    """
    X, Y = samples
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    xx = np.sum(X * X, axis=1)
    keep = xx > 0.0
    if not np.all(keep):
        warnings.warn("skipping zero sample vectors in the error supremum")
    if not np.any(keep):
        raise DataSizeError("no nonzero samples to evaluate")
    H = activation_matrix(box=model.box, X=X[keep])
    M = model.box.rule_count
    G = model.A_list.transpose(1, 0, 2).reshape(3, 3 * M)
    Phi = np.einsum("lm,li->lmi", H, X[keep]).reshape(keep.sum(), 3 * M)
    R = Y[keep] - Phi @ G.T
    return float(np.max(np.sum(R * R, axis=1) / xx[keep]))


# --- plain-text serialization -------------------------------------------------
#
# Format: '#'-prefixed header lines, then per-axis peak rows, then one row per
# rule with the rule index followed by the 3x3 consequent in row-major order.
# Floats are written with repr so a round-trip is bit exact.


def model_to_text(model: IdentifiedModel) -> str:
    out = io.StringIO()
    out.write("# fuzzy drift model\n")
    out.write(f"rules = {model.box.rule_count}\n")
    out.write(f"samples = {model.sample_count}\n")
    out.write(f"sup_error = {float(model.sup_error)!r}\n")
    for name, ax in zip(("p_g", "p_d", "e"), model.box.axes):
        out.write(f"axis {name} = {ax.lower!r} {ax.upper!r} : "
                  + " ".join(repr(float(p)) for p in ax.peaks) + "\n")
    for m in range(model.box.rule_count):
        row = " ".join(repr(float(v)) for v in model.A_list[m].ravel())
        out.write(f"{m} {row}\n")
    return out.getvalue()


def model_from_text(text: str) -> IdentifiedModel:
    rules = samples = None
    sup_error = None
    axes = []
    mats = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("rules"):
            rules = int(line.split("=")[1])
        elif line.startswith("samples"):
            samples = int(line.split("=")[1])
        elif line.startswith("sup_error"):
            sup_error = float(line.split("=")[1])
        elif line.startswith("axis"):
            bounds_part, peaks_part = line.split("=")[1].split(":")
            lo, hi = (float(v) for v in bounds_part.split())
            peaks = tuple(float(v) for v in peaks_part.split())
            axes.append(AxisPartition(lo, hi, peaks))
        else:
            parts = line.split()
            mats[int(parts[0])] = np.array([float(v) for v in parts[1:]]).reshape(3, 3)
    if rules is None or len(axes) != 3 or len(mats) != rules:
        raise ParameterError("malformed model file")
    box = FuzzyBox(tuple(axes))
    A_list = np.stack([mats[m] for m in range(rules)])
    return IdentifiedModel(box=box, A_list=A_list, sup_error=sup_error,
                           sample_count=samples)
