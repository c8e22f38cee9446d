"""Measured training profiles and the ground-truth interference/power model.

The embedded database holds exclusive 8xV100 runs of four CNNs and six
co-located job sets. Anything not measured is served by a small fitted
fallback model (:class:`FallbackModel`).

Two epoch-time notions coexist:

* ``JobProfile.epoch_time`` is the reported (rounded) average epoch time.
* ``JobProfile.sim_epoch_time`` is ``jct / n_epochs``; the simulator uses it
  for exclusive runs so that a lone job finishes exactly at its measured JCT.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.optimize import nnls

from .errors import FitError, ProfileParseError, ProfileValidationError, UnknownModelError

DEFAULT_GPU_COUNT = 8
ENERGY_TOLERANCE = 0.005
EPOCH_TOLERANCE = 0.02


@dataclass(frozen=True)
class JobProfile:
    model_name: str
    avg_power: float  # W
    total_energy: float  # kWh
    jct: float  # h
    epoch_time: float  # h
    n_epochs: int
    avg_mem_util: float
    max_mem_util: float
    avg_gpu_util: float
    max_gpu_util: float
    gpu_count: int = DEFAULT_GPU_COUNT

    @property
    def sim_epoch_time(self) -> float:
        return self.jct / self.n_epochs


@dataclass(frozen=True)
class CoLocationProfile:
    model_set: tuple[str, ...]  # sorted multiset
    avg_power: float
    total_energy: float
    avg_jct: float
    avg_epoch_time: float | None
    avg_mem_util: float
    max_mem_util: float
    avg_gpu_util: float
    max_gpu_util: float
    gpu_count: int = DEFAULT_GPU_COUNT


@dataclass(frozen=True)
class FallbackModel:
    """Linear slowdown plus additive power model for unmeasured job sets.

    ``slowdown(S) = 1 + c_util * max(0, sum_util - saturation) / 100 + c_count * (|S| - 1)``
    ``power(S) = base + sum(p_j - base)``, clamped to ``[base, peak_power]``.
    """

    base_power: float
    slowdown_coeff_util: float
    slowdown_coeff_count: float
    util_saturation: float
    safety_margin: float = 0.10
    peak_power: float = 3000.0

    def __post_init__(self):
        if min(self.base_power, self.slowdown_coeff_util, self.slowdown_coeff_count) < 0:
            raise FitError("fallback coefficients must be non-negative")
        if not 0 < self.util_saturation <= 100:
            raise FitError(f"util_saturation must lie in (0, 100], got {self.util_saturation}")

    def slowdown(self, sum_util: float, n_jobs: int) -> float:
        over = max(0.0, sum_util - self.util_saturation) / 100.0
        return 1.0 + self.slowdown_coeff_util * over + self.slowdown_coeff_count * (n_jobs - 1)

    def power(self, exclusive_powers: Iterable[float]) -> float:
        raw = self.base_power + sum(p - self.base_power for p in exclusive_powers)
        return min(max(raw, self.base_power), self.peak_power)


def _key(models: Iterable[str]) -> tuple[str, ...]:
    return tuple(sorted(models))


@dataclass
class ProfileDb:
    exclusive: dict[tuple[str, int], JobProfile]
    colocated: dict[tuple[tuple[str, ...], int], CoLocationProfile]
    gpu_type: str = "V100"
    source: str = "embedded"
    _fallback_override: FallbackModel | None = field(default=None, repr=False)

    @property
    def models(self) -> list[str]:
        return sorted({m for m, _ in self.exclusive})

    def profile(self, model: str, gpu_count: int = DEFAULT_GPU_COUNT) -> JobProfile:
        try:
            return self.exclusive[(model, gpu_count)]
        except KeyError:
            raise UnknownModelError(f"no exclusive profile for {model!r} with {gpu_count} GPUs") from None

    def has_profile(self, model: str, gpu_count: int = DEFAULT_GPU_COUNT) -> bool:
        return (model, gpu_count) in self.exclusive

    def colocation(self, models: Iterable[str], gpu_count: int = DEFAULT_GPU_COUNT) -> CoLocationProfile | None:
        return self.colocated.get((_key(models), gpu_count))

    @cached_property
    def fitted_fallback(self) -> FallbackModel:
        return fit_fallback(self)

    @property
    def fallback(self) -> FallbackModel:
        if self._fallback_override is not None:
            return self._fallback_override
        return self.fitted_fallback

    def with_fallback(self, model: FallbackModel) -> ProfileDb:
        return ProfileDb(self.exclusive, self.colocated, self.gpu_type, self.source, model)

    def set_epoch_time(self, prof: CoLocationProfile) -> float:
        """Epoch time used for every member of a measured set."""
        if prof.avg_epoch_time is not None:
            return prof.avg_epoch_time
        # Per-job times were not recordable for this set; spread the average JCT evenly.
        n = np.mean([self.profile(m, prof.gpu_count).n_epochs for m in prof.model_set])
        return prof.avg_jct / float(n)

    def set_power(self, prof: CoLocationProfile) -> float:
        """Power the simulator draws while ``prof``'s set is resident.

        Rows with an epoch time finish together, so the reported average power
        already integrates to the reported energy. For the remaining rows the
        jobs finished staggered; holding all members to the average JCT needs
        the energy-consistent power ``E / avg_jct`` to keep total energy right.
        """
        if prof.avg_epoch_time is not None:
            return prof.avg_power
        return prof.total_energy * 1000.0 / prof.avg_jct


# --------------------------------------------------------------------------- loading


def _num(rec: dict, name: str, where: str, *, optional: bool = False) -> float | None:
    if name not in rec or rec[name] is None:
        if optional:
            return None
        raise ProfileParseError(f"{where}: missing field {name!r}")
    val = rec[name]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ProfileParseError(f"{where}: field {name!r} must be a number, got {val!r}")
    return float(val)


def _utils(rec: dict, where: str) -> dict[str, float]:
    out = {k: _num(rec, k, where) for k in ("avg_mem_util", "max_mem_util", "avg_gpu_util", "max_gpu_util")}
    for kind in ("mem", "gpu"):
        lo, hi = out[f"avg_{kind}_util"], out[f"max_{kind}_util"]
        if not 0 <= lo <= hi <= 100:
            raise ProfileValidationError(f"{where}: need 0 <= avg_{kind}_util <= max_{kind}_util <= 100")
    return out


def _check_energy(where: str, power: float, hours: float, energy: float) -> None:
    implied = power * hours / 1000.0
    if abs(implied - energy) > ENERGY_TOLERANCE * energy:
        raise ProfileValidationError(
            f"{where}: total energy {energy} kWh disagrees with power x time = {implied:.3f} kWh"
        )


def parse_profiles(doc: dict, source: str = "<memory>") -> ProfileDb:
    if not isinstance(doc, dict) or "exclusive" not in doc or "colocated" not in doc:
        raise ProfileParseError(f"{source}: expected an object with 'exclusive' and 'colocated' arrays")

    exclusive: dict[tuple[str, int], JobProfile] = {}
    for i, rec in enumerate(doc["exclusive"]):
        where = f"{source}: exclusive[{i}]"
        if not isinstance(rec, dict) or not isinstance(rec.get("model"), str):
            raise ProfileParseError(f"{where}: missing field 'model'")
        where = f"{where} ({rec['model']})"
        gpu_count = int(rec.get("gpu_count", DEFAULT_GPU_COUNT))
        jct = _num(rec, "jct_h", where)
        epoch = _num(rec, "epoch_time_h", where)
        n_epochs = rec.get("n_epochs")
        n_epochs = int(n_epochs) if n_epochs is not None else int(round(jct / epoch))
        prof = JobProfile(
            model_name=rec["model"],
            avg_power=_num(rec, "avg_power_w", where),
            total_energy=_num(rec, "total_energy_kwh", where),
            jct=jct,
            epoch_time=epoch,
            n_epochs=n_epochs,
            gpu_count=gpu_count,
            **_utils(rec, where),
        )
        _check_energy(where, prof.avg_power, prof.jct, prof.total_energy)
        if abs(prof.n_epochs * prof.epoch_time - prof.jct) > EPOCH_TOLERANCE * prof.jct:
            raise ProfileValidationError(f"{where}: n_epochs x epoch_time is more than 2% off the JCT")
        if (prof.model_name, gpu_count) in exclusive:
            raise ProfileValidationError(f"{where}: duplicate profile")
        exclusive[(prof.model_name, gpu_count)] = prof

    colocated: dict[tuple[tuple[str, ...], int], CoLocationProfile] = {}
    for i, rec in enumerate(doc["colocated"]):
        where = f"{source}: colocated[{i}]"
        models = rec.get("model_set") if isinstance(rec, dict) else None
        if not isinstance(models, list) or not all(isinstance(m, str) for m in models):
            raise ProfileParseError(f"{where}: missing field 'model_set'")
        where = f"{where} ({'&'.join(models)})"
        if len(models) < 2:
            raise ProfileValidationError(f"{where}: a co-location set needs at least two jobs")
        gpu_count = int(rec.get("gpu_count", DEFAULT_GPU_COUNT))
        for m in models:
            if (m, gpu_count) not in exclusive:
                raise ProfileValidationError(f"{where}: member {m!r} has no exclusive profile")
        prof = CoLocationProfile(
            model_set=_key(models),
            avg_power=_num(rec, "avg_power_w", where),
            total_energy=_num(rec, "total_energy_kwh", where),
            avg_jct=_num(rec, "avg_jct_h", where),
            avg_epoch_time=_num(rec, "avg_epoch_time_h", where, optional=True),
            gpu_count=gpu_count,
            **_utils(rec, where),
        )
        if prof.avg_epoch_time is not None:
            _check_energy(where, prof.avg_power, prof.avg_jct, prof.total_energy)
        else:
            # staggered finishes: the energy-implied makespan can only exceed the mean JCT
            makespan = prof.total_energy * 1000.0 / prof.avg_power
            if makespan < prof.avg_jct * (1 - ENERGY_TOLERANCE):
                raise ProfileValidationError(
                    f"{where}: energy-implied makespan {makespan:.2f} h is shorter than the average JCT"
                )
        colocated[(prof.model_set, gpu_count)] = prof

    return ProfileDb(exclusive, colocated, gpu_type=doc.get("gpu_type", "V100"), source=source)


def load_profiles(path: str | Path | None = None) -> ProfileDb:
    """Load a profile JSON file; ``None`` or ``"embedded"`` gives the built-in tables."""
    if path is None or str(path) == "embedded":
        text = resources.files("eaco_sim").joinpath("data/default_profiles.json").read_text()
        source = "embedded"
    else:
        text = Path(path).read_text()
        source = str(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileParseError(f"{source}: invalid JSON ({exc})") from exc
    return parse_profiles(doc, source)


_DEFAULT_DB: ProfileDb | None = None


def default_db() -> ProfileDb:
    global _DEFAULT_DB
    if _DEFAULT_DB is None:
        _DEFAULT_DB = load_profiles()
    return _DEFAULT_DB


def exclusive_profile(db: ProfileDb, model: str, gpu_count: int = DEFAULT_GPU_COUNT) -> JobProfile:
    return db.profile(model, gpu_count)


# --------------------------------------------------------------------------- fitting


def fit_fallback(
    db: ProfileDb,
    safety_margin: float = 0.10,
    peak_power: float = 3000.0,
    saturation_step: float = 0.05,
) -> FallbackModel:
    """Least-squares fit of the fallback model against the co-location table.

    Slowdown rows use the set epoch time (derived from the average JCT when
    the table has none) against the mean reported exclusive epoch time of the
    members. The saturation point is grid-searched; for each grid value the two
    linear coefficients come from non-negative least squares on relative error.
    """
    slow_rows = []
    power_rows = []
    for prof in db.colocated.values():
        members = [db.profile(m, prof.gpu_count) for m in prof.model_set]
        excl = float(np.mean([p.epoch_time for p in members]))
        sum_util = sum(p.avg_gpu_util for p in members)
        slow_rows.append((excl, sum_util, len(members), db.set_epoch_time(prof)))
        power_rows.append((sum(p.avg_power for p in members), len(members) - 1, prof.avg_power))

    if len(slow_rows) < 3:
        raise FitError(f"need at least 3 co-location rows to fit 3 slowdown coefficients, got {len(slow_rows)}")

    excl = np.array([r[0] for r in slow_rows])
    sum_util = np.array([r[1] for r in slow_rows])
    extra = np.array([r[2] - 1 for r in slow_rows], dtype=float)
    observed = np.array([r[3] for r in slow_rows])
    w = 1.0 / observed
    rhs = w * (observed - excl)

    best = None
    n_steps = int(round(100.0 / saturation_step))
    for k in range(1, n_steps + 1):
        sat = k * saturation_step
        over = np.maximum(0.0, sum_util - sat) / 100.0
        design = np.column_stack([w * excl * over, w * excl * extra])
        coeffs, resid = nnls(design, rhs)
        if best is None or resid < best[0] - 1e-12:
            best = (resid, sat, coeffs)
    _, sat, (c_util, c_count) = best

    # base power: minimise sum(((S - k*B - p) / p)^2), closed form
    num = sum(k * (s - p) / p**2 for s, k, p in power_rows)
    den = sum(k * k / p**2 for s, k, p in power_rows)
    if den == 0:
        raise FitError("no multi-job power rows to fit base power")
    base = num / den

    return FallbackModel(
        base_power=float(base),
        slowdown_coeff_util=float(c_util),
        slowdown_coeff_count=float(c_count),
        util_saturation=float(sat),
        safety_margin=safety_margin,
        peak_power=peak_power,
    )


# --------------------------------------------------------------------------- ground truth


def _members(db: ProfileDb, coset: Iterable[str], gpu_count: int) -> list[JobProfile]:
    models = list(coset)
    if not models:
        raise ValueError("co-location set must not be empty")
    return [db.profile(m, gpu_count) for m in models]


def ground_truth_epoch_time(db: ProfileDb, model: str, coset: Iterable[str], gpu_count: int = DEFAULT_GPU_COUNT) -> float:
    """Steady-state epoch time (h) of ``model`` while sharing GPUs with ``coset``."""
    coset = _key(coset)
    if model not in coset:
        raise ValueError(f"{model!r} is not a member of {coset}")
    members = _members(db, coset, gpu_count)
    if len(coset) == 1:
        return members[0].sim_epoch_time
    prof = db.colocation(coset, gpu_count)
    if prof is not None:
        return db.set_epoch_time(prof)
    fb = db.fallback
    sd = fb.slowdown(sum(p.avg_gpu_util for p in members), len(members))
    return db.profile(model, gpu_count).sim_epoch_time * sd


def ground_truth_power(db: ProfileDb, coset: Iterable[str], gpu_count: int = DEFAULT_GPU_COUNT) -> float:
    """Whole-node power (W) while ``coset`` trains on one GPU set."""
    coset = _key(coset)
    members = _members(db, coset, gpu_count)
    if len(coset) == 1:
        return members[0].avg_power
    prof = db.colocation(coset, gpu_count)
    if prof is not None:
        return db.set_power(prof)
    return db.fallback.power(p.avg_power for p in members)


def ground_truth_util(db: ProfileDb, coset: Iterable[str], gpu_count: int = DEFAULT_GPU_COUNT) -> tuple[float, float]:
    """(core, memory) utilisation percent shown by every GPU of the set."""
    coset = _key(coset)
    members = _members(db, coset, gpu_count)
    if len(coset) == 1:
        return members[0].avg_gpu_util, members[0].avg_mem_util
    prof = db.colocation(coset, gpu_count)
    if prof is not None:
        return prof.avg_gpu_util, prof.avg_mem_util
    core = min(100.0, sum(p.avg_gpu_util for p in members))
    mem = min(100.0, sum(p.avg_mem_util for p in members))
    return core, mem


def energy_savings(db: ProfileDb, coset: Iterable[str], gpu_count: int = DEFAULT_GPU_COUNT) -> float:
    """Fractional energy saved by a measured set vs. running its members alone."""
    prof = db.colocation(coset, gpu_count)
    if prof is None:
        raise UnknownModelError(f"no co-location profile for {sorted(coset)}")
    alone = sum(db.profile(m, gpu_count).total_energy for m in prof.model_set)
    return (alone - prof.total_energy) / alone
