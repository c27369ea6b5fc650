"""Experiment driver: config files, ensemble orchestration, data output.

A run is (model, partition, backend, samples, time grid, observables,
seed).  Trajectories are processed in fixed-size batches; every batch
derives its random streams from the run seed and the batch's global
index alone, and batch results are merged in index order, so output is
bitwise reproducible for a given seed no matter how many workers are
used.  Offset averaging and disorder averaging are outer loops recorded
separately in the manifest.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from ._version import __version__
from .compiler import compile_hamiltonian, compile_string, contiguous_partition
from .engine import Engine, IntegrationOptions
from .model import (
    PRESETS,
    DisorderSpec,
    InitialStateSpec,
    SpinModel,
    CouplingTerm,
    FieldTerm,
    bloch_spinor,
    realize_disorder,
    realize_initial_state,
    staggered_signs,
)
from .observables import (
    MomentAccumulator,
    adjacent_pair_supports,
    entanglement_entropy,
    entropy_of_supports,
    support_coordinates,
)
from .sampling import InitialConditions
from . import oracle

BATCH_SIZE = 1024
STREAM_DISORDER, STREAM_INITIAL, STREAM_NOISE = 0, 1, 2
BACKENDS = ("operator", "schwinger", "reduced", "meanfield", "exact")
MAX_DROP_FRACTION = 1e-3


class ConfigError(Exception):
    """Configuration that fails validation; message names the field."""


class DropFractionError(Exception):
    """More than the tolerated fraction of trajectories became unstable."""


class ComparisonError(Exception):
    """Two runs cannot be compared (grid or observable mismatch)."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class TimeGrid:
    t_max: float
    n_points: int
    spacing: str = "linear"
    t_min: float | None = None

    def values(self) -> np.ndarray:
        if self.spacing == "linear":
            return np.linspace(0.0, self.t_max, self.n_points)
        lo = self.t_min if self.t_min is not None else self.t_max * 1e-3
        return np.concatenate([[0.0], np.geomspace(lo, self.t_max, self.n_points - 1)])


@dataclass(frozen=True)
class RunConfig:
    model: SpinModel
    initial: InitialStateSpec
    cluster_size: int
    backend: str
    samples: int
    times: TimeGrid
    observables: tuple[str, ...]
    seed: int = 0
    average_offsets: bool = False
    rtol: float = 1e-8
    atol: float = 1e-10
    antithetic: bool = False
    disorder_mode: str = "per_sample"
    output: str | None = None
    preset_name: str | None = None


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate_config(cfg: RunConfig) -> RunConfig:
    _require(cfg.backend in BACKENDS, f"backend must be one of {BACKENDS}, got {cfg.backend!r}")
    _require(cfg.samples >= 1, "[samples] must be >= 1")
    _require(cfg.times.t_max > 0, "[times] t_max must be > 0")
    _require(cfg.times.n_points >= 2, "[times] n_points must be >= 2")
    _require(cfg.times.spacing in ("linear", "log"), "[times] spacing must be linear or log")
    if cfg.times.spacing == "log":
        _require(cfg.times.n_points >= 3, "[times] log spacing needs n_points >= 3")
    _require(cfg.rtol > 0 and cfg.atol > 0, "[integrator] rtol and atol must be > 0")
    _require(0 <= cfg.seed < 2**64, "[seed] must be a 64-bit unsigned integer")
    _require(1 <= cfg.cluster_size, "[clusters] size must be >= 1")
    _require(cfg.cluster_size <= 8, "[clusters] size above 8 is not supported")
    _require(cfg.disorder_mode in ("per_sample", "fixed"),
             "[sampling] disorder must be per_sample or fixed")
    _require(len(cfg.observables) > 0, "[observables] at least one observable is required")
    n = cfg.model.n_sites
    if cfg.backend == "exact":
        _require(n <= oracle.MAX_SITES,
                 f"backend=exact is limited to {oracle.MAX_SITES} sites, got {n}")
    else:
        _require(cfg.cluster_size <= n, "[clusters] size exceeds the number of sites")
        if cfg.model.periodic:
            _require(n % cfg.cluster_size == 0,
                     "[clusters] size must divide n_sites on a periodic chain")
        if cfg.average_offsets:
            _require(cfg.model.periodic,
                     "[clusters] average_offsets requires a periodic model")
    if cfg.antithetic:
        _require(cfg.backend in ("operator", "reduced", "schwinger"),
                 "[sampling] antithetic pairing needs a noise-sampling backend")
    for name in cfg.observables:
        _parse_observable_name(name, cfg.model)
    return cfg


def _model_from_section(sec: dict):
    """(model, initial, preset_name, default_observables) from [model]."""
    if "preset" in sec:
        name = sec["preset"]
        _require(name in PRESETS, f"[model] unknown preset {name!r}")
        params = {k: v for k, v in sec.items() if k not in ("preset", "initial", "disorder")}
        try:
            preset = PRESETS[name](**params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[model] bad preset parameters: {exc}") from None
        model, initial = preset.model, preset.initial
        if "disorder" in sec:
            dsec = sec["disorder"]
            strength = float(dsec.get("strength", model.disorder.strength if model.disorder else 0.0))
            model = replace(model, disorder=DisorderSpec("uniform_z", strength))
        return model, initial, name, preset.observables

    _require("n_sites" in sec, "[model] needs n_sites (or a preset)")
    n = int(sec["n_sites"])
    fields = []
    for i, f in enumerate(sec.get("fields", [])):
        try:
            fields.append(FieldTerm(int(f["site"]), str(f["axis"]), float(f["coeff"])))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"[model.fields][{i}] needs site, axis, coeff: {exc}") from None
    couplings = []
    for i, cp in enumerate(sec.get("couplings", [])):
        try:
            si, sj = (int(s) for s in cp["sites"])
            axes = cp["axes"]
            couplings.append(CouplingTerm(si, sj, str(axes[0]), str(axes[1]), float(cp["coeff"])))
        except (KeyError, ValueError, IndexError) as exc:
            raise ConfigError(f"[model.couplings][{i}] needs sites, axes, coeff: {exc}") from None
    disorder = None
    if "disorder" in sec:
        disorder = DisorderSpec("uniform_z", float(sec["disorder"].get("strength", 0.0)))
    try:
        model = SpinModel(
            n_sites=n,
            couplings=tuple(couplings),
            fields=tuple(fields),
            disorder=disorder,
            periodic=bool(sec.get("periodic", False)),
            name=str(sec.get("name", "custom")),
        )
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}") from None

    isec = sec.get("initial", {"kind": "neel"})
    kind = isec.get("kind", "neel")
    if kind == "product":
        vecs = isec.get("bloch", [])
        _require(len(vecs) == n, "[model.initial] product state needs one Bloch vector per site")
        spinors = []
        for v in vecs:
            v = np.asarray(v, dtype=float)
            _require(v.shape == (3,) and abs(np.linalg.norm(v) - 1.0) < 1e-9,
                     "[model.initial] Bloch vectors must be unit 3-vectors")
            theta = float(np.arccos(np.clip(v[2], -1.0, 1.0)))
            phi = float(np.arctan2(v[1], v[0]))
            spinors.append(bloch_spinor(theta, phi))
        initial = InitialStateSpec("product", spinors=tuple(spinors))
    else:
        _require(kind in InitialStateSpec.KINDS, f"[model.initial] unknown kind {kind!r}")
        initial = InitialStateSpec(kind)
    return model, initial, None, None


_TOP_KEYS = {"model", "clusters", "backend", "samples", "times", "integrator",
             "sampling", "observables", "seed", "output"}
_SECTION_KEYS = {
    "clusters": {"size", "average_offsets"},
    "times": {"t_max", "n_points", "spacing", "t_min"},
    "integrator": {"rtol", "atol"},
    "sampling": {"antithetic", "disorder"},
}


def _check_keys(doc: dict) -> None:
    for key in doc:
        _require(key in _TOP_KEYS, f"unknown top-level key {key!r}")
    for section, allowed in _SECTION_KEYS.items():
        for key in doc.get(section, {}):
            _require(key in allowed, f"[{section}] unknown key {key!r}")
    model = doc.get("model", {})
    if "preset" not in model:
        for key in model:
            _require(
                key in ("n_sites", "periodic", "name", "fields", "couplings",
                        "disorder", "initial"),
                f"[model] unknown key {key!r}")


def config_from_dict(doc: dict) -> RunConfig:
    _require("model" in doc, "[model] section is required")
    _check_keys(doc)
    model, initial, preset_name, default_obs = _model_from_section(doc["model"])
    if "initial" in doc.get("model", {}) and preset_name is not None:
        kind = doc["model"]["initial"].get("kind", "neel")
        _require(kind in InitialStateSpec.KINDS, f"[model.initial] unknown kind {kind!r}")
        initial = InitialStateSpec(kind)

    csec = doc.get("clusters", {})
    tsec = doc.get("times", {})
    isec = doc.get("integrator", {})
    ssec = doc.get("sampling", {})
    try:
        times = TimeGrid(
            t_max=float(tsec.get("t_max", 10.0)),
            n_points=int(tsec.get("n_points", 21)),
            spacing=str(tsec.get("spacing", "linear")),
            t_min=float(tsec["t_min"]) if "t_min" in tsec else None,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[times] {exc}") from None

    obs = doc.get("observables", None)
    if obs is None:
        obs = list(default_obs) if default_obs else []
    _require(isinstance(obs, list), "[observables] must be a list of names")

    cfg = RunConfig(
        model=model,
        initial=initial,
        cluster_size=int(csec.get("size", model.n_sites)),
        average_offsets=bool(csec.get("average_offsets", False)),
        backend=str(doc.get("backend", "operator")),
        samples=int(doc.get("samples", 1)),
        times=times,
        rtol=float(isec.get("rtol", 1e-8)),
        atol=float(isec.get("atol", 1e-10)),
        antithetic=bool(ssec.get("antithetic", False)),
        disorder_mode=str(ssec.get("disorder", "per_sample")),
        observables=tuple(obs),
        seed=int(doc.get("seed", 0)),
        output=doc.get("output"),
        preset_name=preset_name,
    )
    return validate_config(cfg)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(doc)


def config_canonical_dict(cfg: RunConfig) -> dict:
    """Physics-defining content, used for the manifest hash."""
    model = cfg.model
    return {
        "model": {
            "name": model.name,
            "n_sites": model.n_sites,
            "periodic": model.periodic,
            "fields": [[t.site, t.axis, t.coeff] for t in model.fields],
            "couplings": [
                [t.site_i, t.site_j, t.axis_i, t.axis_j, t.coeff] for t in model.couplings
            ],
            "disorder": None if model.disorder is None
            else [model.disorder.kind, model.disorder.strength],
        },
        "initial": {
            "kind": cfg.initial.kind,
            "spinors": None if cfg.initial.spinors is None
            else [[complex(a).real, complex(a).imag] for s in cfg.initial.spinors for a in s],
        },
        "clusters": {"size": cfg.cluster_size, "average_offsets": cfg.average_offsets},
        "backend": cfg.backend,
        "samples": cfg.samples,
        "times": [cfg.times.t_max, cfg.times.n_points, cfg.times.spacing, cfg.times.t_min],
        "integrator": [cfg.rtol, cfg.atol],
        "sampling": [cfg.antithetic, cfg.disorder_mode],
        "observables": list(cfg.observables),
        "seed": cfg.seed,
    }


def config_digest(cfg: RunConfig) -> str:
    blob = json.dumps(config_canonical_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# observable plans

_SITE_RE = re.compile(r"^s([xyz])_site_(\d+)$")
_CONN_RE = re.compile(r"^connected_(xx|yy|zz)_(\d+)_(\d+)$")


def _parse_observable_name(name: str, model: SpinModel):
    """(kind, payload) for a name; raises ConfigError on bad names."""
    if name == "staggered_magnetization":
        return ("staggered", None)
    if name == "magnetization_z":
        return ("mean_axis", "z")
    if name == "energy":
        return ("energy", None)
    if name == "entropy_adjacent_pairs":
        return ("entropy", None)
    m = _SITE_RE.match(name)
    if m:
        axis, site = m.group(1), int(m.group(2))
        _require(site < model.n_sites, f"observable {name!r}: site {site} out of range")
        return ("site", (site, axis))
    m = _CONN_RE.match(name)
    if m:
        axis = m.group(1)[0]
        i, j = int(m.group(2)), int(m.group(3))
        _require(i < model.n_sites and j < model.n_sites,
                 f"observable {name!r}: site out of range")
        return ("connected", (i, j, axis))
    raise ConfigError(f"unknown observable {name!r}")


@dataclass
class ObservablePlan:
    name: str
    kind: str                     # "mean" | "connected" | "entropy"
    columns: dict = field(default_factory=dict)


@dataclass
class OffsetContext:
    """Everything one partition offset needs to process batches."""

    compiled: object
    engine: Engine
    sampler: InitialConditions
    coords: list
    prod_pairs: list              # (pos_i, pos_j) derived product columns
    energy_terms: tuple | None    # (lin_weights over coords, pair list, pair weights)
    plans: list
    n_columns: int
    entropy_supports: list
    entropy_eps: float = 1e-12


def _build_offset_context(cfg: RunConfig, offset: int) -> OffsetContext:
    model = cfg.model
    part = contiguous_partition(
        model.n_sites, cfg.cluster_size, offset=offset, periodic=model.periodic
    )
    compiled = compile_hamiltonian(model, part)

    coords: list[tuple[int, int]] = []
    cpos: dict[tuple[int, int], int] = {}

    def col(c: int, a: int) -> int:
        key = (c, a)
        if key not in cpos:
            cpos[key] = len(coords)
            coords.append(key)
        return cpos[key]

    def site_col(site: int, axis: str) -> int:
        c, p = part.site_location[site]
        return col(c, compiled.bases[c].single_site_index(p, axis))

    prod_pairs: list[tuple[int, int]] = []
    ppos: dict[tuple[int, int], int] = {}
    plans: list[ObservablePlan] = []
    entropy_supports: list[tuple[int, ...]] = []
    energy = None

    for name in cfg.observables:
        kind, payload = _parse_observable_name(name, model)
        if kind == "staggered":
            signs = staggered_signs(model.n_sites)
            cols = [site_col(s, "z") for s in range(model.n_sites)]
            plans.append(ObservablePlan(name, "mean", {
                "cols": cols, "weights": list(signs / model.n_sites)}))
        elif kind == "mean_axis":
            cols = [site_col(s, payload) for s in range(model.n_sites)]
            plans.append(ObservablePlan(name, "mean", {
                "cols": cols, "weights": [1.0 / model.n_sites] * model.n_sites}))
        elif kind == "site":
            site, axis = payload
            plans.append(ObservablePlan(name, "mean", {
                "cols": [site_col(site, axis)], "weights": [1.0]}))
        elif kind == "energy":
            plans.append(ObservablePlan(name, "mean", {"energy": True}))
            energy = True
        elif kind == "connected":
            i, j, axis = payload
            if i == j:
                ci = site_col(i, axis)
                plans.append(ObservablePlan(name, "connected", {
                    "i": ci, "j": ci, "prod": None}))
                continue
            ci, cj = site_col(i, axis), site_col(j, axis)
            loc_i = part.site_location[i][0]
            loc_j = part.site_location[j][0]
            if loc_i == loc_j:
                merged = compile_string(compiled, (i, j), (axis, axis))
                ((mc, ma),) = merged.items()
                plans.append(ObservablePlan(name, "connected", {
                    "i": ci, "j": cj, "prod": col(mc, ma)}))
            else:
                key = (min(ci, cj), max(ci, cj))
                if key not in ppos:
                    ppos[key] = len(prod_pairs)
                    prod_pairs.append(key)
                plans.append(ObservablePlan(name, "connected", {
                    "i": ci, "j": cj, "prod_pair": ppos[key]}))
        elif kind == "entropy":
            entropy_supports = adjacent_pair_supports(model.n_sites, model.periodic)
            for ca in support_coordinates(compiled, entropy_supports):
                col(*ca)
            plans.append(ObservablePlan(name, "entropy", {}))

    # energy needs every Hamiltonian coordinate plus the coupling products
    energy_terms = None
    if energy:
        lin_cols, lin_w = [], []
        for c, terms in enumerate(compiled.linear):
            for a, w in terms.items():
                lin_cols.append(col(c, a))
                lin_w.append(w)
        e_pairs, e_w = [], []
        for ci_, a, cj_, b, w in compiled.couplings:
            pi, pj = col(ci_, a), col(cj_, b)
            e_pairs.append((pi, pj))
            e_w.append(w)
        energy_terms = (np.array(lin_cols, dtype=np.int64), np.array(lin_w),
                        np.array(e_pairs, dtype=np.int64).reshape(-1, 2), np.array(e_w))

    k = len(coords)
    # column layout: coords, then product columns, then optional energy column
    for plan in plans:
        if plan.kind == "connected" and "prod_pair" in plan.columns:
            plan.columns["prod"] = k + plan.columns.pop("prod_pair")
    n_columns = k + len(prod_pairs) + (1 if energy else 0)
    if energy:
        for plan in plans:
            if plan.columns.get("energy"):
                plan.columns = {"cols": [n_columns - 1], "weights": [1.0]}

    backend = cfg.backend if cfg.backend != "exact" else "operator"
    engine = Engine(
        compiled,
        backend,
        coords=coords,
        options=IntegrationOptions(rtol=cfg.rtol, atol=cfg.atol),
        with_site_disorder=model.disorder is not None,
    )
    sampler = InitialConditions(compiled, cfg.initial, backend, antithetic=cfg.antithetic)
    return OffsetContext(
        compiled=compiled,
        engine=engine,
        sampler=sampler,
        coords=coords,
        prod_pairs=prod_pairs,
        energy_terms=energy_terms,
        plans=plans,
        n_columns=n_columns,
        entropy_supports=entropy_supports,
    )


def run_offsets(cfg: RunConfig) -> list[int]:
    if cfg.average_offsets and cfg.backend != "exact":
        return list(range(cfg.cluster_size))
    return [0]


def _deterministic_sampling(cfg: RunConfig) -> bool:
    per_sample_disorder = cfg.model.disorder is not None and cfg.disorder_mode == "per_sample"
    return not cfg.initial.stochastic and not per_sample_disorder


def effective_samples(cfg: RunConfig) -> int:
    """Mean-field and exact runs of deterministic ensembles need one sample."""
    if cfg.backend in ("meanfield", "exact") and _deterministic_sampling(cfg):
        return 1
    return cfg.samples


def _batch_sizes(total: int) -> list[int]:
    out = [BATCH_SIZE] * (total // BATCH_SIZE)
    if total % BATCH_SIZE:
        out.append(total % BATCH_SIZE)
    return out


def _batch_rng(seed: int, global_batch: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(global_batch, stream))
    return np.random.Generator(np.random.Philox(ss))


def fixed_disorder_offsets(cfg: RunConfig) -> np.ndarray | None:
    """The single shared disorder realization in fixed-disorder mode."""
    if cfg.model.disorder is None:
        return None
    rng = _batch_rng(cfg.seed, 0, STREAM_DISORDER)
    return realize_disorder(cfg.model, rng)


def _batch_disorder(cfg: RunConfig, ctx: OffsetContext, global_batch: int, m: int):
    """Per-trajectory slot constants for one batch, or None when clean."""
    if cfg.model.disorder is None:
        return None
    if cfg.disorder_mode == "fixed":
        const = ctx.engine.slot_const(fixed_disorder_offsets(cfg))
        return np.tile(const, (m, 1))
    rng = _batch_rng(cfg.seed, global_batch, STREAM_DISORDER)
    n_base = m // 2 if cfg.antithetic else m
    consts = np.empty((m, ctx.engine.program.slot_const.size))
    for k in range(n_base):
        const = ctx.engine.slot_const(realize_disorder(cfg.model, rng))
        if cfg.antithetic:
            consts[2 * k] = const
            consts[2 * k + 1] = const
        else:
            consts[k] = const
    return consts


def _extend_columns(ctx: OffsetContext, series: np.ndarray) -> np.ndarray:
    """Append derived product / energy columns to the coordinate series."""
    parts = [series]
    for (pi, pj) in ctx.prod_pairs:
        parts.append((series[..., pi] * series[..., pj])[..., None])
    if ctx.energy_terms is not None:
        lin_cols, lin_w, e_pairs, e_w = ctx.energy_terms
        e = series[..., lin_cols] @ lin_w
        if len(e_w):
            e = e + (series[..., e_pairs[:, 0]] * series[..., e_pairs[:, 1]]) @ e_w
        parts.append(e[..., None])
    return np.concatenate(parts, axis=-1) if len(parts) > 1 else series


def process_batch(cfg: RunConfig, ctx: OffsetContext, global_batch: int, m: int):
    """(count_kept, dropped, s1, s2) moment sums over one batch."""
    rng_init = _batch_rng(cfg.seed, global_batch, STREAM_INITIAL)
    rng_noise = _batch_rng(cfg.seed, global_batch, STREAM_NOISE)
    batch = ctx.sampler.draw(rng_init, rng_noise, m)
    slot_const_batch = _batch_disorder(cfg, ctx, global_batch, m)
    t_eval = cfg.times.values()
    series, statuses = ctx.engine.run(batch, t_eval, slot_const_batch=slot_const_batch)
    ok = statuses == 0
    dropped = int(m - ok.sum())
    v = _extend_columns(ctx, series[ok])
    s1 = v.sum(axis=0)
    s2 = np.einsum("ntk,ntl->tkl", v, v)
    return int(ok.sum()), dropped, s1, s2


# worker-process state: context cache keyed by offset
_WORKER: dict = {}


def _worker_init(cfg: RunConfig) -> None:
    _WORKER["cfg"] = cfg
    _WORKER["ctx"] = {}


def _worker_task(args):
    offset, global_batch, m = args
    cfg = _WORKER["cfg"]
    ctx = _WORKER["ctx"].get(offset)
    if ctx is None:
        ctx = _build_offset_context(cfg, offset)
        _WORKER["ctx"][offset] = ctx
    return (offset, global_batch) + process_batch(cfg, ctx, global_batch, m)


# ---------------------------------------------------------------------------
# assembling results


@dataclass
class SeriesResult:
    name: str
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n: int


def _plan_value_grad(plan: ObservablePlan, mean: np.ndarray, k: int):
    """Value and gradient (for delta-method errors) at each time node."""
    nt = mean.shape[0]
    grad = np.zeros((nt, k))
    if plan.kind == "mean":
        cols = plan.columns["cols"]
        w = np.asarray(plan.columns["weights"])
        value = mean[:, cols] @ w
        for c, wc in zip(cols, w):
            grad[:, c] += wc
        return value, grad
    if plan.kind == "connected":
        i, j = plan.columns["i"], plan.columns["j"]
        prod = plan.columns["prod"]
        if prod is None:  # same site: sigma^2 = identity
            value = 1.0 - mean[:, i] * mean[:, j]
        else:
            value = mean[:, prod] - mean[:, i] * mean[:, j]
            grad[:, prod] += 1.0
        grad[:, i] += -mean[:, j]
        grad[:, j] += -mean[:, i]
        return value, grad
    raise ValueError(f"plan {plan.kind!r} has no closed-form value")


def _offset_results(cfg: RunConfig, ctx: OffsetContext, acc: MomentAccumulator,
                    batch_entropies: list) -> dict:
    times = cfg.times.values()
    mean = acc.mean()
    cov = acc.connected()
    n = acc.count
    out: dict[str, SeriesResult] = {}
    for plan in ctx.plans:
        if plan.kind == "entropy":
            continue
        value, grad = _plan_value_grad(plan, mean, ctx.n_columns)
        if n > 1:
            var = np.einsum("tk,tkl,tl->t", grad, cov, grad)
            se = np.sqrt(np.maximum(var, 0.0) / (n - 1))
        else:
            se = np.zeros_like(value)
        out[plan.name] = SeriesResult(plan.name, times, value, se, n)

    for plan in ctx.plans:
        if plan.kind != "entropy":
            continue
        nt = len(times)
        s_curve = np.empty(nt)
        clip_curve = np.empty(nt)
        for it in range(nt):
            s, clip = entropy_of_supports(
                ctx.compiled, ctx.entropy_supports, ctx.coords,
                mean[it, : len(ctx.coords)],
                acc.second()[it, : len(ctx.coords), : len(ctx.coords)],
                eps=ctx.entropy_eps,
            )
            s_curve[it] = s.mean()
            clip_curve[it] = clip.mean()
        if len(batch_entropies) > 1:
            arr = np.stack(batch_entropies)
            se = arr.std(axis=0, ddof=1) / np.sqrt(arr.shape[0])
        else:
            se = np.zeros(nt)
        out[plan.name] = SeriesResult(plan.name, times, s_curve, se, n)
        out[plan.name + "_clipped"] = SeriesResult(
            plan.name + "_clipped", times, clip_curve, np.zeros(nt), n)
    return out


def _batch_entropy_curve(cfg: RunConfig, ctx: OffsetContext,
                         s1: np.ndarray, s2: np.ndarray, count: int) -> np.ndarray:
    times = cfg.times.values()
    kc = len(ctx.coords)
    curve = np.empty(len(times))
    for it in range(len(times)):
        s, _ = entropy_of_supports(
            ctx.compiled, ctx.entropy_supports, ctx.coords,
            s1[it, :kc] / count, s2[it, :kc, :kc] / count, eps=ctx.entropy_eps,
        )
        curve[it] = s.mean()
    return curve


def _combine_offsets(per_offset: list[dict]) -> dict:
    if len(per_offset) == 1:
        return per_offset[0]
    out = {}
    for name in per_offset[0]:
        parts = [r[name] for r in per_offset]
        mean = np.mean([p.mean for p in parts], axis=0)
        se = np.sqrt(np.sum([p.stderr**2 for p in parts], axis=0)) / len(parts)
        out[name] = SeriesResult(name, parts[0].times, mean, se,
                                 sum(p.n for p in parts))
    return out


@dataclass
class RunResult:
    config: RunConfig
    series: dict
    samples_per_offset: int
    n_offsets: int
    dropped: int
    total_trajectories: int
    wall_time_s: float
    output_dir: str | None = None
    manifest: dict | None = None


def run(cfg: RunConfig, workers: int = 1) -> RunResult:
    cfg = validate_config(cfg)
    t_start = time.monotonic()
    if cfg.backend == "exact":
        result = _run_exact(cfg)
    else:
        result = _run_trajectories(cfg, workers)
    result.wall_time_s = time.monotonic() - t_start
    if cfg.output is not None:
        write_output(result, cfg.output)
    return result


def _run_trajectories(cfg: RunConfig, workers: int) -> RunResult:
    samples = effective_samples(cfg)
    if cfg.antithetic and samples % 2:
        raise ConfigError("[sampling] antithetic pairing needs an even sample count")
    offsets = run_offsets(cfg)
    sizes = _batch_sizes(samples)
    want_entropy = any(name == "entropy_adjacent_pairs" for name in cfg.observables)

    tasks = []
    gb = 0
    for oi, offset in enumerate(offsets):
        for m in sizes:
            tasks.append((offset, gb, m))
            gb += 1

    results: dict[tuple[int, int], tuple] = {}
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init, initargs=(cfg,)
        ) as pool:
            for offset, gbatch, count, dropped, s1, s2 in pool.map(_worker_task, tasks):
                results[(offset, gbatch)] = (count, dropped, s1, s2)
    else:
        _worker_init(cfg)
        for task in tasks:
            offset, gbatch, count, dropped, s1, s2 = _worker_task(task)
            results[(offset, gbatch)] = (count, dropped, s1, s2)

    total = samples * len(offsets)
    total_dropped = sum(r[1] for r in results.values())
    frac = total_dropped / max(1, total)
    if frac > MAX_DROP_FRACTION:
        raise DropFractionError(
            f"{total_dropped} of {total} trajectories "
            f"({100 * frac:.3f}%) were dropped as unstable"
        )

    # merge in deterministic global-batch order, per offset
    per_offset = []
    nt = cfg.times.n_points
    contexts = {}
    for offset in offsets:
        ctx = contexts.get(offset)
        if ctx is None:
            ctx = _build_offset_context(cfg, offset)
            contexts[offset] = ctx
        acc = MomentAccumulator(nt, ctx.n_columns)
        batch_entropies = []
        for key in sorted(k for k in results if k[0] == offset):
            count, dropped, s1, s2 = results[key]
            acc.count += count
            acc.s1 += s1
            acc.s2 += s2
            if want_entropy and count > 0:
                batch_entropies.append(_batch_entropy_curve(cfg, ctx, s1, s2, count))
        per_offset.append(_offset_results(cfg, ctx, acc, batch_entropies))

    series = _combine_offsets(per_offset)
    return RunResult(
        config=cfg,
        series=series,
        samples_per_offset=samples,
        n_offsets=len(offsets),
        dropped=total_dropped,
        total_trajectories=total,
        wall_time_s=0.0,
    )


# ---------------------------------------------------------------------------
# exact backend


def _exact_observable_series(cfg: RunConfig, states: np.ndarray,
                             hamiltonian=None) -> dict:
    """Observable curves for one exactly evolved state history."""
    n = cfg.model.n_sites
    out = {}
    for name in cfg.observables:
        kind, payload = _parse_observable_name(name, cfg.model)
        if kind == "staggered":
            signs = staggered_signs(n)
            vals = sum(
                signs[s] * oracle.expectation_series(
                    states, *oracle.string_masks((s,), ("z",), n), n)
                for s in range(n)
            ) / n
            out[name] = vals
        elif kind == "mean_axis":
            vals = sum(
                oracle.expectation_series(
                    states, *oracle.string_masks((s,), (payload,), n), n)
                for s in range(n)
            ) / n
            out[name] = vals
        elif kind == "site":
            site, axis = payload
            out[name] = oracle.expectation_series(
                states, *oracle.string_masks((site,), (axis,), n), n)
        elif kind == "energy":
            out[name] = np.real(np.einsum(
                "ti,ti->t", states.conj(), (hamiltonian @ states.T).T))
        elif kind == "connected":
            i, j, axis = payload
            mi = oracle.expectation_series(states, *oracle.string_masks((i,), (axis,), n), n)
            if i == j:
                out[name] = 1.0 - mi * mi
            else:
                mj = oracle.expectation_series(states, *oracle.string_masks((j,), (axis,), n), n)
                mij = oracle.expectation_series(
                    states, *oracle.string_masks((i, j), (axis, axis), n), n)
                out[name] = mij - mi * mj
        elif kind == "entropy":
            supports = adjacent_pair_supports(n, cfg.model.periodic)
            s_curve = np.empty(states.shape[0])
            clip_curve = np.empty(states.shape[0])
            for it in range(states.shape[0]):
                vals = [entanglement_entropy(
                    oracle.reduced_density_matrix(states[it], n, sup))
                    for sup in supports]
                s_curve[it] = np.mean([v[0] for v in vals])
                clip_curve[it] = np.mean([v[1] for v in vals])
            out[name] = s_curve
            out[name + "_clipped"] = clip_curve
    return out


def _run_exact(cfg: RunConfig) -> RunResult:
    samples = effective_samples(cfg)
    times = cfg.times.values()
    model = cfg.model

    fixed_offsets = None
    if model.disorder is not None and cfg.disorder_mode == "fixed":
        fixed_offsets = fixed_disorder_offsets(cfg)

    accum: dict[str, list] = {}

    def accumulate(curves: dict):
        for name, vals in curves.items():
            accum.setdefault(name, []).append(np.asarray(vals))

    done = 0
    for gb, m in enumerate(_batch_sizes(samples)):
        rng_dis = _batch_rng(cfg.seed, gb, STREAM_DISORDER)
        rng_init = _batch_rng(cfg.seed, gb, STREAM_INITIAL)
        for _ in range(m):
            model_r = model
            if model.disorder is not None:
                offs = fixed_offsets if fixed_offsets is not None \
                    else realize_disorder(model, rng_dis)
                model_r = model.with_extra_fields(
                    tuple(FieldTerm(s, "z", float(offs[s])) for s in range(model.n_sites)))
            state = realize_initial_state(cfg.initial, model.n_sites,
                                          rng_init if cfg.initial.stochastic else None)
            psi0 = oracle.product_state_vector(state)
            h = oracle.sparse_hamiltonian(model_r)
            states = oracle.evolve(h, psi0, times)
            accumulate(_exact_observable_series(cfg, states, hamiltonian=h))
            done += 1

    series = {}
    for name, curves in accum.items():
        arr = np.stack(curves)
        mean = arr.mean(axis=0)
        if arr.shape[0] > 1:
            se = arr.std(axis=0, ddof=1) / np.sqrt(arr.shape[0])
        else:
            se = np.zeros_like(mean)
        series[name] = SeriesResult(name, times, mean, se, arr.shape[0])

    return RunResult(
        config=cfg,
        series=series,
        samples_per_offset=done,
        n_offsets=1,
        dropped=0,
        total_trajectories=done,
        wall_time_s=0.0,
    )


# ---------------------------------------------------------------------------
# output files, manifest, comparison


def write_output(result: RunResult, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    cfg = result.config
    index = {}
    for name, sr in sorted(result.series.items()):
        fname = f"{name}.dat"
        path = os.path.join(out_dir, fname)
        data = np.column_stack([
            sr.times, sr.mean, sr.stderr, np.full(len(sr.times), sr.n)])
        header = "time mean stderr n"
        np.savetxt(path, data, fmt="%.17g", header=header)
        index[name] = fname
    manifest = {
        "schema": 1,
        "code_version": __version__,
        "config_hash": config_digest(cfg),
        "seed": cfg.seed,
        "backend": cfg.backend,
        "preset": cfg.preset_name,
        "cluster_size": cfg.cluster_size,
        "observables": index,
        "requested_samples": cfg.samples,
        "samples_per_offset": result.samples_per_offset,
        "n_offsets": result.n_offsets,
        "disorder_mode": cfg.disorder_mode if cfg.model.disorder is not None else None,
        "dropped_trajectories": result.dropped,
        "total_trajectories": result.total_trajectories,
        "drop_fraction": result.dropped / max(1, result.total_trajectories),
        "wall_time_s": result.wall_time_s,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    result.output_dir = out_dir
    result.manifest = manifest


def read_series(out_dir: str) -> dict:
    path = os.path.join(out_dir, "manifest.json")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise ComparisonError(f"cannot read manifest in {out_dir}: {exc}") from None
    series = {}
    for name, fname in manifest["observables"].items():
        data = np.loadtxt(os.path.join(out_dir, fname), ndmin=2)
        series[name] = SeriesResult(
            name, data[:, 0], data[:, 1], data[:, 2], int(data[0, 3]))
    return series


def compare_series(a: SeriesResult, b: SeriesResult) -> dict:
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, atol=1e-12):
        raise ComparisonError(f"time grids differ for observable {a.name!r}")
    diff = a.mean - b.mean
    comb = np.sqrt(a.stderr**2 + b.stderr**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        se_units = np.abs(diff) / comb
    se_units = np.where(comb > 0, se_units, np.where(diff == 0, 0.0, np.inf))
    return {
        "max_abs": float(np.max(np.abs(diff))),
        "rms": float(np.sqrt(np.mean(diff**2))),
        "max_se_units": float(np.max(se_units)),
    }


def compare_runs(dir_a: str, dir_b: str, max_se: float | None = None,
                 max_abs: float | None = None) -> dict:
    sa = read_series(dir_a)
    sb = read_series(dir_b)
    common = sorted(set(sa) & set(sb))
    if not common:
        raise ComparisonError("runs share no observables")
    report = {"observables": {}, "pass": True}
    for name in common:
        metrics = compare_series(sa[name], sb[name])
        ok = True
        if max_se is not None and metrics["max_se_units"] > max_se:
            ok = False
        if max_abs is not None and metrics["max_abs"] > max_abs:
            ok = False
        metrics["pass"] = ok
        report["observables"][name] = metrics
        report["pass"] = report["pass"] and ok
    return report
