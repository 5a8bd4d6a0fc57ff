"""End-to-end registration run: stages in fixed order, artifacts, evaluation report."""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..ca.cnn import CAState, evolve_to_segmentation, majority_gene
from ..ca.ga import GAParams, inverse_evolve_ga
from ..ca.maca import design_maca, pef_bits, run_to_attractor, to_int
from ..ca.ruledb import RuleEntry, ShapeRuleDB
from ..coreset import PointSet, build_line_coreset, diameter, ga_select_approximation, mask_outline, width
from ..correspondences import CorrespondenceSet
from ..imaging import canny, load_image, reduce, save_image
from ..registration import fit_weighted_mean, interpret_objects, prune_outliers, refine_correspondences
from ..resampling import (
    ResamplingRules, adaptive_resample, classify_features_for_resampling, source_coordinates, valid_mask,
)
from ..segmentation.svrf import LabelField, segment_objects
from ..sift import SiftParams, match_descriptors, sift
from .config import RunConfig
from .metrics import nccc, rmse, time_category
from .synth import ParametricWarp, generate_synthetic_pair, synthetic_scene

STAGES = ("canny", "ca_objects", "segmentation", "coreset", "shape_model",
          "sift", "match", "transform", "resample", "evaluate")
DESCRIPTOR_BITS = 8
CHECKER = 32


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name (CLI exit code 3)."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class EvalReport:
    nccc: float | None  # paper convention, clamped to [0, 1]
    nccc_raw: float | None
    nccc_before: float | None  # paper convention, unregistered slave vs master
    rmse: float | None
    wall_time: float
    time_category: str
    stage_timings: dict
    matches_before_refinement: int
    matches_after_refinement: int
    control_points: int
    details: dict = field(default_factory=dict)

    TIMING_KEYS = ("wall_time", "time_category", "stage_timings")

    def deterministic_dict(self) -> dict:
        d = asdict(self)
        for k in self.TIMING_KEYS:
            d.pop(k)
        return d

    def timing_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.TIMING_KEYS}

    def summary(self) -> str:
        def f(v, fmt):
            return "n/a" if v is None else format(v, fmt)

        lines = [
            f"NCCC (paper convention) : {f(self.nccc, '.4f')}",
            f"NCCC (raw)              : {f(self.nccc_raw, '.4f')}",
            f"NCCC before registration: {f(self.nccc_before, '.4f')}",
            f"RMSE at truth points    : {f(self.rmse, '.4f')} px",
            f"wall time               : {self.wall_time:.2f} s ({self.time_category})",
            f"matches                 : {self.matches_before_refinement} raw, "
            f"{self.matches_after_refinement} after refinement, {self.control_points} control points",
            "stage timings:",
        ]
        lines += [f"  {k:<13s} {v:8.3f} s" for k, v in self.stage_timings.items()]
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        (out / "report.json").write_text(json.dumps(self.deterministic_dict(), indent=2, sort_keys=True) + "\n")
        (out / "timing.json").write_text(json.dumps(self.timing_dict(), indent=2) + "\n")
        (out / "summary.txt").write_text(self.summary())


@dataclass
class Side:
    """Per-image intermediate results."""

    image: np.ndarray
    work: np.ndarray = None
    edges: object = None
    objects: np.ndarray = None
    labels: LabelField = None
    coresets: dict = field(default_factory=dict)
    patterns: dict = field(default_factory=dict)
    interpreted: object = None
    features: list = None


@dataclass
class Run:
    cfg: RunConfig
    out: Path
    master: Side = None
    slave: Side = None
    truth: CorrespondenceSet | None = None
    factor: int = 1
    timings: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    gene: object = None
    maca: object = None
    db: ShapeRuleDB = None
    matches: CorrespondenceSet = None
    refined: CorrespondenceSet = None
    controls: CorrespondenceSet = None
    transform: object = None
    coords: np.ndarray = None
    registered: np.ndarray = None

    def sides(self):
        return (("master", self.master), ("slave", self.slave))


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------

def load_inputs(run: Run) -> None:
    cfg = run.cfg
    syn = cfg["synthetic"]
    if syn is not None:
        img = synthetic_scene(int(syn["size"]), int(syn["scene_seed"]))
        warp_ = ParametricWarp(tx=syn["tx"], ty=syn["ty"], rotation=syn["rotation"], scale=syn["scale"],
                               bump_amplitude=syn["bump_amplitude"], bump_sigma=syn["bump_sigma"],
                               bump_angle=syn["bump_angle"])
        pair = generate_synthetic_pair(img, warp_, syn["noise_sigma"], rng_seed=cfg.seed)
        master, slave, truth = pair.master, np.clip(pair.slave, 0.0, 1.0), pair.truth
        save_image(master, run.out / "master.png", 16)
        save_image(slave, run.out / "slave.png", 16)
        truth.to_csv(run.out / "truth.csv")
    else:
        master, slave = load_image(cfg["master"]), load_image(cfg["slave"])
        truth = CorrespondenceSet.from_csv(cfg["truth"], source="truth") if cfg["truth"] else None
    run.master, run.slave, run.truth = Side(master), Side(slave), truth
    run.factor = 1
    n = max(master.shape)
    while n > cfg["ca"]["work_size"]:
        n = (n + 1) // 2
        run.factor *= 2


def _work(img: np.ndarray, factor: int) -> np.ndarray:
    while factor > 1:
        img = reduce(img)
        factor //= 2
    return img


def _upsample_labels(lab: np.ndarray, factor: int, shape) -> np.ndarray:
    r = np.minimum(np.arange(shape[0]) // factor, lab.shape[0] - 1)
    c = np.minimum(np.arange(shape[1]) // factor, lab.shape[1] - 1)
    return lab[np.ix_(r, c)]


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_canny(run: Run) -> None:
    c = run.cfg["canny"]
    for name, side in run.sides():
        side.edges = canny(side.image, c["sigma"], c["low"], c["high"])
        save_image(side.edges.mask.astype(float), run.out / f"edges_{name}.png")
        run.details[f"edge_pixels_{name}"] = int(side.edges.mask.sum())


def _object_seed(work: np.ndarray, z: float) -> np.ndarray:
    return np.abs(work - np.median(work)) > z * work.std()


def stage_ca_objects(run: Run) -> None:
    """Abstract objects: deviation-from-median seeds cleaned by a CNN rule."""
    c = run.cfg["ca"]
    for _, side in run.sides():
        side.work = _work(side.image, run.factor)
    gene = majority_gene()
    if c["evolve"]:
        seed = _object_seed(run.master.work, c["object_z"])
        target = ndimage.binary_opening(seed, structure=np.ones((3, 3), bool))
        ga = GAParams(population=c["ga_population"], generations=c["ga_generations"], max_steps=c["max_steps"])
        res = inverse_evolve_ga(CAState.from_mask(seed), target, ga, rng_seed=run.cfg.seed, initial=(gene,))
        gene = res.gene
        res.write_log(run.out / "ga_log.csv")
        run.details["ca_ga_fitness"] = float(res.fitness)
    run.gene = gene
    run.details["ca_gene"] = gene.to_hex()
    for name, side in run.sides():
        seed = _object_seed(side.work, c["object_z"])
        u = np.where(seed, 1.0, -1.0)
        ev = evolve_to_segmentation(CAState.from_mask(seed), gene, u, max_steps=c["max_steps"])
        side.objects = ev.mask
        run.details[f"ca_converged_{name}"] = bool(ev.converged)
        save_image(ev.mask.astype(float), run.out / f"objects_{name}.png")


def stage_segmentation(run: Run) -> None:
    s = run.cfg["segmentation"]
    for name, side in run.sides():
        side.labels = segment_objects(side.work, side.objects, beta=s["beta"], E=s["E"], mu=s["mu"],
                                      max_train=s["max_train"], rng_seed=run.cfg.seed,
                                      max_sweeps=s["max_sweeps"], max_objects=s["max_objects"])
        side.labels.save(run.out / f"labels_{name}.png")
        run.details[f"labels_{name}"] = int(side.labels.n_labels)


def stage_coreset(run: Run) -> None:
    """Boundary coreset per labelled object, chosen among candidate k values."""
    c = run.cfg["coreset"]
    ks = c["k"] if isinstance(c["k"], list) else [c["k"]]
    run.maca = design_maca(DESCRIPTOR_BITS, run.cfg.seed, m=run.cfg["maca"]["m"])
    sizes = {}
    for name, side in run.sides():
        lab = side.labels.labels
        for l in range(1, side.labels.n_labels):
            mask = lab == l
            ys, xs = np.nonzero(mask_outline(mask))
            if len(xs) < 3:
                continue
            ps = PointSet(np.column_stack([xs, ys]).astype(float), provenance=l)
            cands = [build_line_coreset(ps, k, c["epsilon"]) for k in ks]
            best = ga_select_approximation(cands, mask, run.maca, rng_seed=run.cfg.seed)
            side.coresets[l] = best
            best.to_csv(run.out / f"coreset_{name}_{l}.csv")
            sizes[f"{name}_{l}"] = [len(ps), len(best)]
    run.details["coreset_sizes"] = sizes


def _gray(v: int, bits: int) -> list[int]:
    g = v ^ (v >> 1)
    return [(g >> b) & 1 for b in range(bits)]


def object_descriptor(mask: np.ndarray, work: np.ndarray, outline: np.ndarray) -> tuple[int, ...]:
    """Rotation-invariant 8-bit pattern: area, mean intensity, elongation (Gray coded)."""
    area = int(np.clip(np.log2(max(int(mask.sum()), 1)) / 2, 0, 7))
    inten = int(np.clip(work[mask].mean() * 8, 0, 7))
    if len(outline) >= 2 and diameter(outline) > 0:
        elong = int(np.clip(width(outline) / diameter(outline) * 4, 0, 3))
    else:
        elong = 0
    return tuple(_gray(area, 3) + _gray(inten, 3) + _gray(elong, 2))


def stage_shape_model(run: Run) -> None:
    """MACA classes for every object; the master's classes populate the rule DB."""
    cfg = run.maca
    for _, side in run.sides():
        lab = side.labels.labels
        side.patterns = {l: object_descriptor(lab == l, side.work, cs.outline())
                         for l, cs in side.coresets.items()}
    db = ShapeRuleDB()
    for l in sorted(run.master.patterns):
        state = run_to_attractor(to_int(run.master.patterns[l]), cfg).state
        sig = pef_bits(state, cfg.pef_positions)
        if db.label_for(sig) is None:
            db.add(RuleEntry("shape-" + "".join(map(str, sig)), run.gene, cfg, sig))
    db.save(run.out / "rules.db")
    run.db = db
    for name, side in run.sides():
        full = _upsample_labels(side.labels.labels, run.factor, side.image.shape)
        side.interpreted = interpret_objects(full, side.patterns, cfg, db)
        run.details[f"classes_{name}"] = {str(k): v for k, v in sorted(side.interpreted.classes.items())}


def stage_sift(run: Run) -> None:
    s = run.cfg["sift"]
    params = SiftParams(contrast_thresh=s["contrast_thresh"], edge_ratio=s["edge_ratio"])
    for name, side in run.sides():
        side.features = sift(side.image, params)
        run.details[f"keypoints_{name}"] = len(side.features)


def stage_match(run: Run) -> None:
    r = run.cfg["refine"]
    p = run.cfg["prune"]
    run.matches = match_descriptors(run.slave.features, run.master.features, run.cfg["sift"]["ratio"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        refined = refine_correspondences(run.matches, run.slave.interpreted, run.master.interpreted,
                                         run.db, r["threshold"])
    fallback = len(refined) < r["min_pairs"]
    if fallback:
        refined = run.matches
    run.details["refinement_fallback"] = bool(fallback)
    run.details["refinement_warnings"] = [str(w.message) for w in caught]
    run.refined = refined
    run.controls = prune_outliers(refined, p["factor"], p["rounds"])
    run.matches.to_csv(run.out / "matches.csv")
    run.controls.to_csv(run.out / "controls.csv")
    if len(run.controls) == 0:
        raise ValueError("no correspondences survived matching")


def stage_transform(run: Run) -> None:
    t = run.cfg["transform"]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        run.transform = fit_weighted_mean(run.controls, t["neighbors"], t["power"])
    run.details["transform_warnings"] = [str(w.message) for w in caught]
    run.details["transform_fallbacks"] = len(run.transform.fallbacks)
    run.transform.save(run.out / "transform.json")


def stage_resample(run: Run) -> None:
    r = run.cfg["resample"]
    slave = run.slave.image
    # small-feature labels: four intensity classes of the source image
    qlab = np.clip(np.floor(slave * 4), 0, 3).astype(int)
    rules = classify_features_for_resampling(slave, qlab, run.slave.edges, r["max_area"], r["min_contrast"],
                                             {int(k): v for k, v in r["table"].items()})
    rules = ResamplingRules(rules.flags, rules.table, r["fine_kernel"])
    save_image(rules.flags.astype(float), run.out / "flags.png")
    run.details["flagged_pixels"] = int(rules.flags.sum())
    run.coords = source_coordinates(run.transform, run.master.image.shape)
    out = adaptive_resample(slave, run.transform, rules, r["levels"], run.master.image.shape, run.coords)
    run.registered = np.clip(out, 0.0, 1.0)
    save_image(run.registered, run.out / "registered.png", 16)
    save_image(checkerboard(run.master.image, run.registered), run.out / "overlay.png")


def checkerboard(a: np.ndarray, b: np.ndarray, tile: int = CHECKER) -> np.ndarray:
    yy, xx = np.indices(a.shape)
    return np.where(((yy // tile) + (xx // tile)) % 2 == 0, a, b)


STAGE_FUNCS = {
    "canny": stage_canny, "ca_objects": stage_ca_objects, "segmentation": stage_segmentation,
    "coreset": stage_coreset, "shape_model": stage_shape_model, "sift": stage_sift,
    "match": stage_match, "transform": stage_transform, "resample": stage_resample,
}


def run_stages(cfg: RunConfig, until: str | None = None) -> Run:
    """Run stages up to and including ``until`` (default: everything but evaluation)."""
    if until is not None and until not in STAGE_FUNCS:
        raise ValueError(f"unknown stage '{until}'; expected one of {list(STAGE_FUNCS)}")
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    run = Run(cfg, out)
    t0 = time.perf_counter()
    try:
        load_inputs(run)
    except Exception as e:
        raise StageError("inputs", e) from e
    run.timings["inputs"] = time.perf_counter() - t0
    for name, fn in STAGE_FUNCS.items():
        t0 = time.perf_counter()
        try:
            fn(run)
        except Exception as e:
            raise StageError(name, e) from e
        run.timings[name] = time.perf_counter() - t0
        if name == until:
            break
    return run


def evaluate(run: Run) -> dict:
    """NCCC over the valid overlap, before/after, and RMSE at truth points."""
    master = run.master.image
    valid = valid_mask(run.coords, run.slave.image.shape)
    after = nccc(master, run.registered, valid)
    before = nccc(master, run.slave.image) if master.shape == run.slave.image.shape else None
    err = None
    if run.truth is not None and len(run.truth):
        err = rmse(run.transform.apply(run.truth.master), run.truth.slave)
    return {"nccc": after, "before": before, "rmse": err, "valid_fraction": float(valid.mean())}


def run_pipeline(cfg: RunConfig) -> EvalReport:
    """Every stage in order, then evaluation; writes the report files."""
    t0 = time.perf_counter()
    run = run_stages(cfg)
    te = time.perf_counter()
    ev = evaluate(run)  # EvaluationUndefined propagates unwrapped
    run.timings["evaluate"] = time.perf_counter() - te
    wall = time.perf_counter() - t0
    details = dict(run.details)
    details["valid_fraction"] = ev["valid_fraction"]
    details["seed"] = cfg.seed
    report = EvalReport(
        nccc=ev["nccc"].paper, nccc_raw=ev["nccc"].raw,
        nccc_before=None if ev["before"] is None else ev["before"].paper,
        rmse=ev["rmse"], wall_time=wall, time_category=time_category(wall),
        stage_timings=dict(run.timings),
        matches_before_refinement=len(run.matches), matches_after_refinement=len(run.refined),
        control_points=len(run.controls), details=details,
    )
    report.write(run.out)
    (run.out / "config.json").write_text(cfg.to_json() + "\n")
    return report
