"""End-to-end command-line driver.

Subcommands wire phantom generation, training, Monte-Carlo case execution
and cross-case analysis into reproducible runs:

* ``uqcat phantom``  -- write a synthetic subject cohort
* ``uqcat train``    -- fit the built-in segmenter on a cohort
* ``uqcat run``      -- sample the 14 uncertainty cases, write voxelwise maps
* ``uqcat analyze``  -- correlation matrices, median/IQR maps, summary tables
* ``uqcat cases``    -- print the case registry with all parameter ranges
* ``uqcat pipeline`` -- run all stages from one JSON config

Every stage writes a JSON manifest recording the tool version, the
effective configuration, the base seed, every sampled parameter and the
SHA-256 of each input/output file, so any output is reproducible
bit-exactly from its manifest.  Manifests contain only paths relative to
their own directory.  ``UQCAT_THREADS`` caps worker threads; outputs are
bit-identical regardless of thread count because all randomness is derived
from (seed, subject, case, pass) names, never from scheduling.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, analysis, augment
from .phantom import PhantomSpec, generate_cohort
from .predictor import PredictorConfig, TinySegmenter, TrainConfig, dice_score, train
from .seeding import derive_seed
from .uq import CASES, get_case, parse_case_selection, run_case, uncertainty_maps
from .volume import Volume, read_volume, write_volume


class UsageError(Exception):
    """Bad flags, config file or environment; maps to exit code 2."""


# --------------------------------------------------------------------------
# small helpers
# --------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _fmt(x: float) -> str:
    return "" if not np.isfinite(x) else f"{x:.6g}"


def _thread_count() -> int:
    raw = os.environ.get("UQCAT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"UQCAT_THREADS must be a positive integer, got {raw!r}")
    if n < 1:
        raise UsageError(f"UQCAT_THREADS must be >= 1, got {n}")
    return n


def _parse_dims(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(f"dims must be 'X,Y,Z', got {text!r}")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise UsageError(f"dims must be integers, got {text!r}")
    return dims  # type: ignore[return-value]


def _parse_radius(text: str) -> tuple[float, float]:
    parts = text.split(",")
    try:
        lo, hi = (float(p) for p in parts)
    except ValueError:
        raise UsageError(f"radius must be 'LO,HI', got {text!r}")
    return lo, hi


def _digests(directory: Path, names: list[str]) -> dict[str, str]:
    return {name: _sha256(directory / name) for name in sorted(names)}


def _vvol_names(v_path: Path) -> list[str]:
    return [v_path.name, v_path.name + ".json"]


# --------------------------------------------------------------------------
# phantom
# --------------------------------------------------------------------------

def cmd_phantom(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = PhantomSpec(
        dims=_parse_dims(args.dims),
        n_lesions=args.lesions,
        radius_range=_parse_radius(args.radius),
        noise_std=args.noise,
        satellite=args.satellite,
        seed=derive_seed(args.seed, "phantom"),
    )
    cohort = generate_cohort(spec, args.subjects)
    written: list[str] = []
    for i, (img, lab) in enumerate(cohort):
        for tag, vol in (("img", img), ("lab", lab)):
            p = out / f"sub-{i}_{tag}.vvol"
            write_volume(vol, p)
            written.extend(_vvol_names(p))
    manifest = {
        "tool": "uqcat",
        "version": __version__,
        "command": "phantom",
        "config": {
            "subjects": args.subjects,
            "dims": list(spec.dims),
            "lesions": spec.n_lesions,
            "radius": list(spec.radius_range),
            "noise": spec.noise_std,
            "satellite": spec.satellite,
            "seed": args.seed,
        },
        "outputs": _digests(out, written),
    }
    _write_json(out / "phantom_manifest.json", manifest)
    print(f"wrote {args.subjects} subjects to {out}")
    return 0


def _load_cohort(directory: Path, need_labels: bool = True) -> list[tuple[Volume, Volume | None]]:
    imgs = sorted(directory.glob("sub-*_img.vvol"), key=lambda p: int(re.findall(r"sub-(\d+)_", p.name)[0]))
    if not imgs:
        raise FileNotFoundError(f"no sub-*_img.vvol files in {directory}")
    cohort = []
    for img_path in imgs:
        lab_path = directory / img_path.name.replace("_img", "_lab")
        label = read_volume(lab_path) if (need_labels or lab_path.exists()) else None
        cohort.append((read_volume(img_path), label))
    return cohort


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def cmd_train(args) -> int:
    data_dir = Path(args.data)
    cohort = _load_cohort(data_dir)
    holdout = args.holdout
    if holdout >= len(cohort):
        raise UsageError(f"--holdout {holdout} leaves no training subjects (cohort has {len(cohort)})")
    train_set = cohort[: len(cohort) - holdout] if holdout else cohort
    val_set = cohort[len(cohort) - holdout :] if holdout else None

    model = TinySegmenter(PredictorConfig(), seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, seed=args.seed)
    history = train(model, train_set, cfg, val_cohort=val_set)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)

    scores = []
    for img, lab in val_set or []:
        pred = model.forward(img)
        scores.append(dice_score(pred.data >= 0.5, lab))
    manifest = {
        "tool": "uqcat",
        "version": __version__,
        "command": "train",
        "config": {"epochs": args.epochs, "seed": args.seed, "holdout": holdout},
        "final_train_loss": history.train_loss[-1],
        "final_val_loss": history.val_loss[-1] if history.val_loss else None,
        "holdout_dice": scores or None,
        "model": {"file": out.name, "sha256": _sha256(out)},
    }
    _write_json(out.parent / (out.stem + "_manifest.json"), manifest)
    msg = f"trained {args.epochs} epochs, final loss {history.train_loss[-1]:.4f}"
    if scores:
        msg += f", holdout dice {np.mean(scores):.3f}"
    print(msg)
    return 0


# --------------------------------------------------------------------------
# run
# --------------------------------------------------------------------------

def cmd_run(args) -> int:
    model = TinySegmenter.load(args.model)
    subjects_dir = Path(args.subjects)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    case_ids = parse_case_selection(args.cases)
    cohort = _load_cohort(subjects_dir, need_labels=False)
    threads = _thread_count()

    jobs = [(sid, cid) for sid in range(len(cohort)) for cid in case_ids]

    def one_job(job: tuple[int, int]):
        sid, cid = job
        image = cohort[sid][0]
        stack = run_case(
            model,
            image,
            get_case(cid),
            n_samples=args.samples,
            seed=derive_seed(args.seed, "run", sid),
            subject_id=sid,
            binarize=args.binarize,
        )
        return job, uncertainty_maps(stack), stack.pass_records

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict()
            for job, maps, records in pool.map(one_job, jobs):
                results[job] = (maps, records)
    else:
        results = {job: (maps, records) for job, maps, records in map(one_job, jobs)}

    written: list[str] = []
    passes: dict[str, dict] = {}
    for sid, cid in jobs:
        maps, records = results[(sid, cid)]
        for tag, vol in (("mean", maps.mean), ("var", maps.variance), ("ent", maps.entropy)):
            p = out / f"sub-{sid}_case-{cid}_{tag}.vvol"
            write_volume(vol, p)
            written.extend(_vvol_names(p))
        passes.setdefault(f"subject-{sid}", {})[f"case-{cid}"] = list(records)

    manifest = {
        "tool": "uqcat",
        "version": __version__,
        "command": "run",
        "config": {
            "samples": args.samples,
            "seed": args.seed,
            "cases": case_ids,
            "binarize": args.binarize,
        },
        "model": {"file": Path(args.model).name, "sha256": _sha256(Path(args.model))},
        "inputs": {
            f"sub-{sid}_img.vvol": _sha256(subjects_dir / f"sub-{sid}_img.vvol") for sid in range(len(cohort))
        },
        "passes": passes,
        "outputs": _digests(out, written),
    }
    _write_json(out / "run_manifest.json", manifest)
    print(f"wrote {len(jobs)} case maps for {len(cohort)} subjects to {out}")
    return 0


# --------------------------------------------------------------------------
# analyze
# --------------------------------------------------------------------------

_ENT_RE = re.compile(r"^sub-(\d+)_case-(\d+)_ent\.vvol$")


def _write_matrix_csv(path: Path, matrix: analysis.CorrelationMatrix) -> None:
    lines = ["case," + ",".join(str(c) for c in matrix.case_ids)]
    for i, cid in enumerate(matrix.case_ids):
        lines.append(f"{cid}," + ",".join(_fmt(x) for x in matrix.values[i]))
    path.write_text("\n".join(lines) + "\n")


def cmd_analyze(args) -> int:
    maps_dir = Path(args.maps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    found: dict[int, dict[int, Path]] = {}
    for p in maps_dir.glob("sub-*_case-*_ent.vvol"):
        m = _ENT_RE.match(p.name)
        if m:
            found.setdefault(int(m.group(1)), {})[int(m.group(2))] = p
    if not found:
        raise FileNotFoundError(f"no sub-*_case-*_ent.vvol maps in {maps_dir}")
    subjects = sorted(found)
    case_ids = sorted(found[subjects[0]])
    for sid in subjects:
        if sorted(found[sid]) != case_ids:
            raise UsageError(f"subject {sid} has cases {sorted(found[sid])}, expected {case_ids}")

    written: list[str] = []
    matrices: list[analysis.CorrelationMatrix] = []
    summaries: list[analysis.CaseSummary] = []
    for sid in subjects:
        ent_maps = {cid: read_volume(found[sid][cid]) for cid in case_ids}
        median, iqr = analysis.voxelwise_median_iqr([ent_maps[c] for c in case_ids])
        mask = analysis.entropy_support_mask(median)
        matrix = analysis.correlation_matrix(ent_maps, mask, subject=sid)
        matrices.append(matrix)
        for cid in case_ids:
            mean_nz, count = analysis.mean_nonzero_entropy(ent_maps[cid])
            summaries.append(analysis.CaseSummary(sid, cid, mean_nz, count))
        for name, vol in (
            (f"median_ent_sub-{sid}.vvol", median),
            (f"iqr_ent_sub-{sid}.vvol", iqr),
            (f"mask_sub-{sid}.vvol", Volume(mask.bits.astype(np.float32), median.spacing)),
        ):
            write_volume(vol, out / name)
            written.extend(_vvol_names(out / name))
        _write_matrix_csv(out / f"corr_sub-{sid}.csv", matrix)
        written.append(f"corr_sub-{sid}.csv")

    mean_matrix = analysis.mean_correlation_matrix(matrices)
    _write_matrix_csv(out / "corr_mean.csv", mean_matrix)
    written.append("corr_mean.csv")

    lines = ["subject,case,mean_nonzero_entropy,count"]
    for s in summaries:
        lines.append(f"{s.subject},{s.case_id},{_fmt(s.mean_nonzero)},{s.count}")
    (out / "summary.csv").write_text("\n".join(lines) + "\n")
    written.append("summary.csv")

    manifest = {
        "tool": "uqcat",
        "version": __version__,
        "command": "analyze",
        "config": {"subjects": subjects, "cases": case_ids, "quantile_method": "linear-interpolation"},
        "inputs": {found[sid][cid].name: _sha256(found[sid][cid]) for sid in subjects for cid in case_ids},
        "outputs": _digests(out, written),
    }
    _write_json(out / "analyze_manifest.json", manifest)
    print(f"analyzed {len(subjects)} subjects x {len(case_ids)} cases into {out}")
    return 0


# --------------------------------------------------------------------------
# cases
# --------------------------------------------------------------------------

def _case_table() -> list[str]:
    sc, rot = augment.AFFINE_SCALE_RANGE, augment.AFFINE_ROTATION_RANGE
    tr = augment.AFFINE_TRANSLATION_RANGE
    gs = augment.GHOST_STRENGTH_RANGE
    bc = augment.BIAS_COEFF_MAX

    def affine_desc(lvl: str) -> str:
        return (
            f"scale U({sc[lvl][0]:.2f},{sc[lvl][1]:.2f}), rot(deg) U({rot[lvl][0]:g},{rot[lvl][1]:g}), "
            f"trans(mm) U({tr[0]:g},{tr[1]:g})"
        )

    def ghost_desc(lvl: str) -> str:
        return f"strength U({gs[lvl][0]:.2f},{gs[lvl][1]:.2f}), ghosts U{{2..6}}, axis {augment.GHOST_AXIS}"

    def bias_desc(lvl: str) -> str:
        return f"order {augment.BIAS_ORDER}, |coeff| <= {bc[lvl]}"

    def combined_desc(lvl: str) -> str:
        return (
            f"affine U({sc[lvl][0]:.2f},{sc[lvl][1]:.2f})/U({rot[lvl][0]:g},{rot[lvl][1]:g}), "
            f"ghost U({gs[lvl][0]:.2f},{gs[lvl][1]:.2f}), bias {bc[lvl]}"
        )

    family_desc = {"affine": affine_desc, "ghosting": ghost_desc, "bias": bias_desc, "combined": combined_desc}
    rows = ["id  kind  parameters"]
    for case in CASES:
        if case.kind == "ttd":
            rows.append(f"{case.id:>2}  TTD   dropout {case.dropout_rate:.2f}")
        else:
            rows.append(f"{case.id:>2}  TTA   {case.family} {case.level}: {family_desc[case.family](case.level)}")
    return rows


def cmd_cases(args) -> int:
    print("\n".join(_case_table()))
    return 0


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------

DEFAULT_CONFIG: dict = {
    "seed": 1234,
    "phantom": {
        "subjects": 8,
        "dims": [32, 32, 16],
        "lesions": 1,
        "radius": [2.5, 4.5],
        "noise": 0.05,
        "satellite": False,
    },
    "train": {"epochs": 30, "holdout": 0},
    "run": {"samples": 50, "cases": "1-14", "binarize": False},
    "analyze": {},
}


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such config file: {p}")
    try:
        loaded = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed config {p.name}: line {exc.lineno}, column {exc.colno}: {exc.msg}")
    if not isinstance(loaded, dict):
        raise UsageError(f"config {p.name} must be a JSON object")
    return loaded


def _merge_config(file_cfg: dict, args) -> dict:
    """Precedence: flags > config file > defaults.  ``"train": null`` disables training."""
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    for section, value in file_cfg.items():
        if isinstance(value, dict) and isinstance(cfg.get(section), dict):
            cfg[section].update(value)
        else:
            cfg[section] = value
    if cfg.get("train") is None:
        cfg.pop("train", None)
    if "train" not in file_cfg and args.model:
        cfg.pop("train", None)  # training supplied externally
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.samples is not None:
        cfg.setdefault("run", {})["samples"] = args.samples
    if args.subjects is not None:
        cfg.setdefault("phantom", {})["subjects"] = args.subjects
    if args.epochs is not None and "train" in cfg:
        cfg["train"]["epochs"] = args.epochs
    return cfg


class _Args(argparse.Namespace):
    pass


def cmd_pipeline(args) -> int:
    file_cfg = _load_config(args.config) if args.config else {}
    cfg = _merge_config(file_cfg, args)
    if "train" not in cfg and not args.model:
        raise UsageError("config has no 'train' section and no --model was given")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = int(cfg["seed"])

    stage = "phantom"
    try:
        phantom_args = _Args(
            out=str(out / "phantoms"),
            subjects=int(cfg["phantom"]["subjects"]),
            dims=",".join(str(d) for d in cfg["phantom"]["dims"]),
            lesions=int(cfg["phantom"].get("lesions", 1)),
            radius=",".join(str(r) for r in cfg["phantom"].get("radius", [2.5, 4.5])),
            noise=float(cfg["phantom"].get("noise", 0.05)),
            satellite=bool(cfg["phantom"].get("satellite", False)),
            seed=seed,
        )
        print(f"[pipeline] stage phantom -> {phantom_args.out}", file=sys.stderr)
        cmd_phantom(phantom_args)

        if "train" in cfg:
            stage = "train"
            model_path = out / "model.uqp"
            train_args = _Args(
                data=str(out / "phantoms"),
                out=str(model_path),
                epochs=int(cfg["train"]["epochs"]),
                holdout=int(cfg["train"].get("holdout", 0)),
                seed=derive_seed(seed, "train-stage"),
            )
            print(f"[pipeline] stage train -> {model_path}", file=sys.stderr)
            cmd_train(train_args)
        else:
            model_path = Path(args.model)
            print(f"[pipeline] stage train skipped, using {model_path}", file=sys.stderr)

        stage = "run"
        run_args = _Args(
            model=str(model_path),
            subjects=str(out / "phantoms"),
            out=str(out / "maps"),
            samples=int(cfg["run"]["samples"]),
            cases=str(cfg["run"].get("cases", "1-14")),
            binarize=bool(cfg["run"].get("binarize", False)),
            seed=derive_seed(seed, "run-stage"),
        )
        print(f"[pipeline] stage run -> {run_args.out}", file=sys.stderr)
        cmd_run(run_args)

        stage = "analyze"
        analyze_args = _Args(maps=str(out / "maps"), out=str(out / "analysis"))
        print(f"[pipeline] stage analyze -> {analyze_args.out}", file=sys.stderr)
        cmd_analyze(analyze_args)
    except UsageError:
        raise
    except Exception as exc:
        print(f"[pipeline] stage '{stage}' failed: {exc}", file=sys.stderr)
        return 1

    outputs: dict[str, str] = {}
    for sub in ("phantoms", "maps", "analysis"):
        for p in sorted((out / sub).iterdir()):
            if p.is_file():
                outputs[f"{sub}/{p.name}"] = _sha256(p)
    if "train" in cfg:
        outputs["model.uqp"] = _sha256(out / "model.uqp")
        outputs["model_manifest.json"] = _sha256(out / "model_manifest.json")
    manifest = {
        "tool": "uqcat",
        "version": __version__,
        "command": "pipeline",
        "effective_config": cfg,
        "outputs": outputs,
    }
    _write_json(out / "pipeline_manifest.json", manifest)
    print(f"pipeline complete: {out}")
    return 0


# --------------------------------------------------------------------------
# parser / entry
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uqcat", description="Voxelwise uncertainty-category mapping")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic subject cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", default="32,32,16")
    p.add_argument("--lesions", type=int, default=1)
    p.add_argument("--radius", default="2.5,4.5", help="lesion radius range LO,HI in voxels")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--satellite", action="store_true")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="train the built-in segmenter")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--holdout", type=int, default=0, help="trailing subjects held out for validation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="sample uncertainty cases and write voxelwise maps")
    p.add_argument("--model", required=True)
    p.add_argument("--subjects", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", default="1-14")
    p.add_argument("--binarize", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="cross-case correlation and stability analytics")
    p.add_argument("--maps", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("cases", help="print the uncertainty case registry")
    p.add_argument("--list", action="store_true", default=True)
    p.set_defaults(func=cmd_cases)

    p = sub.add_parser("pipeline", help="run phantom/train/run/analyze from a JSON config")
    p.add_argument("--config", required=False)
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="skip training and use this checkpoint")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--subjects", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
