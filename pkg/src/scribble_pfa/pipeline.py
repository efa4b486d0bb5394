"""Corpus-level orchestration: manifests, the pipeline config and the commands.

The command functions here are what the CLI calls; they are plain library
functions so they can also be driven from Python. Every output is a pure
function of the config and the input files: no timestamps, no durations,
images processed independently and results merged in manifest order.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .core import ClassSet, PixelGrid, Rejected, curate_scribbles
from .errors import ConfigError, MissingGroundTruth, MissingPrediction, PfaError
from .evaluation import ConfusionMatrix, EvalReport, accumulate_confusion, gap_report, miou
from .features import FilterBank, extract_features, load_filter_bank, save_filter_bank, synthetic_filter_bank
from .fusion import REGULARIZERS, VARIANTS, run_variant
from .global_pam_io import load_global_probs, save_probability_map
from .io_utils import load_image, load_labelmap, load_scribbles, save_labelmap, save_scribbles
from .local_pam import ForestConfig, predict_local, select_and_retrain
from .regularizers import DenseCrfParams, PottsParams

log = logging.getLogger(__name__)

# ---------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    image: Path
    scribble: Path
    gt: Optional[Path] = None
    globalprob: Optional[Path] = None


@dataclass(frozen=True)
class CorpusManifest:
    records: tuple

    def __post_init__(self):
        ids = [r.id for r in self.records]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ConfigError(f"duplicate image ids in manifest: {', '.join(dupes)}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def _optional(field_: str) -> bool:
    return field_ not in ("", "-")


def load_manifest(path) -> CorpusManifest:
    """Read a TSV manifest: ``id image scribble [gt] [globalprob]``.

    Relative paths are resolved against the manifest's directory. Blank
    lines and lines starting with ``#`` are skipped; an empty or ``-``
    field marks an optional column as absent.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from None
    base = path.parent
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if not 3 <= len(cols) <= 5:
            raise ConfigError(f"{path}:{lineno}: expected 3 to 5 tab-separated fields, got {len(cols)}")
        cols += [""] * (5 - len(cols))
        rid, image, scribble, gt, gp = (c.strip() for c in cols)
        if not rid or not image or not scribble:
            raise ConfigError(f"{path}:{lineno}: id, image and scribble are required")
        records.append(
            ManifestRecord(
                rid,
                base / image,
                base / scribble,
                base / gt if _optional(gt) else None,
                base / gp if _optional(gp) else None,
            )
        )
    return CorpusManifest(tuple(records))


def write_manifest(path, manifest: CorpusManifest) -> None:
    """Write ``manifest`` with paths relative to the new file's directory."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        return "" if p is None else os.path.relpath(Path(p).resolve(), base)

    lines = []
    for r in manifest:
        cols = [r.id, rel(r.image), rel(r.scribble), rel(r.gt), rel(r.globalprob)]
        while cols and cols[-1] == "":
            cols.pop()
        lines.append("\t".join(cols))
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def _check_files_exist(manifest: CorpusManifest, need_global: bool = False) -> None:
    missing = []
    for r in manifest:
        for p in (r.image, r.scribble, r.gt, r.globalprob):
            if p is not None and not p.is_file():
                missing.append(str(p))
        if need_global and r.globalprob is None:
            missing.append(f"{r.id}: no global probability path")
    if missing:
        raise ConfigError("unresolvable manifest entries: " + "; ".join(missing))


def _image_grid(path) -> PixelGrid:
    with Image.open(path) as im:
        w, h = im.size
    return PixelGrid(h, w)


# ------------------------------------------------------------------ config

_RUN_ONLY = ("output_dir", "workers")  # do not affect results, so not hashed


@dataclass(frozen=True)
class PipelineConfig:
    manifest: str
    num_classes: int
    class_names: Optional[tuple] = None
    bank: str = "synthetic"  # "synthetic" or the path of an FBK1 file
    bank_seed: int = 0
    forest: ForestConfig = field(default_factory=ForestConfig)
    variant: str = "combined"
    regularizer: str = "potts"
    w_local: float = 0.5
    potts: PottsParams = field(default_factory=PottsParams)
    crf: DenseCrfParams = field(default_factory=DenseCrfParams)
    output_dir: str = "pfa_out"
    workers: int = 1
    seed: int = 0
    save_local: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.regularizer not in REGULARIZERS:
            raise ConfigError(f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}")
        if not 0.0 <= self.w_local <= 1.0:
            raise ConfigError("w_local must lie in [0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.classes
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def classes(self) -> ClassSet:
        return ClassSet(self.num_classes, self.class_names)

    @property
    def forest_config(self) -> ForestConfig:
        """The forest settings with the run seed."""
        return dataclasses.replace(self.forest, seed=self.seed)

    @property
    def regularizer_params(self):
        return {"potts": self.potts, "crf": self.crf}.get(self.regularizer)

    @property
    def variant_label(self) -> str:
        return self.variant if self.regularizer == "none" else f"{self.variant}+{self.regularizer}"

    def echo(self) -> dict:
        """Everything that influences the outputs, JSON-ready."""
        d = dataclasses.asdict(self)
        for k in _RUN_ONLY:
            d.pop(k)
        d["forest"] = dataclasses.asdict(self.forest_config)
        d["class_names"] = list(self.class_names) if self.class_names else None
        return d

    def hash(self) -> str:
        blob = json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _typed(dataclass_type, values: dict, section: str):
    """Build a params dataclass from string values, converting by field type."""
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(dataclass_type)}
    for key, raw in values.items():
        if key not in fields:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        default = fields[key].default
        kwargs[key] = _convert(raw, default, f"[{section}] {key}")
    try:
        return dataclass_type(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _convert(raw, default, where):
    if not isinstance(raw, str):
        return raw
    s = raw.strip()
    try:
        if s.lower() in ("auto", "none", ""):
            if default is None or where.endswith(" lam"):
                return None
        if isinstance(default, bool):
            return {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}[s.lower()]
        if isinstance(default, int) or (default is None and s.lstrip("-").isdigit()):
            return int(s)
        if isinstance(default, float) or default is None:
            return float(s)
    except (ValueError, KeyError):
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None
    return s


_SECTIONS = {
    "corpus": ("manifest", "num_classes", "class_names"),
    "features": ("bank", "bank_seed"),
    "fusion": ("variant", "w_local", "regularizer"),
    "run": ("output_dir", "workers", "seed", "save_local"),
}
_PARAM_SECTIONS = {"forest": ForestConfig, "potts": PottsParams, "crf": DenseCrfParams}


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> PipelineConfig:
    """Read an INI config and apply ``overrides``.

    ``overrides`` maps either a top-level field name (``variant``) or
    ``section.key`` (``potts.lam``) to a value; None values are ignored.
    Relative paths in the file are taken relative to the file.
    """
    flat: dict = {}
    nested: dict = {name: {} for name in _PARAM_SECTIONS}
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        base = Path(path).parent
        for section in cp.sections():
            items = dict(cp.items(section))
            if section in _PARAM_SECTIONS:
                nested[section].update(items)
            elif section in _SECTIONS:
                for k, v in items.items():
                    if k not in _SECTIONS[section]:
                        raise ConfigError(f"[{section}] unknown key {k!r}")
                    flat[k] = v
            else:
                raise ConfigError(f"unknown config section [{section}]")
        for k in ("manifest", "output_dir"):
            if k in flat and not Path(flat[k]).is_absolute():
                flat[k] = str(base / flat[k])
        if flat.get("bank", "synthetic") != "synthetic" and not Path(flat["bank"]).is_absolute():
            flat["bank"] = str(base / flat["bank"])

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in key:
            section, k = key.split(".", 1)
            nested[section][k] = value
        else:
            flat[key] = value

    if "manifest" not in flat:
        raise ConfigError("no corpus manifest given")
    if "num_classes" not in flat:
        raise ConfigError("no class count given")
    defaults = {f.name: f.default for f in dataclasses.fields(PipelineConfig)}
    defaults["num_classes"] = 0  # required field: parse as int
    kwargs = {}
    for k, v in flat.items():
        if k == "class_names":
            names = [n.strip() for n in v.split(",")] if isinstance(v, str) else list(v)
            kwargs[k] = tuple(names) if names and names != [""] else None
        else:
            kwargs[k] = _convert(v, defaults[k], k)
    for section, typ in _PARAM_SECTIONS.items():
        kwargs[section] = _typed(typ, nested[section], section)
    if kwargs["forest"].seed != 0:
        raise ConfigError("[forest] seed is taken from [run] seed")
    try:
        return PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def resolve_bank(source: str, seed: int = 0) -> FilterBank:
    if source == "synthetic":
        return synthetic_filter_bank(seed)
    try:
        return load_filter_bank(source)
    except OSError as exc:
        raise ConfigError(f"cannot read filter bank {source}: {exc}") from None


# ----------------------------------------------------------------- helpers


def _write_json(path: Path, obj) -> None:
    """Write JSON via a temporary file so a crash never leaves half a report."""
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _error_text(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}"


# ------------------------------------------------------------------ curate


@dataclass(frozen=True)
class CurationSummary:
    total: int
    kept: int
    dropped: int
    dropped_images: dict  # id -> missing class ids
    failed: dict  # id -> error text
    relabeled_pixels: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def cmd_curate(manifest_path, out_dir, num_classes: int) -> CurationSummary:
    """Relabel scribbles to ground truth and drop class-deficient images.

    Writes ``scribbles/<id>`` (same format as the input), a new
    ``manifest.tsv`` listing only kept images and ``curation_summary.json``.
    """
    manifest = load_manifest(manifest_path)
    no_gt = [r.id for r in manifest if r.gt is None]
    if no_gt:
        raise MissingGroundTruth(f"records without ground truth: {', '.join(no_gt)}")
    _check_files_exist(manifest)
    classes = ClassSet(num_classes)
    out = Path(out_dir)
    (out / "scribbles").mkdir(parents=True, exist_ok=True)

    kept, dropped, failed, relabeled = [], {}, {}, 0
    for r in manifest:
        try:
            grid = _image_grid(r.image)
            wa = load_scribbles(r.scribble, classes, grid)
            gt = load_labelmap(r.gt, classes, grid)
            cur = curate_scribbles(wa, gt)
        except (PfaError, ValueError, OSError) as exc:
            failed[r.id] = _error_text(exc)
            log.warning("curate %s failed: %s", r.id, failed[r.id])
            continue
        if isinstance(cur, Rejected):
            dropped[r.id] = sorted(cur.missing_classes)
            continue
        relabeled += int(np.count_nonzero(cur.labels != wa.labels))
        dest = out / "scribbles" / f"{r.id}{r.scribble.suffix.lower() or '.txt'}"
        save_scribbles(dest, cur)
        kept.append(dataclasses.replace(r, scribble=dest))

    write_manifest(out / "manifest.tsv", CorpusManifest(tuple(kept)))
    summary = CurationSummary(len(manifest), len(kept), len(dropped), dropped, failed, relabeled)
    _write_json(out / "curation_summary.json", summary.to_dict())
    return summary


# ---------------------------------------------------------------- features


def cmd_features(manifest_path, out_dir, bank: str = "synthetic", bank_seed: int = 0,
                 export_bank: Optional[str] = None) -> dict:
    """Write each image's standardized feature stack as ``features/<id>.npy``."""
    manifest = load_manifest(manifest_path)
    _check_files_exist(manifest)
    fb = resolve_bank(bank, bank_seed)
    if export_bank:
        save_filter_bank(export_bank, fb)
    out = Path(out_dir) / "features"
    out.mkdir(parents=True, exist_ok=True)
    done, failed = [], {}
    for r in manifest:
        try:
            fs = extract_features(load_image(r.image), fb)
        except (PfaError, ValueError, OSError) as exc:
            failed[r.id] = _error_text(exc)
            continue
        np.save(out / f"{r.id}.npy", fs.values.astype(np.float32))
        done.append(r.id)
    return {"written": done, "failed": failed, "depth": len(fb)}


# ----------------------------------------------------------------- promote


def _paths(out: Path, rid: str) -> dict:
    return {
        "pfa": out / "pfa" / f"{rid}.png",
        "report": out / "reports" / f"{rid}.json",
        "local": out / "local" / f"{rid}.pam",
    }


def _cached(paths: dict, config_hash: str) -> Optional[dict]:
    if not (paths["report"].is_file() and paths["pfa"].is_file()):
        return None
    try:
        report = json.loads(paths["report"].read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return None
    return report if report.get("config_hash") == config_hash else None


def promote_image(record: ManifestRecord, cfg: PipelineConfig, bank: FilterBank, config_hash: str) -> dict:
    """Build, save and report the PFA of one image. Returns its report."""
    out = Path(cfg.output_dir)
    paths = _paths(out, record.id)
    cached = _cached(paths, config_hash)
    if cached is not None:
        log.info("%s: cached", record.id)
        return cached

    classes = cfg.classes
    img = load_image(record.image)
    grid = img.grid
    p_local = p_global = None
    n_scribbles = None
    seen = None
    if cfg.variant in ("local", "combined"):
        wa = load_scribbles(record.scribble, classes, grid)
        n_scribbles = len(wa)
        seen = sorted(wa.annotated_classes)
        fs = extract_features(img, bank)
        forest_cfg = cfg.forest_config
        n_sel = min(forest_cfg.n_selected_features, fs.depth)
        forest_cfg = dataclasses.replace(forest_cfg, n_selected_features=n_sel)
        p_local = predict_local(select_and_retrain(fs, wa, forest_cfg), fs)
        if cfg.save_local:
            save_probability_map(paths["local"], p_local)
    if cfg.variant in ("global", "combined"):
        if record.globalprob is None:
            raise ConfigError(f"{record.id}: no global probability map")
        p_global = load_global_probs(record.globalprob, grid, classes)

    res = run_variant(p_local, p_global, cfg.variant, cfg.regularizer, img, cfg.regularizer_params, cfg.w_local)
    save_labelmap(paths["pfa"], res.labels)

    report = {
        "id": record.id,
        "status": "ok",
        "config_hash": config_hash,
        "variant": cfg.variant_label,
        "n_scribbles": n_scribbles,
        "scribbled_classes": seen,
        "energy": res.report.to_dict() if res.report is not None else None,
    }
    if record.gt is not None:
        gt = load_labelmap(record.gt, classes, grid)
        ev = miou(accumulate_confusion(res.labels, gt))
        report["evaluation"] = {"miou": ev.miou, "pixel_accuracy": ev.pixel_accuracy}
    _write_json(paths["report"], report)
    return report


def _safe_promote(args) -> dict:
    record, cfg, bank, config_hash = args
    try:
        return promote_image(record, cfg, bank, config_hash)
    except Exception as exc:  # noqa: BLE001 - one image must not sink the run
        log.warning("%s failed: %s", record.id, _error_text(exc))
        return {"id": record.id, "status": "failed", "error": _error_text(exc)}


@dataclass(frozen=True)
class RunResult:
    report: dict
    n_ok: int
    n_failed: int

    @property
    def exit_code(self) -> int:
        return 0 if self.n_failed == 0 else 1


def cmd_promote(cfg: PipelineConfig) -> RunResult:
    """Run the whole pipeline over the corpus and write ``run_report.json``."""
    manifest = load_manifest(cfg.manifest)
    if len(manifest) == 0:
        raise ConfigError("manifest lists no images")
    _check_files_exist(manifest, need_global=cfg.variant in ("global", "combined"))
    bank = resolve_bank(cfg.bank, cfg.bank_seed)
    out = Path(cfg.output_dir)
    for sub in ("pfa", "reports", "local"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    config_hash = cfg.hash()

    tasks = [(r, cfg, bank, config_hash) for r in manifest]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(tasks))) as pool:
            results = list(pool.map(_safe_promote, tasks))
    else:
        results = [_safe_promote(t) for t in tasks]

    acc = ConfusionMatrix.empty(cfg.num_classes)
    evaluated = 0
    for r, res in zip(manifest, results):
        if res["status"] == "ok" and r.gt is not None:
            grid = _image_grid(r.image)
            pred = load_labelmap(_paths(out, r.id)["pfa"], cfg.classes, grid)
            acc = accumulate_confusion(pred, load_labelmap(r.gt, cfg.classes, grid), acc)
            evaluated += 1
    evaluation: Optional[EvalReport] = miou(acc) if acc.total > 0 else None

    images = []
    for res in results:
        entry = {"id": res["id"], "status": res["status"]}
        if res["status"] == "ok":
            entry["variant"] = res["variant"]
            entry["energy"] = res["energy"]
        else:
            entry["error"] = res["error"]
        images.append(entry)
    n_ok = sum(1 for r in results if r["status"] == "ok")
    report = {
        "config": cfg.echo(),
        "config_hash": config_hash,
        "images": images,
        "n_images": len(results),
        "n_ok": n_ok,
        "n_failed": len(results) - n_ok,
        "n_evaluated": evaluated,
        "evaluation": evaluation.to_dict() if evaluation is not None else None,
    }
    _write_json(out / "run_report.json", report)
    return RunResult(report, n_ok, len(results) - n_ok)


# ---------------------------------------------------------------- evaluate


def cmd_evaluate(pred_dir, gt_dir, num_classes: int) -> EvalReport:
    """Score every ``<name>.png`` of ``gt_dir`` against ``pred_dir/<name>.png``.

    Predictions without a ground-truth counterpart are ignored.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    gts = sorted(gt_dir.glob("*.png"))
    if not gts:
        raise ConfigError(f"no ground-truth PNGs in {gt_dir}")
    missing = [g.name for g in gts if not (pred_dir / g.name).is_file()]
    if missing:
        raise MissingPrediction(missing)
    classes = ClassSet(num_classes)
    acc = ConfusionMatrix.empty(num_classes)
    for g in gts:
        gt = load_labelmap(g, classes)
        pred = load_labelmap(pred_dir / g.name, classes, gt.grid)
        acc = accumulate_confusion(pred, gt, acc)
    return miou(acc)


def cmd_gap(full: float, weak: float, strategy: float):
    return gap_report(full, weak, strategy)


__all__: Sequence[str] = [
    "ManifestRecord", "CorpusManifest", "load_manifest", "write_manifest",
    "PipelineConfig", "load_config", "resolve_bank",
    "CurationSummary", "cmd_curate", "cmd_features", "promote_image", "RunResult",
    "cmd_promote", "cmd_evaluate", "cmd_gap",
]
