"""Command-line entry point.

Every command takes ``--out DIR`` and writes its effective configuration to
``DIR/config.json``. Options come from built-in defaults, then an optional
JSON file of flat dotted keys (``--config``), then explicit flags.
Exit codes: 0 ok, 2 usage/config, 3 data, 4 numerical.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, IoError, MemsegError, SpecError

log = logging.getLogger("memseg")

GLOBAL_DEFAULTS = {"seed": 0, "deterministic": True, "threads": 1, "log_level": "warning"}

# per-command defaults; keys double as argparse dests
DEFAULTS: dict[str, dict] = {
    "phantom": {"out": None, "n": 20, "noise": 0.04, "spec": None, "name": "phantom"},
    "convert": {"input": None, "sidecar": None, "out": None, "name": None, "format": "nii", "fov_mm": None, "dims": None},
    "train": {"corpus": None, "out": None, "resume": None, "hss": "on", "augment.enabled": True},
    "infer": {
        "checkpoint": None,
        "volume": None,
        "prompt_mask": None,
        "strategy": "every:10",
        "clicks": 1,
        "reverse": False,
        "click_seed": None,
        "out": None,
        "format": "nii",
    },
    "sweep": {
        "checkpoint": None,
        "corpus": None,
        "split": "val",
        "strategies": "all,every:10,every:20,every:50",
        "clicks": "1",
        "untrained": False,
        "out": None,
    },
    "eval": {"pred": None, "ref": None, "bone": None, "dataset": "phantom", "out": None},
    "thickness": {"mask": None, "bone_mask": None, "class_id": None, "out": None},
    "stats": {"a": None, "b": None, "out": None},
    "bench": {"checkpoint": None, "corpus": None, "split": "val", "repetitions": 2, "strategy": "every:10", "clicks": 1, "out": None},
    "report": {"input": None, "format": "html", "title": "Segmentation summary", "out": None},
}
# dotted prefixes accepted from config files for training
TRAIN_PREFIXES = ("model.", "train.", "augment.")


def _parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False, argument_default=S)
    common.add_argument("--config", help="JSON file of flat dotted keys")
    common.add_argument("--seed", type=int)
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction)
    common.add_argument("--threads", type=int)
    common.add_argument("--log-level", dest="log_level", choices=["debug", "info", "warning", "error"])
    common.add_argument("--out", help="output directory")

    p = argparse.ArgumentParser(prog="memseg", description="Memory-based interactive volume segmentation toolkit")
    p.add_argument("--version", action="version", version=f"memseg {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, argument_default=S)

    c = cmd("phantom", "generate a synthetic phantom corpus")
    c.add_argument("--n", type=int, help="number of volumes")
    c.add_argument("--noise", type=float)
    c.add_argument("--spec", help="PhantomSpec JSON; writes a single volume")
    c.add_argument("--name", help="file stem for --spec output")

    c = cmd("convert", "convert / standardize a volume")
    c.add_argument("--input", help=".nii or .raw file")
    c.add_argument("--sidecar", help="JSON sidecar for raw input")
    c.add_argument("--name")
    c.add_argument("--format", choices=["nii", "raw"])
    c.add_argument("--fov-mm", dest="fov_mm", type=float, nargs=3)
    c.add_argument("--dims", type=int, nargs=3)

    c = cmd("train", "train the segmentation model")
    c.add_argument("--corpus")
    c.add_argument("--resume", help="checkpoint to continue from")
    c.add_argument("--hss", choices=["on", "off"], help="off trains the S=1 baseline")
    c.add_argument("--chunk-size", dest="train.chunk_size", type=int)
    c.add_argument("--lr0", dest="train.lr0", type=float)
    c.add_argument("--lr-min", dest="train.lr_min", type=float)
    c.add_argument("--epochs", dest="train.max_epochs", type=int)
    c.add_argument("--plateau-epochs", dest="train.plateau_epochs", type=int)
    c.add_argument("--early-stop", dest="train.early_stop", type=int)
    c.add_argument("--max-clicks", dest="train.max_clicks", type=int)
    c.add_argument("--p-prompt", dest="train.p_prompt", type=float)
    c.add_argument("--val-strategy", dest="train.val_strategy")
    c.add_argument("--augment", dest="augment.enabled", action=argparse.BooleanOptionalAction)

    c = cmd("infer", "segment a volume with click prompts and propagation")
    c.add_argument("--checkpoint")
    c.add_argument("--volume", help=".nii image")
    c.add_argument("--prompt-mask", dest="prompt_mask", help="reference mask that drives simulated clicks")
    c.add_argument("--strategy", help="all | every:K")
    c.add_argument("--clicks", type=int, help="clicks per prompted slice")
    c.add_argument("--reverse", action=argparse.BooleanOptionalAction)
    c.add_argument("--click-seed", dest="click_seed", type=int, help="random first clicks (default: deepest pixel)")
    c.add_argument("--format", choices=["nii", "raw"])

    c = cmd("sweep", "compare propagation strategies on a corpus split")
    c.add_argument("--checkpoint")
    c.add_argument("--corpus")
    c.add_argument("--split", choices=["train", "val", "all"])
    c.add_argument("--strategies", help="comma list, e.g. all,every:10")
    c.add_argument("--clicks", help="comma list of click budgets")
    c.add_argument("--untrained", action=argparse.BooleanOptionalAction, help="add a randomly initialised model arm")

    c = cmd("eval", "score predictions against references")
    c.add_argument("--pred", action="append", help="[NAME=]DIR of *_pred.nii / *_mask.nii; repeat for more arms")
    c.add_argument("--ref", help="directory of <id>_mask.nii references")
    c.add_argument("--bone", help="directory of <id>_bone.nii (default: --ref)")
    c.add_argument("--dataset")

    c = cmd("thickness", "cartilage thickness of a label mask")
    c.add_argument("--mask")
    c.add_argument("--bone-mask", dest="bone_mask")
    c.add_argument("--class", dest="class_id", type=int)

    c = cmd("stats", "Wilcoxon rank-sum test between two samples")
    c.add_argument("--a", help="file of numbers")
    c.add_argument("--b", help="file of numbers")

    c = cmd("bench", "inference timing")
    c.add_argument("--checkpoint")
    c.add_argument("--corpus")
    c.add_argument("--split", choices=["train", "val", "all"])
    c.add_argument("--repetitions", type=int)
    c.add_argument("--strategy")
    c.add_argument("--clicks", type=int)

    c = cmd("report", "render a summary CSV as HTML or CSV")
    c.add_argument("--input")
    c.add_argument("--format", choices=["html", "csv"])
    c.add_argument("--title")
    return p


def effective_config(command: str, flags: dict) -> dict:
    cfg = {**GLOBAL_DEFAULTS, **DEFAULTS[command]}
    path = flags.pop("config", None)
    if path is not None:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object of dotted keys")
        for k, v in file_cfg.items():
            allowed = k in cfg or (command == "train" and k.startswith(TRAIN_PREFIXES))
            if not allowed:
                raise ConfigError(f"config key {k!r} is not valid for '{command}'")
            cfg[k] = v
    cfg.update(flags)
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise ConfigError(f"missing required option --{k.replace('_', '-')}")


def _out_dir(cfg: dict) -> Path:
    _require(cfg, "out")
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _echo(out: Path, command: str, cfg: dict) -> None:
    (out / "config.json").write_text(json.dumps({"command": command, **cfg}, indent=2, sort_keys=True) + "\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _torch_setup(cfg: dict) -> None:
    import torch

    torch.set_num_threads(int(cfg["threads"]))
    if cfg["deterministic"]:
        torch.use_deterministic_algorithms(True)


def _split_ids(corpus, split: str) -> list[str]:
    return {"train": corpus.train_ids, "val": corpus.val_ids, "all": corpus.ids}[split]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_phantom(cfg: dict) -> int:
    from .phantom import PhantomSpec, generate, generate_corpus
    from .volume_io import write_nifti

    out = _out_dir(cfg)
    _echo(out, "phantom", cfg)
    if cfg["spec"]:
        try:
            d = json.loads(Path(cfg["spec"]).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read spec {cfg['spec']}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise SpecError(f"spec {cfg['spec']} is not valid JSON: {exc}") from exc
        spec = PhantomSpec.from_dict(d)
        write_nifti(generate(spec), out / f"{cfg['name']}.nii")
        return 0
    generate_corpus(out, int(cfg["n"]), int(cfg["seed"]), noise_sigma=float(cfg["noise"]))
    return 0


def _read_any(path: str, sidecar: str | None):
    from .volume_io import read_nifti, read_raw

    p = Path(path)
    if p.suffix == ".nii":
        return read_nifti(p)
    if p.suffix == ".raw":
        return read_raw(p, sidecar or p.with_suffix(".json"))
    from .errors import UnsupportedFormat

    raise UnsupportedFormat(f"unrecognised input extension {p.suffix!r} (use .nii or .raw)")


def cmd_convert(cfg: dict) -> int:
    from .volume_io import standardize_fov, write_nifti, write_raw

    _require(cfg, "input")
    out = _out_dir(cfg)
    _echo(out, "convert", cfg)
    bundle = _read_any(cfg["input"], cfg["sidecar"])
    if (cfg["fov_mm"] is None) != (cfg["dims"] is None):
        raise ConfigError("--fov-mm and --dims must be given together")
    if cfg["fov_mm"] is not None:
        bundle = standardize_fov(bundle, cfg["fov_mm"], cfg["dims"])
    stem = cfg["name"] or Path(cfg["input"]).stem
    if cfg["format"] == "nii":
        write_nifti(bundle, out / f"{stem}.nii")
    else:
        write_raw(bundle, out / f"{stem}.raw", out / f"{stem}.json")
    return 0


def _train_configs(cfg: dict):
    from .augment import AugmentConfig
    from .model.network import ModelConfig
    from .train import TrainConfig

    groups: dict[str, dict] = {"model": {}, "train": {}, "augment": {}}
    for k, v in cfg.items():
        if k.startswith(TRAIN_PREFIXES) and k != "augment.enabled":
            head, key = k.split(".", 1)
            groups[head][key] = v
    aug = None
    if cfg.get("augment.enabled", True):
        aug = AugmentConfig.from_dict({"seed": int(cfg["seed"]), **groups["augment"]})
    t = {"seed": int(cfg["seed"]), "deterministic": bool(cfg["deterministic"]), "threads": int(cfg["threads"]), **groups["train"]}
    if cfg["hss"] == "off":
        t["chunk_size"] = 1
    elif cfg["hss"] != "on":
        raise ConfigError("--hss must be on or off")
    return ModelConfig.from_dict(groups["model"]), TrainConfig.from_dict({**t, "augment": aug})


def cmd_train(cfg: dict) -> int:
    from .dataset import Corpus
    from .model.checkpoint import Checkpoint
    from .train import history_csv, train

    _require(cfg, "corpus")
    out = _out_dir(cfg)
    mcfg, tcfg = _train_configs(cfg)
    init = None
    if cfg["resume"]:
        if not Path(cfg["resume"]).exists():
            raise ConfigError(f"resume checkpoint {cfg['resume']} does not exist")
        init = Checkpoint.load(cfg["resume"])
    _echo(out, "train", cfg)
    corpus = Corpus.from_dir(cfg["corpus"])
    log_path = out / "train_log.csv"
    previous = []
    if init is not None and log_path.exists():
        previous = [r for r in csv.DictReader(io.StringIO(log_path.read_text())) if int(r["epoch"]) <= init.epoch]

    def on_epoch(row):
        log.info("epoch %d  lr %.3g  loss %.4f  val DSC %.4f", row["epoch"], row["lr"], row["train_loss"], row["val_dsc"])

    res = train(corpus, mcfg, tcfg, on_epoch=on_epoch, init=init)
    text = history_csv(res.history)
    if previous:
        old = "".join(f"{r['epoch']},{r['lr']},{r['train_loss']},{r['val_dsc']}\n" for r in previous)
        text = text.split("\n", 1)[0] + "\n" + old + text.split("\n", 1)[1]
    log_path.write_text(text)
    res.best.save(out / "best.ckpt")
    res.last.save(out / "last.ckpt")
    _write_json(
        out / "train_summary.json",
        {
            "best_epoch": res.best.epoch,
            "best_val_dsc": res.best.best_dsc,
            "epochs_run": len(res.history),
            "stopped_early": res.stopped_early,
        },
    )
    return 0


def _load_checkpoint(path):
    from .model.checkpoint import Checkpoint

    if not path or not Path(path).exists():
        raise ConfigError(f"checkpoint {path} does not exist")
    return Checkpoint.load(path)


def cmd_infer(cfg: dict) -> int:
    from .metrics import dsc, iou
    from .prompts import write_clicks
    from .propagation import PropagationStrategy, propagate
    from .volume_io import VolumeBundle, read_nifti, read_nifti_mask, write_nifti_mask, write_raw

    _require(cfg, "volume")
    ck = _load_checkpoint(cfg["checkpoint"])
    out = _out_dir(cfg)
    _echo(out, "infer", cfg)
    _torch_setup(cfg)
    strategy = PropagationStrategy.parse(cfg["strategy"])
    bundle = read_nifti(cfg["volume"])
    src = read_nifti_mask(cfg["prompt_mask"]) if cfg["prompt_mask"] else bundle.mask
    if src is None:
        raise DataError("no prompt-source mask: pass --prompt-mask or place <stem>_mask.nii next to the volume")
    model = ck.build_model()
    res = propagate(model, bundle.image, src, strategy, int(cfg["clicks"]), seed=cfg["click_seed"], reverse=bool(cfg["reverse"]))
    stem = Path(cfg["volume"]).stem
    if cfg["format"] == "nii":
        write_nifti_mask(res.mask, out / f"{stem}_pred.nii")
    else:
        pred_bundle = VolumeBundle(bundle.image, res.mask)
        write_raw(pred_bundle, out / f"{stem}.raw", out / f"{stem}.json")
    write_clicks(res.clicks, out / f"{stem}_clicks.jsonl")
    ref = src.labels
    per_class = {}
    for c in range(1, model.config.num_classes):
        if (ref == c).any():
            p, r = res.mask.labels == c, ref == c
            per_class[str(c)] = {
                "dsc": dsc(p, r),
                "iou": iou(p, r),
                "prompted_slices": res.prompted_slices[c],
                "clicks": res.clicks_used[c],
            }
    _write_json(out / f"{stem}_metrics.json", {"strategy": str(strategy), "clicks_per_prompted_slice": int(cfg["clicks"]), "classes": per_class})
    _write_json(out / f"{stem}_timing.json", {"wall_time_s": res.wall_time})
    return 0


def cmd_sweep(cfg: dict) -> int:
    import torch

    from .dataset import Corpus
    from .model.network import MemSegModel
    from .propagation import PropagationStrategy, summarize_sweep, sweep_strategies

    _require(cfg, "corpus")
    ck = _load_checkpoint(cfg["checkpoint"])
    out = _out_dir(cfg)
    _echo(out, "sweep", cfg)
    _torch_setup(cfg)
    corpus = Corpus.from_dir(cfg["corpus"])
    cases = [(vid, corpus.load(vid)) for vid in _split_ids(corpus, cfg["split"])]
    strategies = [PropagationStrategy.parse(s) for s in str(cfg["strategies"]).split(",") if s.strip()]
    budgets = [int(x) for x in str(cfg["clicks"]).split(",") if x.strip()]
    arms = [("trained", ck.build_model())]
    if cfg["untrained"]:
        torch.manual_seed(int(cfg["seed"]))
        arms.append(("untrained", MemSegModel(ck.config)))
    rows = []
    for name, model in arms:
        for r in sweep_strategies(model, cases, strategies, budgets):
            r.pop("seconds")
            rows.append({"model": name, **r})
    fields = ["model", "volume", "strategy", "clicks", "class", "dsc", "iou", "clicks_used"]
    _write_csv(out / "sweep.csv", fields, rows)
    summary = []
    for name, _ in arms:
        for s in summarize_sweep([r for r in rows if r["model"] == name]):
            summary.append({"model": name, **s})
    _write_csv(out / "sweep_summary.csv", ["model", "strategy", "clicks", "class", "dsc", "iou", "clicks_used", "n"], summary)
    return 0


def _write_csv(path: Path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _case_id(path: Path) -> str:
    stem = path.stem
    for suffix in ("_pred", "_mask"):
        if stem.endswith(suffix):
            return stem[: -len(suffix)]
    return stem


def _label_files(directory: Path, suffixes=("_pred", "_mask")) -> dict[str, Path]:
    if not directory.is_dir():
        raise DataError(f"directory {directory} does not exist")
    found = {}
    for f in sorted(directory.glob("*.nii")):
        if f.stem.endswith(suffixes):
            found.setdefault(_case_id(f), f)
    return found


def cmd_eval(cfg: dict) -> int:
    from .errors import MeasurementUnavailable
    from .metrics import aggregate, dsc, iou, significance_marker, wilcoxon_ranksum
    from .morphometry import thickness_error
    from .report import render_report
    from .volume_io import read_nifti_mask

    _require(cfg, "pred", "ref")
    out = _out_dir(cfg)
    _echo(out, "eval", cfg)
    preds = cfg["pred"] if isinstance(cfg["pred"], list) else [cfg["pred"]]
    arms = []
    for i, spec in enumerate(preds):
        name, _, d = spec.rpartition("=") if "=" in spec else ("", "", spec)
        arms.append((name or (Path(d).name or f"arm{i}"), Path(d)))
    if len({n for n, _ in arms}) != len(arms):
        raise ConfigError("prediction arm names must be unique (use NAME=DIR)")
    refs = _label_files(Path(cfg["ref"]), ("_mask",))
    if not refs:
        raise DataError(f"no <id>_mask.nii references in {cfg['ref']}")
    bone_dir = Path(cfg["bone"] or cfg["ref"])

    records, scores = [], []
    for arm, d in arms:
        pred_files = _label_files(d)
        missing = sorted(set(refs) - set(pred_files))
        if missing:
            raise DataError(f"arm {arm}: no prediction for case {missing[0]}")
        for cid, ref_path in refs.items():
            ref = read_nifti_mask(ref_path)
            pred = read_nifti_mask(pred_files[cid])
            if pred.dims != ref.dims:
                raise DataError(f"arm {arm}, case {cid}: prediction {pred.dims} vs reference {ref.dims}")
            bone_path = bone_dir / f"{cid}_bone.nii"
            bone = read_nifti_mask(bone_path).labels > 0 if bone_path.exists() else None
            for c in range(1, ref.num_classes):
                name = ref.class_names[c]
                p, r = pred.labels == c, ref.labels == c
                row = {"arm": arm, "case": cid, "class": name, "dsc": dsc(p, r), "iou": iou(p, r), "aae_mm": None}
                if bone is not None:
                    try:
                        row["aae_mm"] = thickness_error(p, r, bone, ref.spacing)
                    except MeasurementUnavailable:
                        pass
                scores.append(row)
                for metric, key in (("DSC", "dsc"), ("IoU", "iou"), ("AAE_mm", "aae_mm")):
                    records.append({"dataset": cfg["dataset"], "model": arm, "class": name, "metric": metric, "value": row[key]})

    summary = aggregate(records)
    stats = []
    base = arms[0][0]
    for arm, _ in arms[1:]:
        for row in summary:
            if row.model != arm or row.cls == "All":
                continue
            key = {"DSC": "dsc", "IoU": "iou", "AAE_mm": "aae_mm"}[row.metric]
            a = [s[key] for s in scores if s["arm"] == base and s["class"] == row.cls and s[key] is not None]
            b = [s[key] for s in scores if s["arm"] == arm and s["class"] == row.cls and s[key] is not None]
            if not a or not b:
                continue
            st = wilcoxon_ranksum(a, b)
            row.marker = significance_marker(st.p_value)
            stats.append(
                {
                    "class": row.cls,
                    "metric": row.metric,
                    "reference_arm": base,
                    "arm": arm,
                    "statistic": st.statistic,
                    "p_value": st.p_value,
                    "method": st.method,
                    "marker": row.marker,
                }
            )
    _write_csv(out / "scores.csv", ["arm", "case", "class", "dsc", "iou", "aae_mm"], scores)
    (out / "summary.csv").write_text(render_report(summary, "csv"))
    (out / "summary.html").write_text(
        render_report(summary, "html", notes=["Thickness AAE is the per-volume absolute difference of mean thickness."])
    )
    _write_csv(out / "stats.csv", ["class", "metric", "reference_arm", "arm", "statistic", "p_value", "method", "marker"], stats)
    return 0


def cmd_thickness(cfg: dict) -> int:
    from .errors import EmptyStructure, NoBoneInterface
    from .morphometry import measure
    from .volume_io import read_nifti_mask

    _require(cfg, "mask", "bone_mask")
    out = _out_dir(cfg)
    _echo(out, "thickness", cfg)
    mask = read_nifti_mask(cfg["mask"])
    bone = read_nifti_mask(cfg["bone_mask"]).labels > 0
    classes = [int(cfg["class_id"])] if cfg["class_id"] is not None else list(range(1, mask.num_classes))
    result = {}
    for c in classes:
        try:
            rep = measure(mask.labels == c, bone, mask.spacing)
            result[mask.class_names[c]] = {"mean_mm": rep.mean, "std_mm": rep.std, "count": rep.count}
        except (EmptyStructure, NoBoneInterface) as exc:
            if cfg["class_id"] is not None:
                raise
            result[mask.class_names[c]] = {"unavailable": str(exc)}
    _write_json(out / "thickness.json", result)
    return 0


def _read_numbers(path: str) -> list[float]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def cmd_stats(cfg: dict) -> int:
    from .metrics import significance_marker, wilcoxon_ranksum

    _require(cfg, "a", "b")
    out = _out_dir(cfg)
    _echo(out, "stats", cfg)
    a, b = _read_numbers(cfg["a"]), _read_numbers(cfg["b"])
    if not a or not b:
        raise DataError("both samples need at least one value")
    st = wilcoxon_ranksum(a, b)
    _write_json(
        out / "stats.json",
        {"statistic": st.statistic, "p_value": st.p_value, "method": st.method, "n1": st.n1, "n2": st.n2, "marker": significance_marker(st.p_value)},
    )
    return 0


def cmd_bench(cfg: dict) -> int:
    from .dataset import Corpus
    from .model.network import parameter_count
    from .propagation import PropagationStrategy, propagate

    _require(cfg, "corpus")
    ck = _load_checkpoint(cfg["checkpoint"])
    out = _out_dir(cfg)
    _echo(out, "bench", cfg)
    _torch_setup(cfg)
    reps = int(cfg["repetitions"])
    if reps < 1:
        raise ConfigError("--repetitions must be >= 1")
    model = ck.build_model()
    corpus = Corpus.from_dir(cfg["corpus"])
    strategy = PropagationStrategy.parse(cfg["strategy"])
    times, identical = [], True
    for vid in _split_ids(corpus, cfg["split"]):
        b = corpus.load(vid)
        first = None
        for _ in range(reps):
            t0 = time.perf_counter()
            res = propagate(model, b.image, b.mask, strategy, int(cfg["clicks"]))
            times.append(time.perf_counter() - t0)
            if first is None:
                first = res.mask.labels
            else:
                identical &= bool(np.array_equal(first, res.mask.labels))
    t = np.asarray(times)
    _write_json(
        out / "bench.json",
        {
            "seconds_per_volume_mean": float(t.mean()),
            "seconds_per_volume_std": float(t.std()),
            "runs": len(times),
            "repetitions": reps,
            "parameter_count": parameter_count(model),
            "identical_masks_across_repetitions": identical,
        },
    )
    return 0


def cmd_report(cfg: dict) -> int:
    from .report import parse_summary_csv, render_report

    _require(cfg, "input")
    out = _out_dir(cfg)
    _echo(out, "report", cfg)
    try:
        text = Path(cfg["input"]).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {cfg['input']}: {exc}") from exc
    rows = parse_summary_csv(text)
    ext = "html" if cfg["format"] == "html" else "csv"
    (out / f"report.{ext}").write_text(render_report(rows, cfg["format"], title=cfg["title"]))
    return 0


COMMANDS = {
    "phantom": cmd_phantom,
    "convert": cmd_convert,
    "train": cmd_train,
    "infer": cmd_infer,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
    "thickness": cmd_thickness,
    "stats": cmd_stats,
    "bench": cmd_bench,
    "report": cmd_report,
}


def run(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    flags = {k: v for k, v in vars(ns).items() if k != "command"}
    try:
        cfg = effective_config(ns.command, flags)
        logging.basicConfig(level=getattr(logging, str(cfg["log_level"]).upper(), logging.WARNING), format="%(message)s")
        return COMMANDS[ns.command](cfg)
    except MemsegError as exc:
        print(f"memseg {ns.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"memseg {ns.command}: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
