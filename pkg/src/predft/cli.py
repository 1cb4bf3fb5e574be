"""Command-line entry point: ``predft synth | verify | train | decode | evaluate | analyze-errors``.

Every command writes into a fresh ``--out`` directory (staged in a temporary
sibling and renamed on success) together with ``run_config.json``, the full
settings of the run. Passing that file back through ``--config`` repeats the
run. Exit status is 0 on success, 1 for invalid input and 2 for failures
while running.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import os
import re
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import align
from .data import (
    DatasetError,
    SplitSpec,
    SynthSpec,
    Vocab,
    load_dataset,
    make_splits,
    shuffle_recordings,
    synth_dataset,
    voxel_normalize,
)
from .data.dataset import write_dataset_contents
from .metrics import (
    align_errors,
    error_position_distribution,
    info_loss_slope,
    score_pairs,
)
from .model import Checkpoint, ModelConfig, PredFTDecoder

log = logging.getLogger("predft")

RUN_CONFIG = "run_config.json"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- settings ------------------------------------------------------------------------------

DEFAULTS = {
    "synth": {"seed": 0, "synth": {}},
    "verify": {"seed": 0, "data": None, "subject": None, "rois": ["BPC"], "d_range": "0:8",
               "l_range": "1:6", "reduced_dim": 20, "folds": 10, "penalties": None},
    "train": {"seed": 0, "data": None, "model": {}, "roi": "BPC", "no_side_net": False,
              "shuffle_fmri": False, "lambda": None, "epochs": None, "max_vocab": 64,
              "train_stride": None, "eval_stride": None, "tokens_per_frame": None,
              "split": {"mode": "within-subject", "n_valid": 1, "n_test": 1, "subject": None}},
    "decode": {"seed": 0, "run": None, "split": "test", "stride": None, "beam": None, "max_len": None},
    "evaluate": {"seed": 0, "decoded": None, "plugin_scores": None},
    "analyze-errors": {"seed": 0, "decoded": None},
}

_PATH_KEYS = ("data", "run", "decoded", "plugin_scores")


def parse_range(text):
    """``"lo:hi"`` inclusive; ``hi < lo`` gives an empty range."""
    m = re.fullmatch(r"\s*(-?\d+)\s*:\s*(-?\d+)\s*", str(text))
    if not m:
        raise UsageError(f"range must look like lo:hi, got {text!r}")
    lo, hi = int(m.group(1)), int(m.group(2))
    return list(range(lo, hi + 1))


def resolve_settings(command, args):
    """Defaults, then ``--config`` file, then explicitly given flags."""
    settings = json.loads(json.dumps(DEFAULTS[command]))
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config must be a JSON object")
        loaded.pop("command", None)
        unknown = set(loaded) - set(settings)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        for key, value in loaded.items():
            if isinstance(settings[key], dict) and isinstance(value, dict):
                settings[key].update(value)
            else:
                settings[key] = value
    for key, value in vars(args).items():
        if key in ("command", "config", "out", "verbose") or value is None:
            continue
        settings[key] = value
    for key in _PATH_KEYS:
        if settings.get(key) is not None:
            settings[key] = str(Path(settings[key]).resolve())
    return settings


# -- output --------------------------------------------------------------------------------

def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


@contextlib.contextmanager
def staged(out):
    """Yield a temporary directory that replaces ``out`` only if the block succeeds."""
    out = Path(out)
    if out.exists():
        raise UsageError(f"output directory {out} already exists")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.tmp-", dir=out.parent))
    try:
        yield tmp
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def histogram_svg(probabilities, width=480, height=320):
    """Line plot of error probability against within-frame position percentile."""
    pad = 40
    p = np.asarray(probabilities, dtype=np.float64)
    top = max(float(p.max()), 1e-12)
    xs = pad + np.arange(10) / 9 * (width - 2 * pad)
    ys = height - pad - p / top * (height - 2 * pad)
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{pad}" y="20">error probability by position (%)</text>',
        f'<polyline fill="none" stroke="#1f77b4" points="{pts}"/>',
        "</svg>",
    ]) + "\n"


def _slug(name):
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_")


# -- commands ------------------------------------------------------------------------------

def cmd_synth(settings, out):
    spec = SynthSpec.from_dict({**settings["synth"], "seed": settings["seed"]})
    dataset = synth_dataset(spec)
    with staged(out) as tmp:
        write_dataset_contents(tmp, dataset)
        (tmp / "synth_spec.json").write_text(dumps(spec.to_dict()))
        (tmp / RUN_CONFIG).write_text(dumps({"command": "synth", **settings}))


def _require(settings, key):
    if settings.get(key) is None:
        raise UsageError(f"--{key.replace('_', '-')} is required")
    return settings[key]


def verify_inputs(settings):
    """Stacked voxel-normalised responses and story features for one subject."""
    dataset = load_dataset(_require(settings, "data"))
    subject = settings["subject"] or dataset.subjects[0]
    recs = [r for r in dataset.recordings if r.subject == subject]
    if not recs:
        raise DatasetError(f"no recordings for subject {subject!r}")
    recs.sort(key=lambda r: r.story)
    tables = []
    for r in recs:
        frames = [t for t, f in enumerate(r.frame_words) for _ in f]
        tables.append(align.ActivationTable(dataset.activation_table(r.words), frames, r.n_frames, r.words))
    responses = np.vstack([voxel_normalize(r.surface()).T for r in recs])
    return dataset, align.StoryFeatures(tables, settings["reduced_dim"]), responses


def cmd_verify(settings, out):
    d_values = parse_range(settings["d_range"])
    l_values = parse_range(settings["l_range"])
    if any(d < 0 for d in d_values) or any(l < 1 for l in l_values):
        raise UsageError("need d >= 0 and l >= 1")
    penalties = settings["penalties"]
    spec = align.RidgeSpec(tuple(penalties) if penalties else align.DEFAULT_PENALTIES, settings["folds"])
    dataset, features, responses = verify_inputs(settings)
    rois = {name: dataset.atlas.resolve(name) for name in settings["rois"]}
    if d_values and l_values:
        surfaces = align.score_sweep(features, responses, d_values, l_values, rois, spec)
    else:
        surfaces = {}
    with staged(out) as tmp:
        (tmp / "scores.csv").write_text(align.surfaces_csv(surfaces))
        summary = {}
        for i, (name, surface) in enumerate(surfaces.items()):
            svg = "surface.svg" if len(surfaces) == 1 else f"surface_{_slug(name)}.svg"
            (tmp / svg).write_text(align.surface_svg(surface))
            summary[name] = {"voxels": len(rois[name]),
                             "argmax_d": {str(l): surface.argmax_d(l) for l in l_values},
                             "max_score": float(surface.scores.max())}
        (tmp / "summary.json").write_text(dumps(summary))
        (tmp / RUN_CONFIG).write_text(dumps({"command": "verify", **settings}))


def _splits(dataset, settings):
    sp = settings["split"]
    spec = SplitSpec.auto(dataset.recordings, sp.get("mode", "within-subject"), sp.get("n_valid", 1),
                          sp.get("n_test", 1), sp.get("subject"))
    splits = make_splits(dataset.recordings, spec)
    if splits.audit:
        raise DatasetError("split leaks: " + "; ".join(splits.audit))
    if settings["shuffle_fmri"]:
        seed = settings["seed"]
        splits.train = shuffle_recordings(splits.train, seed)
        splits.valid = shuffle_recordings(splits.valid, seed + 1)
        splits.test = shuffle_recordings(splits.test, seed + 2)
    return spec, splits


def train_model_config(settings):
    model = dict(settings["model"])
    model["seed"] = settings["seed"]
    if settings["lambda"] is not None:
        model["lam"] = settings["lambda"]
    if settings["epochs"] is not None:
        model["epochs"] = settings["epochs"]
    return ModelConfig.from_dict(model).to_dict()


def cmd_train(settings, out):
    model = train_model_config(settings)          # validates before any work
    dataset = load_dataset(_require(settings, "data"))
    spec, splits = _splits(dataset, settings)
    roi = None if settings["no_side_net"] else settings["roi"]
    records = []
    est = PredFTDecoder(model, dataset.atlas, roi, settings["max_vocab"], settings["train_stride"],
                        settings["eval_stride"], settings["tokens_per_frame"], log_fn=records.append)
    est.fit(splits.train, valid=splits.valid)
    with staged(out) as tmp:
        est.checkpoint_.save(tmp / "checkpoint")
        (tmp / "vocab.json").write_text(dumps(est.vocab_.tokens))
        (tmp / "split.json").write_text(dumps({"mode": spec.mode, "train": spec.train,
                                               "valid": spec.valid, "test": spec.test}))
        (tmp / "train_log.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
        (tmp / "history.json").write_text(dumps(est.history_))
        (tmp / RUN_CONFIG).write_text(dumps({"command": "train", **settings}))


def restore(run_dir):
    """Estimator and training settings from a ``train`` output directory."""
    run_dir = Path(run_dir)
    if not (run_dir / RUN_CONFIG).is_file():
        raise UsageError(f"{run_dir} is not a train output directory")
    train = json.loads((run_dir / RUN_CONFIG).read_text())
    dataset = load_dataset(train["data"])
    ckpt = Checkpoint.load(run_dir / "checkpoint")
    roi = train["roi"] if ckpt.cfg.side_network else None
    est = PredFTDecoder(train["model"], dataset.atlas, roi, eval_stride=train["eval_stride"])
    est.vocab_ = Vocab(json.loads((run_dir / "vocab.json").read_text()))
    est.checkpoint_ = ckpt
    est.config_ = ckpt.cfg
    return est, train, dataset


def cmd_decode(settings, out):
    est, train, dataset = restore(_require(settings, "run"))
    if settings["split"] not in ("train", "valid", "test"):
        raise UsageError(f"unknown split {settings['split']!r}")
    changes = {}
    if settings["beam"] is not None:
        changes["beam"] = settings["beam"]
    if settings["max_len"] is not None:
        changes["max_gen_len"] = settings["max_len"]
    if changes:
        est.checkpoint_.model.cfg = est.config_ = est.config_.replace(**changes)
        est.config_.validate()
    _, splits = _splits(dataset, train)
    samples, decoded = est.decode_windows(getattr(splits, settings["split"]), settings["stride"])
    with staged(out) as tmp:
        lines = [json.dumps({"subject": s.subject, "story": s.story, "start": s.start,
                             "frame_sizes": s.frame_sizes, "truth": s.words, "decoded": d},
                            sort_keys=True) + "\n" for s, d in zip(samples, decoded)]
        (tmp / "decoded.jsonl").write_text("".join(lines))
        (tmp / RUN_CONFIG).write_text(dumps({"command": "decode", **settings}))


def read_decoded(path):
    path = Path(path)
    if path.is_dir():
        path = path / "decoded.jsonl"
    rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    for row in rows:
        if sum(row["frame_sizes"]) != len(row["truth"]):
            raise UsageError(f"frame sizes do not cover the truth words in {path}")
    return rows


def analyze(rows):
    events = []
    for i, row in enumerate(rows):
        if row["truth"]:
            events += [(i, e) for e in align_errors(row["decoded"], row["truth"], row["frame_sizes"])]
    hist = error_position_distribution([e for _, e in events])
    return events, hist, (None if hist.empty else info_loss_slope(hist))


def cmd_evaluate(settings, out):
    rows = [r for r in read_decoded(_require(settings, "decoded")) if r["truth"]]
    plugin = None
    if settings["plugin_scores"]:
        plugin = json.loads(Path(settings["plugin_scores"]).read_text())
    report = score_pairs([r["decoded"] for r in rows], [r["truth"] for r in rows], plugin)
    _, report.histogram, report.phi = analyze(rows)
    with staged(out) as tmp:
        (tmp / "metrics.json").write_text(dumps(report.to_dict()))
        (tmp / RUN_CONFIG).write_text(dumps({"command": "evaluate", **settings}))


def cmd_analyze_errors(settings, out):
    rows = read_decoded(_require(settings, "decoded"))
    events, hist, phi = analyze(rows)
    with staged(out) as tmp:
        write_csv(tmp / "errors.csv", ["pair", "kind", "truth_pos", "frame", "pospct"],
                  [[i, e.kind, e.truth_pos, e.frame, e.pospct] for i, e in events])
        write_csv(tmp / "histogram.csv", ["bucket", "probability"],
                  [[10 * (b + 1), repr(float(p))] for b, p in enumerate(hist.probabilities)])
        kinds = {k: sum(1 for _, e in events if e.kind == k) for k in ("substitution", "insertion", "deletion")}
        (tmp / "analysis.json").write_text(dumps({"events": len(events), "kinds": kinds, "phi": phi,
                                                  "empty": hist.empty}))
        if not hist.empty:
            (tmp / "histogram.svg").write_text(histogram_svg(hist.probabilities))
        (tmp / RUN_CONFIG).write_text(dumps({"command": "analyze-errors", **settings}))


COMMANDS = {"synth": cmd_synth, "verify": cmd_verify, "train": cmd_train, "decode": cmd_decode,
            "evaluate": cmd_evaluate, "analyze-errors": cmd_analyze_errors}


def build_parser():
    parser = _Parser(prog="predft", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--out", required=True, help="output directory (must not exist)")
        p.add_argument("--seed", type=int)
        p.add_argument("--config", help="JSON settings, e.g. a previous run_config.json")
        return p

    command("synth", "write a synthetic dataset")

    p = command("verify", "prediction-score sweep over (d, l)")
    p.add_argument("--data")
    p.add_argument("--subject")
    p.add_argument("--roi", dest="rois", action="append", help="ROI group; repeatable")
    p.add_argument("--d-range", help="prediction distances lo:hi (inclusive)")
    p.add_argument("--l-range", help="prediction lengths lo:hi (inclusive)")
    p.add_argument("--reduced-dim", type=int)
    p.add_argument("--folds", type=int)

    p = command("train", "train the decoder")
    p.add_argument("--data")
    p.add_argument("--roi")
    p.add_argument("--no-side-net", action="store_const", const=True)
    p.add_argument("--shuffle-fmri", action="store_const", const=True)
    p.add_argument("--lambda", type=float)
    p.add_argument("--epochs", type=int)

    p = command("decode", "decode a split with a trained model")
    p.add_argument("--run", help="train output directory")
    p.add_argument("--split")
    p.add_argument("--stride", type=int)
    p.add_argument("--beam", type=int)
    p.add_argument("--max-len", type=int)

    p = command("evaluate", "BLEU/ROUGE and error-position summary of decoded text")
    p.add_argument("--decoded", help="decode output directory or decoded.jsonl")
    p.add_argument("--plugin-scores", help="JSON {metric: [per-pair scores]}")

    p = command("analyze-errors", "per-word decoding errors and their within-frame positions")
    p.add_argument("--decoded", help="decode output directory or decoded.jsonl")
    return parser


def dispatch(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"predft: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:          # --help
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args.command, args)
        COMMANDS[args.command](settings, args.out)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"predft {args.command}: invalid input: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"predft {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None):
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
