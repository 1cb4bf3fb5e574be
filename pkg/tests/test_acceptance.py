"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL: ...`` line (visible
with ``pytest -s`` or in the captured output of a failure). The training
criteria share one session-scoped set of runs.
"""

import itertools
import json
import time

import numpy as np
import pytest

from predft import align, metrics
from predft import numkit as nk
from predft.cli import dispatch
from predft.data import (
    SEP,
    SplitSpec,
    SynthSpec,
    audit_split,
    collate,
    shuffle_recordings,
    synth_dataset,
    voxel_normalize,
)
from predft.data.windows import WindowSample
from predft.model import ModelConfig, PredFT, PredFTDecoder, build_pc_mask, joint_loss, main_forward

from oracles import METRIC_FIXTURES, edit_distance, pc_mask_rule, ridge_closed_form

SEEDS = (0, 1, 2)


def report(n, ok, detail):
    print(f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


# -- 1. gradients ----------------------------------------------------------------------------

def _op_cases(r):
    x = lambda *s: nk.Tensor(r.normal(size=s))  # noqa: E731
    w34, w43, v = x(3, 4), x(4, 3), x(3, 4)
    mask = r.random((3, 4)) > 0.3
    mask[:, 0] = True
    gamma, beta = x(4), x(4)
    kernel = x(2, 2, 2, 2, 3)
    ids = np.array([[1, 0], [2, 2]])
    pos = nk.Tensor(r.uniform(0.5, 2.0, size=(3, 4)))
    return {
        "add": (w34, lambda t: nk.tsum(nk.add(t, v) * v)),
        "sub": (w34, lambda t: nk.tsum(nk.sub(v, t) * v)),
        "mul": (w34, lambda t: nk.tsum(nk.mul(t, t) * v)),
        "div": (pos, lambda t: nk.tsum(nk.div(v, t))),
        "neg": (w34, lambda t: nk.tsum(nk.neg(t) * v)),
        "relu": (w34, lambda t: nk.tsum(nk.relu(t) * v)),
        "exp": (w34, lambda t: nk.tsum(nk.exp(t) * v)),
        "log": (pos, lambda t: nk.tsum(nk.log(t) * v)),
        "sum": (w34, lambda t: nk.tsum(nk.tsum(t, axis=1) * nk.tsum(t, axis=1))),
        "mean": (w34, lambda t: nk.tsum(nk.mean(t, axis=0, keepdims=True) * v)),
        "reshape": (w34, lambda t: nk.tsum(nk.reshape(t, (4, 3)) * w43)),
        "transpose": (w34, lambda t: nk.tsum(nk.transpose(t) * w43)),
        "concat": (w34, lambda t: nk.tsum(nk.concat([t, v * t], axis=0) * nk.concat([v, t], axis=0))),
        "getitem": (w34, lambda t: nk.tsum(nk.getitem(t, (slice(1, 3), [0, 2, 2])) * nk.getitem(t, (slice(0, 2), [1, 1, 3])))),
        "embedding": (x(3, 4), lambda t: nk.tsum(nk.embedding(t, ids) * nk.embedding(t, ids))),
        "matmul": (w34, lambda t: nk.tsum(nk.matmul(t, w43) * nk.matmul(t, w43))),
        "masked_softmax": (w34, lambda t: nk.tsum(nk.masked_softmax(t, mask) * v)),
        "layer_norm": (w34, lambda t: nk.tsum(nk.layer_norm(t, gamma, beta) * v)),
        "group_norm": (x(3, 4), lambda t: nk.tsum(nk.group_norm(t, 2) * v)),
        "conv3d": (x(4, 4, 3, 2), lambda t: nk.tsum(nk.conv3d(t, kernel) * nk.conv3d(t, kernel))),
        "cross_entropy": (w34, lambda t: nk.cross_entropy(t, [1, 0, 3], ignore_id=0)),
    }


def test_criterion_1_gradients():
    start = time.time()
    r = np.random.default_rng(1)
    failed = [name for name, (x, f) in _op_cases(r).items() if not nk.grad_check(f, x, rel_tol=1e-4).passed]

    cfg = dict(d_model=16, heads=2, ffn_dim=32, enc_layers=1, dec_layers=1, side_enc_layers=1,
               side_dec_layers=1, roi_hidden=16, vocab_size=20, frames=6, fir_window=3, voxel_dim=30,
               roi_dim=8, max_len=24, dropout=0.0)
    config = ModelConfig(**cfg)
    model = PredFT(config)
    samples = []
    for _ in range(2):
        sizes = [int(r.integers(1, 3)) for _ in range(6)]
        ids = [int(i) for i in r.integers(5, 20, size=sum(sizes))]
        side = [t for _ in range(6) for t in [*map(int, r.integers(5, 20, size=2)), SEP]]
        samples.append(WindowSample("s", "st", 0, r.normal(size=(6, 30)), r.normal(size=(6, 8)),
                                    [str(i) for i in ids], sizes, ids, side))
    batch = collate(samples)

    def loss_at(lam):
        def f(_):
            main, side = model.forward(batch)
            return joint_loss(main, batch.main_tgt, side, batch.side_tgt, lam)[0]
        return f

    worst = 0.0
    for name, p in model.named_parameters():
        coords = r.choice(p.data.size, size=min(3, p.data.size), replace=False)
        # the side loss reaches the shared embedding only through a stop-gradient
        rep = nk.grad_check(loss_at(0.0 if name == "embed" else 1.0), p, rel_tol=1e-3, coords=coords, h=1e-5)
        worst = max(worst, rep.max_rel_error)
        if not rep.passed:
            failed.append(name)
    elapsed = time.time() - start
    report(1, not failed and elapsed < 60,
           f"{len(_op_cases(r))} ops at 1e-4, all parameter tensors end-to-end at 1e-3 (worst {worst:.1e}); "
           f"failures={failed}; {elapsed:.1f}s")


# -- 2. ridge oracle -------------------------------------------------------------------------

def test_criterion_2_ridge_oracle():
    r = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        x, y = r.normal(size=(40, 6)), r.normal(size=(40, 8))
        got = align.brain_score(x, y, align.RidgeSpec(penalties=(2.5,), folds=1)).predictions
        worst = max(worst, float(np.abs(got - ridge_closed_form(x, y, 2.5)).max()))
    report(2, worst < 1e-8, f"max deviation from normal equations over 20 problems: {worst:.2e}")


# -- 3. prediction-score invariants ----------------------------------------------------------

def test_criterion_3_constant_future_columns():
    r = np.random.default_rng(3)
    worst = 0.0
    for fill in (0.0, -3.0, 11.0):
        base = r.normal(size=(80, 5))
        y = base @ r.normal(size=(5, 6)) + r.normal(size=(80, 6))
        worst = max(worst, abs(align.prediction_score(base, np.full((80, 4), fill), y).score))
    report(3, worst < 1e-10, f"max |P| with zero/constant future columns: {worst:.2e}")


# -- 4. planted-signal recovery --------------------------------------------------------------

def test_criterion_4_planted_signal():
    start = time.time()
    rows = []
    for seed in SEEDS:
        ds = synth_dataset(SynthSpec(seed=seed, stories=8, frames_per_story=60, n_voxels=500,
                                     bpc_fraction=0.1, planted_distance=4, planted_length=2))
        lookup = dict(zip(ds.activation_words, ds.activations))
        tables = [align.ActivationTable.from_frames(rec.frame_words, lambda w: lookup[w]) for rec in ds.recordings]
        y = np.vstack([voxel_normalize(rec.surface()).T for rec in ds.recordings])
        bpc = ds.atlas.resolve("BPC")
        rnd = np.sort(np.random.default_rng(100 + seed).choice(y.shape[1], len(bpc), replace=False))
        surfaces = align.score_sweep(align.StoryFeatures(tables, 20), y, range(0, 9), [2], {"BPC": bpc, "random": rnd})
        peak = surfaces["BPC"].argmax_d(2)
        p_bpc, p_rnd = surfaces["BPC"].scores[4, 0], surfaces["random"].scores[4, 0]
        rows.append((abs(peak - 4) <= 1 and p_bpc > p_rnd, peak, p_bpc, p_rnd))
    elapsed = time.time() - start
    detail = "; ".join(f"seed {s}: argmax d={p}, P_bpc={b:.4f} vs P_rand={q:.4f}" for s, (_, p, b, q) in zip(SEEDS, rows))
    report(4, all(ok for ok, *_ in rows) and elapsed < 300, f"{detail}; {elapsed:.1f}s")


# -- 5. mask correctness ---------------------------------------------------------------------

def test_criterion_5_mask():
    mismatches = 0
    for n in range(1, 7):
        for k_star in range(1, 5):
            for frags in itertools.combinations_with_replacement(range(6), n):
                mismatches += not np.array_equal(build_pc_mask(list(frags), k_star).mask, pc_mask_rule(frags, k_star))
    cfg = ModelConfig(d_model=16, heads=2, ffn_dim=32, enc_layers=1, dec_layers=1, side_enc_layers=1,
                      side_dec_layers=1, roi_hidden=16, vocab_size=20, frames=6, fir_window=3, voxel_dim=30,
                      roi_dim=8, max_len=24, dropout=0.0)
    model = PredFT(cfg)
    leaks = 0
    for case in range(20):
        r = np.random.default_rng(500 + case)
        enc = model.encode_fmri(r.normal(size=(1, 6, 30)))[0]
        pred = model.encode_rois(r.normal(size=(1, 6, 8)))[0]
        frags = np.sort(r.integers(1, 6, size=6))
        tokens = [2] + [int(t) for t in r.integers(5, 20, size=5)]
        mask = build_pc_mask(frags, cfg.k_star)
        i = int(r.integers(6))
        hidden = ~mask.mask[i]
        noisy = pred.data.copy()
        noisy[hidden] += 10 * r.normal(size=noisy[hidden].shape)
        base = main_forward(model, enc, pred, tokens, mask).data[i]
        leaks += not hidden.any() or not np.array_equal(base, main_forward(model, enc, nk.Tensor(noisy), tokens, mask).data[i])
    report(5, mismatches == 0 and leaks == 0,
           f"brute-force mismatches={mismatches}; perturbation leaks={leaks}/20")


# -- 7. metric oracles -----------------------------------------------------------------------

def test_criterion_7_metrics():
    bad = []
    for cand, ref, b1, b2, p, r, f in METRIC_FIXTURES:
        c, rf = cand.split(), ref.split()
        if not np.allclose(metrics.bleu(c, [rf], 2), [b1, b2], atol=1e-9, rtol=0):
            bad.append(f"bleu {cand!r}")
        if not np.allclose(metrics.rouge1(c, rf), [p, r, f], atol=1e-9, rtol=0):
            bad.append(f"rouge {cand!r}")
    text = "he could still hear and feel".split()
    identity = metrics.bleu(text, [text]) == [100.0] * 4 and metrics.rouge1(text, text) == (100.0,) * 3
    phis = (metrics.info_loss_slope(np.full(10, 0.1)), metrics.info_loss_slope(np.r_[np.zeros(5), np.full(5, 0.2)]),
            metrics.info_loss_slope(np.r_[np.full(5, 0.2), np.zeros(5)]))
    report(7, not bad and identity and phis == (0.0, 2.0, -2.0),
           f"{len(METRIC_FIXTURES)} fixtures, mismatches={bad}; identity={identity}; phi={phis}")


# -- 8. error analysis -----------------------------------------------------------------------

def test_criterion_8_error_alignment():
    truth = "he could still hear and feel that sharp metal ripping explosion".split()
    decoded = "he should still hear and feel that explosion".split()
    events = metrics.align_errors(decoded, truth, [7, 4])
    got = [(e.kind, truth[e.truth_pos]) for e in events]
    expect = [("substitution", "could"), ("deletion", "sharp"), ("deletion", "metal"), ("deletion", "ripping")]
    r = np.random.default_rng(8)
    wrong = 0
    for _ in range(200):
        a = list(r.choice(list("abcdef"), size=r.integers(0, 13)))
        b = list(r.choice(list("abcdef"), size=r.integers(1, 13)))
        wrong += metrics.edit_alignment(a, b)[0] != edit_distance(a, b)
    report(8, got == expect and wrong == 0, f"worked example events={got}; DP mismatches={wrong}/200")


# -- 9. split audit --------------------------------------------------------------------------

def test_criterion_9_split_audit():
    r = np.random.default_rng(9)
    caught = clean_ok = 0
    for _ in range(100):
        subjects = [f"sub{i}" for i in range(r.integers(3, 6))]
        stories = [f"st{i}" for i in range(r.integers(4, 8))]
        ns, nt = int(r.integers(1, len(subjects))), int(r.integers(1, len(stories) - 1))
        train = [(s, t) for s in subjects[:ns] for t in stories[:nt]]
        test = [(s, t) for s in subjects[ns:] for t in stories[nt:]]
        spec = SplitSpec("cross-subject", train, [], test)
        clean_ok += audit_split(spec) == []
        i = int(r.integers(len(test)))
        subj, story = test[i]
        kind = "subject" if r.random() < 0.5 else "story"
        test[i] = (subjects[int(r.integers(ns))], story) if kind == "subject" else (subj, stories[int(r.integers(nt))])
        problems = audit_split(SplitSpec("cross-subject", train, [], test))
        caught += len(problems) == 1 and problems[0].startswith(kind)
    report(9, caught == 100 and clean_ok == 100, f"caught {caught}/100 injected leaks; {clean_ok}/100 clean splits empty")


# -- 6 and 10. training runs -----------------------------------------------------------------

# Synthetic corpus and model sized for a single CPU core.
TRAIN_SYNTH = dict(stories=64, frames_per_story=60, n_voxels=500, vocab_size=59, embed_dim=64,
                   words_per_frame=(2, 2), noise=0.2, lag=2, lag_gain=4.0, future_gain=8.0)
TRAIN_MODEL = dict(d_model=128, ffn_dim=256, roi_hidden=128, enc_layers=1, dec_layers=2, side_enc_layers=2,
                   side_dec_layers=1, frames=6, batch_size=32, epochs=40, lam=1.0)
N_VALID, N_TEST, EVAL_STRIDE = 2, 6, 5


def _run(seed, variant):
    ds = synth_dataset(SynthSpec(seed=seed, **TRAIN_SYNTH))
    recs = sorted(ds.recordings, key=lambda rec: rec.story)
    train, valid, test = recs[:-N_VALID - N_TEST], recs[-N_VALID - N_TEST:-N_TEST], recs[-N_TEST:]
    if variant == "shuffle":
        train, valid, test = (shuffle_recordings(part, seed + i) for i, part in enumerate((train, valid, test)))
    n_bpc = len(ds.atlas.resolve("BPC"))
    roi = {"bpc": "BPC", "shuffle": "BPC", "none": None, "random": f"Random({seed},{n_bpc})"}[variant]
    est = PredFTDecoder({**TRAIN_MODEL, "seed": seed}, ds.atlas, roi, max_vocab=64, eval_stride=EVAL_STRIDE)
    start = time.time()
    est.fit(train, valid=valid)
    bleu1 = est.score(test)
    losses = [h["valid_main"] for h in est.history_]
    return {"bleu1": bleu1, "ratio": losses[-1] / losses[0], "seconds": time.time() - start}


@pytest.fixture(scope="session")
def training_runs():
    return {(seed, v): _run(seed, v) for seed in SEEDS for v in ("bpc", "none", "random")}


@pytest.fixture(scope="session")
def shuffle_runs():
    return {seed: _run(seed, "shuffle") for seed in SEEDS}


def test_criterion_6_training(training_runs):
    runs = training_runs
    loss_ok = all(runs[s, "bpc"]["ratio"] <= 0.5 for s in SEEDS)
    wins = sum(runs[s, "bpc"]["bleu1"] > max(runs[s, "none"]["bleu1"], runs[s, "random"]["bleu1"]) for s in SEEDS)
    elapsed = sum(r["seconds"] for r in runs.values())
    detail = "; ".join(
        f"seed {s}: BLEU-1 bpc={runs[s, 'bpc']['bleu1']:.2f} none={runs[s, 'none']['bleu1']:.2f} "
        f"random={runs[s, 'random']['bleu1']:.2f}, loss ratio={runs[s, 'bpc']['ratio']:.3f}" for s in SEEDS)
    report(6, loss_ok and wins >= 2 and elapsed < 1200, f"{detail}; bpc wins {wins}/3; {elapsed:.0f}s")


def test_criterion_10_shuffled_fmri(training_runs, shuffle_runs):
    below = sum(shuffle_runs[s]["bleu1"] < training_runs[s, "bpc"]["bleu1"] for s in SEEDS)
    detail = "; ".join(f"seed {s}: shuffled={shuffle_runs[s]['bleu1']:.2f} vs {training_runs[s, 'bpc']['bleu1']:.2f}"
                       for s in SEEDS)
    report(10, below >= 2, f"{detail}; shuffled below in {below}/3")


# -- 11. CLI determinism ---------------------------------------------------------------------

def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_criterion_11_cli_determinism(tmp_path):
    synth = {"synth": {"stories": 5, "frames_per_story": 16, "n_voxels": 60, "vocab_size": 20,
                       "words_per_frame": [1, 3]}}
    model = {"model": {"d_model": 16, "heads": 2, "ffn_dim": 32, "enc_layers": 1, "dec_layers": 1,
                       "side_enc_layers": 1, "side_dec_layers": 1, "frames": 6, "roi_hidden": 16,
                       "batch_size": 8, "epochs": 2, "max_gen_len": 12}}
    (tmp_path / "s.json").write_text(json.dumps(synth))
    (tmp_path / "m.json").write_text(json.dumps(model))
    d = tmp_path
    steps = [
        ["synth", "--config", d / "s.json", "--seed", 5, "--out", d / "data"],
        ["verify", "--data", d / "data", "--d-range", "0:3", "--l-range", "1:2", "--reduced-dim", 8, "--out", d / "verify"],
        ["train", "--data", d / "data", "--config", d / "m.json", "--out", d / "run"],
        ["decode", "--run", d / "run", "--stride", 3, "--out", d / "dec"],
        ["evaluate", "--decoded", d / "dec", "--out", d / "eval"],
        ["analyze-errors", "--decoded", d / "dec", "--out", d / "err"],
    ]
    codes, same = [], []
    for argv in steps:
        out = argv[-1]
        codes.append(dispatch([str(a) for a in argv]))
        again = out.with_name(out.name + "-again")
        codes.append(dispatch([argv[0], "--config", str(out / "run_config.json"), "--out", str(again)]))
        same.append(_tree(out) == _tree(again))
    report(11, codes == [0] * len(codes) and all(same),
           f"exit codes={codes}; identical re-runs={sum(same)}/{len(same)}")
