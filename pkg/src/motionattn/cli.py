"""Command-line surface: data generation, training, prediction, evaluation,
attention export and the numeric self-check.

Every command takes ``--config <file>`` holding ``key=value`` lines whose
keys mirror the flag names (``n-keep=20`` for ``--n-keep``); flags given on
the command line override the file. All randomness flows from ``--seed``,
so rerunning a command reproduces its artifacts byte for byte.

Exit codes: 0 success, 1 numeric failure, 2 usage/configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evaluation, fusion, pose_data, training
from .dct_codec import dct, idct
from .gcn_predictor import MotionPredictor, zero_velocity
from .motion_attention import (
    AttentionConfig,
    AttentionModel,
    attention_scores,
    build_bank,
    default_kernels,
)
from .numerics import GradientError, Tensor, finite_diff_check
from .pose_data import (
    PoseFileError,
    PoseSequence,
    default_part_map,
    load_sequence,
    make_partition,
    parse_part_map,
    save_sequence,
)
from .training import TrainConfig, TrainingError, slice_windows


class UsageError(Exception):
    pass


def _read_config(path: str, parser: argparse.ArgumentParser) -> dict[str, str]:
    known = {
        opt.lstrip("-"): action.dest
        for action in parser._actions
        for opt in action.option_strings
    }
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        values[known[key]] = value.strip()
    return values


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse argv twice: config file values become defaults, flags override."""
    pre, _ = parser.parse_known_args(argv)
    if getattr(pre, "config", None):
        raw = _read_config(pre.config, parser)
        typed = {}
        for action in parser._actions:
            if action.dest in raw:
                value = raw[action.dest]
                if action.type is not None:
                    value = action.type(value)
                elif isinstance(action.const, bool) or isinstance(action.default, bool):
                    value = value.lower() in ("1", "true", "yes")
                if isinstance(action, argparse._AppendAction):
                    value = [value]
                typed[action.dest] = value
        parser.set_defaults(**typed)
    return parser.parse_args(argv)


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.replace(",", " ").split()]


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def _add_config_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; flags override its entries")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motionattn")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic pose file")
    _add_config_flag(g)
    g.add_argument("--kind", choices=["periodic", "repeat-gap"], default="periodic")
    g.add_argument("--joints", type=int, default=6)
    g.add_argument("--frames", type=int, default=200)
    g.add_argument("--period", type=int, default=20)
    g.add_argument("--waveform", choices=["sine", "triangle"], default="sine")
    g.add_argument("--shared-phase", action="store_true",
                   help="same phase for every coordinate (pose repeats per cycle)")
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--motif", type=int, default=30, help="motif frames (repeat-gap)")
    g.add_argument("--gap", type=int, default=40, help="filler frames (repeat-gap)")
    g.add_argument("--fps", type=float, default=25.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train one attention level + predictor")
    _add_config_flag(t)
    t.add_argument("--data", action="append", required=True)
    t.add_argument("--val-data", action="append", default=None)
    t.add_argument("--level", choices=["pose", "part", "joint"], default="pose")
    t.add_argument("--part-map", help="limb map file for --level part")
    t.add_argument("--M", type=int, default=10, help="query/key window frames")
    t.add_argument("--T", type=int, default=10, help="prediction horizon frames")
    t.add_argument("--N", type=int, default=50, help="observed history frames")
    t.add_argument("--d", type=int, default=32, help="attention embedding width")
    t.add_argument("--F", type=int, default=64, help="predictor feature width")
    t.add_argument("--blocks", type=int, default=4)
    t.add_argument("--n-keep", type=int, default=None,
                   help="kept low frequencies (default: all)")
    t.add_argument("--mode", choices=["motion", "frame-wise"], default="motion")
    t.add_argument("--loss", choices=["mpjpe", "angle-l1"], default="mpjpe")
    t.add_argument("--squared-loss", action="store_true",
                   help="average squared distances in the position loss")
    t.add_argument("--share-joint-nets", type=int, choices=[0, 1], default=1)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch", type=int, default=16)
    t.add_argument("--lr", type=float, default=5e-4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)

    f = sub.add_parser("train-fusion", help="combine trained attention levels")
    _add_config_flag(f)
    f.add_argument("--ckpt", action="append", required=True,
                   help="base checkpoint (repeat per level)")
    f.add_argument("--data", action="append", required=True)
    f.add_argument("--val-data", action="append", default=None)
    f.add_argument("--fusion", choices=["concat", "pre", "post"], default="post")
    f.add_argument("--loss", choices=["mpjpe", "angle-l1"], default="mpjpe")
    f.add_argument("--squared-loss", action="store_true")
    f.add_argument("--N", type=int, default=None, help="default: from checkpoint")
    f.add_argument("--F", type=int, default=64, help="predictor width (concat/pre)")
    f.add_argument("--blocks", type=int, default=4, help="predictor blocks (concat/pre)")
    f.add_argument("--fusion-F", type=int, default=16, help="weight-head width")
    f.add_argument("--fusion-blocks", type=int, default=1)
    f.add_argument("--epochs", type=int, default=20)
    f.add_argument("--batch", type=int, default=16)
    f.add_argument("--lr", type=float, default=5e-4)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="predict future poses from a history file")
    _add_config_flag(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--N", type=int, default=None,
                   help="history frames to use (default: from checkpoint)")
    p.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="error tables at millisecond horizons")
    _add_config_flag(e)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", action="append", required=True)
    e.add_argument("--N", type=int, default=None)
    e.add_argument("--long-N", type=int, default=None,
                   help="also evaluate with this longer history")
    e.add_argument("--horizons", type=_int_list, default=None,
                   help="comma-separated milliseconds")
    e.add_argument("--metric", choices=["mpjpe", "euler"], default=None)
    e.add_argument("--sigmas", type=_float_list, default=None,
                   help="noise sweep levels (same units as the data)")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)

    a = sub.add_parser("attn-export", help="attention maps + trajectories as CSV")
    _add_config_flag(a)
    a.add_argument("--ckpt", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--steps", type=int, default=3)
    a.add_argument("--N", type=int, default=None)
    a.add_argument("--coords", type=_int_list, default=[0])
    a.add_argument("--out", required=True, help="output prefix")

    s = sub.add_parser("selfcheck", help="codec, gradient and attention checks")
    _add_config_flag(s)
    s.add_argument("--seed", type=int, default=0)

    return parser


# command bodies ----------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    if args.kind == "periodic":
        seq = pose_data.synth_periodic(
            args.joints,
            args.period,
            args.frames,
            args.seed,
            fps=args.fps,
            noise=args.noise,
            waveform=args.waveform,
            phase=0 if args.shared_phase else None,
        )
    else:
        seq = pose_data.synth_repeat_after_gap(
            args.motif, args.gap, args.frames, args.seed,
            joints=args.joints, fps=args.fps,
        )
    save_sequence(seq, args.out)
    print(f"wrote {seq.n_frames} frames x {seq.k} coords to {args.out}")
    return 0


def _load_all(paths: list[str]) -> list[PoseSequence]:
    return [load_sequence(p) for p in paths]


def _check_loss_repr(loss: str, sequences: list[PoseSequence]) -> None:
    want = "xyz" if loss == "mpjpe" else "expmap"
    for seq in sequences:
        if seq.representation != want:
            raise UsageError(
                f"loss {loss!r} needs {want} data, file has {seq.representation!r}"
            )


def _partition_for(args, k: int):
    part_map = None
    if args.level == "part":
        if args.part_map:
            part_map = parse_part_map(Path(args.part_map).read_text(encoding="utf-8"))
        else:
            part_map = default_part_map(k // 3)
            print("note: --part-map not given, using contiguous joint groups")
    return make_partition(k, args.level, part_map=part_map)


def _cmd_train(args) -> int:
    sequences = _load_all(args.data)
    _check_loss_repr(args.loss, sequences)
    k = sequences[0].k
    if any(s.k != k for s in sequences):
        raise UsageError("training sequences disagree on pose dimension")
    partition = _partition_for(args, k)
    if args.mode == "frame-wise":
        k1 = k2 = 1
    elif args.M == 10:
        k1, k2 = 6, 5
    else:
        k1, k2 = default_kernels(args.M)
    cfg = AttentionConfig(
        window=args.M, horizon=args.T, embed_dim=args.d, level=args.level,
        k1=k1, k2=k2, mode=args.mode, n_keep=args.n_keep,
        share_joint_nets=bool(args.share_joint_nets),
    )
    model = MotionPredictor.build(cfg, partition, args.F, args.blocks, args.seed)
    tcfg = TrainConfig(
        history=args.N, horizon=args.T, epochs=args.epochs, batch_size=args.batch,
        base_lr=args.lr, loss=args.loss, squared=args.squared_loss, seed=args.seed,
    )
    val_windows = None
    if args.val_data:
        val_seqs = _load_all(args.val_data)
        _check_loss_repr(args.loss, val_seqs)
        val_windows = slice_windows(val_seqs, args.N, args.T)
    result = training.train_model(model, sequences, tcfg, val_windows=val_windows)
    extra = {
        "n_history": str(args.N),
        "loss": args.loss,
        "fps": f"{sequences[0].fps:.17g}",
        "representation": sequences[0].representation,
    }
    model.save(args.out, extra)
    curve_path = Path(args.out).with_suffix("").as_posix() + "_loss.csv"
    Path(curve_path).write_text(result.to_csv(), encoding="utf-8")
    print(
        f"trained {args.level} model: best epoch {result.best_epoch} "
        f"(val {result.best_val:.6g}); wrote {args.out} and {curve_path}"
    )
    return 0


def _cmd_train_fusion(args) -> int:
    bases = [MotionPredictor.load(p) for p in args.ckpt]
    metas = [fusion.load_model(p)[1] for p in args.ckpt]
    sequences = _load_all(args.data)
    _check_loss_repr(args.loss, sequences)
    n_history = args.N or int(metas[0].get("n_history", 0))
    if not n_history:
        raise UsageError("--N not given and base checkpoint lacks n_history")
    horizon = bases[0].horizon
    tcfg = TrainConfig(
        history=n_history, horizon=horizon, epochs=max(args.epochs, 1),
        batch_size=args.batch, base_lr=args.lr, loss=args.loss,
        squared=args.squared_loss, seed=args.seed, fusion_epochs=args.epochs,
    )
    val_windows = None
    if args.val_data:
        val_seqs = _load_all(args.val_data)
        val_windows = slice_windows(val_seqs, n_history, horizon)
    if args.fusion == "post":
        model = fusion.PostFusionModel.build(bases, args.fusion_F, args.fusion_blocks,
                                             args.seed)
        result = training.train_fusion(model, sequences, tcfg, val_windows=val_windows)
    elif args.fusion == "pre":
        model = fusion.PreFusionModel.from_bases(bases, args.F, args.blocks,
                                                 args.fusion_F, args.fusion_blocks,
                                                 args.seed)
        result = training.train_model(model, sequences, tcfg, val_windows=val_windows)
    else:
        model = fusion.ConcatFusionModel.from_bases(bases, args.F, args.blocks,
                                                    args.seed)
        result = training.train_model(model, sequences, tcfg, val_windows=val_windows)
    extra = {
        "n_history": str(n_history),
        "loss": args.loss,
        "fps": f"{sequences[0].fps:.17g}",
        "representation": sequences[0].representation,
    }
    model.save(args.out, extra)
    curve_path = Path(args.out).with_suffix("").as_posix() + "_loss.csv"
    Path(curve_path).write_text(result.to_csv(), encoding="utf-8")
    print(
        f"trained {args.fusion}-fusion model: best epoch {result.best_epoch} "
        f"(val {result.best_val:.6g}); wrote {args.out} and {curve_path}"
    )
    return 0


def _history_for(args, meta, seq: PoseSequence) -> np.ndarray:
    n = args.N or int(meta.get("n_history", 0)) or seq.n_frames
    if seq.n_frames < n:
        raise UsageError(f"history file has {seq.n_frames} frames, need {n}")
    return seq.data[-n:]


def _cmd_predict(args) -> int:
    model, meta = fusion.load_model(args.ckpt)
    seq = load_sequence(args.data)
    history = _history_for(args, meta, seq)
    result = evaluation.model_future(model, history, args.steps * model.horizon)
    out_seq = PoseSequence(
        meta.get("representation", seq.representation),
        float(meta.get("fps", seq.fps)),
        result,
        seq.joints if seq.k == result.shape[1] else result.shape[1],
        seq.dims if seq.k == result.shape[1] else 1,
    )
    save_sequence(out_seq, args.out)
    print(f"wrote {result.shape[0]} predicted frames to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model, meta = fusion.load_model(args.ckpt)
    sequences = _load_all(args.data)
    n_history = args.N or int(meta.get("n_history", 0))
    if not n_history:
        raise UsageError("--N not given and checkpoint lacks n_history")
    metric = args.metric or ("euler" if meta.get("loss") == "angle-l1" else "mpjpe")
    fps = sequences[0].fps
    horizons = args.horizons or [
        ms for ms in evaluation.DEFAULT_HORIZONS_MS
        if abs(ms * fps / 1000.0 - round(ms * fps / 1000.0)) < 1e-9
    ]
    if args.sigmas is not None:
        table = evaluation.noise_sweep(
            model, sequences, args.sigmas, args.seed, horizons, fps, n_history,
            metric=metric,
        )
    elif args.long_N:
        short_t, long_t, delta, skipped = evaluation.long_history_compare(
            model, sequences, n_history, args.long_N, horizons, fps, metric=metric
        )
        table = evaluation.ErrorTable(list(horizons))
        table.add_column(f"history_{n_history}", next(iter(short_t.columns.values())))
        table.add_column(f"history_{args.long_N}", next(iter(long_t.columns.values())))
        table.add_column("delta", delta)
        if skipped:
            print(f"skipped {skipped} sequence(s) too short for --long-N")
    else:
        table = evaluation.evaluate_model(
            model, sequences, horizons, fps, n_history, metric=metric
        )
    Path(args.out).write_text(table.to_csv(), encoding="utf-8")
    print(f"wrote {args.out}")
    return 0


def _cmd_attn_export(args) -> int:
    model, meta = fusion.load_model(args.ckpt)
    seq = load_sequence(args.data)
    n = args.N or int(meta.get("n_history", 0)) or seq.n_frames
    if seq.n_frames < n:
        raise UsageError(f"history file has {seq.n_frames} frames, need {n}")
    if seq.n_frames > n:
        history, truth = seq.data[:n], seq.data[n:]
    else:
        history, truth = seq.data, None
    export = evaluation.export_attention(model, history, args.steps)
    prefix = Path(args.out)
    written = []
    for level, parts in export.maps.items():
        for part, rows in enumerate(parts):
            suffix = (
                f"_attn_{level}.csv" if len(parts) == 1
                else f"_attn_{level}_part{part}.csv"
            )
            path = prefix.with_name(prefix.name + suffix)
            path.write_text(evaluation.attention_csv(rows), encoding="utf-8")
            written.append(str(path))
    bad = [c for c in args.coords if not 0 <= c < history.shape[1]]
    if bad:
        raise UsageError(f"coordinate(s) {bad} out of range 0..{history.shape[1] - 1}")
    traj_path = prefix.with_name(prefix.name + "_traj.csv")
    traj_path.write_text(
        evaluation.trajectory_csv(history, export.future, truth, args.coords),
        encoding="utf-8",
    )
    written.append(str(traj_path))
    print("wrote " + ", ".join(written))
    return 0


def _selfcheck(seed: int) -> int:
    rng = np.random.default_rng(seed)
    ok = True

    worst = 0.0
    for length in (4, 8, 20, 64):
        rows = rng.uniform(-1.0, 1.0, size=(50, length))
        worst = max(worst, float(np.abs(idct(dct(rows)) - rows).max()))
    passed = worst < 1e-9
    ok &= passed
    print(f"{'PASS' if passed else 'FAIL'} dct-roundtrip: max |x - idct(dct(x))| = {worst:.3e}")

    cfg = AttentionConfig(window=4, horizon=2, embed_dim=8, level="pose", k1=3, k2=2)
    partition = make_partition(6, "pose")
    model = MotionPredictor.build(cfg, partition, hidden=12, blocks=2, seed=seed)
    history = rng.uniform(-1.0, 1.0, size=(12, 6))
    target = rng.uniform(-1.0, 1.0, size=(6, 6))

    def loss_fn():
        poses, _ = model.forward(history)
        return training.loss_mpjpe(poses, target)

    report = finite_diff_check(loss_fn, model.named_parameters(), h=1e-5, tol=1e-4)
    ok &= report.passed
    print(f"{'PASS' if report.passed else 'FAIL'} gradient-check: {report}")

    worst_sum = 0.0
    all_nonneg = True
    for trial in range(100):
        n = int(rng.integers(1, 12))
        d = int(rng.integers(1, 6))
        if trial % 10 == 0:
            q = np.zeros(d)  # exercises the uniform fallback
        else:
            q = np.abs(rng.normal(size=d))
        keys = np.abs(rng.normal(size=(d, n)))
        scores = attention_scores(Tensor(q), Tensor(keys)).data
        worst_sum = max(worst_sum, abs(float(scores.sum()) - 1.0))
        all_nonneg &= bool((scores >= 0).all())
    passed = worst_sum < 1e-12 and all_nonneg
    ok &= passed
    print(
        f"{'PASS' if passed else 'FAIL'} attention-scores: |sum-1| <= {worst_sum:.3e}, "
        f"non-negative={all_nonneg}"
    )

    hist = rng.uniform(-1.0, 1.0, size=(20, 6))
    cfg2 = AttentionConfig(window=4, horizon=2, embed_dim=8, level="pose", k1=3, k2=2)
    attn = AttentionModel(cfg2, partition, np.random.default_rng(seed))
    bank = build_bank(hist, cfg2, partition)
    sliding, _ = attn.part_scores(bank, 0)
    per_window = []
    enc = attn.key_encoders[0]
    for i in range(bank.n_keys):
        window = hist[i : i + cfg2.window].T
        per_window.append(enc.encode(window).data[:, 0])
    q = attn.query_encoders[0].encode(hist[-cfg2.window :].T).data[:, 0]
    raw = np.array([q @ k for k in per_window])
    expected = raw / raw.sum() if raw.sum() > 1e-12 else np.full(len(raw), 1 / len(raw))
    diff = float(np.abs(sliding.data - expected).max())
    passed = diff < 1e-12
    ok &= passed
    print(f"{'PASS' if passed else 'FAIL'} sliding-key-equivalence: max diff {diff:.3e}")

    print("selfcheck", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, list(sys.argv[1:] if argv is None else argv))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "gen-data":
            return _cmd_gen_data(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "train-fusion":
            return _cmd_train_fusion(args)
        if args.command == "predict":
            return _cmd_predict(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "attn-export":
            return _cmd_attn_export(args)
        if args.command == "selfcheck":
            return _selfcheck(args.seed)
        raise UsageError(f"unknown command {args.command!r}")
    except (UsageError, PoseFileError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, GradientError, ValueError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
