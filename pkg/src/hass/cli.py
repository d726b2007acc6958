"""Command line: ``hass synth | train | eval | gradcheck | compare``.

Every command accepts ``--config FILE`` with flat ``key = value`` lines using
the flag names (dashes or underscores). Precedence is flag > file > default,
unknown keys are rejected, and the resolved configuration is echoed first.

Exit codes: 0 success, 1 validation / input error, 2 runtime or numeric error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import autodiff as ad
from . import data as hdata
from . import serialize
from .encoder import init_encoder
from .gradcheck import check_gradients
from .metrics import (
    confusion,
    mean_report,
    metrics_from_confusion,
    parse_key_values,
    render_report,
    to_key_values,
)
from .model import (
    HEAD_KINDS,
    NumericalError,
    TrainConfig,
    cross_entropy_loss,
    forward_classify,
    init_head,
    model_arrays,
    model_from_tensors,
    model_tensors,
    predict,
    train,
)
from .seeding import stream
from .stages import STAGES

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class ValidationError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


# ---------------------------------------------------------------- option parsing


def _yes_no(text: str) -> bool:
    v = str(text).strip().lower()
    if v in ("yes", "y", "true", "1", "on"):
        return True
    if v in ("no", "n", "false", "0", "off"):
        return False
    raise ValueError(f"expected yes or no, got {text!r}")


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _yes_no_list(text: str) -> list[bool]:
    return [_yes_no(v) for v in str(text).split(",") if v.strip()]


def _optional_int(text: str) -> int | None:
    return None if str(text).strip().lower() in ("", "auto", "none") else int(text)


def _show(value: Any) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, (list, tuple)):
        return ",".join(_show(v) for v in value)
    if value is None:
        return "auto"
    return str(value)


@dataclass(frozen=True)
class Opt:
    name: str
    convert: Callable[[str], Any]
    default: Any
    help: str
    required: bool = False
    choices: tuple[str, ...] | None = None

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


COMMANDS: dict[str, tuple[str, list[Opt]]] = {
    "synth": ("write a seeded synthetic HEEG1 dataset", [
        Opt("out", str, None, "output HEEG1 path", required=True),
        Opt("channels", int, 6, "EEG channels C"),
        Opt("timesteps", int, 64, "samples per epoch T"),
        Opt("count", int, 100, "number of records"),
        Opt("seed", int, 0, "random seed"),
        Opt("spatial", float, 1.0, "spatial (cross-channel) coupling in [0, 1]"),
        Opt("temporal", float, 1.0, "temporal signature amplitude in [0, 1]"),
        Opt("noise", float, 0.1, "white-noise standard deviation"),
        Opt("balance", _floats, [0.2] * 5, "class probabilities W,N1,N2,N3,REM"),
        Opt("holdout", int, 0, "move the last N generated records to --holdout-out"),
        Opt("holdout_out", str, None, "HEEG1 path for the held-out records"),
    ]),
    "train": ("train a classifier head with or without the HASS encoder", [
        Opt("data", str, None, "training HEEG1 file", required=True),
        Opt("out_model", str, None, "output HASSPRM model path", required=True),
        Opt("hass", _yes_no, True, "put the HASS encoder in front of the head", choices=("yes", "no")),
        Opt("head", str, "linear", "classifier head", choices=HEAD_KINDS),
        Opt("epochs", int, 30, "training epochs"),
        Opt("lr", float, 1e-3, "learning rate"),
        Opt("batch_size", int, 32, "minibatch size"),
        Opt("optimizer", str, "adam", "optimizer", choices=("adam", "sgd")),
        Opt("heads_intra", _optional_int, None, "intra-channel attention heads (auto: 2 if T*D even else 1)"),
        Opt("heads_inter", _optional_int, None, "inter-channel attention heads (auto: 2 if C*D even else 1)"),
        Opt("seed", int, 0, "random seed (init and shuffling streams)"),
        Opt("figures", str, None, "directory for trace CSV and figure"),
    ]),
    "eval": ("score a model on a dataset", [
        Opt("data", str, None, "HEEG1 file to score", required=True),
        Opt("model", str, None, "HASSPRM model file", required=True),
        Opt("emit_report", str, None, "write metric key-value lines to this path"),
        Opt("figures", str, None, "directory for the confusion-matrix figure"),
    ]),
    "gradcheck": ("compare tape gradients with central finite differences", [
        Opt("channels", int, 3, "EEG channels C"),
        Opt("timesteps", int, 4, "samples per epoch T"),
        Opt("heads", int, 1, "attention heads in both blocks"),
        Opt("batch", int, 2, "records in the loss batch"),
        Opt("step", float, 1e-4, "finite-difference step h"),
        Opt("seed", int, 0, "random seed"),
        Opt("tolerance", float, 1e-5, "maximum allowed relative error"),
    ]),
    "compare": ("train and score paired HASS / no-HASS models over several seeds", [
        Opt("data_train", str, None, "training HEEG1 file", required=True),
        Opt("data_eval", str, None, "evaluation HEEG1 file", required=True),
        Opt("head", str, "tinyconv", "classifier head", choices=HEAD_KINDS),
        Opt("seeds", _ints, [0, 1, 2], "comma-separated seeds"),
        Opt("arms", _yes_no_list, [True, False], "HASS flag of the two arms (no,no gives an A/A run)"),
        Opt("epochs", int, 30, "training epochs"),
        Opt("lr", float, 1e-3, "learning rate"),
        Opt("batch_size", int, 32, "minibatch size"),
        Opt("optimizer", str, "adam", "optimizer", choices=("adam", "sgd")),
        Opt("emit_report", str, None, "write metric key-value lines to this path"),
        Opt("figures", str, None, "directory for the comparison figure"),
    ]),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hass", description="Hybrid attention encoder for EEG sleep staging.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (desc, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=desc, description=desc)
        p.add_argument("--config", default=argparse.SUPPRESS,
                       help="flat 'key = value' file; flags override it (default: none)")
        for o in opts:
            default = "required" if o.required else _show(o.default)
            extra = f" {{{','.join(o.choices)}}}" if o.choices else ""
            p.add_argument(o.flag, dest=o.name, default=argparse.SUPPRESS, metavar=o.name.upper(),
                           help=f"{o.help}{extra} (default: {default})")
    return parser


def read_config_file(path: str, opts: list[Opt]) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config file {path}: {exc}") from exc
    try:
        raw = parse_key_values(text)
    except ValueError as exc:
        raise ValidationError(f"config file {path}: {exc}") from exc
    known = {o.name for o in opts}
    out = {}
    for key, value in raw.items():
        name = key.replace("-", "_")
        if name not in known:
            raise ValidationError(f"config file {path}: unknown key {key!r}")
        out[name] = value
    return out


def resolve(command: str, args: argparse.Namespace) -> dict[str, Any]:
    opts = COMMANDS[command][1]
    given = vars(args)
    from_file = read_config_file(given["config"], opts) if "config" in given else {}
    resolved = {}
    for o in opts:
        if o.name in given:
            raw = given[o.name]
        elif o.name in from_file:
            raw = from_file[o.name]
        elif o.required:
            raise ValidationError(f"{o.flag} is required")
        else:
            resolved[o.name] = o.default
            continue
        if o.choices and str(raw).strip().lower() not in o.choices:
            raise ValidationError(f"{o.flag}: {raw!r} is not one of {', '.join(o.choices)}")
        try:
            resolved[o.name] = o.convert(raw)
        except ValueError as exc:
            raise ValidationError(f"{o.flag}: {exc}") from exc
    return resolved


def echo_config(command: str, cfg: dict[str, Any], out) -> None:
    print(f"# hass {command}", file=out)
    for key, value in cfg.items():
        print(f"# {key} = {_show(value)}", file=out)


# ---------------------------------------------------------------- helpers


def _load_records(path: str) -> list[hdata.EpochRecord]:
    try:
        return hdata.read_dataset(path)
    except OSError as exc:
        raise ValidationError(f"cannot read dataset {path}: {exc}") from exc
    except hdata.DatasetFormatError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _load_model(path: str):
    try:
        return model_from_tensors(serialize.load(path))
    except OSError as exc:
        raise ValidationError(f"cannot read model {path}: {exc}") from exc
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _write(path: str, payload: bytes | str) -> None:
    try:
        p = Path(path)
        if isinstance(payload, str):
            p.write_text(payload)
        else:
            p.write_bytes(payload)
    except OSError as exc:
        raise ValidationError(f"cannot write {path}: {exc}") from exc


def _require_positive(cfg: dict[str, Any], *names: str) -> None:
    for n in names:
        if cfg[n] < 1:
            raise ValidationError(f"--{n.replace('_', '-')} must be >= 1, got {cfg[n]}")


def _train_config(cfg: dict[str, Any], seed: int, use_hass: bool) -> TrainConfig:
    tc = TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], learning_rate=cfg["lr"],
                     optimizer=cfg["optimizer"], seed=seed, use_hass=use_hass)
    try:
        tc.validate()
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    return tc


def _build_model(shape, head_kind: str, use_hass: bool, seed: int, heads_intra=None, heads_inter=None):
    C, T, D = shape
    try:
        encoder = init_encoder(C, T, D, heads_intra, heads_inter, seed=stream(seed, "init.encoder")) \
            if use_hass else None
        head = init_head(head_kind, C, T, D, seed=stream(seed, "init.head"))
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    return encoder, head


def _fit(records, tc: TrainConfig, encoder, head, out, prefix: str = ""):
    def show(s):
        print(f"{prefix}epoch {s.epoch:3d}  loss {s.loss:.6f}  acc {s.accuracy:.4f}", file=out)

    try:
        return train(records, tc, encoder, head, on_epoch=show)
    except NumericalError as exc:
        raise RuntimeFailure(str(exc)) from exc


def _score(records, encoder, head):
    truth = [r.label for r in records]
    pred = predict(records, encoder, head)
    cm = confusion(truth, pred)
    return cm, metrics_from_confusion(cm)


def _check_compatible(records, head, path: str) -> None:
    C, T, D = records[0].signal.shape
    mC, mT, mD = head.input_shape
    if (C, T, D) != (mC, mT, mD):
        raise ValidationError(
            f"shape mismatch: model expects C={mC}, T={mT}, D={mD} but {path} has C={C}, T={T}, D={D}"
        )


# ---------------------------------------------------------------- commands


def cmd_synth(cfg: dict[str, Any], out) -> int:
    if cfg["holdout"] < 0 or cfg["holdout"] >= cfg["count"]:
        raise ValidationError(f"--holdout must lie in [0, count), got {cfg['holdout']}")
    if cfg["holdout"] and not cfg["holdout_out"]:
        raise ValidationError("--holdout needs --holdout-out")
    spec = hdata.SynthSpec(cfg["channels"], cfg["timesteps"], cfg["count"], cfg["seed"], cfg["balance"],
                           cfg["spatial"], cfg["temporal"], cfg["noise"])
    try:
        spec.validate()
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    records = hdata.generate_synthetic(spec)
    parts = [(cfg["out"], records[: len(records) - cfg["holdout"]])]
    if cfg["holdout"]:
        parts.append((cfg["holdout_out"], records[len(records) - cfg["holdout"]:]))
    for path, recs in parts:
        _write(path, hdata.dumps(recs))
        hist = hdata.class_histogram(recs)
        print(f"wrote {len(recs)} records to {path}", file=out)
        print("histogram " + " ".join(f"{s.name}:{hist[s]}" for s in STAGES), file=out)
    return EXIT_OK


def cmd_train(cfg: dict[str, Any], out) -> int:
    _require_positive(cfg, "batch_size")
    if cfg["seed"] < 0:
        raise ValidationError("--seed must be non-negative")
    records = _load_records(cfg["data"])
    shape = records[0].signal.shape
    tc = _train_config(cfg, cfg["seed"], cfg["hass"])
    encoder, head = _build_model(shape, cfg["head"], cfg["hass"], cfg["seed"],
                                 cfg["heads_intra"], cfg["heads_inter"])
    result = _fit(records, tc, encoder, head, out)
    try:
        blob = serialize.dumps(model_arrays(result.encoder, result.head))
    except ValueError as exc:
        raise RuntimeFailure(f"cannot store trained model: {exc}") from exc
    _write(cfg["out_model"], blob)
    final = result.trace[-1] if result.trace else None
    if final is not None:
        print(f"final  loss {final.loss:.6f}  acc {final.accuracy:.4f}", file=out)
    print(f"wrote model to {cfg['out_model']}", file=out)
    if cfg["figures"]:
        from .plotting import plot_trace

        fig_dir = Path(cfg["figures"])
        fig_dir.mkdir(parents=True, exist_ok=True)
        lines = ["epoch,loss,accuracy"] + [f"{s.epoch},{s.loss:.9g},{s.accuracy:.6f}" for s in result.trace]
        _write(str(fig_dir / "trace.csv"), "\n".join(lines) + "\n")
        if result.trace:
            plot_trace(result.trace, fig_dir / "trace.png",
                       title=f"{cfg['head']} head, HASS {'yes' if cfg['hass'] else 'no'}")
    return EXIT_OK


def cmd_eval(cfg: dict[str, Any], out) -> int:
    records = _load_records(cfg["data"])
    encoder, head = _load_model(cfg["model"])
    _check_compatible(records, head, cfg["data"])
    cm, report = _score(records, encoder, head)
    tag = head.kind
    print(render_report([(tag, encoder is not None, report)]), end="", file=out)
    if cfg["emit_report"]:
        _write(cfg["emit_report"], to_key_values(report))
    if cfg["figures"]:
        from .plotting import plot_confusion

        plot_confusion(cm, Path(cfg["figures"]) / "confusion.png",
                       title=f"{tag}, HASS {'yes' if encoder is not None else 'no'}")
    return EXIT_OK


def cmd_gradcheck(cfg: dict[str, Any], out) -> int:
    _require_positive(cfg, "channels", "timesteps", "heads", "batch")
    if not cfg["step"] > 0 or cfg["seed"] < 0:
        raise ValidationError("--step must be positive and --seed non-negative")
    C, T, m, seed = cfg["channels"], cfg["timesteps"], cfg["heads"], cfg["seed"]
    try:
        encoder = init_encoder(C, T, 1, m, m, seed=stream(seed, "init.encoder"))
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    head = init_head("linear", C, T, seed=stream(seed, "init.head"))
    rng = stream(seed, "gradcheck.data")
    x = ad.Tensor(rng.standard_normal((cfg["batch"], C, T, 1)))
    labels = rng.integers(0, len(STAGES), size=cfg["batch"])
    params = model_tensors(encoder, head)
    result = check_gradients(lambda: cross_entropy_loss(forward_classify(x, encoder, head), labels),
                             params, h=cfg["step"])
    for name, err in result.per_param.items():
        print(f"{name:<28} {err:.3e}", file=out)
    print(f"checked {result.n_checked} coordinates over {len(params)} tensors "
          f"({result.n_kinks} skipped at ReLU kinks)", file=out)
    print(f"max relative error {result.max_rel_error:.3e} ({result.worst_param})", file=out)
    ok = result.max_rel_error <= cfg["tolerance"]
    print(f"{'PASS' if ok else 'FAIL'} at tolerance {cfg['tolerance']:.1e}", file=out)
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_compare(cfg: dict[str, Any], out) -> int:
    _require_positive(cfg, "batch_size")
    if len(cfg["arms"]) != 2:
        raise ValidationError("--arms takes exactly two yes/no values")
    if not cfg["seeds"] or min(cfg["seeds"]) < 0:
        raise ValidationError("--seeds needs at least one non-negative seed")
    train_recs = _load_records(cfg["data_train"])
    eval_recs = _load_records(cfg["data_eval"])
    shape = train_recs[0].signal.shape
    if eval_recs[0].signal.shape != shape:
        raise ValidationError(f"train records are {shape} but eval records are {eval_recs[0].signal.shape}")
    arms = cfg["arms"]
    per_arm = [[], []]
    deltas_f1, deltas_acc = [], []
    for seed in cfg["seeds"]:
        scores = []
        for a, use_hass in enumerate(arms):
            tc = _train_config(cfg, seed, use_hass)
            encoder, head = _build_model(shape, cfg["head"], use_hass, seed)
            result = _fit(train_recs, tc, encoder, head, _Null())
            _, report = _score(eval_recs, result.encoder, result.head)
            per_arm[a].append(report)
            scores.append(report)
            final = result.trace[-1] if result.trace else None
            loss = f"{final.loss:.6f}" if final else "n/a"
            print(f"seed {seed} hass {_show(use_hass):<3} final-loss {loss}  "
                  f"eval-f1 {report.overall_f1:.3f}  eval-acc {report.accuracy:.3f}", file=out)
        deltas_f1.append(scores[0].overall_f1 - scores[1].overall_f1)
        deltas_acc.append(scores[0].accuracy - scores[1].accuracy)
        print(f"seed {seed} delta-f1 {deltas_f1[-1]:+.3f}  delta-acc {deltas_acc[-1]:+.3f}", file=out)
    rows = [(cfg["head"], arms[a], mean_report(per_arm[a])) for a in range(2)]
    print(file=out)
    print(render_report(rows), end="", file=out)
    print(file=out)
    mean_f1, mean_acc = float(np.mean(deltas_f1)), float(np.mean(deltas_acc))
    print(f"mean delta macro-F1 ({_show(arms[0])} - {_show(arms[1])}): {mean_f1:+.3f}", file=out)
    print(f"mean delta accuracy ({_show(arms[0])} - {_show(arms[1])}): {mean_acc:+.3f}", file=out)
    if cfg["emit_report"]:
        text = "".join(to_key_values(r, f"{cfg['head']}.hass_{_show(flag)}.arm{a}")
                       for a, (_, flag, r) in enumerate(rows))
        text += f"delta.macro_f1 = {mean_f1:.6f}\ndelta.accuracy = {mean_acc:.6f}\n"
        for seed, d in zip(cfg["seeds"], deltas_f1):
            text += f"delta.seed.{seed}.macro_f1 = {d:.6f}\n"
        _write(cfg["emit_report"], text)
    if cfg["figures"]:
        from .plotting import plot_comparison

        plot_comparison(rows, Path(cfg["figures"]) / "comparison.png",
                        title=f"{cfg['head']} head, mean over {len(cfg['seeds'])} seeds")
    return EXIT_OK


class _Null:
    def write(self, _):
        pass

    def flush(self):
        pass


HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command = args.command
    del args.command
    try:
        cfg = resolve(command, args)
        echo_config(command, cfg, out)
        return HANDLERS[command](cfg, out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except RuntimeFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RuntimeError, FloatingPointError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
