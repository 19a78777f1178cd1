"""Command-line front end: seeded federation runs, convergence-theory
verification, and CSV export of recorded runs.

Subcommands::

    qflsim run --config <path-or-preset> [--override k=v ...] [--seed N] [--out-dir D]
    qflsim verify-theory [--config <path-or-preset>] [--override k=v ...] [--seed N] [--out-dir D]
    qflsim export <run-dir> {curves,summary} [--out-dir D] [--threshold X]

Configs are flat ``key = value`` text ('#' starts a comment). Top-level keys
address the federation run (``mode``, ``rounds``, ``seed``, ...); dotted
prefixes address the nested pieces (``model.*``, ``data.*``, ``ref.*``,
``regulation.*``) and the verification knobs (``theory.*``). ``--override``
wins over the file and ``--seed`` wins over both. Unknown keys are
rejected by name. ``--config`` accepts a filesystem path or the name of a
packaged preset (qfl_baseline, qfl_adaptive, theory_default).

A run directory holds ``manifest.json`` (config snapshot, seed, version,
output paths, start timestamp; written before round 1), ``rounds.jsonl``
(one sorted-key JSON object per round, no timestamps, byte-identical
across reruns of the same config), ``curves.csv`` (per-evaluation
objective values), and ``times.csv`` (all wall-clock data, kept out of the
deterministic artifacts on purpose).

Exit status: 0 on success (including clean early termination and an
all-claims-pass verification), 1 when a run aborts mid-way or a theory
claim fails, 2 for config, usage, or I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

from . import __version__, theory
from .dfo import RegulationStrategy
from .fed import DataSpec, ExperimentError, FedConfig, RefSpec, run_experiment
from .qmodels import qcnn_model, vqc_model

MODES = ("baseline", "llmqfl")
MODEL_KINDS = ("vqc", "qcnn")


class ConfigError(ValueError):
    """Bad config file, override, or key; the message names the problem."""


# ---------------------------------------------------------------------------
# config text
# ---------------------------------------------------------------------------


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat ``key = value`` lines into a dict; later duplicates win."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        out[key] = value
    return out


def resolve_config(name_or_path: str) -> dict[str, str]:
    """Load a config from a file path or a packaged preset name."""
    path = Path(name_or_path)
    if path.is_file():
        return parse_config_text(path.read_text(), source=str(path))
    stem = name_or_path.removesuffix(".cfg")
    packaged = resources.files("qflsim").joinpath("configs", f"{stem}.cfg")
    if packaged.is_file():
        return parse_config_text(packaged.read_text(), source=f"{stem}.cfg")
    raise ConfigError(
        f"config {name_or_path!r} is neither a file nor a packaged preset"
    )


def apply_overrides(kv: dict[str, str], overrides: list[str]) -> dict[str, str]:
    out = dict(kv)
    for item in overrides:
        key, sep, value = item.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"override {item!r} must look like key=value")
        out[key] = value
    return out


def _as_int(key: str, value: str) -> int:
    try:
        return int(value, 10)
    except ValueError:
        raise ConfigError(f"{key}: {value!r} is not an integer") from None


def _as_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: {value!r} is not a number") from None


def _as_bool(key: str, value: str) -> bool:
    low = value.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: {value!r} is not a boolean")


def _as_floats(key: str, value: str) -> tuple[float, ...]:
    items = [v.strip() for v in value.split(",") if v.strip()]
    if not items:
        raise ConfigError(f"{key}: expected a comma-separated list of numbers")
    return tuple(_as_float(key, v) for v in items)


# ---------------------------------------------------------------------------
# federation config
# ---------------------------------------------------------------------------

_FED_CASTERS = {
    "mode": None,
    "aggregation": None,
    "optimizer": None,
    "num_devices": _as_int,
    "rounds": _as_int,
    "init_maxiter": _as_int,
    "maxiter_cap": _as_int,
    "probe_size": _as_int,
    "workers": _as_int,
    "seed": _as_int,
    "selection_fraction": _as_float,
    "epsilon": _as_float,
    "distill_lambda": _as_float,
    "init_penalty": _as_float,
    "init_scale": _as_float,
    "model.kind": None,
    "model.interpreter": None,
    "model.num_qubits": _as_int,
    "model.feature_reps": _as_int,
    "model.ansatz_reps": _as_int,
    "model.shots": _as_int,
    "data.samples_per_device": _as_int,
    "data.sequence_length": _as_int,
    "data.server_samples": _as_int,
    "data.noise": _as_float,
    "data.test_fraction": _as_float,
    "data.angle_max": _as_float,
    "data.motifs": None,
    "ref.kind": None,
    "ref.replay_path": None,
    "ref.epochs": _as_int,
    "ref.learning_rate": _as_float,
    "regulation.kind": None,
    "regulation.step": _as_int,
    "regulation.beta": _as_float,
}


def _cast_known(kv: dict[str, str], casters: dict) -> dict:
    unknown = sorted(set(kv) - set(casters))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    typed = {}
    for key, value in kv.items():
        caster = casters[key]
        typed[key] = value if caster is None else caster(key, value)
    return typed


def _pick(typed: dict, prefix: str) -> dict:
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in typed.items() if k.startswith(prefix + ".")}


def build_fed_config(kv: dict[str, str]) -> tuple[FedConfig, str]:
    """Typed FedConfig plus the run mode from a flat key-value mapping."""
    typed = _cast_known(kv, _FED_CASTERS)

    mode = typed.pop("mode", "baseline")
    if mode not in MODES:
        raise ConfigError(f"mode: must be one of {MODES}, got {mode!r}")

    model_kv = _pick(typed, "model")
    kind = model_kv.pop("kind", "vqc")
    if kind not in MODEL_KINDS:
        raise ConfigError(f"model.kind: must be one of {MODEL_KINDS}, got {kind!r}")
    try:
        if kind == "vqc":
            model = vqc_model(
                num_qubits=model_kv.pop("num_qubits", 4),
                feature_reps=model_kv.pop("feature_reps", 1),
                ansatz_reps=model_kv.pop("ansatz_reps", 2),
                shots=model_kv.pop("shots", 4096),
                interpreter=model_kv.pop("interpreter", "parity"),
            )
        else:
            if "interpreter" in model_kv:
                raise ConfigError("model.interpreter: fixed to last_qubit for qcnn")
            model = qcnn_model(
                num_qubits=model_kv.pop("num_qubits", 4),
                feature_reps=model_kv.pop("feature_reps", 1),
                conv_reps=model_kv.pop("ansatz_reps", 1),
                shots=model_kv.pop("shots", 4096),
            )
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc

    data_kv = _pick(typed, "data")
    if "motifs" in data_kv:
        motifs = tuple(m.strip() for m in data_kv["motifs"].split(",") if m.strip())
        if len(motifs) != 2:
            raise ConfigError("data.motifs: expected exactly two comma-separated motifs")
        data_kv["motifs"] = motifs
    ref_kv = _pick(typed, "ref")
    reg_kv = _pick(typed, "regulation")
    if mode == "baseline" and reg_kv:
        raise ConfigError("regulation.* keys require mode = llmqfl")
    regulation = None
    if mode == "llmqfl":
        reg_kv.setdefault("kind", "adaptive")
        try:
            regulation = RegulationStrategy(**reg_kv)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"regulation: {exc}") from exc

    top = {
        k: v for k, v in typed.items() if "." not in k
    }
    try:
        cfg = FedConfig(
            model=model,
            regulation=regulation,
            data=DataSpec(**data_kv),
            ref=RefSpec(**ref_kv),
            **top,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, mode


def build_theory_config(kv: dict[str, str]) -> theory.TheoryConfig:
    """TheoryConfig from ``theory.``-prefixed keys, cast per field default."""
    fields = {f"theory.{f.name}": f for f in dataclasses.fields(theory.TheoryConfig)}
    unknown = sorted(set(kv) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    kwargs = {}
    for key, value in kv.items():
        f = fields[key]
        if isinstance(f.default, bool):
            kwargs[f.name] = _as_bool(key, value)
        elif isinstance(f.default, int):
            kwargs[f.name] = _as_int(key, value)
        elif isinstance(f.default, float):
            kwargs[f.name] = _as_float(key, value)
        elif isinstance(f.default, tuple):
            kwargs[f.name] = _as_floats(key, value)
        else:
            kwargs[f.name] = value
    try:
        return theory.TheoryConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _device_dict(s) -> dict:
    return {
        "device_id": s.device_id,
        "loss": s.loss,
        "maxiter_used": s.maxiter_used,
        "evals": s.evals,
        "ref_loss": s.ref_loss,
        "regulated": s.regulated,
        "failed": s.failed,
        "objective_history": list(s.objective_history),
    }


def record_dicts(records) -> list[dict]:
    """RoundRecords as JSON-ready dicts; wall time stays out by design."""
    out = []
    for r in records:
        out.append(
            {
                "round": r.round,
                "global_loss": r.global_loss,
                "server_val_loss": r.server_val_loss,
                "mean_train_loss": r.mean_train_loss,
                "selected": list(r.selected),
                "selected_loss_mean": r.selected_loss_mean,
                "cumulative_evals": r.cumulative_evals,
                "terminated": r.terminated,
                "termination_reason": r.termination_reason,
                "devices": [_device_dict(s) for s in r.devices],
            }
        )
    return out


def write_rounds_jsonl(path: Path, rounds: list[dict]) -> None:
    lines = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in rounds]
    path.write_text("\n".join(lines) + "\n")


def read_rounds_jsonl(path: Path) -> list[dict]:
    rounds = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rounds.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{lineno}: bad JSON line: {exc}") from exc
    if not rounds:
        raise ConfigError(f"{path}: no round records")
    return rounds


def write_curves_csv(path: Path, rounds: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "device_id", "eval_index", "objective"])
        for r in rounds:
            for dev in r["devices"]:
                for idx, value in enumerate(dev["objective_history"]):
                    writer.writerow([r["round"], dev["device_id"], idx, value])


def write_budgets_csv(path: Path, rounds: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["round", "device_id", "maxiter", "evals", "loss", "ref_loss", "regulated", "failed"]
        )
        for r in rounds:
            for dev in r["devices"]:
                writer.writerow(
                    [
                        r["round"],
                        dev["device_id"],
                        dev["maxiter_used"],
                        dev["evals"],
                        dev["loss"],
                        dev["ref_loss"],
                        dev["regulated"],
                        dev["failed"],
                    ]
                )


def write_selections_csv(path: Path, rounds: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "device_id"])
        for r in rounds:
            for device_id in r["selected"]:
                writer.writerow([r["round"], device_id])


def write_summary_csv(
    path: Path, rounds: list[dict], manifest: dict, threshold: float | None
) -> None:
    last = rounds[-1]
    rounds_to = ""
    if threshold is not None:
        for r in rounds:
            if r["mean_train_loss"] <= threshold:
                rounds_to = r["round"]
                break
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "mode",
                "seed",
                "rounds_completed",
                "termination_reason",
                "final_global_loss",
                "final_server_val_loss",
                "final_mean_train_loss",
                "cumulative_evals",
                "threshold",
                "rounds_to_threshold",
            ]
        )
        writer.writerow(
            [
                manifest.get("mode", ""),
                manifest.get("seed", ""),
                last["round"],
                last["termination_reason"],
                last["global_loss"],
                last["server_val_loss"],
                last["mean_train_loss"],
                last["cumulative_evals"],
                "" if threshold is None else threshold,
                rounds_to,
            ]
        )


def write_times_csv(path: Path, records, started_at: str, ended_at: str) -> None:
    """All wall-clock data lives here, away from the deterministic files."""
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "value"])
        total = 0.0
        for r in records:
            writer.writerow([f"round_{r.round}", f"{r.wall_time:.6f}"])
            total += r.wall_time
        writer.writerow(["total_seconds", f"{total:.6f}"])
        writer.writerow(["started_at", started_at])
        writer.writerow(["ended_at", ended_at])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def cmd_run(args) -> int:
    kv = apply_overrides(resolve_config(args.config), args.override)
    if args.seed is not None:
        kv["seed"] = str(args.seed)
    cfg, mode = build_fed_config(kv)

    out_dir = Path(args.out_dir) if args.out_dir else Path(f"runs/{mode}-seed{cfg.seed}")
    out_dir.mkdir(parents=True, exist_ok=True)
    started_at = _now()
    manifest = {
        "version": __version__,
        "mode": mode,
        "seed": cfg.seed,
        "config": dict(sorted(kv.items())),
        "effective_config": dataclasses.asdict(cfg),
        "outputs": {
            "rounds": "rounds.jsonl",
            "curves": "curves.csv",
            "times": "times.csv",
        },
        "started_at": started_at,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    t0 = time.perf_counter()
    try:
        records = run_experiment(cfg)
        failed = None
    except ExperimentError as exc:
        records = exc.records
        failed = str(exc)
    elapsed = time.perf_counter() - t0

    rounds = record_dicts(records)
    if rounds:
        write_rounds_jsonl(out_dir / "rounds.jsonl", rounds)
        write_curves_csv(out_dir / "curves.csv", rounds)
    write_times_csv(out_dir / "times.csv", records, started_at, _now())

    if failed is not None:
        print(f"run aborted after {len(records)} round(s): {failed}", file=sys.stderr)
        print(f"partial artifacts kept in {out_dir}", file=sys.stderr)
        return 1
    last = records[-1]
    print(
        f"{mode} run: {len(records)} rounds ({last.termination_reason}), "
        f"final val loss {last.server_val_loss:.4f}, "
        f"{last.cumulative_evals} evals, {elapsed:.1f}s -> {out_dir}"
    )
    return 0


def cmd_verify_theory(args) -> int:
    kv = apply_overrides(
        resolve_config(args.config) if args.config else {}, args.override
    )
    if args.seed is not None:
        kv["theory.seed"] = str(args.seed)
    cfg = build_theory_config(kv)

    report = theory.run_verification(cfg)
    out_dir = Path(args.out_dir) if args.out_dir else Path(".")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        report_path = out_dir / "theory_report.json"
        report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"cannot write report: {exc}", file=sys.stderr)
        return 2
    for claim in report["claims"]:
        print(f"{'PASS' if claim['passed'] else 'FAIL'}  {claim['name']}")
    print(f"report -> {report_path}")
    return 0 if report["passed"] else 1


def cmd_export(args) -> int:
    run_dir = Path(args.run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.is_file():
        print(f"missing manifest: {manifest_path}", file=sys.stderr)
        return 2
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        print(f"bad manifest {manifest_path}: {exc}", file=sys.stderr)
        return 2
    rounds_path = run_dir / manifest.get("outputs", {}).get("rounds", "rounds.jsonl")
    if not rounds_path.is_file():
        print(f"missing rounds file: {rounds_path}", file=sys.stderr)
        return 2
    try:
        rounds = read_rounds_jsonl(rounds_path)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2

    out_dir = Path(args.out_dir) if args.out_dir else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.what == "curves":
        write_curves_csv(out_dir / "curves.csv", rounds)
        write_budgets_csv(out_dir / "budgets.csv", rounds)
        write_selections_csv(out_dir / "selections.csv", rounds)
        print(f"wrote curves.csv, budgets.csv, selections.csv -> {out_dir}")
    else:
        write_summary_csv(out_dir / "summary.csv", rounds, manifest, args.threshold)
        print(f"wrote summary.csv -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qflsim",
        description="Quantum federated learning simulation runner and verifier.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one federated experiment")
    p_run.add_argument("--config", required=True, help="config file or preset name")
    p_run.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    p_run.add_argument("--seed", type=int, help="root seed (wins over config)")
    p_run.add_argument("--out-dir", help="artifact directory")
    p_run.set_defaults(func=cmd_run)

    p_ver = sub.add_parser("verify-theory", help="run the convergence checks")
    p_ver.add_argument("--config", help="config file or preset name")
    p_ver.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    p_ver.add_argument("--seed", type=int, help="root seed (wins over config)")
    p_ver.add_argument("--out-dir", help="where the JSON report goes")
    p_ver.set_defaults(func=cmd_verify_theory)

    p_exp = sub.add_parser("export", help="re-derive CSVs from a recorded run")
    p_exp.add_argument("run_dir", help="directory holding manifest.json")
    p_exp.add_argument("what", choices=["curves", "summary"])
    p_exp.add_argument("--out-dir", help="output directory (default: run dir)")
    p_exp.add_argument(
        "--threshold", type=float,
        help="training-loss threshold for the summary's rounds-to-threshold",
    )
    p_exp.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
