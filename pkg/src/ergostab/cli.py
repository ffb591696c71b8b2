"""Batch experiment runner.

    ergostab <kind> [--config FILE] [--set key=value]... [--seed N]
                    [--out DIR] [--workers N] [--preset NAME]

Kinds: bifurcate, lyapunov, orbit, autocorr, sas, ulam, ntk, bound,
corrupt-sweep.  Configs are JSON with strict unknown-key rejection; CLI
--set overrides beat file values, which beat preset values, which beat
defaults.  Outputs are CSV/JSON only, byte-identical for a fixed
(config, seed) at any worker count; plotting is out of scope.

Exit codes: 0 success, 1 configuration error, 2 numeric error,
3 divergence-dominated run.
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import click

from ergostab import __version__
from ergostab.errors import ConfigError, DivergenceError, ErgostabError
from ergostab.experiments import RUNNERS, DivergenceDominated
from ergostab.parallel import default_workers

_TASK_DEFAULTS = {
    # synthetic corrupted-label task shared by sas/autocorr/corrupt-sweep
    "n": 32, "d": 2, "hidden": 24, "activation": "tanh", "loss": "squared",
    "teacher": "linear", "teacher_noise": 0.3,
    "eta": 0.08, "momentum": 0.0, "mode": "sgd", "batch_size": 12,
    "runup": 1500, "window": 2400, "inits": 10, "inits_per_side": 1,
    "init_scale": 0.5, "heldout": 96, "probes": 12, "tau_max": 20,
}

DEFAULTS: dict[str, dict] = {
    "bifurcate": {"s": 1.0, "eta_min": 0.5, "eta_max": 3.6, "eta_step": 0.05,
                  "n_inits": 100, "runup": 2000, "keep": 64, "tol": 1e-8,
                  "boundary": "wrap", "radius": 1e6},
    "lyapunov": {"s": 1.0, "map": "gd", "etas": [0.5, 1.0, 2.0, 3.0, 3.4],
                 "n_inits": 10, "steps": 20000, "runup": 2000,
                 "boundary": "wrap"},
    "orbit": {"landscape": "gmap", "s": 1.0, "eta": 2.0, "runup": 0,
              "length": 200, "p": 0.0, **{k: v for k, v in _TASK_DEFAULTS.items()
                                          if k not in ("runup", "window")}},
    "autocorr": {"p_list": [0.0, 0.25, 0.5], **_TASK_DEFAULTS},
    "sas": {"p": 0.25, "pairs": 10, **_TASK_DEFAULTS},
    "ulam": {"s": 1.0, "eta": 3.4, "boundary": "wrap", "runup": 5000,
             "length": 100000, "bins": 64, "smoothing": 0.0, "tv_steps": 60},
    "ntk": {"n": 10, "d_w": 50, "eta": 0.0, "eta_fraction": 0.9, "ridge": 0.0,
            "steps": 400, "koopman_probes": 100, "perturb_row": 0},
    "bound": {"empirical_risk": 0.0, "beta": 0.0, "n": 100, "loss_bound": 1.0,
              "delta": 0.05, "grad_lipschitz": 1.0, "mixing_rate": 0.5,
              "m": 10, "eta": 0.01, "constant": 1.0},
    "corrupt-sweep": {"p_list": [0.0, 0.25, 0.5], "pairs": 10, **_TASK_DEFAULTS},
}

# protocol-scale presets; "desk" is the default parameterization above
PRESETS: dict[str, dict[str, dict]] = {
    "desk": {},
    "paper-protocol": {
        "sas": {"pairs": 45, "runup": 200, "window": 1200,
                "eta": 0.01, "momentum": 0.9},
        "corrupt-sweep": {"pairs": 45, "runup": 200, "window": 1200,
                          "eta": 0.01, "momentum": 0.9,
                          "p_list": [0.0, 0.1, 0.17, 0.25, 0.5]},
        "autocorr": {"runup": 200, "window": 1200, "eta": 0.01,
                     "momentum": 0.9, "p_list": [0.0, 0.1, 0.17, 0.25, 0.5]},
    },
}

DEFAULT_SEED = 2


@dataclass
class ExperimentConfig:
    kind: str
    params: dict
    master_seed: int = DEFAULT_SEED
    out_dir: str = "out"
    workers: int = 1

    def as_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(sorted(self.params.items())),
                "master_seed": self.master_seed, "out_dir": self.out_dir,
                "workers": self.workers}


def _coerce_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config(kind: str, config_path: str | None = None,
                 overrides: dict | None = None, preset: str = "desk",
                 master_seed: int | None = None, out_dir: str | None = None,
                 workers: int | None = None) -> ExperimentConfig:
    """Resolve defaults, preset, file and overrides into a full config.

    Unknown keys anywhere are rejected (strict parsing); every parameter has
    a default, so the empty config is valid for all kinds.
    """
    if kind not in DEFAULTS:
        raise ConfigError(f"unknown experiment kind {kind!r}; "
                          f"expected one of {sorted(DEFAULTS)}")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; "
                          f"expected one of {sorted(PRESETS)}")
    params = dict(DEFAULTS[kind])
    params.update(PRESETS[preset].get(kind, {}))

    meta = {"master_seed": master_seed, "out_dir": out_dir, "workers": workers}
    sources = []
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {config_path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be an object: {config_path}")
        sources.append(loaded)
    if overrides:
        sources.append(dict(overrides))

    for source in sources:
        for key, value in source.items():
            if key in ("master_seed", "out_dir", "workers"):
                if meta[key] is None:
                    meta[key] = value
                continue
            if key == "kind":
                if value != kind:
                    raise ConfigError(f"config kind {value!r} does not match {kind!r}")
                continue
            if key == "params" and isinstance(value, dict):
                for pk, pv in value.items():
                    if pk not in params:
                        raise ConfigError(f"unknown key {pk!r} for kind {kind!r}")
                    params[pk] = pv
                continue
            if key not in params:
                raise ConfigError(f"unknown key {key!r} for kind {kind!r}")
            params[key] = value

    return ExperimentConfig(
        kind=kind, params=params,
        master_seed=int(meta["master_seed"]) if meta["master_seed"] is not None else DEFAULT_SEED,
        out_dir=str(meta["out_dir"]) if meta["out_dir"] is not None else "out",
        workers=int(meta["workers"]) if meta["workers"] is not None else default_workers(),
    )


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_quote(text: str) -> str:
    if any(ch in text for ch in ',"\n\r'):
        return '"' + text.replace('"', '""') + '"'
    return text


def emit_outputs(result: dict, out_dir: Path) -> dict[str, str]:
    """Write CSV tables and JSON documents; returns name -> sha256 digests.

    Field order, float formatting and the trailing newline are fixed, so a
    rerun with the same results is byte-identical.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    digests = {}
    for name, (header, rows) in sorted(result.get("tables", {}).items()):
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_csv_quote(_format_cell(v)) for v in row))
        payload = ("\n".join(lines) + "\n").encode("utf-8")
        (out_dir / name).write_bytes(payload)
        digests[name] = hashlib.sha256(payload).hexdigest()
    for name, doc in sorted(result.get("documents", {}).items()):
        payload = (json.dumps(doc, indent=2, allow_nan=True) + "\n").encode("utf-8")
        (out_dir / name).write_bytes(payload)
        digests[name] = hashlib.sha256(payload).hexdigest()
    return digests


def run_experiment(config: ExperimentConfig) -> dict:
    """Execute one experiment and write its artifacts plus a run summary."""
    runner = RUNNERS[config.kind]
    started = time.monotonic()
    result = runner(dict(config.params), config.master_seed, config.workers)
    duration = time.monotonic() - started
    out_dir = Path(config.out_dir)
    digests = emit_outputs(result, out_dir)
    summary = {
        "config": config.as_dict(),
        "duration_s": duration,
        "outputs": digests,
        "version": __version__,
    }
    payload = json.dumps(summary, indent=2) + "\n"
    (out_dir / "summary.json").write_text(payload, encoding="utf-8")
    return summary


@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.argument("kind")
@click.option("--config", "config_path", type=str, default=None,
              help="JSON config file (strict keys).")
@click.option("--set", "assignments", multiple=True, metavar="KEY=VALUE",
              help="Override a parameter; JSON values accepted.")
@click.option("--seed", type=int, default=None, help="Master seed.")
@click.option("--out", type=str, default=None, help="Output directory.")
@click.option("--workers", type=int, default=None,
              help="Worker processes (ERGOSTAB_WORKERS as fallback).")
@click.option("--preset", type=str, default="desk",
              help="Named parameter preset (desk, paper-protocol).")
def main(kind, config_path, assignments, seed, out, workers, preset):
    """Run one experiment KIND and write CSV/JSON artifacts."""
    try:
        overrides = {}
        for item in assignments:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, _, raw = item.partition("=")
            overrides[key.strip()] = _coerce_value(raw.strip())
        config = parse_config(kind, config_path, overrides, preset=preset,
                              master_seed=seed, out_dir=out, workers=workers)
        summary = run_experiment(config)
    except ConfigError as exc:
        click.echo(json.dumps({"error": "config", "message": str(exc)}), err=True)
        sys.exit(1)
    except (DivergenceDominated, DivergenceError) as exc:
        click.echo(json.dumps({"error": "divergence", "message": str(exc)}), err=True)
        sys.exit(3)
    except ErgostabError as exc:
        click.echo(json.dumps({"error": "numeric", "message": str(exc)}), err=True)
        sys.exit(2)
    click.echo(json.dumps({"ok": True, "out_dir": config.out_dir,
                           "outputs": sorted(summary["outputs"])}))


if __name__ == "__main__":
    main()
