"""Command line entry point: ``lpo run | check | plotdata``.

Configuration is an INI file with an ``[env]`` section (a generator name and
its parameters, or ``file = path`` to an MDP definition) and an ``[lpo]``
section holding estimator parameters.  Exit codes: 0 success, 2 invalid
configuration, 3 invariant or check failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import inspect
import json
import logging
import statistics
import sys
from pathlib import Path

from .driver import LPO, METRIC_COLUMNS, ConfigError, InvariantViolation, LpoConfig
from .mdp import GENERATORS
from .mdpfile import MdpFileError, load_mdp

log = logging.getLogger("lpo")


def parse_seeds(text: str) -> list:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "seeds must be distinct")
    if not seeds:
        raise ConfigError("seeds", "no seeds given")
    return seeds


def _coerce_like(key, raw, default):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r}") from None
    return text


def build_env(section: dict, base_dir: Path):
    """Return ``(mdp, features, env_echo)`` from the ``[env]`` section."""
    section = dict(section)
    if "file" in section:
        path = Path(section.pop("file"))
        if not path.is_absolute():
            path = base_dir / path
        if section:
            raise ConfigError(next(iter(section)), "no other [env] keys are allowed with file")
        try:
            mdp, features = load_mdp(path)
        except (OSError, MdpFileError) as exc:
            raise ConfigError("file", str(exc)) from None
        return mdp, features, {"file": str(path)}
    name = section.pop("generator", None)
    if name not in GENERATORS:
        raise ConfigError("generator", f"must be one of {sorted(GENERATORS)}")
    fn = GENERATORS[name]
    params = inspect.signature(fn).parameters
    kwargs = {}
    for key, raw in section.items():
        if key not in params:
            raise ConfigError(key, f"not a parameter of generator {name!r}")
        default = params[key].default
        if default is inspect.Parameter.empty:
            default = 0
        kwargs[key] = _coerce_like(key, raw, default)
    try:
        mdp = fn(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError("env", str(exc)) from None
    return mdp, None, {"generator": name, **kwargs}


def load_config(path):
    """Parse an INI config into ``(mdp, features, lpo_params, env_echo)``."""
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        if not cp.read(path):
            raise ConfigError("config", f"cannot read {path}")
    except configparser.Error as exc:
        raise ConfigError("config", str(exc)) from None
    for sec in cp.sections():
        if sec not in ("env", "lpo"):
            raise ConfigError(sec, "unknown section")
    if not cp.has_section("env"):
        raise ConfigError("env", "missing [env] section")
    mdp, features, echo = build_env(dict(cp["env"]), path.parent)
    lpo = dict(cp["lpo"]) if cp.has_section("lpo") else {}
    cfg = LpoConfig.from_mapping(lpo)
    return mdp, features, cfg, echo


def write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def cmd_run(args) -> int:
    mdp, features, cfg, env_echo = load_config(args.config)
    overrides = {}
    if args.variant:
        overrides["variant"] = args.variant
    if args.mode:
        overrides["mode"] = args.mode
    if args.save_artifacts:
        overrides["record_artifacts"] = True
    params = {**cfg.to_dict(), **overrides}
    LpoConfig(**params)
    seeds = parse_seeds(args.seeds) if args.seeds else [cfg.seed]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    finals = []
    for seed in seeds:
        params["seed"] = seed
        est = LPO(**params).fit(mdp, features)
        write_metrics(out / f"metrics_seed{seed}.csv", est.metrics_)
        summary = est.summary()
        summary["env"] = env_echo
        (out / f"summary_seed{seed}.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
        if params["record_artifacts"]:
            from .diagnostics import RunArtifacts
            RunArtifacts.from_estimator(est).save(out / f"artifacts_seed{seed}.npz")
        finals.append(summary["final_value"])
        log.info("seed %d: final value %.6g (V* %.6g), %d switches, %d transitions", seed,
                 summary["final_value"], summary["V_star"], summary["switches"],
                 summary["total_transitions"])
    if len(seeds) > 1:
        agg = {"seeds": seeds, "final_value_mean": statistics.fmean(finals),
               "final_value_std": statistics.pstdev(finals), "final_values": finals}
        (out / "aggregate.json").write_text(json.dumps(agg, indent=2))
    return 0


def cmd_check(args) -> int:
    from . import diagnostics as dg
    if not Path(args.artifacts).is_file():
        raise ConfigError("artifacts", f"no such file: {args.artifacts}")
    art = dg.RunArtifacts.load(args.artifacts)
    wanted = args.checker
    reports = []
    if wanted in ("all", "one-sided-error") and art.mode == "exact":
        reports.append(dg.check_optimism(art))
    elif wanted == "one-sided-error":
        raise ConfigError("checker", "one-sided-error needs artifacts from an exact-mode run")
    if wanted in ("all", "npg-regret"):
        reports.append(dg.check_npg_regret(art))
    if wanted in ("all", "bonus-concentration"):
        reports.append(dg.check_bonus_concentration(art))
    if wanted in ("all", "lemma-structure"):
        reports.extend(dg.check_lemma_structure(art))
    text = "[" + ",\n".join(r.to_json() for r in reports) + "]\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0 if all(r.passed for r in reports) else 3


def cmd_plotdata(args) -> int:
    runs = Path(args.runs)
    files = sorted(runs.glob("metrics_seed*.csv"))
    if not files:
        raise ConfigError("runs", f"no metrics_seed*.csv files in {runs}")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "series"])
        for f in files:
            tag = f.stem.replace("metrics_", "")
            switches = 0
            with open(f, newline="") as inp:
                for row in csv.DictReader(inp):
                    switches += int(row["switched"])
                    w.writerow([row["n"], switches, f"switches:{tag}"])
                    w.writerow([row["transitions_used"], row["value_exact_of_mixture"], f"value:{tag}"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lpo", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run LPO for one or more seeds")
    r.add_argument("--config", required=True, help="INI file with [env] and [lpo] sections")
    r.add_argument("--seeds", help="comma list and ranges, e.g. 0,1,5-7 (default: config seed)")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--variant", choices=["lpo", "indicator-only", "no-bonus"])
    r.add_argument("--mode", choices=["mc", "exact"])
    r.add_argument("--save-artifacts", action="store_true",
                   help="also write artifacts_seed<k>.npz for the check command "
                        "(same as record_artifacts = true in the config)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="run diagnostics checkers on saved artifacts")
    c.add_argument("--artifacts", required=True)
    c.add_argument("--checker", default="all",
                   choices=["all", "one-sided-error", "npg-regret", "bonus-concentration",
                            "lemma-structure"])
    c.add_argument("--out", help="write the JSON report here instead of stdout")
    c.set_defaults(func=cmd_check)

    d = sub.add_parser("plotdata", help="long-format x,y,series CSV from metrics files")
    d.add_argument("--runs", required=True, help="directory holding metrics_seed*.csv")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
