"""Command-line entry point: ``rectlab <command> [flags]``.

Commands::

    trajectories   closed-form x_t paths per schedule, raw and x_t/sigma_t, CSV + SVG
    theorem-check  constant-eps grid invariance and GMM non-first-order detection
    pipeline       base -> pairs -> rectify -> phased -> cd on a toy 2D mixture
    collect-pairs  teacher checkpoint -> (eps, x0_hat) pair file
    sample         checkpoint -> samples.csv
    metrics        checkpoint -> metrics.csv

Every command also reads an optional flat ``key=value`` file (``--config``);
flags given on the command line win. The default seed is 0. Outputs go to
``--out`` (default ``out``). Exit status is 0 when the command ran and all of
its checks passed, 1 when a check failed or a run broke down numerically,
2 for usage errors.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import _svg
from .distill import CDConfig, consistency_distill
from .metrics import (
    MetricReport,
    evaluate_model,
    segment_eps_constancy,
    straightness,
    write_reports_csv,
)
from .net import (
    FormatError,
    NetConfig,
    NetEps,
    NumericalError,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .oracle import ConstantEps, GMMOracle, mixture_preset
from .pairs import CollectionError, collect_pairs, load_pairs, save_pairs
from .phased import PhasePlan, parse_phase_plan, train_phased
from .schedule import KINDS, DomainError, make_schedule, parse_schedule_id
from .solver import Trajectory, UsageError, make_grid, sample
from .training import Coupling, TrainConfig, train, write_loss_csv

STAGES = ("base", "pairs", "rectify", "phased", "cd")

# key -> (type, default). ``None`` defaults are filled per command.
DEFAULTS = {
    "schedule": (str, None),
    "preset": (str, "ring8"),
    "seed": (int, 0),
    "steps": (str, None),
    "out": (str, "out"),
    "phases": (str, "M=4,spacing=lambda"),
    "stages": (str, "base,pairs,rectify"),
    "checkpoint": (str, None),
    "iterations": (int, 20000),
    "rect_iterations": (int, 20000),
    "phased_iterations": (int, 20000),
    "cd_iterations": (int, 5000),
    "batch_size": (int, 256),
    "lr": (float, 2e-4),
    "hidden_width": (int, 128),
    "hidden_layers": (int, 3),
    "n_data": (int, 100_000),
    "n_pairs": (int, 50_000),
    "teacher_steps": (int, 64),
    "pool_size": (int, 50_000),
    "inner_steps": (int, 16),
    "n_eval": (int, 4096),
    "n_paths": (int, 256),
    "n_samples": (int, 4096),
    "seeds": (int, 100),
    "x0": (str, "0,1"),
    "eps": (str, "1,1"),
}

_STEP_DEFAULTS = {
    "trajectories": "100",
    "theorem-check": "1,2,4,8,16,32,64",
    "pipeline": "1,2,4,64",
    "metrics": "1,2,4,64",
    "collect-pairs": "64",
    "sample": "4",
}
_SCHEDULE_DEFAULTS = {"trajectories": "fm,vp,subvp,edm", "theorem-check": "fm,vp,subvp,edm"}


def read_config(path):
    """Flat ``key=value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e.strerror}") from None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        if k not in DEFAULTS:
            raise UsageError(f"{path}:{n}: unknown config key {k!r}")
        out[k] = v
    return out


def resolve(command, args):
    """Merge defaults, config file and flags into one typed dict."""
    file_cfg = read_config(args.config) if args.config else {}
    cfg = {}
    for key, (typ, default) in DEFAULTS.items():
        if key == "steps":
            default = _STEP_DEFAULTS.get(command)
        elif key == "schedule":
            default = _SCHEDULE_DEFAULTS.get(command, "vp")
        raw = getattr(args, key, None)
        if raw is None:
            raw = file_cfg.get(key, default)
        if raw is None:
            cfg[key] = None
            continue
        try:
            cfg[key] = typ(raw)
        except ValueError:
            raise UsageError(f"bad value for {key}: {raw!r}") from None
    return cfg


def _int_list(text, name):
    try:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{name} must be a comma-separated list of integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise UsageError(f"{name} must list positive integers")
    return vals


def _vec(text, name):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"{name} must be comma-separated numbers, got {text!r}") from None


def _schedules(text):
    try:
        return [make_schedule(k) for k in text.split(",") if k.strip()]
    except ValueError as e:
        raise UsageError(str(e)) from None


def _out_dir(cfg):
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise UsageError(f"cannot create output directory {out}: {e.strerror}") from None
    return out


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _r(v):
    return repr(float(v))


def load_model(path):
    """Rebuild the epsilon model stored in a checkpoint written by this CLI."""
    try:
        params, meta = load_checkpoint(path)
    except OSError as e:
        raise UsageError(f"cannot read checkpoint {path}: {e.strerror}") from None
    if "schedule" not in meta:
        raise FormatError(f"checkpoint {path} does not record its schedule")
    sched = parse_schedule_id(meta["schedule"])
    plan = None
    if "phases" in meta:
        plan = PhasePlan(np.array([float(v) for v in meta["phases"].split(";")]), "explicit")
    model = NetEps(params, sched, meta.get("prediction", "eps"), meta.get("precondition", "1") == "1",
                   plan)
    return model, meta


def _meta(stage, sched, seed, plan=None):
    meta = {"stage": stage, "schedule": sched.id, "prediction": "eps", "precondition": 1,
            "seed": seed}
    if plan is not None:
        meta["phases"] = ";".join(repr(float(b)) for b in plan.boundaries)
    return meta


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


def _path_times(sched, n):
    if sched.kind == "edm":
        return np.geomspace(sched.t_min, sched.t_max, n)
    return np.linspace(sched.t_min, sched.t_max, n)


def cmd_trajectories(cfg):
    out = _out_dir(cfg)
    x0 = _vec(cfg["x0"], "x0")
    eps = _vec(cfg["eps"], "eps")
    if x0.shape != eps.shape:
        raise UsageError("x0 and eps must have the same length")
    n = _int_list(cfg["steps"], "steps")[0] + 1
    scheds = _schedules(cfg["schedule"])
    panels, transformed, rows_t = [], [], []
    ok = True
    for letter, sched in zip("abcdefgh", scheds):
        t = _path_times(sched, n)
        a, s = sched.alpha_sigma(t)
        x = a[:, None] * x0 + s[:, None] * eps
        y = x / s[:, None]
        d = x0.size
        _write_rows(out / f"traj_{sched.kind}.csv",
                    ["t"] + [f"x{j}" for j in range(d)] + [f"y{j}" for j in range(d)],
                    [[_r(ti)] + [_r(v) for v in xi] + [_r(v) for v in yi]
                     for ti, xi, yi in zip(t, x, y)])
        rows_t += [[sched.kind, _r(ti)] + [_r(v) for v in yi] for ti, yi in zip(t, y)]
        traj = Trajectory(t, x, np.broadcast_to(eps, x.shape))
        raw = float(straightness(traj, False, sched))
        tr = float(straightness(traj, True, sched))
        passed = tr < 1e-9
        ok &= passed
        print(f"{sched.kind:<6} raw chord deviation {raw:.3e}  transformed {tr:.3e}  "
              f"{'PASS' if passed else 'FAIL'}")
        panels.append((f"({letter}) {sched.kind}", [(x[:, 0], x[:, -1], "x_t")]))
        transformed.append((y[:, 0], y[:, -1], sched.kind))
    _write_rows(out / "transformed.csv",
                ["schedule", "t"] + [f"y{j}" for j in range(x0.size)], rows_t)
    panels.append((f"({'abcdefgh'[len(scheds)]}) x_t / sigma_t", transformed))
    _svg.write_panels(out / "trajectories.svg", panels)
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# theorem-check
# ---------------------------------------------------------------------------


def theorem_rows(schedules, n_seeds, steps, seed, preset="ring8"):
    """``(schedule, check, statistic, threshold, passed)`` rows for both directions."""
    rows = []
    mix = mixture_preset(preset)
    for sched in schedules:
        rngs = [np.random.default_rng([seed, i]) for i in range(n_seeds)]
        draws = np.array([r.standard_normal((2, mix.dim)) for r in rngs])
        model = ConstantEps(draws[:, 0])
        ends = [sample(model, draws[:, 1], make_grid(sched, k), sched, record=False).final
                for k in steps]
        spread = max(np.sqrt(np.mean(np.sum((e - ends[0]) ** 2, axis=-1))) for e in ends)
        rows.append((sched.kind, "constant_eps_invariance", spread, 1e-9, spread <= 1e-9))
        oracle = GMMOracle(mix, sched)
        noise = np.random.default_rng([seed, 99]).standard_normal((256, mix.dim))
        one = sample(oracle, noise, make_grid(sched, 1), sched, record=False).final
        many = sample(oracle, noise, make_grid(sched, 64), sched, record=False).final
        gap = np.sqrt(np.mean(np.sum((one - many) ** 2, axis=-1)))
        rows.append((sched.kind, "gmm_oracle_not_first_order", gap, 1e-3, gap > 1e-3))
    return rows


def cmd_theorem_check(cfg):
    out = _out_dir(cfg)
    rows = theorem_rows(_schedules(cfg["schedule"]), cfg["seeds"],
                        _int_list(cfg["steps"], "steps"), cfg["seed"], cfg["preset"])
    _write_rows(out / "theorem_check.csv", ["schedule", "check", "statistic", "threshold", "passed"],
                [[s, c, _r(v), _r(th), int(p)] for s, c, v, th, p in rows])
    for s, c, v, th, p in rows:
        print(f"{s:<6} {c:<28} {v:.3e}  {'PASS' if p else 'FAIL'}")
    return 0 if all(r[4] for r in rows) else 1


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def _parse_stages(text):
    stages = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in stages if s not in STAGES]
    if bad or not stages:
        raise UsageError(f"unknown stage(s) {bad}; choose from {', '.join(STAGES)}")
    return [s for s in STAGES if s in stages]


def _need(path, stage, missing, stages):
    if stage in stages or Path(path).exists():
        return
    raise UsageError(f"stage '{missing}' needs {Path(path).name} from stage '{stage}'; "
                     f"add '{stage}' to --stages or run it first in {Path(path).parent}")


def _check_reused(path, sched):
    params, meta = load_checkpoint(path)
    if meta.get("schedule") != sched.id:
        raise UsageError(f"{path} was trained with schedule {meta.get('schedule')}, not {sched.id}")
    return params


def cmd_pipeline(cfg):
    out = _out_dir(cfg)
    stages = _parse_stages(cfg["stages"])
    sched = _schedules(cfg["schedule"])[0]
    seed = cfg["seed"]
    files = {"base": out / "base.rdnet", "pairs": out / "pairs.rdpair",
             "rectify": out / "rect.rdnet", "phased": out / "phased.rdnet", "cd": out / "cd.rdnet"}
    # check every dependency before any work starts
    if "pairs" in stages:
        _need(files["base"], "base", "pairs", stages)
    if "rectify" in stages:
        _need(files["pairs"], "pairs", "rectify", stages)
        _need(files["base"], "base", "rectify", stages)
    if "phased" in stages:
        _need(files["base"], "base", "phased", stages)
    if "cd" in stages and not ("rectify" in stages or files["rectify"].exists()):
        _need(files["base"], "base", "cd", stages)
    try:
        mix = mixture_preset(cfg["preset"])
        plan = parse_phase_plan(cfg["phases"], sched)
    except ValueError as e:
        raise UsageError(str(e)) from None
    eval_steps = _int_list(cfg["steps"], "steps")
    data = mix.sample(cfg["n_data"], np.random.default_rng([seed, 7]))
    reference = mix.sample(cfg["n_eval"], np.random.default_rng([seed, 123]))
    net_cfg = NetConfig(input_dim=mix.dim, hidden_width=cfg["hidden_width"],
                        hidden_layers=cfg["hidden_layers"])

    def tcfg(iters, offset):
        return TrainConfig(sched, iterations=iters, batch_size=cfg["batch_size"], lr=cfg["lr"],
                           seed=seed + offset)

    reports = []

    def report(stage, model):
        values = evaluate_model(model, sched, reference, n=cfg["n_eval"], steps=eval_steps,
                                n_paths=cfg["n_paths"], seed=seed)
        noise = np.random.default_rng([seed, 11]).standard_normal((cfg["n_paths"], mix.dim))
        values["segment_eps_constancy"] = float(
            np.median(segment_eps_constancy(model, sched, plan, noise, cfg["inner_steps"])))
        rep = MetricReport(values, {"stage": stage, "schedule": sched.kind, "seed": seed})
        write_reports_csv([rep], out / f"metrics_{stage}.csv")
        reports.append(rep)
        print(f"[{stage}] " + "  ".join(f"{k}={v:.4g}" for k, v in values.items()))

    base_params = None
    if "base" in stages:
        res = train(tcfg(cfg["iterations"], 0), Coupling.random(data),
                    init_params(net_cfg, seed=seed))
        base_params = res.params
        save_checkpoint(files["base"], base_params, _meta("base", sched, seed))
        write_loss_csv(res.losses, out / "loss_base.csv")
        report("base", NetEps(base_params, sched))
    elif {"pairs", "rectify", "phased", "cd"} & set(stages) and files["base"].exists():
        base_params = _check_reused(files["base"], sched)

    pairs = None
    if "pairs" in stages:
        pairs = collect_pairs(NetEps(base_params, sched), sched, cfg["n_pairs"], cfg["teacher_steps"],
                              seed=seed + 1000, dim=mix.dim)
        save_pairs(pairs, files["pairs"])
        print(f"[pairs] {len(pairs)} pairs, {pairs.rejected} rejected")
    elif "rectify" in stages:
        pairs = load_pairs(files["pairs"])
        if pairs.schedule_id != sched.id:
            raise UsageError(f"{files['pairs']} was collected under {pairs.schedule_id}")

    rect_params = None
    if "rectify" in stages:
        res = train(tcfg(cfg["rect_iterations"], 500), Coupling.paired(pairs), base_params)
        rect_params = res.params
        save_checkpoint(files["rectify"], rect_params, _meta("rectify", sched, seed))
        write_loss_csv(res.losses, out / "loss_rectify.csv")
        report("rectify", NetEps(rect_params, sched))
    elif "cd" in stages and files["rectify"].exists():
        rect_params = _check_reused(files["rectify"], sched)

    if "phased" in stages:
        res = train_phased(NetEps(base_params, sched), plan, data,
                           tcfg(cfg["phased_iterations"], 700), base_params,
                           inner_steps=cfg["inner_steps"], pool_size=cfg["pool_size"])
        save_checkpoint(files["phased"], res.params, _meta("phased", sched, seed, plan))
        write_loss_csv(res.losses, out / "loss_phased.csv")
        report("phased", res.model(sched, plan=plan))

    if "cd" in stages:
        start = rect_params if rect_params is not None else base_params
        cd = CDConfig(sched, iterations=cfg["cd_iterations"], batch_size=cfg["batch_size"],
                      lr=cfg["lr"], seed=seed + 900)
        res = consistency_distill(start, NetEps(start.copy(), sched), cd, data)
        save_checkpoint(files["cd"], res.params, _meta("cd", sched, seed))
        write_loss_csv(res.losses, out / "loss_cd.csv")
        report("cd", NetEps(res.params, sched))

    if reports:
        write_reports_csv(reports, out / "metrics.csv")
    return 0


# ---------------------------------------------------------------------------
# collect-pairs / sample / metrics
# ---------------------------------------------------------------------------


def _require_checkpoint(cfg):
    if not cfg["checkpoint"]:
        raise UsageError("--checkpoint is required")
    return load_model(cfg["checkpoint"])


def cmd_collect_pairs(cfg):
    out = _out_dir(cfg)
    model, _ = _require_checkpoint(cfg)
    if model.plan is not None:
        raise UsageError("pairs must come from an unsegmented teacher")
    steps = _int_list(cfg["steps"], "steps")[0]
    ds = collect_pairs(model, model.schedule, cfg["n_pairs"], steps, seed=cfg["seed"],
                       dim=model.config.input_dim)
    save_pairs(ds, out / "pairs.rdpair")
    print(f"wrote {len(ds)} pairs to {out / 'pairs.rdpair'} ({ds.rejected} rejected)")
    return 0


def cmd_sample(cfg):
    out = _out_dir(cfg)
    model, _ = _require_checkpoint(cfg)
    steps = _int_list(cfg["steps"], "steps")[0]
    noise = np.random.default_rng(cfg["seed"]).standard_normal((cfg["n_samples"],
                                                                 model.config.input_dim))
    x = sample(model, noise, make_grid(model.schedule, steps), model.schedule, record=False).final
    d = x.shape[1]
    _write_rows(out / "samples.csv", [f"x{j}" for j in range(d)], [[_r(v) for v in row] for row in x])
    print(f"wrote {len(x)} samples ({steps} steps) to {out / 'samples.csv'}")
    return 0


def cmd_metrics(cfg):
    out = _out_dir(cfg)
    model, meta = _require_checkpoint(cfg)
    try:
        mix = mixture_preset(cfg["preset"])
    except ValueError as e:
        raise UsageError(str(e)) from None
    reference = mix.sample(cfg["n_eval"], np.random.default_rng([cfg["seed"], 123]))
    values = evaluate_model(model, model.schedule, reference, n=cfg["n_eval"],
                            steps=_int_list(cfg["steps"], "steps"), n_paths=cfg["n_paths"],
                            seed=cfg["seed"])
    rep = MetricReport(values, {"stage": meta.get("stage", "?"), "schedule": model.schedule.kind,
                                "seed": cfg["seed"]})
    write_reports_csv([rep], out / "metrics.csv")
    print(rep.table())
    return 0


COMMANDS = {
    "trajectories": cmd_trajectories,
    "theorem-check": cmd_theorem_check,
    "pipeline": cmd_pipeline,
    "collect-pairs": cmd_collect_pairs,
    "sample": cmd_sample,
    "metrics": cmd_metrics,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--schedule", help=f"schedule kind(s), comma-separated: {', '.join(KINDS)}")
    common.add_argument("--preset", help="mixture preset (ring8, two-moons-gmm, single)")
    common.add_argument("--seed", help="global seed (default 0)")
    common.add_argument("--steps", help="sampling steps; a list for pipeline/metrics")
    common.add_argument("--out", help="output directory (default out)")
    common.add_argument("--config", help="key=value file; flags override it")
    common.add_argument("--phases", help="'M=4,spacing=lambda' or explicit boundaries")
    common.add_argument("--stages", help=f"pipeline stages, any of {','.join(STAGES)}")
    common.add_argument("--checkpoint", help="model checkpoint for collect-pairs/sample/metrics")
    p = argparse.ArgumentParser(prog="rectlab", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except (UsageError, FormatError) as e:
        print(f"rectlab {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (NumericalError, CollectionError, DomainError) as e:
        print(f"rectlab {args.command}: failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
