#!/usr/bin/env python3
"""Drive the full battery of acceptance experiments through the CLI.

Each config under configs/ is run with its frozen seed; outputs land under
out/<config-stem>/.  Pass --quick to shrink path counts and horizons for a
fast smoke pass (results will be noisy; targets will not be met tightly).
"""

import argparse
import pathlib
import sys
import tempfile

from horndiff.cli import main as horndiff_main

HERE = pathlib.Path(__file__).resolve().parent.parent
CONFIGS = [
    ("strip_lln.toml", "lln"),
    ("superdiffusive_lln.toml", "lln"),
    ("exponential_lln.toml", "lln"),
    ("strip_passage.toml", "passage"),
    ("explosion.toml", "explosion"),
    ("strip_local_time.toml", "strip"),
    ("strip_lln.toml", "ode"),
]

QUICK_SUBS = [
    ("n_paths = 200", "n_paths = 16"),
    ("t_horizon = 2000.0", "t_horizon = 100.0"),
    ("eta = 5e-5", "eta = 1e-3"),
    ("x_target = 1000.0", "x_target = 100.0"),
    ("r_target = 500.0", "r_target = 64.0"),
    ("r_cut = 32.0", "r_cut = 8.0"),
]


def run(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(HERE / "out"))
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args(argv)

    failures = []
    for cfg_name, experiment in CONFIGS:
        cfg_path = HERE / "configs" / cfg_name
        if args.quick:
            text = cfg_path.read_text()
            for old, new in QUICK_SUBS:
                text = text.replace(old, new)
            tmp = tempfile.NamedTemporaryFile(
                "w", suffix=".toml", delete=False)
            tmp.write(text)
            tmp.close()
            cfg_path = pathlib.Path(tmp.name)
        out_dir = pathlib.Path(args.out) / f"{cfg_name[:-5]}_{experiment}"
        print(f"=== {cfg_name} :: {experiment} -> {out_dir}")
        cli_args = ["--config", str(cfg_path), "--out", str(out_dir)]
        if args.threads:
            cli_args += ["--threads", str(args.threads)]
        rc = horndiff_main(cli_args + ["experiment", experiment])
        if rc != 0:
            failures.append((cfg_name, experiment, rc))

    print("=== diagnostics on the strip ensemble")
    out_dir = pathlib.Path(args.out) / "diagnose"
    diag_cfg = HERE / "configs" / "strip_lln.toml"
    if args.quick:
        text = diag_cfg.read_text()
        for old, new in QUICK_SUBS:
            text = text.replace(old, new)
        tmp = tempfile.NamedTemporaryFile("w", suffix=".toml", delete=False)
        tmp.write(text)
        tmp.close()
        diag_cfg = pathlib.Path(tmp.name)
    rc = horndiff_main(["--config", str(diag_cfg), "--out", str(out_dir)]
                       + (["--threads", str(args.threads)] if args.threads
                          else []) + ["diagnose"])
    if rc != 0:
        failures.append(("strip_lln.toml", "diagnose", rc))

    if failures:
        print("failures:", failures)
        return 1
    print("all experiments completed")
    return 0


if __name__ == "__main__":
    sys.exit(run())
