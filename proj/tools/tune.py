#!/usr/bin/env python3
# ------------------------------------------------------------------------------
#
#   Copyright 2026 The ocarlab Authors
#
#   Licensed under the Apache License, Version 2.0 (the "License");
#   you may not use this file except in compliance with the License.
#   You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#   Unless required by applicable law or agreed to in writing, software
#   distributed under the License is distributed on an "AS IS" BASIS,
#   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#   See the License for the specific language governing permissions and
#   limitations under the License.
#
# ------------------------------------------------------------------------------
"""Per-strategy hyperparameter search for the convex and Split-MNIST presets.

Convex candidates are scored by mean(L_p_final + L_s_final), MNIST candidates
by mean final accuracy, both over selection seeds disjoint from the preset's
evaluation seeds. Prints the best setting per strategy; the preset file is
edited by hand afterwards.
"""

import argparse
import itertools
import json
import os
import pathlib
import re
import subprocess
import tempfile

CONVEX = {
    "er": {"alpha": [0.003, 0.01, 0.03, 0.04, 0.05, 0.07, 0.1]},
    "ewc": {
        "alpha": [0.003, 0.01, 0.03, 0.05],
        "ewc_penalty": [0.001, 0.01, 0.1, 1.0, 10.0],
        "ewc_ema": [0.01, 0.1],
    },
    "ngd": {
        "alpha": [0.03, 0.05, 0.1, 0.2, 0.3],
        "ngd_damping": [0.01, 0.03, 0.1, 0.3, 1.0],
        "ngd_ema": [0.003, 0.01, 0.03, 0.1],
    },
    "ocar": {
        "alpha": [0.05, 0.1, 0.2, 0.3],
        "ema": [0.003, 0.01, 0.03, 0.1],
        "tau_init": [0.001, 0.003, 0.01, 0.03, 0.1],
        "delta_tau": [0.0, 0.00001, 0.0001, 0.001],
        "lambda_mode": ["fixed", "time_growth"],
        "delta_lambda": [0.001, 0.01],
    },
}

# Second stage: extends the axes whose first-stage optimum sat on a grid edge
# (ngd damping; ocar ema and delta_lambda) and keeps the optimum's neighbours.
CONVEX_REFINE = {
    "ngd": {
        "alpha": [0.1, 0.2, 0.3],
        "ngd_damping": [0.3, 1.0, 3.0, 10.0],
        "ngd_ema": [0.003, 0.01, 0.03],
    },
    "ocar": {
        "alpha": [0.1, 0.2, 0.3],
        "ema": [0.03, 0.1, 0.3, 0.5],
        "tau_init": [0.01],
        "delta_tau": [0.00003, 0.0001, 0.0003],
        "lambda_mode": ["time_growth"],
        "delta_lambda": [0.003, 0.01, 0.03, 0.1],
    },
}

MNIST = {
    "er": {"alpha": [0.003, 0.01, 0.03, 0.1]},
    "ocar": {
        "alpha": [0.003, 0.01, 0.03],
        "ema": [0.01, 0.1],
        "tau_init": [-1, 0.001],
        "delta_tau": [0.0, 0.0001],
        "lambda_mode": ["class_ratio"],
        "classes_per_task": [2],
    },
}

# Second stage: the first-stage optimum had delta_tau on the grid edge.
MNIST_REFINE = {
    "ocar": {
        "alpha": [0.01],
        "ema": [0.01, 0.03],
        "tau_init": [-1, 0.001],
        "delta_tau": [0.0001, 0.0003, 0.001],
        "lambda_mode": ["class_ratio"],
        "classes_per_task": [2],
    },
}

PRESETS = {
    "convex": ("configs/convex_appd.ini", CONVEX, CONVEX_REFINE, [100, 101, 102]),
    "mnist": ("configs/split_mnist5.ini", MNIST, MNIST_REFINE, [100, 101]),
}


def base_config(path, strategy, seeds):
    text = pathlib.Path(path).read_text()
    text = re.sub(r"^strategies\s*=.*$", f"strategies = {strategy}", text, flags=re.M)
    text = re.sub(r"^seeds\s*=.*$", "seeds = " + ", ".join(map(str, seeds)), text, flags=re.M)
    # Drop the strategy's own section; the candidate replaces it.
    return re.sub(rf"^\[{strategy}\][^\[]*", "", text, flags=re.M | re.S)


def score(binary, text, workdir, preset):
    cfg = workdir / "cand.ini"
    cfg.write_text(text)
    out = workdir / "out"
    env = dict(os.environ)
    env.setdefault("OCAR_DATA_ROOT", str(pathlib.Path("data").resolve()))
    proc = subprocess.run([binary, "run", "--config", str(cfg), "--out", str(out)], capture_output=True, text=True, env=env)
    if proc.returncode not in (0, 3):
        raise RuntimeError(proc.stderr)
    summary = json.loads((out / "summary.json").read_text())
    (stats,) = summary["strategies"].values()
    if "failed_seeds" in stats:
        return float("inf")
    if preset == "mnist":
        return -stats["acc"]["mean"]
    return stats["L_p_final"]["mean"] + stats["L_s_final"]["mean"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--binary", default="build/ocarlab")
    ap.add_argument("--preset", choices=list(PRESETS), default="convex")
    ap.add_argument("--seeds", type=int, nargs="+", help="selection seeds (preset default otherwise)")
    ap.add_argument("--strategies", nargs="+", help="subset of the preset's strategies")
    ap.add_argument("--refine", action="store_true", help="run the second-stage grids")
    args = ap.parse_args()
    config, grids, refine, seeds = PRESETS[args.preset]
    if args.refine:
        grids = refine
    seeds = args.seeds or seeds
    with tempfile.TemporaryDirectory() as tmp:
        work = pathlib.Path(tmp)
        for strat in args.strategies or list(grids):
            base = base_config(config, strat, seeds)
            grid = grids[strat]
            best = (float("inf"), None)
            for values in itertools.product(*grid.values()):
                cand = dict(zip(grid, values))
                if cand.get("lambda_mode") == "fixed":
                    if cand.get("delta_lambda") != grid["delta_lambda"][0]:
                        continue
                    cand.pop("delta_lambda")
                section = f"\n[{strat}]\n" + "".join(f"{k} = {v}\n" for k, v in cand.items())
                s = score(args.binary, base + section, work, args.preset)
                print(f"{strat} {s:.6g} {cand}", flush=True)
                if s < best[0]:
                    best = (s, cand)
            print(f"BEST {strat} {best[0]:.6g} {best[1]}", flush=True)


if __name__ == "__main__":
    main()
