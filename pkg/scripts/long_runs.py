"""Long-time structure runs: energy drift and involution errors over T.

    python3 scripts/long_runs.py                     # every example config
    python3 scripts/long_runs.py configs/glm_t2.ini  # just one

Each config is run through the CLI; a one-line summary per run is printed.
"""
import glob
import json
import os
import sys

from compatdg import cli


def main(paths):
    paths = paths or sorted(p for p in glob.glob(os.path.join(os.path.dirname(__file__), "..", "configs", "*.ini"))
                            if "smoke" not in p)
    status = 0
    for path in paths:
        cfg = cli.load_config(path)
        code = cli.cmd_run(path)
        status = max(status, code)
        if code:
            print(f"{path}: exit {code}")
            continue
        out = cli.resolve_output(cfg.output_dir)
        with open(os.path.join(out, "summary.json")) as fh:
            s = json.load(fh)
        print(f"{os.path.basename(path)}: steps {s['steps']}, drift {s['energy_drift']}, "
              f"eps_c {s['max_eps_c']}, eps_d {s['max_eps_d']}, CG its {s['total_cg_iterations']}")
    return status


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
