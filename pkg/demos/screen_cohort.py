"""Screen a synthetic cohort with the command line tool.

Two groups of synthetic nights are written in the record container format.
The training group is preprocessed and both classifiers are trained on it.
The screening group reuses those weights: each night is classified minute by
minute, turned into an AHI report and scored against its planted truth.
Everything lands under ``--workdir``.
"""
import argparse
from pathlib import Path

import numpy as np

from apnea_screen.cli import run
from apnea_screen.signal_io import LabelKind, write_record
from apnea_screen.synth import synthetic_night


def write_cohort(root: Path, prefix: str, ahis, seed0: int, seconds: float):
    for i, ahi in enumerate(ahis):
        night = synthetic_night(f"{prefix}{i:02d}", seconds, float(ahi), seed0 + i)
        write_record(night.record, root / night.subject_id,
                     {LabelKind.STAGE: night.stage_track,
                      LabelKind.RESPIRATION: night.resp_track})
        print(f"  {night.subject_id}: planted AHI {night.ahi:5.1f} "
              f"over {night.sleep_hours:.2f} h of sleep")


def cli(*argv):
    print("$ apnea-screen " + " ".join(argv))
    code = run(list(argv))
    if code:
        raise SystemExit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default="screen_demo")
    ap.add_argument("--hours", type=float, default=2.5)
    args = ap.parse_args()
    work = Path(args.workdir)
    seconds = args.hours * 3600

    print("training nights")
    write_cohort(work / "train_data", "train", [0, 8, 15, 25, 35, 45, 20, 30], 100, seconds)
    print("screening nights")
    write_cohort(work / "screen_data", "screen", np.linspace(0, 40, 6), 500, seconds)

    # sleep/wake is learnt within an epoch; apnea minutes train until validation stalls
    stops = {"sleep": "epochs = 8\ntarget_val_accuracy = 0.98", "resp": "epochs = 10\npatience = 2"}
    for task, stop in stops.items():
        cfg = work / f"train_{task}.cfg"
        cfg.write_text(f"version = 1\n{stop}\n")
        train = ["--config", str(cfg), "--data", str(work / "train_data"),
                 "--out", str(work / "train_out")]
        if task == "sleep":
            cli("preprocess", *train)
        cli("train", "--task", task, *train)

    models = work / "train_out" / "models"
    screen_cfg = work / "screen.cfg"
    screen_cfg.write_text(f"version = 1\nsleep_model = {models / 'sleep.apnw'}\n"
                          f"resp_model = {models / 'resp.apnw'}\n")
    common = ["--config", str(screen_cfg), "--data", str(work / "screen_data"),
              "--out", str(work / "screen_out")]
    for command in ("preprocess", "predict", "report", "evaluate"):
        cli(command, *common)


if __name__ == "__main__":
    main()
