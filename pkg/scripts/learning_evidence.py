"""Run the three toy learning checks: content-encoder distillation on a
fixed batch, codec reconstruction of held-out tones, and the converter copy
task."""

import argparse
import json
import math

import torch

from streamanon.training import codec_tone_run, copy_task_run, distill_fixed_batch


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-copy", action="store_true", help="skip the ~2.5 min copy task")
    args = p.parse_args()
    torch.set_num_threads(1)
    out = {}
    d = distill_fixed_batch(200, args.seed)
    out["distill"] = {"first": d[0], "last": d[-1], "drop": 1 - d[-1] / d[0]}
    out["codec_snr_db"] = codec_tone_run(500, args.seed)["snr_db"]
    if not args.skip_copy:
        r = copy_task_run(2000, args.seed)
        out["copy_task"] = {"accuracy": r["accuracy"], "initial_loss": r["losses"][0],
                            "uniform_loss": 8 * math.log(1024)}
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
