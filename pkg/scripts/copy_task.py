"""Train the converter on the copy task and print the accuracy curve."""

import argparse
import json
import logging

import torch

from streamanon.training import copy_task_run


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--log-every", type=int, default=250)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    torch.set_num_threads(1)
    r = copy_task_run(args.steps, args.seed, args.batch_size, lr=args.lr, log_every=args.log_every)
    print(json.dumps({"initial_loss": r["losses"][0], "final_loss": r["losses"][-1],
                      "accuracy": r["accuracy"], "curve": r["curve"]}, indent=2))


if __name__ == "__main__":
    main()
