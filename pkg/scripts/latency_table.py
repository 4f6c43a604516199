"""Recompute the latency / RTF table from per-chunk inference times.

Latency = chunk + d * frame + inference; RTF = inference / chunk.
Optionally append a row measured on this machine with the toy models.
"""

import argparse
import json

from streamanon.config import FRAME_MS
from streamanon.streaming import measure_rtf, predict_latency

# hardware, chunk ms, inference ms, reported RTF, reported latency ms
ROWS = [
    ("server", 46, 13, 0.28, 151), ("server", 92, 17, 0.18, 201), ("server", 276, 31, 0.11, 399),
    ("laptop", 46, 43, 0.93, 180), ("laptop", 92, 53, 0.58, 237), ("laptop", 276, 96, 0.35, 464),
]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--delay", type=int, default=2)
    p.add_argument("--measure", metavar="CHECKPOINT", help="also bench the toy pipeline from this checkpoint")
    p.add_argument("--pool", help="prompt manifest, required with --measure")
    args = p.parse_args()

    print(f"{'hw':<8}{'chunk':>7}{'inf':>6}{'RTF':>8}{'(ref)':>7}{'latency':>10}{'(ref)':>7}")
    for hw, chunk, inf, rtf, lat in ROWS:
        print(f"{hw:<8}{chunk:>7}{inf:>6}{measure_rtf(inf, chunk):>8.3f}{rtf:>7.2f}"
              f"{predict_latency(chunk, args.delay, FRAME_MS, inf):>10.1f}{lat:>7}")

    if args.measure:
        from streamanon.anonymizer import build_context, load_manifest
        from streamanon.checkpoint import load_models
        from streamanon.streaming import SessionConfig, bench

        models = load_models(args.measure)
        ctx = build_context(load_manifest(args.pool), "cross-ds-4rnd", 0, models)
        for chunk in (46, 92, 276):
            r = bench(SessionConfig(chunk_ms=chunk, delay=args.delay), models, ctx, duration_s=5.0)
            print(json.dumps({k: r[k] for k in ("chunk_ms", "mean_inference_ms", "rtf", "predicted_latency_ms")}))


if __name__ == "__main__":
    main()
