#!/usr/bin/env python3
"""Run the pinned desk-scale training experiment end to end.

Trains the tiny pooling config for 300 steps on the synthetic shape dataset,
writes a checkpoint plus NDJSON metrics, then reloads the checkpoint and
classifies one held-out sample. Takes a couple of minutes on a laptop.
"""

import argparse
import json

from metaformer.checkpoint import load, save, save_tensors
from metaformer.tensor import Tensor, softmax_lastdim
from metaformer.train import CLASS_NAMES, synth_sample, tiny_train_config, train_loop


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--out", default="tiny.ckpt")
    args = ap.parse_args()

    config = tiny_train_config()
    metrics_path = args.out + ".metrics.ndjson"
    result = train_loop(config, steps=args.steps, batch_size=args.batch_size, seed=args.seed,
                        lr_peak=args.lr, label_smoothing=0.0, metrics_path=metrics_path)
    save(result.model, args.out)
    first, last = result.metrics[0], result.metrics[-1]
    print(json.dumps({
        "initial_loss": first["loss"],
        "final_loss": last["loss"],
        "loss_ratio": last["loss"] / first["loss"],
        "final_train_acc": last["train_acc"],
        "checkpoint": args.out,
        "metrics": metrics_path,
    }, indent=2))

    # Quick round trip: classify a fresh sample with the reloaded checkpoint.
    image, label = synth_sample(seed=args.seed + 1, index=0, size=config.input_size)
    save_tensors(args.out + ".sample", {"input": image[None]})
    model = load(args.out)
    probs = softmax_lastdim(model.forward(Tensor(image[None]))).data[0]
    print(f"held-out sample: true={CLASS_NAMES[label]} "
          f"predicted={CLASS_NAMES[int(probs.argmax())]} (p={probs.max():.2f})")


if __name__ == "__main__":
    main()
