#!/usr/bin/env python3
"""Reproduce the reference complexity tables for all named variants and ablations.

Prints parameter and MAC totals under both counting conventions next to the
published values, with deviations. Everything is analytic; runs in
milliseconds.
"""

from metaformer.analysis import cost_report
from metaformer.model import ModelConfig

VARIANTS = {"S12": (11.9, 1.8), "S24": (21.4, 3.4), "S36": (30.8, 5.0),
            "M36": (56.1, 8.8), "M48": (73.4, 11.6)}

ABLATIONS = [
    ("random matrix x4", ("random_matrix",) * 4, "mln", 11.9, 3.3),
    ("[pool,pool,pool,attn]", ("pooling", "pooling", "pooling", "attention"), "ln", 14.0, 1.9),
    ("[pool,pool,attn,attn]", ("pooling", "pooling", "attention", "attention"), "ln", 16.5, 2.5),
    ("[pool,pool,pool,sfc]", ("pooling", "pooling", "pooling", "spatial_fc"), "mln", 11.9, 1.8),
    ("[pool,pool,sfc,sfc]", ("pooling", "pooling", "spatial_fc", "spatial_fc"), "mln", 12.2, 1.9),
]


def main() -> None:
    print("five-variant table (params exclude LayerScale, MACs include pooling)")
    print(f"{'model':<8}{'params':>10}{'ref':>8}{'dev':>9}{'macs':>10}{'ref':>8}{'dev':>9}")
    for name, (ref_p, ref_m) in VARIANTS.items():
        r = cost_report(ModelConfig.variant_named(name))
        p, m = r.table_params / 1e6, r.macs / 1e9
        print(f"{name:<8}{p:>9.2f}M{ref_p:>7.1f}M{p - ref_p:>+9.3f}{m:>9.2f}G{ref_m:>7.1f}G{m - ref_m:>+9.3f}")

    print()
    print("ablation table (params include LayerScale, MACs exclude pooling)")
    print(f"{'mixers':<24}{'params':>10}{'ref':>8}{'macs':>10}{'ref':>8}{'frozen':>10}")
    s12 = ModelConfig.variant_named("S12")
    for label, kinds, norm, ref_p, ref_m in ABLATIONS:
        r = cost_report(s12.with_mixers(kinds, norm=norm))
        p, m, f = r.trainable_params / 1e6, r.macs_excl_pool / 1e9, r.frozen_params / 1e6
        frozen = f"{f:.1f}M" if f else "-"
        print(f"{label:<24}{p:>9.2f}M{ref_p:>7.1f}M{m:>9.2f}G{ref_m:>7.1f}G{frozen:>10}")


if __name__ == "__main__":
    main()
