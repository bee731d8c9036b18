"""Command-line interface.

Subcommands:
  compose           run a composition and write the output image + report
  inspect-attn      dump per-layer attention heatmaps; rank layers vs a
                    reference mask when one is given
  check-equivalence run the blur-equivalence residual suite
  perturb-study     report output deltas from blurring each Q/K/V group
  gen-assets        emit seeded toy images, mask and config for tests
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import studies
from .abb import downsample_mask, rank_layers_by_iou
from .assets import write_assets
from .formats import parse_config_text, read_pgm, read_ppm, write_pgm, write_ppm
from .numerics import BinaryMask
from .pipeline import (
    CompositionConfig,
    CompositionInputs,
    compose,
    config_from_mapping,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shine-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scene_flags(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--bg", required=True, help="background image (P6)")
        p.add_argument("--init", required=True, help="inpainted initialization image (P6)")
        p.add_argument("--subject", required=True, help="subject image (P6)")
        p.add_argument("--mask", required=True, help="user mask (P5, pixel resolution)")
        p.add_argument("--prompt", default="", help="prompt string")
        p.add_argument("--seed", type=int, help="override the noise seed")

    p_compose = sub.add_parser("compose", help="run one composition")
    add_scene_flags(p_compose)
    p_compose.add_argument("--out", required=True, help="output image path (P6)")
    p_compose.add_argument("--report", help="run report path (JSON)")

    p_attn = sub.add_parser("inspect-attn", help="dump attention heatmaps")
    add_scene_flags(p_attn)
    p_attn.add_argument("--out-dir", required=True, help="directory for heatmap PGMs")
    p_attn.add_argument("--truth", help="reference mask (P5) for layer ranking")

    p_eq = sub.add_parser("check-equivalence", help="blur-equivalence residual suite")
    p_eq.add_argument("--pairs", type=int, default=200)
    p_eq.add_argument("--seed", type=int, default=0)

    p_ps = sub.add_parser("perturb-study", help="blur each Q/K/V group and compare")
    p_ps.add_argument("--seed", type=int, default=0)
    p_ps.add_argument("--blur-sigma", type=float, default=10.0)

    p_gen = sub.add_parser("gen-assets", help="emit seeded toy inputs")
    p_gen.add_argument("--out-dir", required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--size", type=int, default=32)
    return parser


def _load_scene(args) -> tuple[CompositionInputs, CompositionConfig]:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            config = config_from_mapping(parse_config_text(f.read()))
    else:
        config = CompositionConfig()
    if args.seed is not None:
        import dataclasses

        config = dataclasses.replace(config, noise_seed=args.seed)
    inputs = CompositionInputs(
        background=read_ppm(args.bg),
        init=read_ppm(args.init),
        subject=read_ppm(args.subject),
        user_mask=read_pgm(args.mask),
        prompt=args.prompt,
    )
    return inputs, config


def _cmd_compose(args) -> int:
    inputs, config = _load_scene(args)
    image, report = compose(inputs, config)
    write_ppm(args.out, image)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            f.write(report.to_json() + "\n")
    print(f"wrote {args.out} (final latent sha256 {report.final_latent_sha256[:16]}...)")
    return 0


def _cmd_inspect_attn(args) -> int:
    inputs, config = _load_scene(args)
    sink: list = []
    compose(inputs, config, capture_sink=sink)
    captures = [cap for _, cap in sink]
    os.makedirs(args.out_dir, exist_ok=True)
    n_layers = captures[0].num_layers
    grid_hw = captures[0].grid_hw
    indices = list(config.subject_token_indices)
    for layer in range(n_layers):
        mean_map = np.mean(
            [cap.layer_maps[layer][:, indices].mean(axis=1) for cap in captures], axis=0
        ).reshape(grid_hw)
        peak = mean_map.max()
        heat = mean_map / peak if peak > 0 else mean_map
        path = os.path.join(args.out_dir, f"layer_{layer:02d}.pgm")
        write_pgm(path, heat)
        print(f"layer {layer}: wrote {path}")
    if args.truth:
        truth_px = read_pgm(args.truth)
        factor = truth_px.shape[0] // grid_hw[0]
        truth = BinaryMask((downsample_mask(truth_px, factor) > 0).astype(int))
        ranking = rank_layers_by_iou([captures], [truth], config.abb.gamma, indices)
        for layer, score in enumerate(ranking.scores):
            marker = "  <- best" if layer == ranking.best else ""
            print(f"layer {layer}: mean IoU {score:.4f}{marker}")
    return 0


def _cmd_check_equivalence(args) -> int:
    report = studies.run_equivalence_suite(pairs=args.pairs, seed=args.seed)
    print(f"pairs:                { report.pairs}")
    print(f"max query residual:   {report.max_query_residual:.3e}  (bound {studies.QUERY_RESIDUAL_BOUND:.0e})")
    print(
        f"key residual > {studies.KEY_RESIDUAL_FLOOR:.0e}: "
        f"{report.key_exceed_fraction:.1%}  (need >= {studies.KEY_EXCEED_FRACTION:.0%})"
    )
    print(f"elapsed:              {report.elapsed_s:.2f}s")
    print("PASS" if report.ok else "FAIL")
    return 0 if report.ok else 1


def _cmd_perturb_study(args) -> int:
    rows = studies.perturb_study(args.seed, args.blur_sigma)
    print(f"seed {args.seed}, blur sigma {args.blur_sigma}")
    print(f"{'target':8s}  {'L2 output delta':>16s}")
    for target, delta in rows:
        print(f"{target:8s}  {delta:16.6f}")
    return 0


def _cmd_gen_assets(args) -> int:
    paths = write_assets(args.out_dir, args.seed, args.size)
    for name, path in paths.items():
        print(f"{name:8s} {path}")
    return 0


_COMMANDS = {
    "compose": _cmd_compose,
    "inspect-attn": _cmd_inspect_attn,
    "check-equivalence": _cmd_check_equivalence,
    "perturb-study": _cmd_perturb_study,
    "gen-assets": _cmd_gen_assets,
}


def cli_entry(argv: list[str] | None = None) -> int:
    """Parse argv and dispatch; returns the process exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_entry())


if __name__ == "__main__":
    main()
