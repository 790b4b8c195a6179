"""
Master script to reproduce the sum-rate / fixed-point tables for every
operating point preset.
"""

import argparse
import os
import subprocess
import sys

from src.config import get_available_presets, load_config

ALGORITHMS = ['max-sinr', 'two-layer', 'iia']


def run(step, description, command):
    print(f"\n[{step}] {description}...")
    try:
        subprocess.run([sys.executable, "beamalign.py"] + command, check=True)
        return True
    except subprocess.CalledProcessError as e:
        print(f"Error: {description} failed with exit code {e.returncode}")
        return False


if __name__ == '__main__':
    parser = argparse.ArgumentParser(description='Reproduce all sweep tables')
    parser.add_argument('--presets', type=str, nargs='+', default=None,
                        help='Presets to run (default: all)')
    parser.add_argument('--inits', type=str, default=None,
                        help='Override the number of initializations')
    parser.add_argument('--workers', type=str, default=None, help='Worker processes')
    args = parser.parse_args()

    overrides = []
    if args.inits:
        overrides += ['--inits', args.inits]
    if args.workers:
        overrides += ['--workers', args.workers]

    print("=" * 60)
    print("Interference Channel Beamforming - Reproducing All Tables")
    print("=" * 60)

    presets = args.presets or get_available_presets()
    print(f"\nPresets: {', '.join(presets)}")

    for preset in presets:
        config = load_config(preset)
        out = config['out']
        channels = os.path.join(out, "channels.json")
        n_steps = len(ALGORITHMS) + 2

        print("\n" + "=" * 60)
        print(f"Operating point {preset}")
        print("=" * 60)

        if not run(f"1/{n_steps}", "Generating channels",
                   ["gen-channels", "--preset", preset, "--out", channels]):
            continue

        for i, algo in enumerate(ALGORITHMS, start=2):
            run(f"{i}/{n_steps}", f"Sweeping {algo}",
                ["sweep", "--preset", preset, "--algo", algo, "--channels", channels,
                 "--out", os.path.join(out, f"sweep_{algo}.csv")] + overrides)

        run(f"{n_steps}/{n_steps}", "Rendering report",
            ["report", "--in", out, "--format", "md", "--format", "csv", "--format", "svg"])

        if config['d'] >= 2:
            gap = ["--workers", args.workers] if args.workers else []
            run("extra", "Zero-forcing outer filter gap",
                ["zf-gap", "--preset", preset, "--out", os.path.join(out, "zf_gap.json")] + gap)

    print("\n" + "=" * 60)
    print("Reproduction Complete!")
    print("=" * 60)
