"""Mean regret of Banker-TINF as the horizon and the delay grow.

    python scripts/regret_scaling.py --runs 30
"""
import argparse
import math

from banker_omd.harness import ExperimentConfig, run_monte_carlo


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--arms", type=int, default=10)
    ap.add_argument("--horizons", default="1000,2000,4000,8000")
    ap.add_argument("--delays", default="0,8,32")
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    print(f"{'T':>6} {'d':>4} {'regret':>10} {'stderr':>8} {'regret/sqrt(KT)':>16}")
    for d in map(int, args.delays.split(",")):
        for T in map(int, args.horizons.split(",")):
            cfg = ExperimentConfig.from_dict({
                "algorithm": {"kind": "tinf", "arms": args.arms, "horizon": T},
                "environment": {"losses": {"kind": "bernoulli", "best": 0.3, "gap": 0.2},
                                "delays": {"kind": "uniform", "d": d}},
                "runs": args.runs, "master_seed": args.seed,
            })
            stats, _ = run_monte_carlo(cfg)
            norm = stats.mean_final / math.sqrt(args.arms * T)
            print(f"{T:>6} {d:>4} {stats.mean_final:>10.2f} {stats.stderr_final:>8.2f} {norm:>16.3f}")


if __name__ == "__main__":
    main()
