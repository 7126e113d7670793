"""Skip counts of Banker-SFTINF against the doubling budget, hidden range L."""
import argparse
import math

from banker_omd.harness import ExperimentConfig, build_delays, build_loss_model, run_single


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--L", type=float, default=100.0)
    ap.add_argument("--delay", type=int, default=20)
    ap.add_argument("--horizon", type=int, default=5000)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=808)
    args = ap.parse_args()

    cfg = ExperimentConfig.from_dict({
        "algorithm": {"kind": "sftinf", "arms": 5, "horizon": args.horizon},
        "environment": {"losses": {"kind": "scale_free", "best": 0.3, "gap": 0.2, "L": args.L},
                        "delays": {"kind": "uniform", "d": args.delay}},
        "runs": args.runs, "master_seed": args.seed,
    })
    model, delays = build_loss_model(cfg), build_delays(cfg)
    doublings = math.ceil(math.log2(4 * args.L)) + 1
    for i in range(args.runs):
        rec = run_single(cfg, i, model, delays)
        budget = doublings * (int(rec.backlogs.max()) + 1)
        print(f"run {i:2d}: skips={rec.skip_count:4d} budget={budget:5d} regret={rec.final_regret:10.2f}")


if __name__ == "__main__":
    main()
