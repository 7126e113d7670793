"""Scale-free check: multiply every loss by c and watch the regret follow."""
import argparse

from banker_omd.harness import ExperimentConfig, build_delays, build_loss_model, run_single, aggregate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--algorithm", default="sflbinf", choices=["sflbinf", "sftinf"])
    ap.add_argument("--scales", default="0.1,1,10,100")
    ap.add_argument("--horizon", type=int, default=5000)
    ap.add_argument("--delay", type=int, default=10)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=707)
    args = ap.parse_args()

    signed = args.algorithm == "sflbinf"
    cfg = ExperimentConfig.from_dict({
        "algorithm": {"kind": args.algorithm, "arms": 5, "horizon": args.horizon},
        "environment": {"losses": {"kind": "scale_free", "best": 0.3, "gap": 0.2, "L": 1.0, "signed": signed},
                        "delays": {"kind": "uniform", "d": args.delay}},
        "runs": args.runs, "master_seed": args.seed,
    })
    # same instance for every c, only the units change
    base, delays = build_loss_model(cfg), build_delays(cfg)
    ref = None
    for c in map(float, args.scales.split(",")):
        model = base.scaled(c)
        stats = aggregate([run_single(cfg, i, model, delays) for i in range(args.runs)])
        ref = ref if ref is not None else (c, stats.mean_final)
        rel = (stats.mean_final / ref[1]) / (c / ref[0])
        print(f"c={c:<8g} regret={stats.mean_final:12.3f} +- {stats.stderr_final:9.3f}  (regret ratio)/(c ratio)={rel:.3f}")


if __name__ == "__main__":
    main()
