"""Banker-BOLO against uniformly random play on a hypercube linear bandit."""
import argparse

from banker_omd.harness import ExperimentConfig, build_delays, build_loss_model, run_single, aggregate


def compare(kind, delay, args):
    cfg = ExperimentConfig.from_dict({
        "algorithm": {"kind": kind, "arms": args.dim, "horizon": args.horizon},
        "environment": {"losses": {"kind": "linear", "action_set": args.action_set},
                        "delays": {"kind": "uniform", "d": delay}},
        "runs": args.runs, "master_seed": args.seed,
    })
    model, delays = build_loss_model(cfg), build_delays(cfg)
    return aggregate([run_single(cfg, i, model, delays) for i in range(args.runs)])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dim", type=int, default=4)
    ap.add_argument("--horizon", type=int, default=5000)
    ap.add_argument("--delays", default="0,20")
    ap.add_argument("--action-set", default="hypercube", choices=["hypercube", "ball"])
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=909)
    args = ap.parse_args()

    for d in map(int, args.delays.split(",")):
        b, u = compare("bolo", d, args), compare("uniform", d, args)
        print(f"d={d:3d}  bolo {b.mean_final:9.2f} +- {b.stderr_final:6.2f}   uniform {u.mean_final:9.2f} +- {u.stderr_final:6.2f}")


if __name__ == "__main__":
    main()
