"""Overfit the reduced LC_ATT on 10 synthetic utterances and print the loss curve.

    python scripts/overfit_smoke.py --work-dir runs/desk
"""
import argparse

from frameqa.experiments import DeskConfig, OverfitConfig, overfit_smoke, prepare


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work-dir", default="runs/desk")
    ap.add_argument("--epochs", type=int, default=OverfitConfig.epochs)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = prepare(DeskConfig(), args.work_dir)
    res = overfit_smoke(data, OverfitConfig(epochs=args.epochs, seed=args.seed))
    for epoch, loss in enumerate(res["losses"]):
        if epoch % 10 == 0 or epoch == len(res["losses"]) - 1:
            print(f"epoch {epoch:4d}  loss {loss:.6f}")
    print(f"final loss {res['final_loss']:.6f}; first epoch below {res['config']['target_loss']}: "
          f"{res['first_epoch_below']}")


if __name__ == "__main__":
    main()
