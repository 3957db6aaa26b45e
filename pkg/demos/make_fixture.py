"""Write a simulated DGP-1 trial to ``demos/dgp1_trial.csv`` for the CLI walkthrough."""

from pathlib import Path

from smartdtr.data import write_csv
from smartdtr.simulation import Dgp1Config, dgp1_sample

if __name__ == "__main__":
    path = Path(__file__).parent / "dgp1_trial.csv"
    write_csv(dgp1_sample(Dgp1Config(n=1692, seed=2024)), path)
    print(f"wrote {path}")
