"""Random small SMARTs with finite histories, used by the equivalence checks."""

import numpy as np
import pandas as pd

from smartdtr.data import AllowableSetRule, NodeSchema, SmartDesign, TrialDataset


def random_small_smart(seed, tailor_a1=False):
    """A random two-stage design plus a dataset in which every reachable
    history cell is occupied.

    Stage 1 has 2-3 strata (values of ``x1``), stage 2 has 2-3 strata (values
    of ``z2``). Each stage-2 stratum allows one or two levels, so some strata
    are deterministic. About half the datasets include an absorbing event and
    half have a continuous outcome on a random range. With ``tailor_a1`` the
    stage-2 rule may also depend on the stage-1 treatment, which multiplies
    the number of embedded regimes.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(40, 201))
    k1 = int(rng.integers(2, 4))
    k2 = int(rng.integers(2, 4))
    a1_levels = ("p", "q") if rng.random() < 0.5 else ("p", "q", "r")
    a2_levels = ("s", "t", "u", "v")
    allowed2 = []
    for z in range(k2):
        size = 1 if (z == 0 and rng.random() < 0.5) else 2
        allowed2.append(tuple(sorted(rng.choice(a2_levels, size=size, replace=False))))
    absorbing = rng.random() < 0.5
    continuous = rng.random() < 0.5
    lo = float(rng.uniform(-5, 0)) if continuous else 0.0
    hi = float(lo + rng.uniform(1, 10)) if continuous else 1.0

    schema = NodeSchema(
        baseline=("x1",), stage1_treatment="a1", stage1_levels=a1_levels,
        timevarying=("d2", "z2") if absorbing else ("z2",),
        stage2_treatment="a2", stage2_levels=a2_levels, outcome="y", outcome_range=(lo, hi),
        tailoring1=("x1",), tailoring2=("a1", "z2") if tailor_a1 else ("z2",),
        absorbing=("d2",) if absorbing else (),
        domains={"x1": tuple(range(k1)), "z2": tuple(range(k2))},
    )
    rules = [AllowableSetRule(1, {}, a1_levels)]
    rules += [AllowableSetRule(2, {"z2": z}, allowed2[z]) for z in range(k2)]
    design = SmartDesign(schema, tuple(rules))

    # one record per reachable cell, then random fill
    cells = [(x, a, z, b) for x in range(k1) for a in a1_levels for z in range(k2) for b in allowed2[z]]
    p1 = rng.uniform(0.3, 0.7, size=k1)
    rows = [dict(x1=x, a1=a, z2=z, a2=b, d2=0.0) for x, a, z, b in cells]
    for _ in range(n - len(rows)):
        x = int(rng.integers(k1))
        a = a1_levels[int(rng.random() < p1[x])] if len(a1_levels) == 2 else a1_levels[int(rng.integers(3))]
        z = int(rng.integers(k2))
        opts = allowed2[z]
        b = opts[0] if len(opts) == 1 else opts[int(rng.random() < rng.uniform(0.3, 0.7))]
        dead = absorbing and rng.random() < 0.1
        rows.append(dict(x1=x, a1=a, z2=np.nan if dead else z, a2=None if dead else b, d2=float(dead)))
    frame = pd.DataFrame(rows)
    frame["x1"] = frame["x1"].astype(float)
    frame["z2"] = frame["z2"].astype(float)
    if continuous:
        frame["y"] = rng.uniform(lo, hi, len(frame))
    else:
        frame["y"] = (rng.random(len(frame)) < rng.uniform(0.2, 0.8)).astype(float)
    if not absorbing:
        frame = frame.drop(columns="d2")
    frame = frame.sample(frac=1.0, random_state=int(rng.integers(2**31))).reset_index(drop=True)
    return design, TrialDataset(schema, frame)
