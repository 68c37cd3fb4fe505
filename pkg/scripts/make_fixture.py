"""Regenerate the bundled 500-user / 400-item heavy-tailed fixture.

Every user and item keeps at least one interaction and the edge count is
exactly 10,000. Output is deterministic for a given seed.

    python3 scripts/make_fixture.py [--seed 7] [--out src/topo_rec/data/fixture_500x400.tsv]
"""

import argparse
from pathlib import Path

import numpy as np

from topo_rec.synthetic import power_law_interactions

USERS, ITEMS, EDGES = 500, 400, 10_000


def fixture_edges(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    g = power_law_interactions(USERS, ITEMS, EDGES, seed=seed)
    R = np.zeros((USERS, ITEMS), dtype=bool)
    R[g.users, g.items] = True
    # patch isolated nodes with one popularity-weighted edge
    pop_i = R.sum(axis=0) + 1.0
    pop_u = R.sum(axis=1) + 1.0
    for u in np.flatnonzero(~R.any(axis=1)):
        R[u, rng.choice(ITEMS, p=pop_i / pop_i.sum())] = True
    for i in np.flatnonzero(~R.any(axis=0)):
        R[rng.choice(USERS, p=pop_u / pop_u.sum()), i] = True
    # trim back to the target from edges whose endpoints both keep degree >= 2
    while R.sum() > EDGES:
        uu, ii = np.nonzero(R)
        ok = (R.sum(axis=1)[uu] > 1) & (R.sum(axis=0)[ii] > 1)
        cand = np.flatnonzero(ok)
        drop = rng.choice(cand, size=min(int(R.sum()) - EDGES, cand.size), replace=False)
        R[uu[drop], ii[drop]] = False
    uu, ii = np.nonzero(R)
    return np.column_stack([uu, ii])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", type=Path,
                    default=Path(__file__).resolve().parent.parent / "src/topo_rec/data/fixture_500x400.tsv")
    args = ap.parse_args()
    edges = fixture_edges(args.seed)
    rng = np.random.default_rng(args.seed + 1)
    edges = edges[rng.permutation(len(edges))]
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# user\titem  (synthetic heavy-tailed fixture, regenerate with scripts/make_fixture.py)\n")
        for u, i in edges.tolist():
            fh.write(f"u{u:03d}\ti{i:03d}\n")
    print(f"wrote {len(edges)} interactions to {args.out}")


if __name__ == "__main__":
    main()
