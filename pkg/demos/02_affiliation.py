"""
Consensus affiliation and threshold sensitivity
===============================================

Each alias gets a histogram of the set tags on the posts naming it. The
alias is assigned the modal set only when that set holds at least the
threshold share of its tagged posts.
"""
import numpy as np

from crowdnet.affiliation import RESOLVED, AliasProfile, filter_sets, resolve, resolve_all

for hist in ({"A": 7, "B": 3}, {"A": 6, "B": 4}, {"A": 4}):
    a = resolve(AliasProfile("x", {"X"}, sum(hist.values()), hist), 0.70)
    print(hist, "->", a.status, a.set_id, round(a.confidence, 2))

# A noisy population: true set with probability 0.8, otherwise random.
rng = np.random.default_rng(0)
profiles = []
for i in range(300):
    true = f"S{i % 6}"
    n = 5 + rng.poisson(10)
    tags = [true if rng.random() < 0.8 else f"S{rng.integers(6)}" for _ in range(n)]
    hist = {s: tags.count(s) for s in set(tags)}
    profiles.append(AliasProfile(f"a{i}", {f"A{i}"}, n, hist))

for t in (0.51, 0.70, 0.90):
    out = resolve_all(profiles, t)
    print(f"threshold {t:.2f}: {sum(a.status == RESOLVED for a in out)} of {len(out)} resolved")

# Sets need ten resolved affiliates and an allowlist entry to stay in the sample.
kept, roster = filter_sets(resolve_all(profiles, 0.70), {f"S{k}": f"N{k % 2}" for k in range(5)}, 10)
print("kept sets:", [(s.set_id, s.nation_id, s.affiliate_count) for s in roster])
