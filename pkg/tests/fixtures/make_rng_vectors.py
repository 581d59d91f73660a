"""Regenerate rng_vectors.json with plain Python integers (no numpy).

    python3 tests/fixtures/make_rng_vectors.py > tests/fixtures/rng_vectors.json
"""

import json

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
SALT = 0x632BE59BD9B4E019


def mix(z):
    z &= MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def key_for(seed, path):
    key = mix(seed)
    for i in path:
        key = mix(key ^ mix(i * GOLDEN + SALT))
    return key


def outputs(key, count):
    return [mix(key + (j + 1) * GOLDEN) for j in range(count)]


def uniform(u):
    return ((u >> 11) + 0.5) / 2.0 ** 53


cases = []
for seed, path in [(0, []), (1, []), (42, []), (MASK, []), (0, [0]), (0, [1]), (7, [3, 5]), (2024, [999, 19, 2])]:
    key = key_for(seed, path)
    raw = outputs(key, 8)
    cases.append({
        "seed": seed,
        "path": path,
        "key": str(key),
        "uint64": [str(v) for v in raw],
        "uniform": [uniform(v).hex() for v in raw],
    })
print(json.dumps({"cases": cases}, indent=1))
