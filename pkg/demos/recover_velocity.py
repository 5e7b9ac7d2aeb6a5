"""Recover a known closed-form velocity profile from noiseless samples.

The target is a separable parabola-times-parabola scaled by Re.  Three Re
values are used for training and three others are held out.
"""
import numpy as np

from ductsr.expr import evaluate_batch, parse
from ductsr.flowgen import RECORD_DTYPE
from ductsr.metrics import nmae
from ductsr.sr import SRConfig, data_columns, evolve

truth = parse("Re*(2.18-8.46*Y**2)*(1-3.89*Z**2)")
g = np.linspace(-0.5, 0.5, 21)
Y, Z = np.meshgrid(g, g, indexing="ij")


def sample(res):
    parts = []
    for re in res:
        r = np.zeros(Y.size, dtype=RECORD_DTYPE)
        r["y"], r["z"], r["re"] = Y.ravel(), Z.ravel(), re
        env, _ = data_columns(r)
        r["u"] = evaluate_batch(truth, env)
        parts.append(r)
    return np.concatenate(parts)


train, test = sample([34, 174, 279]), sample([70, 139, 244])
frontier = evolve(SRConfig(rng_seed=42, n_iterations=100), train, "u")

env, y = data_columns(test, "u")
print(f"{'cx':>3} {'train mse':>10} {'test nmae%':>10}  equation")
for e in frontier:
    print(f"{e.complexity:3d} {e.loss:10.3g} {nmae(y, evaluate_batch(e.expression, env)):10.3g}  {e.text}")
