"""Draw from a fitted model and compare its dependence with the data.

Pass a model saved by ``fit_and_evaluate.py --save`` (or by ``twocats fit``)
together with the training CSV it was fitted on, or let the script fit a
short model itself.

    python demos/sampling.py --model model.json --data train.csv
"""

import argparse

import numpy as np
from scipy import stats

from twocats.copulas import ReferenceCopula, SyntheticSpec, make_synthetic
from twocats.io import read_csv
from twocats.model import TwoCatsModel
from twocats.sampling import SamplerConfig, empirical_quantile, sample_pairs
from twocats.training import TrainConfig, train

parser = argparse.ArgumentParser()
parser.add_argument("--model")
parser.add_argument("--data")
parser.add_argument("--n", type=int, default=5000)
args = parser.parse_args()

if args.model:
    model = TwoCatsModel.load(args.model)
    data = read_csv(args.data)
else:
    data, _ = make_synthetic(SyntheticSpec(ReferenceCopula("gaussian", 0.8), n_train=500))
    model, _ = train(data, TrainConfig(epochs=40))

quantiles = (empirical_quantile(data[:, 0]), empirical_quantile(data[:, 1]))
draws = sample_pairs(model, args.n, SamplerConfig(seed=1), quantiles)
print(f"{args.n} draws, {draws.retries} redraws after failed inversions")
print(f"Kendall tau  data={stats.kendalltau(data[:, 0], data[:, 1])[0]:.3f}"
      f"  samples={stats.kendalltau(draws.x[:, 0], draws.x[:, 1])[0]:.3f}")
print(f"KS p-value of the v marginal against U(0,1): {stats.kstest(draws.uv[:, 1], 'uniform').pvalue:.3f}")
print("sample means", np.round(draws.x.mean(axis=0), 3), "data means", np.round(data.mean(axis=0), 3))
