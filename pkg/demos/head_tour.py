# %% [markdown]
# # Three heads on the same blobs
#
# Prototype, mixture and exemplar heads over one small feature net, trained
# on three Gaussian blobs. Same data, same seed, different head.

# %%
import numpy as np

from deepcat import ModelSpec, TrainConfig, data
from deepcat.eval import accuracy, build_model, predict_proba
from deepcat.optim import fit

blobs = data.gen_blobs(n_classes=3, per_class=100, dim=2, separation=6.0, seed=0)
train, validation = data.split(blobs, 0.8, seed=0)
len(train), len(validation)

# %% [markdown]
# Each spec only changes the head. The exemplar head gets one center per
# training stimulus, so it is the slowest of the three.

# %%
specs = {
    "prototype": ModelSpec(head="prototype", covariance="axis"),
    "mixture K=3": ModelSpec(head="mixture", k=3),
    "exemplar": ModelSpec(head="exemplar"),
}
config = TrainConfig(epochs=20, seed=0)

results = {}
for name, spec in specs.items():
    net, head = build_model(spec, train, config.seed)
    history = fit(net, head, train, config)
    results[name] = (net, head)
    print(f"{name:12s} final loss {history[-1]['loss']:.4f}  val acc {accuracy(net, head, validation):.3f}")

# %% [markdown]
# Far from the boundaries every head is certain. The interesting rows are
# the stimuli each head is least sure about.

# %%
np.set_printoptions(precision=3, suppress=True)
for name, (net, head) in results.items():
    y = predict_proba(net, head, validation.inputs)
    unsure = np.argsort(y.max(axis=1))[:3]
    print(name, "rows", unsure, "labels", validation.labels[unsure])
    print(y[unsure])
