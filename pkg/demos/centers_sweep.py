# %% [markdown]
# # How many centers does a class need?
#
# Each class of the multimodal set is four interleaved clusters, so the
# class means nearly coincide. One center per class cannot work; a center
# per cluster should.

# %%
from deepcat import ModelSpec, TrainConfig, data
from deepcat.eval import centers_sweep, format_summary, summarize_sweep

stimuli = data.gen_multimodal(n_classes=2, modes_per_class=4, per_mode=50, dim=2, seed=0)
len(stimuli), stimuli.n_classes

# %% [markdown]
# An identity feature net keeps the geometry fixed, so only the head
# learns. Two replications per K; seeds are ``base_seed + replication``.

# %%
spec = ModelSpec(net="identity", head="mixture")
runs = centers_sweep(
    spec,
    stimuli,
    k_values=(1, 2, 4, 8),
    replications=2,
    config=TrainConfig(epochs=30),
)
print(format_summary(summarize_sweep(runs)))

# %% [markdown]
# Accuracy climbs until K matches the four clusters per class and then
# flattens: the extra centers at K=8 have nothing left to explain.
