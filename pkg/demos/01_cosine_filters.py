# %% [markdown]
# # Cosine filters
#
# A cosine convolution layer stores two numbers per (input, output) channel
# pair: an amplitude and an angular step. The filter taps are generated on
# the fly, so the filter length costs nothing in parameters.

# %%
import numpy as np

from coscov.cos_layers import generate_filters, init_bank
from coscov.model import ModelConfig, compare_parameters

rng = np.random.default_rng(0)
bank = init_bank(rng, 1, 4, 25)
taps = generate_filters(bank).data
print("stored parameters:", bank.theta1.data.size + bank.theta2.data.size)
print("generated taps:   ", taps.size, taps.shape)

# %% [markdown]
# Each row is a sampled cosine; the wavelength is 2*pi / theta2.

# %%
for co in range(4):
    t1, t2 = bank.theta1.data[0, co], bank.theta2.data[0, co]
    print(f"channel {co}: amp {t1:+.3f} step {t2:.3f} rad  first taps {np.round(taps[0, co, :5], 3)}")

# %% [markdown]
# ## Savings across the whole network
#
# The default five-layer network against a plain CNN with the same shapes.

# %%
cmp = compare_parameters(ModelConfig())
print("cosine backbone:", cmp["backbone_total"])
print("plain CNN:      ", cmp["plain-cnn"]["total"])
print(f"reduction:       {cmp['reduction_pct']:.2f}%")
