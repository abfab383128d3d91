# %% [markdown]
# # Memory and vector quantisation
#
# The extended model snaps layer-1 features to a learned codebook and
# threads a small memory vector through the network: writers update it
# after each layer and readers gate the next layer's input with it.

# %%
import numpy as np

from coscov.model import ModelConfig, build

model = build(ModelConfig(kind="vqccm", num_classes=4, memory_size=100, vq_k=256))
x = np.random.default_rng(0).uniform(-1, 1, (2, 1, 16000)).astype(np.float32)
out = model.forward(x, keep_activations=True)
print(" -> ".join(out.diagnostics["trace"]))

# %% [markdown]
# Codes used by this batch, and how far each write moved the memory.

# %%
idx = out.diagnostics["vq_indices"]
print("distinct codes:", len(np.unique(idx)), "of", model.codebook.size)
for i, upd in enumerate(out.diagnostics["memory_updates"], 1):
    print(f"write {i}: max |change| {np.abs(upd).max():.3f}")

# %% [markdown]
# Every hidden activation is a tanh output or a gated copy of one, so it
# stays inside (-1, 1); each write adds a tanh, so it moves memory by at most 1.

# %%
print("max |activation|:", max(float(np.abs(a).max()) for a in out.diagnostics["activations"]))
