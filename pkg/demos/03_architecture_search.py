# %% [markdown]
# # Greedy layer-by-layer search
#
# The search tunes one layer at a time: every candidate is scored with the
# other layers fixed, the best one is kept, and the search moves on. Here a
# recorded accuracy table stands in for training so the walk is instant.

# %%
from pathlib import Path

from coscov.search import MockOracle, SearchSpace, greedy_search, read_accuracy_table

tables = Path(__file__).resolve().parent.parent / "tests" / "data"
oracle = MockOracle(read_accuracy_table(tables / "table1.csv"), read_accuracy_table(tables / "table2.csv"))
space = SearchSpace(filter_candidates=oracle.candidates("filters"),
                    pool_candidates=oracle.candidates("pools"), runs=1)
result = greedy_search(space, oracle)

# %%
for stage in result.stages:
    print(stage.stage)
    for layer, (choice, acc) in enumerate(zip(stage.chosen, stage.best_accuracy), 1):
        print(f"  layer {layer}: {choice:>4}  ({acc})")

print("final filter lengths:", result.filter_lens)
print("final pools:         ", result.pools)

# %% [markdown]
# Swapping `oracle` for `training_measure(dataset, TrainConfig(...))` runs
# the same walk with real training, taking the best of `runs` seeds per cell.
