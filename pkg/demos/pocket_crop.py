"""Cropping a large complex to a fixed token budget around its ligand."""

# %%
from coarsebind.complexmodel import SyntheticGenConfig, distance_matrix, generate_synthetic_complex
from coarsebind.pocket import apply_crop, context_size, crop, pocket_residues

c = generate_synthetic_complex(SyntheticGenConfig(n_ligand=24, n_protein=400, pocket_fraction=0.3, seed=7))
d = distance_matrix(c.coords)

# %% The wide first-pass pocket (22 A) is usually larger than the budget
wide = pocket_residues(d, c.is_ligand, 22.0)
print("tokens:", len(c), " wide pocket:", len(wide), " 15 A context:", context_size(d, c.is_ligand))

# %% Truncate to the residues nearest the ligand, or expand along the sequence when there is room
for budget in (64, 196, 300):
    pc = crop(c, budget, wide, d)
    kinds = {}
    for p in pc.provenance:
        kinds[p.value] = kinds.get(p.value, 0) + 1
    print(f"budget {budget}: kept {len(pc.kept_token_indices)}  {kinds}  over_budget={pc.over_budget}")

# %% The cropped complex keeps bonds and coordinates of the kept tokens
small = apply_crop(c, crop(c, 64, wide, d))
print(small.id, len(small), "tokens,", len(small.bonds), "ligand bonds")
