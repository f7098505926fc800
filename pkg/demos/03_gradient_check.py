"""Compare the autodiff gradients of every model's training objective with finite differences."""
from netcate.gradcheck import check_models

for r in check_models(seed=0, n=20, K=3, d=5):
    print(f"{r.name:12s} worst relative error {r.max_rel_error:.2e} "
          f"at {r.worst_param}{list(r.worst_index)} over {r.n_checked} entries")
