"""
Auditing one protected release
==============================

Simulate a marketing dataset, perturb it, and measure how many original
records still have a plausible match in the release.  Run top to bottom
(``python notebooks/01_audit_walkthrough.py``) or cell by cell in an editor
that understands ``# %%`` markers.
"""

# %%
import numpy as np

from linkaudit.evaluation import (PipelineConfig, calibrate_threshold, metrics, run_pipeline,
                                  similarity_distributions, worst_case_risk, integrated_risk)
from linkaudit.linkage import scheme_from_tokens
from linkaudit.protection import perturb
from linkaudit.simulator import SimConfig, generate

dor = generate(SimConfig(n_records=3000, seed=1))
print(len(dor), "records;", dor.schema.names)

# %% [markdown]
# Medium perturbation: ages move by up to 3 years, timestamps by up to a day,
# and 15% of categorical values are redrawn.  Rows stay aligned, so the
# ground truth is the identity pairing.

# %%
dpr, gt = perturb(dor, "medium", seed=2)
scheme = scheme_from_tokens(["age_bin:10", "region_level:1", "gender"])
rep, enc, proj = run_pipeline(dor, dpr, PipelineConfig(scheme), gt)
print(f"{enc.dim} encoded columns -> {proj.k} latent components")

# %%
for tau in (0.80, 0.90, 0.95):
    m = metrics(rep, tau)
    print(f"tau={tau:.2f}  CVPL-LR={m.cvpl_lr:.3f}  TLR={m.tlr:.3f}  FLR={m.flr:.4f}  "
          f"P@1={m.precision_at_1:.3f}")

# %% [markdown]
# Structural recall is well below 1: age noise crosses 10-year bin edges and
# redrawn gender or region values move true counterparts into other blocks.
# The decomposition separates that loss from similarity failures.

# %%
m = metrics(rep, 0.90)
print(f"r_block={m.r_block:.4f}  r_match={m.r_match:.4f}  r_total={m.r_total:.4f}")

# %%
dist = similarity_distributions(rep)
print("true pairs   median", np.median(dist.s_plus).round(3))
print("non-matches  median", np.median(dist.s_minus).round(3))
cal = calibrate_threshold(dist.s_minus, alpha=0.05,
                          mean_candidates=rep.block_summary["mean_candidates"])
print(f"calibrated tau={cal.tau:.2f}, pairwise exceedance {cal.exceedance:.4f}, "
      f"existential false-link rate {cal.existential:.3f}")

# %%
print("worst case over the sweep :", round(worst_case_risk(rep), 3))
print("integrated over the sweep :", round(integrated_risk(rep), 4))
