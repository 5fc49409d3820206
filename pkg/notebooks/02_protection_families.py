"""
Three protection families side by side
======================================

k-anonymity, perturbation and copula synthesis at one setting each, with the
Fellegi-Sunter baseline, distance diagnostics and the feature attribution of
the shared latent space.
"""

# %%
from linkaudit.attribution import feature_contribution
from linkaudit.baselines import encoded_pair, fs_assess, fs_fit, neighbours, dcr, rce, rce_null
from linkaudit.config import load_config
from linkaudit.evaluation import metrics, run_pipeline
from linkaudit.grid import apply_protection
from linkaudit.simulator import generate

cfg = load_config(overrides={"data": {"n_records": 3000}})
dor = generate(cfg.sim_config())
pipe = cfg.pipeline(seed=cfg.seed)

# %%
rows = []
for family, level in (("A", 10), ("B", "medium"), ("C", 0.8)):
    dpr, gt, gmap = apply_protection(dor, family, level, cfg.seed, cfg)
    view = gmap.qi_view(dor) if gmap is not None else dor
    rep, _, _ = run_pipeline(view, dpr, pipe, gt)
    m = metrics(rep, cfg.tau)
    fs = fs_assess(fs_fit(dor, dpr, pipe.scheme, gt, generalization=gmap), dor, dpr, pipe.scheme)
    xb, xa = encoded_pair(dpr, dor)
    nb = neighbours(xb, xa)
    rows.append((family, level, m.cvpl_lr, m.precision_at_1, fs.linkage_rate,
                 fs.precision_at_1(gt), dcr(xb, xa, nb).mean, rce(xb, xa, gt, nb),
                 rce_null(xb, xa, gt, cfg.seed, nb)))

print("fam level   CVPL-LR  P@1    FS-LR  FS-P@1  DCR    RCE    RCE-null")
for r in rows:
    print("{:3} {:7} {:.3f}    {:.3f}  {:.3f}  {:.3f}   {:.3f}  {:.3f}  {:.4f}".format(*r))

# %% [markdown]
# FS links almost every record at its neutral cut, while CVPL-LR stays well
# below that.  Synthesis keeps records existentially linkable even when the
# top-ranked candidate is almost never the source row.

# %%
dpr, _, _ = apply_protection(dor, "B", "medium", cfg.seed, cfg)
_, enc, proj = run_pipeline(dor, dpr, pipe)
attr = feature_contribution(proj, enc)
print("QI share     ", round(attr.category["QI"], 3))
print("non-QI share ", round(attr.category["non-QI"], 3))
for name, share in sorted(attr.attributes.items(), key=lambda kv: -kv[1]):
    print(f"  {name:16s} {share:.3f}")
