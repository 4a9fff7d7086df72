# %% [markdown]
# # Parameter and MAC profiles
#
# Bundled layer graphs are profiled in closed form. For the toy model the
# closed form is cross-checked by executing every layer under the counter.

# %%
from lightjdt.cli import SWEEP_RESOLUTIONS
from lightjdt.graphs import load_bundled
from lightjdt.profiler import ProfileReport, analytic_profile, instrumented_profile, reduction_report, resolution_sweep

graph, name, shape = load_bundled("toy_model")
report = analytic_profile(graph, shape)
print(report.to_table())
print("executed MACs equal closed form:", sum(instrumented_profile(graph, shape)) == report.total_macs)

# %% [markdown]
# Group shares for the full-scale proposed model at 800x1333.

# %%
graph, name, shape = load_bundled("proposed_model")
for group, (p, m) in analytic_profile(graph, (3, 800, 1333)).shares().items():
    print(f"{group:10s} params {p:6.2f}%  MACs {m:6.2f}%")

# %% [markdown]
# Published whole-model totals, reduced with the same report code.

# %%
base = ProfileReport.from_totals(46.87e6, 215.23e9, {"encoder": (0, 100.49e9)})
prop = ProfileReport.from_totals(19.34e6, 45.80e9, {"encoder": (0, 13.30e9)})
r = reduction_report(base, prop)
print(f"params -{r['params']:.2f}%  MACs -{r['macs']:.2f}%  encoder MACs -{r['groups']['encoder']['macs']:.2f}%")

# %% [markdown]
# Resolution sweep: the pyramid transformer backbone against ResNet-50.

# %%
pvt = resolution_sweep(load_bundled("pvt_v2_b1")[0], SWEEP_RESOLUTIONS)
res = resolution_sweep(load_bundled("resnet50")[0], SWEEP_RESOLUTIONS)
for (h, w, a), (_, _, b) in zip(pvt, res):
    print(f"{h:4d}x{w:<5d} pvt {a / 1e9:6.2f} G  resnet {b / 1e9:6.2f} G  ratio {a / b:.3f}")
