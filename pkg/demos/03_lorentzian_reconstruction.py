# # From chi(u) back to the work PDF
#
# The characteristic function is windowed by exp(-gamma |u|) and inverted by an
# FFT. Each delta atom becomes a Lorentzian of half-width gamma whose height
# times pi gamma is the atom weight.

import numpy as np

from qdfr import oracle, proto, spectral

p = proto.quench_protocol()
fwd, _ = oracle.joint_pdfs(p)
tpl = fwd.select(0, 0)

for gamma in (0.2, 0.05, 0.02):
    grid = spectral.plan_ugrid(spectral.protocol_work_bound(p), gamma)
    pdf = spectral.reconstruct_pdf(spectral.sample_chi(tpl, grid), gamma)
    got = spectral.extract_atoms(pdf, template=tpl)
    err = max(abs(a.weight / t.weight - 1) for a, t in zip(got, tpl.atoms))
    print(f"gamma={gamma:<5} n={grid.n:<5} integral={pdf.integral():.5f} worst weight error={err:.2e}")

# %% without a template the peaks are searched for

pdf = spectral.reconstruct_pdf(spectral.sample_chi(fwd, spectral.plan_ugrid(4.0, 0.05)), 0.05)
for a in spectral.extract_atoms(pdf):
    print(f"peak at W={a.w:+.4f} weight={a.weight:.5f}")

# %% gamma = 0: a short grid and least squares at the known locations is exact

grid = spectral.fixed_ugrid(10.0, 64)
exact = spectral.reconstruct_pdf(spectral.sample_chi(tpl, grid), 0.0, template=tpl)
print(np.abs(exact.weights() - tpl.weights()).max())
