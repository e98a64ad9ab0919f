# # Exact work atoms of a quench with a noisy feedback controller
#
# A qubit starts thermal under H0 = -sigma_z at beta = 0.2, is driven, measured
# in the sigma_z basis, and a feedback quench k is applied. The controller picks
# k with probability p(k|l) given the outcome l.

import numpy as np

from qdfr import oracle, proto

p = proto.quench_protocol()
b = proto.build_backward(p)

print("p(l)        ", p.outcome_probs())
print("p(k)        ", p.branch_probs())
print("dF per k    ", p.free_energies())
print("p(k|l) [l,k]\n", p.mismatch)

# %% every forward atom and its backward partner

fwd, bwd = oracle.joint_pdfs(p, b)
print(oracle.atoms_to_csv(fwd))

# %% the detailed relation on each atom: P_F / P_B = exp(beta (W - dF) + I)

chk = oracle.qdfr_atom_check(fwd, bwd, p.beta)
for r in chk.ratios:
    print(r.labels, f"W={r.w:+.1f}", f"ratio={r.ratio:.6f}", f"predicted={r.predicted:.6f}")
print("max relative deviation", chk.max_rel_dev)

# %% averages and the second-law bound with information

rep = oracle.marginals_and_averages(fwd)
print("<W> =", rep.mean_w, " <dF> =", rep.mean_df, " <I> =", rep.mean_i)
print("beta(<W> - <dF>) + <I> =", p.beta * (rep.mean_w - rep.mean_df) + rep.mean_i, ">= 0")

# %% matching the mismatch angle to pi/4 erases the correlation entirely

print("I(k,l) at phi = pi/4\n", np.round(oracle.mutual_information_density(proto.quench_protocol(phi=np.pi / 4)), 15))
