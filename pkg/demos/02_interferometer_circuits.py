# # Ancilla interferometry for the characteristic functions
#
# Each u sample is one density-matrix run of a small register: an ancilla in
# |+>, the system, and memory qubits written by an M-CNOT. The ancilla
# coherence after the controlled phase gates is chi(u) / p.

import numpy as np

from qdfr import circuits, oracle, proto

p = proto.quench_protocol()
b = proto.build_backward(p)

res = circuits.run_forward_mismatch(p, 1.3)
for key in sorted(res.outcome_probs):
    print("k,l =", key, "p =", round(res.outcome_probs[key], 6), "chi =", np.round(res.chi(key), 6))

# %% the joint probability circuit gives p(k, l) and with it I(k, l)

joint = circuits.run_joint_prob(p)
print(joint)
print(circuits.information_from_joint(joint))

# %% circuits against the trace formulas over a 64 point grid

u = np.linspace(-8, 8, 64)
dev = 0.0
for (k, l), v in circuits.forward_chi_samples(p, u).items():
    dev = max(dev, np.max(np.abs(v - oracle.chi_forward_trace(p, k, l, u))))
for (k, l), v in circuits.backward_chi_samples(p, b, u).items():
    dev = max(dev, np.max(np.abs(v - oracle.chi_backward_trace(b, l, k, u))))
print("max circuit/oracle deviation", dev)

# %% a finite number of shots per u point

noisy = circuits.sample_shots(res, 2000, np.random.default_rng(0))
print({k: np.round(noisy.chi(k), 3) for k in sorted(noisy.outcome_probs)})
