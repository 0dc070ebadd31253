import numpy as np
from ldplab import Lab, build_lattice_1d
from ldplab.asymptotics import varadhan_kernel
from ldplab.utils import time_grid

lab = Lab(build_lattice_1d(256), progress_bar=True)

x, y = lab.vertex(0.25), lab.vertex(0.75)
print("d(x, y) =", lab.table.bracket(x, y))

probe = varadhan_kernel(lab.cache, x, y, time_grid(2e-3, 2e-2, 12), lab.table)
print("t log p_t(x, y) ->", probe.limit, "target", probe.target)
for t, v in zip(probe.t, probe.values):
    print(f"{t:.4g} {v:.6f}")

np.savetxt("sample.dat", np.column_stack([probe.t, probe.values]), header="t t_log_p")
