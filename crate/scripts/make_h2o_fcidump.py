"""Write the 9-orbital H2O/cc-pVDZ FCIDUMP used by the H2O configs (needs pyscf).

usage: python make_h2o_fcidump.py [output path]
"""
import sys

import numpy as np
from pyscf import ao2mo, fci, gto, scf
from pyscf.tools import fcidump

out = sys.argv[1] if len(sys.argv) > 1 else "h2o_ccpvdz_9orb.fcidump"
r, th = 0.9772, np.deg2rad(104.52)
mol = gto.M(
    atom=[
        ["O", (0, 0, 0)],
        ["H", (r * np.sin(th / 2), 0, r * np.cos(th / 2))],
        ["H", (-r * np.sin(th / 2), 0, r * np.cos(th / 2))],
    ],
    basis="cc-pvdz",
    unit="angstrom",
    symmetry=False,
)
mf = scf.RHF(mol).run(conv_tol=1e-12)
c = mf.mo_coeff[:, :9]
h1 = c.T @ mf.get_hcore() @ c
eri = ao2mo.kernel(mol, c)
fcidump.from_integrals(out, h1, eri, 9, 10, mol.energy_nuc(), ms=0, tol=1e-14)
e, _ = fci.direct_spin1.kernel(h1, eri, 9, 10, ecore=mol.energy_nuc())
print("RHF", mf.e_tot, "FCI(9 orbitals)", e)
