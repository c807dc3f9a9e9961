from . import npa_relax, solver, bff_entropy
