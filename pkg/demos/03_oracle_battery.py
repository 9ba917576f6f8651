# Walkthrough: the oracle battery and a deliberate fault.
#
# Each check compares the library against an independent, slower
# reference. Scaling the filter's step constant by one half makes the filter
# under-count costs, and the ledger check catches it.

from adds.oracles import run_battery

for res in run_battery(seed=0, checks=["clopper_pearson", "phi_inv", "step_forms", "sensitivity"]):
    print(res.line())

print("\nwith the step constant halved:")
for res in run_battery(seed=0, checks=["filter_ledger"], fault="c_t"):
    print(res.line())
