"""Walk through the four synthetic Ponzi payout patterns and a normal contract."""
import numpy as np

from dspsd.dataio import SchemeKind, SyntheticParams, generate_recipe, generate_synthetic

for scheme in SchemeKind:
    params = SyntheticParams(contract_id="C", investors=[f"u{j}" for j in range(6)])
    events, accounts, labels = generate_synthetic(scheme, 6, seed=3, params=params)
    print(f"\n{scheme.value} (label {labels['C']})")
    for e in events:
        arrow = f"{e.src:>3} -> {e.dst:<3}"
        kind = "deposit" if e.dst == "C" else "payout "
        print(f"  t={e.timestamp:<3} {kind} {arrow} {e.value:8.4f}")
    ops = accounts[0].opcodes
    print(f"  {len(ops)} opcodes, first 12: {' '.join(ops[:12])}")

# the default recipe links 200 contracts through a shared pool of investors
ds = generate_recipe("default", seed=7)
contracts = [a for a in ds.accounts if a.is_contract]
deg = np.bincount([0 if a.is_contract else 1 for a in ds.accounts])
print(f"\ndefault recipe: {len(ds.events)} events, {deg[0]} contracts, {deg[1]} EOAs")
print("scheme counts:", ds.meta["scheme_counts"])
lengths = np.array([len(a.opcodes) for a in contracts])
print(f"opcode lengths: min {lengths.min()} mean {lengths.mean():.1f} max {lengths.max()}")
