"""Mutual attention between two contracts' opcode feature maps.

The compressed encoder stores trailing padding windows once with a count;
this script checks it against the plain convolution and shows how the
padding share grows with the maximum sequence length.
"""
import numpy as np

from dspsd.numerics import make_rng
from dspsd.opcode_embed import (OpcodeModel, control_logic_matrix, convolve_features, encode, mutual_attention,
                                pair_forward)

a = "CALLVALUE SLOAD PUSH1 ADD SSTORE SLOAD SHA3 SLOAD PUSH2 GAS CALL".split()
b = "CALLDATALOAD SHA3 SLOAD SUB SSTORE LOG3 CALLER ORIGIN EQ".split()

for max_len in (12, 40, 300):
    m = OpcodeModel.init([a, b], make_rng(0), dim=16, n_filters=8, width=2, max_len=max_len)
    Ca = convolve_features(control_logic_matrix(a, m.lexicon, max_len), m.filters, m.bias)
    Cb = convolve_features(control_logic_matrix(b, m.lexicon, max_len), m.filters, m.bias)
    a_b, a_a, D = mutual_attention(Ca, Cb, m.attn)
    res = pair_forward(encode(m, a), encode(m, b), m.attn)
    err = max(np.abs(res.v_u - Ca @ a_a).max(), np.abs(res.u_v - Cb @ a_b).max())
    pad = a_a[len(a) - 1:].sum()
    print(f"L_max={max_len:3d}  D {D.shape}  compressed vs full {err:.1e}  "
          f"attention mass on padding {pad:.3f}  score {res.score:+.5f}")

# the attentive matrix is not symmetric, so the two directions differ
m = OpcodeModel.init([a, b], make_rng(0), dim=16, n_filters=8, width=2, max_len=12)
ea, eb = encode(m, a), encode(m, b)
print(f"score(a, b) = {pair_forward(ea, eb, m.attn).score:+.10f}   score(b, a) = {pair_forward(eb, ea, m.attn).score:+.10f}")
