"""Reference values computed independently (40-digit mpmath or exact rationals) and frozen here.

Re-derivation is checked in test_oracles.py so a typo here cannot go unnoticed.
"""

# ln(1 / (1 + e^0)) = -ln 2
LOGSIGMOID_AT_0 = -0.6931471805599453094172321214581765680755
# ln(1 / (1 + e^2))
LOGSIGMOID_AT_2_NEG = -2.126928011042972496443726806358304431434
# 1.6733 * (e^-1 - 1)
SELU_AT_MINUS_1 = -1.057727331087825563274210075388827530503
TANH_AT_HALF = 0.4621171572600097585023184836436725487303

# Gamma-mean precision (a0 + 1/2) / (b0 + theta^2 / 2) with a0 = b0 = 1e-5, exact rationals
ARD_TAU_THETA_0 = 50001.0
ARD_TAU_THETA_1 = 1.0

# KL(N(1, 1) || N(0, 1)) = 1/2
KL_MU1_VAR1 = 0.5
