"""Frozen oracle values; regenerate with `python tests/oracles.py`.

Projected-subgradient objectives after 1000000 steps on
the 25 instances of make_svm_instances()
(seed 20260801); generation took 43.4s.
"""

SVM_ORACLE_OBJECTIVES = [
    1.5483633284024685,
    0.47672598130178523,
    23.933021706334518,
    0.30730508425373915,
    6.469601782798083,
    78.75171198978292,
    2.0332336336561743,
    2.3922986616333506,
    0.5216072097761413,
    0.8832990503614172,
    8.518957667512739,
    94.60451513196426,
    2.2211479094762043,
    0.9435917170253781,
    68.76942685092531,
    1.3200062345330787,
    22.73175885631698,
    53.32740582354964,
    2.6825887457249644,
    12.008602596009409,
    10.52898874031311,
    0.2724809776674811,
    0.20076516999351085,
    1.3457494595866526,
    1.598246411371113,
]
