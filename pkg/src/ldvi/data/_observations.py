"""Simulated observations for the time-series benchmarks.

Generated by tools/make_standin_data.py (fixed seeds documented there);
stand-ins for the observation records of the published benchmark tasks.
"""

import numpy as np

# Brownian random walk, innovation scale 0.1, observation scale 0.15, seed 11
BROWNIAN_OBSERVATIONS = np.array([
    0.13800666523448055,
    0.10442421906224607,
    0.1503267341885811,
    0.2685845022483273,
    0.2886238509046539,
    0.08329847074888223,
    0.2669728674674838,
    0.33609757386223116,
    0.22331134856919393,
    -0.05240499719420427,
    0.27842480135031006,
    0.2537658567018487,
    0.4494937561469975,
    0.07832809066635174,
    0.133863411226336,
    0.15369132253207565,
    0.10176549245751038,
    0.3605799156026424,
    0.40550674634040185,
    0.2840874708256281,
    0.5157189725267056,
    0.2797222114782076,
    0.29003821907942556,
    0.18913122860145282,
    0.08019154054079972,
    -0.34436123645249683,
    -0.09923456767282654,
    -0.22022773912351512,
    -0.7250484391312819,
    -0.4041723545571982,
])

# Euler-discretized Lorenz-63 x-coordinate plus unit observation noise, seed 13
LORENZ_OBSERVATIONS = np.array([
    3.006756559957423,
    -1.8803319101980338,
    2.2080540339755137,
    1.4034104663773892,
    2.767100759512663,
    1.9819301722357068,
    3.6059458693044446,
    2.0317554783490657,
    1.7494889444020036,
    3.1632267025000456,
    3.3916941736253308,
    3.0495807491748628,
    3.6878192045537106,
    5.278699591580685,
    5.998145898903543,
    5.660725399514519,
    6.789408014072001,
    6.507001534758509,
    11.309621460212533,
    10.875095926300034,
    14.02721582873273,
    14.752060172202993,
    17.857090130866542,
    18.775932511578773,
    18.37645310095993,
    19.56240523976964,
    16.11205417416122,
    16.171273581344046,
    10.323594919528773,
    8.495029180138598,
])
