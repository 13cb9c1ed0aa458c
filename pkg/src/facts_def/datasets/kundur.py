# Two-area, four-machine benchmark (Kundur, Example 12.6) on a 100 MVA base.
#
# Lines: r = 0.0001, x = 0.001, b = 0.00175 pu/km on 100 MVA / 230 kV; the
# values below are per-km data times the line length.  Transformers: j0.15 pu
# on 900 MVA.  Generator dynamic data are on the 900 MVA machine base.
# The tie corridor 7-8-9 is a double circuit; circuit "b" between 8 and 9 is
# the one that receives the series compensator in the case studies.


def load():
    return {
        'base_mva': 100.0,
        'f': 60.0,

        'buses': [
            ['id', 'kind', 'base_kv', 'V_set', 'angle_set'],
            [1,     'PV',    20,       1.03,    0.0],
            [2,     'PV',    20,       1.01,    0.0],
            [3,     'slack', 20,       1.03,    -6.8],
            [4,     'PV',    20,       1.01,    0.0],
            [5,     'PQ',    230,      1.0,     0.0],
            [6,     'PQ',    230,      1.0,     0.0],
            [7,     'PQ',    230,      1.0,     0.0],
            [8,     'PQ',    230,      1.0,     0.0],
            [9,     'PQ',    230,      1.0,     0.0],
            [10,    'PQ',    230,      1.0,     0.0],
            [11,    'PQ',    230,      1.0,     0.0],
        ],

        # R, X, B are totals in pu on the system base; B is the full charging.
        'branches': [
            ['name',    'from', 'to', 'R',      'X',        'B',       'kind'],
            ['L5-6',    5,      6,    0.0025,   0.025,      0.04375,   'line'],
            ['L6-7',    6,      7,    0.001,    0.01,       0.0175,    'line'],
            ['L7-8a',   7,      8,    0.011,    0.11,       0.1925,    'line'],
            ['L7-8b',   7,      8,    0.011,    0.11,       0.1925,    'line'],
            ['L8-9a',   8,      9,    0.011,    0.11,       0.1925,    'line'],
            ['L8-9b',   8,      9,    0.011,    0.11,       0.1925,    'line'],
            ['L9-10',   9,      10,   0.001,    0.01,       0.0175,    'line'],
            ['L10-11',  10,     11,   0.0025,   0.025,      0.04375,   'line'],
            ['T1-5',    1,      5,    0.0,      0.15 / 9,   0.0,       'transformer'],
            ['T2-6',    2,      6,    0.0,      0.15 / 9,   0.0,       'transformer'],
            ['T3-11',   3,      11,   0.0,      0.15 / 9,   0.0,       'transformer'],
            ['T4-10',   4,      10,   0.0,      0.15 / 9,   0.0,       'transformer'],
        ],

        # P in MW; H (s), D (pu torque / pu speed) and X_d_t on S_n.
        'generators': [
            ['name', 'bus', 'S_n', 'P',   'H',   'D',  'X_d_t'],
            ['G1',   1,     900,   700,   6.5,   4.0,  0.3],
            ['G2',   2,     900,   700,   6.5,   4.0,  0.3],
            ['G3',   3,     900,   719,   6.175, 4.0,  0.3],
            ['G4',   4,     900,   700,   6.175, 4.0,  0.3],
        ],

        # MW / Mvar
        'loads': [
            ['name', 'bus', 'P',  'Q'],
            ['LD7',  7,     967,  100],
            ['LD9',  9,     1767, 100],
        ],

        # Mvar at 1 pu (capacitive > 0)
        'shunts': [
            ['name', 'bus', 'Q'],
            ['C7',   7,     200],
            ['C9',   9,     350],
        ],
    }
