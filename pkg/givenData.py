# Bundled scenarios, usable in place of a config path (python main.py loop dirichlet).
# Each entry has the section layout of a config file; missing keys take the defaults.

# Dirichlet problem on (0, 1): a changes sign three times, b = 1, f = s^0.5, g = s^2.
# Positivity balls are found by search when left out.
dirichlet = {
    "domain": {"dim": 1, "n": 200, "extent": [[0.0, 1.0]], "bc": "dirichlet"},
    "weights": {"a_expr": "sin(3*3.141592653589793*x)", "b_expr": "1"},
    "nonlinearity": {"f_family": "pure_power", "q": 0.5, "g_family": "pure_power", "p": 2.0},
    "continuation": {"eps_schedule": [1e-1, 1e-2, 1e-3, 1e-4], "ds0": 1e-3, "ds_max": 0.05},
}

# Neumann problem with negative integrals of a and b; the branch leaving
# lambda = 0 is subcritical.
neumann = {
    "domain": {"dim": 1, "n": 200, "extent": [[0.0, 1.0]], "bc": "neumann"},
    "weights": {"a_expr": "cos(3.141592653589793*x) - 0.2", "b_expr": "cos(3.141592653589793*x) - 0.1"},
    "nonlinearity": {"f_family": "pure_power", "q": 0.5, "g_family": "pure_power", "p": 2.0},
    "continuation": {"eps_schedule": [1e-2, 1e-3, 1e-4], "ds0": 1e-3, "ds_max": 1e-3},
}

# Near-linear concave part: every solution off the origin is expected to be strictly positive.
positive = {
    "domain": {"dim": 1, "n": 200, "extent": [[0.0, 1.0]], "bc": "dirichlet"},
    "weights": {"a_expr": "sin(3*3.141592653589793*x)", "b_expr": "1"},
    "nonlinearity": {"f_family": "pure_power", "q": 0.9, "g_family": "pure_power", "p": 2.0},
    "analysis": {"q_grid": [0.5, 0.7, 0.9, 0.95], "pos_tol": 1e-8},
}

# b changes sign: {b < 0} is two boundary strips where the comparison supersolution is built.
sign_changing_b = {
    "domain": {"dim": 1, "n": 199, "extent": [[0.0, 1.0]], "bc": "dirichlet"},
    "weights": {"a_expr": "sin(3*3.141592653589793*x)", "b_expr": "x*(1-x) - 3/16",
                "pos_ball": [0.27, 0.32], "neg_ball": [0.4, 0.6], "hb_gamma": 1.0},
    "nonlinearity": {"f_family": "pure_power", "q": 0.5, "g_family": "pure_power", "p": 2.0},
}

scenarios = {
    "dirichlet": dirichlet,
    "neumann": neumann,
    "positive": positive,
    "sign_changing_b": sign_changing_b,
}
