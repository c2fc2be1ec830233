"""Built-in experiment presets, stored as config text so they parse through the same loader."""

PAPER_FIG1 = """\
[grid]
N = 50
dt = 1e-4
T = 12

[control]
expr = "1"

[problem]
kind = "simulate"
frames = 12
"""

PAPER_FIG3 = """\
[problem]
kind = "reach"
omega_bar0 = ["pi", "1.5*pi", "2*pi", "2.25*pi"]
resolution = 256
"""

PAPER_FIG4 = """\
[grid]
N = 50

[problem]
kind = "static"
targets = [
  [0.5, -0.25], [0.3, 0.3], [0.0, 0.0], [0.4, 0.2], [0.5, 0.0], [-0.5, -0.5],
  [-0.3, 0.2], [0.6, -0.6], [0.2, -0.5], [-0.7, -0.3], [-0.1, 0.3], [-0.1, -0.8],
]
tau = 1e-4
rho_lambda = 1e2
tol = 1e-8
"""

PAPER_FIG5 = """\
[grid]
N = 10
dt = 1e-4
T = 4

[params]
beta = "2-s"
gamma = "1e-6*(2-s)"

[problem]
kind = "dynamic"
target = [0.5, -0.25]
tau = 1e-4
alpha = 1e-4
tol = 1e-6
max_iter = 5000
frames = 8
"""

PRESETS = {
    "paper-fig1": PAPER_FIG1,
    "paper-fig3": PAPER_FIG3,
    "paper-fig4": PAPER_FIG4,
    "paper-fig5": PAPER_FIG5,
}
