"""Bismut-Elworthy-Li gradient of x -> E phi(X_1^x) for Brownian motion and a mollified singular drift."""
import numpy as np

from zvonkin_lab import coefficients as co
from zvonkin_lab.sde import bel_gradient, simulate

x0 = np.array([0.4, -0.3])

ens = simulate(co.family("A"), x0, T=1.0, Nt=50, M=100_000, seed=1, with_flow=True)
rep = bel_gradient(ens, lambda x: x[:, 0])
print("family A, phi = x1:      estimate", rep.estimate, "+-", rep.se, "(exact [1, 0])")

rep = bel_gradient(ens, lambda x: np.sin(x[:, 0]))
print("family A, phi = sin(x1): estimate", rep.estimate, "exact",
      np.round([np.exp(-0.5) * np.cos(x0[0]), 0.0], 6))

cf = co.family("C", eps=0.1)
ens = simulate(cf, x0, T=1.0, Nt=50, M=50_000, seed=2, with_flow=True)
rep = bel_gradient(ens, lambda x: np.sin(x[:, 0]), fd_delta=0.01)
print("family C (eps = 0.1):    BEL", rep.estimate, "finite difference", rep.extra["fd_estimate"])
