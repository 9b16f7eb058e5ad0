"""Hot inner loops: annealing sweeps, layout SGD, Prim MST, brute force."""
