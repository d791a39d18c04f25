"""
cdbound - Counterdiabatic Driving Fidelity Bounds
Lower bounds on the ground-state fidelity of a CD-driven two-level system
coupled to a bosonic bath, with HEOM and pseudomode solvers to check them.
"""
