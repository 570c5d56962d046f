from scipy.special import ndtr

#: Optimal random-walk scale in units of ``1/sqrt(roughness)``.
ELL_OPT = 2.38

#: ``ELL_OPT**2 * Phi(-ELL_OPT / 2)``: the speed per unit ``tau`` of the parameter
#: component at the optimal scale, for a normal ``f`` (about 0.6629).
SPEED_CONSTANT = ELL_OPT**2 * float(ndtr(-ELL_OPT / 2.0))

#: Acceptance rate of update moves at the optimal scale (about 0.234).
OPTIMAL_UPDATE_RATE = 2.0 * float(ndtr(-ELL_OPT / 2.0))
