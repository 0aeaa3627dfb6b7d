"""Physical constants (exact SI values since the 2019 redefinition)."""

PLANCK = 6.62607015e-34  # J s
SPEED_OF_LIGHT = 299792458.0  # m/s


def photon_energy(wavelength_nm):
    """Energy of one photon at ``wavelength_nm`` in joules."""
    return PLANCK * SPEED_OF_LIGHT / (wavelength_nm * 1e-9)
