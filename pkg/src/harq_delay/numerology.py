"""5G NR numerology: subcarrier spacing and slot timing per mu."""
from dataclasses import dataclass

SYMBOLS_PER_SLOT = 14


@dataclass(frozen=True)
class Numerology:
    mu: int
    subcarrier_spacing_khz: float
    slot_duration_us: float
    slots_per_subframe: int
    symbol_duration_us: float
    data_supported: bool


NUMEROLOGIES = {
    mu: Numerology(
        mu=mu,
        subcarrier_spacing_khz=15.0 * 2**mu,
        slot_duration_us=1000.0 / 2**mu,
        slots_per_subframe=2**mu,
        symbol_duration_us=1000.0 / 2**mu / SYMBOLS_PER_SLOT,
        data_supported=mu <= 3,
    )
    for mu in range(5)
}


def numerology(mu):
    try:
        return NUMEROLOGIES[mu]
    except KeyError:
        raise ValueError(f"numerology mu must be one of 0..4, got {mu!r}") from None


def slot_duration(mu):
    """Slot duration in seconds for numerology ``mu``."""
    return numerology(mu).slot_duration_us * 1e-6
