from .mcs import McsEntry, McsTable, RE_PER_PRB_TTI, bits_per_prb, decodes, default_table, rate_bits_per_prb
from .propagation import antenna_gain_db, pathloss_db, pathloss_intercept_db
from .topology import (
    Cell,
    LinkQuality,
    RadioConfig,
    RadioModel,
    equal_area_radius,
    hex_site_layout,
    mbsfn_sinr_db,
    unicast_sinr_db,
)

__all__ = [
    "Cell", "LinkQuality", "McsEntry", "McsTable", "RE_PER_PRB_TTI", "RadioConfig", "RadioModel",
    "antenna_gain_db", "bits_per_prb", "decodes", "default_table", "equal_area_radius",
    "hex_site_layout", "mbsfn_sinr_db", "pathloss_db", "pathloss_intercept_db",
    "rate_bits_per_prb", "unicast_sinr_db",
]
