"""Exception types shared across the package."""


class AlignmentRankDeficient(Exception):
    """Pair channel cannot support signal alignment (pseudo-inverse residual too large)."""


class EnumerationOverflow(Exception):
    """Lattice enumeration exceeded the candidate cap even after radius back-off."""


class OracleTooLarge(Exception):
    """Problem instance exceeds the size guard of a brute-force test oracle."""
