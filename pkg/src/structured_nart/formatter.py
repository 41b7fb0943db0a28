"""Number formatting for terminal tables."""


def format_number(value: int) -> str:
    """Format an integer with comma separators, e.g. ``"1,234"``."""
    return f"{value:,}"


def format_float(value: float, digits: int = 2) -> str:
    return f"{value:,.{digits}f}"


def format_ms(value: float) -> str:
    """Format a duration in milliseconds.

    Args:
        value: Milliseconds.

    Returns:
        Formatted string like ``"12.35 ms"``; sub-millisecond values keep
        three decimals.
    """
    digits = 3 if abs(value) < 1 else 2
    return f"{value:,.{digits}f} ms"


def format_percent(value: float | None) -> str:
    """Format a fraction in [0, 1] as a percentage; ``None`` renders as ``"-"``."""
    if value is None:
        return "-"
    return f"{value * 100:.1f}%"
