# utils.py
import hashlib
import json
import re
from typing import Any, Sequence

from pydantic import BaseModel

from .config import TRADING_YEAR
from .exceptions import InputError

# Observation counts for approximate calendar conversions
OBS_IN_MONTH = TRADING_YEAR // 12
OBS_IN_YEAR = TRADING_YEAR


def validate_theta(theta: float) -> float:
    theta = float(theta)
    if not 0.0 < theta < 1.0:
        raise InputError(f"Probability level must lie in (0, 1), got {theta}")
    return theta


def parse_period(period: str | int) -> int:
    """
    Converts a period string like '30d', '6m', '7y' into a number of observations.

    - 'd' = observations (trading days)
    - 'm' = months (21 observations per month)
    - 'y' = years (252 observations per year)

    Plain integers are returned unchanged.

    Raises:
        InputError: If the format is incorrect or contains unsupported units.
    """
    if isinstance(period, int):
        return period
    match = re.fullmatch(r"(\d+)([dmy]?)", period.strip().lower())
    if not match:
        raise InputError(f"Invalid period format: {period}")

    value, unit = match.groups()
    count = int(value)

    if unit in ("", "d"):
        return count
    elif unit == "m":
        return count * OBS_IN_MONTH
    return count * OBS_IN_YEAR


def parse_theta_list(text: str | Sequence[float]) -> list[float]:
    if isinstance(text, str):
        items = [item for item in re.split(r"[,\s]+", text.strip()) if item]
        if not items:
            raise InputError("Empty probability level list")
        try:
            values = [float(item) for item in items]
        except ValueError as exc:
            raise InputError(f"Invalid probability level list: {text}") from exc
    else:
        values = [float(v) for v in text]
    return [validate_theta(v) for v in values]


def theta_label(theta: float) -> str:
    return f"{theta:g}"


def stable_hash(payload: Any) -> str:
    """
    Short sha256 digest of a JSON-serializable payload or a Pydantic model.
    Keys are sorted so equal content always gives the same digest.
    """
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
