"""Token-based deployment cost of running an arm on a prompt."""

import math
from decimal import Decimal
from dataclasses import dataclass, field

from ._validation import check_positive_float, check_positive_int
from .context import ArmId


class UnknownArmError(KeyError):
    pass


@dataclass(frozen=True)
class TokenPricing:
    """Dollars per input token and per output token."""

    input_price: float
    output_price: float

    def __post_init__(self):
        check_positive_float(self.input_price, "input_price", allow_zero=True)
        check_positive_float(self.output_price, "output_price", allow_zero=True)


# Azure per-token list prices.
PRICE_TABLE = {
    "gpt-3.5-turbo": TokenPricing(5e-7, 1.5e-6),
    "llama-3.3-70b": TokenPricing(7.1e-7, 7.1e-7),
    "ft-gpt-4o-med": TokenPricing(2.5e-7, 1e-5),
    "ft-gpt-4o-tele": TokenPricing(2.5e-7, 1e-5),
    "ft-gpt-4o-med-iii": TokenPricing(2.5e-7, 1e-5),
}


def lookup_pricing(name):
    try:
        return PRICE_TABLE[name]
    except KeyError:
        raise UnknownArmError(f"no built-in pricing for model {name!r}; "
                              f"known: {sorted(PRICE_TABLE)}") from None


PREDICTOR_KINDS = ("oracle_linear", "constant", "table")


@dataclass(frozen=True)
class OutputLengthPredictor:
    """Frozen estimate of how many tokens an arm will emit.

    ``oracle_linear`` uses per-arm ``(slope, intercept)`` pairs in
    ``coefficients``; ``constant`` returns ``value`` for every arm; ``table``
    returns a fixed per-arm count from ``table``.
    """

    kind: str
    value: int = 0
    coefficients: dict = field(default_factory=dict)
    table: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise ValueError(f"predictor kind must be one of {PREDICTOR_KINDS}, got {self.kind!r}")
        if self.kind == "constant":
            check_positive_int(self.value, "value", allow_zero=True)
        if self.kind == "table":
            for arm, count in self.table.items():
                check_positive_int(count, f"table[{arm}]", allow_zero=True)

    @classmethod
    def constant(cls, value):
        return cls("constant", value=value)

    @classmethod
    def linear(cls, coefficients):
        return cls("oracle_linear", coefficients={ArmId(*k): tuple(v) for k, v in coefficients.items()})

    @classmethod
    def from_table(cls, table):
        return cls("table", table={ArmId(*k): int(v) for k, v in table.items()})


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def predict_output_tokens(pred, arm, input_tokens):
    input_tokens = check_positive_int(input_tokens, "input_tokens", allow_zero=True)
    arm = ArmId(*arm)
    if pred.kind == "constant":
        return int(pred.value)
    lookup = pred.table if pred.kind == "table" else pred.coefficients
    if arm not in lookup:
        raise UnknownArmError(f"{pred.kind} predictor has no entry for arm {tuple(arm)}")
    if pred.kind == "table":
        return int(lookup[arm])
    slope, intercept = lookup[arm]
    return _round_half_up(max(0.0, slope * input_tokens + intercept))


def realized_cost(pricing, input_tokens, output_tokens):
    """Cost of a call with known token counts.

    Evaluated in decimal so that list prices such as 7.1e-7 give the double
    nearest the exact dollar amount.
    """
    input_tokens = check_positive_int(input_tokens, "input_tokens", allow_zero=True)
    output_tokens = check_positive_int(output_tokens, "output_tokens", allow_zero=True)
    total = (input_tokens * Decimal(repr(pricing.input_price))
             + output_tokens * Decimal(repr(pricing.output_price)))
    return float(total)


def predicted_cost(pricing, pred, arm, input_tokens):
    """Price of ``arm`` on a prompt of ``input_tokens`` tokens, output length predicted."""
    return realized_cost(pricing, input_tokens, predict_output_tokens(pred, arm, input_tokens))
