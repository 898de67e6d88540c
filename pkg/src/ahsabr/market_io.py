"""IR futures option quote ingestion and calibration-report persistence.

Quotes arrive in futures-price space (strike 99.50 means a 0.50% rate) and
are flipped into rate space before the five-quote set is assembled.  Reports
are versioned JSON documents with floats written at 17 significant digits so
the write/read round trip is lossless.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable

from .ah_engine import SabrParams
from .analytic_calib import CalibDiagnostics, CalibrationResult, QuoteSet
from .errors import MalformedRow, MissingStrike, SchemaMismatch

SCHEMA_VERSION = 1
QUOTE_HEADER = ["contract", "quote_date", "kind", "strike_price", "last"]


@dataclass(frozen=True)
class FuturesOptionQuote:
    """One exchange quote: option on the futures price."""

    contract: str
    quote_date: str
    kind: str  # 'C' or 'P' on the futures price
    strike_price: float  # futures price points
    last: float  # premium in price points

    def __post_init__(self):
        if self.kind not in ("C", "P"):
            raise ValueError(f"kind must be 'C' or 'P', got {self.kind!r}")
        if not 0.0 < self.strike_price < 200.0:
            raise ValueError(f"strike_price out of range: {self.strike_price}")
        if self.last < 0.0:
            raise ValueError(f"negative premium: {self.last}")


@dataclass(frozen=True)
class RateQuote:
    """The same quote in rate space: a call on price is a put on the rate."""

    contract: str
    quote_date: str
    kind_rate: str  # 'call' or 'put' on the rate
    strike_rate: float
    premium_rate: float


def to_rate_space(q: FuturesOptionQuote) -> RateQuote:
    """strike 100 - p maps price points to percent; premiums scale by 1/100."""
    return RateQuote(
        contract=q.contract,
        quote_date=q.quote_date,
        kind_rate="put" if q.kind == "C" else "call",
        strike_rate=(100.0 - q.strike_price) / 100.0,
        premium_rate=q.last / 100.0,
    )


def to_price_space(q: RateQuote) -> FuturesOptionQuote:
    """Exact inverse of to_rate_space."""
    return FuturesOptionQuote(
        contract=q.contract,
        quote_date=q.quote_date,
        kind="C" if q.kind_rate == "put" else "P",
        strike_price=100.0 - q.strike_rate * 100.0,
        last=q.premium_rate * 100.0,
    )


def parse_quotes(path) -> list[FuturesOptionQuote]:
    """Read the documented CSV format; malformed rows fail with their line."""
    quotes = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(1, "empty file") from None
        if [h.strip() for h in header] != QUOTE_HEADER:
            raise MalformedRow(1, f"expected header {','.join(QUOTE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 5:
                raise MalformedRow(lineno, f"expected 5 fields, got {len(row)}")
            contract, quote_date, kind, strike_s, last_s = (c.strip() for c in row)
            try:
                strike = float(strike_s)
                last = float(last_s)
            except ValueError as exc:
                raise MalformedRow(lineno, f"bad number: {exc}") from None
            try:
                quotes.append(
                    FuturesOptionQuote(contract, quote_date, kind, strike, last)
                )
            except ValueError as exc:
                raise MalformedRow(lineno, str(exc)) from None
    return quotes


def write_quotes(path, quotes: Iterable[FuturesOptionQuote]) -> None:
    """Emit the CSV format parse_quotes reads (LF endings, '.' decimals)."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(QUOTE_HEADER) + "\n")
        for q in quotes:
            fh.write(
                f"{q.contract},{q.quote_date},{q.kind},"
                f"{_fmt(q.strike_price)},{_fmt(q.last)}\n"
            )


def assemble_quote_set(
    quotes: list[RateQuote], F: float, T: float, grid_step: float,
    kappa_sigma: str = "total",
) -> QuoteSet:
    """Build the five-quote set from rate-space quotes around the forward.

    OTM puts supply the low side, OTM calls the high side; a missing side at
    a strike is completed by parity from the other kind.  Quotes match a
    target strike when within grid_step/10 of it.
    """
    h = grid_step
    tol = h / 10.0

    def find(target: float, kind: str):
        for q in quotes:
            if q.kind_rate == kind and abs(q.strike_rate - target) <= tol:
                return q
        return None

    def otm_price(target: float, kind: str) -> float:
        q = find(target, kind)
        if q is not None:
            return q.premium_rate
        other = find(target, "put" if kind == "call" else "call")
        if other is not None:
            intrinsic_gap = F - target  # call - put at this strike
            if kind == "call":
                return other.premium_rate + intrinsic_gap
            return other.premium_rate - intrinsic_gap
        raise MissingStrike(target)

    put_q = find(F, "put")
    call_q = find(F, "call")
    if put_q is not None and call_q is not None:
        atm = 0.5 * (put_q.premium_rate + call_q.premium_rate)  # straddle / 2
    elif put_q is not None:
        atm = put_q.premium_rate
    elif call_q is not None:
        atm = call_q.premium_rate
    else:
        raise MissingStrike(F)

    return QuoteSet(
        p_minus2=otm_price(F - 2.0 * h, "put"),
        p_minus1=otm_price(F - h, "put"),
        atm=atm,
        c_plus1=otm_price(F + h, "call"),
        c_plus2=otm_price(F + 2.0 * h, "call"),
        h_minus_nm1=h, h_plus_nm1=h, h_minus_n=h,
        h_plus_n=h, h_minus_np1=h, h_plus_np1=h,
        forward=F, expiry=T, kappa_sigma=kappa_sigma,
    )


@dataclass(frozen=True)
class CalibrationReport:
    """Everything a calibration run produced, in serializable form."""

    params: SabrParams
    diagnostics: CalibDiagnostics
    quotes: QuoteSet
    grid: dict  # {lo, hi, count, forward}
    vol_curve: list  # [{strike, normal_vol_bp}]
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_result(cls, result: CalibrationResult, quotes, grid, vol_curve,
                    metadata=None):
        return cls(
            params=result.params, diagnostics=result.diagnostics,
            quotes=quotes, grid=dict(grid), vol_curve=list(vol_curve),
            metadata=dict(metadata or {}),
        )


def _fmt(x: float) -> str:
    """17-significant-digit decimal; lossless for doubles."""
    return format(float(x), ".17g")


def _to_json(obj, indent: int = 0) -> str:
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f'{inner}"{key}": {_to_json(val, indent + 1)}'
            for key, val in obj.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{inner}{_to_json(val, indent + 1)}" for val in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite number {obj} cannot be serialized")
        return _fmt(obj)
    if isinstance(obj, str):
        import json

        return json.dumps(obj)
    if obj is None:
        return "null"
    raise TypeError(f"cannot serialize {type(obj)!r}")


def _check_finite(obj, path="report"):
    if isinstance(obj, dict):
        for key, val in obj.items():
            _check_finite(val, f"{path}.{key}")
    elif isinstance(obj, (list, tuple)):
        for i, val in enumerate(obj):
            _check_finite(val, f"{path}[{i}]")
    elif isinstance(obj, float) and not math.isfinite(obj):
        raise ValueError(f"non-finite value at {path}")


def report_to_dict(report: CalibrationReport) -> dict:
    p = report.params
    doc = {
        "schema_version": SCHEMA_VERSION,
        "params": {
            "alpha": p.alpha, "beta": p.beta, "rho": p.rho,
            "nu": p.nu, "shift": p.shift,
        },
        "diagnostics": asdict(report.diagnostics),
        "quotes": asdict(report.quotes),
        "grid": dict(report.grid),
        "vol_curve": [dict(v) for v in report.vol_curve],
    }
    if report.metadata:
        doc["metadata"] = dict(report.metadata)
    return doc


def write_report(report: CalibrationReport, path) -> None:
    doc = report_to_dict(report)
    _check_finite(doc)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(_to_json(doc) + "\n")


def read_report(path) -> CalibrationReport:
    import json

    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaMismatch(f"not a JSON document: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(
            f"unsupported schema_version {doc.get('schema_version')!r}"
        )
    try:
        params = SabrParams(**doc["params"])
        diagnostics = CalibDiagnostics(**doc["diagnostics"])
        quotes = QuoteSet(**doc["quotes"])
        return CalibrationReport(
            params=params, diagnostics=diagnostics, quotes=quotes,
            grid=doc["grid"], vol_curve=doc["vol_curve"],
            metadata=doc.get("metadata", {}),
        )
    except (KeyError, TypeError) as exc:
        raise SchemaMismatch(f"malformed report document: {exc}") from None
