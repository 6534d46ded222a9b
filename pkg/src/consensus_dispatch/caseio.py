"""Case and irradiance input.

Two case formats are supported: a subset of MATPOWER `.m` files and a native JSON schema::

    {"name": ..., "base_mva": ..., "buses": [{"id": 1, "load": 0.2}],
     "generators": [{"bus": 1, "a": ..., "b": ..., "c": ..., "p_min": ..., "p_max": ...}],
     "branches": [[1, 2], ...]}

Native cases are already per-unit. MATPOWER MW quantities are divided by baseMVA at parse time and the
cost coefficients rescaled so the objective stays in $/h.
"""

import csv
import io
import json
import logging
import math
import re
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from .config import CaseFormat
from .errors import (
    CaseFormatError,
    DanglingReference,
    EmptyProfile,
    IrradianceError,
    IrradianceOutOfRange,
    MalformedMatrix,
    NegativeIrradiance,
    NegativeNominalLoad,
    NonMonotoneTime,
    UnsupportedCostModel,
)
from .models import Bus, CaseData, Generator, IrradianceProfile

logger = logging.getLogger(__name__)

# MATPOWER column indices (0-based)
BUS_I, PD = 0, 2
GEN_BUS, GEN_STATUS, PMAX, PMIN = 0, 7, 8, 9
F_BUS, T_BUS = 0, 1
MODEL, NCOST, COST = 0, 3, 4
POLYNOMIAL = 2


def _build_case(data: Dict) -> CaseData:
    try:
        return CaseData.from_dict(data)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise CaseFormatError(f"invalid case field {location}: {first['msg']}") from e


class CaseReader(ABC):
    """Turns case text into validated CaseData."""

    @abstractmethod
    def parse(self, text: str) -> CaseData:
        """
        Parse case text.
        Args:
            text (str): Full content of the case file.
        Returns:
            CaseData: The validated case.
        """
        pass

    def read(self, path: Path) -> CaseData:
        path = Path(path)
        case = self.parse(path.read_text(encoding="utf-8"))
        logger.info(
            "Read case %s from %s: %d buses, %d generators, %d branches",
            case.name,
            path,
            len(case.buses),
            len(case.generators),
            len(case.branches),
        )
        return case


_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.DOTALL)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")
_NAME_RE = re.compile(r"^\s*function\s+mpc\s*=\s*(\w+)", re.MULTILINE)


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


class MatpowerCaseReader(CaseReader):
    """Reads the `mpc.baseMVA`, `mpc.bus`, `mpc.gen`, `mpc.branch` and `mpc.gencost` fields of a MATPOWER case."""

    def _matrices(self, text: str) -> Dict[str, Tuple[int, List[Tuple[int, List[float]]]]]:
        """Return name -> (line of the opening bracket, [(line, row values)])."""
        matrices = {}
        for match in _MATRIX_RE.finditer(text):
            name = match.group(1)
            start_line = text.count("\n", 0, match.start()) + 1
            line = text.count("\n", 0, match.start(2)) + 1
            rows = []
            for chunk in re.split(r"([;\n])", match.group(2)):
                if chunk == "\n":
                    line += 1
                    continue
                if chunk == ";" or not chunk.strip():
                    continue
                values = []
                for column, token in enumerate(chunk.replace(",", " ").split(), start=1):
                    try:
                        values.append(float(token))
                    except ValueError:
                        raise MalformedMatrix(f"mpc.{name}: cannot read number {token!r}", line, column) from None
                rows.append((line, values))
            matrices[name] = (start_line, rows)
        return matrices

    @staticmethod
    def _require(matrices, name: str, min_columns: int) -> List[Tuple[int, List[float]]]:
        if name not in matrices:
            raise MalformedMatrix(f"mpc.{name} matrix is missing")
        _, rows = matrices[name]
        for line, values in rows:
            if len(values) < min_columns:
                raise MalformedMatrix(
                    f"mpc.{name} row has {len(values)} columns, need at least {min_columns}", line, len(values)
                )
        return rows

    @staticmethod
    def _cost(line: int, values: List[float], base: float) -> Tuple[float, float, float]:
        model = int(values[MODEL])
        if model != POLYNOMIAL:
            raise UnsupportedCostModel(f"gencost model {model} is not supported, only polynomial (2)", line, 1)
        ncost = int(values[NCOST])
        coefficients = values[COST : COST + ncost]
        if len(coefficients) != ncost:
            raise MalformedMatrix(f"gencost declares {ncost} coefficients, found {len(coefficients)}", line)
        if ncost > 3:
            raise UnsupportedCostModel(f"gencost polynomial of degree {ncost - 1} is not supported", line, NCOST + 1)
        a, b, c = ([0.0] * (3 - ncost) + list(coefficients)) if ncost else (0.0, 0.0, 0.0)
        return a * base * base, b * base, c

    def parse(self, text: str) -> CaseData:
        name_match = _NAME_RE.search(text)
        text = _strip_comments(text)
        base_match = _SCALAR_RE.search(text)
        base = float(base_match.group(1)) if base_match else 100.0
        matrices = self._matrices(text)

        bus_rows = self._require(matrices, "bus", PD + 1)
        gen_rows = self._require(matrices, "gen", PMIN + 1)
        branch_rows = self._require(matrices, "branch", T_BUS + 1)
        cost_rows = self._require(matrices, "gencost", COST)
        if len(cost_rows) < len(gen_rows):
            raise MalformedMatrix(f"mpc.gencost has {len(cost_rows)} rows for {len(gen_rows)} generators")

        buses = [{"id": int(v[BUS_I]), "load": v[PD] / base} for _, v in bus_rows]
        generators = []
        for (line, gen), (cost_line, cost) in zip(gen_rows, cost_rows):
            a, b, c = self._cost(cost_line, cost, base)
            if gen[GEN_STATUS] <= 0:
                logger.debug("Dropping out-of-service generator at bus %d (line %d)", int(gen[GEN_BUS]), line)
                continue
            generators.append(
                {"bus": int(gen[GEN_BUS]), "a": a, "b": b, "c": c, "p_min": gen[PMIN] / base, "p_max": gen[PMAX] / base}
            )
        branches = []
        seen = set()
        for _, v in branch_rows:
            f, t = int(v[F_BUS]), int(v[T_BUS])
            key = (min(f, t), max(f, t))
            if f == t or key in seen:
                continue
            seen.add(key)
            branches.append((f, t))

        data = {
            "name": name_match.group(1) if name_match else "matpower",
            "base_mva": base,
            "buses": buses,
            "generators": generators,
            "branches": branches,
        }
        return _build_case(data)


class NativeCaseReader(CaseReader):
    """Reads the native JSON schema."""

    def parse(self, text: str) -> CaseData:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise CaseFormatError(f"invalid JSON: {e.msg}", e.lineno, e.colno) from None
        if not isinstance(data, dict):
            raise CaseFormatError("native case must be a JSON object")
        return _build_case(data)


def parse_matpower_case(text: str) -> CaseData:
    return MatpowerCaseReader().parse(text)


def parse_native_case(json_text: str) -> CaseData:
    return NativeCaseReader().parse(json_text)


def serialize_native_case(case: CaseData) -> str:
    return json.dumps(case.to_dict(), indent=2) + "\n"


def detect_format(path: Path) -> CaseFormat:
    return CaseFormat.matpower if Path(path).suffix.lower() == ".m" else CaseFormat.native


def read_case(path: Path, fmt: Optional[CaseFormat] = None) -> CaseData:
    fmt = fmt or detect_format(path)
    reader = MatpowerCaseReader() if fmt == CaseFormat.matpower else NativeCaseReader()
    return reader.read(path)


def apply_demand_step(case: CaseData, irradiance_value: float, node: int, pv_capacity_factor: float = 1.0) -> float:
    """Net demand of bus `node` once rooftop PV sized at `pv_capacity_factor` × nominal load produces.

    The result may be negative (net export).
    """
    if not 0.0 <= irradiance_value <= 1.0:
        raise IrradianceOutOfRange(f"normalized irradiance {irradiance_value} is outside [0, 1]")
    bus = next((b for b in case.buses if b.id == node), None)
    if bus is None:
        raise DanglingReference(f"bus {node} does not exist in case {case.name!r}")
    if bus.load < 0.0 and pv_capacity_factor > 0.0:
        raise NegativeNominalLoad(f"bus {node} has negative nominal load {bus.load}; PV capacity is undefined")
    pv_capacity = pv_capacity_factor * bus.load
    return bus.load - irradiance_value * pv_capacity


def load_irradiance_csv(text: str) -> IrradianceProfile:
    """Read `time_s,irradiance` rows (header optional) and normalize by the largest value."""
    samples = []
    for row_number, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or not "".join(row).strip():
            continue
        if len(row) < 2:
            raise IrradianceError(f"row {row_number}: expected two columns time_s,irradiance")
        try:
            t, value = float(row[0]), float(row[1])
        except ValueError:
            if not samples and row_number == 1:
                continue
            raise IrradianceError(f"row {row_number}: cannot read {row!r}") from None
        if value < 0.0:
            raise NegativeIrradiance(f"row {row_number}: irradiance {value} is negative")
        if samples and t <= samples[-1][0]:
            raise NonMonotoneTime(f"row {row_number}: time {t} does not increase over {samples[-1][0]}")
        samples.append((t, value))
    if not samples:
        raise EmptyProfile("irradiance profile has no samples")
    peak = max(v for _, v in samples)
    if peak <= 0.0:
        raise EmptyProfile("irradiance profile is all zero; cannot normalize")
    return IrradianceProfile(samples=tuple((t, v / peak) for t, v in samples))


def synthetic_irradiance(duration_s: float, resolution_s: float = 10.0, seed: int = 0) -> IrradianceProfile:
    """Afternoon clear-sky decay with seeded passing clouds, normalized to a peak of 1."""
    rng = np.random.Generator(np.random.PCG64(seed))
    times = np.arange(0.0, duration_s + resolution_s / 2, resolution_s)
    clear_sky = np.cos(0.5 * math.pi * times / max(duration_s * 1.25, resolution_s)) ** 2
    clouds = np.ones_like(times)
    for _ in range(max(1, len(times) // 50)):
        center = rng.uniform(0.0, duration_s)
        width = rng.uniform(2.0, 20.0) * resolution_s
        depth = rng.uniform(0.2, 0.7)
        clouds *= 1.0 - depth * np.exp(-(((times - center) / width) ** 2))
    raw = np.clip(clear_sky * clouds, 0.0, None)
    raw /= raw.max()
    return IrradianceProfile(samples=tuple((float(t), float(v)) for t, v in zip(times, raw)))
