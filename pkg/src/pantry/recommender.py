"""Recipe recommendation from detected ingredients.

A recipe matrix holds one row per recipe, stored as an ``int`` bitset over
the ingredient columns (bit ``j`` set iff column ``j`` is required). Two
query modes exist:

* ``exact``: the recipe's required set equals the detected set.
* ``subset``: the recipe's required set is a nonempty subset of the detected set.

Results are ranked by required-set size (largest first), then recipe name.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from pantry.errors import ArgumentError, ValidationError

MODES = ("exact", "subset")
NUM_RECIPES = 19
NUM_INGREDIENTS = 32

CANONICAL_RECIPES = (
    "Burger", "Chicken Fry", "Chicken Wings", "Chocolate Milkshake", "Chotpoti", "Donut",
    "French Fries", "Fried Rice", "Hot Dogs", "Lasagna", "Nachos", "Noodles", "Pasta", "Pizza",
    "Potato Wedges", "Roll", "Sandwich", "Shawarma", "Subway",
)

# Constraints every canonical matrix must satisfy.
EGG_RECIPES = frozenset({"Chotpoti", "Fried Rice", "Noodles"})
CHICKEN_RECIPES = frozenset({"Chicken Fry", "Chicken Wings", "Fried Rice", "Noodles", "Pasta", "Roll",
                             "Sandwich", "Shawarma", "Subway"})
EXAMPLE_QUERIES = (
    (("Chicken", "Egg", "Rice"), "exact", ("Fried Rice",)),
    (("Chickpea", "Egg", "Potato"), "subset", ("Chotpoti", "French Fries", "Potato Wedges")),
)


def _key(name: str) -> str:
    return " ".join(name.split()).casefold()


@dataclass(frozen=True)
class RecipeMatrix:
    """Immutable recipe x ingredient incidence matrix."""

    recipes: tuple[str, ...]
    ingredients: tuple[str, ...]
    rows: tuple[int, ...]
    _columns: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "recipes", tuple(self.recipes))
        object.__setattr__(self, "ingredients", tuple(self.ingredients))
        object.__setattr__(self, "rows", tuple(int(r) for r in self.rows))
        if len(self.rows) != len(self.recipes):
            raise ValidationError(f"{len(self.recipes)} recipe names but {len(self.rows)} rows")
        _require_unique(self.recipes, "recipe")
        _require_unique(self.ingredients, "ingredient")
        width = len(self.ingredients)
        for name, bits in zip(self.recipes, self.rows):
            if bits < 0 or bits >> width:
                raise ValidationError(f"row {name!r} has bits outside {width} columns")
            if bits == 0:
                raise ValidationError(f"recipe {name!r} requires no ingredients")
        object.__setattr__(self, "_columns", {_key(n): j for j, n in enumerate(self.ingredients)})

    @classmethod
    def from_sets(cls, ingredients: Sequence[str], recipes: dict[str, Iterable[str]]) -> "RecipeMatrix":
        """Build from ``{recipe: required ingredient names}``."""
        proto = cls((), ingredients, ())
        rows = [proto.mask(req) for req in recipes.values()]
        return cls(tuple(recipes), ingredients, rows)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.recipes), len(self.ingredients)

    def column(self, name: str) -> int:
        try:
            return self._columns[_key(name)]
        except KeyError:
            raise ArgumentError(f"unknown ingredient {name!r}") from None

    def mask(self, names: Iterable[str]) -> int:
        """Bitset of ``names``; raises ArgumentError listing every unknown name."""
        names = list(names)
        unknown = [n for n in names if _key(n) not in self._columns]
        if unknown:
            raise ArgumentError("unknown ingredient(s): " + ", ".join(repr(n) for n in unknown))
        bits = 0
        for n in names:
            bits |= 1 << self._columns[_key(n)]
        return bits

    def required(self, recipe_index: int) -> tuple[str, ...]:
        bits = self.rows[recipe_index]
        return tuple(n for j, n in enumerate(self.ingredients) if bits >> j & 1)

    def cell(self, recipe_index: int, column: int) -> int:
        return self.rows[recipe_index] >> column & 1

    def set_bits(self) -> int:
        return sum(bin(r).count("1") for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["recipe", *self.ingredients])
        for i, name in enumerate(self.recipes):
            writer.writerow([name, *(self.cell(i, j) for j in range(len(self.ingredients)))])
        return buf.getvalue()


def _require_unique(names: Sequence[str], what: str) -> None:
    seen: dict[str, int] = {}
    for i, n in enumerate(names):
        if not n.strip():
            raise ValidationError(f"{what} name at position {i + 1} is empty")
        k = _key(n)
        if k in seen:
            raise ValidationError(f"duplicate {what} name {n!r} (positions {seen[k] + 1} and {i + 1})")
        seen[k] = i


@dataclass(frozen=True)
class Recommendation:
    recipe: str
    required: tuple[str, ...]
    mode: str
    rank: int

    @property
    def rank_key(self) -> tuple[int, str]:
        return -len(self.required), self.recipe

    def to_dict(self) -> dict:
        return {"recipe": self.recipe, "required": list(self.required), "mode": self.mode, "rank": self.rank}


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ArgumentError(f"mode must be one of {MODES}, got {mode!r}")


def _ranked(matrix: RecipeMatrix, hits: list[int], mode: str) -> list[Recommendation]:
    hits.sort(key=lambda i: (-bin(matrix.rows[i]).count("1"), matrix.recipes[i]))
    return [Recommendation(matrix.recipes[i], matrix.required(i), mode, rank)
            for rank, i in enumerate(hits, start=1)]


def recommend(matrix: RecipeMatrix, detected: Iterable[str], mode: str = "subset") -> list[Recommendation]:
    """Recipes matching ``detected`` under ``mode``, best first."""
    _check_mode(mode)
    query = matrix.mask(detected)
    if query == 0:
        return []
    if mode == "exact":
        hits = [i for i, row in enumerate(matrix.rows) if row == query]
    else:
        hits = [i for i, row in enumerate(matrix.rows) if row & ~query == 0]
    return _ranked(matrix, hits, mode)


def brute_force_recommend(matrix: RecipeMatrix, detected: Iterable[str], mode: str = "subset") -> list[Recommendation]:
    """Reference implementation with explicit per-cell loops and Python sets."""
    _check_mode(mode)
    detected = list(detected)
    matrix.mask(detected)  # same unknown-name error as recommend
    wanted = set()
    for name in detected:
        for j, col in enumerate(matrix.ingredients):
            if _key(col) == _key(name):
                wanted.add(j)
    if not wanted:
        return []
    found = []
    for i, name in enumerate(matrix.recipes):
        needs = set()
        for j in range(len(matrix.ingredients)):
            if matrix.cell(i, j) == 1:
                needs.add(j)
        if mode == "exact":
            ok = needs == wanted
        else:
            ok = len(needs) > 0 and all(j in wanted for j in needs)
        if ok:
            found.append((len(needs), name, i))
    # selection sort on (size desc, name asc) to stay independent of _ranked
    out = []
    while found:
        best = found[0]
        for cand in found[1:]:
            if cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
                best = cand
        found.remove(best)
        i = best[2]
        required = tuple(matrix.ingredients[j] for j in range(len(matrix.ingredients)) if matrix.cell(i, j))
        out.append(Recommendation(best[1], required, mode, len(out) + 1))
    return out


def recipes_for_ingredient(matrix: RecipeMatrix, name: str) -> set[str]:
    j = matrix.column(name)
    return {r for i, r in enumerate(matrix.recipes) if matrix.cell(i, j)}


def recommendations_json(results: Sequence[Recommendation]) -> str:
    return json.dumps([r.to_dict() for r in results], indent=2)


@dataclass
class ValidationReport:
    checks: dict[str, bool]
    failures: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures

    def __str__(self) -> str:
        lines = [f"{'ok  ' if passed else 'FAIL'} {name}" for name, passed in self.checks.items()]
        return "\n".join(lines + [f"  - {f}" for f in self.failures])


def validate_matrix(matrix: RecipeMatrix) -> ValidationReport:
    """Check a matrix against the canonical shape and the known per-ingredient and query facts."""
    checks: dict[str, bool] = {}
    failures: list[str] = []

    def record(name: str, problem: str | None) -> None:
        checks[name] = problem is None
        if problem:
            failures.append(f"{name}: {problem}")

    shape = matrix.shape
    record("dimensions", None if shape == (NUM_RECIPES, NUM_INGREDIENTS)
           else f"expected {NUM_RECIPES}x{NUM_INGREDIENTS}, got {shape[0]}x{shape[1]}")
    missing = [r for r in CANONICAL_RECIPES if r not in matrix.recipes]
    record("recipes", None if not missing else "missing " + ", ".join(missing))
    empty = [r for i, r in enumerate(matrix.recipes) if matrix.rows[i] == 0]
    record("nonempty rows", None if not empty else "empty " + ", ".join(empty))

    for label, ingredient, expected in (("egg column", "Egg", EGG_RECIPES),
                                        ("chicken column", "Chicken", CHICKEN_RECIPES)):
        try:
            got = recipes_for_ingredient(matrix, ingredient)
        except ArgumentError as exc:
            record(label, str(exc))
            continue
        extra, absent = sorted(got - expected), sorted(expected - got)
        problem = "; ".join(p for p in (extra and f"unexpected {', '.join(extra)}",
                                        absent and f"missing {', '.join(absent)}") if p)
        record(label, problem or None)

    for query, mode, expected in EXAMPLE_QUERIES:
        label = f"{mode} query {{{', '.join(query)}}}"
        try:
            got = tuple(r.recipe for r in recommend(matrix, query, mode))
        except ArgumentError as exc:
            record(label, str(exc))
            continue
        record(label, None if got == expected else f"expected {list(expected)}, got {list(got)}")
    return ValidationReport(checks, failures)


def _parse(text: str, source: str) -> RecipeMatrix:
    lines = [(n, line) for n, line in enumerate(text.splitlines(), start=1)
             if line.strip() and not line.lstrip().startswith("#")]
    if not lines:
        raise ValidationError(f"{source}: no header row")
    parsed = [(n, row) for n, row in zip((n for n, _ in lines), csv.reader(line for _, line in lines))]
    header_line, header = parsed[0]
    ingredients = [h.strip() for h in header[1:]]
    if len(ingredients) != NUM_INGREDIENTS:
        raise ValidationError(f"{source}:{header_line}: expected {NUM_INGREDIENTS} ingredient columns, "
                              f"got {len(ingredients)}")
    try:
        _require_unique(ingredients, "ingredient")
    except ValidationError as exc:
        raise ValidationError(f"{source}:{header_line}: {exc}") from None
    recipes, rows = [], []
    for lineno, row in parsed[1:]:
        name = row[0].strip()
        if len(row) - 1 != NUM_INGREDIENTS:
            raise ValidationError(f"{source}:{lineno}: row {name!r} has {len(row) - 1} cells, "
                                  f"expected {NUM_INGREDIENTS}")
        bits = 0
        for col, cell in enumerate(row[1:], start=2):
            cell = cell.strip()
            if cell not in ("0", "1"):
                raise ValidationError(f"{source}:{lineno}: column {col} ({ingredients[col - 2]!r}) "
                                      f"has non-binary value {cell!r}")
            if cell == "1":
                bits |= 1 << (col - 2)
        if bits == 0:
            raise ValidationError(f"{source}:{lineno}: recipe {name!r} has no required ingredients")
        recipes.append(name)
        rows.append(bits)
    if len(recipes) != NUM_RECIPES:
        raise ValidationError(f"{source}: expected {NUM_RECIPES} recipe rows, got {len(recipes)}")
    try:
        return RecipeMatrix(recipes, ingredients, rows)
    except ValidationError as exc:
        raise ValidationError(f"{source}: {exc}") from None


def load_matrix(path=None, strict: bool = False) -> RecipeMatrix:
    """Load a recipe CSV (the bundled matrix when ``path`` is None).

    Lines starting with ``#`` are comments. After parsing, the matrix is run
    through :func:`validate_matrix`; failures are warnings, or a
    ValidationError when ``strict`` is set.
    """
    if path is None:
        text = resources.files("pantry").joinpath("data/recipes.csv").read_text(encoding="utf-8")
        source = "recipes.csv"
    else:
        text = Path(path).read_text(encoding="utf-8")
        source = str(path)
    matrix = _parse(text, source)
    report = validate_matrix(matrix)
    if not report.ok:
        message = f"{source}: " + "; ".join(report.failures)
        if strict:
            raise ValidationError(message)
        warnings.warn(message, stacklevel=2)
    return matrix
