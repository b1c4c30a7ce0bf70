"""Grid-world PSO-MDP instances and model (de)serialization."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path


from .errors import InvalidSpec, ParseError, UnknownBuiltin
from .model import PsoMdp, validate

UP, DOWN, LEFT, RIGHT, NOP = range(5)
ACTION_NAMES = ("up", "down", "left", "right", "nop")
_MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}
_LATERAL = {UP: (LEFT, RIGHT), DOWN: (LEFT, RIGHT), LEFT: (UP, DOWN), RIGHT: (UP, DOWN)}

LAYOUT_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    """Grid world description. Cells are ``(row, col)`` with row 0 at the top."""

    width: int
    height: int
    obstacles: frozenset = frozenset()
    terminals: tuple = ()  # ((row, col, reward), ...)
    slip_stay: float = 0.0
    slip_lateral: float = 0.0
    step_reward: float = 0.0
    gamma: float = 0.95
    checkin_period: int = 1
    include_nop: bool = True
    start: tuple | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "obstacles",
                           frozenset(tuple(int(x) for x in c) for c in self.obstacles))
        object.__setattr__(self, "terminals",
                           tuple(sorted((int(r), int(c), float(v)) for r, c, v in self.terminals)))
        if self.start is not None:
            object.__setattr__(self, "start", tuple(int(x) for x in self.start))

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise InvalidSpec("InvalidSpec: grid dimensions must be positive")
        for p in (self.slip_stay, self.slip_lateral):
            if not 0.0 <= p <= 1.0:
                raise InvalidSpec(f"InvalidSpec: slip probability {p} outside [0, 1]")
        if self.slip_stay + 2 * self.slip_lateral > 1.0 + 1e-12:
            raise InvalidSpec("InvalidSpec: slip_stay + 2*slip_lateral exceeds 1")
        cells = list(self.obstacles) + [(r, c) for r, c, _ in self.terminals]
        for r, c in cells:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise InvalidSpec(f"InvalidSpec: cell {(r, c)} is outside the grid")
        term_cells = [(r, c) for r, c, _ in self.terminals]
        if len(set(term_cells)) != len(term_cells):
            raise InvalidSpec("InvalidSpec: duplicate terminal cell")
        if set(term_cells) & self.obstacles:
            raise InvalidSpec("InvalidSpec: terminals and obstacles overlap")
        if self.start is not None and (self.start in self.obstacles or not (
                0 <= self.start[0] < self.height and 0 <= self.start[1] < self.width)):
            raise InvalidSpec(f"InvalidSpec: start {self.start} is not a free cell")
        if not 0.0 <= self.gamma < 1.0 or self.checkin_period < 1:
            raise InvalidSpec("InvalidSpec: need gamma in [0, 1) and checkin_period >= 1")
        if len(self.free_cells()) == 0:
            raise InvalidSpec("InvalidSpec: grid has no free cells")

    @property
    def intended(self) -> float:
        return 1.0 - self.slip_stay - 2 * self.slip_lateral

    def free_cells(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(self.height) for c in range(self.width)
                if (r, c) not in self.obstacles]

    def cell_index(self) -> dict:
        return {cell: i for i, cell in enumerate(self.free_cells())}

    def start_state(self) -> int:
        return self.cell_index()[self.start] if self.start is not None else 0

    def to_dict(self) -> dict:
        d = {
            "width": self.width,
            "height": self.height,
            "obstacles": sorted([list(c) for c in self.obstacles]),
            "terminals": [list(t) for t in self.terminals],
            "slip_stay": self.slip_stay,
            "slip_lateral": self.slip_lateral,
            "step_reward": self.step_reward,
            "gamma": self.gamma,
            "checkin_period": self.checkin_period,
            "include_nop": self.include_nop,
        }
        if self.start is not None:
            d["start"] = list(self.start)
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        try:
            return cls(
                width=int(d["width"]),
                height=int(d["height"]),
                obstacles=frozenset(tuple(c) for c in d.get("obstacles", [])),
                terminals=tuple(tuple(t) for t in d.get("terminals", [])),
                slip_stay=float(d.get("slip_stay", 0.0)),
                slip_lateral=float(d.get("slip_lateral", 0.0)),
                step_reward=float(d.get("step_reward", 0.0)),
                gamma=float(d.get("gamma", 0.95)),
                checkin_period=int(d.get("checkin_period", 1)),
                include_nop=bool(d.get("include_nop", True)),
                start=tuple(d["start"]) if d.get("start") is not None else None,
                name=str(d.get("name", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"ParseError: bad grid spec field: {exc}") from None

    def with_params(self, **kw) -> "GridSpec":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def build_gridworld(spec: GridSpec) -> PsoMdp:
    """Grid world as a PSO-MDP: free cells plus one absorbing sink (the last state).

    Moves that would leave the grid or enter an obstacle keep the agent in
    place. Entering a terminal pays its reward; from a terminal every move
    leads to the zero-reward sink, while NOP stays put.
    """
    spec.validate()
    cells = spec.free_cells()
    index = spec.cell_index()
    terminal_reward = {(r, c): v for r, c, v in spec.terminals}
    S = len(cells) + 1
    sink = S - 1
    A = 5 if spec.include_nop else 4

    def dest(cell, move):
        dr, dc = _MOVES[move]
        r, c = cell[0] + dr, cell[1] + dc
        if 0 <= r < spec.height and 0 <= c < spec.width and (r, c) not in spec.obstacles:
            return (r, c)
        return cell

    transitions, rewards = [], []
    for cell in cells:
        s = index[cell]
        rows, rrow = [], []
        for a in range(A):
            if a == NOP:
                rows.append([[s, 1.0]])
                rrow.append(0.0)
                continue
            if cell in terminal_reward:
                rows.append([[sink, 1.0]])
                rrow.append(0.0)
                continue
            mass = {}
            outcomes = [(dest(cell, a), spec.intended), (cell, spec.slip_stay)]
            outcomes += [(dest(cell, lat), spec.slip_lateral) for lat in _LATERAL[a]]
            for target, p in outcomes:
                if p > 0.0:
                    mass[index[target]] = mass.get(index[target], 0.0) + p
            reward = spec.step_reward + sum(
                p * terminal_reward.get(cells[t], 0.0) for t, p in mass.items())
            rows.append([[t, p] for t, p in sorted(mass.items())])
            rrow.append(reward)
        transitions.append(rows)
        rewards.append(rrow)
    transitions.append([[[sink, 1.0]] for _ in range(A)])
    rewards.append([0.0] * A)

    raw = {
        "num_states": S,
        "num_actions": A,
        "gamma": spec.gamma,
        "checkin_period": spec.checkin_period,
        "nop_action": NOP if spec.include_nop else None,
        "transitions": transitions,
        "rewards": rewards,
    }
    meta = {"grid": spec.to_dict(), "start_state": spec.start_state(), "sink_state": sink}
    return validate(raw, meta=meta)


# ------------------------------------------------------------------ builtins

# '#' obstacle, '$' terminal (reward 1), 'S' start, '.' free
_BENCH_4x7 = (
    "..#...$",
    ".##.#.$",
    "....#..",
    "S.#....",
)
_BENCH_6x11 = (
    "....#.....$",
    ".##.#.##..$",
    "..#......#.",
    "..#.##.#.#.",
    "........##.",
    "S.#.#......",
)
# counterexample: obstacle ranks every third column, open except for the top and bottom rows
_COUNTEREXAMPLE_WIDTH = 14
_COUNTEREXAMPLE_HEIGHT = 6
_COUNTEREXAMPLE_RANKS = (1, 4, 7, 10)
_COUNTEREXAMPLE_GAPS = (1, 2, 3, 4)


def _from_ascii(rows, **kw) -> GridSpec:
    obstacles, terminals, start = set(), [], None
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch == "#":
                obstacles.add((r, c))
            elif ch == "$":
                terminals.append((r, c, 1.0))
            elif ch == "S":
                start = (r, c)
    return GridSpec(width=len(rows[0]), height=len(rows), obstacles=frozenset(obstacles),
                    terminals=tuple(terminals), start=start, **kw)


def _counterexample_spec(k=2, gamma=0.95) -> GridSpec:
    obstacles = {(r, c) for c in _COUNTEREXAMPLE_RANKS for r in range(_COUNTEREXAMPLE_HEIGHT)
                 if r not in _COUNTEREXAMPLE_GAPS}
    terminals = tuple((r, _COUNTEREXAMPLE_WIDTH - 1, 1.0) for r in range(_COUNTEREXAMPLE_HEIGHT))
    return GridSpec(width=_COUNTEREXAMPLE_WIDTH, height=_COUNTEREXAMPLE_HEIGHT,
                    obstacles=frozenset(obstacles), terminals=terminals,
                    slip_stay=0.0, slip_lateral=0.05, gamma=gamma, checkin_period=k,
                    include_nop=False, start=(1, 0), name="counterexample")


BENCH_SLIP = {"slip_stay": 0.05, "slip_lateral": 0.075}


def builtin(name: str) -> GridSpec:
    """Fixed, versioned grid specs: benchmark_4x7, benchmark_6x11, counterexample."""
    if name == "benchmark_4x7":
        return _from_ascii(_BENCH_4x7, name=name, checkin_period=4, **BENCH_SLIP)
    if name == "benchmark_6x11":
        return _from_ascii(_BENCH_6x11, name=name, checkin_period=6, **BENCH_SLIP)
    if name == "counterexample":
        return _counterexample_spec()
    raise UnknownBuiltin(f"UnknownBuiltin: {name!r} (known: {', '.join(BUILTINS)})")


BUILTINS = ("benchmark_4x7", "benchmark_6x11", "counterexample")


def build_counterexample(variant: str = "k2", gamma: float = 0.95) -> PsoMdp:
    """The stride-3 obstacle corridor with check-in period 2 (``k2``) or 3 (``k3``)."""
    ks = {"k2": 2, "k3": 3}
    if variant not in ks:
        raise InvalidSpec(f"InvalidSpec: variant must be 'k2' or 'k3', got {variant!r}")
    return build_gridworld(_counterexample_spec(ks[variant], gamma))


# --------------------------------------------------------------------- I/O


def _reject_constant(name):
    raise ParseError(f"ParseError: {name} is not permitted")


def _load_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ParseError(f"ParseError: no such file: {path}") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"ParseError: cannot read {path}: {exc}") from None
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"ParseError: {path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def save_model(model: PsoMdp, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), allow_nan=False), encoding="utf-8")


def load_model(path) -> PsoMdp:
    raw = _load_json(path)
    if not isinstance(raw, dict):
        raise ParseError("ParseError: top-level JSON value must be an object")
    required = ("num_states", "num_actions", "gamma", "checkin_period", "transitions", "rewards")
    for key in required:
        if key not in raw:
            raise ParseError(f"ParseError: missing field {key!r}")
    return validate(raw)


def load_gridspec(path) -> GridSpec:
    raw = _load_json(path)
    if not isinstance(raw, dict):
        raise ParseError("ParseError: top-level JSON value must be an object")
    spec = GridSpec.from_dict(raw)
    spec.validate()
    return spec


def save_gridspec(spec: GridSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=1), encoding="utf-8")


def resolve_model(ref: str, k: int | None = None, gamma: float | None = None):
    """``builtin:NAME``, a grid-spec JSON or a model JSON -> ``(model, spec or None)``."""
    if ref.startswith("builtin:"):
        spec = builtin(ref.split(":", 1)[1]).with_params(checkin_period=k, gamma=gamma)
        return build_gridworld(spec), spec
    raw = _load_json(ref)
    if isinstance(raw, dict) and "width" in raw and "height" in raw:
        spec = GridSpec.from_dict(raw).with_params(checkin_period=k, gamma=gamma)
        return build_gridworld(spec), spec
    model = load_model(ref)
    if k is not None or gamma is not None:
        model = model.replace(checkin_period=k, discount=gamma)
    return model, None
