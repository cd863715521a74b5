"""Turtle graphics: imperative drawing primitives threaded through an
immutable canvas state, with deterministic integer rasterization.

The canvas is a fixed 64x64 binary raster; a program has type
state → state and is judged by exact raster equality. The unbounded
loop count is capped, with an early exit as soon as the turtle pose
returns to where the loop started, so closed figures (polygons, stars)
terminate after exactly one revolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..interpreter import EvalError, EvalLimit
from ..terms import (
    Abstraction,
    Application,
    Literal,
    Primitive,
    Term,
    Var,
    make_application,
)
from ..types import TArrow, TCon, TVar, Type
from .base import Domain, GeneratedTask, Task

CANVAS = 64
START_X = 32.0
START_Y = 32.0
UNIT_LINE = 6.0
EPS_LINE = 2.0
TWO_PI = 2.0 * math.pi
EPS_ANGLE = TWO_PI / 12.0
INF_LOOP_CAP = 20
POSE_EPS = 1e-6

LENGTH = TCon("length")
ANGLE = TCon("angle")
INT = TCon("int")
STATE = TCon("state")
T0 = TVar(0)


def arrows(*ts: Type) -> Type:
    result = ts[-1]
    for t in reversed(ts[:-1]):
        result = TArrow(t, result)
    return result


PRIMITIVE_TYPES: dict[str, Type] = {
    "move": arrows(LENGTH, ANGLE, STATE, STATE),
    "pen_up": arrows(arrows(STATE, STATE), STATE, STATE),
    "for": arrows(INT, arrows(STATE, STATE), STATE, STATE),
    "get_set": arrows(arrows(STATE, STATE), STATE, STATE),
    "+": arrows(T0, T0, T0),
    "-": arrows(T0, T0, T0),
    "*": arrows(T0, INT, T0),
    "/": arrows(T0, INT, T0),
}

LITERAL_TYPES: dict[str, Type] = {str(i): INT for i in range(1, 10)}
LITERAL_TYPES.update(
    {"inf": INT, "unit_line": LENGTH, "eps_line": LENGTH,
     "unit_angle": ANGLE, "eps_angle": ANGLE}
)

LITERAL_VALUES = {str(i): float(i) for i in range(1, 10)}
LITERAL_VALUES.update(
    {"inf": math.inf, "unit_line": UNIT_LINE, "eps_line": EPS_LINE,
     "unit_angle": TWO_PI, "eps_angle": EPS_ANGLE}
)


@dataclass(frozen=True)
class TurtleState:
    x: float
    y: float
    heading: float
    pen: bool
    pixels: frozenset
    strokes: int


def initial_state() -> TurtleState:
    return TurtleState(START_X, START_Y, 0.0, True, frozenset(), 0)


def _line_pixels(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    pixels = []
    dx = abs(x1 - x0)
    dy = abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx - dy
    x, y = x0, y0
    while True:
        if 0 <= x < CANVAS and 0 <= y < CANVAS:
            pixels.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy
    return pixels


def _pose_matches(s: TurtleState, pose: tuple[float, float, float]) -> bool:
    x0, y0, h0 = pose
    if abs(s.x - x0) > POSE_EPS or abs(s.y - y0) > POSE_EPS:
        return False
    dh = abs(s.heading - h0) % TWO_PI
    return min(dh, TWO_PI - dh) < POSE_EPS


class GraphicsDomain(Domain):
    name = "graphics"
    eval_limit = EvalLimit(max_steps=20000, max_depth=200)
    sample_examples = 1

    def sample_output_value(self, value):
        if isinstance(value, TurtleState) and value.pixels:
            return value.pixels
        return None

    @property
    def request_type(self) -> Type:
        return TArrow(STATE, STATE)

    @property
    def literal_names(self) -> frozenset[str]:
        return frozenset(LITERAL_TYPES)

    def base_productions(self):
        prods: list[tuple[Term, Type]] = [
            (Primitive(name), scheme) for name, scheme in PRIMITIVE_TYPES.items()
        ]
        prods.extend((Literal(name), scheme) for name, scheme in LITERAL_TYPES.items())
        return prods

    def arity(self, name: str) -> int:
        return {"move": 3, "pen_up": 2, "for": 3, "get_set": 2,
                "+": 2, "-": 2, "*": 2, "/": 2}[name]

    def literal_value(self, name: str) -> float:
        return LITERAL_VALUES[name]

    def apply_primitive(self, name, args, call):
        if name == "move":
            length, angle, s = args
            return self._move(length, angle, s)
        if name == "pen_up":
            body, s = args
            result = call(body, replace(s, pen=False))
            if not isinstance(result, TurtleState):
                raise EvalError("pen_up body did not return a state")
            return replace(result, pen=s.pen)
        if name == "get_set":
            body, s = args
            result = call(body, s)
            if not isinstance(result, TurtleState):
                raise EvalError("get_set body did not return a state")
            return replace(result, x=s.x, y=s.y, heading=s.heading, pen=s.pen)
        if name == "for":
            count, body, s = args
            return self._loop(count, body, s, call)
        if name in ("+", "-", "*", "/"):
            a, b = args
            if not isinstance(a, (int, float)) or not isinstance(b, (int, float)):
                raise EvalError(f"{name}: non-numeric operand")
            if name == "+":
                return a + b
            if name == "-":
                return a - b
            if name == "*":
                return a * b
            if b == 0:
                raise EvalError("division by zero")
            return a / b
        raise EvalError(f"unknown primitive {name}")

    def _move(self, length, angle, s):
        if not isinstance(s, TurtleState):
            raise EvalError("move applied to a non-state")
        if not isinstance(length, (int, float)) or not isinstance(angle, (int, float)):
            raise EvalError("move: non-numeric length or angle")
        if not math.isfinite(length) or not math.isfinite(angle):
            raise EvalError("move: non-finite length or angle")
        if abs(length) > 1e4:
            raise EvalError("move: length out of range")
        nx = s.x + length * math.cos(s.heading)
        ny = s.y + length * math.sin(s.heading)
        pixels = s.pixels
        strokes = s.strokes
        if s.pen:
            segment = _line_pixels(round(s.x), round(s.y), round(nx), round(ny))
            pixels = pixels | frozenset(segment)
            if abs(length) > 1e-9:
                strokes += 1
        heading = (s.heading + angle) % TWO_PI
        return TurtleState(nx, ny, heading, s.pen, pixels, strokes)

    def _loop(self, count, body, s, call):
        if not isinstance(s, TurtleState):
            raise EvalError("for applied to a non-state")
        if not isinstance(count, (int, float)):
            raise EvalError("for: non-numeric count")
        if count == math.inf:
            start = (s.x, s.y, s.heading)
            for _ in range(INF_LOOP_CAP):
                s = call(body, s)
                if not isinstance(s, TurtleState):
                    raise EvalError("for body did not return a state")
                if _pose_matches(s, start):
                    break
            return s
        n = int(count)
        if n < 0:
            raise EvalError("for: negative count")
        for _ in range(n):
            s = call(body, s)
            if not isinstance(s, TurtleState):
                raise EvalError("for body did not return a state")
        return s

    # ------------------------------------------------------------------
    # Task plumbing
    # ------------------------------------------------------------------

    def prepare_input(self, stored):
        return initial_state()

    def output_equal(self, result, expected) -> bool:
        return isinstance(result, TurtleState) and result.pixels == expected

    def sample_input(self, rng):
        return None

    def encode_value(self, value, role: str):
        if role == "input":
            return None
        return {"rle": rle_encode(value)}

    def decode_value(self, encoded, role: str):
        if role == "input":
            return None
        return rle_decode(encoded["rle"])

    @property
    def feature_dim(self) -> int:
        return 22

    def task_features(self, task: Task) -> np.ndarray:
        pixels = task.examples[0][1]
        feats = np.zeros(22)
        if not pixels:
            return feats
        xs = [p[0] for p in pixels]
        ys = [p[1] for p in pixels]
        feats[0] = len(pixels) / 256.0
        feats[1] = min(xs) / CANVAS
        feats[2] = max(xs) / CANVAS
        feats[3] = min(ys) / CANVAS
        feats[4] = max(ys) / CANVAS
        cell = CANVAS // 4
        for x, y in pixels:
            feats[5 + 4 * (y // cell) + (x // cell)] += 1.0 / (cell * cell)
        feats[21] = _component_count(pixels) / 10.0
        return feats

    # ------------------------------------------------------------------
    # Task generation
    # ------------------------------------------------------------------

    def generate_tasks(self, n: int, seed: int, split: str = "train", **kwargs):
        train, test = generate_graphics_dataset(
            n_train=n if split == "train" else 0,
            n_test=n if split == "test" else 0,
            seed=seed,
        )
        return train if split == "train" else test


def _component_count(pixels: frozenset) -> int:
    remaining = set(pixels)
    count = 0
    while remaining:
        count += 1
        stack = [remaining.pop()]
        while stack:
            x, y = stack.pop()
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    q = (x + dx, y + dy)
                    if q in remaining:
                        remaining.remove(q)
                        stack.append(q)
    return count


def rle_encode(pixels: frozenset) -> list[int]:
    """Run lengths over the row-major bit string, starting with zeros."""
    runs = []
    current = 0
    run = 0
    for y in range(CANVAS):
        for x in range(CANVAS):
            bit = 1 if (x, y) in pixels else 0
            if bit == current:
                run += 1
            else:
                runs.append(run)
                current = bit
                run = 1
    runs.append(run)
    return runs


def rle_decode(runs: list[int]) -> frozenset:
    pixels = []
    position = 0
    bit = 0
    for run in runs:
        if bit:
            for i in range(position, position + run):
                pixels.append((i % CANVAS, i // CANVAS))
        position += run
        bit ^= 1
    return frozenset(pixels)


# ----------------------------------------------------------------------
# Template programs (built directly in η-long form)
# ----------------------------------------------------------------------

def _lit(name) -> Term:
    return Literal(str(name))


def _times(t: Term, k: int) -> Term:
    if k == 1:
        return t
    return make_application(Primitive("*"), [t, _lit(k)])


def _div(t: Term, k: int) -> Term:
    return make_application(Primitive("/"), [t, _lit(k)])


def _move_expr(length: Term, angle: Term, s: Term) -> Term:
    return make_application(Primitive("move"), [length, angle, s])


def _for_expr(count: Term, body: Term, s: Term) -> Term:
    return make_application(Primitive("for"), [count, body, s])


UNIT_ANGLE_T = Literal("unit_angle")
UNIT_LINE_T = Literal("unit_line")
EPS_ANGLE_T = Literal("eps_angle")
EPS_LINE_T = Literal("eps_line")
INF_T = Literal("inf")

NUMBER_WORDS = {
    1: "one", 2: "two", 3: "three", 4: "four", 5: "five",
    6: "six", 7: "seven", 8: "eight", 9: "nine",
}
SIZE_WORDS = {1: "small", 2: "medium", 3: "big"}
LINE_SIZE_WORDS = {1: "short", 2: "medium", 3: "big"}
CIRCLE_SIZES = {1: 2, 2: 4, 3: 6}


def _line_fn(k: int):
    return lambda s: _move_expr(_times(UNIT_LINE_T, k), UNIT_ANGLE_T, s)


def _polygon_fn(n: int, k: int):
    body = Abstraction(
        _move_expr(_times(UNIT_LINE_T, k), _div(UNIT_ANGLE_T, n), Var(0))
    )
    return lambda s: _for_expr(INF_T, body, s)


def _circle_fn(k: int, half: bool):
    body = Abstraction(_move_expr(_times(EPS_LINE_T, k), EPS_ANGLE_T, Var(0)))
    count = _lit(6) if half else INF_T
    return lambda s: _for_expr(count, body, s)


def _star_fn(n: int, k: int):
    body = Abstraction(
        _move_expr(
            _times(UNIT_LINE_T, k), _times(_div(UNIT_ANGLE_T, n), 2), Var(0)
        )
    )
    return lambda s: _for_expr(INF_T, body, s)


def _spiral_fn(turns: int):
    def build(s: Term) -> Term:
        expr = s
        for i in range(1, turns + 1):
            expr = _move_expr(_times(EPS_LINE_T, i), _div(UNIT_ANGLE_T, 4), expr)
        return expr

    return build


def _staircase_fn(steps: int):
    inner = _move_expr(UNIT_LINE_T, _times(_div(UNIT_ANGLE_T, 4), 3), Var(0))
    body = Abstraction(_move_expr(UNIT_LINE_T, _div(UNIT_ANGLE_T, 4), inner))
    return lambda s: _for_expr(_lit(steps), body, s)


def _zigzag_fn(turns: int):
    inner = _move_expr(_times(UNIT_LINE_T, 2), _times(_div(UNIT_ANGLE_T, 8), 5), Var(0))
    body = Abstraction(
        _move_expr(_times(UNIT_LINE_T, 2), _times(_div(UNIT_ANGLE_T, 8), 3), inner)
    )
    return lambda s: _for_expr(_lit(turns), body, s)


ZERO_LENGTH = make_application(Primitive("-"), [UNIT_LINE_T, UNIT_LINE_T])


def _snowflake_fn(n: int, arm_fn):
    arm = Abstraction(arm_fn(Var(0)))
    body = Abstraction(
        _move_expr(
            ZERO_LENGTH,
            _div(UNIT_ANGLE_T, n),
            make_application(Primitive("get_set"), [arm, Var(0)]),
        )
    )
    return lambda s: _for_expr(INF_T, body, s)


def _jump_fn(gap: int):
    return lambda s: make_application(
        Primitive("pen_up"),
        [Abstraction(_move_expr(_times(UNIT_LINE_T, gap), UNIT_ANGLE_T, Var(0))), s],
    )


def _compose(*fns):
    def build(s: Term) -> Term:
        expr = s
        for fn in fns:
            expr = fn(expr)
        return expr

    return build


def _nested_fn(inner_fn, outer_fn):
    def build(s: Term) -> Term:
        saved = make_application(
            Primitive("get_set"), [Abstraction(inner_fn(Var(0))), s]
        )
        return outer_fn(saved)

    return build


def _row_fn(shape_fn, count: int, gap: int):
    body = Abstraction(_jump_fn(gap)(shape_fn(Var(0))))
    return lambda s: _for_expr(_lit(count), body, s)


_SIMPLE_SHAPES = {
    "triangle": lambda k: _polygon_fn(3, k),
    "square": lambda k: _polygon_fn(4, k),
    "circle": lambda k: _circle_fn(CIRCLE_SIZES[k], half=False),
}


def _polygon_tokens(n: int, k: int) -> list[str]:
    if n == 3:
        return [SIZE_WORDS[k], "triangle"]
    if n == 4:
        return [SIZE_WORDS[k], "square"]
    return [SIZE_WORDS[k], NUMBER_WORDS[n], "gon"]


def _build_pool() -> list[tuple[float, list[str], object]]:
    """(weight, description tokens, state->state builder) templates."""
    pool: list[tuple[float, list[str], object]] = []

    for k in (1, 2, 3):
        pool.append((6.0, [LINE_SIZE_WORDS[k], "line"], _line_fn(k)))
    for n in range(3, 10):
        for k in (1, 2, 3):
            if n >= 7 and k >= 3:
                continue
            pool.append((4.0, _polygon_tokens(n, k), _polygon_fn(n, k)))
    for k in (1, 2, 3):
        pool.append((3.0, [SIZE_WORDS[k], "circle"], _circle_fn(CIRCLE_SIZES[k], False)))
        pool.append((2.0, [SIZE_WORDS[k], "semicircle"], _circle_fn(CIRCLE_SIZES[k], True)))
    for n in (5, 7, 9):
        for k in (1, 2):
            pool.append(
                (1.5, [NUMBER_WORDS[n], "pointed", "star"] if k == 1
                 else ["big", NUMBER_WORDS[n], "pointed", "star"], _star_fn(n, k))
            )
    for t in range(3, 10):
        pool.append((1.0, ["greek", "spiral", "with", NUMBER_WORDS[t], "turn", "s"], _spiral_fn(t)))
    for t in range(2, 9):
        pool.append((1.0, ["staircase", "with", NUMBER_WORDS[t], "step", "s"], _staircase_fn(t)))
        pool.append((1.0, ["zigzag", "with", NUMBER_WORDS[t], "corner", "s"], _zigzag_fn(t)))
    for n in range(3, 9):
        for arm_k in (1, 2):
            arm = _line_fn(arm_k)
            size_word = LINE_SIZE_WORDS[arm_k]
            pool.append(
                (1.0,
                 [NUMBER_WORDS[n], "sided", "snowflake", "with", "a", size_word,
                  "line", "as", "arm", "s"],
                 _snowflake_fn(n, arm))
            )
        for shape_name in ("triangle", "square", "circle"):
            arm = _compose(_line_fn(1), _SIMPLE_SHAPES[shape_name](1))
            pool.append(
                (1.0,
                 [NUMBER_WORDS[n], "sided", "snowflake", "with", "a", "small",
                  shape_name, "as", "arm", "s"],
                 _snowflake_fn(n, arm))
            )

    shape_names = ("triangle", "square", "circle")
    for a in shape_names:
        for b in shape_names:
            for ka, kb in ((1, 1), (1, 2), (2, 1), (2, 2), (1, 3)):
                fa, fb = _SIMPLE_SHAPES[a](ka), _SIMPLE_SHAPES[b](kb)
                pool.append(
                    (1.0,
                     ["a", SIZE_WORDS[ka], a, "next", "to", "a", SIZE_WORDS[kb], b],
                     _compose(fa, _jump_fn(2), fb))
                )
                pool.append(
                    (0.7,
                     ["a", SIZE_WORDS[ka], a, "separated", "by", "a", "big",
                      "space", "from", "a", SIZE_WORDS[kb], b],
                     _compose(fa, _jump_fn(4), fb))
                )
                pool.append(
                    (0.7,
                     ["a", SIZE_WORDS[ka], a, "connected", "by", "a", "line",
                      "from", "a", SIZE_WORDS[kb], b],
                     _compose(fa, _line_fn(2), fb))
                )
            if a != b:
                for inner, outer in ((1, 3), (1, 2)):
                    pool.append(
                        (1.0,
                         ["a", SIZE_WORDS[inner], a, "nested", "in", "a",
                          SIZE_WORDS[outer], b],
                         _nested_fn(_SIMPLE_SHAPES[a](inner), _SIMPLE_SHAPES[b](outer)))
                    )
    for shape in shape_names:
        for count in (2, 3, 4, 5, 6):
            pool.append(
                (1.0,
                 [NUMBER_WORDS[count], "small", shape, "s", "in", "a", "row"],
                 _row_fn(_SIMPLE_SHAPES[shape](1), count, 3))
            )
    return pool


def template_pool_size() -> int:
    return len(_build_pool())


def generate_graphics_dataset(
    n_train: int, n_test: int, seed: int
) -> tuple[list[GeneratedTask], list[GeneratedTask]]:
    from ..search import check_task

    domain = GRAPHICS
    pool = _build_pool()
    total = n_train + n_test
    if total > len(pool):
        raise ValueError(
            f"requested {total} graphics tasks but only {len(pool)} templates exist"
        )
    rng = np.random.default_rng(seed)
    weights = np.array([w for w, _, _ in pool])
    order = rng.choice(len(pool), size=total, replace=False, p=weights / weights.sum())

    out: list[list[GeneratedTask]] = [[], []]
    for rank, idx in enumerate(order):
        _, tokens, builder = pool[int(idx)]
        program = Abstraction(builder(Var(0)))
        split = "train" if rank < n_train else "test"
        bucket = 0 if split == "train" else 1
        number = len(out[bucket])
        state = _render(domain, program)
        task = Task(
            id=f"{split}-logo-{number:04d}",
            request=domain.request_type,
            examples=[(None, state.pixels)],
            description=list(tokens),
            split=split,
        )
        if not check_task(program, task, domain):
            raise RuntimeError(f"graphics template failed self-check: {tokens}")
        out[bucket].append(GeneratedTask(task, program, [list(tokens)]))
    return out[0], out[1]


def _render(domain: GraphicsDomain, program: Term) -> TurtleState:
    from ..interpreter import evaluate

    state = evaluate(program, [initial_state()], domain, domain.eval_limit)
    if not isinstance(state, TurtleState):
        raise RuntimeError("template did not produce a state")
    if not state.pixels:
        raise RuntimeError("template rendered an empty canvas")
    return state


GRAPHICS = GraphicsDomain()
