"""BlocksWorld semantics: ground atoms, states, actions, plan verification,
puzzle generation and a breadth-first optimal solver.

States are immutable and canonical: atoms are kept sorted by
``(predicate name, arguments)``, so equality and hashing are structural and
the natural sort order matches the order facts are listed in prompts
(clear, handempty, holding, on, ontable).
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

MAX_BLOCKS = 6
LABELS = "ABCDEF"

PREDICATES = ("clear", "handempty", "holding", "on", "ontable")
ACTIONS = ("pick-up", "put-down", "stack", "unstack")
_ARITY = {"clear": 1, "handempty": 0, "holding": 1, "on": 2, "ontable": 1}


class Inapplicable(ValueError):
    """Raised by :func:`apply` when an action's preconditions do not hold."""


class SizeLimit(ValueError):
    pass


class MalformedState(ValueError):
    pass


def label(i: int) -> str:
    return LABELS[i]


def block_index(lbl: str) -> int:
    idx = LABELS.find(lbl.strip().upper())
    if idx < 0 or len(lbl.strip()) != 1:
        raise ValueError(f"not a block label: {lbl!r}")
    return idx


@dataclass(frozen=True, order=True)
class Atom:
    name: str
    args: tuple[int, ...] = ()

    def __post_init__(self):
        if self.name not in _ARITY:
            raise ValueError(f"unknown predicate {self.name!r}")
        if len(self.args) != _ARITY[self.name]:
            raise ValueError(f"{self.name} takes {_ARITY[self.name]} arguments")
        if self.name == "on" and self.args[0] == self.args[1]:
            raise ValueError("on(x, x) is not a valid atom")

    def __str__(self) -> str:
        if not self.args:
            return self.name
        return f"{self.name}({', '.join(label(a) for a in self.args)})"


def on(x: int, y: int) -> Atom:
    return Atom("on", (x, y))


def on_table(x: int) -> Atom:
    return Atom("ontable", (x,))


def clear(x: int) -> Atom:
    return Atom("clear", (x,))


def holding(x: int) -> Atom:
    return Atom("holding", (x,))


def hand_empty() -> Atom:
    return Atom("handempty")


@dataclass(frozen=True)
class State:
    n: int
    atoms: tuple[Atom, ...]

    @classmethod
    def of(cls, n: int, atoms: Iterable[Atom]) -> State:
        return cls(n, tuple(sorted(set(atoms))))

    @classmethod
    def from_towers(cls, n: int, towers: Iterable[Sequence[int]], held: int | None = None) -> State:
        """Build a state from bottom-to-top towers plus an optional held block."""
        atoms: list[Atom] = []
        for tower in towers:
            if not tower:
                continue
            atoms.append(on_table(tower[0]))
            atoms.extend(on(top, below) for below, top in zip(tower, tower[1:]))
            atoms.append(clear(tower[-1]))
        atoms.append(hand_empty() if held is None else holding(held))
        state = cls.of(n, atoms)
        state.validate()
        return state

    def __contains__(self, atom: Atom) -> bool:
        return atom in self._set

    @property
    def _set(self) -> frozenset[Atom]:
        # cached on first use; frozen dataclass so go through object.__setattr__
        try:
            return self.__dict__["_atomset"]
        except KeyError:
            s = frozenset(self.atoms)
            object.__setattr__(self, "_atomset", s)
            return s

    def held(self) -> int | None:
        for a in self.atoms:
            if a.name == "holding":
                return a.args[0]
        return None

    def below(self, x: int) -> int | None:
        for a in self.atoms:
            if a.name == "on" and a.args[0] == x:
                return a.args[1]
        return None

    def towers(self) -> list[tuple[int, ...]]:
        """Bottom-to-top towers, ordered by their bottom block."""
        above = {a.args[1]: a.args[0] for a in self.atoms if a.name == "on"}
        out = []
        for bottom in sorted(a.args[0] for a in self.atoms if a.name == "ontable"):
            tower = [bottom]
            while tower[-1] in above:
                tower.append(above[tower[-1]])
            out.append(tuple(tower))
        return out

    def validate(self) -> None:
        """Raise :class:`MalformedState` unless the state is well formed."""
        problems = well_formedness_errors(self)
        if problems:
            raise MalformedState("; ".join(problems))

    def is_well_formed(self) -> bool:
        return not well_formedness_errors(self)

    def __str__(self) -> str:
        return "{" + ", ".join(str(a) for a in self.atoms) + "}"


def well_formedness_errors(state: State) -> list[str]:
    n = state.n
    errs = []
    if not 1 <= n <= len(LABELS):
        return [f"block count {n} out of range"]
    for a in state.atoms:
        if any(not 0 <= b < n for b in a.args):
            errs.append(f"{a} references a block outside 0..{n - 1}")
    if errs:
        return errs

    held = [a.args[0] for a in state.atoms if a.name == "holding"]
    has_empty = hand_empty() in state
    if len(held) > 1:
        errs.append("holding more than one block")
    if has_empty == bool(held):
        errs.append("handempty must be present iff nothing is held")

    on_table_set = {a.args[0] for a in state.atoms if a.name == "ontable"}
    below: dict[int, list[int]] = {}
    above: dict[int, list[int]] = {}
    for a in state.atoms:
        if a.name == "on":
            below.setdefault(a.args[0], []).append(a.args[1])
            above.setdefault(a.args[1], []).append(a.args[0])
    for b in range(n):
        placements = (b in held) + (b in on_table_set) + len(below.get(b, []))
        if placements != 1:
            errs.append(f"block {label(b)} has {placements} placements")
        if len(above.get(b, [])) > 1:
            errs.append(f"block {label(b)} supports more than one block")
        if b in held and b in above:
            errs.append(f"held block {label(b)} supports another block")
        should_be_clear = b not in held and b not in above
        if (clear(b) in state) != should_be_clear:
            errs.append(f"clear({label(b)}) inconsistent")
    for b in range(n):
        seen = {b}
        cur = b
        while len(below.get(cur, [])) == 1:
            cur = below[cur][0]
            if cur in seen:
                errs.append("the on relation has a cycle")
                return errs
            seen.add(cur)
    return errs


@dataclass(frozen=True)
class Action:
    kind: str
    x: int
    y: int | None = None

    def __post_init__(self):
        if self.kind not in ACTIONS:
            raise ValueError(f"unknown action {self.kind!r}")
        binary = self.kind in ("stack", "unstack")
        if binary != (self.y is not None):
            raise ValueError(f"{self.kind} takes {2 if binary else 1} arguments")
        if binary and self.x == self.y:
            raise ValueError(f"{self.kind} needs two distinct blocks")

    @property
    def args(self) -> tuple[int, ...]:
        return (self.x,) if self.y is None else (self.x, self.y)

    def __str__(self) -> str:
        return f"{self.kind}({', '.join(label(a) for a in self.args)})"


def pick_up(x: int) -> Action:
    return Action("pick-up", x)


def put_down(x: int) -> Action:
    return Action("put-down", x)


def stack(x: int, y: int) -> Action:
    return Action("stack", x, y)


def unstack(x: int, y: int) -> Action:
    return Action("unstack", x, y)


def _strips(action: Action) -> tuple[list[Atom], list[Atom], list[Atom]]:
    """(preconditions, add list, delete list) for a ground action."""
    x, y = action.x, action.y
    if action.kind == "pick-up":
        pre = [clear(x), on_table(x), hand_empty()]
        return pre, [holding(x)], pre
    if action.kind == "put-down":
        return [holding(x)], [clear(x), on_table(x), hand_empty()], [holding(x)]
    if action.kind == "stack":
        pre = [holding(x), clear(y)]
        return pre, [hand_empty(), clear(x), on(x, y)], pre
    pre = [on(x, y), clear(x), hand_empty()]
    return pre, [holding(x), clear(y)], pre


def inapplicable_reason(state: State, action: Action) -> str | None:
    if any(not 0 <= b < state.n for b in action.args):
        return f"{action} references a block outside the puzzle"
    pre, _, _ = _strips(action)
    missing = [p for p in pre if p not in state]
    if not missing:
        return None
    return f"{action} requires " + ", ".join(str(m) for m in missing)


def is_applicable(state: State, action: Action) -> bool:
    return inapplicable_reason(state, action) is None


def apply(state: State, action: Action) -> State:
    reason = inapplicable_reason(state, action)
    if reason is not None:
        raise Inapplicable(reason)
    _, add, delete = _strips(action)
    atoms = (state._set - set(delete)) | set(add)
    return State(state.n, tuple(sorted(atoms)))


def satisfies_goal(state: State, goal: Iterable[Atom]) -> bool:
    return all(g in state for g in goal)


def all_actions(n: int) -> Iterator[Action]:
    """Every ground action over n blocks, in a fixed order."""
    for x in range(n):
        yield pick_up(x)
        yield put_down(x)
    for x, y in itertools.permutations(range(n), 2):
        yield stack(x, y)
        yield unstack(x, y)


def successors(state: State) -> Iterator[tuple[Action, State]]:
    for a in all_actions(state.n):
        if is_applicable(state, a):
            yield a, apply(state, a)


@dataclass(frozen=True)
class Puzzle:
    n: int
    initial: State
    goal: tuple[Atom, ...]

    def __post_init__(self):
        if self.initial.n != self.n:
            raise ValueError("initial state block count does not match puzzle")
        self.initial.validate()
        object.__setattr__(self, "goal", tuple(sorted(set(self.goal))))
        succ = {}
        for g in self.goal:
            if g.name != "on":
                raise ValueError(f"goals are conjunctions of on atoms, got {g}")
            if any(not 0 <= b < self.n for b in g.args):
                raise ValueError(f"goal atom {g} references a block outside the puzzle")
            if g.args[0] in succ:
                raise ValueError(f"goal puts block {label(g.args[0])} on two blocks")
            succ[g.args[0]] = g.args[1]
        if len(set(succ.values())) != len(succ):
            raise ValueError("goal stacks two blocks on the same block")
        for start in succ:
            seen, cur = {start}, start
            while cur in succ:
                cur = succ[cur]
                if cur in seen:
                    raise ValueError("goal is cyclic")
                seen.add(cur)


# Verdict outcomes
VALID = "valid"
INAPPLICABLE = "inapplicable"
GOAL_UNSATISFIED = "goal-unsatisfied"


@dataclass(frozen=True)
class Verdict:
    outcome: str
    index: int | None = None
    reason: str | None = None
    final_state: State | None = None

    @property
    def valid(self) -> bool:
        return self.outcome == VALID


def verify_plan(puzzle: Puzzle, plan: Sequence[Action]) -> Verdict:
    """Simulate ``plan`` from the initial state; report the first failure."""
    state = puzzle.initial
    for i, action in enumerate(plan):
        reason = inapplicable_reason(state, action)
        if reason is not None:
            return Verdict(INAPPLICABLE, index=i, reason=reason)
        state = apply(state, action)
    if satisfies_goal(state, puzzle.goal):
        return Verdict(VALID, final_state=state)
    missing = [str(g) for g in puzzle.goal if g not in state]
    return Verdict(GOAL_UNSATISFIED, reason="unmet: " + ", ".join(missing), final_state=state)


def bfs_solve(puzzle: Puzzle) -> list[Action]:
    """Shortest plan by breadth-first search over the reachable state space."""
    if puzzle.n > MAX_BLOCKS:
        raise SizeLimit(f"bfs_solve supports at most {MAX_BLOCKS} blocks, got {puzzle.n}")
    start = puzzle.initial
    if satisfies_goal(start, puzzle.goal):
        return []
    parent: dict[State, tuple[State, Action] | None] = {start: None}
    frontier = deque([start])
    while frontier:
        s = frontier.popleft()
        for a, t in successors(s):
            if t in parent:
                continue
            parent[t] = (s, a)
            if satisfies_goal(t, puzzle.goal):
                plan = []
                while parent[t] is not None:
                    t, a = parent[t]
                    plan.append(a)
                return plan[::-1]
            frontier.append(t)
    raise RuntimeError("goal unreachable")  # cannot happen for acyclic goals


def reachable_states(start: State) -> set[State]:
    seen = {start}
    frontier = deque([start])
    while frontier:
        s = frontier.popleft()
        for _, t in successors(s):
            if t not in seen:
                seen.add(t)
                frontier.append(t)
    return seen


_HAND_EMPTY_CACHE: dict[int, list[State]] = {}


def hand_empty_states(n: int) -> list[State]:
    """All well-formed hand-empty states over n blocks, canonically sorted."""
    if n not in _HAND_EMPTY_CACHE:
        flat = State.from_towers(n, [[b] for b in range(n)])
        states = [s for s in reachable_states(flat) if s.held() is None]
        _HAND_EMPTY_CACHE[n] = sorted(states, key=lambda s: s.atoms)
    return _HAND_EMPTY_CACHE[n]


def generate_puzzle(n_blocks: int, seed: int) -> Puzzle:
    """Uniform random hand-empty initial state, independent random goal arrangement.

    The goal is the set of on atoms of a second uniformly drawn arrangement;
    draws are repeated while the initial state already satisfies the goal.
    """
    if not 2 <= n_blocks <= MAX_BLOCKS:
        raise SizeLimit(f"n_blocks must be in 2..{MAX_BLOCKS}, got {n_blocks}")
    states = hand_empty_states(n_blocks)
    rng = np.random.default_rng(seed)
    while True:
        initial = states[rng.integers(len(states))]
        target = states[rng.integers(len(states))]
        goal = tuple(a for a in target.atoms if a.name == "on")
        if not satisfies_goal(initial, goal):
            return Puzzle(n_blocks, initial, goal)


# JSON shapes -----------------------------------------------------------------

def atom_to_json(a: Atom) -> list:
    return [a.name, *(label(b) for b in a.args)]


def atom_from_json(obj: Sequence) -> Atom:
    name, *args = obj
    return Atom(name, tuple(block_index(b) for b in args))


def action_to_json(a: Action) -> list:
    return [a.kind, *(label(b) for b in a.args)]


def action_from_json(obj: Sequence) -> Action:
    kind, *args = obj
    idx = [block_index(b) for b in args]
    return Action(kind, idx[0], idx[1] if len(idx) > 1 else None)


def puzzle_to_json(p: Puzzle) -> dict:
    return {
        "n_blocks": p.n,
        "initial": [atom_to_json(a) for a in p.initial.atoms],
        "goal": [atom_to_json(a) for a in p.goal],
    }


def puzzle_from_json(obj: dict) -> Puzzle:
    n = int(obj["n_blocks"])
    initial = State.of(n, (atom_from_json(a) for a in obj["initial"]))
    return Puzzle(n, initial, tuple(atom_from_json(a) for a in obj["goal"]))


def plan_to_json(plan: Sequence[Action]) -> list:
    return [action_to_json(a) for a in plan]


def plan_from_json(obj: Sequence) -> list[Action]:
    return [action_from_json(a) for a in obj]


def verdict_to_json(v: Verdict) -> dict:
    out: dict = {"outcome": v.outcome}
    if v.index is not None:
        out["index"] = v.index
    if v.reason is not None:
        out["reason"] = v.reason
    if v.final_state is not None:
        out["final_state"] = [atom_to_json(a) for a in v.final_state.atoms]
    return out


# The worked example used in the prompt templates.
EXAMPLE_PUZZLE = Puzzle(
    3,
    State.from_towers(3, [[0, 2], [1]]),
    (on(0, 2), on(1, 0)),
)
EXAMPLE_PLAN = [unstack(2, 0), put_down(2), pick_up(0), stack(0, 2), pick_up(1), stack(1, 0)]
