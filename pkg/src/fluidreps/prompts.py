"""Prompt rendering for standard and mystery BlocksWorld, and plan parsing."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .blocksworld import EXAMPLE_PLAN, EXAMPLE_PUZZLE, Action, Atom, Puzzle, State, block_index, label
from .namings import IDENTITY, Naming

STANDARD = "standard"
MYSTERY = "mystery"


class PlanParseError(ValueError):
    pass


class NoPlanBlock(PlanParseError):
    pass


class UnknownActionWord(PlanParseError):
    def __init__(self, line: str):
        super().__init__(f"unknown action word in line: {line!r}")
        self.line = line


class MalformedLine(PlanParseError):
    def __init__(self, line: str):
        super().__init__(f"malformed plan line: {line!r}")
        self.line = line


_STANDARD_RULES = """\
I am playing with a set of blocks where I need to arrange the blocks into stacks. Here are the actions I can do

Pick up a block
Unstack a block from on top of another block
Put down a block
Stack a block on top of another block

I have the following restrictions on my actions:
I can only pick up or unstack one block at a time.
I can only pick up or unstack a block if my hand is empty.
I can only pick up a block if the block is on the table and the block is clear.
A block is clear if the block has no other blocks on top of it and if the block is not picked up.
I can only unstack a block from on top of another block if the block I am unstacking was really on top of the other block.
I can only unstack a block from on top of another block if the block I am unstacking is clear.
Once I pick up or unstack a block, I am holding the block.
I can only put down a block that I am holding.
I can only stack a block on top of another block if I am holding the block being stacked.
I can only stack a block on top of another block if the block onto which I am stacking the block is clear.
Once I put down or stack a block, my hand becomes empty.
Once you stack a block on top of a second block, the second block is no longer clear."""


@dataclass(frozen=True)
class PromptTemplate:
    """Fixed scaffolding for one prompt style.

    ``kind`` selects the wording; ``blank_lines`` controls the spacing
    around the statement and plan sections (the standard layout separates
    them with blank lines, the mystery layout does not).
    """

    kind: str
    blank_lines: bool
    goal_period: bool

    def __post_init__(self):
        if self.kind not in (STANDARD, MYSTERY):
            raise ValueError(f"unknown template kind {self.kind!r}")


STANDARD_TEMPLATE = PromptTemplate(STANDARD, blank_lines=True, goal_period=False)
MYSTERY_TEMPLATE = PromptTemplate(MYSTERY, blank_lines=False, goal_period=True)


def template_for(kind: str) -> PromptTemplate:
    return {STANDARD: STANDARD_TEMPLATE, MYSTERY: MYSTERY_TEMPLATE}[kind]


def _block(i: int) -> str:
    return f"Block {label(i)}"


def _cap(word: str) -> str:
    return word[:1].upper() + word[1:]


# ---- facts ------------------------------------------------------------------

def _standard_fact(a: Atom) -> str:
    if a.name == "clear":
        return f"{_block(a.args[0])} is clear"
    if a.name == "handempty":
        return "the hand is empty"
    if a.name == "holding":
        return f"I am holding {_block(a.args[0])}"
    if a.name == "on":
        return f"{_block(a.args[0])} is on top of {_block(a.args[1])}"
    return f"{_block(a.args[0])} is on the table"


def _mystery_fact(a: Atom, naming: Naming) -> str:
    word = naming.predicate_map[a.name]
    if a.name == "handempty":
        return word
    if a.name == "on":
        return f"{_block(a.args[0])} {word} {_block(a.args[1])}"
    return f"{word} {_block(a.args[0])}"


def render_fact(a: Atom, naming: Naming, template: PromptTemplate) -> str:
    if template.kind == STANDARD:
        return _standard_fact(a)
    return _mystery_fact(a, naming)


def render_action(action: Action, naming: Naming, template: PromptTemplate) -> str:
    word = naming.action_map[action.kind]
    x = _block(action.x)
    if action.y is None:
        return f"{word} {x}"
    y = _block(action.y)
    if template.kind == MYSTERY:
        return f"{word} {x} from {y}"
    if action.kind == "stack":
        return f"{word} {x} on top of {y}"
    return f"{word} {x} from on top of {y}"


# ---- rules ------------------------------------------------------------------

def _mystery_rules(naming: Naming) -> str:
    act = {k: _cap(v) for k, v in naming.action_map.items()}
    p = {k: _cap(v) for k, v in naming.predicate_map.items()}
    clear_o, table_o, held_o = f"{p['clear']} object", f"{p['ontable']} object", f"{p['holding']} object"
    clear_other = f"{p['clear']} other object"
    rel = f"Object {p['on']} other object"
    hand = p["handempty"]
    lines = [
        "I am playing with a set of objects. Here are the actions I can do:",
        f"   {act['pick-up']} object",
        f"   {act['unstack']} object from another object",
        f"   {act['put-down']} object",
        f"   {act['stack']} object from another object",
        "",
        "I have the following restrictions on my actions:",
        f"    To perform {act['pick-up']} action, the following facts need to be true: {clear_o}, {table_o}, {hand}.",
        f"    Once {act['pick-up']} action is performed the following facts will be true: {held_o}.",
        f"    Once {act['pick-up']} action is performed the following facts will be false: {clear_o}, {table_o}, {hand}.",
        f"    To perform {act['put-down']} action, the following facts need to be true: {held_o}.",
        f"    Once {act['put-down']} action is performed the following facts will be true: {clear_o}, {table_o}, {hand}.",
        f"    Once {act['put-down']} action is performed the following facts will be false: {held_o}.",
        f"    To perform {act['stack']} action, the following needs to be true: {clear_other}, {held_o}.",
        f"    Once {act['stack']} action is performed the following will be true: {hand}, {clear_o}, {rel}.",
        f"    Once {act['stack']} action is performed the following will be false: {clear_other}, {held_o}.",
        f"    To perform {act['unstack']} action, the following needs to be true: {rel}, {clear_o}, {hand}.",
        f"    Once {act['unstack']} action is performed the following will be true: {held_o}, {clear_other}.",
        f"    Once {act['unstack']} action is performed the following will be false:, {rel}, {clear_o}, {hand}.",
    ]
    return "\n".join(lines)


def render_rules(naming: Naming, template: PromptTemplate) -> str:
    if template.kind == STANDARD:
        return _STANDARD_RULES
    return _mystery_rules(naming)


# ---- statements and prompts -------------------------------------------------

def render_statement(initial: State, goal: Sequence[Atom], naming: Naming, template: PromptTemplate) -> str:
    facts = ", ".join(render_fact(a, naming, template) for a in initial.atoms)
    goals = " and ".join(render_fact(g, naming, template) for g in goal)
    goal_line = f"My goal is to have that {goals}" + ("." if template.goal_period else "")
    return f"[STATEMENT]\nAs initial conditions I have that, {facts}.\n{goal_line}"


def render_plan(plan: Sequence[Action], naming: Naming, template: PromptTemplate) -> str:
    body = "\n".join(render_action(a, naming, template) for a in plan)
    return f"[PLAN]\n{body}\n[PLAN END]"


def _check(naming: Naming, template: PromptTemplate) -> None:
    if template.kind == STANDARD and naming != IDENTITY:
        raise ValueError("the standard template only renders the identity naming")


def render_example(
    puzzle: Puzzle, plan: Sequence[Action], naming: Naming, template: PromptTemplate
) -> str:
    """Rules plus one worked example, ending at the example's ``[PLAN END]``."""
    _check(naming, template)
    gap = "\n\n" if template.blank_lines else "\n"
    return (
        render_rules(naming, template)
        + "\n\nHere is an example problem:"
        + gap
        + render_statement(puzzle.initial, puzzle.goal, naming, template)
        + gap
        + "My plan is as follows:"
        + gap
        + render_plan(plan, naming, template)
    )


def render_prompt(
    puzzle: Puzzle,
    naming: Naming = IDENTITY,
    template: PromptTemplate = STANDARD_TEMPLATE,
    example: tuple[Puzzle, Sequence[Action]] = (EXAMPLE_PUZZLE, EXAMPLE_PLAN),
) -> str:
    """Full prompt: rules, worked example, then the target puzzle's statement."""
    gap = "\n\n" if template.blank_lines else "\n"
    head = render_example(example[0], example[1], naming, template)
    return (
        head
        + "\n\n"
        + render_statement(puzzle.initial, puzzle.goal, naming, template)
        + gap
        + "My plan is as follows:"
        + "\n"
    )


# ---- parsing ----------------------------------------------------------------

_OPEN = re.compile(r"\[PLAN\]", re.IGNORECASE)
_CLOSE = re.compile(r"\[PLAN END\]", re.IGNORECASE)
_LINE = re.compile(
    r"^(?P<verb>[a-z][a-z' -]*?)\s+block\s+(?P<x>[a-z])"
    r"(?:\s+(?:from\s+on\s+top\s+of|from|on\s+top\s+of|onto|on)\s+block\s+(?P<y>[a-z]))?$"
)
_BULLET = re.compile(r"^(?:[-*•]+|\d+[.)]|step\s+\d+[:.)]?)\s*")
_EDGE = "\"'`()[]{}.,;:!? \t"


def plan_region(text: str) -> str:
    """Body of the last ``[PLAN] ... [PLAN END]`` region.

    If the last closing marker has no opening marker before it, the region
    starts at the beginning of the text (a completion that continues a
    prompt ending just before the plan).
    """
    closes = list(_CLOSE.finditer(text))
    if not closes:
        raise NoPlanBlock("no [PLAN END] marker in text")
    end = closes[-1].start()
    opens = [m for m in _OPEN.finditer(text, 0, end)]
    start = opens[-1].end() if opens else 0
    if not opens and not text[:end].strip():
        raise NoPlanBlock("empty plan region")
    return text[start:end]


def parse_line(line: str, naming: Naming) -> Action:
    norm = _BULLET.sub("", line.strip().lower()).strip(_EDGE)
    norm = " ".join(norm.split())
    m = _LINE.match(norm)
    if m is None:
        raise MalformedLine(line)
    kind = naming.action_for(m["verb"])
    if kind is None:
        raise UnknownActionWord(line)
    try:
        x = block_index(m["x"])
        y = block_index(m["y"]) if m["y"] else None
        return Action(kind, x, y)
    except ValueError:
        raise MalformedLine(line) from None


def parse_plan(text: str, naming: Naming = IDENTITY) -> list[Action]:
    region = plan_region(text)
    return [parse_line(ln, naming) for ln in region.splitlines() if ln.strip()]
