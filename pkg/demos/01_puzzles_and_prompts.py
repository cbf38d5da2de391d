"""Generate a puzzle, render it under two namings, and check answers with the verifier."""

from fluidreps.blocksworld import bfs_solve, generate_puzzle, verify_plan
from fluidreps.namings import IDENTITY, builtin_naming
from fluidreps.prompts import MYSTERY_TEMPLATE, STANDARD_TEMPLATE, parse_plan, render_plan, render_prompt

puzzle = generate_puzzle(4, seed=0)
print("initial:", puzzle.initial)
print("goal:   ", ", ".join(str(g) for g in puzzle.goal))

plan = bfs_solve(puzzle)
print(f"\nshortest plan has {len(plan)} steps")

# the same plan, spelled in the standard words and in an obfuscated naming
print(render_plan(plan, IDENTITY, STANDARD_TEMPLATE))
mystery = builtin_naming(4)
print(render_plan(plan, mystery, MYSTERY_TEMPLATE))

prompt = render_prompt(puzzle, mystery, MYSTERY_TEMPLATE)
print(f"\nmystery prompt: {len(prompt)} characters, last line {prompt.splitlines()[-1]!r}")

# an answer is scored by parsing its last plan block and simulating it
answer = "Let me think...\n" + render_plan(plan, mystery, MYSTERY_TEMPLATE)
print("verdict:", verify_plan(puzzle, parse_plan(answer, mystery)).outcome)

broken = plan[1:]
v = verify_plan(puzzle, broken)
print(f"dropping the first step: {v.outcome} at step {v.index} ({v.reason})")
