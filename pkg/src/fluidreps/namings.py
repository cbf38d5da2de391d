"""Mystery BlocksWorld namings: surface words for each canonical action and predicate."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .blocksworld import ACTIONS

PREDICATE_SLOTS = ("ontable", "clear", "handempty", "holding", "on")
CONCEPTS = ACTIONS + PREDICATE_SLOTS

# naming id -> (pick-up, put-down, stack, unstack)
_ACTION_TABLE = {
    1: ("attack", "succumb", "overcome", "feast"),
    2: ("illuminate", "silence", "distill", "divest"),
    3: ("tltezi", "jchntg", "deesdu", "xavirm"),
    4: ("swim", "fire", "deduct", "respond"),
    5: ("whisper", "calculate", "orbit", "navigate"),
    6: ("decode", "hibernate", "thunder", "quench"),
    7: ("explore", "ripen", "weave", "bloom"),
    8: ("harvest", "ignite", "carve", "suspend"),
    9: ("construct", "demolish", "reinforce", "collapse"),
    10: ("plant", "harvest", "nurture", "prune"),
    11: ("prosecute", "acquit", "testify", "appeal"),
    12: ("broadcast", "receive", "encrypt", "decode"),
    13: ("whisper", "banish", "entangle", "unmask"),
    14: ("question", "resolve", "interweave", "liberate"),
    15: ("summon", "dismiss", "fold", "unravel"),
    16: ("open", "close", "connect", "disconnect"),
    17: ("chop", "serve", "season", "taste"),
    18: ("release", "grasp", "separate", "combine"),
    19: ("transcend", "sublimate", "actualize", "deconstruct"),
    20: ("flixate", "grample", "chonder", "sprill"),
}

# naming id -> (ontable, clear, handempty, holding, on)
_PREDICATE_TABLE = {
    1: ("planet", "province", "harmony", "craves", "pain"),
    2: ("aura", "essence", "nexus", "harmonizes", "pulse"),
    3: ("oxtslo", "adohre", "jqlyol", "gszswg", "ivbmyg"),
    4: ("fever", "marble", "craving", "mines", "shadow"),
    5: ("crystal", "fountain", "autumn", "illuminates", "legend"),
    6: ("prism", "hollow", "zenith", "echoes", "emblem"),
    7: ("fossil", "dialect", "equinox", "fractures", "symphony"),
    8: ("nebula", "labyrinth", "mirage", "captivates", "cascade"),
    9: ("eclipse", "vintage", "paradox", "resonates", "twilight"),
    10: ("crystal", "puzzle", "vortex", "whispers", "cipher"),
    11: ("nebula", "molecule", "anthem", "silhouettes", "voltage"),
    12: ("horizon", "compass", "solstice", "orbits", "quantum"),
    13: ("tethered", "unburdened", "hollow", "shrouds", "consuming"),
    14: ("echoing", "sovereign", "potential", "obscures", "contemplating"),
    15: ("suspended", "timeless", "interval", "transcends", "enveloping"),
    16: ("paired", "single", "balanced", "matches", "mirrors"),
    17: ("plated", "fresh", "kitchen", "simmering", "marinated"),
    18: ("floating", "occupied", "crowded", "repels", "avoids"),
    19: ("phenomenal", "unmediated", "dialectical", "instantiates", "necessitates"),
    20: ("morkled", "thristy", "plimmish", "vexates", "quorbles"),
}

# Namings used in the main experiments, and the one left out of representation analyses
# because the model recognises it as plain BlocksWorld.
PRIMARY_NAMINGS = tuple(range(1, 16))
EXCLUDED_NAMINGS = (3,)
ANALYSIS_NAMINGS = tuple(i for i in PRIMARY_NAMINGS if i not in EXCLUDED_NAMINGS)

IDENTITY_ID = 0


class UnknownNaming(KeyError):
    pass


class InvalidNaming(ValueError):
    pass


@dataclass(frozen=True)
class Naming:
    id: int
    action_map: Mapping[str, str]
    predicate_map: Mapping[str, str]

    def __post_init__(self):
        if set(self.action_map) != set(ACTIONS):
            raise InvalidNaming(f"action map must cover exactly {ACTIONS}")
        if set(self.predicate_map) != set(PREDICATE_SLOTS):
            raise InvalidNaming(f"predicate map must cover exactly {PREDICATE_SLOTS}")
        acts = [w.lower() for w in self.action_map.values()]
        preds = [w.lower() for w in self.predicate_map.values()]
        if len(set(acts)) != len(acts):
            raise InvalidNaming(f"naming {self.id}: duplicate action words")
        if len(set(preds)) != len(preds):
            raise InvalidNaming(f"naming {self.id}: duplicate predicate words")
        shared = set(acts) & set(preds)
        if shared:
            raise InvalidNaming(f"naming {self.id}: words used as both action and predicate: {sorted(shared)}")
        if any(not w.strip() for w in acts + preds):
            raise InvalidNaming(f"naming {self.id}: empty surface word")
        object.__setattr__(self, "action_map", dict(self.action_map))
        object.__setattr__(self, "predicate_map", dict(self.predicate_map))

    def surface(self, concept: str) -> str:
        if concept in self.action_map:
            return self.action_map[concept]
        return self.predicate_map[concept]

    def action_for(self, word: str) -> str | None:
        w = " ".join(word.lower().split())
        for k, v in self.action_map.items():
            if v.lower() == w:
                return k
        return None

    def surface_words(self, concepts=CONCEPTS) -> dict[str, str]:
        return {c: self.surface(c) for c in concepts}

    def with_swapped(self, a: str = "holding", b: str = "on") -> Naming:
        """Copy with two predicate words exchanged.

        Some mystery prompts use naming 1's ``craves`` relationally and
        ``pain`` for the held block, the reverse of the built-in table;
        ``builtin_naming(1).with_swapped()`` gives that reading.
        """
        pm = dict(self.predicate_map)
        pm[a], pm[b] = pm[b], pm[a]
        return Naming(self.id, self.action_map, pm)

    def to_json(self) -> dict:
        return {"id": self.id, "action_map": dict(self.action_map), "predicate_map": dict(self.predicate_map)}

    @classmethod
    def from_json(cls, obj: Mapping) -> Naming:
        return cls(int(obj["id"]), dict(obj["action_map"]), dict(obj["predicate_map"]))


IDENTITY = Naming(
    IDENTITY_ID,
    {"pick-up": "pick up", "put-down": "put down", "stack": "stack", "unstack": "unstack"},
    {
        "ontable": "on the table",
        "clear": "clear",
        "handempty": "hand is empty",
        "holding": "holding",
        "on": "on top of",
    },
)


def builtin_naming(naming_id: int) -> Naming:
    if naming_id == IDENTITY_ID:
        return IDENTITY
    if naming_id not in _ACTION_TABLE:
        raise UnknownNaming(f"no built-in naming {naming_id}; ids are 1..20 (0 = identity)")
    return Naming(
        naming_id,
        dict(zip(ACTIONS, _ACTION_TABLE[naming_id])),
        dict(zip(PREDICATE_SLOTS, _PREDICATE_TABLE[naming_id])),
    )


def load_naming(path: str | Path) -> Naming:
    return Naming.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def save_naming(naming: Naming, path: str | Path) -> None:
    Path(path).write_text(json.dumps(naming.to_json(), indent=2) + "\n", encoding="utf-8")
