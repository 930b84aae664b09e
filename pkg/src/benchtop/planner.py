"""Recursive task planner: disambiguate, classify, decompose, ground names,
and infer success predicates, one small prompt per reasoning step.

Every operation builds a byte-stable prompt, sends it to a completion
backend (HTTP, cached, or rule-based), and parses a structured answer out
of the completion. A full tree build disambiguates once at the root, then
recurses: composite nodes decompose, single-object nodes identify the part
to interact with (plus pick & place names for rigid single-link objects),
and every node gets exactly one parseable success predicate.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from .errors import DepthExceeded, InferenceRejected, MalformedCompletion
from .llm import build_prompt
from .predicate import PredicateAst, parse_predicate, pretty_print
from .world import WorldState, parse_scene_summary, scene_summary

MAX_TREE_DEPTH = 6


@dataclass
class TaskNode:
    """One node of the plan tree."""

    description: str
    kind: str = "single-object"            # "composite" | "single-object"
    children: list = field(default_factory=list)
    object_part: Optional[str] = None
    pick_place: Optional[tuple] = None
    success: Optional[PredicateAst] = None
    status: str = "pending"                # pending | active | succeeded | failed
    path: tuple = ()

    def is_leaf(self) -> bool:
        return self.kind == "single-object"

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()

    def leaves(self) -> list:
        return [n for n in self.walk() if n.is_leaf()]


@dataclass
class TaskTree:
    root: TaskNode
    source_task: str
    scene: str

    def node_at(self, path: tuple) -> TaskNode:
        node = self.root
        for i in path:
            node = node.children[i]
        return node

    def describe(self) -> str:
        lines = []
        for node in self.root.walk():
            indent = "    " * len(node.path)
            pred = pretty_print(node.success) if node.success is not None else "?"
            lines.append(f"{indent}{node.description}  [{pred}]")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Pipeline operations
# ---------------------------------------------------------------------------

def _answer_field(completion: str) -> str:
    for line in completion.splitlines():
        if line.strip().lower().startswith("answer:"):
            return line.strip()[len("answer:"):].strip()
    raise MalformedCompletion(f"no answer field in completion: {completion[:80]!r}")


def disambiguate(task: str, scene: str, backend) -> str:
    """Rewrite an ambiguous task description into a specific one."""
    completion = backend.complete(build_prompt("disambiguate", task, scene))
    return _answer_field(completion)


def classify_arity(task: str, scene: str, backend) -> str:
    """"one" or "multiple": does the task touch one object or several?"""
    completion = backend.complete(build_prompt("one_or_multiple", task, scene),
                                  max_tokens=24)
    answer = _answer_field(completion).lower().rstrip(".")
    if answer not in ("one", "multiple"):
        raise MalformedCompletion(f"expected one|multiple, got {answer!r}")
    return answer


def decompose(task: str, scene: str, backend) -> list:
    """Numbered-list decomposition into subtask strings."""
    completion = backend.complete(build_prompt("subtasks", task, scene), max_tokens=400)
    if "answer:" not in completion:
        raise MalformedCompletion("no answer field in decomposition")
    tail = completion.split("answer:", 1)[1]
    subtasks = []
    for line in tail.splitlines():
        m = re.match(r"\s*-?\s*\d+\.\s*(.+?)\s*$", line)
        if m:
            subtasks.append(m.group(1))
    if not subtasks:
        raise MalformedCompletion("decomposition contained no numbered items")
    return subtasks


def identify_part(task: str, scene: str, backend) -> str:
    """Scene name of the object part to interact with."""
    completion = backend.complete(build_prompt("object_part", task, scene), max_tokens=24)
    if "answer:" in completion:
        name = completion.split("answer:", 1)[1].strip()
    else:
        name = completion.strip()
    name = name.splitlines()[0].strip().strip('"').rstrip(".")
    names = {n for n, _ in parse_scene_summary(scene)}
    if name not in names:
        raise MalformedCompletion(f"part {name!r} is not in the scene")
    return name


def pick_place_targets(task: str, scene: str, backend) -> tuple:
    """(pick name, place name) for a rigid single-link object task."""
    completion = backend.complete(build_prompt("pick_place", task, scene), max_tokens=64)
    pick = place = None
    for line in completion.splitlines():
        s = line.strip()
        if s.lower().startswith("pick:"):
            pick = s[len("pick:"):].strip().strip('"')
        elif s.lower().startswith("place:"):
            place = s[len("place:"):].strip().strip('"')
    if pick is None or place is None:
        raise MalformedCompletion(f"missing pick/place fields: {completion[:80]!r}")
    names = {n for n, _ in parse_scene_summary(scene)}
    for name in (pick, place):
        if name not in names:
            raise MalformedCompletion(f"name {name!r} is not in the scene")
    return pick, place


def infer_success(task: str, scene: str, backend) -> PredicateAst:
    """Success predicate for the task, parsed from the completion."""
    completion = backend.complete(build_prompt("success", task, scene), max_tokens=120)
    text = completion.strip()
    if text.startswith("return"):
        text = text[len("return"):].strip()
    text = text.splitlines()[0].strip() if text else text
    names = {n for n, _ in parse_scene_summary(scene)}
    try:
        return parse_predicate(text, names)
    except Exception as exc:
        raise InferenceRejected(f"unparsable success condition {text!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# Tree construction
# ---------------------------------------------------------------------------

def build_task_tree(task: str, world: WorldState, backend,
                    max_depth: int = MAX_TREE_DEPTH) -> TaskTree:
    """Disambiguate once, then recursively classify / decompose / ground."""
    scene = scene_summary(world)
    root_desc = disambiguate(task, scene, backend)

    def build(desc: str, depth: int, path: tuple) -> TaskNode:
        if depth > max_depth:
            raise DepthExceeded(f"recursion exceeded {max_depth} at {path}")
        try:
            arity = classify_arity(desc, scene, backend)
            if arity == "multiple":
                node = TaskNode(desc, kind="composite", path=path)
                subtasks = decompose(desc, scene, backend)
                node.children = [build(sub, depth + 1, path + (i,))
                                 for i, sub in enumerate(subtasks)]
            else:
                node = TaskNode(desc, kind="single-object", path=path)
                node.object_part = identify_part(desc, scene, backend)
                if _is_rigid_single_link(world, node.object_part):
                    node.pick_place = pick_place_targets(desc, scene, backend)
            node.success = infer_success(desc, scene, backend)
            return node
        except (MalformedCompletion, InferenceRejected) as exc:
            raise type(exc)(f"at node {path or 'root'} ({desc!r}): {exc}") from exc

    root = build(root_desc, 0, ())
    return TaskTree(root, task, scene)


def _is_rigid_single_link(world: WorldState, part: str) -> bool:
    from .errors import NotArticulated
    try:
        world.find_articulation_joint(part)
        return False
    except NotArticulated:
        pass
    body, link = world.find_link(part)
    return not body.fixed and len(body.links) == 1
