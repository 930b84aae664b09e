"""Success-condition DSL: a safe, closed stand-in for generated code snippets.

Grammar::

    expr := term (('and'|'or') term)*
    term := 'not'? call | '(' expr ')'
    call := ident '(' quoted_name (',' quoted_name)? ')'

Builtins are contact/2, activated/1, deactivated/1, on_top_of/2, inside/2.
Identifiers may carry a ``check_`` prefix (the prompt surface form) and an
``init_`` prefix that evaluates the builtin on the episode-initial state
instead of the final one. Everything else is a parse error, which callers
treat as a verification failure.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import NotArticulated, PredicateSyntaxError, UnknownBuiltin, UnknownSceneName
from .geometry import CONTACT_TOL, aabb_containment_fraction, aabb_of

MAX_DEPTH = 16
ACTIVATION_BAND = 0.1        # "near" a limit = within 10% of the joint range
ON_TOP_DOT = 0.99

_ARITY = {"contact": 2, "activated": 1, "deactivated": 1, "on_top_of": 2, "inside": 2}


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Call:
    builtin: str
    args: tuple
    on_init: bool = False

    def pretty(self) -> str:
        prefix = "init_" if self.on_init else ""
        args = ", ".join(f'"{a}"' for a in self.args)
        return f"{prefix}{self.builtin}({args})"


@dataclass(frozen=True)
class Not:
    child: object

    def pretty(self) -> str:
        return f"not {_wrap(self.child)}"


@dataclass(frozen=True)
class BoolOp:
    op: str                  # "and" | "or"
    children: tuple

    def pretty(self) -> str:
        return f" {self.op} ".join(_wrap(c) for c in self.children)


PredicateAst = Call | Not | BoolOp


def _wrap(node) -> str:
    text = node.pretty()
    return f"({text})" if isinstance(node, BoolOp) else text


def ast_depth(node) -> int:
    if isinstance(node, Call):
        return 1
    if isinstance(node, Not):
        return 1 + ast_depth(node.child)
    return 1 + max(ast_depth(c) for c in node.children)


def pretty_print(node) -> str:
    return node.pretty()


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<string>"[^"]*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<comma>,)
""", re.VERBOSE)


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise PredicateSyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, tokens, scene_names):
        self.tokens = tokens
        self.i = 0
        self.scene_names = scene_names

    def peek(self):
        return self.tokens[self.i]

    def take(self, kind, expected):
        tok = self.tokens[self.i]
        if tok[0] != kind:
            raise PredicateSyntaxError(f"unexpected {tok[1]!r}", tok[2], expected)
        self.i += 1
        return tok

    def parse_expr(self):
        node = self.parse_term()
        children = [node]
        op = None
        while self.peek()[0] == "ident" and self.peek()[1] in ("and", "or"):
            tok_op = self.take("ident", ("and", "or"))[1]
            if op is None:
                op = tok_op
            elif tok_op != op:
                # mixed chain: fold what we have to keep precedence explicit
                children = [BoolOp(op, tuple(children))]
                op = tok_op
            children.append(self.parse_term())
        if op is None:
            return node
        return BoolOp(op, tuple(children))

    def parse_term(self):
        kind, text, pos = self.peek()
        if kind == "ident" and text == "not":
            self.i += 1
            return Not(self.parse_term())
        if kind == "lparen":
            self.i += 1
            node = self.parse_expr()
            self.take("rparen", (")",))
            return node
        if kind == "ident":
            return self.parse_call()
        raise PredicateSyntaxError(f"unexpected {text!r}", pos, ("not", "(", "builtin name"))

    def parse_call(self):
        kind, name, pos = self.take("ident", ("builtin name",))
        on_init = False
        raw = name
        if raw.startswith("init_"):
            on_init = True
            raw = raw[len("init_"):]
        elif raw.startswith("final_"):
            raw = raw[len("final_"):]
        if raw.startswith("check_"):
            raw = raw[len("check_"):]
        if raw not in _ARITY:
            raise UnknownBuiltin(f"{name!r} at position {pos}")
        self.take("lparen", ("(",))
        args = [self.take("string", ("quoted name",))[1].strip('"')]
        if self.peek()[0] == "comma":
            self.i += 1
            args.append(self.take("string", ("quoted name",))[1].strip('"'))
        self.take("rparen", (")", ","))
        # tolerate paper-style completions that pass the state as argument 0
        if args and args[0] in ("init_state", "final_state"):
            on_init = args[0] == "init_state"
            args = args[1:]
        if len(args) != _ARITY[raw]:
            raise PredicateSyntaxError(
                f"{raw} takes {_ARITY[raw]} argument(s), got {len(args)}", pos)
        if self.scene_names is not None:
            for a in args:
                if a not in self.scene_names:
                    raise UnknownSceneName(a)
        return Call(raw, tuple(args), on_init)


def _strip_state_args(text: str) -> str:
    # check_x(final_state, "a") -> check_x("a");  check_x(init_state, ...) -> init_check_x(...)
    def sub(m):
        name, state = m.group(1), m.group(2)
        prefix = "init_" if state == "init_state" else ""
        return f"{prefix}{name}("
    return re.sub(r"([A-Za-z_][A-Za-z0-9_]*)\(\s*(init_state|final_state)\s*,\s*", sub, text)


def parse_predicate(text: str, scene_names=None) -> PredicateAst:
    """Parse a success expression, validating names against the scene.

    Accepts both the DSL surface form and the paper-style form with a
    leading init_state/final_state argument.
    """
    cleaned = _strip_state_args(text.strip())
    tokens = _tokenize(cleaned)
    parser = _Parser(tokens, set(scene_names) if scene_names is not None else None)
    node = parser.parse_expr()
    kind, tok, pos = parser.peek()
    if kind != "eof":
        raise PredicateSyntaxError(f"trailing input {tok!r}", pos, ("end of input",))
    if ast_depth(node) > MAX_DEPTH:
        raise PredicateSyntaxError(f"expression deeper than {MAX_DEPTH}", 0)
    return node


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def eval_predicate(ast: PredicateAst, init, final) -> bool:
    """Evaluate over (episode-initial, final) states. Pure; never mutates."""
    if isinstance(ast, Call):
        world = init if ast.on_init else final
        fn = _BUILTINS[ast.builtin]
        return bool(fn(world, *ast.args))
    if isinstance(ast, Not):
        return not eval_predicate(ast.child, init, final)
    results = (eval_predicate(c, init, final) for c in ast.children)
    return all(results) if ast.op == "and" else any(results)


def check_contact(world, a: str, b: str) -> bool:
    """True iff any link of a touches any link of b (within CONTACT_TOL)."""
    links_a = world.resolve_links(a)
    links_b = world.resolve_links(b)
    if not links_a:
        raise UnknownSceneName(a)
    if not links_b:
        raise UnknownSceneName(b)
    names_a = {lk.name for lk in links_a}
    names_b = {lk.name for lk in links_b}
    return bool(world.contacts_between(names_a, names_b))


def check_activated(world, part: str) -> bool:
    """Joint value within 10% of its upper limit."""
    _, joint = world.find_articulation_joint(part)
    lo, hi = joint.limits
    return joint.value >= lo + (1.0 - ACTIVATION_BAND) * (hi - lo)


def check_deactivated(world, part: str) -> bool:
    """Joint value within 10% of its lower limit."""
    _, joint = world.find_articulation_joint(part)
    lo, hi = joint.limits
    return joint.value <= lo + ACTIVATION_BAND * (hi - lo)


def check_on_top_of(world, a: str, b: str) -> bool:
    """Contact with some contact normal (into a) within 8 degrees of +z."""
    links_a = world.resolve_links(a)
    links_b = world.resolve_links(b)
    if not links_a:
        raise UnknownSceneName(a)
    if not links_b:
        raise UnknownSceneName(b)
    names_a = {lk.name for lk in links_a}
    names_b = {lk.name for lk in links_b}
    for c in world.contacts_between(names_a, names_b):
        if c.normal[2] > ON_TOP_DOT:
            return True
    return False


def check_inside(world, a: str, container: str) -> bool:
    """At least 75% of a's AABB volume inside the container's AABB."""
    inner = aabb_of(world, a)
    outer = aabb_of(world, container)
    return aabb_containment_fraction(inner, outer) >= 0.75


_BUILTINS = {
    "contact": check_contact,
    "activated": check_activated,
    "deactivated": check_deactivated,
    "on_top_of": check_on_top_of,
    "inside": check_inside,
}


def validate_against_scene(ast: PredicateAst, scene_names) -> None:
    names = set(scene_names)
    for call in iter_calls(ast):
        for a in call.args:
            if a not in names:
                raise UnknownSceneName(a)


def iter_calls(ast: PredicateAst):
    if isinstance(ast, Call):
        yield ast
    elif isinstance(ast, Not):
        yield from iter_calls(ast.child)
    else:
        for c in ast.children:
            yield from iter_calls(c)
