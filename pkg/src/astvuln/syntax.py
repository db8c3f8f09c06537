"""Unified syntax trees, function slicing and root-to-leaf kind paths.

Parsing goes through a :class:`ParserProvider` registered per language tag.
Two providers exist:

* :class:`ReferenceParser`, a recursive-descent parser for a small C-like
  subset (functions, declarations, if/else, while, for, return, expressions).
  It is registered for ``"c"`` and ``"ref"`` and is what the test-suite uses.
* :class:`TreeSitterProvider`, an adapter around the optional ``tree_sitter``
  bindings for real grammars. It only imports ``tree_sitter`` when used.

Trees only contain *named* nodes; punctuation and operators are not nodes, so
an offset that lands on them resolves to the smallest enclosing node.
Parsing is lenient: unexpected input becomes ``ERROR`` nodes.
"""

from __future__ import annotations

import bisect
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterator, Sequence

from .exceptions import OutOfRangeError, UnsupportedLanguageError

ERROR_KIND = "ERROR"
ROOT_KIND = "translation_unit"
ANONYMOUS = "<anonymous>"

#: node kinds that constitute a "function" for each language tag
FUNCTION_KINDS: dict[str, frozenset[str]] = {
    "ref": frozenset({"function_definition"}),
    "c": frozenset({"function_definition"}),
    "cpp": frozenset({"function_definition", "lambda_expression"}),
    "java": frozenset({"method_declaration", "constructor_declaration", "lambda_expression"}),
    "python": frozenset({"function_definition"}),
    "go": frozenset({"function_declaration", "method_declaration", "func_literal"}),
}

# children skipped when looking for a function's name
_NAME_SKIP_KINDS = frozenset(
    {
        "compound_statement",
        "block",
        "parameter_list",
        "parameters",
        "formal_parameters",
        "body",
    }
)


@dataclass(frozen=True)
class Node:
    kind: str
    start: int
    end: int
    children: tuple[int, ...]
    parent: int | None

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class SyntaxTree:
    nodes: tuple[Node, ...]
    root: int = 0

    def __len__(self):
        return len(self.nodes)

    def iter_preorder(self, index: int | None = None) -> Iterator[int]:
        stack = [self.root if index is None else index]
        while stack:
            i = stack.pop()
            yield i
            stack.extend(reversed(self.nodes[i].children))

    def depth(self, index: int) -> int:
        """Number of nodes on the root-to-``index`` chain (root has depth 1)."""
        d = 1
        while self.nodes[index].parent is not None:
            index = self.nodes[index].parent
            d += 1
        return d

    def to_sexpr(self) -> str:
        """Indented s-expression with ``kind [start,end]`` per node."""
        lines: list[str] = []

        def emit(i: int, indent: int) -> None:
            node = self.nodes[i]
            head = f"{'  ' * indent}({node.kind} [{node.start},{node.end}]"
            if not node.children:
                lines.append(head + ")")
                return
            lines.append(head)
            for c in node.children:
                emit(c, indent + 1)
            lines[-1] += ")"

        emit(self.root, 0)
        return "\n".join(lines)

    def check(self) -> None:
        """Raise ``AssertionError`` if any structural invariant is violated."""
        roots = [i for i, n in enumerate(self.nodes) if n.parent is None]
        assert roots == [self.root], "exactly one root expected"
        seen = set()
        for i in self.iter_preorder():
            assert i not in seen, "cycle"
            seen.add(i)
            node = self.nodes[i]
            prev_end = node.start
            for c in node.children:
                child = self.nodes[c]
                assert child.parent == i, "parent/child mismatch"
                assert node.start <= child.start <= child.end <= node.end, "child escapes parent"
                assert child.start >= prev_end, "siblings overlap"
                prev_end = child.end
        assert len(seen) == len(self.nodes), "unreachable nodes"


@dataclass(frozen=True)
class AstPath:
    kinds: tuple[str, ...]

    def __len__(self):
        return len(self.kinds)


@dataclass(frozen=True)
class FunctionSlice:
    name: str
    span: tuple[int, int]
    source: bytes


class _TreeBuilder:
    """Append-only node store; finalised into an immutable SyntaxTree."""

    def __init__(self):
        self.kinds: list[str] = []
        self.spans: list[list[int]] = []
        self.children: list[list[int]] = []
        self.parents: list[int | None] = []

    def add(self, kind: str, start: int, end: int, parent: int | None) -> int:
        idx = len(self.kinds)
        self.kinds.append(kind)
        self.spans.append([start, end])
        self.children.append([])
        self.parents.append(parent)
        if parent is not None:
            self.children[parent].append(idx)
        return idx

    def build(self) -> SyntaxTree:
        # renumber in pre-order so that index order matches source order
        order: list[int] = []
        stack = [0]
        while stack:
            i = stack.pop()
            order.append(i)
            stack.extend(reversed(self.children[i]))
        remap = {old: new for new, old in enumerate(order)}
        nodes = []
        for old in order:
            parent = self.parents[old]
            nodes.append(
                Node(
                    self.kinds[old],
                    self.spans[old][0],
                    self.spans[old][1],
                    tuple(remap[c] for c in self.children[old]),
                    None if parent is None else remap[parent],
                )
            )
        return SyntaxTree(tuple(nodes), 0)


class ParserProvider(ABC):
    """Turns source bytes into a :class:`SyntaxTree`. Must be reentrant."""

    @abstractmethod
    def parse(self, source: bytes) -> SyntaxTree: ...


# -- reference grammar ---------------------------------------------------------

_TOKEN_RE = re.compile(
    rb"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*|/\*.*?(?:\*/|\Z))
  | (?P<preproc>\#[^\n]*)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<number>(?:0[xX][0-9A-Fa-f]+|\d+\.?\d*(?:[eE][+-]?\d+)?)[uUlLfF]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*"?)
  | (?P<char>'(?:[^'\\\n]|\\.)*'?)
  | (?P<op><<=|>>=|\.\.\.|->|\+\+|--|<<|>>|<=|>=|==|!=|&&|\|\||[-+*/%&|^]=|[-+*/%<>=!&|^~?:;,.(){}\[\]])
  | (?P<other>.)
    """,
    re.VERBOSE | re.DOTALL,
)

_TYPE_KEYWORDS = frozenset(
    b"void char short int long float double signed unsigned const volatile static "
    b"extern inline struct union enum size_t bool auto register".split()
)
_STATEMENT_KEYWORDS = frozenset(
    b"if else while for do return break continue switch case default goto sizeof".split()
)
_ASSIGN_OPS = frozenset(
    b"= += -= *= /= %= &= |= ^= <<= >>=".split()
)
_BINARY_PRECEDENCE = {
    b"||": 1,
    b"&&": 2,
    b"|": 3,
    b"^": 4,
    b"&": 5,
    b"==": 6,
    b"!=": 6,
    b"<": 7,
    b">": 7,
    b"<=": 7,
    b">=": 7,
    b"<<": 8,
    b">>": 8,
    b"+": 9,
    b"-": 9,
    b"*": 10,
    b"/": 10,
    b"%": 10,
}
_MAX_DEPTH = 200


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: bytes
    start: int
    end: int


class _SyntaxErrorSignal(Exception):
    pass


def _lex(source: bytes) -> list[_Tok]:
    toks = []
    for m in _TOKEN_RE.finditer(source):
        kind = m.lastgroup
        if kind in ("ws", "comment", "preproc"):
            continue
        toks.append(_Tok(kind, m.group(), m.start(), m.end()))
    return toks


class ReferenceParser(ParserProvider):
    """Recursive-descent parser for the reference C-like subset.

    An expression statement whose top-level expression is an assignment keeps
    the target and value as direct children of the ``expression_statement``
    node, so ``x += 3;`` inside an if-block resolves ``x`` to the path
    ``translation_unit / function_definition / compound_statement /
    if_statement / compound_statement / expression_statement / identifier``.
    """

    def parse(self, source: bytes) -> SyntaxTree:
        return _RefParse(bytes(source)).run()


class _RefParse:
    def __init__(self, source: bytes):
        self.source = source
        self.toks = _lex(source)
        self.pos = 0
        self.b = _TreeBuilder()
        self.depth = 0

    # token helpers
    def peek(self, ahead: int = 0) -> _Tok | None:
        i = self.pos + ahead
        return self.toks[i] if i < len(self.toks) else None

    def at(self, text: bytes, ahead: int = 0) -> bool:
        t = self.peek(ahead)
        return t is not None and t.kind in ("op", "other") and t.text == text

    def expect(self, text: bytes) -> _Tok:
        if not self.at(text):
            raise _SyntaxErrorSignal(text)
        return self.advance()

    def advance(self) -> _Tok:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def last_end(self) -> int:
        return self.toks[self.pos - 1].end

    def is_type_start(self, ahead: int = 0) -> bool:
        t = self.peek(ahead)
        return t is not None and t.kind == "ident" and t.text in _TYPE_KEYWORDS

    # tree helpers
    def open(self, kind: str, parent: int) -> int:
        t = self.peek()
        start = t.start if t is not None else len(self.source)
        return self.b.add(kind, start, start, parent)

    def close(self, node: int) -> int:
        if self.pos > 0:
            self.b.spans[node][1] = max(self.b.spans[node][0], self.last_end())
        return node

    def leaf(self, kind: str, tok: _Tok, parent: int) -> int:
        return self.b.add(kind, tok.start, tok.end, parent)

    def discard_children_from(self, parent: int, count: int) -> None:
        """Drop children appended to ``parent`` after ``count`` (for rollback)."""
        dropped = self.b.children[parent][count:]
        del self.b.children[parent][count:]
        for d in dropped:
            self.b.parents[d] = -1  # orphaned; excluded by build()

    # entry point
    def run(self) -> SyntaxTree:
        root = self.b.add(ROOT_KIND, 0, len(self.source), None)
        while self.peek() is not None:
            self.guarded(self.top_level_item, root, sync_brace=False)
        return self.b.build()

    def guarded(self, fn, parent: int, sync_brace: bool) -> None:
        """Run ``fn(parent)``; on failure replace its output by an ERROR node."""
        start_pos = self.pos
        n_children = len(self.b.children[parent])
        try:
            fn(parent)
        except (_SyntaxErrorSignal, RecursionError):
            self.discard_children_from(parent, n_children)
            self.pos = start_pos
            self.recover(parent, sync_brace)

    def recover(self, parent: int, sync_brace: bool) -> None:
        """Skip to the end of the broken construct and record an ERROR node.

        Stops after a ``;`` at brace depth 0, after the ``}`` that closes a
        block opened inside the broken region, or (inside a block) before the
        enclosing block's ``}``.
        """
        start = self.toks[self.pos].start
        depth = 0
        consumed = 0
        while self.peek() is not None:
            t = self.peek()
            if sync_brace and consumed and depth == 0 and self.at(b"}"):
                break
            self.advance()
            consumed += 1
            if t.kind != "op":
                continue
            if t.text == b"{":
                depth += 1
            elif t.text == b"}":
                if depth <= 1:
                    break
                depth -= 1
            elif t.text == b";" and depth == 0:
                break
        self.b.add(ERROR_KIND, start, self.last_end(), parent)

    # grammar
    def top_level_item(self, parent: int) -> None:
        if self.is_type_start():
            self.declaration_or_function(parent)
        else:
            raise _SyntaxErrorSignal("top-level")

    def type_spec(self, parent: int) -> None:
        start = self.peek()
        if start is None or not self.is_type_start():
            raise _SyntaxErrorSignal("type")
        while self.is_type_start():
            tok = self.advance()
            if tok.text in (b"struct", b"union", b"enum") and self.peek() and self.peek().kind == "ident":
                self.advance()
        while self.at(b"*"):
            self.advance()
        self.b.add("primitive_type", start.start, self.last_end(), parent)

    def identifier(self, parent: int) -> int:
        t = self.peek()
        if t is None or t.kind != "ident" or t.text in _TYPE_KEYWORDS or t.text in _STATEMENT_KEYWORDS:
            raise _SyntaxErrorSignal("identifier")
        self.advance()
        return self.leaf("identifier", t, parent)

    def declaration_or_function(self, parent: int) -> None:
        # lookahead: type ident '(' ... ')' '{'  -> function
        node = self.open("declaration", parent)
        self.type_spec(node)
        self.identifier(node)
        if self.at(b"("):
            self.b.kinds[node] = "function_definition"
            self.parameter_list(node)
            if self.at(b";"):
                self.b.kinds[node] = "declaration"
                self.advance()
            else:
                self.compound_statement(node)
            self.close(node)
            return
        self.declarator_tail(node)
        while self.at(b","):
            self.advance()
            while self.at(b"*"):
                self.advance()
            self.identifier(node)
            self.declarator_tail(node)
        self.expect(b";")
        self.close(node)

    def declarator_tail(self, node: int) -> None:
        while self.at(b"["):
            self.advance()
            if not self.at(b"]"):
                self.expression(node)
            self.expect(b"]")
        if self.at(b"="):
            self.advance()
            if self.at(b"{"):
                self.initializer_list(node)
            else:
                self.expression(node, allow_comma=False)

    def initializer_list(self, parent: int) -> None:
        node = self.open("initializer_list", parent)
        self.expect(b"{")
        while not self.at(b"}"):
            if self.peek() is None:
                raise _SyntaxErrorSignal("initializer")
            self.expression(node, allow_comma=False)
            if not self.at(b","):
                break
            self.advance()
        self.expect(b"}")
        self.close(node)

    def parameter_list(self, parent: int) -> None:
        node = self.open("parameter_list", parent)
        self.expect(b"(")
        while not self.at(b")"):
            if self.at(b"..."):
                self.advance()
            else:
                p = self.open("parameter_declaration", node)
                self.type_spec(p)
                if self.peek() is not None and self.peek().kind == "ident":
                    self.identifier(p)
                while self.at(b"["):
                    self.advance()
                    self.expect(b"]")
                self.close(p)
            if not self.at(b","):
                break
            self.advance()
        self.expect(b")")
        self.close(node)

    def compound_statement(self, parent: int) -> None:
        node = self.open("compound_statement", parent)
        self.expect(b"{")
        self.depth += 1
        if self.depth > _MAX_DEPTH:
            raise _SyntaxErrorSignal("nesting too deep")
        try:
            while not self.at(b"}"):
                if self.peek() is None:
                    # unterminated block: record a zero-width error at EOF
                    self.close(node)
                    end = self.b.spans[node][1]
                    self.b.add(ERROR_KIND, end, end, node)
                    return
                self.guarded(self.statement, node, sync_brace=True)
            self.advance()
        finally:
            self.depth -= 1
        self.close(node)

    def statement(self, parent: int) -> None:
        t = self.peek()
        if t is None:
            raise _SyntaxErrorSignal("statement")
        if self.at(b"{"):
            self.compound_statement(parent)
        elif self.at(b";"):
            self.advance()
        elif t.kind == "ident" and t.text == b"if":
            self.if_statement(parent)
        elif t.kind == "ident" and t.text == b"while":
            node = self.open("while_statement", parent)
            self.advance()
            self.parenthesized(node)
            self.statement(node)
            self.close(node)
        elif t.kind == "ident" and t.text == b"for":
            self.for_statement(parent)
        elif t.kind == "ident" and t.text == b"return":
            node = self.open("return_statement", parent)
            self.advance()
            if not self.at(b";"):
                self.expression(node)
            self.expect(b";")
            self.close(node)
        elif t.kind == "ident" and t.text in (b"break", b"continue"):
            node = self.open(t.text.decode() + "_statement", parent)
            self.advance()
            self.expect(b";")
            self.close(node)
        elif self.is_type_start():
            self.declaration_or_function(parent)
        else:
            self.expression_statement(parent)

    def if_statement(self, parent: int) -> None:
        node = self.open("if_statement", parent)
        self.advance()
        self.parenthesized(node)
        self.statement(node)
        t = self.peek()
        if t is not None and t.kind == "ident" and t.text == b"else":
            clause = self.open("else_clause", node)
            self.advance()
            self.statement(clause)
            self.close(clause)
        self.close(node)

    def for_statement(self, parent: int) -> None:
        node = self.open("for_statement", parent)
        self.advance()
        self.expect(b"(")
        if self.is_type_start():
            self.declaration_or_function(node)
        else:
            if not self.at(b";"):
                self.expression(node)
            self.expect(b";")
        if not self.at(b";"):
            self.expression(node)
        self.expect(b";")
        if not self.at(b")"):
            self.expression(node)
        self.expect(b")")
        self.statement(node)
        self.close(node)

    def parenthesized(self, parent: int) -> int:
        node = self.open("parenthesized_expression", parent)
        self.expect(b"(")
        self.expression(node)
        self.expect(b")")
        return self.close(node)

    def expression_statement(self, parent: int) -> None:
        node = self.open("expression_statement", parent)
        n_before = len(self.b.children[node])
        self.expression(node)
        children = self.b.children[node][n_before:]
        if len(children) == 1 and self.b.kinds[children[0]] == "assignment_expression":
            # hoist the assignment's operands into the statement
            assign = children[0]
            operands = self.b.children[assign]
            self.b.children[node][n_before:] = operands
            for o in operands:
                self.b.parents[o] = node
            self.b.parents[assign] = -1
        self.expect(b";")
        self.close(node)

    def expression(self, parent: int, allow_comma: bool = True) -> int:
        node = self.assignment(parent)
        if allow_comma and self.at(b","):
            comma = self.b.add("comma_expression", self.b.spans[node][0], 0, parent)
            self._reparent(node, comma)
            while self.at(b","):
                self.advance()
                self.assignment(comma)
            self.close(comma)
            return comma
        return node

    def _reparent(self, child: int, new_parent: int) -> None:
        old = self.b.parents[child]
        self.b.children[old].remove(child)
        self.b.parents[child] = new_parent
        self.b.children[new_parent].insert(0, child)

    def assignment(self, parent: int) -> int:
        lhs = self.conditional(parent)
        t = self.peek()
        if t is not None and t.kind == "op" and t.text in _ASSIGN_OPS:
            node = self.b.add("assignment_expression", self.b.spans[lhs][0], 0, parent)
            self._reparent(lhs, node)
            self.advance()
            self.assignment(node)
            return self.close(node)
        return lhs

    def conditional(self, parent: int) -> int:
        cond = self.binary(parent, 1)
        if self.at(b"?"):
            node = self.b.add("conditional_expression", self.b.spans[cond][0], 0, parent)
            self._reparent(cond, node)
            self.advance()
            self.expression(node)
            self.expect(b":")
            self.conditional(node)
            return self.close(node)
        return cond

    def binary(self, parent: int, min_prec: int) -> int:
        lhs = self.unary(parent)
        while True:
            t = self.peek()
            if t is None or t.kind != "op":
                return lhs
            prec = _BINARY_PRECEDENCE.get(t.text)
            if prec is None or prec < min_prec:
                return lhs
            node = self.b.add("binary_expression", self.b.spans[lhs][0], 0, parent)
            self._reparent(lhs, node)
            self.advance()
            self.binary(node, prec + 1)
            lhs = self.close(node)

    def unary(self, parent: int) -> int:
        t = self.peek()
        if t is not None and t.kind == "op" and t.text in (b"-", b"+", b"!", b"~", b"*", b"&", b"++", b"--"):
            kind = "update_expression" if t.text in (b"++", b"--") else "unary_expression"
            node = self.open(kind, parent)
            self.advance()
            self.unary(node)
            return self.close(node)
        if t is not None and t.kind == "ident" and t.text == b"sizeof":
            node = self.open("sizeof_expression", parent)
            self.advance()
            if self.at(b"(") and self.is_type_start(1):
                self.advance()
                self.type_spec(node)
                self.expect(b")")
            else:
                self.unary(node)
            return self.close(node)
        if self.at(b"(") and self.is_type_start(1):
            node = self.open("cast_expression", parent)
            self.advance()
            self.type_spec(node)
            self.expect(b")")
            self.unary(node)
            return self.close(node)
        return self.postfix(parent)

    def postfix(self, parent: int) -> int:
        node = self.primary(parent)
        while True:
            if self.at(b"("):
                call = self.b.add("call_expression", self.b.spans[node][0], 0, parent)
                self._reparent(node, call)
                args = self.open("argument_list", call)
                self.advance()
                while not self.at(b")"):
                    self.expression(args, allow_comma=False)
                    if not self.at(b","):
                        break
                    self.advance()
                self.expect(b")")
                self.close(args)
                node = self.close(call)
            elif self.at(b"["):
                sub = self.b.add("subscript_expression", self.b.spans[node][0], 0, parent)
                self._reparent(node, sub)
                self.advance()
                self.expression(sub)
                self.expect(b"]")
                node = self.close(sub)
            elif self.at(b".") or self.at(b"->"):
                fld = self.b.add("field_expression", self.b.spans[node][0], 0, parent)
                self._reparent(node, fld)
                self.advance()
                t = self.peek()
                if t is None or t.kind != "ident":
                    raise _SyntaxErrorSignal("field")
                self.advance()
                self.leaf("field_identifier", t, fld)
                node = self.close(fld)
            elif self.at(b"++") or self.at(b"--"):
                upd = self.b.add("update_expression", self.b.spans[node][0], 0, parent)
                self._reparent(node, upd)
                self.advance()
                node = self.close(upd)
            else:
                return node

    def primary(self, parent: int) -> int:
        t = self.peek()
        if t is None:
            raise _SyntaxErrorSignal("expression")
        if t.kind == "ident" and t.text not in _TYPE_KEYWORDS and t.text not in _STATEMENT_KEYWORDS:
            self.advance()
            return self.leaf("identifier", t, parent)
        if t.kind == "number":
            self.advance()
            return self.leaf("number_literal", t, parent)
        if t.kind == "string":
            self.advance()
            node = self.leaf("string_literal", t, parent)
            while self.peek() is not None and self.peek().kind == "string":
                self.b.spans[node][1] = self.advance().end
            return node
        if t.kind == "char":
            self.advance()
            return self.leaf("char_literal", t, parent)
        if self.at(b"("):
            return self.parenthesized(parent)
        raise _SyntaxErrorSignal("expression")


# -- tree-sitter adapter -------------------------------------------------------


def tree_from_named_nodes(root_node, source_len: int) -> SyntaxTree:
    """Convert a tree-sitter style node (``type``, ``start_byte``,
    ``end_byte``, ``children``, ``is_named``) into a :class:`SyntaxTree`.

    Only named nodes are kept; ``ERROR``/missing nodes keep their kinds.
    The root is widened to cover the whole source.
    """
    b = _TreeBuilder()
    root = b.add(ROOT_KIND if root_node.type in ("source_file", "module", "program") else root_node.type,
                 0, source_len, None)
    stack = [(c, root) for c in reversed(list(root_node.children))]
    while stack:
        node, parent = stack.pop()
        if getattr(node, "is_named", True):
            lo, hi = b.spans[parent]
            start = min(max(node.start_byte, lo), hi)
            end = min(max(node.end_byte, start), hi)
            prev = b.children[parent]
            if prev:
                start = max(start, b.spans[prev[-1]][1])
                end = max(end, start)
            idx = b.add(node.type, start, end, parent)
        else:
            idx = parent
        stack.extend((c, idx) for c in reversed(list(node.children)))
    return b.build()


class TreeSitterProvider(ParserProvider):
    """Parser backed by the optional ``tree_sitter`` package.

    ``language`` is either a ``tree_sitter.Language`` or the name of a grammar
    module such as ``"c"`` (resolved as ``tree_sitter_c``).
    """

    def __init__(self, language):
        self.language = language
        self._parser = None

    def _get_parser(self):
        if self._parser is None:
            import importlib

            import tree_sitter

            lang = self.language
            if isinstance(lang, str):
                mod = importlib.import_module(f"tree_sitter_{lang}")
                lang = tree_sitter.Language(mod.language())
            self._parser = tree_sitter.Parser(lang)
        return self._parser

    def parse(self, source: bytes) -> SyntaxTree:
        tree = self._get_parser().parse(bytes(source))
        return tree_from_named_nodes(tree.root_node, len(source))


_PROVIDERS: dict[str, ParserProvider] = {
    "ref": ReferenceParser(),
    "c": ReferenceParser(),
}


def register_provider(language: str, provider: ParserProvider, function_kinds: Sequence[str] | None = None) -> None:
    _PROVIDERS[language] = provider
    if function_kinds is not None:
        FUNCTION_KINDS[language] = frozenset(function_kinds)


def registered_languages() -> list[str]:
    return sorted(_PROVIDERS)


def get_provider(language: str) -> ParserProvider:
    try:
        return _PROVIDERS[language]
    except KeyError:
        raise UnsupportedLanguageError(f"no parser registered for language {language!r}") from None


def parse(source: bytes, language: str) -> SyntaxTree:
    return get_provider(language).parse(bytes(source))


# -- queries --------------------------------------------------------------------


def _function_name(tree: SyntaxTree, index: int, source: bytes) -> str:
    stack = list(reversed(tree.nodes[index].children))
    while stack:
        i = stack.pop()
        node = tree.nodes[i]
        if node.kind in _NAME_SKIP_KINDS:
            continue
        if node.kind.endswith("identifier") or node.kind == "name":
            return source[node.start : node.end].decode("utf-8", errors="replace")
        stack.extend(reversed(node.children))
    return ANONYMOUS


def extract_functions(tree: SyntaxTree, source: bytes, language: str = "c") -> list[FunctionSlice]:
    """One slice per function node, in source (pre-)order; nested ones included."""
    kinds = FUNCTION_KINDS.get(language)
    if kinds is None:
        raise UnsupportedLanguageError(f"no function kinds configured for {language!r}")
    out = []
    for i in tree.iter_preorder():
        node = tree.nodes[i]
        if node.kind in kinds:
            out.append(
                FunctionSlice(
                    _function_name(tree, i, source),
                    (node.start, node.end),
                    source[node.start : node.end],
                )
            )
    return out


def path_for_offset(tree: SyntaxTree, byte_offset: int) -> AstPath:
    """Kinds from the root down to the deepest node containing ``byte_offset``."""
    return AstPath(tuple(tree.nodes[i].kind for i in node_chain_for_offset(tree, byte_offset)))


def node_chain_for_offset(tree: SyntaxTree, byte_offset: int) -> list[int]:
    root = tree.nodes[tree.root]
    if not root.start <= byte_offset < root.end:
        raise OutOfRangeError(f"offset {byte_offset} outside [{root.start}, {root.end})")
    chain = [tree.root]
    node = root
    while node.children:
        starts = [tree.nodes[c].start for c in node.children]
        k = bisect.bisect_right(starts, byte_offset) - 1
        # zero-width siblings may share a start; scan back for a containing child
        found = None
        while k >= 0:
            child = tree.nodes[node.children[k]]
            if child.start <= byte_offset < child.end:
                found = node.children[k]
                break
            if child.end <= byte_offset and child.start < child.end:
                break
            k -= 1
        if found is None:
            break
        chain.append(found)
        node = tree.nodes[found]
    return chain
