"""Deterministic compiler from a LaTeX math subset to Presentation MathML.

The supported grammar covers latin letters, digit runs, greek commands,
fractions, roots, scripts, big operators, relations, basic operators,
delimiters, font commands and a handful of named functions. Byte-identical
output for identical input is a hard guarantee: the emitter uses a fixed
tag set {math, mrow, mi, mn, mo, mfrac, msup, msub, msubsup, msqrt,
munderover} and a fixed serialization order.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class LatexSyntaxError(ValueError):
    """Input token outside the supported grammar. Carries a 0-based offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnbalancedGroupError(LatexSyntaxError):
    """Brace group opened but never closed, or a stray closing brace."""


GREEK = {
    "alpha": "α", "beta": "β", "gamma": "γ", "delta": "δ",
    "epsilon": "ϵ", "varepsilon": "ε", "zeta": "ζ",
    "eta": "η", "theta": "θ", "vartheta": "ϑ",
    "iota": "ι", "kappa": "κ", "lambda": "λ", "mu": "μ",
    "nu": "ν", "xi": "ξ", "pi": "π", "rho": "ρ",
    "sigma": "σ", "tau": "τ", "upsilon": "υ",
    "phi": "ϕ", "varphi": "φ", "chi": "χ", "psi": "ψ",
    "omega": "ω",
    "Gamma": "Γ", "Delta": "Δ", "Theta": "Θ",
    "Lambda": "Λ", "Xi": "Ξ", "Pi": "Π", "Sigma": "Σ",
    "Upsilon": "Υ", "Phi": "Φ", "Psi": "Ψ", "Omega": "Ω",
}

BIG_OPERATORS = {
    "sum": "∑", "prod": "∏", "int": "∫",
    "min": "min", "max": "max",
}

# Commands that map straight to a single <mo> token.
OPERATOR_COMMANDS = {
    "leq": "≤", "geq": "≥", "cdot": "⋅", "times": "×",
    "langle": "⟨", "rangle": "⟩", "{": "{", "}": "}",
}

FONT_COMMANDS = {"mathbb": "double-struck", "mathcal": "script", "mathbf": "bold"}

FUNCTION_NAMES = {"log", "exp", "sin", "cos"}

# Single-character operator/relation/delimiter tokens. The comma is included
# so that argument lists like P(d,s) stay inside the subset.
OPERATOR_CHARS = set("+-/=<>,()[]|")


@dataclass
class Token:
    kind: str  # letter | digits | command | sym
    text: str  # raw lexeme, commands keep their backslash
    pos: int


def tokenize(source: str) -> list[Token]:
    """Split LaTeX source into tokens; digit runs form a single token.

    Unknown commands are tokenized (validation happens in the parser) so the
    tokenizer can also be used to scan corpus equations outside the subset.
    """
    tokens: list[Token] = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
        elif c.isascii() and c.isalpha():
            tokens.append(Token("letter", c, i))
            i += 1
        elif c.isdigit():
            j = i + 1
            while j < n and source[j].isdigit():
                j += 1
            tokens.append(Token("digits", source[i:j], i))
            i = j
        elif c == "\\":
            j = i + 1
            while j < n and source[j].isascii() and source[j].isalpha():
                j += 1
            if j == i + 1:
                if j < n and source[j] in "{}":
                    tokens.append(Token("command", source[i : j + 1], i))
                    i = j + 1
                    continue
                raise LatexSyntaxError("lone backslash", i)
            tokens.append(Token("command", source[i:j], i))
            i = j
        elif c in OPERATOR_CHARS or c in "^_{}":
            tokens.append(Token("sym", c, i))
            i += 1
        else:
            raise LatexSyntaxError(f"unsupported character {c!r}", i)
    return tokens


def render_tokens(tokens: list[Token]) -> str:
    """Space-joined LaTeX for a token slice; compiles to the same MathML."""
    return " ".join(t.text for t in tokens)


@dataclass
class MathNode:
    tag: str
    text: str = ""
    mathvariant: str | None = None
    children: list["MathNode"] = field(default_factory=list)
    big_operator: bool = False


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _serialize(node: MathNode) -> str:
    attr = f' mathvariant="{node.mathvariant}"' if node.mathvariant else ""
    inner = _escape(node.text) + "".join(_serialize(c) for c in node.children)
    return f"<{node.tag}{attr}>{inner}</{node.tag}>"


def _wrap(nodes: list[MathNode]) -> MathNode:
    if len(nodes) == 1:
        return nodes[0]
    return MathNode("mrow", children=nodes)


class _Parser:
    def __init__(self, tokens: list[Token], source_len: int):
        self.tokens = tokens
        self.i = 0
        self.eof = source_len

    def peek(self) -> Token | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> Token | None:
        tok = self.peek()
        if tok is not None:
            self.i += 1
        return tok

    def parse_sequence(self, open_pos: int | None) -> list[MathNode]:
        """Nodes until EOF, or until the '}' closing the group opened at
        open_pos (None when parsing the top level)."""
        nodes: list[MathNode] = []
        while True:
            tok = self.peek()
            if tok is None:
                if open_pos is not None:
                    raise UnbalancedGroupError("unclosed group", open_pos)
                return nodes
            if tok.kind == "sym" and tok.text == "}":
                if open_pos is None:
                    raise UnbalancedGroupError("unexpected '}'", tok.pos)
                return nodes
            nodes.append(self.parse_scripted())

    def parse_scripted(self) -> MathNode:
        base = self.parse_atom()
        sub: MathNode | None = None
        sup: MathNode | None = None
        while True:
            tok = self.peek()
            if tok is None or tok.kind != "sym" or tok.text not in "^_":
                break
            self.next()
            arg = _wrap(self.parse_argument(tok))
            if tok.text == "_":
                if sub is not None:
                    raise LatexSyntaxError("double subscript", tok.pos)
                sub = arg
            else:
                if sup is not None:
                    raise LatexSyntaxError("double superscript", tok.pos)
                sup = arg
        if sub is None and sup is None:
            return base
        if sub is not None and sup is not None:
            tag = "munderover" if base.big_operator else "msubsup"
            return MathNode(tag, children=[base, sub, sup])
        if sub is not None:
            return MathNode("msub", children=[base, sub])
        return MathNode("msup", children=[base, sup])

    def parse_argument(self, owner: Token) -> list[MathNode]:
        """Argument of a script/command: a braced group or one atom."""
        tok = self.peek()
        if tok is None:
            raise UnbalancedGroupError(
                f"missing argument for {owner.text!r}", self.eof
            )
        if tok.kind == "sym" and tok.text == "{":
            self.next()
            nodes = self.parse_sequence(open_pos=tok.pos)
            closing = self.next()
            assert closing is not None and closing.text == "}"
            return nodes
        return [self.parse_atom()]

    def parse_atom(self) -> MathNode:
        tok = self.next()
        if tok is None:
            raise LatexSyntaxError("unexpected end of input", self.eof)
        if tok.kind == "letter":
            return MathNode("mi", tok.text)
        if tok.kind == "digits":
            return MathNode("mn", tok.text)
        if tok.kind == "sym":
            if tok.text in OPERATOR_CHARS:
                return MathNode("mo", tok.text)
            if tok.text == "{":
                nodes = self.parse_sequence(open_pos=tok.pos)
                self.next()
                return _wrap(nodes)
            if tok.text == "}":
                raise UnbalancedGroupError("unexpected '}'", tok.pos)
            raise LatexSyntaxError(f"script {tok.text!r} with no base", tok.pos)
        return self.parse_command(tok)

    def parse_command(self, tok: Token) -> MathNode:
        name = tok.text[1:]
        if name in GREEK:
            return MathNode("mi", GREEK[name])
        if name in FUNCTION_NAMES:
            return MathNode("mi", name)
        if name == "hbar":
            return MathNode("mi", "ℏ")
        if name in BIG_OPERATORS:
            return MathNode("mo", BIG_OPERATORS[name], big_operator=True)
        if name in OPERATOR_COMMANDS:
            return MathNode("mo", OPERATOR_COMMANDS[name])
        if name == "frac":
            num = _wrap(self.parse_argument(tok))
            den = _wrap(self.parse_argument(tok))
            return MathNode("mfrac", children=[num, den])
        if name == "sqrt":
            return MathNode("msqrt", children=self.parse_argument(tok))
        if name in FONT_COMMANDS:
            nodes = self.parse_argument(tok)
            for node in nodes:
                _apply_variant(node, FONT_COMMANDS[name])
            return _wrap(nodes)
        raise LatexSyntaxError(f"unsupported command {tok.text!r}", tok.pos)


def _apply_variant(node: MathNode, variant: str) -> None:
    # Innermost font command wins on nested groups.
    if node.tag in ("mi", "mn", "mo") and node.mathvariant is None:
        node.mathvariant = variant
    for child in node.children:
        _apply_variant(child, variant)


def compile_latex_subset(latex: str) -> str:
    """Compile a LaTeX-subset expression to a Presentation MathML string.

    Pure function: identical input yields byte-identical output. Raises
    LatexSyntaxError for tokens outside the grammar and UnbalancedGroupError
    for brace mismatches, both carrying a character offset.
    """
    parser = _Parser(tokenize(latex), len(latex))
    body = parser.parse_sequence(open_pos=None)
    return _serialize(MathNode("math", children=body))
