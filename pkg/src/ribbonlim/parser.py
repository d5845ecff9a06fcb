import json
from dataclasses import dataclass
from typing import Sequence, Union

from lark import Lark, Transformer, v_args

from ribbonlim.errors import ConfigError

Value = Union[float, str, tuple["Value", ...]]

shorthand_parser = Lark(
    r"""
    spec      : NAME ("(" [arguments] ")")?
    arguments : argument ("," argument)*
    argument  : NAME "=" value -> keyword
              | value -> positional
    value     : SIGNED_NUMBER -> number
              | ESCAPED_STRING -> string
              | "[" [value ("," value)*] "]" -> array

    %import common.CNAME -> NAME
    %import common.SIGNED_NUMBER
    %import common.ESCAPED_STRING
    %import common.WS
    %ignore WS

    """,
    start="spec",
    parser="lalr",
)


def format_value(value: Value) -> str:
    """Render a shorthand value the way the grammar reads it back."""
    if isinstance(value, tuple):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    if isinstance(value, str):
        return json.dumps(value)
    return repr(float(value))


@dataclass(frozen=True)
class Shorthand:
    """A parsed specification such as `arc(kappa0=0.5)`.

    Positional arguments are kept in `args`, keyword arguments in `kwargs` as
    (name, value) pairs in source order.
    """

    kind: str
    args: tuple[Value, ...] = ()
    kwargs: tuple[tuple[str, Value], ...] = ()

    def __post_init__(self):
        names = [name for name, _ in self.kwargs]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise ConfigError(self.kind, f"repeated argument {duplicates[0]}")

    def __str__(self) -> str:
        parts = [format_value(v) for v in self.args]
        parts += [f"{name}={format_value(v)}" for name, v in self.kwargs]
        if not parts:
            return self.kind
        return f"{self.kind}({', '.join(parts)})"

    def bind(self, names: Sequence[str], key: str) -> dict[str, Value]:
        """Match positional then keyword arguments against parameter names.

        Args:
            names: the parameter names of this kind, in positional order
            key: the configuration key, used in error messages

        Returns:
            mapping from every name to its value

        Raises:
            ConfigError: on missing, unknown or repeated arguments
        """
        if len(self.args) > len(names):
            raise ConfigError(
                key, f"{self.kind} takes {len(names)} arguments, got {len(self.args)}"
            )
        bound: dict[str, Value] = dict(zip(names, self.args))
        for name, value in self.kwargs:
            if name not in names:
                raise ConfigError(key, f"{self.kind} has no argument {name!r}")
            if name in bound:
                raise ConfigError(key, f"{self.kind} got argument {name!r} twice")
            bound[name] = value
        missing = [name for name in names if name not in bound]
        if missing:
            raise ConfigError(key, f"{self.kind} is missing {', '.join(missing)}")
        return bound


@v_args(inline=True)
class ShorthandTransformer(Transformer):
    """Transforms a Lark parse tree into a `Shorthand`."""

    def spec(self, name, arguments=None):
        """Handles the top-level 'spec' rule.

        Args:
            name: the kind token
            arguments: the transformed arguments, None without parentheses

        Returns:
            The kind and its tagged arguments in source order.
        """
        return str(name), arguments or []

    def arguments(self, *arguments):
        return list(arguments)

    def keyword(self, name, value):
        return ("keyword", (str(name), value))

    def positional(self, value):
        return ("positional", value)

    def number(self, token):
        return float(token)

    def string(self, token):
        return json.loads(token)

    def array(self, *values):
        return tuple(v for v in values if v is not None)


def parse(text: str) -> Shorthand:
    """Parse shorthand text into a `Shorthand`.

    Raises:
        lark.exceptions.LarkError: on syntax error
        ConfigError: on a positional argument following a keyword argument
    """
    tree = shorthand_parser.parse(text)
    kind, arguments = ShorthandTransformer().transform(tree)
    args: list[Value] = []
    kwargs: list[tuple[str, Value]] = []
    for tag, payload in arguments:
        if tag == "keyword":
            kwargs.append(payload)
        elif kwargs:
            raise ConfigError(kind, "positional argument after keyword argument")
        else:
            args.append(payload)
    return Shorthand(kind, tuple(args), tuple(kwargs))
