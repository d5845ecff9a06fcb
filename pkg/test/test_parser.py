import pytest
from lark.exceptions import LarkError

from ribbonlim.errors import ConfigError
from ribbonlim.parser import (
    Shorthand,
    ShorthandTransformer,
    format_value,
    parse,
    shorthand_parser,
)


@pytest.fixture
def transformer():
    """Provides a ShorthandTransformer instance for tests."""
    return ShorthandTransformer()


@pytest.fixture
def parser():
    """Provides the shorthand parser instance."""
    return shorthand_parser


def test_bare_name(parser, transformer):
    """Tests the transformation of a kind without parentheses."""
    tree = parser.parse("sadowsky")
    assert transformer.transform(tree) == ("sadowsky", [])


def test_empty_parentheses():
    """Tests that `rectangle()` reads the same as `rectangle`."""
    assert parse("rectangle()") == Shorthand("rectangle")


def test_keyword_argument(parser, transformer):
    """Tests the transformation of a keyword argument."""
    tree = parser.parse("arc(kappa0=0.5)")
    kind, arguments = transformer.transform(tree)
    assert kind == "arc"
    assert arguments == [("keyword", ("kappa0", 0.5))]


def test_positional_arguments():
    """Tests that positional numbers become floats in source order."""
    shorthand = parse("orthotropic(1, 0, 1, 0.5)")
    assert shorthand.kind == "orthotropic"
    assert shorthand.args == (1.0, 0.0, 1.0, 0.5)
    assert shorthand.kwargs == ()


def test_signed_and_exponent_numbers():
    """Tests the transformation of signed numbers."""
    assert parse("sheared(-0.25, d22=1e-1)") == Shorthand(
        "sheared", (-0.25,), (("d22", 0.1),)
    )


def test_string_argument():
    """Tests that strings are unescaped."""
    assert parse('table("a \\"b\\".csv")').args == ('a "b".csv',)


def test_arrays():
    """Tests the transformation of arrays, including empty and nested ones."""
    shorthand = parse("voigt(a=[1, 2], b=[], c=[[1], [2, 3]])")
    assert dict(shorthand.kwargs) == {"a": (1.0, 2.0), "b": (), "c": ((1.0,), (2.0, 3.0))}


def test_whitespace_is_ignored():
    """Tests that whitespace between tokens does not matter."""
    assert parse("  arc ( kappa0 = 0.5 )  ") == parse("arc(kappa0=0.5)")


@pytest.mark.parametrize(
    "text",
    [
        "sadowsky",
        "isotropic(1.0, 0.3)",
        'table("natural.csv", scale=2.0)',
        "voigt(a=[1.0, [2.0, 3.0]], b=[])",
    ],
)
def test_str_reads_back(text):
    """Tests that str() of a shorthand parses to the same shorthand."""
    shorthand = parse(text)
    assert parse(str(shorthand)) == shorthand


def test_str_of_bare_kind():
    """Tests that a kind without arguments is rendered without parentheses."""
    assert str(Shorthand("rectangle")) == "rectangle"
    assert str(Shorthand("arc", kwargs=(("kappa0", 0.5),))) == "arc(kappa0=0.5)"


def test_format_value():
    """Tests rendering of numbers, strings and arrays."""
    assert format_value(2.0) == "2.0"
    assert format_value(0.1) == "0.1"
    assert format_value("x.csv") == '"x.csv"'
    assert format_value((1.0, ("a",))) == '[1.0, ["a"]]'


def test_positional_after_keyword():
    """Tests that positional arguments may not follow keyword arguments."""
    with pytest.raises(ConfigError, match="positional argument after keyword argument"):
        parse("isotropic(E=1, 0.3)")


def test_repeated_keyword():
    """Tests that a keyword may appear only once."""
    with pytest.raises(ConfigError, match="repeated argument kappa0"):
        parse("arc(kappa0=0.5, kappa0=1)")


@pytest.mark.parametrize("text", ["arc(", "arc(kappa0=)", "1arc", "arc(kappa0=0.5))", ""])
def test_syntax_errors(text):
    """Tests that malformed text raises a Lark error."""
    with pytest.raises(LarkError):
        parse(text)


def test_bind_positional_then_keyword():
    """Tests binding positional and keyword arguments to parameter names."""
    shorthand = parse("orthotropic(1, 0, K22=2, K33=0.5)")
    bound = shorthand.bind(("K11", "K12", "K22", "K33"), "rigidity")
    assert bound == {"K11": 1.0, "K12": 0.0, "K22": 2.0, "K33": 0.5}


def test_bind_missing():
    """Tests that missing parameters are named in the error."""
    with pytest.raises(ConfigError, match="config key 'rigidity': isotropic is missing nu"):
        parse("isotropic(1)").bind(("E", "nu"), "rigidity")


def test_bind_too_many():
    """Tests that surplus positional arguments are rejected."""
    with pytest.raises(ConfigError, match="arc takes 1 arguments, got 2"):
        parse("arc(1, 2)").bind(("kappa0",), "chart")


def test_bind_unknown():
    """Tests that unknown keywords are rejected."""
    with pytest.raises(ConfigError, match="arc has no argument 'radius'"):
        parse("arc(radius=2)").bind(("kappa0",), "chart")


def test_bind_twice():
    """Tests that a keyword may not repeat a positional argument."""
    with pytest.raises(ConfigError, match="got argument 'kappa0' twice"):
        parse("arc(0.5, kappa0=0.5)").bind(("kappa0",), "chart")


def test_config_error_key():
    """Tests that the configuration key is kept on the error."""
    with pytest.raises(ConfigError) as raised:
        parse("arc").bind(("kappa0",), "chart")
    assert raised.value.key == "chart"
