import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attrql.algebra import AntiJoin, Identity, Join, Project, Registry, Select, validate
from attrql.attribution import Window
from attrql.demo import acceptance_input, random_mlp
from attrql.qlang import (
    BindingError,
    Bindings,
    JoinClause,
    Layer,
    LexError,
    NameWindow,
    ParseError,
    QueryAst,
    RectWindow,
    Star,
    lower,
    parse,
    parse_text,
    print_query,
    tokenize,
)
from attrql.runtime import Tensor

PAPER_STATEMENTS = [
    "select * from f(x)",
    "select * from f(x) where w",
    "select l from f(x)",
    "select * from f(x) join (select * from f(x'))",
    "select * from f(x) left join (select * from f(x'))",
    "select l from f(x) where w",
    "select l from f(x) join (select l from f(x'))",
]


class TestTokenize:
    def test_identity_statement(self):
        kinds = [t.kind for t in tokenize("select * from f(x)")]
        assert kinds == ["SELECT", "STAR", "FROM", "IDENT", "LPAREN", "IDENT", "RPAREN"]

    def test_layer_statement(self):
        toks = tokenize("select 3 from f(x)")
        assert toks[1].kind == "INT" and toks[1].lexeme == "3"

    def test_lex_error_offset(self):
        with pytest.raises(LexError) as exc:
            tokenize("select @ from f(x)")
        assert exc.value.offset == 7

    def test_primed_identifiers(self):
        toks = tokenize("f'(x')")
        assert toks[0].lexeme == "f'" and toks[2].lexeme == "x'"

    def test_offsets_strictly_increase(self):
        toks = tokenize("select 2 from f(x) where rect(0,1,2,3)")
        offsets = [t.offset for t in toks]
        assert offsets == sorted(set(offsets))


class TestParse:
    def test_antijoin_statement(self):
        ast = parse_text("select * from f(x) left join (select * from f(x'))")
        assert ast.join.kind == "left_join"
        assert ast.join.sub.input == "x'"

    def test_join_of_layer_selects(self):
        ast = parse_text("select 2 from f(x) join (select 2 from f(x'))")
        assert ast.target == Layer(2)
        assert ast.join.kind == "join"
        assert ast.join.sub.target == Layer(2)

    def test_join_requires_parenthesized_subquery(self):
        with pytest.raises(ParseError) as exc:
            parse_text("select * from f(x) join")
        assert "LPAREN" in exc.value.expected

    def test_layer_must_be_positive(self):
        with pytest.raises(ParseError):
            parse_text("select 0 from f(x)")

    def test_rect_window(self):
        ast = parse_text("select * from f(x) where rect(0,1,2,3)")
        assert ast.where == RectWindow(0, 1, 2, 3)

    def test_degenerate_rect_rejected(self):
        with pytest.raises(ParseError):
            parse_text("select * from f(x) where rect(2,0,1,3)")

    def test_trailing_garbage(self):
        with pytest.raises(ParseError):
            parse_text("select * from f(x) x")

    def test_all_paper_statements_parse(self):
        for text in PAPER_STATEMENTS:
            ast = parse_text(text.replace("select l", "select 1"))
            assert isinstance(ast, QueryAst)

    def test_error_offsets_in_range(self):
        bad = ["select", "select * from", "select * from f(", "select * from f(x) join ("]
        for text in bad:
            with pytest.raises((ParseError, LexError)) as exc:
                parse_text(text)
            assert 0 <= exc.value.offset <= len(text)


class TestPrint:
    def test_roundtrip_paper_statements(self):
        for text in PAPER_STATEMENTS:
            concrete = text.replace("select l", "select 1")
            ast = parse_text(concrete)
            assert print_query(ast) == concrete
            assert parse_text(print_query(ast)) == ast

    def test_roundtrip_three_deep_chain(self):
        text = ("select * from f(x) join (select * from f(y) "
                "join (select * from f(z) join (select * from f(u))))")
        ast = parse_text(text)
        assert parse_text(print_query(ast)) == ast

    def test_print_deterministic(self):
        ast = parse_text("select 2 from f(x) where rect(0,0,3,3)")
        assert print_query(ast) == print_query(ast)


def _ast_strategy():
    ident = st.sampled_from(["f", "g", "f'", "model_1", "x", "y", "x'", "inp"])
    target = st.one_of(st.just(Star()), st.integers(1, 9).map(Layer))
    window = st.one_of(
        st.none(),
        ident.map(lambda n: NameWindow(n)),
        st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 3), st.integers(0, 3)).map(
            lambda t: RectWindow(min(t[0], t[2]), min(t[1], t[3]), max(t[0], t[2]), max(t[1], t[3]))
        ),
    )

    def build(depth):
        base = st.builds(
            QueryAst,
            target=target,
            model=ident,
            input=ident,
            where=window,
            join=st.none(),
        )
        if depth == 0:
            return base
        sub = build(depth - 1)
        return st.builds(
            QueryAst,
            target=target,
            model=ident,
            input=ident,
            where=window,
            join=st.one_of(
                st.none(),
                st.builds(JoinClause, kind=st.sampled_from(["join", "left_join"]), sub=sub),
            ),
        )

    return build(3)


@settings(max_examples=200, deadline=None)
@given(_ast_strategy())
def test_roundtrip_fuzzed_asts(ast):
    assert parse_text(print_query(ast)) == ast


class TestLower:
    @pytest.fixture()
    def setup(self):
        registry = Registry()
        model = random_mlp(4, in_dim=6, hidden=(8, 8), classes=2)
        registry.add_model("fref", model)
        registry.add_model("f2ref", random_mlp(5, in_dim=6, hidden=(8, 8), classes=2))
        registry.add_input("xref", acceptance_input(0))
        registry.add_input("x2ref", acceptance_input(1))
        bindings = Bindings()
        bindings.bind_model("f", "fref")
        bindings.bind_model("f'", "f2ref")
        bindings.bind_input("x", "xref")
        bindings.bind_input("x'", "x2ref")
        bindings.bind_window("w", Window((0, 2, 4)))
        return registry, bindings

    def test_select_where_lowering(self, setup):
        registry, bindings = setup
        expr = lower(parse_text("select 2 from f(x) where w"), bindings, registry)
        assert expr == Project(Select(Identity("fref", "xref"), 2), Window((0, 2, 4)))
        from attrql.algebra import normalize

        commuted = normalize(expr)
        assert commuted == normalize(Select(Project(Identity("fref", "xref"), Window((0, 2, 4))), 2))

    def test_star_lowering(self, setup):
        registry, bindings = setup
        assert lower(parse_text("select * from f(x)"), bindings, registry) == Identity("fref", "xref")

    def test_join_lowering(self, setup):
        registry, bindings = setup
        expr = lower(parse_text("select * from f(x) join (select * from f(x'))"), bindings, registry)
        assert expr == Join(Identity("fref", "xref"), Identity("fref", "x2ref"))

    def test_cross_model_antijoin_lowering(self, setup):
        registry, bindings = setup
        expr = lower(parse_text("select * from f(x) left join (select * from f'(x))"), bindings, registry)
        assert expr == AntiJoin(Identity("fref", "xref"), Identity("f2ref", "xref"))
        assert validate(expr, registry) == []

    def test_inline_rect_uses_input_shape(self, setup):
        registry, bindings = setup
        registry.add_input("img", Tensor.zeros((4, 4)))
        bindings.bind_input("im", "img")
        expr = lower(parse_text("select * from f(im) where rect(0,0,1,1)"), bindings, registry)
        assert isinstance(expr, Project)
        assert expr.window.indices == (0, 1, 4, 5)

    def test_unbound_where_identifier(self, setup):
        registry, bindings = setup
        text = "select * from f(x) where unbound"
        with pytest.raises(BindingError) as exc:
            lower(parse_text(text), bindings, registry)
        assert "unbound" in str(exc.value)
        assert exc.value.offset == text.index("unbound")

    def test_kind_mismatch(self, setup):
        registry, bindings = setup
        with pytest.raises(BindingError, match="bound to a window"):
            lower(parse_text("select * from w(x)"), bindings, registry)

    def test_all_paper_statements_lower_and_validate(self, setup):
        registry, bindings = setup
        from attrql.runtime import truncate
        from attrql.demo import blobs_dataset

        data = blobs_dataset(seed=3, n_per_class=60, centers=((2.0,) * 6, (-2.0,) * 6), sigma=0.8)
        for name in ("fref", "f2ref"):
            for stage in (1, 2):
                registry.add_truncated(name, stage, truncate(registry.models[name], stage, data))
        for text in PAPER_STATEMENTS:
            concrete = text.replace("select l", "select 1")
            expr = lower(parse_text(concrete), bindings, registry)
            assert validate(expr, registry) == [], concrete
