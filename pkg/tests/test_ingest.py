import io

import pytest
from hypothesis import given, strategies as st

from tbw.ingest import (ConfigurationError, ParseError, RawEvent, Role, apply_alias_map, clean_and_index,
                        parse_aliases, parse_events, parse_roles, write_events, write_roles)


def test_parse_event_line():
    assert parse_events("alice\tbob\t1500000000\n") == [RawEvent("alice", "bob", 1500000000)]


def test_parser_keeps_self_events():
    assert parse_events("alice\talice\t1500000000") == [RawEvent("alice", "alice", 1500000000)]


def test_missing_field_reports_line():
    with pytest.raises(ParseError) as err:
        parse_events("# header\na\tb\t1\nalice\tbob\n")
    assert err.value.lineno == 3


@pytest.mark.parametrize("line", ["a\tb\tx", "a\tb\t-5", "a\t\t5", "a\tb\t1\textra"])
def test_malformed_lines(line):
    with pytest.raises(ParseError):
        parse_events(line)


def test_empty_input_and_comments():
    assert parse_events("") == []
    assert parse_events(b"# only a comment\n\n") == []


def test_parse_from_binary_file():
    assert parse_events(io.BytesIO(b"x\ty\t7\n")) == [RawEvent("x", "y", 7)]


def test_roles_case_insensitive():
    assert parse_roles("a\tUser\nb\tDEVELOPER\n") == {"a": Role.USER, "b": Role.DEVELOPER}
    with pytest.raises(ParseError):
        parse_roles("a\tmaintainer\n")


def test_alias_substitution():
    ev = [RawEvent("a1", "b", 1)]
    assert apply_alias_map(ev, {"a1": "a"}) == [RawEvent("a", "b", 1)]
    assert apply_alias_map(ev, {}) == ev


def test_alias_merge():
    ev = [RawEvent("a1", "b", 1), RawEvent("a2", "b", 2)]
    out = apply_alias_map(ev, parse_aliases("a1\ta\na2\ta\n"))
    assert [e.sender for e in out] == ["a", "a"]


def test_self_event_removed_and_sorted():
    edges, _ = clean_and_index([RawEvent("a", "a", 5), RawEvent("a", "b", 3)], {"a": "user", "b": "developer"})
    assert list(edges) == [(0, 1, 3)]
    assert edges.index == {"a": 0, "b": 1}


def test_all_self_events():
    edges, roles = clean_and_index([RawEvent("a", "a", 1)], {})
    assert len(edges) == 0 and roles == {}


def test_first_appearance_order_over_sorted_stream():
    edges, _ = clean_and_index([RawEvent("a", "b", 3), RawEvent("c", "a", 1)],
                               {"a": "user", "b": "user", "c": "developer"})
    assert edges.keys == ("c", "a", "b")
    assert list(edges) == [(0, 1, 1), (1, 2, 3)]


def test_missing_role_names_key():
    with pytest.raises(ConfigurationError, match="'zed'"):
        clean_and_index([RawEvent("a", "zed", 1)], {"a": "user"})


keys = st.sampled_from(["a", "b", "c", "d", "e"])
events = st.lists(st.builds(RawEvent, keys, keys, st.integers(0, 50)), max_size=40)


@given(events)
def test_ingest_invariants(evs):
    roles = {k: Role.USER if k < "c" else Role.DEVELOPER for k in "abcde"}
    edges, table = clean_and_index(evs, roles)
    # count conservation
    assert len(edges) == len(evs) - sum(e.sender == e.recipient for e in evs)
    assert all(u != v for u, v, _ in edges)
    assert list(edges.timestamps) == sorted(edges.timestamps)
    assert set(table) == set(range(edges.n_vertices))
    # idempotence through the file format
    buf, rbuf = io.StringIO(), io.StringIO()
    write_events(edges, buf)
    write_roles(edges, table, rbuf)
    again, table2 = clean_and_index(parse_events(buf.getvalue()), parse_roles(rbuf.getvalue()))
    assert again == edges and table2 == table
