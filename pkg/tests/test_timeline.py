import math

import pytest
from hypothesis import given, strategies as st

from casetimelines.errors import EmptyTimeline, MalformedRow
from casetimelines.timeline import (DiagnosticKind, EventRecord, Timeline, descriptive_stats,
                                    load_reference_annotation, parse_llm_timeline, parse_time,
                                    timeline_to_csv, write_stats_table, write_timeline)


def test_two_rows():
    t = parse_llm_timeline("fever | -72\nrash | -72", "r1", "gpt-4")
    assert t.pairs == [("fever", -72.0), ("rash", -72.0)]
    assert t.annotator == "gpt-4" and t.report_id == "r1"


def test_exemplar_block(exemplar_raw):
    t = parse_llm_timeline(exemplar_raw, "ex", "manual")
    assert len(t.events) == 16
    assert set(t.times) == {-672.0, -72.0, 0.0, 24.0}
    assert t.events[0].text == "18 years old"
    assert t.events[-1].text == "discharged" and t.events[-1].time_hours == 24.0


def test_all_rows_rejected():
    with pytest.raises(EmptyTimeline):
        parse_llm_timeline("Event | Time\nfever | abc", "r", "a")


def test_diagnostic_kinds():
    raw = "```\nEvent | Time\nfever | abc\n | 5\njust prose\nrash | -3 hours\n```\n\n"
    t = parse_llm_timeline(raw, "r", "a")
    assert t.pairs == [("rash", -3.0)]
    assert [d.kind for d in t.diagnostics] == [
        DiagnosticKind.SKIPPED_FENCE, DiagnosticKind.SKIPPED_HEADER,
        DiagnosticKind.NON_NUMERIC_TIME, DiagnosticKind.EMPTY_EVENT,
        DiagnosticKind.MALFORMED_ROW, DiagnosticKind.SKIPPED_FENCE,
    ]
    assert [d.line_number for d in t.diagnostics] == [1, 2, 3, 4, 5, 7]


def test_multi_pipe_splits_at_last():
    t = parse_llm_timeline("pain | left | leg | 12.5", "r", "a")
    assert t.pairs == [("pain | left | leg", 12.5)]


@pytest.mark.parametrize("field,value", [
    ("-72", -72.0), (" +24 ", 24.0), ("0.5", 0.5), (".5", 0.5), ("-1e3", -1000.0),
    ("24 hours", 24.0), ("24hrs", 24.0), ("-8h", -8.0), ("3 hour", 3.0),
    ("abc", None), ("", None), ("inf", None), ("nan", None), ("1e999", None),
    ("24 days", None), ("12-24", None),
])
def test_parse_time(field, value):
    assert parse_time(field) == value


def test_duplicates_kept():
    t = parse_llm_timeline("fever | 0\nfever | 0", "r", "a")
    assert len(t.events) == 2


LINE = st.text(alphabet=st.characters(blacklist_categories=("Cs", "Zl", "Zp", "Cc")), max_size=30)


@given(st.lists(st.one_of(
    LINE,
    st.builds(lambda a, b: f"{a} | {b}", LINE, st.floats(allow_nan=True, allow_infinity=True)),
    st.builds(lambda a, b: f"{a}|{b}", LINE, st.integers(-10**6, 10**6)),
), max_size=30))
def test_every_nonblank_line_accounted_for(lines):
    raw = "\n".join(lines)
    nonblank = sum(1 for line in raw.splitlines() if line.strip())
    try:
        t = parse_llm_timeline(raw, "r", "a")
    except EmptyTimeline:
        return
    assert len(t.events) + len(t.diagnostics) == nonblank
    assert all(math.isfinite(e.time_hours) for e in t.events)
    assert all(e.text.strip() for e in t.events)


def test_reference_minimal(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text('event,time\n"fever",-72\n')
    t = load_reference_annotation(p, "PMC1")
    assert t.pairs == [("fever", -72.0)] and t.annotator == "manual"


def test_reference_quoted_comma(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text('"skin ulcer, with pus",-120\n')
    assert load_reference_annotation(p, "PMC1").pairs == [("skin ulcer, with pus", -120.0)]


def test_reference_bad_time_is_fatal(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text('"fever",xyz\n')
    with pytest.raises(MalformedRow):
        load_reference_annotation(p, "PMC1")


def test_reference_bad_time_after_header_is_fatal(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text('event,time\nfever,-72\nrash,soon\n')
    with pytest.raises(MalformedRow):
        load_reference_annotation(p, "PMC1")


def test_reference_wrong_column_count(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("fever,-72,extra\n")
    with pytest.raises(MalformedRow):
        load_reference_annotation(p, "PMC1")


def test_reference_empty(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("event,time\n")
    with pytest.raises(EmptyTimeline):
        load_reference_annotation(p, "PMC1")


def test_reference_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_reference_annotation(tmp_path / "nope.csv", "PMC1")


def test_round_trip_exemplar(tmp_path, exemplar_raw):
    t = parse_llm_timeline(exemplar_raw, "ex", "gpt-4")
    write_timeline(t, tmp_path / "ex.csv")
    assert load_reference_annotation(tmp_path / "ex.csv", "ex").pairs == t.pairs


def test_write_refuses_empty(tmp_path):
    with pytest.raises(EmptyTimeline):
        write_timeline(Timeline("r", "a", []), tmp_path / "x.csv")


def test_escaping_round_trip(tmp_path):
    t = Timeline("r", "a", [EventRecord('pain | left, "sharp"', 1.25), EventRecord("x", -0.1)])
    write_timeline(t, tmp_path / "x.csv")
    assert load_reference_annotation(tmp_path / "x.csv", "r").pairs == t.pairs


CLEAN_TEXT = st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc")), min_size=1,
                     max_size=40).map(str.strip).filter(bool)


@given(st.lists(st.tuples(CLEAN_TEXT, st.floats(allow_nan=False, allow_infinity=False)),
                min_size=1, max_size=20))
def test_round_trip_property(pairs):
    import tempfile
    from pathlib import Path
    t = Timeline("r", "a", [EventRecord(x, y) for x, y in pairs])
    with tempfile.TemporaryDirectory() as d:
        write_timeline(t, Path(d) / "t.csv")
        back = load_reference_annotation(Path(d) / "t.csv", "r")
    assert back.pairs == t.pairs


def test_event_record_rejects_nonfinite():
    with pytest.raises(ValueError):
        EventRecord("fever", float("nan"))
    with pytest.raises(ValueError):
        EventRecord("  ", 0.0)


def test_stats_hand_count():
    t = Timeline("r", "manual", [EventRecord(f"e{i}", x) for i, x in
                                 enumerate([-672, -72, -72, 0, 0, 24])])
    stats = descriptive_stats([t])
    assert stats.per_timeline[0].event_count == 6
    assert stats.per_timeline[0].distinct_time_count == 4
    s = stats.summary["manual"]["events"]
    assert s.mean == s.min == s.max == 6


def test_stats_mean_over_ten():
    timelines = [Timeline(f"r{k}", "manual", [EventRecord(f"e{i}", 0) for i in range(n)])
                 for k, n in enumerate([14, 70, 30, 28, 25, 31, 33, 29, 30, 30])]
    s = descriptive_stats(timelines).summary["manual"]["events"]
    assert (s.mean, s.min, s.max) == (32.0, 14, 70)


def timelines_strategy():
    return st.lists(st.builds(
        lambda rid, ann, times: Timeline(rid, ann, [EventRecord(f"e{i}", t) for i, t in enumerate(times)]),
        st.sampled_from(["r1", "r2", "r3"]), st.sampled_from(["manual", "gpt-4"]),
        st.lists(st.integers(-100, 100).map(float), min_size=1, max_size=10),
    ), min_size=1, max_size=8)


@given(timelines_strategy(), st.randoms())
def test_stats_permutation_invariant_and_ordered(timelines, rnd):
    shuffled = list(timelines)
    rnd.shuffle(shuffled)
    a, b = descriptive_stats(timelines), descriptive_stats(shuffled)
    assert a.summary == b.summary
    for per in a.summary.values():
        for s in per.values():
            assert s.min <= s.mean <= s.max
    assert all(c.distinct_time_count <= c.event_count for c in a.per_timeline)


def test_stats_table(tmp_path):
    t = Timeline("r", "manual", [EventRecord("a", 0), EventRecord("b", 1)])
    write_stats_table(descriptive_stats([t]), tmp_path / "s.tsv")
    lines = (tmp_path / "s.tsv").read_text().splitlines()
    assert lines[0].split("\t")[:3] == ["annotator", "n_timelines", "events_mean"]
    assert lines[1].split("\t") == ["manual", "1", "2.0", "2", "2", "2.0", "2", "2"]


def test_csv_header():
    t = Timeline("r", "a", [EventRecord("fever", -72.0)])
    assert timeline_to_csv(t) == "event,time\nfever,-72\n"
