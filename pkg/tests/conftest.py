import hypothesis.strategies as st
import pytest
from hypothesis import settings

from swarmcomp.score_model import Bar, NoteEvent, Piece, PieceMetadata, VoiceLine, midi_to_pitch

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# durations whose partial sums stay exact in binary
DURATIONS = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0]


def fill_bar(draw, beats=4.0, rests=True):
    notes, left = [], beats
    while left > 1e-12:
        choices = [d for d in DURATIONS if d <= left + 1e-12]
        d = draw(st.sampled_from(choices))
        if rests and draw(st.integers(0, 5)) == 0:
            p = "rest"
        else:
            p = midi_to_pitch(draw(st.integers(36, 96)))
        notes.append(NoteEvent(p, d))
        left -= d
    return notes


@st.composite
def pieces(draw, max_bars=6, voices=("Piano", "Bass"), rests=True):
    n = draw(st.integers(1, max_bars))
    nv = draw(st.integers(1, len(voices)))
    names = voices[:nv]
    bars = [Bar(i, [VoiceLine(v, fill_bar(draw, rests=rests)) for v in names],
                draw(st.text(max_size=12)))
            for i in range(1, n + 1)]
    md = PieceMetadata(draw(st.sampled_from(["C major", "A minor", "G major"])), (4, 4),
                       float(draw(st.integers(60, 180))))
    return Piece(bars, md)


@st.composite
def melodies(draw, min_size=2, max_size=40):
    return draw(st.lists(st.integers(30, 100), min_size=min_size, max_size=max_size))


def quarters(pitches=("C4", "D4", "E4", "F4"), number=1, instrument="Piano"):
    return Bar(number, [VoiceLine(instrument, [NoteEvent(p, 1.0) for p in pitches])])


@pytest.fixture
def simple_piece():
    bars = [quarters(("C4", "E4", "G4", "C5"), 1), quarters(("D4", "F4", "A4", "D5"), 2),
            quarters(("G3", "B3", "D4", "G4"), 3), quarters(("C4", "E4", "G4", "C5"), 4)]
    return Piece(bars, PieceMetadata())


# acceptance lines collected by test_acceptance and printed once at the end
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
