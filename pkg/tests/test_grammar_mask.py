"""Grammar-mask tests: per-state legality, conditioning bookkeeping, and
parseability of constrained samples."""

import numpy as np
import pytest

from trajlm.codec import (
    GeoPoint,
    TrajectoryAlphabet,
    encode_cell,
    level_range_of_char,
)
from trajlm.corpus import (
    AttributeSet,
    DayTrajectory,
    EnvironmentSet,
    HomeFlag,
    Stop,
    parse,
    serialize,
)
from trajlm.evaluation import make_prompt
from trajlm.grammar_mask import (
    AFTER_CELL,
    AFTER_TEMP,
    DONE,
    EXPECT_INTERVAL,
    PREFIX,
    GrammarMask,
    GrammarStateError,
)
from trajlm.model import Model, ModelConfig, generate, generate_batch
from trajlm.tokenizer import BpeTokenizer

ENV = EnvironmentSet(
    day_type="Weekday", temp_band="lt25", weather="Sunny", covid_band="lt20000"
)
ATTRS = AttributeSet(gender="male", age_band="30to59")


def build_line(alphabet, cells, gaps, env=None, attrs=None, temp_at=()):
    offsets = [0]
    for gap in gaps:
        offsets.append(offsets[-1] + gap)
    stops = []
    for idx, (cell, offset) in enumerate(zip(cells, offsets)):
        flag = HomeFlag.TEMP_HOME if idx in temp_at else HomeFlag.NOT_HOME
        stops.append(Stop(cell, offset, flag))
    stops[-1] = Stop(stops[-1].cell, stops[-1].offset, HomeFlag.FINAL_HOME)
    day = DayTrajectory(t0=480, stops=tuple(stops))
    return serialize(day, alphabet, env=env, attrs=attrs)


@pytest.fixture(scope="module")
def setup():
    alphabet = TrajectoryAlphabet()
    points = [
        GeoPoint(35.6500, 139.9000),
        GeoPoint(35.6520, 139.9030),
        GeoPoint(35.6600, 139.9100),
        GeoPoint(35.6700, 139.9200),
        GeoPoint(35.6800, 139.9300),
        GeoPoint(35.6900, 139.9400),
    ]
    cells = [alphabet.cell_to_chars(encode_cell(p)) for p in points]
    for tau in range(6, 14):
        alphabet.interval_char(tau)
    lines = [
        build_line(alphabet, cells[:5], [31, 47, 71, 106]),
        build_line(alphabet, cells[1:6], [47, 31, 106, 71]),
        build_line(alphabet, [cells[0], cells[2], cells[0], cells[3], cells[0]],
                   [31, 31, 47, 47], temp_at={2}),
        build_line(alphabet, cells[:5], [31, 47, 71, 106], env=ENV, attrs=ATTRS),
        build_line(alphabet, cells[1:6], [106, 71, 47, 31], env=ENV),
    ]
    tokenizer = BpeTokenizer.train(
        lines, target_vocab_size=24 + len(alphabet.all_chars()) + 8
    )
    return alphabet, cells, lines, tokenizer, GrammarMask(tokenizer, alphabet)


def allowed_tokens(setup_tuple, text):
    _, _, _, tok, mask = setup_tuple
    ids = tok.tokenize(text)
    legal = mask.allowed(ids)
    return {tok.token_of(i) for i in np.flatnonzero(legal)}


class TestStateTracking:
    def test_prompt_ends_in_interval_state(self, setup):
        _, _, lines, tok, mask = setup
        state = mask.state_after(tok.tokenize(make_prompt(lines[0])))
        assert state[0] == EXPECT_INTERVAL

    def test_full_line_reaches_done(self, setup):
        _, _, lines, tok, mask = setup
        assert mask.state_after(tok.tokenize(lines[0]))[0] == DONE

    def test_after_first_cell(self, setup):
        _, cells, _, tok, mask = setup
        assert mask.state_after(tok.tokenize(cells[0]))[0] == AFTER_CELL

    def test_temp_mark_state(self, setup):
        _, cells, _, tok, mask = setup
        assert mask.state_after(tok.tokenize(cells[0] + ","))[0] == AFTER_TEMP

    def test_conditioning_tracked(self, setup):
        _, _, _, tok, mask = setup
        state = mask.state_after(tok.tokenize("[Weekday][Sunny]"))
        assert state[0] == PREFIX
        assert state[1] == frozenset({"day_type", "weather"})

    def test_ungrammatical_ids_raise(self, setup):
        _, _, _, tok, mask = setup
        with pytest.raises(GrammarStateError):
            mask.state_after(tok.tokenize("."))


class TestMasks:
    def test_interval_state_allows_only_interval_initial_tokens(self, setup):
        _, _, lines, _, _ = setup
        tokens = allowed_tokens(setup, make_prompt(lines[0]))
        assert tokens
        assert all(level_range_of_char(t[0]) == "R" for t in tokens)

    def test_after_cell_allows_exactly_marks(self, setup):
        _, cells, _, _, _ = setup
        assert allowed_tokens(setup, cells[0]) == {",", "_", "."}

    def test_after_temp_mark_only_separator(self, setup):
        _, cells, _, _, _ = setup
        assert allowed_tokens(setup, cells[0] + ",") == {"_"}

    def test_done_allows_nothing(self, setup):
        _, _, lines, _, _ = setup
        assert allowed_tokens(setup, lines[0]) == set()

    def test_cell_positions_advance_by_level(self, setup):
        _, cells, _, _, _ = setup
        for k in range(1, 5):
            tokens = allowed_tokens(setup, cells[0][:k])
            assert tokens
            assert all(level_range_of_char(t[0]) == k + 1 for t in tokens)

    def test_duplicate_category_blocked(self, setup):
        tokens = allowed_tokens(setup, "[Weekday]")
        assert "[Weekend]" not in tokens and "[Weekday]" not in tokens
        assert "[Sunny]" in tokens

    def test_delimiter_needs_complete_environment(self, setup):
        assert "|" not in allowed_tokens(setup, "[Weekday]")
        full_env = "[Weekday][h<25C][Sunny][n<20000]"
        assert "|" in allowed_tokens(setup, full_env)

    def test_delimiter_fine_with_attributes_only(self, setup):
        assert "|" in allowed_tokens(setup, "[Male]")

    def test_first_cell_only_on_bare_start(self, setup):
        _, _, _, tok, mask = setup
        start = {t for t in allowed_tokens(setup, "") if t[0] != "["}
        assert "|" in start
        assert any(level_range_of_char(t[0]) == 1 for t in start)
        after_special = allowed_tokens(setup, "[Weekday]")
        assert all(
            t.startswith("[") for t in after_special
        ), "cells must wait for the delimiter once conditioning started"

    def test_masks_are_cached(self, setup):
        _, _, lines, tok, mask = setup
        ids = tok.tokenize(make_prompt(lines[0]))
        assert mask.allowed(ids) is mask.allowed(list(ids))

    def test_alphabet_restriction(self, setup):
        alphabet, cells, lines, tok, _ = setup
        # same grid chars (identical registration order) but fewer interval
        # bins: line gaps 31/47/71/106 bin to taus 9..12, so dropping 12
        # removes a char the tokenizer does know
        sub = TrajectoryAlphabet()
        for cell in cells:
            assert sub.cell_to_chars(alphabet.chars_to_cell(cell)) == cell
        for tau in range(6, 12):
            sub.interval_char(tau)
        restricted = GrammarMask(tok, sub)
        tokens = {
            tok.token_of(i)
            for i in np.flatnonzero(restricted.allowed(tok.tokenize(cells[0] + "_")))
        }
        assert tokens
        assert alphabet.interval_char(12) not in "".join(tokens)
        assert any(alphabet.interval_char(9) == t[0] for t in tokens)


@pytest.fixture(scope="module")
def toy_model(setup):
    _, _, _, tok, _ = setup
    cfg = ModelConfig(vocab_size=tok.vocab_size, n_layers=1, n_heads=2,
                      d_model=16, context_length=160, seed=7)
    return Model(cfg)


class TestConstrainedSampling:
    def test_untrained_model_yields_parseable_lines(self, setup, toy_model):
        alphabet, _, lines, tok, mask = setup
        prompt = tok.tokenize(make_prompt(lines[3]))
        stop = tok.id_of(".")
        finished = 0
        for seed in range(6):
            res = generate(toy_model, prompt, stop_id=stop, max_tokens=140,
                           temperature=1.0, seed=seed, constraint=mask.allowed)
            if res.truncated:
                continue
            finished += 1
            text = tok.detokenize(res.ids)
            env, attrs, day = parse(text, alphabet)
            assert text.startswith(make_prompt(lines[3]))
            assert env == ENV
            assert len(day.stops) >= 5
        assert finished >= 1

    def test_batched_sampling_matches_grammar(self, setup, toy_model):
        alphabet, _, lines, tok, mask = setup
        prompt = tok.tokenize(make_prompt(lines[0]))
        stop = tok.id_of(".")
        results = generate_batch(toy_model, [prompt] * 4, stop_id=stop,
                                 max_tokens=140, temperature=1.0, seed=3,
                                 constraint=mask.allowed)
        assert any(not r.truncated for r in results)
        for res in results:
            if not res.truncated:
                parse(tok.detokenize(res.ids), alphabet)
