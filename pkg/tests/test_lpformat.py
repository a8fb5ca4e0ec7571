import re

import numpy as np
import pytest

from mipprune.bounds import propagate_batch
from mipprune.encoding import encode_network
from mipprune.errors import ModelFormatError
from mipprune.lpformat import read_solution, write_lp, write_solution
from mipprune.network import dense, init_network, maxpool
from mipprune.solver import SolveConfig, solve_mip

NUM = r"-?\d+(\.\d+)?([eE][+-]?\d+)?"
TERM = rf"[+-] {NUM} [a-z][a-z0-9_]*"
FIRST_TERM = rf"-?{NUM} [a-z][a-z0-9_]*"
EXPR = rf"{FIRST_TERM}( {TERM})*"


def make_model(seed=0, with_pool=False):
    if with_pool:
        net = init_network(4, [dense(4), maxpool(2), dense(2, activation="none")], seed=seed)
        xs = np.random.default_rng(seed).normal(size=(2, 4))
    else:
        net = init_network(2, [dense(3), dense(2, activation="none")], seed=seed)
        xs = np.random.default_rng(seed).normal(size=(2, 2))
    ys = np.array([0, 1])
    bounds = propagate_batch(net, xs, 0.0)
    return encode_network(net, xs, ys, bounds)


class TestWriter:
    def test_sections_in_order(self, tmp_path):
        model = make_model()
        p = tmp_path / "m.lp"
        write_lp(model, p)
        text = p.read_text()
        idx = [text.index(s) for s in ("Minimize", "Subject To", "Bounds", "End")]
        assert idx == sorted(idx)

    def test_strict_grammar(self, tmp_path):
        model = make_model(with_pool=True)
        p = tmp_path / "m.lp"
        write_lp(model, p)
        lines = p.read_text().splitlines()
        section = None
        for line in lines:
            if line.startswith("\\"):
                continue
            if line in ("Minimize", "Subject To", "Bounds", "Binaries", "End"):
                section = line
                continue
            body = line.strip()
            if section == "Minimize":
                assert re.fullmatch(rf"obj: {EXPR}", body), body
            elif section == "Subject To":
                assert re.fullmatch(rf"c\d+: {EXPR} (<=|>=|=) {NUM}", body), body
            elif section == "Bounds":
                ok = (
                    re.fullmatch(rf"({NUM}|-inf) <= [a-z][a-z0-9_]* <= ({NUM}|\+inf)", body)
                    or re.fullmatch(rf"[a-z][a-z0-9_]* = ({NUM}|-inf)", body)
                    or re.fullmatch(r"[a-z][a-z0-9_]* free", body)
                )
                assert ok, body
            elif section == "Binaries":
                assert re.fullmatch(r"([a-z][a-z0-9_]*)( [a-z][a-z0-9_]*)*", body), body

    def test_binaries_section_lists_exactly_z_and_m(self, tmp_path):
        model = make_model(with_pool=True)
        p = tmp_path / "m.lp"
        write_lp(model, p)
        text = p.read_text()
        body = text.split("Binaries")[1].split("End")[0].split()
        want = sorted(v.name for v in model.variables if v.binary)
        assert sorted(body) == want
        assert all(name.startswith(("z_", "m_")) for name in body)

    def test_stable_variable_names(self, tmp_path):
        model = make_model()
        names = [v.name for v in model.variables]
        assert any(re.fullmatch(r"h_\d+_\d+_\d+", n) for n in names)
        assert any(re.fullmatch(r"z_\d+_\d+_\d+", n) for n in names)
        assert any(re.fullmatch(r"s_\d+_\d+", n) for n in names)
        assert "t_min" in names
        assert any(n.startswith("t_lse_") for n in names)


class TestSolutionRoundTrip:
    def test_own_incumbent_round_trips(self, tmp_path):
        model = make_model(seed=3)
        sol = solve_mip(model, SolveConfig(), warm=model.reference_assignment)
        p = tmp_path / "m.sol"
        write_solution(model, sol.values, sol.objective, p)
        x, obj = read_solution(model, p)
        assert obj == pytest.approx(sol.objective, abs=1e-9)
        assert np.max(np.abs(x - sol.values)) <= 1e-15
        assert model.check_assignment(x) == []

    def test_unknown_variable_rejected(self, tmp_path):
        model = make_model()
        p = tmp_path / "bad.sol"
        p.write_text("# objective 0\nnope_0_0 1.0\n")
        with pytest.raises(ModelFormatError):
            read_solution(model, p)

    def test_malformed_line_reports_number(self, tmp_path):
        model = make_model()
        p = tmp_path / "bad.sol"
        p.write_text("s_0_0 1.0 extra\n")
        with pytest.raises(ModelFormatError) as err:
            read_solution(model, p)
        assert err.value.line == 1

    def test_missing_vars_default_zero(self, tmp_path):
        model = make_model()
        p = tmp_path / "part.sol"
        p.write_text("s_0_0 0.25\n")
        x, obj = read_solution(model, p)
        assert obj is None
        assert x[model.s_vars[(0, 0)]] == 0.25
        assert np.count_nonzero(x) == 1
