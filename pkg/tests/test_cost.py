import json

import numpy as np
import pytest

from cefl.cost import (
    CostLedger,
    SizeModel,
    closed_form_delta,
    ledger_total,
    savings_ratio,
)
from cefl.errors import InputError
from cefl.model import LayerSpec, init_model


def test_size_model_matches_flat_lengths():
    m = init_model((LayerSpec(4, 3, "relu"), LayerSpec(3, 2, "softmax")), 0)
    sizes = SizeModel.for_model(m, bits_per_param=32)
    assert sizes.delta == (15 * 32, 8 * 32)
    for l in range(m.n_layers):
        assert sizes.delta[l] == m.flat_layer(l).size * 32


def test_size_model_rejects_nonpositive():
    with pytest.raises(InputError):
        SizeModel((0, 4))


class TestClosedForm:
    def test_direct_substitution(self):
        # (N+K)*sum_L + T*(K+1)*sum_B = 6*30 + 3*3*10 = 270
        assert closed_form_delta(4, 2, 3, 1, 2, (10, 20)) == 270

    def test_t_zero(self):
        assert closed_form_delta(4, 2, 0, 1, 2, (10, 20)) == 6 * 30

    def test_paper_configuration_ratio(self):
        # head holds ~0.5% of the bits; savings vs full-model FL at
        # T_regular=350 land at ~98.45%
        delta = (199 * 32, 1 * 32)
        cefl = closed_form_delta(67, 2, 100, 1, 2, delta)
        regular = 350 * (67 + 1) * sum(delta)
        assert savings_ratio(cefl, regular) == pytest.approx(0.9845, abs=5e-4)

    def test_b_out_of_range(self):
        with pytest.raises(InputError):
            closed_form_delta(4, 2, 3, 3, 2, (10, 20))


class TestLedger:
    def test_empty_total(self):
        ledger = CostLedger(SizeModel((100, 250)))
        assert ledger_total(ledger) == 0

    def test_two_events(self):
        ledger = CostLedger(SizeModel((100, 250)))
        ledger.record("init_upload", 0, "server", 1)
        ledger.record("fl_upload", 1, "server", 2)
        assert ledger_total(ledger) == 100 + 350
        assert ledger.total_bits == 450

    def test_bits_match_layer_range(self):
        ledger = CostLedger(SizeModel((7, 11, 13)))
        e = ledger.record("fl_broadcast", "server", "broadcast", 2)
        assert e.bits == 18

    def test_unknown_phase(self):
        ledger = CostLedger(SizeModel((1,)))
        with pytest.raises(InputError):
            ledger.record("gossip", 0, 1, 1)

    def test_phase_totals_and_summary(self):
        ledger = CostLedger(SizeModel((10, 20)))
        ledger.record("init_upload", 0, "server", 2)
        ledger.record("transfer", 0, "cluster0", 2)
        summary = ledger.summary(closed_form=60)
        assert summary["total_bits"] == 60
        assert summary["matches_closed_form"] is True
        assert summary["per_phase_bits"]["init_upload"] == 30

    def test_exports(self, tmp_path):
        ledger = CostLedger(SizeModel((10, 20)))
        ledger.record("init_upload", 3, "server", 2)
        ledger.export_csv(tmp_path / "ledger.csv")
        lines = (tmp_path / "ledger.csv").read_text().strip().split("\n")
        assert lines[0] == "phase,sender,receiver,layers,bits"
        assert lines[1] == "init_upload,3,server,2,30"
        ledger.export_summary(tmp_path / "summary.json", closed_form=30)
        data = json.loads((tmp_path / "summary.json").read_text())
        assert data["matches_closed_form"] is True


class TestSavingsRatio:
    def test_equal_costs(self):
        assert savings_ratio(100, 100) == 0.0

    def test_table_values(self):
        assert savings_ratio(1231, 79730) == pytest.approx(0.98456, abs=1e-5)

    def test_zero_candidate(self):
        assert savings_ratio(0, 79730) == 1.0

    def test_zero_baseline(self):
        with pytest.raises(InputError):
            savings_ratio(1, 0)
