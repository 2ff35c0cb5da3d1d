import json
import logging

from app.logging_metrics import JsonFormatter, export_textfile, registry, run_id
from app.coordinator import run_simulation


def _record(msg):
    return logging.LogRecord("sliceguard.test", logging.INFO, __file__, 1, msg, None, None)


def test_json_formatter_carries_run_id():
    fmt = JsonFormatter()
    token = run_id.set("abc123")
    try:
        line = json.loads(fmt.format(_record("hello")))
    finally:
        run_id.reset(token)
    assert line["msg"] == "hello"
    assert line["level"] == "INFO"
    assert line["run_id"] == "abc123"
    assert json.loads(fmt.format(_record("bye")))["run_id"] is None


def test_slots_counter_and_textfile(tmp_path, make_config):
    labels = {"algorithm": "baseline"}
    before = registry.get_sample_value("sliceguard_slots_total", labels) or 0.0
    run_simulation(make_config(horizon=4), 0, "baseline")
    assert registry.get_sample_value("sliceguard_slots_total", labels) == before + 4

    path = tmp_path / "sliceguard.prom"
    export_textfile(str(path))
    body = path.read_text(encoding="utf-8")
    assert "sliceguard_slots_total" in body
    assert "sliceguard_admm_iterations" in body


def test_admm_iterations_observed(make_config):
    before = registry.get_sample_value("sliceguard_admm_iterations_count") or 0.0
    run_simulation(make_config(horizon=3), 0, "learning")
    assert registry.get_sample_value("sliceguard_admm_iterations_count") == before + 3
