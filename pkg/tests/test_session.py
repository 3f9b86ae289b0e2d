"""測試執行 session 模組"""

import json

import pytest

from xmodal_depth.core.config import GradcheckConfig
from xmodal_depth.core.errors import InputError
from xmodal_depth.core.session import RESOLVED_CONFIG_NAME, RunSession


@pytest.fixture
def session(tmp_path):
    """建立測試用 session"""
    return RunSession(tmp_path / "out" / "nested", "gradcheck")


def test_session_creates_output_dir(session):
    """測試輸出目錄自動建立"""
    assert session.output_dir.is_dir()
    assert session.outputs == []


def test_path_records_outputs(session):
    """測試 path() 記錄輸出檔案且不重複"""
    first = session.path("report.json")
    session.path("report.json")
    session.path("metrics.csv")
    assert first == session.output_dir / "report.json"
    assert session.outputs == ["report.json", "metrics.csv"]


def test_write_resolved_config(session):
    """測試寫入解析後配置"""
    target = session.write_resolved(GradcheckConfig(seed=5))
    assert target.name == RESOLVED_CONFIG_NAME

    data = json.loads(target.read_text(encoding="utf-8"))
    assert data["subcommand"] == "gradcheck"
    assert data["params"]["seed"] == 5
    assert data["params"]["tolerance"] == pytest.approx(1e-4)
    assert list(data) == sorted(data)


def test_write_resolved_is_reproducible(tmp_path):
    """測試相同配置寫出相同位元組"""
    a = RunSession(tmp_path / "a", "gradcheck").write_resolved(GradcheckConfig())
    b = RunSession(tmp_path / "a", "gradcheck").write_resolved(GradcheckConfig())
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes().endswith(b"\n")


def test_output_dir_is_a_file(tmp_path):
    """測試輸出路徑被一般檔案佔用"""
    blocker = tmp_path / "blocker"
    blocker.write_text("x", encoding="utf-8")
    with pytest.raises(InputError):
        RunSession(blocker / "out", "eval")


def test_to_dict(session):
    """測試轉換為字典"""
    session.path("b.json")
    session.path("a.json")
    data = session.to_dict()
    assert data["subcommand"] == "gradcheck"
    assert data["outputs"] == ["a.json", "b.json"]
