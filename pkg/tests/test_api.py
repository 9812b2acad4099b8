import pytest
from fastapi.testclient import TestClient

from agenttune.app.main import app
from agenttune.core.memory import MemoryStore
from agenttune.core.orchestrator import REPORT_FILE, TREE_FILE, run_session

API_KEY = "test-key"
AUTH = {"Authorization": f"Bearer {API_KEY}"}


@pytest.fixture
def client(tmp_path, monkeypatch) -> TestClient:
    monkeypatch.setenv("AGENTTUNE_API_KEY", API_KEY)
    monkeypatch.setenv("AGENTTUNE_SESSIONS_DIR", str(tmp_path / "sessions"))
    monkeypatch.setenv("AGENTTUNE_LTM", str(tmp_path / "ltm.json"))
    (tmp_path / "sessions").mkdir()
    return TestClient(app)


@pytest.fixture
def finished_session(make_config, tmp_path):
    session_dir = tmp_path / "sessions" / "demo"
    report = run_session(make_config(max_iterations=2), session_dir)
    return session_dir, report


# --- AUTH ---

def test_wrong_key_is_401(client):
    response = client.get("/memory", headers={"Authorization": "Bearer wrong-key"})

    assert response.status_code == 401, response.text


def test_missing_header_is_refused(client):
    # HTTPBearer answers 403 or 401 depending on the FastAPI release
    assert client.get("/sessions/demo/report").status_code in (401, 403)


def test_unset_api_key_rejects_everyone(client, monkeypatch):
    monkeypatch.delenv("AGENTTUNE_API_KEY")

    response = client.get("/memory", headers=AUTH)

    assert response.status_code == 401
    assert response.headers["WWW-Authenticate"] == "Bearer"


# --- SESSIONS ---

def test_report_and_tree_of_finished_session(client, finished_session):
    session_dir, report = finished_session

    # Action
    report_response = client.get("/sessions/demo/report", headers=AUTH)
    tree_response = client.get("/sessions/demo/tree", headers=AUTH)

    # Assert
    assert report_response.status_code == 200
    assert report_response.json()["mpg"] == pytest.approx(report.mpg)
    assert report_response.json()["stop_reason"] == "max iterations"
    assert tree_response.status_code == 200
    assert tree_response.json()["root_id"] == "n0000"
    assert set(tree_response.json()["nodes"]) >= {"n0000", "n0001"}


@pytest.mark.parametrize("name", ["absent", "..", "%2E%2E"])
def test_unknown_session_is_404(name, client):
    assert client.get(f"/sessions/{name}/report", headers=AUTH).status_code == 404


def test_session_without_report_is_404(client, tmp_path):
    (tmp_path / "sessions" / "running").mkdir()

    response = client.get("/sessions/running/report", headers=AUTH)

    assert response.status_code == 404
    assert response.json()["detail"] == f"Session running has no {REPORT_FILE} yet"


@pytest.mark.parametrize("filename, path", [
    (REPORT_FILE, "/sessions/broken/report"),
    (TREE_FILE, "/sessions/broken/tree"),
])
def test_corrupt_state_is_500(filename, path, client, tmp_path):
    broken = tmp_path / "sessions" / "broken"
    broken.mkdir()
    (broken / filename).write_text('{"mpg": "lots"')

    assert client.get(path, headers=AUTH).status_code == 500


# --- MEMORY ---

def test_memory_lists_long_term_insights(client, seeded_ltm, tmp_path):
    MemoryStore.dump_document(seeded_ltm, tmp_path / "ltm.json")

    response = client.get("/memory", headers=AUTH)

    assert response.status_code == 200
    assert [i["id"] for i in response.json()["insights"]] == ["ins-0001", "ins-0002"]


def test_missing_memory_document_is_empty(client):
    response = client.get("/memory", headers=AUTH)

    assert response.status_code == 200
    assert response.json()["insights"] == []


def test_corrupt_memory_document_is_500(client, tmp_path):
    (tmp_path / "ltm.json").write_text("[not a document]")

    assert client.get("/memory", headers=AUTH).status_code == 500
