import logging
import os
from pathlib import Path

from fastapi import FastAPI, HTTPException, Security, status
from fastapi.security import HTTPAuthorizationCredentials, HTTPBearer
from pydantic import BaseModel, ValidationError

from agenttune.core.memory import MemoryStore
from agenttune.core.orchestrator import REPORT_FILE, TREE_FILE
from agenttune.errors import SessionStateError
from agenttune.models.memory import MemoryDocument
from agenttune.models.search import SearchTree
from agenttune.models.session import SessionReport

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

security = HTTPBearer()


async def verify_token(credentials: HTTPAuthorizationCredentials = Security(security)):
    """
    Validates the Bearer token from the Authorization header against AGENTTUNE_API_KEY.
    """
    token = credentials.credentials
    expected_token = os.getenv("AGENTTUNE_API_KEY")

    if not expected_token or token != expected_token:
        raise HTTPException(
            status_code=status.HTTP_401_UNAUTHORIZED,
            detail="Invalid authentication credentials",
            headers={"WWW-Authenticate": "Bearer"},
        )
    return token


app = FastAPI(title="AgentTune Sessions")


def _sessions_root() -> Path:
    return Path(os.getenv("AGENTTUNE_SESSIONS_DIR", "sessions"))


def _session_file(name: str, filename: str) -> Path:
    root = _sessions_root().resolve()
    session_dir = (root / name).resolve()
    # names are single path components under the sessions root
    if session_dir.parent != root or not session_dir.is_dir():
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail=f"No session named {name}"
        )
    path = session_dir / filename
    if not path.exists():
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail=f"Session {name} has no {filename} yet"
        )
    return path


def _read(model: type[BaseModel], path: Path) -> BaseModel:
    try:
        return model.model_validate_json(path.read_bytes())
    except (OSError, ValidationError) as e:
        logger.error(f"Unreadable session state {path}: {e}")
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="Stored session state could not be read."
        )


@app.get(
    "/sessions/{name}/report",
    response_model=SessionReport,
    responses={
        404: {"description": "Session or report not found"},
        500: {"description": "Stored report unreadable"}
    }
)
async def get_report(name: str, token: str = Security(verify_token)) -> SessionReport:
    logger.info(f"Serving report for session {name}")
    return _read(SessionReport, _session_file(name, REPORT_FILE))


@app.get(
    "/sessions/{name}/tree",
    response_model=SearchTree,
    responses={
        404: {"description": "Session or tree not found"},
        500: {"description": "Stored tree unreadable"}
    }
)
async def get_tree(name: str, token: str = Security(verify_token)) -> SearchTree:
    logger.info(f"Serving search tree for session {name}")
    return _read(SearchTree, _session_file(name, TREE_FILE))


@app.get(
    "/memory",
    response_model=MemoryDocument,
    responses={500: {"description": "Memory document unreadable"}}
)
async def get_memory(token: str = Security(verify_token)) -> MemoryDocument:
    path = Path(os.getenv("AGENTTUNE_LTM", "ltm.json"))
    try:
        insights = MemoryStore.load_document(path)
    except (OSError, SessionStateError) as e:
        logger.error(f"Unreadable memory document {path}: {e}")
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="Long-term memory could not be read."
        )
    return MemoryDocument(insights=insights)
