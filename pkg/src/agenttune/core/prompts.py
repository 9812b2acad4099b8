import json
import re
from functools import cache
from importlib import resources as package_resources
from typing import Any

from agenttune.errors import MalformedResponse

REQUIRED_PLACEHOLDERS = {
    "propose_children": ("{NODE}", "{DIGESTS}", "{INSIGHTS}", "{TASK}", "{CONSTRAINTS}"),
    "select_node": ("{DIGESTS}", "{INSIGHTS}", "{TASK}"),
    "filter_constraints": ("{NODE}", "{TASK}", "{CONSTRAINTS}"),
    "synthesize_extraction": ("{SYSTEM}", "{METRICS}", "{SAMPLES}", "{FEEDBACK}"),
    "generate_insights": ("{NODE}", "{DIGESTS}", "{TASK}"),
    "vote_insights": ("{DIGESTS}", "{INSIGHTS}", "{TASK}"),
    "summarize_digest": ("{DIGESTS}",),
}

_FENCE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


@cache
def load_template(name: str) -> str:
    text = package_resources.files("agenttune.resources").joinpath(f"prompts/{name}.txt").read_text()
    missing = [p for p in REQUIRED_PLACEHOLDERS.get(name, ()) if p not in text]
    if missing:
        raise ValueError(f"prompt template {name} lacks placeholders {missing}")
    return text


def render(name: str, **fields: Any) -> str:
    """Fills ``{KEY}`` placeholders. Plain replacement, so JSON braces in values are safe."""
    text = load_template(name)
    for key, value in fields.items():
        if not isinstance(value, str):
            value = json.dumps(value, indent=2, sort_keys=True, default=str)
        text = text.replace("{" + key.upper() + "}", value)
    return text


def parse_json_reply(text: str) -> Any:
    """Parses the last fenced JSON block of a reply, or the whole reply when there is none."""
    blocks = _FENCE.findall(text)
    candidate = blocks[-1] if blocks else text
    try:
        return json.loads(candidate.strip())
    except json.JSONDecodeError as e:
        raise MalformedResponse(f"reply is not valid JSON: {e}") from e
