"""Записывает эталонные файлы PoC в data/: workflow фильма, workflow PoC, политику и сценарий."""
import json
import logging
import sys
from pathlib import Path

import config
from app.poc import movie_workflow, poc_policy, poc_workflow
from app.policy import dump_policy
from app.workflow import dump_workflow

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"

EXAMPLE_SCRIPT = [
    {"src": "owner", "dst": "vfx-1", "method": "POST"},
    {"src": "owner", "dst": "color", "method": "POST"},
    {"src": "vfx-1", "dst": "vfx-2", "method": "GET"},
]


def write_fixtures(target: Path = DATA_DIR):
    target.mkdir(parents=True, exist_ok=True)
    files = {
        "movie_workflow.json": dump_workflow(movie_workflow()),
        "poc_workflow.json": dump_workflow(poc_workflow()),
        "poc_policy.json": dump_policy(poc_policy()),
        "poc_script.json": json.dumps(EXAMPLE_SCRIPT, indent=2) + "\n",
    }
    for name, text in files.items():
        (target / name).write_text(text, encoding="utf-8")
        logger.info(f"Записан {target / name}")


if __name__ == "__main__":
    logging.basicConfig(level=config.LOG_LEVEL)
    write_fixtures(Path(sys.argv[1]) if len(sys.argv) > 1 else DATA_DIR)
