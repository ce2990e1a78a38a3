"""Shared fixtures: a tiny corpus, initialized checkpoints, live servers.

The conformance suite exercises the server through the pipeline
package's own HTTP client, so `dstpipe` (installed from the repository
root) is a test dependency.
"""
from __future__ import annotations

import contextlib
import shutil
import threading
import time

import pytest
import uvicorn

from dstpipe.records import write_dialogues
from dstpipe.testing import synthetic_corpus

from dstserve.cli import main_init
from dstserve.server import create_app


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """20 labeled dialogues split 10 labeled / 5 unlabeled / 5 valid."""
    root = tmp_path_factory.mktemp("corpus")
    dialogues = synthetic_corpus(20, seed=31, prefix="SRV")
    write_dialogues(root / "corpus.jsonl", dialogues)
    return {
        "file": root / "corpus.jsonl",
        "dialogues": dialogues,
        "labeled": dialogues[:10],
        "unlabeled": dialogues[10:15],
        "valid": dialogues[15:20],
    }


@pytest.fixture(scope="session")
def models_root(tmp_path_factory, corpus):
    """Tiny randomly initialized checkpoints for all three tasks."""
    out = tmp_path_factory.mktemp("models") / "base"
    assert main_init(["--corpus", str(corpus["file"]), "--out", str(out), "--seed", "5"]) == 0
    return out


@pytest.fixture
def fresh_models(models_root, tmp_path):
    """A private copy of the checkpoints for tests that retrain or mutate."""
    target = tmp_path / "models"
    shutil.copytree(models_root, target)
    return target


@pytest.fixture(scope="session")
def run_server():
    """Context manager starting a registry's app on an ephemeral port."""

    @contextlib.contextmanager
    def run(registry):
        config = uvicorn.Config(
            create_app(registry), host="127.0.0.1", port=0, log_level="warning"
        )
        server = uvicorn.Server(config)
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.monotonic() + 30
        while not server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("server did not start")
            time.sleep(0.02)
        port = server.servers[0].sockets[0].getsockname()[1]
        try:
            yield f"http://127.0.0.1:{port}"
        finally:
            server.should_exit = True
            thread.join(timeout=10)

    return run
