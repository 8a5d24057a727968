"""Shared fixtures: tiny corpora, seeded images, and a local HTTP stub."""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest
from PIL import Image

from rdrag.rng import SplitMix64

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURES = REPO_ROOT / "fixtures"
GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def fixture_corpus_path() -> Path:
    return FIXTURES / "corpus" / "cases.jsonl"


def write_png(path: Path, key: str, side: int = 8) -> Path:
    """Deterministic noise image; same key always gives the same bytes."""
    rng = SplitMix64.for_key(0xBEEF, key)
    pixels = bytes(rng.next_below(256) for _ in range(side * side * 3))
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.frombytes("RGB", (side, side), pixels).save(path, format="PNG")
    return path


def write_flat_png(path: Path, rgb: tuple[int, int, int], side: int = 8) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.new("RGB", (side, side), rgb).save(path, format="PNG")
    return path


def write_corpus(
    tmp_path: Path,
    rows: list[dict],
    name: str = "cases.jsonl",
    with_images: bool = True,
) -> Path:
    """Write a corpus JSONL plus one PNG per row under tmp_path."""
    path = tmp_path / name
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for row in rows:
        row = dict(row)
        row.setdefault("image", f"images/{row['id']}.png")
        if with_images:
            write_png(tmp_path / row["image"], key=row["id"])
        lines.append(json.dumps(row, ensure_ascii=False))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):  # noqa: N802 - http.server API
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        self.server.requests.append({"path": self.path, "body": body, "headers": dict(self.headers)})
        status, payload = self.server.respond(body)
        data = payload if isinstance(payload, (bytes, bytearray)) else json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):  # silence test output
        pass


class StubServer(ThreadingHTTPServer):
    """Local HTTP stub; `script` is a list of (status, payload) consumed in
    order, or a callable(body) -> (status, payload) used for every request."""

    def __init__(self):
        super().__init__(("127.0.0.1", 0), _StubHandler)
        self.requests: list[dict] = []
        self.script = []
        self._lock = threading.Lock()

    def respond(self, body):
        with self._lock:
            if callable(self.script):
                return self.script(body)
            if self.script:
                return self.script.pop(0)
            return 200, {"error": "stub exhausted"}

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.server_address[1]}/"


@pytest.fixture
def stub_server():
    server = StubServer()
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()


ACCEPTANCE_SUMMARIES = {
    1: "cosine, tf-idf, and top-k match brute-force oracles on 1000 randomized instances each",
    2: "category accuracy equals the counting fraction exactly",
    3: "prompt snapshots match the golden files byte-for-byte, format block verbatim",
    4: "labeled replies round-trip 1000 randomized field triples under both colon widths",
    5: "fixture pipeline accuracy equals the standalone neighbor script; cold runs bit-identical",
    6: "random and perceptual scorers complete the ablation; random accuracy within 5 sigma",
    7: "shipped reference numbers render into the committed table layouts byte-for-byte",
    8: "stratified library counts stay within 1 of proportional on 200 random corpora",
}

_CRITERION_RE = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


def _criterion_number(report) -> int | None:
    match = _CRITERION_RE.search(getattr(report, "nodeid", "") or "")
    return int(match.group(1)) if match else None


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    outcomes: dict[int, bool] = {}
    for status in ("failed", "error", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            num = _criterion_number(report)
            if num is not None:
                outcomes[num] = False
    for report in terminalreporter.stats.get("passed", []):
        num = _criterion_number(report)
        if num is not None and num not in outcomes:
            outcomes[num] = True
    if not outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(outcomes):
        verdict = "PASS" if outcomes[num] else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {verdict} - {ACCEPTANCE_SUMMARIES.get(num, '')}")
