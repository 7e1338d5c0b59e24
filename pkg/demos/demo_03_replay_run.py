"""
An offline end-to-end run
=========================

The bundled replay store answers every prompt of the 20-sample fixture
corpus as a perfect model would. Running the pipeline against it needs no
network, and re-grading the written run reproduces its numbers.
"""

import tempfile
from pathlib import Path

from kgetool import fixtures
from kgetool.harness import grade_run, run_corpus
from kgetool.llm import Gateway, ReplayBackend

corpus, kg, tools = fixtures.samples(), fixtures.family_kg(), fixtures.tools()
replay = ReplayBackend(fixtures.fixture_path("replay_gold_echo.jsonl"))
config = fixtures.gold_echo_config("extracted")

out = Path(tempfile.mkdtemp()) / "run"
report = run_corpus(
    corpus, kg, tools, config,
    extraction_gateway=Gateway(replay, fixtures.EXTRACTION_MODEL),
    tooluse_gateway=Gateway(replay, fixtures.TOOLUSE_MODEL),
    out_dir=out,
)
print(report.table())
print(sorted(p.name for p in out.iterdir()))

# Grading reads only the logged model outputs.
print("re-graded equal:", grade_run(out, corpus, kg).aggregates == report.aggregates)

# One sample's log, to see what the harness keeps.
first = report.per_sample[0]["log"]
print(first["extraction_output"])
print(first["extracted_links"])
