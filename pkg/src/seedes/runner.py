"""Turn a manifest into a model, a reward function and a finished run directory.

Run directory layout::

    manifest.yaml            resolved manifest, written before iteration 1
    runlog.jsonl             header, one record per iteration, footer
    metrics.csv              one row per iteration
    snapshots/iter_000000.esp, iter_<t>.esp every checkpoint_every, final.esp
"""

from __future__ import annotations

import copy
import logging
import subprocess
import sys
from pathlib import Path

from .engine import EsResult, run_es
from .manifest import RunManifest, parse_manifest
from .models import SphereModel, sphere_reward
from .tasks.conciseness import ConcisenessTask
from .tasks.countdown import CountdownTask
from .tasks.datasets import BUILTIN, load_countdown, load_pairs
from .tinylm import TinyLm

log = logging.getLogger(__name__)


def resolved(man: RunManifest, base: Path | None = None) -> RunManifest:
    """Copy with file references made absolute (relative to ``base``)."""
    man = copy.deepcopy(man)
    base = Path.cwd() if base is None else base
    if man.model.snapshot:
        man.model.snapshot = str((base / man.model.snapshot).resolve())
    if man.task.dataset and man.task.dataset not in BUILTIN:
        man.task.dataset = str((base / man.task.dataset).resolve())
    man.output_dir = str((base / man.output_dir).resolve())
    return man


def build(man: RunManifest):
    """(model, reward_fn) for a manifest; deterministic."""
    m, t = man.model, man.task
    if m.kind == "sphere":
        model = SphereModel.create(m.dim, m.layers, m.init_seed, m.target_seed)
        return model, sphere_reward
    model = TinyLm.load(m.snapshot)
    if t.kind == "conciseness":
        pairs = load_pairs(t.dataset or "conciseness-train")
        return model, ConcisenessTask(pairs, t.max_new_tokens, t.batch_size)
    instances = [li.instance for li in load_countdown(t.dataset)]
    return model, CountdownTask(instances, t.max_new_tokens, t.batch_size)


def worker_setup(text: str):
    return build(parse_manifest(text).validate())


def initial_params(man: RunManifest):
    return build(man)[0].params


def spawn_workers(address: str, count: int, heartbeat_interval: float) -> list[subprocess.Popen]:
    cmd = [sys.executable, "-m", "seedes", "worker", "--address", address,
           "--heartbeat-interval", str(heartbeat_interval)]
    return [subprocess.Popen(cmd + ["--name", f"local{i}"]) for i in range(count)]


def execute(man: RunManifest, *, on_iteration=None) -> EsResult:
    """Run a validated, resolved manifest into ``man.output_dir``."""
    out = Path(man.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.yaml").write_text(man.to_yaml())
    model, reward_fn = build(man)
    meta = {"model": man.to_dict()["model"], "task": man.to_dict()["task"]}
    if man.es.workers <= 1:
        return run_es(man.es, model, reward_fn, run_dir=out,
                      checkpoint_every=man.checkpoint_every, meta=meta, on_iteration=on_iteration)

    from .dist.harness import run_distributed
    from .dist.transport import TcpHub

    d = man.distributed
    hub = TcpHub(d.address)
    procs = []
    if d.spawn_workers:
        procs = spawn_workers(hub.address, man.es.workers, d.heartbeat_interval)
    else:
        log.info("waiting for %d worker(s) on %s", man.es.workers, hub.address)
    try:
        result, _ = run_distributed(man.es, model, hub, setup_text=man.to_yaml(),
                                    timeout=d.timeout, heartbeat_interval=d.heartbeat_interval,
                                    run_dir=out, checkpoint_every=man.checkpoint_every,
                                    meta=meta, on_iteration=on_iteration)
    finally:
        for p in procs:
            try:
                p.wait(timeout=30)
            except subprocess.TimeoutExpired:
                p.kill()
    return result
