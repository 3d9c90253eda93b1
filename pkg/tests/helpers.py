"""Shared oracles and fixtures-by-construction for the test suite."""

from __future__ import annotations

import itertools
import json
import random
import threading
import time
from fractions import Fraction
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ados_scoring.features import FeatureConfig, extract_features
from ados_scoring.items import ITEMS, ItemScoreSheet
from ados_scoring.rules import Direction, LabeledExample, default_params, ladder


def oracle_ladder(s: float, direction: Direction, t1: float, t2: float) -> int:
    """Ladder written out case by case, independent of the package version."""
    if direction is Direction.HIGHER_IS_WORSE:
        if s >= t2:
            return 2
        if s >= t1:
            return 1
        return 0
    if s <= t2:
        return 2
    if s <= t1:
        return 1
    return 0


def planted_problem(corpus, seed: int = 0, per_item: int = 3):
    """Label ``corpus`` sessions with hidden thresholds drawn from a small grid.

    Every grid value is a midpoint between two distinct observed rule values,
    so any two candidates label at least one session differently and the
    planted pair is the unique zero-error candidate.
    """
    rng = random.Random(seed)
    base = default_params()
    cfg = FeatureConfig()
    feats = {t.session_id: extract_features(t, cfg) for t in corpus.sessions}
    grid, planted, labels = {}, {}, {sid: {} for sid in feats}
    for item in ITEMS:
        rule = base.rules[item]
        values = sorted({rule.value(f) for f in feats.values()})
        mids = [(a + b) / 2 for a, b in itertools.pairwise(values)]
        if len(mids) < 2 * per_item:
            raise ValueError(f"{item}: too few distinct values to plant a grid")
        picks = sorted(rng.sample(range(len(mids)), 2 * per_item))
        low, high = [mids[i] for i in picks[:per_item]], [mids[i] for i in picks[per_item:]]
        if rule.direction is Direction.HIGHER_IS_WORSE:
            pairs = [(low[k], high[k]) for k in range(per_item)]
        else:
            pairs = [(high[k], low[k]) for k in range(per_item)]
        rng.shuffle(pairs)
        grid[item] = pairs
        planted[item] = rng.choice(pairs)
        for sid, f in feats.items():
            labels[sid][item] = oracle_ladder(rule.value(f), rule.direction, *planted[item])
    strata = {sid: d.ternary.value for sid, d in corpus.diagnoses.items()}
    examples = [
        LabeledExample(sid, feats[sid], ItemScoreSheet(labels[sid], "clinician", sid), strata[sid])
        for sid in sorted(feats)
    ]
    return examples, grid, planted


def exhaustive_fit(examples, grid, folds, base=None):
    """Joint brute force over the product of all per-item grids.

    The objective is the sum over items of the mean validation-fold MAE;
    ties go to the first combination in product order.
    """
    base = base or default_params()
    by_id = {e.session_id: e for e in examples}
    cost = {}
    for item in ITEMS:
        rule = base.rules[item]
        for t1, t2 in grid[item]:
            fold_errs = []
            for fold in folds:
                errs = [
                    abs(oracle_ladder(rule.value(by_id[s].features), rule.direction, t1, t2) - by_id[s].labels[item])
                    for s in fold
                ]
                fold_errs.append(Fraction(sum(errs), len(errs)))
            cost[item, (t1, t2)] = sum(fold_errs) / 2
    best, best_cost = None, None
    for combo in itertools.product(*(grid[i] for i in ITEMS)):
        total = sum(cost[i, pair] for i, pair in zip(ITEMS, combo))
        if best_cost is None or total < best_cost:
            best, best_cost = combo, total
    return dict(zip(ITEMS, best)), best_cost


ENV = {"ADOS_LLM_API_KEY": "sk-test"}


def chat(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


class ScriptedServer:
    """Local HTTP server replaying a list of (status, body, headers) tuples, then 200s."""

    def __init__(self, script=(), delay=0.0, reply="A4: 1"):
        self.script = list(script)
        self.delay = delay
        self.reply = reply
        self.requests = []
        self.in_flight = 0
        self.peak = 0
        self.lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with outer.lock:
                    outer.requests.append({"body": body, "auth": self.headers.get("Authorization")})
                    outer.in_flight += 1
                    outer.peak = max(outer.peak, outer.in_flight)
                    status, payload, headers = outer.script.pop(0) if outer.script else (200, chat(outer.reply), {})
                try:
                    time.sleep(outer.delay)
                    data = json.dumps(payload).encode()
                    self.send_response(status)
                    for k, v in headers.items():
                        self.send_header(k, v)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                finally:
                    with outer.lock:
                        outer.in_flight -= 1

            def log_message(self, *args):
                pass

        class Server(ThreadingHTTPServer):
            daemon_threads = True

            def handle_error(self, request, client_address):
                pass  # clients that timed out close the socket early

        self.httpd = Server(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, args=(0.01,), daemon=True)

    @property
    def url(self):
        return f"http://127.0.0.1:{self.httpd.server_address[1]}/v1"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()
