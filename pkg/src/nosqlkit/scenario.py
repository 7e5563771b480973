"""Line-oriented cluster scenarios.

Each non-blank, non-comment line is ``tick<TAB>command<TAB>args``. The
simulator is advanced to ``tick`` before the command runs; a command whose tick
has already passed (because an earlier request took time) runs immediately.

Commands::

    cluster    nodes=3 mode=quorum|leader max_delay=3 drop_rate=0 ...   (first line only)
    config     BUCKET n=3 r=2 w=2 mode=sync|async
    crash      NODE [NODE...]
    recover    NODE [NODE...]
    partition  NODE [NODE...]          isolate these nodes from the rest
    heal       [NODE...]               no args heals every partition
    put        BUCKET KEY VALUE [via=N] [ctx=last|none] [session=S guarantee=G]
    delete     BUCKET KEY [via=N]
    get        BUCKET KEY [via=N] [replica=N] [pref=primary|secondary] [session=S guarantee=G]
    converge   [max_rounds=N]          anti-entropy until replicas agree
    assert     ok | error NAME | value V | absent | siblings N
               | converged BUCKET KEY | primary NODE

``assert`` checks the outcome of the most recent put/get/delete (or cluster
state for ``converged`` and ``primary``). A failed assertion is recorded and
the run continues.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from pathlib import Path

from nosqlkit.cluster import Cluster, ClusterConfig
from nosqlkit.errors import NoSQLKitError
from nosqlkit.replication.quorum import ReadResult, WriteMode
from nosqlkit.replication.session import Guarantee, SessionState, session_read, session_write
from nosqlkit.versioning import EMPTY_CLOCK, VectorClock

COMMANDS = frozenset({"cluster", "config", "crash", "recover", "partition", "heal", "put",
                      "delete", "get", "converge", "assert"})


class ScenarioError(ValueError):
    """The scenario text itself is malformed."""


@dataclass(frozen=True)
class Step:
    line: int
    tick: int
    command: str
    args: tuple[str, ...]
    options: dict[str, str]


@dataclass
class ScenarioResult:
    trace: list[str]
    failures: list[str] = field(default_factory=list)
    steps: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures


def parse_scenario(text: str) -> list[Step]:
    steps = []
    last_tick = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise ScenarioError(f"line {lineno}: expected tick<TAB>command[<TAB>args]")
        try:
            tick = int(parts[0])
        except ValueError:
            raise ScenarioError(f"line {lineno}: tick {parts[0]!r} is not an integer") from None
        if tick < last_tick:
            raise ScenarioError(f"line {lineno}: ticks must not decrease")
        last_tick = tick
        command = parts[1].strip()
        if command not in COMMANDS:
            raise ScenarioError(f"line {lineno}: unknown command {command!r}")
        if command == "cluster" and steps:
            raise ScenarioError(f"line {lineno}: cluster must be the first command")
        words = shlex.split("\t".join(parts[2:])) if len(parts) > 2 else []
        args = tuple(w for w in words if "=" not in w)
        options = dict(w.split("=", 1) for w in words if "=" in w)
        steps.append(Step(lineno, tick, command, args, options))
    return steps


def _config_from(options: dict[str, str], seed: int) -> ClusterConfig:
    kw: dict = {"seed": seed}
    for name, value in options.items():
        if name in ("nodes", "max_delay", "link_interval", "request_timeout",
                    "client_deadline", "anti_entropy_period"):
            kw[name] = int(value)
        elif name == "drop_rate":
            kw[name] = float(value)
        elif name in ("mode", "backend", "data_dir"):
            kw[name] = value
        elif name == "arbiters":
            kw[name] = tuple(value.split(","))
        elif name == "seed":
            kw[name] = int(value)
        else:
            raise ScenarioError(f"unknown cluster option {name!r}")
    return ClusterConfig(**kw)


class ScenarioRunner:
    def __init__(self, steps: list[Step], seed: int = 0, config: ClusterConfig | None = None):
        self.steps = steps
        if steps and steps[0].command == "cluster":
            config = _config_from(steps[0].options, seed)
            self.steps = steps[1:]
        self.cluster = Cluster(config or ClusterConfig(seed=seed))
        self.failures: list[str] = []
        self.last_result: ReadResult | None = None
        self.last_error: str | None = None
        self.clocks: dict[tuple[str, str], VectorClock] = {}
        self.sessions: dict[str, SessionState] = {}

    def run(self) -> ScenarioResult:
        sim = self.cluster.sim
        for step in self.steps:
            if step.tick > sim.now:
                sim.run_until(step.tick)
            getattr(self, "_do_" + step.command)(step)
        return ScenarioResult(self.cluster.trace_lines(), self.failures, len(self.steps))

    def _log(self, kind: str, detail: str) -> None:
        self.cluster.sim.log(kind, detail)

    def _fail(self, step: Step, message: str) -> None:
        self.failures.append(f"line {step.line}: {message}")
        self._log("assert-failed", message)

    def _need(self, step: Step, count: int) -> None:
        if len(step.args) < count:
            raise ScenarioError(f"line {step.line}: {step.command} needs {count} arguments")

    def _session(self, step: Step) -> SessionState | None:
        name = step.options.get("session")
        if name is None:
            return None
        if name not in self.sessions:
            guarantee = Guarantee(step.options.get("guarantee", "none"))
            scope = step.options.get("via") if guarantee is Guarantee.SESSION else None
            self.sessions[name] = SessionState(name, guarantee, scope)
        return self.sessions[name]

    # commands
    def _do_config(self, step: Step) -> None:
        self._need(step, 1)
        o = step.options
        self.cluster.configure_bucket(step.args[0], int(o["n"]) if "n" in o else None,
                                      int(o["r"]) if "r" in o else None,
                                      int(o["w"]) if "w" in o else None,
                                      WriteMode(o.get("mode", "sync")))

    def _do_crash(self, step: Step) -> None:
        self.cluster.crash(*step.args)

    def _do_recover(self, step: Step) -> None:
        self.cluster.recover(*step.args)

    def _do_partition(self, step: Step) -> None:
        self.cluster.partition(*step.args)

    def _do_heal(self, step: Step) -> None:
        self.cluster.heal(*step.args)

    def _do_put(self, step: Step, tombstone: bool = False) -> None:
        self._need(step, 2 if tombstone else 3)
        bucket, key = step.args[0], step.args[1]
        value = b"" if tombstone else step.args[2].encode("utf-8")
        via = step.options.get("via")
        ctx = step.options.get("ctx", "last")
        context = self.clocks.get((bucket, key), EMPTY_CLOCK) if ctx == "last" else EMPTY_CLOCK
        session = self._session(step)
        self.last_result = None
        try:
            if session is not None and not tombstone:
                clock = session_write(self.cluster, session, bucket, key, value, via=via)
            else:
                clock = self.cluster.put(bucket, key, value, context, via=via, tombstone=tombstone)
        except NoSQLKitError as exc:
            self.last_error = type(exc).__name__
            self._log("client", f"{step.command} {bucket}/{key} error={self.last_error}")
            return
        self.last_error = None
        self.clocks[(bucket, key)] = clock
        self._log("client", f"{step.command} {bucket}/{key} ok clock={clock.encode()}")

    def _do_delete(self, step: Step) -> None:
        self._do_put(step, tombstone=True)

    def _do_get(self, step: Step) -> None:
        self._need(step, 2)
        bucket, key = step.args[0], step.args[1]
        o = step.options
        session = self._session(step)
        try:
            if session is not None:
                result = session_read(self.cluster, session, bucket, key, via=o.get("via"))
            else:
                result = self.cluster.get(bucket, key, via=o.get("via"), replica=o.get("replica"),
                                          read_preference=o.get("pref", "primary"))
        except NoSQLKitError as exc:
            self.last_result = None
            self.last_error = type(exc).__name__
            self._log("client", f"get {bucket}/{key} error={self.last_error}")
            return
        self.last_error = None
        self.last_result = result
        self.clocks[(bucket, key)] = result.context
        shown = ",".join(v.value.decode("utf-8", "replace") for v in result.values) or "-"
        self._log("client", f"get {bucket}/{key} ok values={shown} clock={result.context.encode()}")

    def _do_converge(self, step: Step) -> None:
        rounds = self.cluster.converge(int(step.options.get("max_rounds", 10)))
        self._log("converge", f"rounds={rounds}")

    def _do_assert(self, step: Step) -> None:
        self._need(step, 1)
        what, rest = step.args[0], step.args[1:]
        r = self.last_result
        if what == "ok":
            if self.last_error is not None:
                self._fail(step, f"expected success, got {self.last_error}")
        elif what == "error":
            want = rest[0] if rest else None
            if self.last_error is None or (want and self.last_error != want):
                self._fail(step, f"expected error {want or 'any'}, got {self.last_error or 'success'}")
        elif what == "value":
            want = rest[0] if rest else ""
            got = [v.value.decode("utf-8", "replace") for v in r.values] if r else None
            if got != [want]:
                self._fail(step, f"expected value {want!r}, got {got!r}")
        elif what == "absent":
            if r is None or not r.absent:
                self._fail(step, "expected the key to be absent")
        elif what == "siblings":
            want = int(rest[0])
            got = len(r.values) if r else None
            if got != want:
                self._fail(step, f"expected {want} siblings, got {got}")
        elif what == "converged":
            bucket, key = rest[0], rest[1]
            states = {tuple(sorted(v.clock.encode() for v in sibs))
                      for sibs in self.cluster.replica_state(bucket, key).values()}
            if len(states) != 1:
                self._fail(step, f"replicas of {bucket}/{key} disagree: {sorted(states)}")
        elif what == "primary":
            got = self.cluster.primary()
            if got != rest[0]:
                self._fail(step, f"expected primary {rest[0]}, got {got}")
        else:
            raise ScenarioError(f"line {step.line}: unknown assertion {what!r}")


def run_scenario(text: str, seed: int = 0, config: ClusterConfig | None = None) -> ScenarioResult:
    return ScenarioRunner(parse_scenario(text), seed, config).run()


def run_scenario_file(path: str | Path, seed: int = 0) -> ScenarioResult:
    return run_scenario(Path(path).read_text(encoding="utf-8"), seed)
