import math
import re
from collections import Counter

import pytest

from qnetstack.netsim import (
    Action,
    Frame,
    InsufficientPool,
    Link,
    NodeKind,
    NodeSpec,
    NoRoute,
    NotAdjacent,
    OwnershipError,
    QuantumMode,
    ScenarioTopology,
    FlowSpec,
    TopologyError,
    World,
    build_topology,
    fill_pools,
)
from qnetstack.primitives import apply_pauli, nontrivial_paulis
from qnetstack.qsim import PHI_PLUS

from oracles import three_sigma_band


class Recorder:
    def __init__(self):
        self.classical, self.quantum = [], []

    def on_classical(self, frm, frame):
        self.classical.append((frm, frame.data))

    def on_quantum(self, frm, qudits, frame):
        self.quantum.append((frm, qudits, frame.data))


def pair_world(seed=0, **link_kw):
    w = World(seed)
    for n in "AB":
        w.add_node(n).handler = Recorder()
    w.add_link(Link("A", "B", **link_kw))
    return w


def diamond(pool_r1=10, pool_r2=3):
    w = World(0)
    for n in ("A", "B"):
        w.add_node(n)
    for n in ("R1", "R2"):
        w.add_node(n, NodeKind.ROUTER)
    w.add_link(Link("A", "R1", pool_target=pool_r1))
    w.add_link(Link("A", "R2", pool_target=pool_r2))
    w.add_link(Link("R1", "B"))
    w.add_link(Link("R2", "B"))
    return w


class TestRouting:
    def test_chain_via_router(self):
        spec = ScenarioTopology([NodeSpec("A"), NodeSpec("R", NodeKind.ROUTER), NodeSpec("B")],
                                [Link("A", "R"), Link("R", "B")], [FlowSpec("A", "B")])
        w = build_topology(spec)
        assert w.route("A", "B") == "R"
        assert w.hops("A", "B") == 2

    def test_pool_size_breaks_ties(self):
        w = diamond(3, 10)
        fill_pools(w)
        assert w.route("A", "B") == "R2"
        w2 = diamond(10, 3)
        fill_pools(w2)
        assert w2.route("A", "B") == "R1"

    def test_non_capable_router_blocks_quantum_flow(self):
        spec = ScenarioTopology([NodeSpec("A"), NodeSpec("R", NodeKind.ROUTER, False), NodeSpec("B")],
                                [Link("A", "R"), Link("R", "B")], [FlowSpec("A", "B", quantum=True)])
        with pytest.raises(TopologyError):
            build_topology(spec)

    def test_classical_flow_through_non_capable_router(self):
        spec = ScenarioTopology([NodeSpec("A"), NodeSpec("R", NodeKind.ROUTER, False), NodeSpec("B")],
                                [Link("A", "R"), Link("R", "B")], [FlowSpec("A", "B", quantum=False)])
        w = build_topology(spec)
        assert w.route("A", "B", quantum=False) == "R"
        with pytest.raises(NoRoute):
            w.route("A", "B", quantum=True)

    def test_disconnected(self):
        spec = ScenarioTopology([NodeSpec("A"), NodeSpec("B")], [], [FlowSpec("A", "B")])
        with pytest.raises(TopologyError):
            build_topology(spec)


class TestLinks:
    def test_probability_validation(self):
        with pytest.raises(TopologyError):
            Link("A", "B", quantum_loss_p=1.5)

    def test_self_loop(self):
        with pytest.raises(TopologyError):
            Link("A", "A")

    def test_not_adjacent(self):
        w = pair_world()
        w.add_node("C")
        with pytest.raises(NotAdjacent):
            w.link_between("A", "C")


class TestChannels:
    def test_lossless_classical(self):
        w = pair_world(classical_delay=3)
        w.send_classical("A", "B", Frame("A", "B", b"hello"))
        w.run()
        assert w.now == 3
        assert w.nodes["B"].handler.classical == [("A", b"hello")]

    def test_lost_classical_fires_timeout(self):
        w = pair_world(classical_loss_p=1.0)
        fired = []
        w.schedule(5, Action.TIMEOUT, "A", lambda: fired.append(w.now), "rto")
        w.send_classical("A", "B", Frame("A", "B", b"x"))
        w.run()
        assert w.nodes["B"].handler.classical == []
        assert fired == [5]

    def test_direct_quantum_delivery_keeps_state(self):
        w = pair_world(quantum_mode=QuantumMode.DIRECT, quantum_delay=2, qudit_tx_time=1)
        q = w.alloc("A")
        w.registry.apply_unitary([q], [[0, 1], [1, 0]])
        w.send_quantum_direct("A", "B", [q], Frame("A", "B", b"esc"))
        w.run()
        assert w.now == 3
        (frm, qudits, data), = w.nodes["B"].handler.quantum
        assert data == b"esc" and w.owner[qudits[0]] == "B"
        assert w.registry.fidelity(qudits, [0, 1]) == pytest.approx(1.0)

    def test_direct_quantum_loss_destroys(self):
        w = pair_world(quantum_mode=QuantumMode.DIRECT, quantum_loss_p=1.0)
        q = w.alloc("A")
        w.send_quantum_direct("A", "B", [q], Frame("A", "B", b""))
        w.run()
        assert not w.registry.is_live(q)
        assert w.nodes["B"].handler.quantum == []
        assert w.audit().clean

    def test_cannot_send_what_you_do_not_hold(self):
        w = pair_world(quantum_mode=QuantumMode.DIRECT)
        q = w.alloc("B")
        with pytest.raises(OwnershipError):
            w.send_quantum_direct("A", "B", [q], Frame("A", "B", b""))

    def test_full_noise_is_uniform_over_paulis(self):
        w = pair_world(quantum_mode=QuantumMode.DIRECT, pauli_noise_eps=1.0)
        link = w.link_between("A", "B")
        trials = 30_000
        for _ in range(trials):
            q = w.alloc("A")
            out, _ = w.transmit(link, "A", [q])
            w.registry.discard(out)
            w.owner.pop(q)
        seen = Counter(re.search(r"pauli=\((\d),(\d)\)", line).groups() for line in w.trace
                       if line.split()[3] == "noise")
        assert sum(seen.values()) == trials
        assert set(seen) == {("0", "1"), ("1", "0"), ("1", "1")}
        band = three_sigma_band(1 / 3, trials)
        for count in seen.values():
            assert abs(count / trials - 1 / 3) <= band


class TestPools:
    def world(self, **kw):
        w = pair_world(**kw)
        return w

    def test_replenish_fills_consecutive_positions(self):
        w = self.world(pool_target=8)
        assert w.pool_replenish("A", "B") == 8
        pool = w.pool("A", "B")
        assert list(pool.entries) == list(range(8))
        for pair in pool.entries.values():
            assert w.registry.fidelity([pair.left, pair.right], PHI_PLUS) == pytest.approx(1.0)

    def test_ttl_expiry(self):
        w = self.world(pool_target=4, ttl=10)
        w.pool_replenish("A", "B")
        halves = [q for p in w.pool("A", "B").entries.values() for q in (p.left, p.right)]
        w.schedule(11, Action.TIMEOUT, "A", lambda: None)
        w.run()
        assert w.purge_expired(w.pool("A", "B")) == 4
        assert w.pool_size("A", "B") == 0
        assert not any(w.registry.is_live(q) for q in halves)
        assert w.audit().clean

    def test_allocate_and_exhaust(self):
        w = self.world(pool_target=8)
        w.pool_replenish("A", "B")
        got = w.allocate_eprs("A", "B", 3)
        assert [pos for pos, _ in got] == [0, 1, 2]
        assert w.pool_size("A", "B") == 5
        with pytest.raises(InsufficientPool):
            w.allocate_eprs("A", "B", 9)

    def test_positions_never_reused(self):
        w = self.world(pool_target=4)
        w.pool_replenish("A", "B")
        first = [pos for pos, _ in w.allocate_eprs("A", "B", 4)]
        w.pool_replenish("A", "B")
        second = list(w.pool("A", "B").entries)
        assert first == [0, 1, 2, 3] and second == [4, 5, 6, 7]

    def test_claim_unknown_position(self):
        from qnetstack.netsim import UnknownPosition

        w = self.world(pool_target=2)
        w.pool_replenish("A", "B")
        w.allocate_eprs("A", "B", 1)
        with pytest.raises(UnknownPosition):
            w.claim_eprs("B", "A", [1])
        assert len(w.claim_eprs("B", "A", [0])) == 1

    @pytest.mark.parametrize("pos,pauli", [(p, e) for p in range(5) for e in nontrivial_paulis(2)])
    def test_noisy_distribution_still_perfect(self, pos, pauli):
        from qnetstack.stack.access import entanglement_distribution

        w = self.world()
        link = w.link_between("A", "B")
        entanglement_distribution(w, link, 1, inject=lambda reg, block: apply_pauli(reg, block[pos], *pauli))
        pair = w.pool("A", "B").entries[0]
        assert w.registry.fidelity([pair.left, pair.right], PHI_PLUS) == pytest.approx(1.0, abs=1e-10)

    def test_lossy_distribution_retries(self):
        w = self.world(quantum_loss_p=0.5, pool_target=6)
        assert w.pool_replenish("A", "B") == 6
        assert w.trace.count("epr-abort") > 0
        assert w.audit().clean


class TestEventLoop:
    def test_empty_world(self):
        assert len(World(0).run_until(100)) == 0

    def test_events_in_time_then_insertion_order(self):
        w = World(0)
        order = []
        w.schedule(2, Action.TIMEOUT, "x", lambda: order.append("late"))
        w.schedule(1, Action.TIMEOUT, "x", lambda: order.append("a"))
        w.schedule(1, Action.TIMEOUT, "x", lambda: order.append("b"))
        w.run()
        assert order == ["a", "b", "late"]

    def test_cancel(self):
        w = World(0)
        hit = []
        ev = w.schedule(1, Action.TIMEOUT, "x", lambda: hit.append(1))
        w.cancel(ev)
        w.run()
        assert hit == [] and len(w.trace) == 0

    def test_run_until_stops(self):
        w = World(0)
        w.schedule(5, Action.TIMEOUT, "x", lambda: None)
        w.schedule(50, Action.TIMEOUT, "x", lambda: None)
        w.run_until(10)
        assert len(w.trace) == 1 and len(w.queue) == 1

    def test_same_seed_same_trace(self):
        def run(seed):
            w = pair_world(seed, quantum_loss_p=0.3, pool_target=10, pauli_noise_eps=0.05)
            w.pool_replenish("A", "B")
            return w.trace.text()

        assert run(3) == run(3)

    def test_seeds_differ_only_in_random_branches(self):
        def skeleton(seed):
            w = pair_world(seed, quantum_loss_p=0.3, pool_target=10)
            w.pool_replenish("A", "B")
            lines = [ln.split(" ", 4) for ln in w.trace]
            return [f[3] for f in lines if f[3] not in ("epr-abort", "drop-quantum")], w.trace.text()

        (a, ta), (b, tb) = skeleton(1), skeleton(2)
        assert ta != tb
        assert a == b == ["epr-new"] * 10

    def test_past_scheduling_rejected(self):
        with pytest.raises(ValueError):
            World(0).schedule(-1, Action.TIMEOUT, "x", lambda: None)

    def test_deadlock_diagnostic(self):
        w = World(0)
        w.obligations["flow"] = "awaiting ack"
        w.run()
        assert w.deadlocks == [("flow", "awaiting ack")]


class TestAudit:
    def test_leak_detected(self):
        w = World(0)
        q = w.registry.alloc()
        report = w.audit()
        assert report.leaks == [q] and not report.clean

    def test_unaccounted_pair_reported(self):
        w = pair_world(pool_target=2)
        w.pool_replenish("A", "B")
        pair = w.pool("A", "B").entries.pop(1)
        w.registry.discard([pair.left, pair.right])
        report = w.audit()
        assert report.unaccounted_pairs == [(("A", "B"), 1)]

    def test_release_requires_ownership(self):
        w = World(0)
        q = w.alloc("A")
        with pytest.raises(OwnershipError):
            w.release("B", [q])
        w.release("A", [q])
        assert w.audit().clean


def test_path_delay_counts_slowest_plane():
    w = pair_world(classical_delay=2, quantum_delay=1, qudit_tx_time=1)
    assert w.path_delay("A", "B") == max(2, 1 + 16)
    assert math.isfinite(w.path_delay("A", "A"))
