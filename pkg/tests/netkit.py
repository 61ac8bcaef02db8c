"""Small world builders shared by the stack and acceptance tests."""
import numpy as np

from qnetstack.netsim import FlowSpec, Link, NodeKind, NodeSpec, QuantumMode, ScenarioTopology, build_topology, fill_pools
from qnetstack.qsim import prepare
from qnetstack.stack import qtcp
from qnetstack.stack.transport import REPEATER

from oracles import haar


def chain(routers=0, *, model=REPEATER, seed=0, pool=16, max_qubits=14.0, **link_kw):
    names = ["A"] + [f"R{i + 1}" for i in range(routers)] + ["B"]
    nodes = [NodeSpec(n, NodeKind.HOST if n in "AB" else NodeKind.ROUTER) for n in names]
    if model == REPEATER:
        link_kw.setdefault("pool_target", pool)
    else:
        link_kw.setdefault("quantum_mode", QuantumMode.DIRECT)
    links = [Link(a, b, **link_kw) for a, b in zip(names, names[1:])]
    w = build_topology(ScenarioTopology(nodes, links, [FlowSpec("A", "B")]), seed, max_qubits=max_qubits)
    fill_pools(w)
    return w


def payload_with_ref(w, n, seed):
    """``n`` data qubits at A entangled with one application reference."""
    ref = w.alloc("app:A")
    data = [w.alloc("A") for _ in range(n)]
    psi = haar(np.random.default_rng(seed), 2 ** (n + 1))
    prepare(w.registry, [ref] + data, psi)
    return ref, data, psi


def delivered_fidelity(w, ref, psi):
    (d,) = w.nodes["B"].handler.delivered
    return w.registry.fidelity([ref] + d.qubits, psi)


def open_pair(w, model=REPEATER, m=3, spec=None, **kw):
    qtcp.listen(w.nodes["B"].handler, 80, model=model, m=m, spec=spec, **kw)
    return qtcp.connect(w, "A", "B", src_port=1000, dst_port=80, model=model, m=m, spec=spec, **kw)


def server(w):
    host = w.nodes["B"].handler
    conns = list(host.connections.values()) + host.closed_connections
    return conns[-1]
