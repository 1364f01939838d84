import numpy as np
import pytest

from refactor_kgc.graph import build_graph
from refactor_kgc.models import Vocabulary


@pytest.fixture
def two_entity():
    """E = {a, b}, one relation, the single triple (a, r, b), φ = (1, 2), ψ = (1)."""
    g = build_graph(Vocabulary(["a", "b"], ["r"]), [(0, 0, 1)])
    phi = np.array([[1.0], [2.0]])
    psi = np.array([[1.0]])
    return g, phi, psi


def ring_lines(n: int = 12) -> tuple[list[str], list[str], list[str]]:
    """A ring with 'next' and 'opposite' edges; three 'opposite' edges are held out."""
    nxt = [f"e{i}\tnext\te{(i + 1) % n}" for i in range(n)]
    opp = [f"e{i}\topposite\te{(i + n // 2) % n}" for i in range(n)]
    return nxt + opp[3:], opp[2:3], opp[:2]


@pytest.fixture
def ring_dataset(tmp_path):
    train, valid, test = ring_lines()
    paths = {}
    for name, lines in (("train", train), ("valid", valid), ("test", test)):
        path = tmp_path / f"{name}.txt"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths[name] = path
    return paths


@pytest.fixture
def inductive_dataset(ring_dataset, tmp_path):
    """A second ring over fresh entity labels sharing both relations."""
    n = 8
    graph = [f"x{i}\tnext\tx{(i + 1) % n}" for i in range(n)]
    graph += [f"x{i}\topposite\tx{(i + n // 2) % n}" for i in range(2, n)]
    queries = [f"x{i}\topposite\tx{(i + n // 2) % n}" for i in range(2)]
    g_path, q_path = tmp_path / "ind_graph.txt", tmp_path / "ind_queries.txt"
    g_path.write_text("\n".join(graph) + "\n", encoding="utf-8")
    q_path.write_text("\n".join(queries) + "\n", encoding="utf-8")
    return {**ring_dataset, "inductive_graph": g_path, "inductive_queries": q_path}
