"""Versioned plain-text checkpoints for model states.

Layout: a header with visible width, depth, and widths; one block per layer
with prior parameters, edges as ``child parent weight`` triples, biases, and
precisions; a hyperparameter block; and an optional per-layer unit-state
block.  Every float is written with 17 significant digits, which round-trips
IEEE doubles bit-exactly, so ``parse(serialize(state))`` reproduces all
values exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cibpnet.data_io import Dataset
from cibpnet.nlgbn import (
    LayerParams,
    ModelState,
    NetworkStructure,
    PriorParams,
    UnitStates,
)
from cibpnet.prior import EdgeMatrix, HyperParameters

FORMAT_NAME = "cibpnet-checkpoint"
FORMAT_VERSION = 1


def _f(x: float) -> str:
    return format(float(x), ".17g")


def _floats(xs) -> str:
    return " ".join(_f(x) for x in np.asarray(xs, dtype=np.float64).ravel())


@dataclass
class Checkpoint:
    """Parsed checkpoint: everything but the dataset."""

    structure: NetworkStructure
    layers: list[LayerParams]
    hypers: HyperParameters
    states: UnitStates | None

    def to_state(self, data: Dataset, states: UnitStates | None = None) -> ModelState:
        """Bind the checkpoint to a dataset; caller supplies fresh states
        unless the checkpoint stored compatible ones."""
        st = states if states is not None else self.states
        if st is None:
            raise ValueError("checkpoint has no stored states; provide them")
        if data.width != self.structure.visible_width:
            raise ValueError(
                f"data width {data.width} does not match checkpoint visible width "
                f"{self.structure.visible_width}"
            )
        return ModelState(self.structure, self.layers, st, data, self.hypers)


def serialize_state(state: ModelState, include_states: bool = True) -> str:
    out = [f"{FORMAT_NAME} {FORMAT_VERSION}"]
    s = state.structure
    out.append(f"visible {s.visible_width}")
    out.append(f"depth {s.depth}")
    out.append("widths " + " ".join(str(w) for w in s.widths))
    for m in range(s.depth + 1):
        lp = state.layers[m]
        out.append(f"layer {m}")
        out.append("priors " + _floats(lp.priors.as_tuple()))
        if m >= 1:
            em = s.matrices[m - 1]
            pairs = em.entries
            out.append(f"edges {len(pairs)}")
            for child, parent in pairs:
                out.append(f"{child} {parent} {_f(lp.weights[child, parent])}")
        out.append("biases " + _floats(lp.biases))
        out.append("precisions " + _floats(lp.precisions))
    h = state.hypers
    out.append("hypers")
    out.append("alpha " + _floats(h.alphas))
    out.append("beta " + _floats(h.betas))
    out.append(f"caps {_f(h.alpha_max)} {_f(h.beta_max)}")
    out.append(f"prior_rate {_f(h.prior_rate)}")
    out.append(f"ng {_f(h.ng_mean)} {_f(h.ng_precision)} {_f(h.ng_shape)} {_f(h.ng_rate)}")
    out.append("shape_hyper " + _floats(h.shape_hyper))
    out.append("rate_hyper " + _floats(h.rate_hyper))
    if include_states:
        out.append(f"states {state.n_data}")
        for m in range(s.depth + 1):
            out.append(f"state_layer {m}")
            for row in state.states.values[m]:
                out.append(_floats(row))
    out.append("end")
    return "\n".join(out) + "\n"


class _Lines:
    def __init__(self, text: str):
        self.lines = [ln for ln in text.splitlines()]
        self.i = 0

    def next(self) -> str:
        while self.i < len(self.lines) and not self.lines[self.i].strip():
            self.i += 1
        if self.i >= len(self.lines):
            raise ValueError("unexpected end of checkpoint")
        ln = self.lines[self.i]
        self.i += 1
        return ln

    def expect(self, keyword: str) -> list[str]:
        ln = self.next()
        parts = ln.split()
        if not parts or parts[0] != keyword:
            raise ValueError(f"expected {keyword!r}, got {ln!r}")
        return parts[1:]


def parse_checkpoint(text: str) -> Checkpoint:
    lx = _Lines(text)
    head = lx.next().split()
    if head[:1] != [FORMAT_NAME] or len(head) != 2:
        raise ValueError(f"not a {FORMAT_NAME} file")
    if int(head[1]) != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {head[1]}")
    visible = int(lx.expect("visible")[0])
    depth = int(lx.expect("depth")[0])
    widths = [int(w) for w in lx.expect("widths")]
    if len(widths) != depth + 1 or widths[0] != visible:
        raise ValueError("widths line inconsistent with visible/depth")
    matrices: list[EdgeMatrix] = []
    layers: list[LayerParams] = []
    for m in range(depth + 1):
        idx = int(lx.expect("layer")[0])
        if idx != m:
            raise ValueError(f"layer blocks out of order: got {idx}, expected {m}")
        priors = PriorParams(*(float(v) for v in lx.expect("priors")))
        weights = None
        if m >= 1:
            n_edges = int(lx.expect("edges")[0])
            z = np.zeros((widths[m - 1], widths[m]), dtype=np.uint8)
            weights = np.zeros((widths[m - 1], widths[m]))
            for _ in range(n_edges):
                parts = lx.next().split()
                if len(parts) != 3:
                    raise ValueError(f"bad edge line: {parts!r}")
                c, p = int(parts[0]), int(parts[1])
                z[c, p] = 1
                weights[c, p] = float(parts[2])
            matrices.append(EdgeMatrix(z))
        biases = np.array([float(v) for v in lx.expect("biases")], dtype=np.float64)
        precisions = np.array(
            [float(v) for v in lx.expect("precisions")], dtype=np.float64
        )
        if biases.shape != (widths[m],) or precisions.shape != (widths[m],):
            raise ValueError(f"layer {m} parameter lengths do not match width")
        layers.append(LayerParams(weights, biases, precisions, priors))
    lx.expect("hypers")
    alphas = [float(v) for v in lx.expect("alpha")]
    betas = [float(v) for v in lx.expect("beta")]
    caps = [float(v) for v in lx.expect("caps")]
    prior_rate = float(lx.expect("prior_rate")[0])
    ng = [float(v) for v in lx.expect("ng")]
    shape_hyper = tuple(float(v) for v in lx.expect("shape_hyper"))
    rate_hyper = tuple(float(v) for v in lx.expect("rate_hyper"))
    hypers = HyperParameters(
        alphas=alphas,
        betas=betas,
        alpha_max=caps[0],
        beta_max=caps[1],
        prior_rate=prior_rate,
        ng_mean=ng[0],
        ng_precision=ng[1],
        ng_shape=ng[2],
        ng_rate=ng[3],
        shape_hyper=shape_hyper,
        rate_hyper=rate_hyper,
    )
    states = None
    tail = lx.next().split()
    if tail[0] == "states":
        n = int(tail[1])
        values = []
        for m in range(depth + 1):
            idx = int(lx.expect("state_layer")[0])
            if idx != m:
                raise ValueError("state layer blocks out of order")
            rows = [
                np.array([float(v) for v in lx.next().split()]) for _ in range(n)
            ]
            arr = np.array(rows) if rows else np.zeros((0, widths[m]))
            if arr.shape != (n, widths[m]):
                raise ValueError(f"state layer {m} has shape {arr.shape}")
            values.append(arr)
        states = UnitStates(values)
        tail = lx.next().split()
    if tail[0] != "end":
        raise ValueError(f"expected end marker, got {tail!r}")
    return Checkpoint(NetworkStructure(visible, matrices), layers, hypers, states)


def write_checkpoint(path: str | Path, state: ModelState, include_states: bool = True) -> None:
    Path(path).write_text(serialize_state(state, include_states=include_states))


def read_checkpoint(path: str | Path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_text())
