"""Randomized composites for finite-difference gradient checks.

Each builder takes a seed and returns ``(loss_fn, params)``. Graph-building
composites are meant to be checked inside ``frozen_graphs()`` so that the
neighbour selection does not move under the probe.
"""
import numpy as np

from pcfilter import diffcore as dc
from pcfilter.diffcore import Tensor
from pcfilter.graphnet import Decoder, DecoderConfig, EdgeConvLayer, build_dynamic_graph, edge_conv_forward
from pcfilter.hybrid import (
    HybridModel,
    TrainConfig,
    loss_hybrid,
    loss_long,
    loss_short_emd,
    loss_short_l2,
    long_forward,
    make_training_sample,
    short_forward,
    training_step,
)

from conftest import TINY

N_POINTS = 12


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


def _named(prefix, tensors):
    return {f"{prefix}{i}": t for i, t in enumerate(tensors)}


def edge_conv(seed):
    r = np.random.default_rng(seed)
    layer = EdgeConvLayer.init(4, 6, 5, r)
    h = leaf(r.normal(size=(N_POINTS, 4)))
    graph = build_dynamic_graph(h, 4)
    target = r.normal(size=(N_POINTS, 5))
    params = {name: t for name, t in layer.parameters("edge")}
    params["input"] = h
    return lambda: dc.mse(edge_conv_forward(h, graph, layer), target), params


def _decoder(seed, kind):
    r = np.random.default_rng(seed)
    dec = Decoder(DecoderConfig(5, ((6, 4), (4, 3)), 3, kind), r)
    feats = leaf(r.normal(size=(N_POINTS, 5)))
    target = r.normal(size=(N_POINTS, 3))
    params = dict(dec.parameters("dec"))
    params["input"] = feats
    return lambda: dc.mse(dec(feats), target), params


def graph_decoder(seed):
    return _decoder(seed, "graph_conv")


def fc_decoder(seed):
    return _decoder(seed, "fully_connected")


def _model_and_points(seed):
    r = np.random.default_rng(seed)
    model = HybridModel(TINY, seed=seed)
    return r, model, r.normal(size=(N_POINTS, 3))


def long_module(seed):
    r, model, x = _model_and_points(seed)
    xt = leaf(x)
    target = r.normal(size=(N_POINTS, 3))
    params = {k: v for k, v in model.parameters().items() if k.startswith("long_")}
    params["input"] = xt
    return lambda: dc.mse(long_forward(model, xt)[1], target), params


def short_module(seed):
    r, model, x = _model_and_points(seed)
    xt = leaf(x)
    feats = leaf(r.normal(size=(N_POINTS, TINY.encoder_layers[-1][1])))
    target = r.normal(size=(N_POINTS, 3))
    params = {k: v for k, v in model.parameters().items() if k.startswith("short_")}
    params.update(input=xt, long_features=feats)
    return lambda: dc.mse(short_forward(model, xt, feats), target), params


def long_loss(seed):
    r = np.random.default_rng(seed)
    v, x0, x1 = leaf(r.normal(size=(N_POINTS, 3))), r.normal(size=(N_POINTS, 3)), r.normal(size=(N_POINTS, 3))
    return lambda: loss_long(v, x0, x1), {"v": v}


def short_l2_loss(seed):
    r = np.random.default_rng(seed)
    s, xt, x1 = leaf(r.normal(size=(N_POINTS, 3))), r.normal(size=(N_POINTS, 3)), r.normal(size=(N_POINTS, 3))
    return lambda: loss_short_l2(s, xt, x1), {"s": s}


def short_emd_loss(seed):
    r = np.random.default_rng(seed)
    x, x1 = leaf(r.normal(size=(N_POINTS, 3))), r.normal(size=(N_POINTS, 3))
    return lambda: loss_short_emd(x, x1), {"x": x}


def hybrid_loss_only(seed):
    r = np.random.default_rng(seed)
    a, b = leaf(r.normal()), leaf(r.normal())
    return lambda: loss_hybrid(a, b, 10.0), {"short": a, "long": b}


def joint_loss(seed):
    r, model, x = _model_and_points(seed)
    sample = make_training_sample(x, 0.1, r)
    config = TrainConfig(seed=seed)
    return lambda: training_step(model, sample, config)[1], model.parameters()


COMPOSITES = {
    "edge_conv": edge_conv,
    "graph_decoder": graph_decoder,
    "fc_decoder": fc_decoder,
    "long_module": long_module,
    "short_module": short_module,
    "long_loss": long_loss,
    "short_l2_loss": short_l2_loss,
    "short_emd_loss": short_emd_loss,
    "hybrid_combination": hybrid_loss_only,
    "joint_loss": joint_loss,
}

# Entries probed per parameter tensor; keeps the big composites quick.
SHRINK = (1e-6, 1e-7)
MAX_ENTRIES = {"long_module": 4, "short_module": 4, "joint_loss": 3}


def check(name, seed):
    from pcfilter.graphnet import frozen_graphs

    loss_fn, params = COMPOSITES[name](seed)
    with frozen_graphs() as fg:
        return dc.gradcheck(loss_fn, params, h=1e-5, max_entries=MAX_ENTRIES.get(name, 12),
                            rng=np.random.default_rng(seed), floor=1e-6, rewind=fg.rewind, shrink=SHRINK)
