import functools

from uncgap import config as cfgmod
from uncgap.cli import generate
from uncgap.network import init, train


@functools.lru_cache(maxsize=None)
def trained_preset(preset: str):
    """Default-config model for ``preset`` plus its train and test sets."""
    cfg = cfgmod.build(preset=preset)
    tr, te = generate(cfg)
    ind = tr.in_domain
    t = cfg["training"]
    model, records = train(
        init(cfg["model"]["layer_dims"], cfg["model"]["seed"]),
        ind.features, ind.labels, tr.ood.features,
        cfgmod.loss_config(cfg), cfgmod.optimizer_state(cfg),
        t["epochs"], t["batch_size"], t["seed"],
    )
    return model, records, tr, te
