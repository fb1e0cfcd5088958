"""Stage-1 collaborative-filtering recommenders.

Every model is a scikit-learn style estimator: hyperparameters are
constructor arguments (``get_params``/``set_params`` work), ``fit`` takes an
:class:`~xmrec.io.InteractionStore`, and ``score``/``score_slates`` return
candidate scores with cold items at exactly 0.
"""
from __future__ import annotations

import json

import numpy as np
import scipy.sparse as sp

from ..tuner import Param, SearchSpace
from .base import ConvergenceError, Recommender
from .factorization import ALS, PureSVD, als_objective
from .graph import P3alpha, RP3beta
from .oracle import Oracle
from .neighborhood import ItemKNN, TopPop, UserKNN, item_cosine
from .regression import EASE, SLIM

ALGORITHMS: dict[str, type[Recommender]] = {
    "TopPop": TopPop,
    "ItemKNN": ItemKNN,
    "UserKNN": UserKNN,
    "P3alpha": P3alpha,
    "RP3beta": RP3beta,
    "PureSVD": PureSVD,
    "SLIM": SLIM,
    "EASE": EASE,
    "ALS": ALS,
    "Oracle": Oracle,
}

_TOP_K = Param("top_k", "log-int", 5, 800)
_SHRINK = Param("shrink", "real", 0.0, 1000.0)

SEARCH_SPACES: dict[str, SearchSpace] = {
    "TopPop": SearchSpace([]),
    "ItemKNN": SearchSpace([_TOP_K, _SHRINK]),
    "UserKNN": SearchSpace([_TOP_K, _SHRINK]),
    "P3alpha": SearchSpace([_TOP_K, Param("alpha", "real", 0.0, 2.0)]),
    "RP3beta": SearchSpace([_TOP_K, Param("alpha", "real", 0.0, 2.0), Param("beta", "real", 0.0, 2.0)]),
    "PureSVD": SearchSpace([Param("factors", "log-int", 8, 384)]),
    "SLIM": SearchSpace([_TOP_K, Param("l1", "log-real", 1e-5, 1e-1), Param("l2", "log-real", 1e-5, 1e-1)]),
    "EASE": SearchSpace([Param("lam", "log-real", 1e0, 1e5)]),
    "ALS": SearchSpace([Param("factors", "log-int", 8, 384), Param("reg", "log-real", 1e-3, 1e1),
                        Param("conf_alpha", "log-real", 0.5, 50.0), Param("iterations", "int", 5, 30)]),
    "Oracle": SearchSpace([]),
}


def make_recommender(name: str, **params) -> Recommender:
    try:
        cls = ALGORITHMS[name]
    except KeyError:
        raise KeyError(f"unknown algorithm {name!r}; known: {', '.join(ALGORITHMS)}") from None
    return cls(**params)


MODEL_FORMAT_VERSION = 1


def save_model(model: Recommender, path) -> None:
    """Write fitted arrays (dense or CSR) plus class name and params to ``.npz``.

    The training store is not saved; pass it back to :func:`load_model`.
    """
    arrays = {}
    for key, value in vars(model).items():
        if not key.endswith("_") or key == "store_":
            continue
        if sp.issparse(value):
            value = sp.csr_matrix(value)
            arrays[f"sparse:{key}:data"] = value.data
            arrays[f"sparse:{key}:indices"] = value.indices
            arrays[f"sparse:{key}:indptr"] = value.indptr
            arrays[f"sparse:{key}:shape"] = np.asarray(value.shape)
        elif isinstance(value, np.ndarray):
            arrays[f"dense:{key}"] = value
        elif isinstance(value, (int, float, list)):
            arrays[f"value:{key}"] = np.asarray(value)
    header = {"version": MODEL_FORMAT_VERSION, "class": type(model).__name__,
              "params": model.get_params()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.asarray(json.dumps(header, sort_keys=True)), **arrays)


def load_model(path, store) -> Recommender:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if header["version"] != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {header['version']}")
        model = make_recommender(header["class"], **header["params"])
        model._check_fit(store)
        sparse: dict[str, dict] = {}
        for key in z.files:
            if key == "__header__":
                continue
            kind, name, *rest = key.split(":")
            if kind == "dense":
                setattr(model, name, z[key])
            elif kind == "value":
                v = z[key]
                setattr(model, name, v.tolist() if v.ndim else v.item())
            else:
                sparse.setdefault(name, {})[rest[0]] = z[key]
        for name, parts in sparse.items():
            setattr(model, name, sp.csr_matrix((parts["data"], parts["indices"], parts["indptr"]),
                                               shape=tuple(parts["shape"])))
    if isinstance(model, UserKNN):
        model._XT = store.matrix.T.tocsr()
    return model


__all__ = [
    "ALGORITHMS", "SEARCH_SPACES", "ALS", "EASE", "ItemKNN", "Oracle", "P3alpha", "PureSVD", "RP3beta", "SLIM",
    "TopPop", "UserKNN", "ConvergenceError", "Recommender", "als_objective", "item_cosine",
    "make_recommender", "save_model", "load_model",
]
