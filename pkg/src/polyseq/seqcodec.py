"""Codec between scene labels and auto-regressive token sentences.

A sentence is S, then one token group per object, then E (E also pads).
Object groups by task:

  points, line   one P token per point, coords (x, y)
  gates          one G token per gate, coords = 4 corners flattened (8 values)
  polygons       one P token per corner in clockwise order, closed by EOP

Class slot order inside the one-hot block is fixed as [S, E, P-or-G, EOP]
and is a stability contract for checkpoints: points/line/gates use 3 classes,
polygons 4. Token vectors put the 2n coordinates first (n = 4 on gates, else
1), then the one-hot class, then zero padding up to the embedding width.
"""

import dataclasses
import enum

import numpy as np

from polyseq import geometry


class TokenClass(enum.Enum):
    S = "S"  # sentence start
    E = "E"  # sentence end, also the padding token
    P = "P"  # one point / polygon corner
    G = "G"  # one whole gate (4 corners)
    EOP = "EOP"  # closes a polygon's corner run


@dataclasses.dataclass(frozen=True)
class Token:
    cls: TokenClass
    coords: tuple = ()

    def __post_init__(self):
        if self.cls in (TokenClass.S, TokenClass.E, TokenClass.EOP):
            if self.coords:
                raise ValueError(f"{self.cls.value} token carries no coordinates")
        elif self.cls is TokenClass.P:
            if len(self.coords) != 2:
                raise ValueError("P token needs exactly (x, y)")
        elif len(self.coords) != 8:
            raise ValueError("G token needs 4 flattened corners")


START = Token(TokenClass.S)
END = Token(TokenClass.E)
EOP = Token(TokenClass.EOP)


def point_token(x, y):
    return Token(TokenClass.P, (float(x), float(y)))


def gate_token(verts):
    flat = np.asarray(verts, dtype=np.float64).reshape(-1)
    if flat.shape != (8,):
        raise ValueError("gate token needs a (4, 2) corner array")
    return Token(TokenClass.G, tuple(float(v) for v in flat))


def classes_for_task(task):
    """Vocabulary in one-hot slot order."""
    if task == "gates":
        return (TokenClass.S, TokenClass.E, TokenClass.G)
    if task == "polygons":
        return (TokenClass.S, TokenClass.E, TokenClass.P, TokenClass.EOP)
    if task in ("points", "line"):
        return (TokenClass.S, TokenClass.E, TokenClass.P)
    raise ValueError(f"unknown task {task!r}")


def class_index(cls, task):
    vocab = classes_for_task(task)
    try:
        return vocab.index(cls)
    except ValueError:
        raise ValueError(f"{cls.value} is not in the {task} vocabulary") from None


def coord_width(task):
    """Coordinate payload width: 2n with n = 4 on gates, 1 otherwise."""
    return 8 if task == "gates" else 2


def object_center(verts):
    v = np.asarray(verts, dtype=np.float64)
    if v.shape[0] == 1:
        return v[0]
    return geometry.centroid(v)


def sort_objects(labels, policy="spatial"):
    """Deterministic total order over objects.

    spatial: ascending center x, ties top-to-bottom (smaller y first).
    size: ascending absolute area, then the spatial key. Single points have
    no area and fall through to their coordinates either way. Remaining ties
    break on the flattened vertex values, which makes the order total.
    """
    if policy not in ("spatial", "size"):
        raise ValueError(f"unknown order policy {policy!r}")

    def key(verts):
        v = np.asarray(verts, dtype=np.float64)
        c = object_center(v)
        spatial = (float(c[0]), float(c[1])) + tuple(v.reshape(-1))
        if policy == "spatial":
            return spatial
        area = abs(geometry.shoelace_area(v)) if v.shape[0] >= 3 else 0.0
        return (area,) + spatial

    return sorted(labels, key=key)


def _check_canonical(verts, what):
    v = np.asarray(verts, dtype=np.float64)
    if not np.allclose(geometry.canonicalize(v), v):
        raise ValueError(f"{what} vertices are not in canonical clockwise form")


def encode_scene(labels, task, policy="spatial"):
    """Labels -> token sentence; objects ordered by policy, line order kept."""
    tokens = [START]
    for obj in sort_objects(labels, policy):
        obj = np.asarray(obj, dtype=np.float64)
        if task in ("points", "line"):
            for x, y in obj:
                tokens.append(point_token(x, y))
        elif task == "gates":
            _check_canonical(obj, "gate")
            tokens.append(gate_token(obj))
        elif task == "polygons":
            _check_canonical(obj, "polygon")
            for x, y in obj:
                tokens.append(point_token(x, y))
            tokens.append(EOP)
        else:
            raise ValueError(f"unknown task {task!r}")
    tokens.append(END)
    return tokens


@dataclasses.dataclass
class DecodeResult:
    labels: list
    malformed: int = 0  # dropped runs / out-of-vocabulary tokens


def decode_sequence(tokens, task):
    """Salvage decoder: total over anything a model can emit.

    Reads the tokens after a leading S up to the first E. Incomplete or
    too-short polygon corner runs and vocabulary-foreign tokens are dropped
    and counted instead of raising, so evaluation survives bad models.
    """
    body = list(tokens)
    if body and body[0].cls is TokenClass.S:
        body = body[1:]
    cut = next((i for i, t in enumerate(body) if t.cls is TokenClass.E), len(body))
    body = body[:cut]

    labels = []
    malformed = 0
    if task in ("points", "line"):
        pts = []
        for t in body:
            if t.cls is TokenClass.P:
                pts.append(t.coords)
            else:
                malformed += 1
        if task == "line":
            if pts:
                labels.append(np.asarray(pts, dtype=np.float64))
        else:
            labels = [np.asarray([p], dtype=np.float64) for p in pts]
    elif task == "gates":
        for t in body:
            if t.cls is TokenClass.G:
                labels.append(np.asarray(t.coords, dtype=np.float64).reshape(4, 2))
            else:
                malformed += 1
    elif task == "polygons":
        run = []
        for t in body:
            if t.cls is TokenClass.P:
                run.append(t.coords)
            elif t.cls is TokenClass.EOP:
                if len(run) >= 3:
                    labels.append(np.asarray(run, dtype=np.float64))
                else:
                    malformed += 1
                run = []
            else:
                malformed += 1
        if run:
            malformed += 1  # unterminated trailing run
    else:
        raise ValueError(f"unknown task {task!r}")
    return DecodeResult(labels, malformed)


def embed_token(token, task, dim=256):
    """Fixed token vector: coordinates, then one-hot class, then zeros."""
    width = coord_width(task)
    n_cls = len(classes_for_task(task))
    if dim < width + n_cls:
        raise ValueError(f"dim {dim} too small for {width} coords + {n_cls} classes")
    vec = np.zeros(dim)
    if token.coords:
        vec[: len(token.coords)] = token.coords
    vec[width + class_index(token.cls, task)] = 1.0
    return vec


def embed_sequence(tokens, task, dim=256):
    return np.stack([embed_token(t, task, dim) for t in tokens])


def pad_batch(seqs):
    """Pad every sentence with E to the longest length; report true lengths."""
    if not seqs:
        raise ValueError("empty batch")
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    longest = int(lengths.max())
    padded = [list(s) + [END] * (longest - len(s)) for s in seqs]
    return padded, lengths


def causal_mask(length):
    """Boolean (length, length); True where position i may attend to j."""
    if length < 1:
        raise ValueError("mask length must be at least 1")
    return np.tril(np.ones((length, length), dtype=bool))


def validate_sequence(tokens, task):
    """Raise ValueError unless the sentence satisfies the structural rules."""
    vocab = set(classes_for_task(task))
    if not tokens or tokens[0].cls is not TokenClass.S:
        raise ValueError("sentence must start with S")
    classes = [t.cls for t in tokens]
    if classes.count(TokenClass.S) != 1:
        raise ValueError("sentence must contain exactly one S")
    for c in classes:
        if c not in vocab:
            raise ValueError(f"{c.value} is outside the {task} vocabulary")
    if TokenClass.E not in classes:
        raise ValueError("sentence must contain E")
    first_e = classes.index(TokenClass.E)
    if any(c is not TokenClass.E for c in classes[first_e:]):
        raise ValueError("only E may follow the first E")
    if task == "polygons":
        run = 0
        for c in classes[1:first_e]:
            if c is TokenClass.P:
                run += 1
            elif c is TokenClass.EOP:
                if run < 3:
                    raise ValueError("polygon corner runs need at least 3 points")
                run = 0
        if run:
            raise ValueError("trailing corner run is not closed by EOP")
