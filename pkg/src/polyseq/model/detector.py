"""The detector: shared CNN backbone + Transformer encoder, with either a
parallel set decoder (learned object queries, optional Elman RNN head for
variable-length polygons) or an auto-regressive sentence decoder on top.

Parallel decoding computes all object slots jointly: query self-attention is
unmasked, so every slot sees every other. The auto-regressive decoder
consumes token sentences under a causal mask and predicts one next token at
a time. Both share the image pathway bit for bit.
"""

import dataclasses

import numpy as np

from polyseq import seqcodec
from polyseq.grad import load_checkpoint, no_grad, save_checkpoint
from polyseq.grad import tensor as T
from polyseq.grad.tensor import Tensor
from polyseq.model.layers import (
    CNN_KERNEL,
    CNNBackbone,
    DecoderLayer,
    EncoderLayer,
    Linear,
    Module,
    sinusoidal_2d,
    sinusoidal_encoding,
    uniform_param,
)
from polyseq.seqcodec import EOP, START, Token, TokenClass

TASKS = ("points", "line", "gates", "polygons")
DECODE_MODES = ("parallel", "autoregressive")
ORDER_POLICIES = ("spatial", "size")
TOTAL_STRIDE = 16  # four stride-2 blocks


def parallel_coord_dim(task):
    """Width of one query's coordinate vector (8 for gate corners)."""
    return 8 if task == "gates" else 2


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    task: str
    decode_mode: str = "parallel"
    d_model: int = 256
    n_heads: int = 8
    enc_layers: int = 6
    dec_layers: int = 3
    n_queries: int = 100
    rnn_head: bool = False
    rnn_layers: int = 2
    max_vertices: int = 16
    use_decoder_pos_enc: bool = False
    max_seq_len: int = 64
    order_policy: str = "spatial"
    backbone_channels: tuple = (16, 32, 64)
    ffn_mult: int = 4

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.decode_mode not in DECODE_MODES:
            raise ValueError(f"unknown decode_mode {self.decode_mode!r}")
        if self.order_policy not in ORDER_POLICIES:
            raise ValueError(f"unknown order_policy {self.order_policy!r}")
        if self.d_model % self.n_heads:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.d_model % 4:
            raise ValueError("d_model must be divisible by 4 for 2D encodings")
        if min(self.enc_layers, self.dec_layers) < 1:
            raise ValueError("need at least one encoder and one decoder layer")
        if len(self.backbone_channels) != 3:
            raise ValueError("backbone_channels lists the three inner widths")
        if self.decode_mode == "parallel":
            if self.n_queries < 1:
                raise ValueError("parallel mode needs n_queries >= 1")
            if (self.task == "polygons") != self.rnn_head:
                raise ValueError(
                    "rnn_head is required for parallel polygons and invalid elsewhere"
                )
            if self.rnn_head and (self.max_vertices < 1 or self.rnn_layers < 1):
                raise ValueError("rnn head needs max_vertices and rnn_layers >= 1")
        else:
            need = seqcodec.coord_width(self.task)
            need += len(seqcodec.classes_for_task(self.task))
            if self.d_model < need:
                raise ValueError(
                    f"d_model {self.d_model} below token embedding width {need}"
                )
            if self.max_seq_len < 2:
                raise ValueError("max_seq_len must allow at least S plus one token")

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["backbone_channels"] = list(self.backbone_channels)
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["backbone_channels"] = tuple(d.get("backbone_channels", (16, 32, 64)))
        return cls(**d)


@dataclasses.dataclass
class ParallelPrediction:
    """One scene's parallel output: per-query class probabilities (columns:
    object, no-object), sigmoid coordinates, and confidence = p(object).
    RNN-head outputs carry per-query point lists instead of flat vectors."""

    class_probs: np.ndarray  # (N, 2)
    coords: object  # (N, D) array, or list of (k_i, 2) arrays for rnn head
    confidence: np.ndarray  # (N,)


@dataclasses.dataclass
class ARPrediction:
    """A decoded sentence plus the softmax probability of each emitted
    token's class at its generation step."""

    tokens: list
    token_probs: np.ndarray


class RNNHead(Module):
    """Stacked Elman recurrence driven by a constant per-query input.

    Every step re-reads the query embedding, updates the tanh hidden states,
    and emits (x, y, stop logit). Inference stops when sigmoid(stop) > 0.5
    or at max_vertices."""

    def __init__(self, rng, d_model, layers=2):
        self.inp = Linear(rng, d_model, d_model)
        self.recur = [Linear(rng, d_model, d_model) for _ in range(layers)]
        self.between = [Linear(rng, d_model, d_model) for _ in range(layers - 1)]
        self.out = Linear(rng, d_model, 3)

    def unroll(self, queries, steps):
        """queries (N, d) -> coords (N, steps, 2), stop logits (N, steps)."""
        n, d = queries.shape
        hidden = [Tensor(np.zeros((n, d))) for _ in self.recur]
        drive = self.inp(queries)
        coords, stops = [], []
        for _ in range(steps):
            x = drive
            nxt = []
            for layer_i, rec in enumerate(self.recur):
                h = T.tanh(T.add(x, rec(hidden[layer_i])))
                nxt.append(h)
                if layer_i < len(self.between):
                    x = self.between[layer_i](h)
            hidden = nxt
            o = self.out(hidden[-1])
            coords.append(T.sigmoid(o[:, :2]))
            stops.append(o[:, 2])
        return T.stack(coords, axis=1), T.stack(stops, axis=1)


class Detector(Module):
    def __init__(self, config, seed=0):
        rng = np.random.default_rng(seed)
        self.config = config
        self.init_seed = int(seed)
        self._pos_cache = {}
        d, heads, ffn = config.d_model, config.n_heads, config.ffn_mult * config.d_model
        self.backbone = CNNBackbone(rng, d, config.backbone_channels)
        self.encoder = [EncoderLayer(rng, d, heads, ffn) for _ in range(config.enc_layers)]
        self.decoder = [DecoderLayer(rng, d, heads, ffn) for _ in range(config.dec_layers)]
        if config.decode_mode == "parallel":
            self.queries = uniform_param(rng, (config.n_queries, d), d)
            self.class_head = Linear(rng, d, 2)
            if config.rnn_head:
                self.rnn = RNNHead(rng, d, config.rnn_layers)
            else:
                out_dim = parallel_coord_dim(config.task)
                self.coord_hidden1 = Linear(rng, d, d)
                self.coord_hidden2 = Linear(rng, d, d)
                self.coord_out = Linear(rng, d, out_dim)
        else:
            n_classes = len(seqcodec.classes_for_task(config.task))
            self.class_head = Linear(rng, d, n_classes)
            out_dim = seqcodec.coord_width(config.task)
            self.coord_hidden1 = Linear(rng, d, d)
            self.coord_hidden2 = Linear(rng, d, d)
            self.coord_out = Linear(rng, d, out_dim)

    # ---- shared image pathway -------------------------------------------

    def backbone_forward(self, images):
        """images (B, 3, H, W) in [0, 1] -> (tokens (B, L, d), pos (L, d)).

        Positional embeddings are returned separately; encode() adds them.
        They depend only on the grid shape, never on the image.
        """
        if images.data.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) images, got {images.shape}")
        h_img, w_img = images.shape[2], images.shape[3]
        if h_img % TOTAL_STRIDE or w_img % TOTAL_STRIDE:
            raise ValueError(
                f"image dims {h_img}x{w_img} not divisible by stride {TOTAL_STRIDE}"
            )
        feats = self.backbone(images)  # (B, d, h, w)
        b, d, h, w = feats.shape
        tokens = T.transpose(T.reshape(feats, (b, d, h * w)), (0, 2, 1))
        if (h, w) not in self._pos_cache:
            self._pos_cache[(h, w)] = sinusoidal_2d(h, w, d)
        return tokens, self._pos_cache[(h, w)]

    def encode(self, features, pos=None):
        """Run the encoder stack; pos (if given) is added to the input."""
        x = T.add(features, Tensor(pos)) if pos is not None else features
        for layer in self.encoder:
            x = layer(x)
        return x

    def forward_image(self, images):
        tokens, pos = self.backbone_forward(images)
        return self.encode(tokens, pos)

    # ---- parallel branch --------------------------------------------------

    def parallel_decode(self, memory, rnn_steps=None):
        """memory (B, L, d) -> class logits (B, N, 2) plus coordinates.

        Plain head: coords (B, N, D) through a sigmoid. RNN head: a tuple
        (coords (B, N, steps, 2), stop logits (B, N, steps)) with
        steps = rnn_steps or max_vertices. Query self-attention is unmasked:
        the N slots are computed jointly.
        """
        if self.config.decode_mode != "parallel":
            raise ValueError("parallel_decode needs decode_mode='parallel'")
        b = memory.shape[0]
        x = T.stack([self.queries] * b, axis=0)  # (B, N, d)
        for layer in self.decoder:
            x = layer(x, memory)
        logits = self.class_head(x)
        if self.config.rnn_head:
            steps = rnn_steps or self.config.max_vertices
            n, d = self.config.n_queries, self.config.d_model
            flat = T.reshape(x, (b * n, d))
            coords, stops = self.rnn.unroll(flat, steps)
            coords = T.reshape(coords, (b, n, steps, 2))
            stops = T.reshape(stops, (b, n, steps))
            return logits, (coords, stops)
        h = T.relu(self.coord_hidden1(x))
        h = T.relu(self.coord_hidden2(h))
        return logits, T.sigmoid(self.coord_out(h))

    def predict_parallel(self, images):
        """Full inference path; returns one ParallelPrediction per image."""
        with no_grad():
            memory = self.forward_image(images)
            logits, coord_out = self.parallel_decode(memory)
            probs = T.softmax(logits, axis=-1).data
        preds = []
        for i in range(probs.shape[0]):
            if self.config.rnn_head:
                coords_np, stops_np = coord_out[0].data[i], coord_out[1].data[i]
                pts = []
                for q in range(coords_np.shape[0]):
                    stop_p = 1.0 / (1.0 + np.exp(-stops_np[q]))
                    end = np.argmax(stop_p > 0.5) if (stop_p > 0.5).any() \
                        else len(stop_p) - 1
                    pts.append(coords_np[q, : end + 1])
                coords_i = pts
            else:
                coords_i = coord_out.data[i]
            preds.append(
                ParallelPrediction(probs[i], coords_i, probs[i][:, 0])
            )
        return preds

    # ---- auto-regressive branch -------------------------------------------

    def ar_forward(self, memory, tokens):
        """memory (L, d) for one scene; tokens a sentence prefix starting
        with S. Returns (class logits (P, n_classes), coords (P, width)) for
        every prefix position under a causal mask; row t predicts token t+1.
        """
        if self.config.decode_mode != "autoregressive":
            raise ValueError("ar_forward needs decode_mode='autoregressive'")
        if not tokens or tokens[0].cls is not TokenClass.S:
            raise ValueError("prefix must start with the S token")
        vocab = set(seqcodec.classes_for_task(self.config.task))
        for t in tokens:
            if t.cls not in vocab:
                raise ValueError(f"token {t.cls.value} not in the task vocabulary")
        emb = seqcodec.embed_sequence(tokens, self.config.task, self.config.d_model)
        if self.config.use_decoder_pos_enc:
            emb = emb + sinusoidal_encoding(len(tokens), self.config.d_model)
        x = Tensor(emb)
        mask = seqcodec.causal_mask(len(tokens))
        for layer in self.decoder:
            x = layer(x, memory, self_mask=mask)
        logits = self.class_head(x)
        h = T.relu(self.coord_hidden1(x))
        h = T.relu(self.coord_hidden2(h))
        return logits, T.sigmoid(self.coord_out(h))

    def greedy_decode(self, memory):
        """Argmax decoding until E or max_seq_len tokens. S is input-only and
        never emitted. The result is always decodable by the sequence codec."""
        cfg = self.config
        vocab = seqcodec.classes_for_task(cfg.task)
        tokens = [START]
        probs = []
        with no_grad():
            while len(tokens) < cfg.max_seq_len:
                logits, coords = self.ar_forward(memory, tokens)
                row = logits.data[-1].copy()
                row[seqcodec.class_index(TokenClass.S, cfg.task)] = -np.inf
                shifted = np.exp(row - row.max())
                p = shifted / shifted.sum()
                k = int(np.argmax(row))
                probs.append(float(p[k]))
                cls = vocab[k]
                if cls is TokenClass.E:
                    tokens.append(seqcodec.END)
                    break
                if cls is TokenClass.EOP:
                    tokens.append(EOP)
                elif cls is TokenClass.G:
                    tokens.append(seqcodec.gate_token(coords.data[-1]))
                else:
                    xy = coords.data[-1]
                    tokens.append(seqcodec.point_token(xy[0], xy[1]))
        return ARPrediction(tokens, np.array(probs))

    # ---- persistence --------------------------------------------------------

    def ar_detections(self, pred):
        """Turn a decoded sentence into (objects, confidences) for scoring.

        Objects follow the codec's salvage rules (gates: every G token;
        points: every P; line: all Ps as one object; polygons: P runs of
        three or more closed by EOP). An object's confidence is the mean
        probability of the object tokens that built it.
        """
        task = self.config.task
        toks = pred.tokens[1:]  # drop S; probs align 1:1 with these
        cut = len(toks)
        for i, t in enumerate(toks):
            if t.cls is TokenClass.E:
                cut = i
                break
        objects, confs = [], []
        if task == "gates":
            for i in range(cut):
                if toks[i].cls is TokenClass.G:
                    objects.append(np.array(toks[i].coords).reshape(4, 2))
                    confs.append(pred.token_probs[i])
        elif task in ("points", "line"):
            idx = [i for i in range(cut) if toks[i].cls is TokenClass.P]
            if task == "points":
                for i in idx:
                    objects.append(np.array(toks[i].coords).reshape(1, 2))
                    confs.append(pred.token_probs[i])
            elif idx:
                pts = np.array([toks[i].coords for i in idx])
                objects.append(pts)
                confs.append(float(np.mean([pred.token_probs[i] for i in idx])))
        else:
            run = []
            for i in range(cut):
                if toks[i].cls is TokenClass.P:
                    run.append(i)
                elif toks[i].cls is TokenClass.EOP:
                    if len(run) >= 3:
                        objects.append(np.array([toks[j].coords for j in run]))
                        confs.append(
                            float(np.mean([pred.token_probs[j] for j in run]))
                        )
                    run = []
        return objects, np.array(confs)

    def param_groups(self, lr_backbone, lr_rest):
        """Backbone gets its own (smaller) learning rate."""
        backbone = set(id(p) for p in self.backbone.parameters())
        rest = [p for p in self.parameters() if id(p) not in backbone]
        return [
            {"params": self.backbone.parameters(), "lr": lr_backbone},
            {"params": rest, "lr": lr_rest},
        ]

    def save(self, path, extra_meta=None):
        meta = {"config": self.config.to_dict(), "init_seed": self.init_seed}
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path):
        params, meta = load_checkpoint(path)
        model = cls(ModelConfig.from_dict(meta["config"]),
                    seed=meta.get("init_seed", 0))
        model.load_state_dict(params)
        return model, meta
