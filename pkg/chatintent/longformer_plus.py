'''
Desk-scale Longformer+ classifier in numpy.

The input embedding is the sum of four tables: token embeddings A (V_w x d), token
position embeddings B (p x d), token type embeddings Ct (3 x d, [CLS]/key/value) and
page position embeddings D (n x d). The Longformer variant drops Ct and D from the sum.
Blocks are pre-LayerNorm; attention is either full or sliding-window with a global
[CLS] (position 0 attends to and is attended by every position). The [CLS] hidden
state feeds a linear head over the five intent classes. Gradients are computed by an
explicit backward pass over the cached forward activations.
'''
import os, json, struct, logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from chatintent.errors import EncodingError, ChatIntentError
from chatintent.session_model import IntentClass, N_CLASSES, CLASS_ORDER, truncate_session
from chatintent.tokenizer import encode_structured
from chatintent.corpus_io import atomic_write_bytes

log = logging.getLogger(__name__)

LN_EPS = 1e-5
GELU_C = np.sqrt(2.0 / np.pi)
CHECKPOINT_MAGIC = b"CHATINTENT-CKPT v1\n"


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen = True, extra = "forbid")

    vocab_size: int = Field(..., ge = 5)
    d_model: int = Field(64, ge = 1)
    max_tokens: int = Field(1024, ge = 2)
    max_pages: int = Field(50, ge = 1)
    max_attr_tokens: int = Field(32, ge = 1)
    layers: int = Field(2, ge = 1)
    heads: int = Field(4, ge = 1)
    window: int = Field(64, ge = 2)
    ffn_mult: int = Field(4, ge = 1)
    dropout: float = Field(0.1, ge = 0.0, lt = 1.0)
    variant: Literal["LongformerPlus", "Longformer"] = "LongformerPlus"
    attention_mode: Literal["full", "sliding_global"] = "sliding_global"
    precision: Literal["f32", "f64"] = "f32"
    seed: int = 0

    @model_validator(mode = "after")
    def _check_shapes(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model (%d) must be divisible by heads (%d)" % (self.d_model, self.heads))
        if self.window % 2 != 0:
            raise ValueError("window must be even, got %d" % (self.window))
        return self

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32

    @property
    def head_dim(self):
        return self.d_model // self.heads

    @property
    def uses_structure(self):
        return self.variant == "LongformerPlus"


def param_shapes(config):
    '''
    Ordered (name, shape) list; this order is the checkpoint order and the init draw order.
    '''
    d, f = config.d_model, config.d_model * config.ffn_mult
    shapes = [("A", (config.vocab_size, d)), ("B", (config.max_tokens, d)), ("Ct", (3, d)), ("D", (config.max_pages, d))]
    for l in range(config.layers):
        pre = "layers.%d." % (l)
        shapes += [(pre + "ln1_g", (d,)), (pre + "ln1_b", (d,)),
                   (pre + "Wq", (d, d)), (pre + "bq", (d,)),
                   (pre + "Wk", (d, d)), (pre + "bk", (d,)),
                   (pre + "Wv", (d, d)), (pre + "bv", (d,)),
                   (pre + "Wo", (d, d)), (pre + "bo", (d,)),
                   (pre + "ln2_g", (d,)), (pre + "ln2_b", (d,)),
                   (pre + "W1", (d, f)), (pre + "b1", (f,)),
                   (pre + "W2", (f, d)), (pre + "b2", (d,))]
    shapes += [("lnf_g", (d,)), ("lnf_b", (d,)), ("Wh", (d, N_CLASSES)), ("bh", (N_CLASSES,))]
    return shapes


class ModelParams:

    def __init__(self, tensors):
        self.tensors = OrderedDict(tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = value

    def __iter__(self):
        return iter(self.tensors)

    def names(self):
        return list(self.tensors.keys())

    def items(self):
        return self.tensors.items()

    def copy(self):
        return ModelParams((k, v.copy()) for k, v in self.tensors.items())

    def zeros_like(self):
        return ModelParams((k, np.zeros_like(v)) for k, v in self.tensors.items())

    def equals(self, other):
        return self.names() == other.names() and all(np.array_equal(self[k], other[k]) for k in self.names())


def init_params(config):
    '''
    Xavier-uniform matrices, zero biases, LayerNorm gains of one; deterministic per seed.
    All tables are drawn for both variants; common weights are identical across variants.
    '''
    rng = np.random.default_rng(config.seed)
    tensors = []
    for name, shape in param_shapes(config):
        short = name.rsplit(".", 1)[-1]
        if len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            value = rng.uniform(-limit, limit, size = shape)
        elif short.endswith("_g"):
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        tensors.append((name, value.astype(config.dtype)))
    return ModelParams(tensors)


###################
# Building blocks #
###################

def layernorm_forward(x, gain, bias):
    mu = x.mean(axis = -1, keepdims = True)
    xc = x - mu
    var = (xc * xc).mean(axis = -1, keepdims = True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return gain * xhat + bias, (xhat, inv, gain)


def layernorm_backward(cache, dy):
    xhat, inv, gain = cache
    n = xhat.shape[-1]
    dgain = (dy * xhat).sum(axis = 0)
    dbias = dy.sum(axis = 0)
    dxhat = dy * gain
    dx = (inv / n) * (n * dxhat - dxhat.sum(axis = -1, keepdims = True) - xhat * (dxhat * xhat).sum(axis = -1, keepdims = True))
    return dx, dgain, dbias


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + 0.044715 * x ** 3)))


def gelu_grad(x):
    t = np.tanh(GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * x * x)


def softmax(z, axis = -1):
    z = z - z.max(axis = axis, keepdims = True)
    e = np.exp(z)
    return e / e.sum(axis = axis, keepdims = True)


def attention_mask(length, mode, window):
    '''
    Boolean (L, L) mask of allowed (query, key) pairs.
    sliding_global: |i - j| <= window/2, or i = 0, or j = 0.
    '''
    if mode == "full":
        return np.ones((length, length), dtype = bool)
    idx = np.arange(length)
    allowed = np.abs(idx[:, None] - idx[None, :]) <= window // 2
    allowed[0, :] = True
    allowed[:, 0] = True
    return allowed


def _attention_probs(Q, K, mask):
    scores = (Q @ np.swapaxes(K, -1, -2)) / np.sqrt(Q.shape[-1])
    scores = np.where(mask, scores, -np.inf)
    return softmax(scores, axis = -1)


def _banded_attention(Q, K, V, window):
    length = Q.shape[-2]
    half = window // 2
    scale = np.sqrt(Q.shape[-1])
    out = np.zeros(Q.shape[:-1] + (V.shape[-1],), dtype = np.result_type(Q, V))
    for i in range(length):
        if i == 0:
            js = np.arange(length)
        else:
            local = np.arange(max(0, i - half), min(length, i + half + 1))
            js = local if local[0] == 0 else np.concatenate(([0], local))
        scores = (Q[..., i:i + 1, :] @ np.swapaxes(K[..., js, :], -1, -2)) / scale
        out[..., i:i + 1, :] = softmax(scores, axis = -1) @ V[..., js, :]
    return out


def attention(Q, K, V, mode, window, banded = False):
    '''
    Scaled dot-product attention over the last two axes.
    Params:
     - Q, K, V: arrays of shape (..., L, d_head)
     - mode: "full" or "sliding_global"
     - window: sliding window width w (even)
     - banded: evaluate sliding_global per query over its allowed keys only (forward only)
    '''
    if banded and mode == "sliding_global":
        return _banded_attention(Q, K, V, window)
    return _attention_probs(Q, K, attention_mask(Q.shape[-2], mode, window)) @ V


def _dropout(x, rate, rng):
    if rng is None or rate <= 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


###########
# Forward #
###########

@dataclass
class ForwardTrace:
    logits: np.ndarray
    h_cls: np.ndarray
    inputs: object = None
    embed_mask: object = None
    layers: List[dict] = field(default_factory = list)
    final_ln: tuple = None


def _check_input(config, inp):
    length = len(inp)
    if length < 1 or length > config.max_tokens:
        raise EncodingError("Error while checking input: length %d outside [1, %d]" % (length, config.max_tokens))
    checks = [("token id", inp.token_ids, config.vocab_size), ("token position", inp.token_positions, config.max_tokens),
              ("token type", inp.token_types, 3), ("page position", inp.page_positions, config.max_pages)]
    for label, ids, bound in checks:
        if ids.shape[0] != length:
            raise EncodingError("Error while checking input: %s stream has length %d, expected %d" % (label, ids.shape[0], length))
        if ids.min() < 0 or ids.max() >= bound:
            raise EncodingError("Error while checking input: %s out of range [0, %d)" % (label, bound))


def forward(params, config, inp, rng = None):
    '''
    Forward pass for one encoded session.
    Params:
     - params: ModelParams
     - config: ModelConfig
     - inp: EncodedInput
     - rng: numpy Generator for dropout; None runs in evaluation mode
    '''
    _check_input(config, inp)
    length, heads, dh = len(inp), config.heads, config.head_dim
    e = params["A"][inp.token_ids] + params["B"][inp.token_positions]
    if config.uses_structure:
        e = e + params["Ct"][inp.token_types]
        e = e + params["D"][inp.page_positions]
    x, embed_mask = _dropout(e, config.dropout, rng)
    mask = attention_mask(length, config.attention_mode, config.window)
    trace = ForwardTrace(logits = None, h_cls = None, inputs = inp, embed_mask = embed_mask)
    for l in range(config.layers):
        p = lambda name: params["layers.%d.%s" % (l, name)]
        h, ln1 = layernorm_forward(x, p("ln1_g"), p("ln1_b"))
        q = (h @ p("Wq") + p("bq")).reshape(length, heads, dh).transpose(1, 0, 2)
        k = (h @ p("Wk") + p("bk")).reshape(length, heads, dh).transpose(1, 0, 2)
        v = (h @ p("Wv") + p("bv")).reshape(length, heads, dh).transpose(1, 0, 2)
        probs = _attention_probs(q, k, mask)
        ctx = (probs @ v).transpose(1, 0, 2).reshape(length, heads * dh)
        a, attn_mask = _dropout(ctx @ p("Wo") + p("bo"), config.dropout, rng)
        x1 = x + a
        h2, ln2 = layernorm_forward(x1, p("ln2_g"), p("ln2_b"))
        f1 = h2 @ p("W1") + p("b1")
        g = gelu(f1)
        f2, ffn_mask = _dropout(g @ p("W2") + p("b2"), config.dropout, rng)
        x = x1 + f2
        trace.layers.append({"h": h, "ln1": ln1, "q": q, "k": k, "v": v, "probs": probs, "ctx": ctx, "attn_mask": attn_mask,
                             "h2": h2, "ln2": ln2, "f1": f1, "g": g, "ffn_mask": ffn_mask})
    hf, trace.final_ln = layernorm_forward(x, params["lnf_g"], params["lnf_b"])
    trace.h_cls = hf[0]
    trace.logits = trace.h_cls @ params["Wh"] + params["bh"]
    return trace


############
# Backward #
############

def backward(params, config, trace, dlogits, grads):
    '''
    Accumulate d(loss)/d(params) into `grads` given d(loss)/d(logits) for one trace.
    '''
    inp = trace.inputs
    length, heads, dh = len(inp), config.heads, config.head_dim
    grads["Wh"] += np.outer(trace.h_cls, dlogits)
    grads["bh"] += dlogits
    dhf = np.zeros((length, config.d_model), dtype = trace.h_cls.dtype)
    dhf[0] = params["Wh"] @ dlogits
    dx, dg, db = layernorm_backward(trace.final_ln, dhf)
    grads["lnf_g"] += dg
    grads["lnf_b"] += db
    scale = np.sqrt(dh)
    for l in reversed(range(config.layers)):
        c = trace.layers[l]
        pre = "layers.%d." % (l)
        # feed-forward branch
        df2 = dx if c["ffn_mask"] is None else dx * c["ffn_mask"]
        grads[pre + "W2"] += c["g"].T @ df2
        grads[pre + "b2"] += df2.sum(axis = 0)
        df1 = (df2 @ params[pre + "W2"].T) * gelu_grad(c["f1"])
        grads[pre + "W1"] += c["h2"].T @ df1
        grads[pre + "b1"] += df1.sum(axis = 0)
        dh2, dg, db = layernorm_backward(c["ln2"], df1 @ params[pre + "W1"].T)
        grads[pre + "ln2_g"] += dg
        grads[pre + "ln2_b"] += db
        dx1 = dx + dh2
        # attention branch
        da = dx1 if c["attn_mask"] is None else dx1 * c["attn_mask"]
        grads[pre + "Wo"] += c["ctx"].T @ da
        grads[pre + "bo"] += da.sum(axis = 0)
        dctx = (da @ params[pre + "Wo"].T).reshape(length, heads, dh).transpose(1, 0, 2)
        probs = c["probs"]
        dv = np.swapaxes(probs, -1, -2) @ dctx
        dprobs = dctx @ np.swapaxes(c["v"], -1, -2)
        dscores = probs * (dprobs - (dprobs * probs).sum(axis = -1, keepdims = True)) / scale
        dq = dscores @ c["k"]
        dk = np.swapaxes(dscores, -1, -2) @ c["q"]
        merge = lambda t: t.transpose(1, 0, 2).reshape(length, heads * dh)
        dq, dk, dv = merge(dq), merge(dk), merge(dv)
        h = c["h"]
        grads[pre + "Wq"] += h.T @ dq
        grads[pre + "bq"] += dq.sum(axis = 0)
        grads[pre + "Wk"] += h.T @ dk
        grads[pre + "bk"] += dk.sum(axis = 0)
        grads[pre + "Wv"] += h.T @ dv
        grads[pre + "bv"] += dv.sum(axis = 0)
        dh_in = dq @ params[pre + "Wq"].T + dk @ params[pre + "Wk"].T + dv @ params[pre + "Wv"].T
        dh1, dg, db = layernorm_backward(c["ln1"], dh_in)
        grads[pre + "ln1_g"] += dg
        grads[pre + "ln1_b"] += db
        dx = dx1 + dh1
    de = dx if trace.embed_mask is None else dx * trace.embed_mask
    np.add.at(grads["A"], inp.token_ids, de)
    np.add.at(grads["B"], inp.token_positions, de)
    if config.uses_structure:
        np.add.at(grads["Ct"], inp.token_types, de)
        np.add.at(grads["D"], inp.page_positions, de)
    return grads


def cross_entropy(logits, label):
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[label])


def loss_and_grad(params, config, batch, rng = None):
    '''
    Mean cross-entropy over a batch and its exact gradient.
    Params:
     - batch: non-empty list of (EncodedInput, class index or IntentClass)
     - rng: dropout generator; None evaluates without dropout
    Examples are processed in list order so the reduction order is fixed.
    '''
    if not batch:
        raise ValueError("loss_and_grad needs a non-empty batch")
    grads = params.zeros_like()
    total = 0.0
    for inp, label in batch:
        label = label.index if isinstance(label, IntentClass) else int(label)
        trace = forward(params, config, inp, rng)
        total += cross_entropy(trace.logits, label)
        dlogits = softmax(trace.logits)
        dlogits[label] -= 1.0
        backward(params, config, trace, dlogits / len(batch), grads)
    return total / len(batch), grads


###########
# Predict #
###########

def prepare_input(session, vocab, config):
    '''
    Truncate a session to the model limits and encode it.
    '''
    try:
        truncated = truncate_session(session, config.max_pages, config.max_attr_tokens, config.max_tokens, vocab)
    except ValueError as err:
        raise EncodingError(str(err))
    return encode_structured(truncated, vocab, config.max_tokens, config.max_pages)


def argmax_class(logits):
    '''
    Class with the largest logit; exact ties go to the lowest canonical class index.
    '''
    return CLASS_ORDER[int(np.argmax(np.asarray(logits)))]


def predict_encoded(params, config, inp):
    logits = forward(params, config, inp).logits.astype(np.float64)
    return argmax_class(logits), softmax(logits)


def predict(params, config, session, vocab):
    '''
    Predicted intent class and the five class probabilities for one session.
    '''
    return predict_encoded(params, config, prepare_input(session, vocab, config))


##############
# Checkpoint #
##############

def save_checkpoint(params, config, fp_checkpoint):
    '''
    Write magic line, u64 header length, JSON header (config + tensor manifest), then
    little-endian f32 tensors in declared order.
    '''
    shapes = param_shapes(config)
    header = {"format_version": 1, "config": config.model_dump(mode = "json"),
              "tensors": [{"name": name, "shape": list(shape)} for name, shape in shapes]}
    header_bytes = json.dumps(header).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<Q", len(header_bytes)), header_bytes]
    for name, shape in shapes:
        if tuple(params[name].shape) != tuple(shape):
            raise ChatIntentError("Error while saving checkpoint: tensor `%s` has shape %s, expected %s" % (name, params[name].shape, shape))
        chunks.append(np.ascontiguousarray(params[name], dtype = "<f4").tobytes())
    atomic_write_bytes(fp_checkpoint, b"".join(chunks))


def load_checkpoint(fp_checkpoint):
    '''
    Read a checkpoint; returns (ModelParams, ModelConfig). Shapes are validated against the config.
    '''
    if not os.path.isfile(fp_checkpoint):
        raise ChatIntentError("Error reading checkpoint: Unable to find '%s'." % (fp_checkpoint))
    with open(fp_checkpoint, "rb") as fh_ckpt:
        data = fh_ckpt.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ChatIntentError("Error reading checkpoint `%s`: bad magic line" % (fp_checkpoint))
    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    header = json.loads(data[offset:offset + header_len].decode("utf-8"))
    offset += header_len
    config = ModelConfig.model_validate(header["config"])
    expected = param_shapes(config)
    manifest = [(t["name"], tuple(t["shape"])) for t in header["tensors"]]
    if manifest != expected:
        raise ChatIntentError("Error reading checkpoint `%s`: tensor manifest does not match its config" % (fp_checkpoint))
    tensors = []
    for name, shape in expected:
        count = int(np.prod(shape))
        if offset + 4 * count > len(data):
            raise ChatIntentError("Error reading checkpoint `%s`: truncated at tensor `%s`" % (fp_checkpoint, name))
        values = np.frombuffer(data, dtype = "<f4", count = count, offset = offset).reshape(shape)
        tensors.append((name, values.astype(config.dtype)))
        offset += 4 * count
    if offset != len(data):
        raise ChatIntentError("Error reading checkpoint `%s`: %d trailing bytes" % (fp_checkpoint, len(data) - offset))
    return ModelParams(tensors), config
