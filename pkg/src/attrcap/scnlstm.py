"""Attribute-conditioned caption decoder.

The decoder is an LSTM whose every weight matrix is factorized through
the attribute vector: for each gate the input and recurrent signals are
first projected into a factor space, multiplied elementwise with a
projection of the attribute vector, and only then mapped to the gate
preactivation. The attribute vector therefore modulates all four gates
at every step, rather than being fed once as a pseudo-word.

Conventions, with B the batch of rows, E the embedding width, H the
hidden width, F the factor width, A the attribute width and V the
vocabulary size:

* inputs are rows: ``x`` is (B, E), ``h``/``c`` are (B, H), the
  attribute vector ``d`` is (B, A);
* per gate ``g`` in ``i, f, o, c`` the parameters are ``Wga`` (H, F),
  ``Wgb`` (F, A), ``Wgc`` (F, E), ``Uga`` (H, F), ``Ugb`` (F, A),
  ``Ugc`` (F, H) and the bias ``bg`` (H,);
* the image feature enters once: ``z = feature @ Cv.T`` is added to all
  four gate preactivations at the first step only;
* gates ``i, f, o`` are logistic; the cell candidate uses tanh.

A caption is a token id sequence beginning with BOS and ending with
EOS. Teacher-forced training scores steps ``t = 1..T`` predicting
tokens ``x_1..x_T`` from ``x_0 = BOS``, so EOS is a predicted token and
losses are reported in nats per predicted token.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nncore
from .nncore import (
    AdamState,
    DimensionError,
    ParameterError,
    Rng,
    adam_step,
    clip_gradients,
    dropout_backward,
    dropout_forward,
    sigmoid,
    softmax,
    xavier_init,
)

__all__ = [
    "BOS_ID",
    "CaptionSequence",
    "CaptionTrainConfig",
    "CaptionVocab",
    "EOS_ID",
    "ScnLstm",
    "ScnLstmConfig",
    "UNK_ID",
    "beam_search",
    "ensemble_beam_search",
    "load_captioner",
    "load_captioner_ensemble",
    "save_captioner",
    "save_captioner_ensemble",
    "train_captioner",
]

BOS_ID = 0
EOS_ID = 1
UNK_ID = 2
_SPECIALS = ("<bos>", "<eos>", "<unk>")
_GATES = ("i", "f", "o", "c")


@dataclass
class CaptionVocab:
    """Token vocabulary of the decoder.

    Ids 0, 1, 2 are the BOS, EOS and UNK specials; the remaining words
    are the corpus tokens that occurred at least ``min_count`` times,
    ordered by descending count with lexicographic tie-breaks.
    """

    words: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {word: i for i, word in enumerate(self.words)}

    def __len__(self):
        return len(self.words)

    @classmethod
    def from_token_lists(cls, token_lists, min_count=5):
        counts = Counter()
        for tokens in token_lists:
            counts.update(tokens)
        kept = sorted(
            (word for word, count in counts.items() if count >= min_count),
            key=lambda word: (-counts[word], word),
        )
        return cls(words=list(_SPECIALS) + kept)

    def encode(self, tokens):
        """Token list to id list, wrapped in BOS/EOS, unknowns to UNK."""
        body = [self.index.get(token, UNK_ID) for token in tokens]
        return [BOS_ID] + body + [EOS_ID]

    def decode(self, ids):
        """Id sequence back to tokens, dropping specials, stopping at EOS."""
        out = []
        for token_id in ids:
            if token_id == EOS_ID:
                break
            if token_id in (BOS_ID, UNK_ID):
                if token_id == UNK_ID:
                    out.append(_SPECIALS[UNK_ID])
                continue
            out.append(self.words[token_id])
        return out


@dataclass(frozen=True)
class CaptionSequence:
    """A decoded caption: ids from BOS to EOS plus its model score."""

    tokens: tuple
    log_prob: float

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != BOS_ID or self.tokens[-1] != EOS_ID:
            raise DimensionError(
                "caption sequences must start with BOS and end with EOS"
            )
        if any(t in (BOS_ID, EOS_ID) for t in self.tokens[1:-1]):
            raise DimensionError(
                "caption sequences must not contain interior BOS/EOS tokens"
            )

    @property
    def length(self):
        """Number of predicted tokens (EOS included, BOS not)."""
        return len(self.tokens) - 1


@dataclass
class ScnLstmConfig:
    """Architecture of the caption decoder."""

    vocab_size: int
    n_words: int
    feature_dim: int = 2048
    embed_dim: int = 300
    hidden_dim: int = 512
    factor_dim: int = 512
    dropout: float = 0.5


@dataclass
class CaptionTrainConfig:
    """Optimization settings for :func:`train_captioner`."""

    learning_rate: float = 2e-4
    batch_size: int = 64
    max_epochs: int = 20
    clip_norm: float = 5.0
    patience: int = 3
    seed: int = 0


def _log_softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class ScnLstm:
    """Factorized attribute-conditioned LSTM decoder."""

    def __init__(self, config, seed=0, params=None, embeddings=None):
        self.config = config
        if params is None:
            root = Rng(seed)
            h, f = config.hidden_dim, config.factor_dim
            e, a = config.embed_dim, config.n_words
            v = config.vocab_size
            params = {}
            for slot, gate in enumerate(_GATES):
                gate_rng = root.split(slot + 1)
                params[f"W{gate}a"] = xavier_init(h, f, gate_rng.split(0))
                params[f"W{gate}b"] = xavier_init(f, a, gate_rng.split(1))
                params[f"W{gate}c"] = xavier_init(f, e, gate_rng.split(2))
                params[f"U{gate}a"] = xavier_init(h, f, gate_rng.split(3))
                params[f"U{gate}b"] = xavier_init(f, a, gate_rng.split(4))
                params[f"U{gate}c"] = xavier_init(f, h, gate_rng.split(5))
                params[f"b{gate}"] = np.zeros(h, dtype=np.float64)
            params["Cv"] = xavier_init(h, config.feature_dim, root.split(5))
            params["embed"] = xavier_init(v, e, root.split(6))
            params["Wout"] = xavier_init(v, h, root.split(7))
            params["bout"] = np.zeros(v, dtype=np.float64)
            if embeddings is not None:
                embeddings = np.asarray(embeddings, dtype=np.float64)
                if embeddings.shape != (v, e):
                    raise DimensionError(
                        f"pretrained embeddings have shape {embeddings.shape}, "
                        f"expected {(v, e)}"
                    )
                params["embed"] = embeddings.copy()
        self.params = params

    # -- one step -------------------------------------------------------------

    def cell_forward(self, x, h_prev, c_prev, d, z=None, params=None):
        """One decoder step; returns ``(h, c, cache)``.

        Args:
            x: (B, E) current input embeddings.
            h_prev, c_prev: (B, H) previous hidden and cell rows.
            d: (B, A) attribute vectors.
            z: optional (B, H) image term, added to every gate's
                preactivation (first step only in sequence use).
        """
        p = self.params if params is None else params
        gates = {}
        for gate in _GATES:
            a1 = d @ p[f"W{gate}b"].T
            a2 = x @ p[f"W{gate}c"].T
            x_fact = a1 * a2
            b1 = d @ p[f"U{gate}b"].T
            b2 = h_prev @ p[f"U{gate}c"].T
            h_fact = b1 * b2
            pre = x_fact @ p[f"W{gate}a"].T + h_fact @ p[f"U{gate}a"].T + p[f"b{gate}"]
            if z is not None:
                pre = pre + z
            gates[gate] = (a1, a2, x_fact, b1, b2, h_fact, pre)
        i = sigmoid(gates["i"][6])
        f = sigmoid(gates["f"][6])
        o = sigmoid(gates["o"][6])
        cand = np.tanh(gates["c"][6])
        c = i * cand + f * c_prev
        tanh_c = np.tanh(c)
        h = o * tanh_c
        cache = (x, h_prev, c_prev, d, gates, (i, f, o, cand), tanh_c, z is not None)
        return h, c, cache

    def cell_backward(self, dh, dc_in, cache, grads, params=None):
        """Backward through one step, accumulating into ``grads``.

        Returns ``(dx, dh_prev, dc_prev, dd, dz)``; ``dz`` is ``None``
        unless the forward step received an image term.
        """
        p = self.params if params is None else params
        x, h_prev, c_prev, d, gates, (i, f, o, cand), tanh_c, has_z = cache
        do = dh * tanh_c
        dc = dc_in + dh * o * (1.0 - tanh_c * tanh_c)
        dpre = {
            "i": dc * cand * i * (1.0 - i),
            "f": dc * c_prev * f * (1.0 - f),
            "o": do * o * (1.0 - o),
            "c": dc * i * (1.0 - cand * cand),
        }
        dc_prev = dc * f
        dx = np.zeros_like(x)
        dh_prev = np.zeros_like(h_prev)
        dd = np.zeros_like(d)
        dz = np.zeros_like(dh) if has_z else None
        for gate in _GATES:
            a1, a2, x_fact, b1, b2, h_fact, _ = gates[gate]
            dpre_g = dpre[gate]
            grads[f"W{gate}a"] += dpre_g.T @ x_fact
            grads[f"U{gate}a"] += dpre_g.T @ h_fact
            grads[f"b{gate}"] += dpre_g.sum(axis=0)
            dx_fact = dpre_g @ p[f"W{gate}a"]
            dh_fact = dpre_g @ p[f"U{gate}a"]
            da1 = dx_fact * a2
            da2 = dx_fact * a1
            db1 = dh_fact * b2
            db2 = dh_fact * b1
            grads[f"W{gate}b"] += da1.T @ d
            grads[f"W{gate}c"] += da2.T @ x
            grads[f"U{gate}b"] += db1.T @ d
            grads[f"U{gate}c"] += db2.T @ h_prev
            dd += da1 @ p[f"W{gate}b"] + db1 @ p[f"U{gate}b"]
            dx += da2 @ p[f"W{gate}c"]
            dh_prev += db2 @ p[f"U{gate}c"]
            if has_z:
                dz += dpre_g
        return dx, dh_prev, dc_prev, dd, dz

    # -- sequences ------------------------------------------------------------

    def _check_sequence(self, ids):
        ids = list(ids)
        if len(ids) < 2 or ids[0] != BOS_ID or ids[-1] != EOS_ID:
            raise DimensionError(
                "token sequences must run from BOS to EOS with at least one step"
            )
        if any(t in (BOS_ID, EOS_ID) for t in ids[1:-1]):
            raise DimensionError(
                "token sequences must not contain interior BOS/EOS tokens"
            )
        v = self.config.vocab_size
        if any(not 0 <= t < v for t in ids):
            raise DimensionError(f"token id out of range for vocabulary size {v}")
        return ids

    def _sequence_forward(self, ids, feature, d, mode, rng, params):
        p = self.params if params is None else params
        ids = self._check_sequence(ids)
        feature = np.asarray(feature, dtype=np.float64).reshape(1, -1)
        d = np.asarray(d, dtype=np.float64).reshape(1, -1)
        h = np.zeros((1, self.config.hidden_dim), dtype=np.float64)
        c = np.zeros_like(h)
        z = feature @ p["Cv"].T
        nll = 0.0
        steps = []
        for t in range(1, len(ids)):
            x = p["embed"][ids[t - 1]].reshape(1, -1)
            h, c, cell_cache = self.cell_forward(
                x, h, c, d, z=z if t == 1 else None, params=p
            )
            h_drop, drop_cache = dropout_forward(
                h, self.config.dropout, mode, rng
            )
            logits = h_drop @ p["Wout"].T + p["bout"]
            log_probs = _log_softmax(logits)
            nll -= float(log_probs[0, ids[t]])
            steps.append((cell_cache, drop_cache, h_drop, log_probs))
        return nll, (ids, feature, d, steps)

    def _sequence_backward(self, cache, grads, params):
        p = self.params if params is None else params
        ids, feature, d, steps = cache
        dh_next = np.zeros((1, self.config.hidden_dim), dtype=np.float64)
        dc_next = np.zeros_like(dh_next)
        dd_total = np.zeros_like(d)
        for t in range(len(steps), 0, -1):
            cell_cache, drop_cache, h_drop, log_probs = steps[t - 1]
            dlogits = np.exp(log_probs)
            dlogits[0, ids[t]] -= 1.0
            grads["Wout"] += dlogits.T @ h_drop
            grads["bout"] += dlogits[0]
            dh = dropout_backward(dlogits @ p["Wout"], drop_cache) + dh_next
            dx, dh_next, dc_next, dd, dz = self.cell_backward(
                dh, dc_next, cell_cache, grads, params=p
            )
            grads["embed"][ids[t - 1]] += dx[0]
            dd_total += dd
            if dz is not None:
                grads["Cv"] += dz.T @ feature
        return dd_total

    def sequence_log_likelihood(self, ids, feature, d, params=None):
        """Teacher-forced log-likelihood of one BOS..EOS sequence (nats)."""
        nll, _ = self._sequence_forward(
            ids, feature, d, mode="inference", rng=None, params=params
        )
        return -nll

    def batch_loss(self, samples, mode="train", rng=None, params=None):
        """Mean teacher-forced loss over ``(feature, d, ids)`` samples.

        Returns ``(loss, grads, n_tokens)`` where ``loss`` is total
        negative log-likelihood divided by the total number of predicted
        tokens, and ``grads`` is scaled consistently with that mean.
        """
        p = self.params if params is None else params
        grads = {name: np.zeros_like(value) for name, value in p.items()}
        total_nll = 0.0
        total_tokens = 0
        for feature, d, ids in samples:
            nll, cache = self._sequence_forward(ids, feature, d, mode, rng, p)
            total_nll += nll
            total_tokens += len(cache[0]) - 1
            self._sequence_backward(cache, grads, p)
        if total_tokens == 0:
            raise ParameterError("batch contains no predicted tokens")
        scale = 1.0 / total_tokens
        for name in grads:
            grads[name] *= scale
        return total_nll / total_tokens, grads, total_tokens

    def batch_nll(self, samples, params=None):
        """Forward-only mean loss in nats per predicted token."""
        total_nll = 0.0
        total_tokens = 0
        for feature, d, ids in samples:
            nll, cache = self._sequence_forward(
                ids, feature, d, mode="inference", rng=None, params=params
            )
            total_nll += nll
            total_tokens += len(cache[0]) - 1
        if total_tokens == 0:
            raise ParameterError("dataset contains no predicted tokens")
        return total_nll / total_tokens

    def step_probs(self, last_ids, h, c, d, z=None, params=None):
        """Advance one step for a batch of hypotheses.

        Returns ``(probs, h, c)`` where ``probs`` is the (B, V) softmax
        over the next token. Inference mode: no dropout.
        """
        p = self.params if params is None else params
        x = p["embed"][np.asarray(last_ids, dtype=np.int64)]
        h, c, _ = self.cell_forward(x, h, c, d, z=z, params=p)
        logits = h @ p["Wout"].T + p["bout"]
        return softmax(logits), h, c

    def tensors(self):
        return dict(self.params)


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


def _batch_slices(n, batch_size):
    if batch_size < 1:
        raise ParameterError(f"batch size must be positive, got {batch_size}")
    bounds = list(range(0, n, batch_size)) + [n]
    return list(zip(bounds[:-1], bounds[1:]))


def train_captioner(samples, net_config, train_config, val_samples=None,
                    embeddings=None):
    """Train the decoder with Adam and global-norm gradient clipping.

    ``samples`` is a list of ``(feature, d, ids)`` triples, one per
    reference caption. When ``val_samples`` is given, training stops
    once the validation loss has not improved for ``patience``
    consecutive epochs and the best-validation parameters are restored;
    without a validation set it runs all ``max_epochs``.

    Returns ``(model, history)``; history holds per-epoch train and
    validation losses (nats per token) and the index of the best epoch.
    """
    if not samples:
        raise ParameterError("cannot train on an empty sample list")
    root = Rng(train_config.seed)
    model = ScnLstm(net_config, seed=root.split(0).seed, embeddings=embeddings)
    adam = AdamState(learning_rate=train_config.learning_rate)
    n = len(samples)
    history = {"train_loss": [], "val_loss": [], "best_epoch": None}
    best_val = np.inf
    best_params = None
    stale = 0
    for epoch in range(train_config.max_epochs):
        epoch_rng = root.split(epoch + 1)
        order = epoch_rng.permutation(n)
        epoch_nll = 0.0
        epoch_tokens = 0
        for start, stop in _batch_slices(n, train_config.batch_size):
            batch = [samples[j] for j in order[start:stop]]
            loss, grads, n_tokens = model.batch_loss(
                batch, mode="train", rng=epoch_rng
            )
            grads, _ = clip_gradients(grads, train_config.clip_norm)
            model.params = adam_step(model.params, grads, adam)
            epoch_nll += loss * n_tokens
            epoch_tokens += n_tokens
        history["train_loss"].append(epoch_nll / epoch_tokens)
        if val_samples is not None:
            val_loss = model.batch_nll(val_samples)
            history["val_loss"].append(val_loss)
            if val_loss < best_val:
                best_val = val_loss
                best_params = {k: v.copy() for k, v in model.params.items()}
                history["best_epoch"] = epoch
                stale = 0
            else:
                stale += 1
                if stale >= train_config.patience:
                    break
    if best_params is not None:
        model.params = best_params
    elif history["train_loss"]:
        history["best_epoch"] = len(history["train_loss"]) - 1
    return model, history


# --------------------------------------------------------------------------
# Decoding
# --------------------------------------------------------------------------


def ensemble_beam_search(models, feature, d, beam_width=5, max_len=20):
    """Beam-search decoding under the mean of the members' distributions.

    Hypotheses are scored by the sum of ``log(mean_k p_k(token))`` over
    their steps, the order-invariant ensemble mean making a one-member
    ensemble bitwise identical to plain single-model decoding. At each
    step every live hypothesis proposes its ``beam_width`` best
    non-BOS continuations, the pooled candidates are cut back to the
    best ``beam_width`` (ties broken toward smaller token ids, then
    shorter sequences), and candidates that just produced EOS retire to
    the finished pool while still occupying their slot in the cut.

    Returns the best finished hypothesis; if ``max_len`` steps pass
    without any hypothesis finishing, the best live hypothesis is
    terminated with EOS (which is scored like any other step, so the
    reported ``log_prob`` is the true model score of the returned
    sequence).
    """
    if beam_width < 1:
        raise ParameterError(f"beam width must be positive, got {beam_width}")
    if max_len < 1:
        raise ParameterError(f"max length must be positive, got {max_len}")
    if not models:
        raise ParameterError("decoding needs at least one model")
    n_members = len(models)
    hidden = [m.config.hidden_dim for m in models]
    feature = np.asarray(feature, dtype=np.float64).reshape(1, -1)
    d_row = np.asarray(d, dtype=np.float64).reshape(1, -1)
    z_rows = [feature @ m.params["Cv"].T for m in models]
    vocab_size = models[0].config.vocab_size
    token_order = np.arange(vocab_size)

    # A live hypothesis: (log_prob, tokens, [h per member], [c per member]).
    live = [(
        0.0,
        (BOS_ID,),
        [np.zeros(hidden[k], dtype=np.float64) for k in range(n_members)],
        [np.zeros(hidden[k], dtype=np.float64) for k in range(n_members)],
    )]
    finished = []

    def step_distributions(hyps, first_step):
        last_ids = [hyp[1][-1] for hyp in hyps]
        d_tile = np.repeat(d_row, len(hyps), axis=0)
        member_probs = []
        states = []
        for k, model in enumerate(models):
            h = np.stack([hyp[2][k] for hyp in hyps])
            c = np.stack([hyp[3][k] for hyp in hyps])
            z = np.repeat(z_rows[k], len(hyps), axis=0) if first_step else None
            probs, h, c = model.step_probs(last_ids, h, c, d_tile, z=z)
            member_probs.append(probs)
            states.append((h, c))
        return nncore.ensemble_mean(np.stack(member_probs)), states

    for t in range(1, max_len + 1):
        probs, states = step_distributions(live, first_step=(t == 1))
        with np.errstate(divide="ignore"):
            log_probs = np.log(probs)
        candidates = []
        for row, hyp in enumerate(live):
            # Best continuations of this hypothesis: by descending log
            # probability, ties toward the smaller token id, BOS excluded.
            ranked = np.lexsort((token_order, -log_probs[row]))
            picked = 0
            for token in ranked:
                if token == BOS_ID:
                    continue
                candidates.append((
                    hyp[0] + float(log_probs[row, token]),
                    hyp[1] + (int(token),),
                    row,
                ))
                picked += 1
                if picked == beam_width:
                    break
        candidates.sort(key=lambda cand: (-cand[0], cand[1]))
        new_live = []
        for log_prob, tokens, row in candidates[:beam_width]:
            if tokens[-1] == EOS_ID:
                finished.append((log_prob, tokens))
            else:
                new_live.append((
                    log_prob,
                    tokens,
                    [states[k][0][row] for k in range(n_members)],
                    [states[k][1][row] for k in range(n_members)],
                ))
        live = new_live
        if not live:
            break

    if finished:
        log_prob, tokens = min(finished, key=lambda f: (-f[0], f[1]))
        return CaptionSequence(tokens=tokens, log_prob=log_prob)
    # Nothing finished within the length budget: force-terminate the best
    # live hypothesis, scoring its EOS step honestly. The forced step is
    # always past step one, so no image term is added.
    live.sort(key=lambda hyp: (-hyp[0], hyp[1]))
    best = live[0]
    probs, _ = step_distributions([best], first_step=False)
    with np.errstate(divide="ignore"):
        eos_log_prob = float(np.log(probs[0, EOS_ID]))
    return CaptionSequence(
        tokens=best[1] + (EOS_ID,), log_prob=best[0] + eos_log_prob
    )


def beam_search(model, feature, d, beam_width=5, max_len=20):
    """Single-model beam search (a one-member ensemble)."""
    return ensemble_beam_search([model], feature, d, beam_width, max_len)


# --------------------------------------------------------------------------
# Checkpoint formats
# --------------------------------------------------------------------------


def save_captioner(path, model, vocab, extra_meta=None):
    from .storage import save_checkpoint

    config = {
        "kind": "scnlstm",
        "net": asdict(model.config),
        "vocab_words": list(vocab.words),
    }
    if extra_meta:
        config["meta"] = extra_meta
    save_checkpoint(path, model.tensors(), config)


def load_captioner(path):
    from .storage import FormatError, load_checkpoint

    tensors, config = load_checkpoint(path)
    if config.get("kind") != "scnlstm":
        raise FormatError(f"{path}: not a captioner checkpoint")
    model = ScnLstm(ScnLstmConfig(**config["net"]), params=tensors)
    return model, CaptionVocab(words=list(config["vocab_words"]))


def save_captioner_ensemble(path, models, vocab, extra_meta=None):
    """Store all decoder members in one checkpoint file."""
    from .storage import save_checkpoint

    tensors = {}
    for m, model in enumerate(models):
        for name, value in model.tensors().items():
            tensors[f"member{m}.{name}"] = value
    config = {
        "kind": "scnlstm_ensemble",
        "n_members": len(models),
        "net": asdict(models[0].config),
        "vocab_words": list(vocab.words),
    }
    if extra_meta:
        config["meta"] = extra_meta
    save_checkpoint(path, tensors, config)


def load_captioner_ensemble(path):
    from .storage import FormatError, load_checkpoint

    tensors, config = load_checkpoint(path)
    kind = config.get("kind")
    if kind == "scnlstm":
        model = ScnLstm(ScnLstmConfig(**config["net"]), params=tensors)
        return [model], CaptionVocab(words=list(config["vocab_words"]))
    if kind != "scnlstm_ensemble":
        raise FormatError(f"{path}: not a captioner checkpoint")
    net_config = ScnLstmConfig(**config["net"])
    members = []
    for m in range(int(config["n_members"])):
        prefix = f"member{m}."
        member_tensors = {
            name[len(prefix):]: value
            for name, value in tensors.items()
            if name.startswith(prefix)
        }
        members.append(ScnLstm(net_config, params=member_tensors))
    return members, CaptionVocab(words=list(config["vocab_words"]))
