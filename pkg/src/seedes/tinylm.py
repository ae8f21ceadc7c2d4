"""Character-level GRU language model evaluated in numpy.

Layers (all float32)::

    embed        (V, E)
    block{i}.w_ih (3H, in)   block{i}.w_hh (3H, H)
    block{i}.b_ih (3H,)      block{i}.b_hh (3H,)
    head.w       (V, H)      head.b        (V,)

Gate order and equations follow the common GRU convention (reset, update,
candidate), so weights trained with ``torch.nn.GRU`` load unchanged:

    r = sig(W_ir x + b_ir + W_hr h + b_hr)
    z = sig(W_iz x + b_iz + W_hz h + b_hz)
    n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    h = (1 - z) * n + z * h

Hidden-state arithmetic is float32; log-softmax is taken in float64 so that
per-position probabilities sum to 1 well inside 1e-5.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .noise import NoiseStream, gaussian_fill
from .params import ParameterSet

EOS = 0
VOCAB = ["<eos>", "\n"] + [chr(c) for c in range(32, 127)] + ["×", "÷"]
_INDEX = {ch: i for i, ch in enumerate(VOCAB)}

PROMPT_TEMPLATE = "Q: {prompt}\nA: "
CONTEXT_LIMIT = 256
DEFAULT_SNAPSHOT = "tinylm_base.esp"


class VocabError(ValueError):
    pass


def encode(text: str) -> list[int]:
    try:
        return [_INDEX[ch] for ch in text]
    except KeyError as exc:
        raise VocabError(f"character {exc.args[0]!r} is not in the vocabulary") from None


def decode(tokens) -> str:
    out = []
    for t in tokens:
        if t == EOS:
            break
        out.append(VOCAB[t])
    return "".join(out)


def format_prompt(prompt: str) -> str:
    return PROMPT_TEMPLATE.format(prompt=prompt)


def _sigmoid(x):
    with np.errstate(over="ignore"):        # exp(-x) -> inf gives the right limit, 0
        return np.float32(1.0) / (np.float32(1.0) + np.exp(-x))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def layer_shapes(vocab: int, embed: int, hidden: int, blocks: int) -> list[tuple[str, tuple]]:
    out = [("embed", (vocab, embed))]
    for i in range(blocks):
        fan_in = embed if i == 0 else hidden
        out += [(f"block{i}.w_ih", (3 * hidden, fan_in)), (f"block{i}.w_hh", (3 * hidden, hidden)),
                (f"block{i}.b_ih", (3 * hidden,)), (f"block{i}.b_hh", (3 * hidden,))]
    out += [("head.w", (vocab, hidden)), ("head.b", (vocab,))]
    return out


@dataclass
class TinyLm:
    params: ParameterSet
    context_limit: int = CONTEXT_LIMIT

    def __post_init__(self):
        emb = self.params["embed"]
        self.vocab_size, self.embed_dim = emb.shape
        if self.vocab_size == 0:
            raise VocabError("empty vocabulary")
        self.hidden = self.params["head.w"].shape[1]
        self.blocks = sum(1 for n in self.params.names if n.endswith(".w_ih"))
        expected = layer_shapes(self.vocab_size, self.embed_dim, self.hidden, self.blocks)
        if [(n, tuple(s)) for n, s in zip(self.params.names, self.params.shapes)] != expected:
            raise ValueError("parameter layout does not match a TinyLm")

    @classmethod
    def random(cls, seed: int = 0, embed: int = 128, hidden: int = 128, blocks: int = 2,
               vocab: int = len(VOCAB)) -> "TinyLm":
        stream = NoiseStream(seed)
        layers = []
        for name, shape in layer_shapes(vocab, embed, hidden, blocks):
            scale = 0.1 if name == "embed" else 1.0 / np.sqrt(hidden)
            arr = gaussian_fill(stream, shape) * np.float32(scale)
            layers.append((name, arr))
        return cls(ParameterSet(layers))

    @classmethod
    def load(cls, path=None) -> "TinyLm":
        if path is None:
            path = Path(str(resources.files("seedes") / "data" / DEFAULT_SNAPSHOT))
        return cls(ParameterSet.load(path))

    def clone(self) -> "TinyLm":
        return TinyLm(self.params.copy(), self.context_limit)

    # one GRU step for a batch; xp is the precomputed input projection
    def _cell(self, i: int, xp: np.ndarray, h: np.ndarray) -> np.ndarray:
        H = self.hidden
        hp = h @ self.params[f"block{i}.w_hh"].T + self.params[f"block{i}.b_hh"]
        r = _sigmoid(xp[:, :H] + hp[:, :H])
        z = _sigmoid(xp[:, H:2 * H] + hp[:, H:2 * H])
        n = np.tanh(xp[:, 2 * H:] + r * hp[:, 2 * H:])
        return (np.float32(1.0) - z) * n + z * h

    def _input_proj(self, i: int, x: np.ndarray) -> np.ndarray:
        return x @ self.params[f"block{i}.w_ih"].T + self.params[f"block{i}.b_ih"]

    def _run_prefix(self, tokens: np.ndarray, mask: np.ndarray):
        """Run (B, L) token ids; masked steps leave the state untouched.

        Returns the final hidden state of every block and the top-block
        output at every position, shape (B, L, H).
        """
        B, L = tokens.shape
        x = self.params["embed"][tokens]                # (B, L, E)
        states = []
        for i in range(self.blocks):
            xp = self._input_proj(i, x.reshape(B * L, -1)).reshape(B, L, -1)
            h = np.zeros((B, self.hidden), dtype=np.float32)
            outs = np.empty((B, L, self.hidden), dtype=np.float32)
            for t in range(L):
                hn = self._cell(i, xp[:, t], h)
                m = mask[:, t:t + 1]
                h = np.where(m, hn, h)
                outs[:, t] = h
            states.append(h)
            x = outs
        return states, x

    def _head(self, h: np.ndarray) -> np.ndarray:
        return h @ self.params["head.w"].T + self.params["head.b"]

    def _check(self, tokens) -> None:
        if len(tokens) > self.context_limit:
            raise ValueError(f"sequence of {len(tokens)} tokens exceeds the context limit "
                             f"{self.context_limit}")
        for t in tokens:
            if not 0 <= t < self.vocab_size:
                raise VocabError(f"token id {t} is outside the vocabulary")

    def forward_logits(self, tokens) -> np.ndarray:
        """Log-probabilities (float64) for the token after each position, shape (L, V)."""
        tokens = list(tokens)
        if not tokens:
            raise ValueError("empty token sequence")
        self._check(tokens)
        arr = np.asarray([tokens], dtype=np.int64)
        _, out = self._run_prefix(arr, np.ones_like(arr, dtype=bool))
        return log_softmax(self._head(out[0]))

    def score(self, prompt_tokens, response_tokens) -> np.ndarray:
        """log p(response_t | prompt, response_<t), one value per response token."""
        seq = list(prompt_tokens) + list(response_tokens)
        lp = self.forward_logits(seq[:-1]) if len(seq) > 1 else None
        n0 = len(prompt_tokens)
        return np.array([lp[n0 - 1 + k, tok] for k, tok in enumerate(response_tokens)])

    def generate(self, prompts: list[list[int]], max_new: int, *, temperature: float = 0.0,
                 rng: np.random.Generator | None = None) -> list[list[int]]:
        """Batched decoding. temperature 0 is greedy with ties to the lowest id.

        Returned sequences exclude the prompt and include the end token when
        one was produced.
        """
        if max_new <= 0:
            return [[] for _ in prompts]
        if not prompts:
            return []
        for p in prompts:
            if not p:
                raise ValueError("empty prompt")
            self._check(p)
            if len(p) + max_new > self.context_limit:
                raise ValueError("prompt plus max_new exceeds the context limit")
        if temperature > 0 and rng is None:
            raise ValueError("sampling needs an rng")
        B, L = len(prompts), max(len(p) for p in prompts)
        toks = np.zeros((B, L), dtype=np.int64)
        mask = np.zeros((B, L), dtype=bool)
        for b, p in enumerate(prompts):
            toks[b, L - len(p):] = p            # left padding
            mask[b, L - len(p):] = True
        states, out = self._run_prefix(toks, mask)
        last = out[:, -1]
        outs = [[] for _ in range(B)]
        alive = np.ones(B, dtype=bool)
        embed = self.params["embed"]
        for _ in range(max_new):
            logits = self._head(last)
            if temperature > 0:
                lp = log_softmax(logits / np.float32(temperature))
                u = rng.random(B)
                nxt = np.array([min(int(np.searchsorted(np.cumsum(np.exp(row)), ui, side="right")),
                                    self.vocab_size - 1) for row, ui in zip(lp, u)])
            else:
                nxt = logits.argmax(axis=1)     # first maximum = lowest index
            for b in np.flatnonzero(alive):
                outs[b].append(int(nxt[b]))
            alive &= nxt != EOS
            if not alive.any():
                break
            x = embed[nxt]
            for i in range(self.blocks):
                states[i] = self._cell(i, self._input_proj(i, x), states[i])
                x = states[i]
            last = x
        return outs

    def greedy_decode(self, prompt, max_new: int) -> list[int]:
        return self.generate([list(prompt)], max_new)[0]

    def respond(self, prompts: list[str], max_new: int, **kw) -> list[str]:
        encoded = [encode(format_prompt(p)) for p in prompts]
        return [decode(seq) for seq in self.generate(encoded, max_new, **kw)]

