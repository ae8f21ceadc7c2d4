"""Pretrain the shipped TinyLm snapshot with PyTorch (optional dependency).

Every corpus line is rendered as a prompt plus either the bare answer or a
wordy "The answer is X." reply; the wordy form is drawn with probability
``--wordy`` independently at every step, so the model learns a mild,
prompt-independent preference for it. That preference is what fine-tuning
for conciseness has to undo.

    python tools/pretrain_tinylm.py --out src/seedes/data/tinylm_base.esp
"""

from __future__ import annotations

import argparse
import logging
import random
from pathlib import Path

import numpy as np
import torch
from torch import nn

from seedes.params import ParameterSet
from seedes.tinylm import EOS, VOCAB, TinyLm, encode, format_prompt

log = logging.getLogger("pretrain")

CORPUS = Path(__file__).resolve().parents[1] / "src" / "seedes" / "data" / "tinylm_corpus.txt"


def read_corpus(path: Path) -> list[tuple[str, str]]:
    pairs = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        q, a = line.split("\t")
        pairs.append((q, a))
    return pairs


def wordy(answer: str) -> str:
    return f"The answer is {answer}."


class Net(nn.Module):
    def __init__(self, vocab: int, embed: int, hidden: int, blocks: int):
        super().__init__()
        self.embed = nn.Embedding(vocab, embed)
        self.rnns = nn.ModuleList(
            nn.GRU(embed if i == 0 else hidden, hidden, batch_first=True) for i in range(blocks))
        self.head = nn.Linear(hidden, vocab)

    def forward(self, tokens):
        x = self.embed(tokens)
        for rnn in self.rnns:
            x, _ = rnn(x)
        return self.head(x)

    def export(self) -> ParameterSet:
        layers = [("embed", self.embed.weight)]
        for i, rnn in enumerate(self.rnns):
            layers += [(f"block{i}.w_ih", rnn.weight_ih_l0), (f"block{i}.w_hh", rnn.weight_hh_l0),
                       (f"block{i}.b_ih", rnn.bias_ih_l0), (f"block{i}.b_hh", rnn.bias_hh_l0)]
        layers += [("head.w", self.head.weight), ("head.b", self.head.bias)]
        return ParameterSet([(n, t.detach().numpy().astype(np.float32)) for n, t in layers])


def make_batch(pairs, batch: int, p_wordy: float, rng: random.Random):
    seqs, starts = [], []
    for q, a in rng.choices(pairs, k=batch):
        prompt = encode(format_prompt(q))
        reply = encode(wordy(a) if rng.random() < p_wordy else a) + [EOS]
        seqs.append(prompt + reply)
        starts.append(len(prompt))
    L = max(len(s) for s in seqs)
    x = torch.zeros(batch, L - 1, dtype=torch.long)
    y = torch.full((batch, L - 1), -100, dtype=torch.long)
    for b, (s, st) in enumerate(zip(seqs, starts)):
        x[b, :len(s) - 1] = torch.tensor(s[:-1])
        tgt = torch.tensor(s[1:])
        tgt[:st - 1] = -100                    # loss on the reply only
        y[b, :len(s) - 1] = tgt
    return x, y


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--corpus", type=Path, default=CORPUS)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--wordy", type=float, default=0.6)
    ap.add_argument("--hidden", type=int, default=128)
    ap.add_argument("--embed", type=int, default=128)
    ap.add_argument("--blocks", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    torch.manual_seed(args.seed)
    rng = random.Random(args.seed)
    pairs = read_corpus(args.corpus)
    net = Net(len(VOCAB), args.embed, args.hidden, args.blocks)
    opt = torch.optim.Adam(net.parameters(), lr=args.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, args.steps)
    lossf = nn.CrossEntropyLoss(ignore_index=-100)
    for step in range(1, args.steps + 1):
        x, y = make_batch(pairs, args.batch, args.wordy, rng)
        loss = lossf(net(x).reshape(-1, len(VOCAB)), y.reshape(-1))
        opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(net.parameters(), 1.0)
        opt.step()
        sched.step()
        if step % 250 == 0:
            log.info("step %d loss %.4f", step, loss.item())

    params = net.export()
    model = TinyLm(params)
    for q, a in pairs[:10]:
        log.info("%-60s -> %r (short %r)", q, model.respond([q], 32)[0], a)
    digest = params.save(args.out)
    log.info("wrote %s (%d parameters, sha256 %s)", args.out, params.size, digest)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
