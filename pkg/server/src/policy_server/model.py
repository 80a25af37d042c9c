"""A small character-level language model with per-token log probabilities.

Big enough to learn from advantage-weighted updates, small enough to run
on any CPU. Characters are the tokens, so the tokens array of a sample
always aligns 1:1 with its logprobs array.
"""
from __future__ import annotations

import math
import threading

import torch
import torch.nn as nn
import torch.nn.functional as F

PRINTABLE = [chr(c) for c in range(32, 127)] + ["\n"]
BOS, EOS, UNK = 0, 1, 2
VOCAB = ["<bos>", "<eos>", "<unk>"] + PRINTABLE
CHAR_TO_ID = {ch: i + 3 for i, ch in enumerate(PRINTABLE)}


def encode(text: str) -> list[int]:
    return [CHAR_TO_ID.get(ch, UNK) for ch in text]


class CharLM(nn.Module):
    def __init__(self, embed_dim: int = 24, hidden_dim: int = 48, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.embed = nn.Embedding(len(VOCAB), embed_dim)
        self.rnn = nn.GRU(embed_dim, hidden_dim, batch_first=True)
        self.head = nn.Linear(hidden_dim, len(VOCAB))

    def forward(self, ids: torch.Tensor, hidden: torch.Tensor | None = None):
        x = self.embed(ids)
        out, hidden = self.rnn(x, hidden)
        return self.head(out), hidden


class PolicyModel:
    """Thread-safe wrapper: sampling, sequence scoring, and one-step
    advantage-weighted updates. All model access is serialized, which keeps
    the optimizer step path single-file as required."""

    def __init__(
        self,
        model_id: str = "tiny-char-lm",
        device: str = "cpu",
        max_context: int = 2048,
        seed: int = 0,
        learning_rate: float = 1e-3,
    ):
        self.model_id = model_id
        self.device = torch.device(device)
        self.max_context = max_context
        self.lm = CharLM(seed=seed).to(self.device)
        self.opt = torch.optim.Adam(self.lm.parameters(), lr=learning_rate)
        self.lock = threading.Lock()
        self._sample_rng = torch.Generator(device="cpu")
        self._sample_rng.manual_seed(seed)

    def _context_hidden(self, context: str) -> torch.Tensor:
        ids = torch.tensor([[BOS] + encode(context)], device=self.device)
        _, hidden = self.lm(ids)
        return hidden

    @torch.no_grad()
    def sample(self, context: str, num_samples: int, temperature: float, max_tokens: int):
        """num_samples continuations with per-character log probabilities
        computed under the temperature-scaled sampling distribution."""
        temperature = max(temperature, 1e-4)
        samples = []
        with self.lock:
            hidden0 = self._context_hidden(context)
            for _ in range(num_samples):
                hidden = hidden0.clone()
                token = torch.tensor([[encode(context)[-1] if context else BOS]], device=self.device)
                chars: list[str] = []
                logprobs: list[float] = []
                for _ in range(max_tokens):
                    logits, hidden = self.lm(token, hidden)
                    logits = logits[0, -1] / temperature
                    logits[BOS] = -math.inf  # never emit the BOS marker
                    logp = F.log_softmax(logits, dim=-1)
                    idx = int(torch.multinomial(logp.exp().cpu(), 1, generator=self._sample_rng))
                    lp = float(logp[idx].clamp(max=0.0))
                    if idx == EOS:
                        break
                    chars.append(VOCAB[idx])
                    logprobs.append(lp)
                    token = torch.tensor([[idx]], device=self.device)
                if not chars:  # guarantee non-empty, aligned arrays
                    chars, logprobs = ["\n"], [0.0]
                samples.append({"text": "".join(chars), "tokens": chars, "logprobs": logprobs})
        return samples

    def sequence_logprob(self, context: str, completion: str) -> float:
        """log P(completion | context) under the current parameters."""
        with self.lock:
            return float(self._sequence_logprob_unlocked(context, completion).detach())

    def _sequence_logprob_unlocked(self, context: str, completion: str) -> torch.Tensor:
        ctx_ids = [BOS] + encode(context)
        comp_ids = encode(completion)
        ids = torch.tensor([ctx_ids + comp_ids], device=self.device)
        logits, _ = self.lm(ids)
        logp = F.log_softmax(logits[0], dim=-1)
        total = logp.new_zeros(())
        offset = len(ctx_ids)
        for i, target in enumerate(comp_ids):
            total = total + logp[offset + i - 1, target]
        return total

    def update(self, items: list[dict], learning_rate: float) -> float:
        """One advantage-weighted surrogate step: the loss is the negative
        mean of advantage * log-likelihood; advantages arrive precomputed."""
        with self.lock:
            for group in self.opt.param_groups:
                group["lr"] = learning_rate
            losses = []
            for item in items:
                logprob = self._sequence_logprob_unlocked(item["context"], item["completion"])
                losses.append(-item["advantage"] * logprob)
            loss = torch.stack(losses).mean()
            self.opt.zero_grad()
            loss.backward()
            self.opt.step()
            return float(loss.detach())
