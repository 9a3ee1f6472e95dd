"""Four-stage training orchestration, checkpointing, and evaluation entry points.

Stages run in a fixed order: token-level pretraining and pair SFT (next-token
cross-entropy under a causal mask), weakly-supervised contrastive training
(in-batch InfoNCE under the scheduled mask, clock t = stage step out of
steps - 1 so the first step is exactly causal and the last exactly
bidirectional), and supervised multi-task fine-tuning (round-robin over
retrieval / cross-lingual / classification triplets with optional dynamic
hard negative mining, plus CoSENT on similarity pairs, all under the
bidirectional mask, optionally averaged over nested embedding dims).

Every batch is derived from a per-step seeded RNG, so a mid-stage resume
reproduces the uninterrupted run bit for bit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import load_checkpoint, require_matching_config, save_checkpoint
from .data import Pair, ScoredPair, Triplet, read_dataset, read_text_dataset
from .encoder import Encoder, EncoderConfig, truncate_normalize
from .evaluation import exact_search, ndcg_at_10, recall_at_k, spearman
from .losses import ContrastiveBatch, StsBatch, cosent, info_nce_with_scores, next_token_ce
from .masks import AttentionMask, ScheduleState, bidirectional_mask, build_soft_mask, causal_mask
from .mining import MiningState
from .optim import AdamW, AdamWConfig, warmup_lr
from .tokenizer import PAD_ID, Tokenizer

logger = logging.getLogger(__name__)

STAGE_KINDS = ("lm-pretrain", "pair-sft", "weak-contrastive", "supervised")
SUPERVISED_TASKS = ("retrieval", "clr", "classification", "sts")


@dataclass
class StageConfig:
    kind: str
    steps: int
    batch_size: int = 32
    lr: float = 1e-3
    mask_policy: str = ""            # defaults per kind; "soft" only in weak-contrastive
    mask_schedule: str = "linear"
    mask_l: Optional[int] = None
    temperature: float = 0.05
    cosent_tau: float = 0.05
    loss_mix: dict = field(default_factory=dict)
    negatives_per_query: int = 7
    mrl: bool = False
    dhnm: bool = False
    dhnm_mode: str = "absolute"
    seed: int = 0
    warmup_frac: Optional[float] = None   # 0.05 for lm-pretrain, 0.02 otherwise
    weight_decay: float = 0.001
    triplet_batch_size: int = 4
    sts_batch_size: int = 32
    window_len: int = 16
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.kind not in STAGE_KINDS:
            raise ValueError(f"unknown stage kind {self.kind!r}; expected one of {STAGE_KINDS}")
        if self.steps < 1:
            raise ValueError("stage needs at least one step")
        if not self.mask_policy:
            self.mask_policy = {"lm-pretrain": "causal", "pair-sft": "causal",
                                "weak-contrastive": "soft", "supervised": "bidirectional"}[self.kind]
        allowed = {"lm-pretrain": ("causal",), "pair-sft": ("causal",),
                   "weak-contrastive": ("soft", "bidirectional"),
                   "supervised": ("bidirectional",)}[self.kind]
        if self.mask_policy not in allowed:
            raise ValueError(f"mask policy {self.mask_policy!r} not allowed in {self.kind} "
                             f"(allowed: {allowed})")
        if self.dhnm and self.kind != "supervised":
            raise ValueError("dynamic hard negative mining is only allowed in the supervised stage")
        if self.warmup_frac is None:
            self.warmup_frac = 0.05 if self.kind == "lm-pretrain" else 0.02

    @classmethod
    def from_dict(cls, d: dict) -> "StageConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown stage options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunManifest:
    encoder: EncoderConfig
    stages: list[StageConfig]
    data: dict
    output_dir: str
    seed: int = 0

    def __post_init__(self):
        order = [STAGE_KINDS.index(s.kind) for s in self.stages]
        if not self.stages:
            raise ValueError("manifest needs at least one stage")
        if any(a >= b for a, b in zip(order, order[1:])):
            raise ValueError("stages must appear in pipeline order, each kind at most once")
        for s in self.stages:
            key = s.kind
            if key not in self.data:
                raise ValueError(f"manifest is missing data for stage {key!r}")
            if key == "supervised":
                if not isinstance(self.data[key], dict) or not self.data[key]:
                    raise ValueError("supervised data must map task names to dataset paths")
                bad = set(self.data[key]) - set(SUPERVISED_TASKS)
                if bad:
                    raise ValueError(f"unknown supervised tasks: {sorted(bad)}")

    @classmethod
    def from_yaml(cls, path) -> "RunManifest":
        import yaml
        path = Path(path)
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        base = path.parent

        def resolve(p):
            p = Path(p)
            return str(p if p.is_absolute() else base / p)

        data = {}
        for k, v in raw.get("data", {}).items():
            data[k] = {t: resolve(p) for t, p in v.items()} if isinstance(v, dict) else resolve(v)
        out = raw.get("output_dir", "runs/out")
        return cls(
            encoder=EncoderConfig.from_dict(raw.get("encoder", {})),
            stages=[StageConfig.from_dict(s) for s in raw.get("stages", [])],
            data=data,
            output_dir=str(Path(out) if Path(out).is_absolute() else base / out),
            seed=int(raw.get("seed", 0)),
        )

    def to_yaml(self, path):
        import yaml
        doc = {
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "encoder": self.encoder.to_dict(),
            "stages": [asdict(s) for s in self.stages],
            "data": self.data,
        }
        with open(path, "w") as fh:
            yaml.safe_dump(doc, fh, sort_keys=True)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def batch_ids(tokenizer: Tokenizer, texts: list[str]) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Tokenize and right-pad to the batch maximum; lengths omitted when uniform."""
    seqs = [tokenizer.encode(t) for t in texts]
    lens = np.array([len(s) for s in seqs], dtype=np.intp)
    if lens.min() < 1:
        raise ValueError("cannot encode an empty text")
    width = int(lens.max())
    ids = np.full((len(seqs), width), PAD_ID, dtype=np.intp)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
    return ids, (None if lens.min() == width else lens)


def embed_texts(encoder: Encoder, tokenizer: Tokenizer, texts: list[str],
                chunk: int = 128) -> np.ndarray:
    """(N, hidden) unit-norm embeddings under the bidirectional mask; no gradients kept."""
    out = []
    for i in range(0, len(texts), chunk):
        ids, lengths = batch_ids(tokenizer, texts[i:i + chunk])
        mask = bidirectional_mask(ids.shape[1])
        out.append(encoder.embed_batch(ids, mask, lengths).data)
    return np.concatenate(out, axis=0)


def _stage_mask(cfg: StageConfig, step: int, n: int) -> AttentionMask:
    if cfg.mask_policy == "causal":
        return causal_mask(n)
    if cfg.mask_policy == "bidirectional":
        return bidirectional_mask(n)
    # scheduled: t counts this stage's steps; the final step reaches alpha = 1
    if cfg.steps == 1:
        return bidirectional_mask(n)
    state = ScheduleState(kind=cfg.mask_schedule, t=step, tau_steps=cfg.steps - 1)
    return build_soft_mask(state, n, cfg.mask_l)


def _step_rng(manifest_seed: int, stage_seed: int, stage_index: int, step: int) -> np.random.Generator:
    return np.random.default_rng([manifest_seed, stage_seed, stage_index, step])


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

class Trainer:
    def __init__(self, manifest: RunManifest):
        self.manifest = manifest
        self.out_dir = Path(manifest.output_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.tokenizer = self._build_tokenizer()

    # -- data ----------------------------------------------------------

    def _dataset_paths(self) -> list[str]:
        paths = []
        for v in self.manifest.data.values():
            if isinstance(v, dict):
                paths.extend(v.values())
            else:
                paths.append(v)
        return paths

    def _build_tokenizer(self) -> Tokenizer:
        words: set[str] = set()
        for p in self._dataset_paths():
            with open(p, encoding="utf-8") as fh:
                header = json.loads(fh.readline())
            words.update(header.get("vocab", []))
        return Tokenizer(sorted(words), self.manifest.encoder.vocab_size)

    def _load_stage_data(self, cfg: StageConfig):
        key = cfg.kind
        if key == "lm-pretrain":
            _, texts = read_text_dataset(self.manifest.data[key])
            return self._pack_windows([self.tokenizer.encode(t) for t in texts], cfg.window_len)
        if key == "pair-sft":
            _, examples = read_dataset(self.manifest.data[key])
            seqs = [self.tokenizer.encode(e.query) + self.tokenizer.encode(e.positive)
                    for e in examples]
            return self._pack_windows(seqs, cfg.window_len)
        if key == "weak-contrastive":
            _, examples = read_dataset(self.manifest.data[key])
            return [e for e in examples if isinstance(e, (Pair, Triplet))]
        datasets = {}
        for task in SUPERVISED_TASKS:
            if task in self.manifest.data[key]:
                _, examples = read_dataset(self.manifest.data[key][task])
                datasets[task] = examples
        return datasets

    @staticmethod
    def _pack_windows(seqs: list[list[int]], window_len: int) -> np.ndarray:
        stream = [tok for s in seqs for tok in s]
        span = window_len + 1
        n = len(stream) // span
        if n < 1:
            raise ValueError("not enough tokens to fill a single training window")
        return np.array(stream[:n * span], dtype=np.intp).reshape(n, span)

    # -- main loop -------------------------------------------------------

    def _adopt_checkpoint(self, path) -> tuple[Encoder, dict[str, np.ndarray], dict]:
        config, arrays, extra = load_checkpoint(path)
        require_matching_config(self.manifest.encoder.to_dict(), config, str(path))
        # checkpoint ids keep their meaning; words the checkpoint has not seen
        # are appended and map to still-untrained embedding rows
        ckpt_words = list(extra.get("vocab", []))
        new_words = sorted(set(self.tokenizer.words) - set(ckpt_words))
        self.tokenizer = Tokenizer(ckpt_words + new_words, self.manifest.encoder.vocab_size)
        encoder = Encoder(self.manifest.encoder,
                          params={k.removeprefix("model."): v
                                  for k, v in arrays.items() if k.startswith("model.")})
        return encoder, arrays, extra

    def run(self, resume_from: Optional[str] = None, init_from: Optional[str] = None) -> Path:
        """Execute the manifest.

        ``resume_from`` continues this same manifest from a mid-run
        checkpoint (stage indices must align); ``init_from`` only adopts a
        prior checkpoint's weights and vocabulary and starts the manifest
        from its first stage with a fresh optimizer.
        """
        if resume_from is not None and init_from is not None:
            raise ValueError("resume_from and init_from are mutually exclusive")
        manifest = self.manifest
        resume_stage, resume_step = -1, 0
        opt_arrays: dict[str, np.ndarray] = {}
        opt_step_count = 0
        mining_dict = None

        if resume_from is not None:
            encoder, arrays, extra = self._adopt_checkpoint(resume_from)
            opt_arrays = {k: v for k, v in arrays.items() if k.startswith("opt.")}
            opt_step_count = int(extra["opt_step_count"])
            resume_stage = int(extra["stage_index"])
            resume_step = int(extra["stage_step"])
            mining_dict = extra.get("mining")
        elif init_from is not None:
            encoder, _, _ = self._adopt_checkpoint(init_from)
        else:
            encoder = Encoder(manifest.encoder, seed=manifest.seed)

        last_ckpt = None
        for idx, cfg in enumerate(manifest.stages):
            if idx < resume_stage:
                continue
            start = resume_step if idx == resume_stage else 0
            if start >= cfg.steps:
                continue
            optimizer = AdamW(encoder.params,
                              AdamWConfig(lr=cfg.lr, weight_decay=cfg.weight_decay))
            mining = None
            if idx == resume_stage and opt_arrays:
                optimizer.load_state(opt_arrays, opt_step_count)
                if mining_dict is not None:
                    mining = MiningState.from_dict(mining_dict)
            last_ckpt = self._run_stage(idx, cfg, encoder, optimizer, start, mining)
        if last_ckpt is None:
            raise ValueError("nothing left to run: checkpoint is already past the last stage")
        return last_ckpt

    def _save(self, path: Path, encoder: Encoder, optimizer: AdamW, stage_index: int,
              stage_step: int, mining: Optional[MiningState]):
        arrays = {f"model.{k}": v for k, v in encoder.export_arrays().items()}
        arrays.update(optimizer.export_state())
        extra = {
            "stage_index": stage_index,
            "stage_step": stage_step,
            "opt_step_count": optimizer.step_count,
            "vocab": self.tokenizer.words,
            "manifest_seed": self.manifest.seed,
            "mining": mining.to_dict() if mining is not None else None,
        }
        save_checkpoint(path, self.manifest.encoder.to_dict(), arrays, extra)

    def _run_stage(self, idx: int, cfg: StageConfig, encoder: Encoder,
                   optimizer: AdamW, start_step: int,
                   mining: Optional[MiningState]) -> Path:
        data = self._load_stage_data(cfg)
        metrics_path = self.out_dir / f"stage{idx}-{cfg.kind}.metrics.jsonl"
        mining_path = self.out_dir / f"stage{idx}-mining.jsonl"
        ckpt_path = self.out_dir / f"stage{idx}-{cfg.kind}.ckpt"
        mode = "a" if start_step > 0 and metrics_path.exists() else "w"

        if cfg.kind == "supervised" and cfg.dhnm and mining is None:
            mining = self._init_mining(cfg, encoder, data)

        with open(metrics_path, mode, encoding="utf-8") as metrics_fh, \
                open(mining_path, mode, encoding="utf-8") as mining_fh:
            for step in range(start_step, cfg.steps):
                rng = _step_rng(self.manifest.seed, cfg.seed, idx, step)
                if cfg.kind in ("lm-pretrain", "pair-sft"):
                    loss, task = self._lm_step(cfg, encoder, data, rng), "lm"
                elif cfg.kind == "weak-contrastive":
                    loss, task = self._contrastive_step(cfg, encoder, data, rng, step), "pairs"
                else:
                    loss, task = self._supervised_step(cfg, encoder, data, rng, step,
                                                       mining, mining_fh)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise ArithmeticError(f"non-finite loss at stage {idx} step {step}")
                ag.backward(loss)
                optimizer.step(lr=warmup_lr(cfg.lr, step, cfg.steps, cfg.warmup_frac))
                optimizer.zero_grads()
                if mining is not None:
                    for ev in mining.replace_flagged():
                        mining_fh.write(_dumps({"step": step, "event": "replace",
                                                "query_id": ev.query_id, "slot": ev.slot_index,
                                                "old": ev.old_negative, "new": ev.new_negative,
                                                "exhausted": ev.exhausted}) + "\n")
                metrics_fh.write(_dumps({"stage": idx, "kind": cfg.kind, "step": step,
                                         "task": task, "loss": value,
                                         "lr": warmup_lr(cfg.lr, step, cfg.steps, cfg.warmup_frac)}) + "\n")
                if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0 \
                        and step + 1 < cfg.steps:
                    self._save(self.out_dir / f"stage{idx}-step{step + 1}.ckpt",
                               encoder, optimizer, idx, step + 1, mining)
        self._save(ckpt_path, encoder, optimizer, idx, cfg.steps, mining)
        return ckpt_path

    # -- per-kind steps --------------------------------------------------

    def _lm_step(self, cfg: StageConfig, encoder: Encoder, windows: np.ndarray,
                 rng: np.random.Generator) -> Tensor:
        take = min(cfg.batch_size, windows.shape[0])
        rows = rng.choice(windows.shape[0], size=take, replace=False)
        batch = windows[np.sort(rows)]
        inputs, targets = batch[:, :-1], batch[:, 1:]
        states = encoder.forward_batch(inputs, causal_mask(inputs.shape[1]))
        logits = encoder.lm_logits(states)
        bsz, length, vocab = logits.shape
        flat = ag.reshape(logits, (bsz * length, vocab))
        return next_token_ce(flat, targets.reshape(-1))

    def _contrastive_step(self, cfg: StageConfig, encoder: Encoder, pairs: list,
                          rng: np.random.Generator, step: int) -> Tensor:
        take = min(cfg.batch_size, len(pairs))
        picks = np.sort(rng.choice(len(pairs), size=take, replace=False))
        chosen = [pairs[i] for i in picks]
        q_ids, q_lens = batch_ids(self.tokenizer, [p.query for p in chosen])
        p_ids, p_lens = batch_ids(self.tokenizer, [p.positive for p in chosen])
        q_emb = encoder.embed_batch(q_ids, _stage_mask(cfg, step, q_ids.shape[1]), q_lens)
        p_emb = encoder.embed_batch(p_ids, _stage_mask(cfg, step, p_ids.shape[1]), p_lens)
        loss, _, _ = info_nce_with_scores(
            ContrastiveBatch(q_emb, p_emb, temperature=cfg.temperature))
        return loss

    def _init_mining(self, cfg: StageConfig, encoder: Encoder, datasets: dict) -> MiningState:
        """Rank each query's candidate negatives with the incoming (seed) encoder."""
        mining = MiningState(mode=cfg.dhnm_mode)
        for task in SUPERVISED_TASKS:
            if task == "sts" or task not in datasets:
                continue
            for ex in datasets[task]:
                if not isinstance(ex, Triplet) or not ex.negatives:
                    continue
                qv = embed_texts(encoder, self.tokenizer, [ex.query])[0]
                nv = embed_texts(encoder, self.tokenizer, list(ex.negatives))
                scores = nv @ qv
                order = np.lexsort((np.arange(len(ex.negatives)), -scores))
                ranked = [ex.negatives[i] for i in order]
                k = min(cfg.negatives_per_query, len(ranked))
                mining.register_query(f"{task}:{ex.uid}", ranked[:k], ranked[k:])
        return mining

    def _triplet_negatives(self, cfg: StageConfig, mining: Optional[MiningState],
                           task: str, ex: Triplet) -> list[str]:
        k = cfg.negatives_per_query
        if mining is not None:
            negs = mining.current_negatives(f"{task}:{ex.uid}")
            if negs:
                return negs[:k]
        return list(ex.negatives[:k])

    def _mrl_dims(self, cfg: StageConfig) -> tuple[int, ...]:
        if cfg.mrl:
            return tuple(self.manifest.encoder.mrl_dims)
        return (self.manifest.encoder.hidden_dim,)

    def _supervised_step(self, cfg: StageConfig, encoder: Encoder, datasets: dict,
                         rng: np.random.Generator, step: int,
                         mining: Optional[MiningState], mining_fh) -> tuple[Tensor, str]:
        tasks = [t for t in SUPERVISED_TASKS if t in datasets]
        task = tasks[step % len(tasks)]
        weight = float(cfg.loss_mix.get(task, 1.0))
        if task == "sts":
            loss = self._sts_batch_loss(cfg, encoder, datasets[task], rng)
        else:
            loss = self._triplet_batch_loss(cfg, encoder, datasets[task], rng, step,
                                            task, mining, mining_fh)
        if weight != 1.0:
            loss = ag.scale(loss, weight)
        return loss, task

    def _sts_batch_loss(self, cfg: StageConfig, encoder: Encoder, examples: list,
                        rng: np.random.Generator) -> Tensor:
        take = min(cfg.sts_batch_size, len(examples))
        picks = np.sort(rng.choice(len(examples), size=take, replace=False))
        chosen: list[ScoredPair] = [examples[i] for i in picks]
        a_ids, a_lens = batch_ids(self.tokenizer, [e.text_a for e in chosen])
        b_ids, b_lens = batch_ids(self.tokenizer, [e.text_b for e in chosen])
        mask_a = bidirectional_mask(a_ids.shape[1])
        mask_b = bidirectional_mask(b_ids.shape[1])
        ea = encoder.embed_batch(a_ids, mask_a, a_lens)
        eb = encoder.embed_batch(b_ids, mask_b, b_lens)
        labels = np.array([e.similarity for e in chosen])
        dims = self._mrl_dims(cfg)
        total = None
        for d in dims:
            cos = ag.sum_lastdim(ag.mul(truncate_normalize(ea, d), truncate_normalize(eb, d)))
            term = cosent(StsBatch(cos, labels, tau=cfg.cosent_tau))
            total = term if total is None else ag.add(total, term)
        return ag.scale(total, 1.0 / len(dims))

    def _triplet_batch_loss(self, cfg: StageConfig, encoder: Encoder, examples: list,
                            rng: np.random.Generator, step: int, task: str,
                            mining: Optional[MiningState], mining_fh) -> Tensor:
        take = min(cfg.triplet_batch_size, len(examples))
        picks = np.sort(rng.choice(len(examples), size=take, replace=False))
        chosen: list[Triplet] = [examples[i] for i in picks]
        negatives = [self._triplet_negatives(cfg, mining, task, ex) for ex in chosen]
        k = min(len(n) for n in negatives)
        negatives = [n[:k] for n in negatives]

        q_ids, q_lens = batch_ids(self.tokenizer, [e.query for e in chosen])
        passages = [e.positive for e in chosen] + [n for negs in negatives for n in negs]
        p_ids, p_lens = batch_ids(self.tokenizer, passages)
        mask_q = bidirectional_mask(q_ids.shape[1])
        mask_p = bidirectional_mask(p_ids.shape[1])
        q_emb = encoder.embed_batch(q_ids, mask_q, q_lens)
        all_emb = encoder.embed_batch(p_ids, mask_p, p_lens)
        bsz = len(chosen)
        p_emb = ag.index_select(all_emb, 0, np.arange(bsz))
        n_emb = None
        if k > 0:
            n_emb = ag.reshape(ag.index_select(all_emb, 0, np.arange(bsz, bsz + bsz * k)),
                               (bsz, k, self.manifest.encoder.hidden_dim))

        dims = self._mrl_dims(cfg)
        total = None
        full_neg_scores = None
        for d in sorted(dims, reverse=True):
            qd = truncate_normalize(q_emb, d)
            pd = truncate_normalize(p_emb, d)
            nd = truncate_normalize(n_emb, d) if n_emb is not None else None
            loss_d, _, neg_scores = info_nce_with_scores(
                ContrastiveBatch(qd, pd, nd, temperature=cfg.temperature))
            if d == max(dims):
                full_neg_scores = neg_scores
            total = loss_d if total is None else ag.add(total, loss_d)
        loss = ag.scale(total, 1.0 / len(dims))

        if mining is not None and k > 0:
            scored = [(f"{task}:{ex.uid}", slot, float(full_neg_scores[b, slot]))
                      for b, ex in enumerate(chosen) for slot in range(k)]
            for rec in mining.cache_scores(step, scored):
                mining_fh.write(_dumps(rec) + "\n")
        return loss


def default_toy_manifest(data: dict, output_dir: str, seed: int = 0,
                         encoder: Optional[EncoderConfig] = None) -> RunManifest:
    """Default desk-scale four-stage run: 500/200/500/1000 steps, batch 32
    (triplet batches of 4 and STS batches of 32 in the supervised stage)."""
    return RunManifest(
        encoder=encoder or EncoderConfig(),
        stages=[
            StageConfig(kind="lm-pretrain", steps=500, batch_size=32, lr=2e-3),
            StageConfig(kind="pair-sft", steps=200, batch_size=32, lr=1e-3),
            StageConfig(kind="weak-contrastive", steps=500, batch_size=32, lr=5e-4,
                        mask_policy="soft", mask_schedule="linear"),
            StageConfig(kind="supervised", steps=1000, lr=1e-3, mrl=True, dhnm=True,
                        triplet_batch_size=4, sts_batch_size=32, negatives_per_query=7,
                        checkpoint_every=500),
        ],
        data=data,
        output_dir=output_dir,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# evaluation against a checkpoint
# ---------------------------------------------------------------------------

def load_encoder(ckpt_path) -> tuple[Encoder, Tokenizer, dict]:
    config, arrays, extra = load_checkpoint(ckpt_path)
    cfg = EncoderConfig.from_dict(config)
    encoder = Encoder(cfg, params={k.removeprefix("model."): v
                                   for k, v in arrays.items() if k.startswith("model.")})
    tokenizer = Tokenizer(extra["vocab"], cfg.vocab_size)
    return encoder, tokenizer, extra


def evaluate_retrieval(encoder: Encoder, tokenizer: Tokenizer, examples: list,
                       ks: tuple[int, ...] = (1, 5, 10, 20)) -> dict[str, float]:
    queries, corpus, judgments = [], [], {}
    for i, ex in enumerate(examples):
        qid, did = f"q{i}", f"d{i}"
        queries.append((qid, ex.query))
        corpus.append((did, ex.positive))
        judgments[qid] = {did}
    qv = embed_texts(encoder, tokenizer, [t for _, t in queries])
    cv = embed_texts(encoder, tokenizer, [t for _, t in corpus])
    run = exact_search(qv, [q for q, _ in queries], cv, [d for d, _ in corpus],
                       k=max(max(ks), 10))
    run.judgments = judgments
    metrics = {f"recall@{k}": recall_at_k(run, k) for k in ks}
    metrics["ndcg@10"] = ndcg_at_10(run)
    return metrics


def evaluate_sts(encoder: Encoder, tokenizer: Tokenizer, examples: list) -> dict[str, float]:
    av = embed_texts(encoder, tokenizer, [e.text_a for e in examples])
    bv = embed_texts(encoder, tokenizer, [e.text_b for e in examples])
    cos = (av * bv).sum(axis=-1)
    labels = [e.similarity for e in examples]
    return {"spearman": spearman(cos, labels)}


def evaluate_checkpoint(ckpt_path, dataset_path, ks: tuple[int, ...] = (1, 5, 10, 20)) -> dict[str, float]:
    encoder, tokenizer, _ = load_encoder(ckpt_path)
    header, examples = read_dataset(dataset_path)
    if header["task"] == "sts":
        return evaluate_sts(encoder, tokenizer, examples)
    return evaluate_retrieval(encoder, tokenizer, examples, ks)
