"""Operator commands: train, sample, eval, schedule-export, roundtrip-check.

One executable, five subcommands, one flag surface. Configuration resolves
in three layers: command-line flags override config-file entries
(``key = value`` lines), which override the built-in presets.

The molecule side of every run is the serialized triplet stream; the text
side is the normalized caption token stream. For s2g the captions condition
triplet generation, for g2s the triplets condition caption generation. The
--tokenizer choice matters only for the g2s conditioning stream: the ais
kind annotates each atom mention with its graph context code, while regex
and atom_level leave mentions bare (those two differ only on ring/branch
syntax, which the triplet stream does not contain).
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import torch

from . import chem, data, schedule, tokenization, triplets
from .denoiser import (
    Denoiser,
    DenoiserConfig,
    apply_gradients,
    load_checkpoint,
    make_optimizer,
    save_checkpoint,
)
from .diffusion import DiffusionConfig, alpha_bar_tensor, reverse_sample, training_loss
from .errors import BadParams, FormatError, TadiffError
from .metrics import evaluation_report
from .tokenization import EOS_ID, PAD_ID, BOS_ID, Vocab, build_vocab

DIRECTIONS = ("s2g", "g2s")
SCHEDULE_KINDS = ("uniform_sqrt", "token_aware")
MAPPINGS = ("linear", "cosine")
SPLITS = ("train", "valid", "test")

LOG_EVERY = 10
CHECKPOINT_EVERY = 1000
TARGET_LEN_CAP = 256

DEFAULT_OUT = {
    "train": "loss_log.csv",
    "sample": "predictions.tsv",
    "eval": "metrics.json",
    "schedule-export": "schedule.csv",
}


@dataclass(frozen=True)
class RunConfig:
    """Everything one command needs; unset lr falls back to the preset."""

    direction: str = "s2g"
    schedule: str = "token_aware"
    mapping: str = "linear"
    tokenizer: str = "ais"
    T: int = 2000
    steps: int = 1000
    batch: int = 64
    lr: float | None = None
    K: int = 500
    seed: int = 0
    stride: int = 1
    split: str = "test"
    corpus: str | None = None
    checkpoint: str | None = None
    pred: str | None = None
    out: str | None = None

    def validate(self) -> None:
        if self.direction not in DIRECTIONS:
            raise BadParams(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.schedule not in SCHEDULE_KINDS:
            raise BadParams(f"schedule must be one of {SCHEDULE_KINDS}, got {self.schedule!r}")
        if self.mapping not in MAPPINGS:
            raise BadParams(f"mapping must be one of {MAPPINGS}, got {self.mapping!r}")
        if self.tokenizer not in tokenization.TOKENIZER_KINDS:
            raise BadParams(
                f"tokenizer must be one of {tokenization.TOKENIZER_KINDS}, got {self.tokenizer!r}"
            )
        if self.split not in SPLITS:
            raise BadParams(f"split must be one of {SPLITS}, got {self.split!r}")
        for name in ("T", "steps", "batch", "K", "stride"):
            if getattr(self, name) < 1:
                raise BadParams(f"{name} must be positive, got {getattr(self, name)}")
        if self.T < 2:
            raise BadParams(f"T must be at least 2, got {self.T}")
        if self.lr is not None and self.lr <= 0:
            raise BadParams(f"lr must be positive, got {self.lr}")

    @property
    def learning_rate(self) -> float:
        if self.lr is not None:
            return self.lr
        return 5e-5 if self.direction == "s2g" else 1e-4

    def corpus_path(self) -> Path:
        if self.corpus is not None:
            return Path(self.corpus)
        return data.bundled_corpus_path()


_INT_FIELDS = frozenset({"T", "steps", "batch", "K", "seed", "stride"})
_FLOAT_FIELDS = frozenset({"lr"})
_CONFIG_FIELDS = {f.name for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    if key in _INT_FIELDS:
        try:
            return int(raw)
        except ValueError:
            raise BadParams(f"config key {key} needs an integer, got {raw!r}") from None
    if key in _FLOAT_FIELDS:
        try:
            return float(raw)
        except ValueError:
            raise BadParams(f"config key {key} needs a number, got {raw!r}") from None
    return raw


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; blank lines and # comments are skipped."""
    path = Path(path)
    if not path.exists():
        raise BadParams(f"no config file at {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise BadParams(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _CONFIG_FIELDS:
            raise BadParams(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, raw.strip())
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Presets, then config-file entries, then explicit flags."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = replace(cfg, **read_config_file(args.config))
    overrides = {
        name: getattr(args, name)
        for name in _CONFIG_FIELDS
        if getattr(args, name, None) is not None
    }
    cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


# -- token streams -----------------------------------------------------------


def caption_tokens(record: data.PairRecord) -> list[str]:
    return tokenization.tokenize_text(record.caption)


def molecule_tokens(record: data.PairRecord, kind: str) -> list[str]:
    """Serialized triplet stream; the ais kind annotates atom mentions."""
    graph = chem.parse_smiles(record.smiles)
    stream = triplets.triplets_to_token_strings(triplets.graph_to_triplets(graph))
    if kind != "ais":
        return stream
    return _annotate_mentions(stream, graph)


def _annotate_mentions(stream: list[str], graph: chem.MolGraph) -> list[str]:
    # same context code the ais tokenizer emits: aromatic / ring / charge
    _, emission = chem.canonical_form(graph)
    in_ring = chem.ring_atoms(graph)

    def code(position: int) -> str:
        atom_id = emission[position - 1]
        atom = graph.atoms[atom_id]
        return "{}{}{:+d}".format(
            "a" if atom.aromatic else "n",
            "r" if atom_id in in_ring else "c",
            atom.charge,
        )

    out = list(stream)
    for k, token in enumerate(stream):
        if k and stream[k - 1] in (triplets.HEAD, triplets.TAIL):
            position = int(token.rsplit("_", 1)[1])
            out[k] = f"{token};{code(position)}"
    return out


def stream_pair(record: data.PairRecord, direction: str, kind: str):
    """(condition tokens, target tokens) for one record."""
    if direction == "s2g":
        return caption_tokens(record), triplets.smiles_to_triplet_tokens(record.smiles)
    return molecule_tokens(record, kind), caption_tokens(record)


def encode_targets(token_lists, vocab: Vocab, n_positions: int) -> torch.Tensor:
    rows = []
    for tokens in token_lists:
        ids = list(vocab.encode(tokens).ids) + [EOS_ID]
        if len(ids) > n_positions:
            raise BadParams(
                f"target of length {len(ids)} exceeds the {n_positions} slots"
            )
        rows.append(ids + [PAD_ID] * (n_positions - len(ids)))
    return torch.tensor(rows, dtype=torch.long)


def encode_conditions(token_lists, vocab: Vocab, cond_positions: int) -> torch.Tensor:
    rows = []
    for tokens in token_lists:
        ids = ([BOS_ID] + list(vocab.encode(tokens).ids))[:cond_positions]
        rows.append(ids + [PAD_ID] * (cond_positions - len(ids)))
    return torch.tensor(rows, dtype=torch.long)


# -- corpus pipeline ---------------------------------------------------------


@dataclass
class Pipeline:
    """Splits, vocabularies and position counts shared by the commands."""

    train: list
    valid: list
    test: list
    target_vocab: Vocab
    cond_vocab: Vocab
    n_positions: int
    cond_positions: int
    train_pairs: list
    skipped_long: int

    def records(self, split_name: str) -> list:
        return {"train": self.train, "valid": self.valid, "test": self.test}[split_name]

    def vocab_sha(self) -> dict:
        return {
            "target": self.target_vocab.sha256(),
            "condition": self.cond_vocab.sha256(),
        }


def build_pipeline(cfg: RunConfig) -> Pipeline:
    load = data.load_corpus(cfg.corpus_path())
    if not load.records:
        raise FormatError(f"{cfg.corpus_path()}: no usable records")
    train, valid, test = data.split(load.records, seed=cfg.seed)
    if not train:
        raise BadParams(f"train split is empty ({len(load.records)} records total)")

    pairs = []
    skipped = 0
    for record in train:
        cond, target = stream_pair(record, cfg.direction, cfg.tokenizer)
        if len(target) + 1 > TARGET_LEN_CAP:
            skipped += 1
            continue
        pairs.append((cond, target))
    if not pairs:
        raise BadParams("every training target exceeds the length cap")

    target_vocab = build_vocab([target for _, target in pairs])
    cond_vocab = build_vocab([cond for cond, _ in pairs])
    n_positions = max(len(target) for _, target in pairs) + 1
    cond_positions = max(len(cond) for cond, _ in pairs) + 1
    return Pipeline(
        train=train,
        valid=valid,
        test=test,
        target_vocab=target_vocab,
        cond_vocab=cond_vocab,
        n_positions=n_positions,
        cond_positions=cond_positions,
        train_pairs=pairs,
        skipped_long=skipped,
    )


def _build_model(cfg: RunConfig, pipe: Pipeline) -> Denoiser:
    model_cfg = DenoiserConfig(
        target_vocab=len(pipe.target_vocab),
        cond_vocab=len(pipe.cond_vocab),
        n_positions=pipe.n_positions,
        cond_positions=pipe.cond_positions,
        T=cfg.T,
    )
    return Denoiser(model_cfg, seed=cfg.seed)


def _check_vocab_sha(manifest: dict, pipe: Pipeline, cfg: RunConfig) -> None:
    want = pipe.vocab_sha()
    got = manifest.get("vocab_sha") or {}
    if got != want:
        raise FormatError(
            f"{cfg.checkpoint}: vocabulary mismatch; the checkpoint was trained "
            "on a different corpus, direction, tokenizer or seed"
        )


# -- commands ----------------------------------------------------------------


def train_command(cfg: RunConfig, *, profile: schedule.DifficultyProfile | None = None) -> int:
    """Fit a denoiser and write the loss log; optionally save checkpoints.

    The profile parameter exists for tests that need to pin the difficulty
    statistics feeding the token-aware rebuilds.
    """
    pipe = build_pipeline(cfg)
    if pipe.skipped_long:
        print(f"skipped {pipe.skipped_long} over-long training records", file=sys.stderr)
    model = _build_model(cfg, pipe)
    optimizer = make_optimizer(model, cfg.learning_rate)

    baseline = schedule.sqrt_schedule(cfg.T)
    sched = schedule.uniform_schedule(baseline, pipe.n_positions)
    alpha = alpha_bar_tensor(sched)
    if profile is None:
        profile = schedule.DifficultyProfile(pipe.n_positions, cfg.T)

    targets_all = encode_targets(
        [target for _, target in pipe.train_pairs], pipe.target_vocab, pipe.n_positions
    )
    conds_all = encode_conditions(
        [cond for cond, _ in pipe.train_pairs], pipe.cond_vocab, pipe.cond_positions
    )

    generator = torch.Generator().manual_seed(cfg.seed)
    order_rng = random.Random(cfg.seed)
    indices = list(range(len(pipe.train_pairs)))

    def index_batches():
        while True:
            yield from data.batches(indices, cfg.batch, rng=order_rng)

    log_rows = ["step,total,denoising,consistency,rounding"]
    stream = index_batches()
    last = None
    for step in range(1, cfg.steps + 1):
        batch = torch.tensor(next(stream), dtype=torch.long)
        parts = training_loss(
            model,
            targets_all.index_select(0, batch),
            conds_all.index_select(0, batch),
            alpha,
            generator=generator,
        )
        apply_gradients(parts.total, model, optimizer)
        last = parts

        if cfg.schedule == "token_aware":
            schedule.estimate_difficulty(parts.profile_batches(), profile)
            if step % cfg.K == 0 and profile.observed().any():
                sched = schedule.build_token_schedule(profile, baseline, mapping=cfg.mapping)
                alpha = alpha_bar_tensor(sched)

        if step % LOG_EVERY == 0 or step == cfg.steps:
            values = (parts.total, parts.denoising, parts.consistency, parts.rounding)
            log_rows.append(
                f"{step}," + ",".join(repr(v.item()) for v in values)
            )
        if cfg.checkpoint and (step % CHECKPOINT_EVERY == 0 or step == cfg.steps):
            save_checkpoint(model, cfg.checkpoint, step=step, vocab_sha=pipe.vocab_sha())

    out_path = Path(cfg.out or DEFAULT_OUT["train"])
    out_path.write_text("\n".join(log_rows) + "\n", encoding="utf-8")
    print(
        f"trained {cfg.steps} steps ({cfg.direction}, {cfg.schedule}); "
        f"final loss {last.total.item():.6f}; log at {out_path}"
    )
    return 0


def _decode_prediction(ids: list[int], vocab: Vocab, direction: str) -> str:
    tokens = []
    for idx in ids:
        if idx in (EOS_ID, PAD_ID):
            break
        tokens.append(vocab.token_of(idx))
    if direction == "g2s":
        return tokenization.detokenize_text(tokens)
    try:
        return triplets.triplet_tokens_to_smiles(tokens)
    except TadiffError:
        return ""


def _estimate_profile(model: Denoiser, pipe: Pipeline, cfg: RunConfig) -> schedule.DifficultyProfile:
    """One no-optimizer pass over the train split to refill the side channel."""
    profile = schedule.DifficultyProfile(model.cfg.n_positions, model.cfg.T)
    baseline = schedule.sqrt_schedule(model.cfg.T)
    alpha = alpha_bar_tensor(schedule.uniform_schedule(baseline, model.cfg.n_positions))
    targets_all = encode_targets(
        [target for _, target in pipe.train_pairs], pipe.target_vocab, model.cfg.n_positions
    )
    conds_all = encode_conditions(
        [cond for cond, _ in pipe.train_pairs], pipe.cond_vocab, model.cfg.cond_positions
    )
    generator = torch.Generator().manual_seed(cfg.seed)
    with torch.no_grad():
        for rows in data.batches(list(range(targets_all.shape[0])), cfg.batch):
            batch = torch.tensor(rows, dtype=torch.long)
            parts = training_loss(
                model,
                targets_all.index_select(0, batch),
                conds_all.index_select(0, batch),
                alpha,
                generator=generator,
            )
            schedule.estimate_difficulty(parts.profile_batches(), profile)
    return profile


def _sampling_schedule(model: Denoiser, pipe: Pipeline, cfg: RunConfig) -> schedule.TokenSchedule:
    baseline = schedule.sqrt_schedule(model.cfg.T)
    if cfg.schedule != "token_aware":
        return schedule.uniform_schedule(baseline, model.cfg.n_positions)
    # the difficulty profile is not part of the checkpoint format, so it is
    # re-estimated from the trained model before sampling
    profile = _estimate_profile(model, pipe, cfg)
    if not profile.observed().any():
        return schedule.uniform_schedule(baseline, model.cfg.n_positions)
    return schedule.build_token_schedule(profile, baseline, mapping=cfg.mapping)


def sample_command(cfg: RunConfig) -> int:
    """Generate one prediction per record of the chosen split."""
    if not cfg.checkpoint:
        raise BadParams("sample needs --checkpoint")
    model, manifest = load_checkpoint(cfg.checkpoint)
    pipe = build_pipeline(cfg)
    _check_vocab_sha(manifest, pipe, cfg)

    records = pipe.records(cfg.split)
    if not records:
        raise BadParams(f"split {cfg.split!r} is empty")
    alpha = alpha_bar_tensor(_sampling_schedule(model, pipe, cfg))
    run_cfg = DiffusionConfig(
        T=model.cfg.T,
        embed_dim=model.cfg.embed_dim,
        n_positions=model.cfg.n_positions,
        stride=cfg.stride,
        seed=cfg.seed,
    )
    generator = torch.Generator().manual_seed(cfg.seed)

    rows = []
    for group in data.batches(records, cfg.batch):
        conds = encode_conditions(
            [stream_pair(r, cfg.direction, cfg.tokenizer)[0] for r in group],
            pipe.cond_vocab,
            model.cfg.cond_positions,
        )
        result = reverse_sample(model, conds, alpha, run_cfg, generator=generator)
        for record, ids in zip(group, result.tokens.tolist()):
            source = record.caption if cfg.direction == "s2g" else record.smiles
            rows.append(f"{source}\t{_decode_prediction(ids, pipe.target_vocab, cfg.direction)}")

    out_path = Path(cfg.out or DEFAULT_OUT["sample"])
    out_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"sampled {len(rows)} predictions ({cfg.direction}, split {cfg.split}) to {out_path}")
    return 0


def eval_command(cfg: RunConfig) -> int:
    """Score a predictions file against the corpus and write the report."""
    if not cfg.pred:
        raise BadParams("eval needs --pred with a predictions TSV")
    pred_path = Path(cfg.pred)
    if not pred_path.exists():
        raise BadParams(f"no predictions file at {pred_path}")

    load = data.load_corpus(cfg.corpus_path())
    reference = {}
    for record in load.records:
        key = record.caption if cfg.direction == "s2g" else record.smiles
        reference.setdefault(key, record.smiles if cfg.direction == "s2g" else record.caption)

    preds, refs = [], []
    missing = 0
    for lineno, line in enumerate(pred_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) != 2:
            raise FormatError(f"{pred_path}:{lineno}: expected two tab-separated columns")
        source, prediction = cells
        ref = reference.get(source)
        if ref is None:
            missing += 1
            continue
        preds.append(prediction)
        refs.append(ref)
    if missing:
        print(f"{missing} prediction inputs not found in the corpus", file=sys.stderr)

    report = evaluation_report(preds, refs, direction=cfg.direction)
    out_path = Path(cfg.out or DEFAULT_OUT["eval"])
    out_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"scored {report['n_examples']} predictions ({cfg.direction}) to {out_path}")
    return 0


def schedule_export_command(cfg: RunConfig) -> int:
    """Write the per-position alpha-bar table the configuration implies."""
    if cfg.checkpoint:
        model, manifest = load_checkpoint(cfg.checkpoint)
        pipe = build_pipeline(cfg)
        _check_vocab_sha(manifest, pipe, cfg)
        sched = _sampling_schedule(model, pipe, cfg)
    else:
        if cfg.schedule == "token_aware":
            print(
                "no checkpoint given: exporting the uniform baseline "
                "(difficulty statistics need a trained model)",
                file=sys.stderr,
            )
        pipe = build_pipeline(cfg)
        sched = schedule.uniform_schedule(schedule.sqrt_schedule(cfg.T), pipe.n_positions)

    out_path = Path(cfg.out or DEFAULT_OUT["schedule-export"])
    schedule.write_schedule_csv(sched, out_path)
    print(
        f"wrote {sched.alpha_bar.shape[0]} x {sched.alpha_bar.shape[1]} "
        f"schedule ({sched.kind}) to {out_path}"
    )
    return 0


def roundtrip_command(cfg: RunConfig) -> int:
    """Corpus-wide serialization checks; nonzero exit if anything fails."""
    load = data.load_corpus(cfg.corpus_path())
    if not load.records:
        raise FormatError(f"{cfg.corpus_path()}: no usable records")

    trips_ok = 0
    segments_ok = 0
    for record in load.records:
        try:
            stream = triplets.smiles_to_triplet_tokens(record.smiles)
            trips_ok += triplets.triplet_tokens_to_smiles(stream) == record.smiles
        except TadiffError:
            pass
        try:
            tokens = tokenization.tokenize(record.smiles, cfg.tokenizer)
            segments_ok += tokenization.join_tokens(tokens, cfg.tokenizer) == record.smiles
        except TadiffError:
            pass

    total = len(load.records)
    print(f"round-trips: {trips_ok}/{total} passed")
    print(f"segmentation ({cfg.tokenizer}): {segments_ok}/{total} lossless")
    return 0 if trips_ok == total and segments_ok == total else 1


COMMANDS = {
    "train": train_command,
    "sample": sample_command,
    "eval": eval_command,
    "schedule-export": schedule_export_command,
    "roundtrip-check": roundtrip_command,
}


def _add_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--direction", choices=DIRECTIONS, help="s2g: caption -> molecule; g2s: molecule -> caption")
    parser.add_argument("--schedule", choices=SCHEDULE_KINDS, help="noise schedule kind")
    parser.add_argument("--mapping", choices=MAPPINGS, help="difficulty-to-alpha mapping for token_aware")
    parser.add_argument("--tokenizer", choices=tokenization.TOKENIZER_KINDS, help="molecule-side tokenizer kind")
    parser.add_argument("--T", type=int, help="diffusion timesteps")
    parser.add_argument("--steps", type=int, help="training steps")
    parser.add_argument("--batch", type=int, help="batch size")
    parser.add_argument("--lr", type=float, help="learning rate (default depends on direction)")
    parser.add_argument("--K", type=int, help="steps between token-aware schedule rebuilds")
    parser.add_argument("--seed", type=int, help="seed for every random choice")
    parser.add_argument("--stride", type=int, help="sampling timestep stride")
    parser.add_argument("--split", choices=SPLITS, help="corpus part sample reads (default test)")
    parser.add_argument("--corpus", help="molecule/caption TSV (default: bundled corpus)")
    parser.add_argument("--checkpoint", help="checkpoint path to write (train) or read (sample)")
    parser.add_argument("--pred", help="predictions TSV for eval")
    parser.add_argument("--out", help="artifact output path")
    parser.add_argument("--config", help="key = value config file, overridden by flags")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tadiff",
        description="Bidirectional molecule/caption diffusion with a token-aware noise schedule.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train": "fit a denoiser and write the loss log",
        "sample": "generate predictions from a checkpoint",
        "eval": "score a predictions file",
        "schedule-export": "write the per-position alpha-bar table as CSV",
        "roundtrip-check": "verify serialization round-trips over a corpus",
    }
    for name, text in helps.items():
        _add_flags(subparsers.add_parser(name, help=text))

    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except TadiffError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
