"""Command-line surface tying the pipeline together.

Commands: gen-data, train-ic, train-cda, eval, embed, compare, gradcheck.
Exit codes: 0 success, 1 check/acceptance failure, 2 usage or IO error.
All numeric output uses full decimal precision, and every command is
byte-identical across runs with the same seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .align import CdaConfig, train_cda
from .checks import loss_gradcheck_suite
from .compress import train_ic
from .config import RunConfig
from .data import (
    TripletRecord,
    WorldSpec,
    build_tokenizer,
    generate,
    instruction_ids,
    load_records,
    save_records,
)
from .errors import ArembError
from .metrics import POOLING_MODES, embed, sts_eval
from .model import LmConfig, LmModel, load_checkpoint, save_checkpoint


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_curve(path: Path, rows, header: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(c) if isinstance(c, (int, str)) else _fmt(c) for c in row) + "\n")


def _load_meta(data_path: Path) -> dict | None:
    meta_path = data_path.parent / "meta.json"
    if meta_path.exists():
        with open(meta_path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    return None


def _infer_vocab(records: list[TripletRecord]) -> int:
    top = 0
    for rec in records:
        for seq in [rec.anchor, rec.positive, rec.instr_next, rec.instr_self, *rec.negatives]:
            if seq:
                top = max(top, max(seq))
    return top + 1


def _vocab_size(cfg: RunConfig, data_path: Path, records: list[TripletRecord]) -> int:
    if cfg.model.vocab_size is not None:
        return cfg.model.vocab_size
    meta = _load_meta(data_path)
    if meta is not None and "vocab_size" in meta:
        return int(meta["vocab_size"])
    return _infer_vocab(records)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(args, sections: dict[str, dict]) -> RunConfig:
    if args.seed is not None:
        sections.setdefault("model", {})["seed"] = args.seed
    return RunConfig.resolve(args.config, sections)


# ---- commands ---------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _resolve(args, {"data": {
        "n_entities": args.n_entities, "set_min": args.set_min, "set_max": args.set_max,
        "n_train": args.n_train, "n_eval": args.n_eval, "n_negatives": args.n_negatives,
    }})
    seed = args.seed if args.seed is not None else cfg.model.seed
    world = WorldSpec(n_entities=cfg.data.n_entities, set_min=cfg.data.set_min,
                      set_max=cfg.data.set_max, seed=seed, n_negatives=cfg.data.n_negatives)
    data = generate(world, cfg.data.n_train, cfg.data.n_eval)
    out = _out_dir(args)
    save_records(data.alignment, out / "train.jsonl")
    save_records(data.eval_pairs, out / "eval.jsonl")
    tok = build_tokenizer(world)
    i_next, i_self = instruction_ids(tok)
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump({
            "vocab_size": tok.size,
            "symbols": list(tok.symbols),
            "instr_next": i_next,
            "instr_self": i_self,
            "world": dataclasses.asdict(world),
        }, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {len(data.alignment)} train records -> {out / 'train.jsonl'}")
    print(f"wrote {len(data.eval_pairs)} eval pairs -> {out / 'eval.jsonl'}")
    return 0


def _build_encoder(cfg: RunConfig, vocab_size: int) -> LmModel:
    config = LmConfig(vocab_size=vocab_size, dim=cfg.model.dim, n_layers=cfg.model.n_layers,
                      n_heads=cfg.model.n_heads, max_seq=cfg.model.max_seq,
                      seed=cfg.model.seed, n_compress=cfg.ic.k)
    return LmModel.init(config)


def cmd_train_ic(args) -> int:
    cfg = _resolve(args, {
        "model": {"vocab_size": args.vocab_size, "dim": args.dim, "n_layers": args.n_layers,
                  "n_heads": args.n_heads, "max_seq": args.max_seq},
        "ic": {"k": args.k, "lr": args.lr, "epochs": args.epochs,
               "batch_size": args.batch_size, "max_records": args.max_records},
    })
    records = load_records(args.data)
    if cfg.ic.max_records is not None:
        records = records[:cfg.ic.max_records]
    encoder = _build_encoder(cfg, _vocab_size(cfg, Path(args.data), records))
    decoder = encoder.freeze()
    curve = train_ic(encoder, decoder, records, epochs=cfg.ic.epochs,
                     batch_size=cfg.ic.batch_size, lr=cfg.ic.lr, seed=cfg.model.seed)
    out = _out_dir(args)
    save_checkpoint(encoder, out / "encoder_ic.ckpt")
    _write_curve(out / "ic_loss.csv", curve, "step,loss")
    print(f"trained {cfg.ic.epochs} epochs on {len(records)} records; "
          f"final loss {_fmt(curve[-1][1])}")
    print(f"checkpoint -> {out / 'encoder_ic.ckpt'}")
    return 0


def cmd_train_cda(args) -> int:
    cfg = _resolve(args, {
        "model": {"vocab_size": args.vocab_size, "dim": args.dim, "n_layers": args.n_layers,
                  "n_heads": args.n_heads, "max_seq": args.max_seq},
        "ic": {"k": args.k},
        "cda": {"tau": args.tau, "beta": args.beta, "variant": args.variant, "lr": args.lr,
                "epochs": args.epochs, "batch_size": args.batch_size,
                "negatives": args.negatives, "max_records": args.max_records},
    })
    records = load_records(args.data)
    if cfg.cda.max_records is not None:
        records = records[:cfg.cda.max_records]
    if args.encoder is not None:
        encoder = load_checkpoint(args.encoder)
    elif args.from_scratch:
        print("warning: training alignment from a randomly initialized encoder; "
              "a compression-trained checkpoint is recommended", file=sys.stderr)
        encoder = _build_encoder(cfg, _vocab_size(cfg, Path(args.data), records))
    else:
        raise FileNotFoundError("train-cda needs --encoder CKPT or --from-scratch")
    # the frozen decoder is the initial encoder, re-derived bitwise from the seeded config
    decoder = LmModel.init(encoder.config).freeze()
    cda_cfg = CdaConfig(tau=cfg.cda.tau, beta=cfg.cda.beta, variant=cfg.cda.variant,
                        negatives_per_anchor=cfg.cda.negatives)
    curve = train_cda(encoder, decoder, records, cda_cfg, lr=cfg.cda.lr,
                      epochs=cfg.cda.epochs, batch_size=cfg.cda.batch_size,
                      seed=cfg.model.seed)
    out = _out_dir(args)
    save_checkpoint(encoder, out / "encoder_cda.ckpt")
    _write_curve(out / "cda_loss.csv",
                 [(s, l, cda_cfg.variant) for s, l in curve], "step,loss,variant")
    print(f"trained {cfg.cda.epochs} epochs ({cda_cfg.variant}) on {len(records)} records; "
          f"final loss {_fmt(curve[-1][1])}")
    print(f"checkpoint -> {out / 'encoder_cda.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    encoder = load_checkpoint(args.encoder)
    pairs = load_records(args.data)
    report = sts_eval(encoder, pairs, pooling=args.pooling)
    out = _out_dir(args)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    print(report.to_json())
    return 0


def cmd_embed(args) -> int:
    encoder = load_checkpoint(args.encoder)
    records = load_records(args.data)
    out = _out_dir(args)
    path = out / "embeddings.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            tokens = rec.anchor if args.field == "anchor" else rec.positive
            instr = rec.instr_self
            vec = embed(encoder, tokens, instr, pooling=args.pooling).vector
            fh.write(json.dumps({"tokens": tokens, "embedding": [float(v) for v in vec]},
                                separators=(",", ":")) + "\n")
    print(f"wrote {len(records)} embeddings -> {path}")
    return 0


def cmd_compare(args) -> int:
    cfg = _resolve(args, {
        "model": {"vocab_size": args.vocab_size, "dim": args.dim, "n_layers": args.n_layers,
                  "n_heads": args.n_heads, "max_seq": args.max_seq},
        "ic": {"k": args.k, "lr": args.ic_lr, "epochs": args.ic_epochs,
               "batch_size": args.ic_batch_size},
        "cda": {"tau": args.tau, "beta": args.beta, "lr": args.lr, "epochs": args.epochs,
                "batch_size": args.batch_size, "negatives": args.negatives},
    })
    records = load_records(args.data)
    eval_pairs = load_records(args.eval)
    budgets = sorted({int(s) for s in args.samples.split(",")})
    for b in budgets:
        if b < 1 or b > len(records):
            raise ValueError(f"sample budget {b} outside 1..{len(records)}")
    if args.encoder is not None:
        base = load_checkpoint(args.encoder)
    else:
        base = _build_encoder(cfg, _vocab_size(cfg, Path(args.data), records))
        decoder = LmModel.init(base.config).freeze()
        ic_limit = cfg.ic.max_records or len(records)
        train_ic(base, decoder, records[:ic_limit], epochs=cfg.ic.epochs,
                 batch_size=cfg.ic.batch_size, lr=cfg.ic.lr, seed=cfg.model.seed)
    decoder = LmModel.init(base.config).freeze()

    rows = []
    for method, variant in (("cda", "sigmoid"), ("infonce", "infonce")):
        for budget in budgets:
            encoder = base.copy()
            cda_cfg = CdaConfig(tau=cfg.cda.tau, beta=cfg.cda.beta, variant=variant,
                                negatives_per_anchor=cfg.cda.negatives)

            def log_epoch(epoch: int, enc: LmModel) -> None:
                rho = sts_eval(enc, eval_pairs).spearman
                rows.append((method, budget, epoch + 1, rho))

            train_cda(encoder, decoder, records[:budget], cda_cfg, lr=cfg.cda.lr,
                      epochs=cfg.cda.epochs, batch_size=cfg.cda.batch_size,
                      seed=cfg.model.seed, on_epoch=log_epoch)
    out = _out_dir(args)
    _write_curve(out / "compare.csv",
                 [(m, b, e, _fmt(r)) for m, b, e, r in rows], "method,samples,epoch,spearman")
    print(f"wrote {len(rows)} rows -> {out / 'compare.csv'}")
    return 0


def cmd_gradcheck(args) -> int:
    results = loss_gradcheck_suite(n_points=args.points, seed=args.seed if args.seed is not None else 3)
    width = max(len(r.name) for r in results)
    failed = False
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"{r.name:<{width}}  max rel err {r.max_rel_err:.3e}  {status}")
        failed = failed or not r.ok
    return 1 if failed else 0


# ---- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, help="master seed for this command")
    common.add_argument("--out", help="output directory (default: current)")

    model_flags = argparse.ArgumentParser(add_help=False)
    model_flags.add_argument("--vocab-size", dest="vocab_size", type=int)
    model_flags.add_argument("--dim", type=int)
    model_flags.add_argument("--n-layers", dest="n_layers", type=int)
    model_flags.add_argument("--n-heads", dest="n_heads", type=int)
    model_flags.add_argument("--max-seq", dest="max_seq", type=int)
    model_flags.add_argument("--k", type=int, help="number of compressed tokens")

    parser = argparse.ArgumentParser(prog="aremb", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-eval", dest="n_eval", type=int)
    p.add_argument("--n-entities", dest="n_entities", type=int)
    p.add_argument("--set-min", dest="set_min", type=int)
    p.add_argument("--set-max", dest="set_max", type=int)
    p.add_argument("--n-negatives", dest="n_negatives", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-ic", parents=[common, model_flags],
                       help="compression stage: reconstruction through compressed tokens")
    p.add_argument("--data", required=True)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-records", dest="max_records", type=int)
    p.set_defaults(func=cmd_train_ic)

    p = sub.add_parser("train-cda", parents=[common, model_flags],
                       help="alignment stage over conditional distributions")
    p.add_argument("--data", required=True)
    p.add_argument("--encoder", help="compression-stage checkpoint to start from")
    p.add_argument("--from-scratch", dest="from_scratch", action="store_true")
    p.add_argument("--variant", choices=("sigmoid", "log_sigmoid", "kl", "js", "infonce"))
    p.add_argument("--tau", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--negatives", type=int)
    p.add_argument("--max-records", dest="max_records", type=int)
    p.set_defaults(func=cmd_train_cda)

    p = sub.add_parser("eval", parents=[common], help="graded-pair evaluation report")
    p.add_argument("--encoder", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pooling", choices=POOLING_MODES, default="mean_compressed")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed", parents=[common], help="export embeddings as JSON lines")
    p.add_argument("--encoder", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pooling", choices=POOLING_MODES, default="mean_compressed")
    p.add_argument("--field", choices=("anchor", "positive"), default="anchor")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("compare", parents=[common, model_flags],
                       help="matched-budget alignment vs InfoNCE curves")
    p.add_argument("--data", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--encoder", help="shared compression checkpoint (trained here if absent)")
    p.add_argument("--samples", required=True, help="comma-separated sample budgets")
    p.add_argument("--tau", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--negatives", type=int)
    p.add_argument("--ic-lr", dest="ic_lr", type=float)
    p.add_argument("--ic-epochs", dest="ic_epochs", type=int)
    p.add_argument("--ic-batch-size", dest="ic_batch_size", type=int)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference checks over every loss")
    p.add_argument("--points", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ArembError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
