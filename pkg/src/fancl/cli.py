"""Command-line entry point: ``fancl {synth,mine,train,eval,infer,check}``.

Training-related commands take an optional ``--config`` JSON file holding a
(possibly partial) TrainConfig; every field can also be overridden by a flag
named after its dotted path, e.g. ``--backbone.depth 3`` or
``--schedule.epochs_per_stage 10 10 30``.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import typing
from pathlib import Path

import numpy as np

from .data.phantom import PhantomError
from .pipeline import TrainConfig

log = logging.getLogger("fancl")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _config_fields(cls, prefix: str = ""):
    """Yield ``(dotted_name, type)`` for every leaf field of a config dataclass."""
    hints = typing.get_type_hints(cls)
    for f in dataclasses.fields(cls):
        typ = hints[f.name]
        name = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(typ):
            yield from _config_fields(typ, prefix=f"{name}.")
        else:
            yield name, typ


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides")
    for name, typ in _config_fields(TrainConfig):
        if name == "seed":
            continue  # exposed as the required --seed
        kwargs: dict = {"dest": f"cfg:{name}", "default": None, "metavar": name.split(".")[-1].upper()}
        origin = typing.get_origin(typ)
        if origin is tuple:
            inner = typing.get_args(typ)[0]
            kwargs.update(nargs="+", type=inner)
        elif typ is bool:
            kwargs["type"] = _bool
        else:
            kwargs["type"] = typ
        group.add_argument(f"--{name}", **kwargs)


def build_config(args: argparse.Namespace) -> TrainConfig:
    data = json.loads(Path(args.config).read_text()) if getattr(args, "config", None) else {}
    for key, value in vars(args).items():
        if not key.startswith("cfg:") or value is None:
            continue
        *parents, leaf = key[4:].split(".")
        node = data
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    seed = getattr(args, "seed", None)
    if seed is not None:
        data["seed"] = seed
    if "schedule" in data and "epochs_total" not in data:
        sched = data["schedule"]
        stages = sched.get("epochs_per_stage") if isinstance(sched, dict) else sched
        if stages is not None:
            data["epochs_total"] = int(sum(stages))
    return TrainConfig.from_dict(data)


# -- commands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    from .data import PhantomSpec, generate_dataset, save_dataset

    spec = PhantomSpec(dims=tuple(args.dims), modalities=args.modalities,
                       lesion_count_range=tuple(args.lesions), lesion_radius_range=tuple(args.radius))
    records = generate_dataset(spec, args.n, seed=args.seed)
    save_dataset(records, args.out, spec)
    print(f"wrote {len(records)} phantoms to {args.out}")
    return 0


def cmd_mine(args) -> int:
    from .curriculum import build_curriculum, mine_outputs, save_curricula
    from .data import load_dataset

    cfg = build_config(args)
    mining = dataclasses.replace(cfg.mining, seed=args.seed)
    dataset = load_dataset(args.data)
    outputs = mine_outputs(dataset, mining_cfg=mining, num_classes=cfg.backbone.num_classes,
                           progress=lambda d, f: log.info("mined depth %d fold %d", d, f))
    curricula = {r.sample_id: build_curriculum(outputs[r.sample_id], r.mask) for r in dataset}
    save_curricula(args.out, curricula, provenance={sid: o.provenance for sid, o in outputs.items()})
    print(f"wrote curricula for {len(curricula)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .curriculum import load_curricula
    from .data import load_dataset
    from .pipeline import TrainingDiverged, train

    cfg = build_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    try:
        result = train(cfg, load_dataset(args.data), load_curricula(args.curricula), out_dir=out,
                       resume_from=args.resume)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"final checkpoint {result.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    from .data import load_dataset
    from .metrics import write_reports
    from .pipeline import evaluate

    reports, agg = evaluate(args.checkpoint, load_dataset(args.data))
    write_reports(reports, csv_path=args.csv, json_path=args.json)
    print(json.dumps(agg, indent=2))
    return 0


def cmd_infer(args) -> int:
    from .data.io import read_volume, write_arrays
    from .pipeline import infer

    rec = read_volume(args.input)
    mask = infer(args.checkpoint, rec.volume)
    write_arrays(args.output, {"mask": mask}, meta={"sample_id": rec.sample_id, "checkpoint": str(args.checkpoint)},
                 roles={"mask": "labels"})
    print(f"wrote {args.output} ({int(np.count_nonzero(mask))} foreground voxels)")
    return 0


def cmd_check(args) -> int:
    from .checks import run_all

    results = run_all(quick=args.quick, seed=args.seed)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fancl", description="Feature-guided attention segmentation toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--dims", type=int, nargs=3, default=[16, 32, 32])
    p.add_argument("--modalities", type=int, default=2)
    p.add_argument("--lesions", type=int, nargs=2, default=[1, 3], metavar=("MIN", "MAX"))
    p.add_argument("--radius", type=float, nargs=2, default=[1.0, 4.5], metavar=("MIN", "MAX"))
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mine", help="train mining networks and write curricula")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("train", help="staged training against persisted curricula")
    p.add_argument("--data", required=True)
    p.add_argument("--curricula", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--resume")
    p.add_argument("--seed", type=int, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-region DSC and HD95 of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--csv")
    p.add_argument("--json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="segment one .f3d volume")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("check", help="run gradient and invariant suites")
    p.add_argument("--quick", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, PhantomError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
