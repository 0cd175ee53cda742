"""Experiment runner: prepare, protect, extract, attack, overhead, report.

Configuration comes from a JSON file plus flag overrides (flags win). Every
report carries a header with the tool version, a hash of the effective
configuration and the seed, so runs are auditable and byte-reproducible.
Exit codes: 0 success, 2 config validation, 3 capacity or precondition
violation, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import Arch, ConfigError, DimensionError, SystemConfig
from .benes import RoutingError, switch_count
from .keys import CapacityError, UserKey, build_schedule
from .mapping import (
    adversary_extract,
    extract_with_key,
    load_tdpm,
    protect_model,
    save_tdpm,
)
from .system import load_model, model_accuracy, save_model
from .zoo import TrainingError, generate_dataset, load_dataset, save_dataset, train_mlp
from . import attacks, overhead, report


class ValidationError(ConfigError):
    """Config document rejected; the message names the offending field."""


@dataclass
class ZooSection:
    layer_dims: list[int] = field(default_factory=lambda: [64, 80, 48, 10])
    epochs: int = 30
    n_train: int = 2000
    n_test: int = 400
    noise: float = 70.0


@dataclass
class AttackSection:
    trials: int = 40
    eval_samples: int = 400


@dataclass
class SystemSection:
    arch: str = "config2"
    crossbar_size: int = 256
    device_precision: int = 8
    activated_lines: int = 16
    pe_per_tile: int = 8
    tile_count: int = 20
    bn_ports: int = 16


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/out"
    system: SystemSection = field(default_factory=SystemSection)
    zoo: ZooSection = field(default_factory=ZooSection)
    attack: AttackSection = field(default_factory=AttackSection)

    def system_config(self) -> SystemConfig:
        s = self.system
        return SystemConfig(
            arch=Arch(s.arch),
            crossbar_size=s.crossbar_size,
            device_precision=s.device_precision,
            activated_lines=s.activated_lines,
            pe_per_tile=s.pe_per_tile,
            tile_count=s.tile_count,
            bn_ports=s.bn_ports,
            seed=self.seed,
        )

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        # the output directory is environment, not experiment: byte-identical
        # reports must come out regardless of where they land
        payload = self.as_dict()
        payload.pop("out")
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def header(self) -> str:
        return f"# tdpp {__version__} config={self.hash()} seed={self.seed}"


def _fill_section(instance, data: dict, path: str):
    names = {f.name: f for f in dataclasses.fields(instance)}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ValidationError(f"unknown config field: {where}")
        current = getattr(instance, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ValidationError(f"config field {where} must be an object")
            _fill_section(current, value, where)
        else:
            ok = isinstance(value, type(current)) and not (
                isinstance(value, bool) and not isinstance(current, bool)
            )
            if isinstance(current, float) and isinstance(value, int):
                ok = True  # ints are fine where floats are expected
            if not ok:
                raise ValidationError(
                    f"config field {where} must be {type(current).__name__}"
                )
            setattr(instance, key, value)
    return instance


def load_config(path: str | None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError("config root must be an object")
    return _fill_section(cfg, data, "")


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if getattr(args, "arch", None) is not None:
        cfg.system.arch = args.arch
    if getattr(args, "bn_ports", None) is not None:
        cfg.system.bn_ports = args.bn_ports
    if getattr(args, "device_precision", None) is not None:
        cfg.system.device_precision = args.device_precision
    if getattr(args, "tiles", None) is not None:
        cfg.system.tile_count = args.tiles
    if getattr(args, "trials", None) is not None:
        cfg.attack.trials = args.trials
    return cfg


def _user_key(args: argparse.Namespace) -> UserKey | None:
    text = getattr(args, "user_key", None) or os.environ.get("TDPP_USER_KEY")
    if not text:
        return None
    return UserKey.from_hex(text)


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_prepare(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    ds = generate_dataset(cfg.seed, cfg.zoo.n_train, cfg.zoo.n_test, cfg.zoo.noise)
    save_dataset(ds, str(out / "dataset.tdpd"))
    trained = train_mlp(
        ds, tuple(cfg.zoo.layer_dims), epochs=cfg.zoo.epochs, seed=cfg.seed
    )
    save_model(trained.model, str(out / "model.tdpq"))
    print(cfg.header())
    print(f"dataset: {out / 'dataset.tdpd'} ({ds.n_train} train / {ds.n_test} test)")
    print(f"model:   {out / 'model.tdpq'} dims={cfg.zoo.layer_dims}")
    print(
        f"accuracy: float={trained.float_accuracy:.4f} "
        f"quantized={trained.quant_accuracy:.4f}"
    )
    return 0


def cmd_protect(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    system_cfg = cfg.system_config()
    model = load_model(args.model or str(out / "model.tdpq"))
    sched = build_schedule(system_cfg, model.descriptor, cfg.seed, _user_key(args))
    pmap = protect_model(model, system_cfg, sched)
    save_tdpm(pmap, str(out / "protected.tdpm"))
    bits = sched.pm.key_bits
    print(cfg.header())
    print(
        f"protected {model.descriptor.depth} layers -> {out / 'protected.tdpm'} "
        f"(arch={system_cfg.arch.value})"
    )
    print(
        f"permutation module: {sched.pm.k} x {sched.pm.block_ports}:{sched.pm.block_ports} "
        f"blocks, {switch_count(sched.pm.block_ports)} switches each, {bits} key bits per module"
    )
    distinct = len({k.bits for k in sched.keys})
    print(f"keys in schedule: {distinct} distinct across {len(sched.keys)} layers")
    return 0


def cmd_extract(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    system_cfg = cfg.system_config()
    model = load_model(args.model or str(out / "model.tdpq"))
    pmap = load_tdpm(args.mapping or str(out / "protected.tdpm"), model)
    if args.with_key:
        sched = build_schedule(system_cfg, model.descriptor, cfg.seed, _user_key(args))
        recovered = extract_with_key(pmap, sched)
        dest = out / "extracted.tdpq"
    else:
        recovered = adversary_extract(pmap)
        dest = out / "adversary.tdpq"
    save_model(recovered, str(dest))
    print(cfg.header())
    print(f"extracted model -> {dest} (with_key={bool(args.with_key)})")
    return 0


def cmd_attack(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    system_cfg = cfg.system_config()
    model = load_model(args.model or str(out / "model.tdpq"))
    ds = load_dataset(args.dataset or str(out / "dataset.tdpd"))
    pmap = load_tdpm(args.mapping or str(out / "protected.tdpm"), model)
    sched = build_schedule(system_cfg, model.descriptor, cfg.seed, _user_key(args))
    n_eval = min(cfg.attack.eval_samples, ds.n_test)
    eval_x, eval_y = ds.test_x[:n_eval], ds.test_y[:n_eval]
    trials = cfg.attack.trials
    header = cfg.header()

    accs = attacks.effectiveness_study(
        model, system_cfg, eval_x, eval_y, trials=trials, seed=cfg.seed
    )
    with open(out / "effectiveness.csv", "w") as fh:
        fh.write(header + "\n")
        fh.write("trial,accuracy\n")
        for t, a in enumerate(accs):
            fh.write(f"{t},{a:.6f}\n")

    estimate = attacks.brute_force_model(model, system_cfg)
    if system_cfg.arch is Arch.CONFIG1:
        dnc = attacks.dnc_config1(
            pmap, sched, eval_x, eval_y, estimate, trials=trials, seed=cfg.seed
        )
    else:
        dnc = attacks.dnc_config2(
            pmap, sched, model, system_cfg, eval_x, eval_y, estimate,
            trials=trials, seed=cfg.seed,
        )
    attacks.write_steps_csv(str(out / "attack_steps.csv"), header, dnc)
    meta = {"tool": f"tdpp {__version__}", "config": cfg.hash(), "seed": cfg.seed,
            "trials": trials}
    attacks.write_summary_json(
        str(out / "attack_summary.json"), meta,
        attacks.summary_dict(estimate, dnc, accs),
    )
    clean = model_accuracy(model, eval_x, eval_y)
    per_layer = " ".join(f"{v:.1f}" for v in estimate.per_layer_log2)
    print(header)
    print(
        f"clean accuracy {clean:.4f}; extracted mean "
        f"{float(np.mean(accs)):.4f} over {trials} trials"
    )
    print(
        f"brute force log2 effort: model={estimate.model_log2:.1f} "
        f"per-layer=[{per_layer}]"
    )
    print(f"divide and conquer log2 effort: {dnc.log2_effort:.1f}")
    print(
        f"reports: {out / 'effectiveness.csv'}, {out / 'attack_steps.csv'}, "
        f"{out / 'attack_summary.json'}"
    )
    return 0


def cmd_overhead(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    grid = overhead.OverheadGrid(
        crossbar=cfg.system.crossbar_size, pe_per_tile=cfg.system.pe_per_tile
    )
    rep = overhead.compare(grid)
    header = cfg.header()
    for metric in ("area", "power"):
        path = out / f"overhead_{metric}.csv"
        path.write_text(rep.to_csv(metric, header))
        print(f"wrote {path}")
    return 0


def cmd_report(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    produced = report.render_all(out)
    if not produced:
        print(f"no delimited outputs found under {out}; run attack/overhead first")
        return 0
    for path in produced:
        print(f"rendered {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tdpp",
        description="Permutation-protection simulator and analysis toolkit",
    )
    parser.add_argument("--version", action="version", version=f"tdpp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, attack_flags: bool = False) -> None:
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="64-bit experiment seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--arch", choices=["config1", "config2"])
        p.add_argument("--bn-ports", type=int, dest="bn_ports")
        p.add_argument(
            "--device-precision", type=int, choices=[1, 2, 4, 8], dest="device_precision"
        )
        p.add_argument("--tiles", type=int)
        p.add_argument("--user-key", dest="user_key", help="hex user key (or TDPP_USER_KEY)")
        if attack_flags:
            p.add_argument("--trials", type=int)

    p = sub.add_parser("prepare", help="generate the dataset and train the model")
    common(p)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("protect", help="permute, compact and slice a model")
    common(p)
    p.add_argument("--model", help="model container (default <out>/model.tdpq)")
    p.set_defaults(fn=cmd_protect)

    p = sub.add_parser("extract", help="read a protected mapping back into a model")
    common(p)
    p.add_argument("--model", help="model container for layer metadata")
    p.add_argument("--mapping", help="protected container (default <out>/protected.tdpm)")
    p.add_argument("--with-key", action="store_true", help="legitimate keyed recovery")
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("attack", help="effectiveness, brute-force and divide-and-conquer")
    common(p, attack_flags=True)
    p.add_argument("--model", help="model container")
    p.add_argument("--dataset", help="dataset container")
    p.add_argument("--mapping", help="protected container")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("overhead", help="emit the normalized cost comparison tables")
    common(p)
    p.set_defaults(fn=cmd_overhead)

    p = sub.add_parser("report", help="render figures for the outputs in --out")
    common(p)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return args.fn(cfg, args)
    except (ValidationError,) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CapacityError, DimensionError, RoutingError, TrainingError) as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
