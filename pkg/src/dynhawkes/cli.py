"""Command-line entry point.

Every command reads defaults, then ``--config FILE`` (flat ``key = value``),
then explicit flags.  Exit status: 0 success, 1 runtime failure, 2 usage or
validation error.
"""

from __future__ import annotations

import argparse
import io
import logging
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from . import checkpoint as ckpt
from .config import DOCS, RunConfig, build, parse_bool, parse_int_list, read_kv
from .errors import CheckpointError, DivergenceError, DynHawkesError, ValidationError
from .evaluation import EvalReport, evaluate
from .graph import DynamicNetwork, bucket_snapshots, ingest_edges
from .intensity import conditional_intensity
from .synth import PlantedSpec, generate, write_labels
from .training import TrainingState, gradient_check, train

log = logging.getLogger("dynhawkes")


class UsageError(Exception):
    pass


def _flag_type(kind):
    if kind in ("bool", bool):
        return parse_bool
    if kind in ("int", int):
        return int
    if kind in ("float", float):
        return float
    return str


def _add_config_flags(parser):
    defaults = RunConfig()
    group = parser.add_argument_group("configuration (flags override --config)")
    for f in fields(RunConfig):
        group.add_argument(
            f"--{f.name}", dest=f.name, type=_flag_type(f.type), default=None,
            metavar=f.name.upper(),
            help=f"{DOCS.get(f.name, '')} (default: {getattr(defaults, f.name)!r})",
        )
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def run_config(args) -> RunConfig:
    file_values = {}
    if args.config:
        if not os.path.exists(args.config):
            raise UsageError(f"config file not found: {args.config}")
        file_values = read_kv(args.config)
    overrides = {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}
    return build(RunConfig, file_values, overrides)


def load_network(cfg: RunConfig) -> DynamicNetwork:
    if not cfg.input:
        raise UsageError("no input edge list given (--input)")
    if not os.path.exists(cfg.input):
        raise UsageError(f"input file not found: {cfg.input}")
    with open(cfg.input, encoding="utf-8") as fh:
        edges = ingest_edges(fh)
    return bucket_snapshots(edges, cfg.interval)


def _ensure_out(cfg):
    os.makedirs(cfg.out, exist_ok=True)


def _atomic_write(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg: RunConfig, out=None) -> TrainingState:
    out = sys.stdout if out is None else out
    net = load_network(cfg)
    tc = cfg.training()
    _ensure_out(cfg)
    log.info("training on %r with %s", net, tc)
    state = train(net, tc)
    ckpt.save(cfg.checkpoint_path(), state, asdict(cfg))
    _atomic_write(os.path.join(cfg.out, "loss_trace.tsv"), state.trace_tsv())
    if state.trace:
        e = state.trace[-1]
        out.write(f"epoch\t{e.epoch}\nL_1st\t{e.structural:.6f}\nL_DHP\t{e.hawkes:.6f}\n"
                  f"L_smooth\t{e.smooth:.6f}\ntotal\t{e.total:.6f}\n")
    else:
        out.write("epoch\t0\n")
    return state


def _load_checkpoint(cfg: RunConfig, net: DynamicNetwork):
    path = cfg.checkpoint_path()
    if not os.path.exists(path):
        raise UsageError(f"checkpoint not found: {path}")
    c = ckpt.load(path)
    if c.N != net.vertex_count or c.T != net.T:
        raise CheckpointError(
            f"checkpoint shape N={c.N}, T={c.T} does not match network "
            f"N={net.vertex_count}, T={net.T}")
    if cfg.dim != c.dim:
        raise CheckpointError(f"checkpoint dim {c.dim} does not match configured dim {cfg.dim}")
    return c


def cmd_eval(cfg: RunConfig, out=None) -> EvalReport:
    out = sys.stdout if out is None else out
    if cfg.task not in ("link", "newlink", "recommend"):
        raise ValidationError(f"unknown task {cfg.task!r}")
    net = load_network(cfg)
    c = _load_checkpoint(cfg, net)
    if net.T < 2:
        raise ValidationError("evaluation needs at least two snapshots: no t+1 ground truth exists")
    report = evaluate(
        net, c.state.emb, cfg.task, ratio=cfg.ratio, folds=cfg.folds, repeats=cfg.repeats,
        ks=cfg.k_list(), seed=cfg.seed, new_only=cfg.new_only, active_only=cfg.active_only,
        **({} if cfg.task == "recommend" else
           dict(l2=cfg.clf_l2, iterations=cfg.clf_iterations, lr=cfg.clf_lr)),
    )
    _ensure_out(cfg)
    text = report.to_tsv()
    _atomic_write(os.path.join(cfg.out, f"report_{cfg.task}.tsv"), text)
    out.write(text)
    return report


def read_spec(path, seed=None) -> PlantedSpec:
    if not os.path.exists(path):
        raise UsageError(f"spec file not found: {path}")
    raw = read_kv(path)
    values = {}
    for key, v in raw.items():
        try:
            values[key] = _spec_value(key, v)
        except ValueError as exc:
            raise ValidationError(f"invalid spec field '{key}': {exc}") from None
    if seed is not None:
        values["seed"] = seed
    return PlantedSpec(**values)


def _spec_value(key, v):
    if key == "block_sizes":
        return tuple(int(x) for x in v.split(",") if x.strip())
    if key not in PlantedSpec.field_names():
        raise ValueError("unknown field")
    if key in ("N", "T", "seed", "interval"):
        return int(v)
    if key == "decay_mode":
        return v
    if key in ("p_in_first", "p_out_first") and v.lower() == "none":
        return None
    return float(v)


def cmd_generate(spec_path, out_dir, seed=None, out=None):
    out = sys.stdout if out is None else out
    spec = read_spec(spec_path, seed)
    g = generate(spec)
    os.makedirs(out_dir, exist_ok=True)
    edges = os.path.join(out_dir, "edges.tsv")
    labels = os.path.join(out_dir, "labels.tsv")
    with open(edges + ".tmp", "w", encoding="utf-8") as fh:
        g.net.write_edges(fh)
    os.replace(edges + ".tmp", edges)
    with open(labels + ".tmp", "w", encoding="utf-8") as fh:
        write_labels(g.labels, fh)
    os.replace(labels + ".tmp", labels)
    out.write(g.net.summary())
    return g


def gradcheck_instance(cfg: RunConfig):
    """Small random network, embeddings and parameters for gradient checking."""
    from .intensity import EmbeddingSequence, HawkesParams

    rng = np.random.default_rng(cfg.seed)
    N, T, d = cfg.gc_vertices, cfg.gc_snapshots, cfg.dim
    iu, ju = np.triu_indices(N, k=1)
    sets = []
    for _ in range(T):
        keep = rng.random(len(iu)) < 0.3
        if not keep.any():
            keep[rng.integers(len(iu))] = True
        w = rng.integers(1, 4, size=len(iu)).astype(float)
        sets.append({(int(a), int(b)): float(x) for a, b, x, k in zip(iu, ju, w, keep) if k})
    net = DynamicNetwork.from_edge_sets(N, sets)
    # 1/sqrt(d) scaling keeps distances and pre-activations O(1) for any d
    scale = 1.0 / np.sqrt(d)
    emb = EmbeddingSequence(rng.normal(scale=scale, size=(T, N, d)))
    params = HawkesParams(rng.normal(scale=scale, size=(d, d)), rng.normal(scale=scale, size=d),
                          rng.normal(scale=0.3, size=N), cfg.kernel)
    return net, emb, params


def cmd_gradcheck(cfg: RunConfig, out=None) -> bool:
    out = sys.stdout if out is None else out
    net, emb, params = gradcheck_instance(cfg)
    report = gradient_check(net, emb, params, cfg.training(), tolerance=cfg.tolerance,
                            n_coords=cfg.gc_coords)
    out.write(f"coordinates\t{len(report.coordinates)}\n")
    out.write(f"groups\t{','.join(report.groups())}\n")
    out.write(f"max_rel_error\t{report.max_rel_error:.3e}\n")
    out.write(f"tolerance\t{report.tolerance:.3e}\n")
    out.write(f"result\t{'PASS' if report.passed else 'FAIL'}\n")
    return report.passed


def cmd_sweep(cfg: RunConfig, out=None):
    """Train and evaluate over kernels x history windows; one combined report."""
    out = sys.stdout if out is None else out
    from dataclasses import replace

    kernels = [k for k in cfg.sweep_kernels.split(",") if k]
    windows = parse_int_list(cfg.sweep_h, "sweep_h")
    root = cfg.out
    lines = ["kernel\th\ttask\tmetric\tk\tmean\tstd"]
    for kernel in kernels:
        for h in windows:
            sub = replace(cfg, kernel=kernel, h=h, out=os.path.join(root, f"{kernel}_h{h}"),
                          checkpoint="")
            cmd_train(sub, out=io.StringIO())
            report = cmd_eval(sub, out=io.StringIO())
            for row in report.to_tsv().splitlines()[1:]:
                lines.append(f"{kernel}\t{h}\t{row}")
    text = "\n".join(lines) + "\n"
    os.makedirs(root, exist_ok=True)
    _atomic_write(os.path.join(root, "sweep.tsv"), text)
    out.write(text)


def cmd_inspect(cfg: RunConfig, i, j, t, out=None):
    out = sys.stdout if out is None else out
    net = load_network(cfg)
    c = _load_checkpoint(cfg, net)
    b = conditional_intensity(i, j, t, c.state.emb, net, c.state.params, cfg.h)
    out.write(f"base\t{b.base!r}\nexcitation\t{b.excitation!r}\nraw\t{b.raw!r}\n"
              f"transferred\t{b.transferred!r}\n")
    return b


# ---------------------------------------------------------------------------


def make_parser():
    parser = argparse.ArgumentParser(
        prog="dynhawkes", allow_abbrev=False,
        description="Hawkes-process dynamic network embeddings: train, evaluate, generate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train embeddings and write a checkpoint", allow_abbrev=False)
    _add_config_flags(p)
    p = sub.add_parser("eval", help="evaluate a checkpoint", allow_abbrev=False)
    _add_config_flags(p)
    p = sub.add_parser("generate", help="write a synthetic planted network", allow_abbrev=False)
    p.add_argument("spec", help="key = value file of generator fields")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=".")
    p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("gradcheck", help="compare analytic and numeric gradients",
                       allow_abbrev=False)
    _add_config_flags(p)
    p = sub.add_parser("sweep", help="train/eval over kernels and history windows",
                       allow_abbrev=False)
    _add_config_flags(p)
    p = sub.add_parser("inspect", help="print the intensity breakdown of one pair",
                       allow_abbrev=False)
    p.add_argument("--i", type=int, required=True, dest="pair_i")
    p.add_argument("--j", type=int, required=True, dest="pair_j")
    p.add_argument("--t", type=int, required=True, dest="pair_t")
    _add_config_flags(p)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            cmd_generate(args.spec, args.out, args.seed)
            return 0
        cfg = run_config(args)
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg)
        elif args.command == "gradcheck":
            return 0 if cmd_gradcheck(cfg) else 1
        elif args.command == "sweep":
            cmd_sweep(cfg)
        elif args.command == "inspect":
            cmd_inspect(cfg, args.pair_i, args.pair_j, args.pair_t)
        return 0
    except (UsageError, ValidationError, CheckpointError) as exc:
        print(f"dynhawkes: error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, DynHawkesError, OSError) as exc:
        print(f"dynhawkes: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
