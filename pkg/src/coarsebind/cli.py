"""Command-line entry point: ``coarsebind <command> [options]``.

Every command writes its outputs, reads them back to validate them, and drops a
``<out>.meta.json`` record with the config hash, seed and library versions.
Options may come from a JSON ``--config`` file; flags given on the command line
win over the file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import platform
import sys
import time
import warnings
import zlib
from pathlib import Path

import numpy as np

from . import __version__
from .affinity import (
    AffinityConfig,
    AffinityInputs,
    AffinityModel,
    decode_records,
    load_affinity_checkpoint,
    predict_batch,
    prefilter,
    save_affinity_checkpoint,
    train_affinity,
)
from .complexmodel import decode_complex, distance_matrix, encode_complex, load_json_document
from .distogram import Distogram, aggregate_entropy, decode_distogram, encode_distogram
from .epinet import (
    Epinet,
    EpinetConfig,
    decode_posterior,
    encode_posterior,
    iqr_calibration,
    load_epinet_checkpoint,
    marginal_stats,
    sample_posterior,
    save_epinet_checkpoint,
    train_epinet,
)
from .errors import CoarseBindError, CoarseBindWarning, ConfigError, FormatError, InputError
from .metrics import entropy_calibration, lddt_pli, ligand_rmsd, success_rates, symmetry_corrected_rmsd
from .pairformer import PairformerConfig, load_checkpoint, save_checkpoint
from .pocket import INITIAL_CUTOFF, apply_crop, crop, pocket_residues
from .posegen import OptConfig, generate_pose
from .select import SelectionPool, Strategy, dmta_simulate, emax_select, greedy_select
from .trainer import SyntheticFamily, desk_curriculum, train

EXIT_OK, EXIT_ERROR, EXIT_MISSING = 0, 1, 2

METRICS_COLUMNS = ["id", "rmsd", "rmsd_symcorr", "lddt_pli", "H_LL", "H_LP", "H_PP"]
BENCH_COLUMNS = ["id", "n_tokens", "trunk_s", "pose_s", "affinity_s"]
DMTA_COLUMNS = ["cycle", "strategy", "selected_ids", "max_gap"]


class MissingFile(CoarseBindError):
    pass


def substream(seed, name):
    """Independent integer seed for the named module, derived from the global seed."""
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


# --------------------------------------------------------------------------
# file helpers


def _read(path, what="input"):
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"{what} file not found: {path}")
    return p.read_bytes()


def _write(path, data, validate=None):
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(data)
    if validate is not None:
        validate(p.read_bytes())
    return p


def _jsonl(rows):
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in rows).encode()


def _read_jsonl(data, keys):
    rows = []
    offset = 0
    for line in data.split(b"\n"):
        if line.strip():
            doc = load_json_document(line)
            if not isinstance(doc, dict) or not keys <= set(doc):
                raise FormatError(f"each line needs keys {sorted(keys)}", offset=offset)
            rows.append(doc)
        offset += len(line) + 1
    return rows


def _csv(columns, rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: "" if r[k] is None else r[k] for k in columns})
    return buf.getvalue().encode()


def _check_csv(columns):
    def check(data):
        header = data.decode().split("\n", 1)[0].split(",")
        if header != columns:
            raise FormatError(f"CSV header {header} != {columns}")

    return check


def _check_json(data):
    load_json_document(data)


def _fmt(x):
    return None if x is None else round(float(x), 6)


def _metadata(args, command):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    canonical = json.dumps(config, sort_keys=True, default=str, separators=(",", ":"))
    import scipy
    import torch

    return {
        "command": command,
        "config": json.loads(canonical),
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": args.seed,
        "versions": {
            "coarsebind": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "torch": torch.__version__,
        },
    }


def _write_meta(args, command):
    data = json.dumps(_metadata(args, command), sort_keys=True, indent=1).encode() + b"\n"
    _write(str(args.out) + ".meta.json", data, _check_json)


# --------------------------------------------------------------------------
# loaders


def _structure_model(path):
    model, _ = load_checkpoint(_read(path, "checkpoint"))
    return model


def _complexes(paths):
    return [decode_complex(_read(p, "complex")) for p in paths]


def _features(complexes, model):
    return {c.id: AffinityInputs.from_structure(c, model) for c in complexes}


def _latents(path):
    rows = _read_jsonl(_read(path, "latents"), {"id", "g", "y_hat"})
    ids = [r["id"] for r in rows]
    try:
        g = np.array([r["g"] for r in rows], dtype=np.float64)
        base = np.array([r["y_hat"] for r in rows], dtype=np.float64)
    except (TypeError, ValueError):
        raise FormatError("latent rows need numeric g vectors and y_hat") from None
    if g.ndim != 2:
        raise FormatError("latent vectors must share one length")
    return ids, g, base


# --------------------------------------------------------------------------
# commands


def cmd_train(args):
    family = SyntheticFamily(pool_size=args.pool_size, seed=substream(args.seed, "trainer.data"))
    cfg = PairformerConfig(n_layers=args.layers, pair_dim=args.pair_dim, head_dim=max(1, args.pair_dim // 4))
    stages = desk_curriculum(args.steps, tuple(args.crop_tokens), args.batch_size, args.lr)
    model, log = train(stages, family, seed=substream(args.seed, "trainer"), model_cfg=cfg)
    _write(args.out, save_checkpoint(model, {"model": "structure"}), lambda b: load_checkpoint(b))
    summary = {"losses": [round(v, 6) for v in log.losses], "stages": log.stage_names,
               "stage_steps": log.stage_steps, "heldout_H_LP": [_fmt(v) for v in log.heldout_h_lp]}
    _write(str(args.out) + ".log.json", json.dumps(summary).encode() + b"\n", _check_json)


def cmd_infer(args):
    model = _structure_model(args.checkpoint)
    c = decode_complex(_read(args.complex, "complex"))
    logits, _ = model.predict(c)
    d = Distogram.from_logits(logits, [t.kind for t in c.tokens])
    if args.pocket_tokens is not None:
        expected = d.expected_distances()
        pc = crop(c, args.pocket_tokens, pocket_residues(expected, c.is_ligand, INITIAL_CUTOFF), expected)
        c = apply_crop(c, pc, new_id=f"{c.id}.crop")
        logits, _ = model.predict(c)
        d = Distogram.from_logits(logits, [t.kind for t in c.tokens])
        _write(str(args.out) + ".crop.json", json.dumps(pc.to_json()).encode() + b"\n", _check_json)
        _write(str(args.out) + ".complex.json", encode_complex(c), decode_complex)
    _write(args.out, encode_distogram(d), decode_distogram)


def cmd_crop(args):
    c = decode_complex(_read(args.complex, "complex"))
    if args.distogram:
        d = decode_distogram(_read(args.distogram, "distogram"))
        if d.n_tokens != len(c):
            raise InputError("distogram and complex token counts differ")
        expected = d.expected_distances()
    elif c.coords is not None:
        expected = distance_matrix(c.coords)
    else:
        raise InputError("crop needs --distogram or a complex with coordinates")
    pc = crop(c, args.pocket_tokens, pocket_residues(expected, c.is_ligand, INITIAL_CUTOFF), expected)
    _write(args.out, json.dumps(pc.to_json()).encode() + b"\n", _check_json)


def _opt_config(args):
    return OptConfig(max_iters=args.max_iters, tol=args.tol, n_samples=args.samples,
                     seed=substream(args.seed, "posegen"))


def cmd_pose(args):
    d = decode_distogram(_read(args.distogram, "distogram"))
    ref, samples, best = generate_pose(d, _opt_config(args))
    doc = {"ligand": list(ref.ligand), "pocket": list(ref.pocket), "best": best, "flags": list(ref.flags),
           "samples": [s.to_json() for s in samples]}
    _write(args.out, json.dumps(doc, allow_nan=True).encode() + b"\n", _check_json)


def _pose_metrics(c, d, pose):
    if c.coords is None:
        raise InputError(f"{c.id}: metrics need true coordinates")
    if d.n_tokens != len(c):
        raise InputError(f"{c.id}: distogram and complex token counts differ")
    try:
        lig, pocket = [int(i) for i in pose["ligand"]], [int(i) for i in pose["pocket"]]
        coords = np.array(pose["samples"][int(pose["best"])]["coords"], dtype=np.float64)
    except (KeyError, TypeError, ValueError, IndexError):
        raise FormatError("malformed pose file") from None
    idx = lig + pocket
    if coords.shape != (len(idx), 3) or any(not 0 <= i < len(c) for i in idx):
        raise FormatError("pose coordinates do not match its token indices")
    truth = c.coords[idx]
    nl = len(lig)
    li, pi = list(range(nl)), list(range(nl, len(idx)))
    elements, bonds = c.ligand_graph()
    report = aggregate_entropy(d, pocket)
    return {
        "id": c.id,
        "rmsd": _fmt(ligand_rmsd(coords, truth, li, pi, chirality_blind=True)),
        "rmsd_symcorr": _fmt(symmetry_corrected_rmsd(coords, truth, li, pi, elements, bonds, chirality_blind=True)),
        "lddt_pli": _fmt(lddt_pli(coords, truth, c.is_ligand[idx])),
        "H_LL": _fmt(report.H_LL),
        "H_LP": _fmt(report.H_LP),
        "H_PP": _fmt(report.H_PP),
    }


def cmd_metrics(args):
    if not (len(args.complex) == len(args.distogram) == len(args.pose)):
        raise InputError("give one distogram and one pose per complex")
    rows = []
    for cp, dp, pp in zip(args.complex, args.distogram, args.pose):
        c = decode_complex(_read(cp, "complex"))
        d = decode_distogram(_read(dp, "distogram"))
        rows.append(_pose_metrics(c, d, load_json_document(_read(pp, "pose"))))
    _write(args.out, _csv(METRICS_COLUMNS, rows), _check_csv(METRICS_COLUMNS))
    summary = success_rates(rows)
    summary["n"] = len(rows)
    _write(str(args.out) + ".summary.json", json.dumps(summary, sort_keys=True).encode() + b"\n", _check_json)


def cmd_affinity_train(args):
    model = _structure_model(args.checkpoint)
    records = decode_records(_read(args.records, "records"))
    records, flags = prefilter(records)
    for f in flags:
        print(f"note: {f}", file=sys.stderr)
    feats = _features(_complexes(args.complexes), model)
    missing = sorted({r.complex_id for r in records} - set(feats))
    if missing:
        raise InputError(f"records reference unknown complexes: {missing[:5]}")
    cfg = AffinityConfig(latent_dim=model.cfg.pair_dim, embedding_dim=model.cfg.embedding_dim,
                         seed=substream(args.seed, "affinity"))
    aff, _ = train_affinity(records, feats, AffinityModel(cfg), seed=cfg.seed, steps=args.steps,
                            learning_rate=args.lr)
    _write(args.out, save_affinity_checkpoint(aff), load_affinity_checkpoint)


def cmd_affinity(args):
    model = _structure_model(args.checkpoint)
    aff = load_affinity_checkpoint(_read(args.affinity_checkpoint, "affinity checkpoint"))
    complexes = _complexes(args.complexes)
    feats = _features(complexes, model)
    p, y, g = predict_batch(aff, [feats[c.id] for c in complexes])
    rows = [{"id": c.id, "p_bind": round(float(pi), 6), "y_hat": float(yi), "g": [float(v) for v in gi]}
            for c, pi, yi, gi in zip(complexes, p, y, g)]
    _write(args.out, _jsonl(rows), lambda b: _read_jsonl(b, {"id", "g", "y_hat"}))


def cmd_epinet_train(args):
    records = [r for r in decode_records(_read(args.records, "records")) if r.label_kind == "continuous"]
    ids, g, base = _latents(args.latents)
    lat = dict(zip(ids, g))
    base_map = dict(zip(ids, base))
    missing = sorted({r.complex_id for r in records} - set(lat))
    if missing:
        raise InputError(f"records reference complexes without latents: {missing[:5]}")
    cfg = EpinetConfig(index_dim=args.index_dim, prior_scale=args.prior_scale, hidden=tuple(args.hidden),
                       seed=substream(args.seed, "epinet"))
    net, _ = train_epinet(records, lat, base_map, Epinet(g.shape[1], cfg), cfg, seed=cfg.seed,
                          steps=args.steps, learning_rate=args.lr)
    _write(args.out, save_epinet_checkpoint(net), load_epinet_checkpoint)


def cmd_sample(args):
    net = load_epinet_checkpoint(_read(args.epinet, "epinet checkpoint"))
    ids, g, base = _latents(args.latents)
    post = sample_posterior(net, g, base, k=args.paths, seed=substream(args.seed, "epinet.index"), ids=ids)
    _write(args.out, encode_posterior(post), decode_posterior)


def cmd_select(args):
    post = decode_posterior(_read(args.posterior, "posterior"))
    if args.strategy == "emax":
        picks = emax_select(post, args.batch)
    else:
        picks = greedy_select(post.samples.mean(axis=0), args.batch)
    _write(args.out, json.dumps([post.ids[i] for i in picks]).encode() + b"\n", _check_json)


def _pool(path):
    rows = _read_jsonl(_read(path, "pool"), {"id", "g", "y_hat", "true_y"})
    try:
        g = np.array([r["g"] for r in rows], dtype=np.float64)
        base = np.array([r["y_hat"] for r in rows], dtype=np.float64)
        y = np.array([r["true_y"] for r in rows], dtype=np.float64)
    except (TypeError, ValueError):
        raise FormatError("pool rows need numeric g, y_hat and true_y") from None
    return SelectionPool(tuple(r["id"] for r in rows), g, base, y)


def cmd_dmta(args):
    pool = _pool(args.pool)
    posterior = None
    if args.posterior:
        posterior = decode_posterior(_read(args.posterior, "posterior"))
        if posterior.ids != pool.ids:
            raise InputError("posterior ids must match the pool ids in order")
    elif args.epinet:
        net = load_epinet_checkpoint(_read(args.epinet, "epinet checkpoint"))
        posterior = sample_posterior(net, pool.latents, pool.base_predictions, k=args.paths,
                                     seed=substream(args.seed, "epinet.index"), ids=pool.ids)
    external = None
    if args.external:
        rows = {r["id"]: r["y"] for r in _read_jsonl(_read(args.external, "external predictions"), {"id", "y"})}
        if set(rows) != set(pool.ids):
            raise InputError("external predictions must cover exactly the pool ids")
        external = np.array([float(rows[i]) for i in pool.ids])
    rows = []
    for name in args.strategy:
        state = dmta_simulate(pool, Strategy(name), args.cycles, args.batch, args.sigma_obs,
                              substream(args.seed, "select"), posterior, external)
        for f in state.flags:
            print(f"note: {name}: {f}", file=sys.stderr)
        for k, (sel, gap) in enumerate(zip(state.selected, state.max_gap), start=1):
            rows.append({"cycle": k, "strategy": name, "selected_ids": ";".join(sel), "max_gap": _fmt(gap)})
    _write(args.out, _csv(DMTA_COLUMNS, rows), _check_csv(DMTA_COLUMNS))


def _report_json(report):
    return {"bin_edges": list(report.bin_edges), "counts": list(report.counts),
            "success_rate": list(report.success_rate), "quantile_method": report.quantile_method,
            "nonincreasing": report.nonincreasing}


def cmd_calibrate(args):
    if args.kind == "entropy":
        if not args.metrics:
            raise InputError("entropy calibration needs --metrics")
        rows = list(csv.DictReader(io.StringIO(_read(args.metrics, "metrics").decode())))
        rows = [r for r in rows if r.get("H_LP") and r.get("rmsd")]
        if not rows:
            raise InputError("no metrics rows with both H_LP and rmsd")
        h = np.array([float(r["H_LP"]) for r in rows])
        ok = np.array([float(r["rmsd"]) < args.threshold for r in rows])
        report = entropy_calibration(h, ok)
    else:
        if not (args.posterior and args.truths):
            raise InputError("IQR calibration needs --posterior and --truths")
        post = decode_posterior(_read(args.posterior, "posterior"))
        truth = {r["id"]: float(r["y"]) for r in _read_jsonl(_read(args.truths, "truths"), {"id", "y"})}
        cols = [n for n, i in enumerate(post.ids) if i in truth]
        if not cols:
            raise InputError("no posterior ids have truths")
        stats = [marginal_stats(post, n) for n in cols]
        report = iqr_calibration([s["mean"] for s in stats], [truth[post.ids[n]] for n in cols],
                                 [s["iqr"] for s in stats])
    _write(args.out, json.dumps(_report_json(report)).encode() + b"\n", _check_json)


def cmd_bench(args):
    model = _structure_model(args.checkpoint)
    if args.affinity_checkpoint:
        aff = load_affinity_checkpoint(_read(args.affinity_checkpoint, "affinity checkpoint"))
    else:
        aff = AffinityModel(AffinityConfig(latent_dim=model.cfg.pair_dim, embedding_dim=model.cfg.embedding_dim,
                                           seed=substream(args.seed, "affinity")))
    rows = []
    for c in _complexes(args.complexes):
        t0 = time.perf_counter()
        logits, _ = model.predict(c)
        t1 = time.perf_counter()
        d = Distogram.from_logits(logits, [t.kind for t in c.tokens])
        generate_pose(d, _opt_config(args))
        t2 = time.perf_counter()
        predict_batch(aff, [AffinityInputs.from_structure(c, model)])
        t3 = time.perf_counter()
        rows.append({"id": c.id, "n_tokens": len(c), "trunk_s": f"{t1 - t0:.6f}", "pose_s": f"{t2 - t1:.6f}",
                     "affinity_s": f"{t3 - t2:.6f}"})
    _write(args.out, _csv(BENCH_COLUMNS, rows), _check_csv(BENCH_COLUMNS))


# --------------------------------------------------------------------------
# parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", required=True)
    common.add_argument("--config", help="JSON file of option defaults; flags win")

    pose_opts = argparse.ArgumentParser(add_help=False)
    pose_opts.add_argument("--samples", type=int, default=10, help="pose samples per complex")
    pose_opts.add_argument("--max-iters", type=int, default=5000)
    pose_opts.add_argument("--tol", type=float, default=1e-3)

    parser = argparse.ArgumentParser(prog="coarsebind", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, *parents, **kw):
        p = sub.add_parser(name, parents=[common, *parents], **kw)
        p.set_defaults(func=func)
        return p

    p = add("train", cmd_train, help="staged desk-scale distogram training on synthetic complexes")
    p.add_argument("--steps", type=int, default=630)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--pair-dim", type=int, default=16)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--pool-size", type=int, default=1000)
    p.add_argument("--crop-tokens", type=int, nargs=3, default=[36, 24, 24])

    p = add("infer", cmd_infer, help="predict a distogram for one complex")
    p.add_argument("complex")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pocket-tokens", type=int, default=None,
                   help="crop to this many tokens after a full pass and predict again on the crop")

    p = add("crop", cmd_crop, help="ligand-centered token crop")
    p.add_argument("complex")
    p.add_argument("--distogram", help="use predicted expected distances (default: true coordinates)")
    p.add_argument("--pocket-tokens", type=int, default=196)

    p = add("pose", cmd_pose, pose_opts, help="coarse pose from a distogram")
    p.add_argument("distogram")

    p = add("metrics", cmd_metrics, help="pose and confidence metrics as CSV")
    p.add_argument("--complex", nargs="+", required=True)
    p.add_argument("--distogram", nargs="+", required=True)
    p.add_argument("--pose", nargs="+", required=True)

    p = add("affinity-train", cmd_affinity_train, help="train affinity heads on frozen structure features")
    p.add_argument("--records", required=True)
    p.add_argument("--complexes", nargs="+", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-3)

    p = add("affinity", cmd_affinity, help="affinity predictions and latents (JSON lines)")
    p.add_argument("--complexes", nargs="+", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--affinity-checkpoint", required=True)

    p = add("epinet-train", cmd_epinet_train, help="fit the epistemic residual on frozen latents")
    p.add_argument("--records", required=True)
    p.add_argument("--latents", required=True)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--index-dim", type=int, default=256)
    p.add_argument("--prior-scale", type=float, default=1.0)
    p.add_argument("--hidden", type=int, nargs="+", default=[64])

    p = add("sample", cmd_sample, help="joint posterior samples")
    p.add_argument("--epinet", required=True)
    p.add_argument("--latents", required=True)
    p.add_argument("--paths", type=int, default=1000)

    p = add("select", cmd_select, help="one batch from a posterior file")
    p.add_argument("--posterior", required=True)
    p.add_argument("--batch", type=int, default=5)
    p.add_argument("--strategy", choices=["emax", "greedy"], default="emax")

    p = add("dmta", cmd_dmta, help="simulate select/observe/update cycles on a pool")
    p.add_argument("--pool", required=True)
    p.add_argument("--strategy", nargs="+", default=["greedy", "continual_greedy", "continual_emax"],
                   choices=[s.value for s in Strategy])
    p.add_argument("--cycles", type=int, default=20)
    p.add_argument("--batch", type=int, default=5)
    p.add_argument("--sigma-obs", type=float, default=0.5)
    p.add_argument("--posterior")
    p.add_argument("--epinet")
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--external", help="JSON lines {id, y} for the static_external strategy")

    p = add("calibrate", cmd_calibrate, help="success rate per entropy or IQR bin")
    p.add_argument("--kind", choices=["entropy", "iqr"], default="entropy")
    p.add_argument("--metrics")
    p.add_argument("--threshold", type=float, default=2.0, help="RMSD success threshold (A)")
    p.add_argument("--posterior")
    p.add_argument("--truths", help="JSON lines {id, y}")

    p = add("bench", cmd_bench, pose_opts, help="per-stage wall times as CSV")
    p.add_argument("complexes", nargs="+")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--affinity-checkpoint")
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            config = load_json_document(_read(args.config, "config"))
        except CoarseBindError as exc:
            parser.exit(EXIT_MISSING if isinstance(exc, MissingFile) else EXIT_ERROR, _error_line(exc))
        if not isinstance(config, dict):
            parser.exit(EXIT_ERROR, _error_line(ConfigError("config file must hold a JSON object")))
        known = set(vars(args)) - {"func", "command", "config"}
        unknown = set(k.replace("-", "_") for k in config) - known
        if unknown:
            parser.exit(EXIT_ERROR, _error_line(ConfigError(f"unknown config keys {sorted(unknown)}")))
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        subparser.set_defaults(**{k.replace("-", "_"): v for k, v in config.items()})
        args = parser.parse_args(argv)
    return args


def _error_line(exc):
    doc = {"error": type(exc).__name__, "message": str(exc)}
    if getattr(exc, "offset", None) is not None:
        doc["offset"] = exc.offset
    return json.dumps(doc) + "\n"


def main(argv=None):
    args = parse_args(sys.argv[1:] if argv is None else argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always", CoarseBindWarning)
            warnings.showwarning = lambda msg, *a, **k: print(f"warning: {msg}", file=sys.stderr)
            args.func(args)
        _write_meta(args, args.command)
    except MissingFile as exc:
        sys.stderr.write(_error_line(exc))
        return EXIT_MISSING
    except (CoarseBindError, OSError) as exc:
        sys.stderr.write(_error_line(exc))
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
