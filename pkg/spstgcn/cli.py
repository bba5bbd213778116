"""Command-line entry point: `spstgcn <subcommand>`."""

import argparse
import logging
import os
import sys
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from spstgcn.config import Config
from spstgcn.dataclasses import BranchDataset, DatasetManifest, ManifestEntry
from spstgcn.enums import AdjacencySign, Branch, DistanceMeasure
from spstgcn.errors import (
    CacheError,
    ConfigError,
    EmptySequence,
    GradientCheckFailed,
    GraphError,
    InvalidSpec,
    LabelOutOfRange,
    MalformedFile,
    ManifestError,
    NonFiniteCoordinate,
    SequenceTooShort,
    ShapeMismatch,
    SpstGcnError,
)
from spstgcn.graph import NTU_JOINT_NAMES
from spstgcn.nn.checkpoint import load_checkpoint
from spstgcn.nn.model import SpStGcnModel
from spstgcn.nn.gradcheck import run_grad_checks
from spstgcn.preprocess import preprocess_all, write_branch_cache
from spstgcn.skeleton_io import (
    generate_synthetic_dataset,
    load_manifest,
    load_manifest_tensors,
    read_ntu_skeleton,
    tensor_to_sequence,
    to_tensor,
    unique_ids,
    write_manifest,
    write_ntu_skeleton_file,
)
from spstgcn.struct_adj import (
    off_diagonal_summary,
    precompute_adjacency,
    read_adjacency_cache,
    write_adjacency_cache,
)
from spstgcn.train_eval import (
    BRANCH_LETTERS,
    REFERENCE_FLOPS_OVERHEAD,
    REFERENCE_PARAMS_OVERHEAD,
    build_branch_dataset,
    count_params_flops,
    edge_node_similarity,
    evaluate,
    train,
)
from spstgcn.utils import parallel_map, resolve_jobs

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USER = 2
EXIT_CHECK = 3

USER_ERRORS = (
    CacheError,
    ConfigError,
    EmptySequence,
    GraphError,
    InvalidSpec,
    LabelOutOfRange,
    MalformedFile,
    ManifestError,
    NonFiniteCoordinate,
    SequenceTooShort,
    ShapeMismatch,
)

BRANCH_CACHE_SUFFIX = ".branches"
INDEX_FILE = "index.tsv"
ADJACENCY_FILE = "adjacency.bin"


class UserInputError(SpstGcnError):
    """Exception for when a path or argument given on the command line is unusable."""


def _progress(args: argparse.Namespace) -> bool:
    return not args.quiet and sys.stderr.isatty()


def _config(args: argparse.Namespace, overrides: Optional[Dict] = None) -> Config:
    overrides = dict(overrides or {})
    overrides["run.seed"] = args.seed
    overrides["run.jobs"] = args.jobs
    return Config.from_environment(args.config, overrides)


def _dtw_overrides(args: argparse.Namespace) -> Dict:
    overrides = {
        "dtw.radius": args.radius,
        "dtw.measure": args.measure,
        "dtw.sign": args.sign,
    }
    if args.exact:
        overrides["dtw.measure"] = DistanceMeasure.DTW.value
    if args.no_normalize:
        overrides["dtw.normalize"] = False
    if args.per_branch:
        overrides["dtw.per_branch"] = True
    return overrides


def _manifest(path: str) -> DatasetManifest:
    if not os.path.isfile(path):
        raise UserInputError(f"Manifest not found: {path}")
    manifest = load_manifest(path)
    for entry in manifest.entries:
        if not os.path.isfile(entry.path):
            raise UserInputError(f"Skeleton file listed in {path} not found: {entry.path}")
    return manifest


def _write_atomic(path: str, writer) -> None:
    """Write through a temporary file so an interrupted run never leaves a partial output."""
    temporary = path + ".partial"
    try:
        writer(temporary)
        os.replace(temporary, path)
    finally:
        if os.path.exists(temporary):
            os.remove(temporary)


def cmd_synth(args: argparse.Namespace) -> int:
    """Write `.skeleton` files plus `train.tsv` and `eval.tsv` manifests for the synthetic dataset."""
    overrides = {
        "synthetic.samples_per_class": args.samples_per_class,
        "synthetic.eval_samples_per_class": args.eval_samples_per_class,
        "synthetic.frames": args.frames,
        "synthetic.classes": args.classes,
    }
    cfg = _config(args, overrides)
    seed = cfg.get("run.seed")
    os.makedirs(args.out, exist_ok = True)
    for split, offset in (("train", 0), ("eval", 1)):
        tensors, labels = generate_synthetic_dataset(cfg.synthetic_spec(evaluation = split == "eval"), seed + offset)
        entries = []
        for index, (tensor, label) in enumerate(zip(tensors, labels)):
            name = f"{split}_{index:04d}.skeleton"
            seq = tensor_to_sequence(tensor, label, os.path.splitext(name)[0])
            with open(os.path.join(args.out, name), "w", encoding = "utf-8") as f:
                f.write(write_ntu_skeleton_file(seq))
            entries.append(ManifestEntry(name, label, 0, 0))
        write_manifest(DatasetManifest(entries), os.path.join(args.out, f"{split}.tsv"))
        print(f"{split}: {len(entries)} samples, {len(set(labels))} classes")
    return EXIT_OK


def _preprocess_one(job: Tuple[str, int, str], graph, target_frames: int, max_bodies: int) -> None:
    path, label, cache_path = job
    tensor = to_tensor(read_ntu_skeleton(path, label), target_frames, max_bodies)
    _write_atomic(cache_path, lambda target: write_branch_cache(target, preprocess_all(tensor, graph)))


def cmd_preprocess(args: argparse.Namespace) -> int:
    """Write one branch cache per manifest entry plus an index, skipping caches newer than their source."""
    cfg = _config(args)
    manifest = _manifest(args.manifest)
    graph = cfg.graph()
    ids = unique_ids([entry.path for entry in manifest.entries])
    os.makedirs(args.out, exist_ok = True)

    pending = []
    rows = []
    for entry, sample in zip(manifest.entries, ids):
        cache_path = os.path.join(args.out, sample + BRANCH_CACHE_SUFFIX)
        fresh = os.path.exists(cache_path) and os.path.getmtime(cache_path) >= os.path.getmtime(entry.path)
        if args.force or not fresh:
            pending.append((entry.path, entry.label, cache_path))
        rows.append(f"{sample}\t{entry.label}\t{os.path.basename(cache_path)}\n")

    parallel_map(
        partial(
            _preprocess_one,
            graph = graph,
            target_frames = cfg.get("data.target_frames"),
            max_bodies = cfg.get("data.max_bodies"),
        ),
        pending,
        jobs = cfg.get("run.jobs"),
        desc = "preprocess",
        progress = _progress(args),
    )
    computed, skipped = len(pending), len(rows) - len(pending)
    _write_atomic(os.path.join(args.out, INDEX_FILE), lambda target: _write_lines(target, rows))
    logger.info("Preprocessed %d samples, %d already up to date.", computed, skipped)
    print(f"entries: {len(rows)}, computed: {computed}, skipped: {skipped}")
    return EXIT_OK


def _write_lines(path: str, rows: Sequence[str]) -> None:
    with open(path, "w", encoding = "utf-8") as f:
        f.writelines(rows)


def _load(args: argparse.Namespace, cfg: Config, path: str) -> Tuple[list, List[int], List[str]]:
    manifest = _manifest(path)
    tensors, labels, _ = load_manifest_tensors(
        manifest,
        cfg.get("data.target_frames"),
        cfg.get("data.max_bodies"),
        jobs = cfg.get("run.jobs"),
        progress = _progress(args),
    )
    return tensors, labels, unique_ids([entry.path for entry in manifest.entries])


def cmd_adjacency(args: argparse.Namespace) -> int:
    """Compute one structural matrix per sample, or per sample and branch, and cache them."""
    cfg = _config(args, _dtw_overrides(args))
    dtw_cfg = cfg.dtw_config()
    graph = cfg.graph()
    tensors, _, ids = _load(args, cfg, args.manifest)
    jobs = cfg.get("run.jobs")

    if dtw_cfg.per_branch:
        sets = [preprocess_all(t, graph) for t in tensors]
        keys, blocks = [], []
        for branch in Branch:
            blocks.append(precompute_adjacency([s.get(branch) for s in sets], graph, dtw_cfg, jobs, _progress(args)))
            keys.extend(f"{sample}:{branch.value}" for sample in ids)
        matrices = np.concatenate(blocks) if blocks else np.zeros((0, graph.joint_count, graph.joint_count))
    else:
        keys = list(ids)
        matrices = precompute_adjacency(tensors, graph, dtw_cfg, jobs, _progress(args))

    os.makedirs(args.out, exist_ok = True)
    path = os.path.join(args.out, ADJACENCY_FILE)
    _write_atomic(path, lambda target: write_adjacency_cache(target, keys, matrices))
    summary = off_diagonal_summary(matrices, graph.edge_nodes)
    print(f"entries: {len(keys)}")
    print(f"off-diagonal min: {summary['min']:.6g}")
    print(f"off-diagonal median: {summary['median']:.6g}")
    return EXIT_OK


def _cached_adjacency(path: str, ids: Sequence[str]) -> Dict[Branch, np.ndarray]:
    cache = read_adjacency_cache(path)
    result = {}
    for branch in Branch:
        keys = [f"{sample}:{branch.value}" if f"{sample}:{branch.value}" in cache else sample for sample in ids]
        missing = [key for key in keys if key not in cache]
        if missing:
            raise UserInputError(f"{path} has no structural matrix for {missing[0]}.")
        result[branch] = np.stack([cache[key] for key in keys])
    return result


def _dataset(args: argparse.Namespace, cfg: Config, path: str) -> BranchDataset:
    tensors, labels, ids = _load(args, cfg, path)
    adjacency = _cached_adjacency(args.adjacency, ids) if args.adjacency else None
    return build_branch_dataset(
        tensors,
        labels,
        cfg.graph(),
        cfg.dtw_config(),
        ids = ids,
        jobs = cfg.get("run.jobs"),
        progress = _progress(args),
        adjacency = adjacency,
    )


def _model_overrides(args: argparse.Namespace) -> Dict:
    overrides = {"train.epochs": args.epochs, "train.batch_size": args.batch_size, "train.branches": args.branches}
    if args.no_structural:
        overrides["model.structural"] = False
    return overrides


def _print_report(report, branches: Sequence[Branch]) -> None:
    for branch in branches:
        print(f"{branch.value:<10}{report.branch_accuracy[branch.value]:.4f}")
    print(f"{'fused':<10}{report.fused_accuracy:.4f}")
    print("fusion grid:")
    for key, value in report.grid.items():
        print(f"  {key:<8}{value:.4f}")


def cmd_train(args: argparse.Namespace) -> int:
    """Train one model per branch and write checkpoints plus `metrics.jsonl` to `--out`."""
    cfg = _config(args, {**_dtw_overrides(args), **_model_overrides(args)})
    train_set = _dataset(args, cfg, args.train)
    eval_set = _dataset(args, cfg, args.eval) if args.eval else None
    classes = int(train_set.labels.max()) + 1 if len(train_set) else None
    if eval_set is not None and len(eval_set):
        classes = max(classes or 0, int(eval_set.labels.max()) + 1)
    model_cfg = cfg.model_config(num_classes = classes)
    train_cfg = cfg.train_config(progress = _progress(args))

    models, metrics = train(train_set, cfg.graph(), model_cfg, train_cfg, cfg.get("run.seed"), eval_set, args.out)
    print(f"trained {len(models)} branch models in {metrics.wall_time:.1f}s")
    for branch in train_cfg.branches:
        accuracies = metrics.series(branch.value, "train", "accuracy")
        print(f"{branch.value:<10}train accuracy {accuracies[-1]:.4f}")
    if eval_set is not None:
        fused = metrics.series("fused", "eval", "accuracy")
        print(f"{'fused':<10}eval accuracy {fused[-1]:.4f}")
    return EXIT_OK


def _load_models(directory: str) -> Dict[Branch, SpStGcnModel]:
    models = {}
    for branch in Branch:
        path = os.path.join(directory, f"{branch.value}.ckpt")
        if os.path.isfile(path):
            models[branch] = load_checkpoint(path)
    if not models:
        raise UserInputError(f"No branch checkpoints found in {directory}.")
    return models


def _variant(model: SpStGcnModel) -> str:
    return "SpSt-GCN" if model.cfg.structural else "Sp-GCN"


def cmd_eval(args: argparse.Namespace) -> int:
    """Evaluate the branch checkpoints found in `--checkpoints` on a manifest.

    With `--compare`, the edge-node similarity of a second set of checkpoints (usually the
    other variant) is printed next to the first.
    """
    cfg = _config(args, _dtw_overrides(args))
    models = _load_models(args.checkpoints)
    baseline = _load_models(args.compare) if args.compare else {}
    dataset = _dataset(args, cfg, args.manifest)
    train_cfg = cfg.train_config()
    report = evaluate(models, dataset, dict(zip(train_cfg.branches, train_cfg.fusion_weights)))
    _print_report(report, list(models))
    if args.similarity or baseline:
        for branch, model in models.items():
            columns = [(model, edge_node_similarity(model, dataset.inputs[branch], dataset.As[branch]))]
            if branch in baseline:
                other = baseline[branch]
                columns.append((other, edge_node_similarity(other, dataset.inputs[branch], dataset.As[branch])))
            values = "  ".join(f"{_variant(m)} {value:.4f}" for m, value in columns)
            print(f"edge-node similarity {BRANCH_LETTERS[branch]}: {values}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    """Compare reverse-mode and finite-difference gradients; exit 3 when any check fails."""
    cfg = _config(args)
    seed = cfg.get("run.seed")
    reports = run_grad_checks(range(seed, seed + args.seeds))
    width = max(len(report.name) for report in reports)
    for report in reports:
        print(f"{report.name:<{width}}  {report.max_error:.3e}  (tol {report.tolerance:.0e})  {report}")
    failed = [report.name for report in reports if not report.passed]
    if failed:
        raise GradientCheckFailed(f"{len(failed)} gradient checks failed: {', '.join(failed)}")
    return EXIT_OK


def cmd_complexity(args: argparse.Namespace) -> int:
    """Print parameter and multiply-add counts of the Sp-GCN and SpSt-GCN variants."""
    overrides = {}
    if args.no_structural:
        overrides["model.structural"] = False
    cfg = _config(args, overrides)
    model_cfg = cfg.model_config(num_classes = args.num_classes)
    report = count_params_flops(model_cfg, cfg.graph().joint_count, args.frames, args.bodies)
    params = report.params_structural if model_cfg.structural else report.params_spatial
    flops = report.flops_structural if model_cfg.structural else report.flops_spatial
    print(f"model: {'SpSt-GCN' if model_cfg.structural else 'Sp-GCN'}")
    print(f"params: {params}")
    print(f"flops: {flops}")
    print(f"{'variant':<10}{'params':>12}{'flops':>16}")
    print(f"{'Sp-GCN':<10}{report.params_spatial:>12}{report.flops_spatial:>16}")
    print(f"{'SpSt-GCN':<10}{report.params_structural:>12}{report.flops_structural:>16}")
    print(f"structural weights: {report.structural_weights}")
    print(f"params overhead: {report.params_overhead:+.1%} (reference {REFERENCE_PARAMS_OVERHEAD:+.1%})")
    print(f"flops overhead: {report.flops_overhead:+.1%} (reference {REFERENCE_FLOPS_OVERHEAD:+.1%})")
    return EXIT_OK


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help = False)
    common.add_argument("--config", help = "flat `key = value` file overriding the defaults (default: $SPST_CONFIG)")
    common.add_argument("--seed", type = int, help = "random seed (run.seed)")
    common.add_argument("--jobs", type = int, help = "worker processes for parsing and DTW, 0 for all cores (run.jobs)")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action = "store_true", help = "log debug messages")
    verbosity.add_argument("--quiet", "-q", action = "store_true", help = "only log warnings and hide progress bars")
    return common


def _dtw_parser() -> argparse.ArgumentParser:
    dtw = argparse.ArgumentParser(add_help = False)
    dtw.add_argument("--radius", type = int, help = "FastDTW refinement radius (dtw.radius)")
    dtw.add_argument("--no-normalize", action = "store_true", help = "do not divide DTW costs by the path length")
    dtw.add_argument("--per-branch", action = "store_true", help = "one structural matrix per sample and branch")
    dtw.add_argument("--exact", action = "store_true", help = "use exact DTW instead of FastDTW")
    dtw.add_argument("--measure", choices = [m.value for m in DistanceMeasure], help = "edge distance measure")
    dtw.add_argument("--sign", choices = [s.value for s in AdjacencySign], help = "subtract or add reciprocal distances")
    dtw.add_argument("--adjacency", help = "structural matrix cache written by `spstgcn adjacency`")
    return dtw


def _model_parser() -> argparse.ArgumentParser:
    model = argparse.ArgumentParser(add_help = False)
    model.add_argument("--epochs", type = int, help = "training epochs (train.epochs)")
    model.add_argument("--batch-size", type = int, help = "samples per batch (train.batch_size)")
    model.add_argument("--branches", help = "comma-separated branches to train (train.branches)")
    model.add_argument("--no-structural", action = "store_true", help = "disable the structural branch (Sp-GCN)")
    return model


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog = "spstgcn",
        description = "Spatial-structural graph convolution for skeleton action recognition.",
        epilog = f"Skeleton joints: {', '.join(f'{i}={name}' for i, name in enumerate(NTU_JOINT_NAMES))}",
    )
    subparsers = parser.add_subparsers(dest = "command", required = True, metavar = "command")
    common, dtw, model = _common_parser(), _dtw_parser(), _model_parser()

    synth = subparsers.add_parser("synth", parents = [common], help = "generate the synthetic dataset")
    synth.add_argument("--out", required = True, help = "output directory")
    synth.add_argument("--samples-per-class", type = int, help = "training samples per class")
    synth.add_argument("--eval-samples-per-class", type = int, help = "evaluation samples per class")
    synth.add_argument("--frames", type = int, help = "frames per sample")
    synth.add_argument("--classes", help = "comma-separated motion programs")
    synth.set_defaults(func = cmd_synth)

    preprocess = subparsers.add_parser("preprocess", parents = [common], help = "cache branch features")
    preprocess.add_argument("manifest", help = "TAB-separated manifest")
    preprocess.add_argument("--out", required = True, help = "cache directory")
    preprocess.add_argument("--force", action = "store_true", help = "recompute up-to-date entries")
    preprocess.set_defaults(func = cmd_preprocess)

    adjacency = subparsers.add_parser("adjacency", parents = [common, dtw], help = "cache structural matrices")
    adjacency.add_argument("manifest", help = "TAB-separated manifest")
    adjacency.add_argument("--out", required = True, help = "cache directory")
    adjacency.set_defaults(func = cmd_adjacency)

    train_cmd = subparsers.add_parser("train", parents = [common, dtw, model], help = "train branch models")
    train_cmd.add_argument("--train", required = True, help = "training manifest")
    train_cmd.add_argument("--eval", help = "evaluation manifest, scored after every epoch")
    train_cmd.add_argument("--out", required = True, help = "directory for checkpoints and metrics.jsonl")
    train_cmd.set_defaults(func = cmd_train)

    eval_cmd = subparsers.add_parser("eval", parents = [common, dtw], help = "evaluate branch checkpoints")
    eval_cmd.add_argument("--checkpoints", required = True, help = "directory holding <branch>.ckpt files")
    eval_cmd.add_argument("--manifest", required = True, help = "evaluation manifest")
    eval_cmd.add_argument("--similarity", action = "store_true", help = "report edge-node feature similarity")
    eval_cmd.add_argument("--compare", help = "second checkpoint directory whose edge-node similarity is printed alongside")
    eval_cmd.set_defaults(func = cmd_eval)

    gradcheck = subparsers.add_parser("gradcheck", parents = [common], help = "finite-difference gradient checks")
    gradcheck.add_argument("--seeds", type = int, default = 10, help = "number of seeds (default: 10)")
    gradcheck.set_defaults(func = cmd_gradcheck)

    complexity = subparsers.add_parser("complexity", parents = [common], help = "count parameters and FLOPs")
    complexity.add_argument("--no-structural", action = "store_true", help = "report the Sp-GCN variant")
    complexity.add_argument("--num-classes", type = int, default = 60, help = "classes when model.num_classes is 0")
    complexity.add_argument("--frames", type = int, default = 64, help = "input frames (default: 64)")
    complexity.add_argument("--bodies", type = int, default = 2, help = "body slots (default: 2)")
    complexity.set_defaults(func = cmd_complexity)
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level = level, format = "%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args)
    if args.jobs is not None:
        try:
            resolve_jobs(args.jobs)
        except ConfigError as e:
            parser.error(e.message)
    try:
        return args.func(args)
    except GradientCheckFailed as e:
        logger.error(e.message)
        return EXIT_CHECK
    except (UserInputError,) + USER_ERRORS as e:
        logger.error(e.message)
        return EXIT_USER
    except FileNotFoundError as e:
        logger.error("File not found: %s", e.filename)
        return EXIT_USER
    except Exception:
        logger.exception("Internal failure.")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
