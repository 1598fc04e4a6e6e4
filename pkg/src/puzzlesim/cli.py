"""Command-line entry point.

Subcommands: index, map, eval, inpaint, export-spec.
Exit codes: 0 ok, 1 partial result, 2 usage/input error, 3 backend failure.
"""

import dataclasses
import json
import os
import sys

import click
import numpy as np

from . import evaluation, inpaint as inpaint_mod, metric, netspec, tensor
from .archive import load_archive
from .errors import FormatError, InpainterError, PuzzleSimError, ValidationError

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2
EXIT_BACKEND = 3

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


def _load_config(path):
    if path is None:
        return {}
    try:
        import tomllib
    except ImportError:
        import tomli as tomllib

    with open(path, "rb") as f:
        return tomllib.load(f)


def _resolve(flag_value, config, key, default):
    """Precedence: explicit flag > config file > default."""
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return default


def _echo_config(out_dir, resolved):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved-config.json"), "w") as f:
        json.dump(resolved, f, indent=2, sort_keys=True)


def _emit(as_json, payload, text):
    if as_json:
        click.echo(json.dumps(payload, sort_keys=True))
    else:
        click.echo(text)


@click.group()
@click.option("--threads", type=int, default=None,
              help="cap internal parallelism (default: available cores)")
def main(threads):
    """Cross-reference artifact maps from unaligned reference images."""
    if threads is not None:
        if threads < 1:
            click.echo("--threads must be >= 1", err=True)
            sys.exit(EXIT_USAGE)
        os.environ["OMP_NUM_THREADS"] = str(threads)
        os.environ["OPENBLAS_NUM_THREADS"] = str(threads)
        try:
            import numba

            numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
        except ImportError:
            pass


@main.command("export-spec")
@click.argument("name", required=False)
def export_spec(name):
    """Print built-in network specs as JSON."""
    names = [name] if name else list(netspec.builtin_spec_names())
    out = {}
    for n in names:
        try:
            spec = netspec.builtin_spec(n)
        except ValidationError as e:
            click.echo(str(e), err=True)
            sys.exit(EXIT_USAGE)
        out[n] = {
            "name": spec.name,
            "layers": [dataclasses.asdict(layer) for layer in spec.layers],
            "taps": [dataclasses.asdict(t) for t in spec.taps],
        }
    click.echo(json.dumps(out, indent=2))


@main.command("index")
@click.argument("refs_dir", type=click.Path(exists=True, file_okay=False))
@click.option("-a", "--archive", "archive_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
@click.option("--spec", "spec_name", default=None)
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
def cmd_index(refs_dir, archive_path, out, spec_name, config_path, as_json):
    """Embed all reference images in REFS_DIR and persist a PZIX index."""
    config = _load_config(config_path)
    try:
        archive = load_archive(archive_path)
    except (FormatError, ValidationError, OSError) as e:
        click.echo(str(e), err=True)
        sys.exit(EXIT_USAGE)
    spec_name = _resolve(spec_name, config, "spec",
                         archive.metadata.get("spec.name", "squeezenet"))
    spec = netspec.builtin_spec(spec_name)

    files = sorted(
        f for f in os.listdir(refs_dir) if f.lower().endswith(IMAGE_EXTENSIONS)
    )
    if not files:
        click.echo(f"no reference images in {refs_dir}", err=True)
        sys.exit(EXIT_USAGE)
    refs, bad = [], []
    for fname in files:
        try:
            refs.append(tensor.load_image(os.path.join(refs_dir, fname)))
        except (OSError, FormatError) as e:
            bad.append(f"{fname}: {e}")
    if bad:
        for line in bad:
            click.echo(line, err=True)
        sys.exit(EXIT_USAGE)

    try:
        index = metric.build_index(refs, spec, archive, ref_names=files)
    except PuzzleSimError as e:
        click.echo(str(e), err=True)
        sys.exit(EXIT_USAGE)
    metric.save_index(index, out)
    _emit(as_json,
          {"index": out, "references": len(refs), "spec": spec_name},
          f"indexed {len(refs)} references ({spec_name}) -> {out}")


@main.command("map")
@click.argument("test_image", type=click.Path(exists=True, dir_okay=False))
@click.option("-i", "--index", "index_path", required=True, type=click.Path(dir_okay=False))
@click.option("-a", "--archive", "archive_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out-prefix", required=True)
@click.option("--per-layer", is_flag=True, help="also write one map per tap layer")
@click.option("--colormap", default="viridis",
              type=click.Choice(tensor.COLORMAPS))
@click.option("--weights", default=None, help="comma-separated tap weight override")
@click.option("--tile-q", type=int, default=None)
@click.option("--tile-r", type=int, default=None)
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
def cmd_map(test_image, index_path, archive_path, out_prefix, per_layer,
            colormap, weights, tile_q, tile_r, config_path, as_json):
    """Compute the fused similarity map for TEST_IMAGE against an index."""
    config = _load_config(config_path)
    if not os.path.exists(index_path):
        click.echo(f"index file not found: {index_path}", err=True)
        sys.exit(EXIT_USAGE)
    try:
        archive = load_archive(archive_path)
        index = metric.load_index(index_path)
        image = tensor.load_image(test_image)
    except (FormatError, ValidationError, OSError) as e:
        click.echo(str(e), err=True)
        sys.exit(EXIT_USAGE)
    spec = netspec.builtin_spec(index.spec_name)
    weight_override = None
    if weights is None:
        weights = config.get("weights")
    if weights is not None:
        weight_override = [float(v) for v in str(weights).split(",")]
    tile_q = _resolve(tile_q, config, "tile_q", metric.DEFAULT_TILE_Q)
    tile_r = _resolve(tile_r, config, "tile_r", metric.DEFAULT_TILE_R)

    try:
        sim = metric.puzzle_similarity(
            image, index, spec, archive, weights=weight_override,
            tile_q=tile_q, tile_r=tile_r, keep_layers=per_layer,
        )
    except PuzzleSimError as e:
        click.echo(str(e), err=True)
        sys.exit(EXIT_USAGE)

    out_dir = os.path.dirname(os.path.abspath(out_prefix))
    os.makedirs(out_dir, exist_ok=True)
    fused_png = out_prefix + ".png"
    tensor.save_heatmap(sim.values, fused_png, colormap=colormap)
    extra = []
    if per_layer:
        for name in sorted(sim.per_layer):
            path = f"{out_prefix}.{name}.png"
            tensor.save_heatmap(sim.per_layer[name], path, colormap=colormap)
            extra.append(path)
    _echo_config(out_dir, {
        "command": "map", "index": index_path, "archive": archive_path,
        "weights": weight_override, "tile_q": tile_q, "tile_r": tile_r,
        "colormap": colormap,
    })
    _emit(as_json,
          {"map": fused_png, "sidecar": tensor.sidecar_path(fused_png),
           "per_layer": extra,
           "min": float(sim.values.min()), "max": float(sim.values.max()),
           "mean": float(sim.values.mean())},
          f"wrote {fused_png} (mean similarity {sim.values.mean():.4f})")


@main.command("eval")
@click.argument("maps_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("annotations_dir", type=click.Path(exists=True, file_okay=False))
@click.option("-o", "--out-csv", required=True, type=click.Path(dir_okay=False))
@click.option("--figure", "figure_path", default=None, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
def cmd_eval(maps_dir, annotations_dir, out_csv, figure_path, seed, config_path,
             as_json):
    """Correlate PZSM maps in MAPS_DIR/<scene>/<sample>.pzsm with annotations."""
    config = _load_config(config_path)
    seed = int(_resolve(seed, config, "seed", 0))
    try:
        mask_sets = evaluation.ingest_annotations(annotations_dir)
    except (ValidationError, OSError) as e:
        click.echo(str(e), err=True)
        sys.exit(EXIT_USAGE)
    if not mask_sets:
        click.echo(f"no annotations under {annotations_dir}", err=True)
        sys.exit(EXIT_USAGE)

    def load_map(scene, sample):
        path = os.path.join(maps_dir, scene, sample + ".pzsm")
        if not os.path.exists(path):
            return None
        return tensor.read_sim_map(path)

    report = evaluation.evaluate(mask_sets, load_map, seed=seed)
    out_dir = os.path.dirname(os.path.abspath(out_csv))
    os.makedirs(out_dir, exist_ok=True)
    with open(out_csv, "w") as f:
        f.write(evaluation.report_csv(report))
    if figure_path:
        evaluation.save_report_figure(report, figure_path)
    _echo_config(out_dir, {"command": "eval", "maps": maps_dir,
                           "annotations": annotations_dir, "seed": seed})

    summary = {
        "csv": out_csv,
        "pcc_mean": report.pcc_mean, "pcc_std": report.pcc_std,
        "srcc_mean": report.srcc_mean, "srcc_std": report.srcc_std,
        "missing": [f"{s}/{m}" for s, m in report.missing],
    }
    _emit(as_json, summary, evaluation.format_table(report))
    if report.missing:
        for scene, sample in report.missing:
            click.echo(f"missing map: {scene}/{sample}", err=True)
        sys.exit(EXIT_PARTIAL)


def _make_backend(backend_spec):
    if backend_spec.startswith("stub:identity"):
        return inpaint_mod.IdentityInpainter()
    if backend_spec.startswith("stub:meanfill"):
        return inpaint_mod.MeanFillInpainter()
    if backend_spec.startswith("exec:"):
        return inpaint_mod.SubprocessInpainter(backend_spec[len("exec:"):])
    if backend_spec.startswith(("http://", "https://")):
        return inpaint_mod.HTTPInpainter(backend_spec)
    raise ValidationError(
        f"unknown backend {backend_spec!r}; expected stub:identity, "
        "stub:meanfill, exec:<path> or an http(s) URL"
    )


@main.command("inpaint")
@click.argument("test_image", type=click.Path(exists=True, dir_okay=False))
@click.option("-i", "--index", "index_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("-a", "--archive", "archive_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--backend", "backend_spec", required=True)
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
@click.option("--trace", "trace_path", default=None, type=click.Path(dir_okay=False))
@click.option("--candidates", "n_candidates", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--lam", "--lambda", "lam", type=float, default=None)
@click.option("--rounds", "round_limit", type=int, default=None)
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
def cmd_inpaint(test_image, index_path, archive_path, backend_spec, out,
                trace_path, n_candidates, alpha, lam, round_limit, config_path,
                as_json):
    """Progressively inpaint TEST_IMAGE guided by its similarity map."""
    config = _load_config(config_path)
    try:
        backend = _make_backend(backend_spec)
    except ValidationError as e:
        click.echo(str(e), err=True)
        sys.exit(EXIT_USAGE)
    try:
        archive = load_archive(archive_path)
        index = metric.load_index(index_path)
        image = tensor.load_image(test_image)
    except (FormatError, ValidationError, OSError) as e:
        click.echo(str(e), err=True)
        sys.exit(EXIT_USAGE)
    spec = netspec.builtin_spec(index.spec_name)

    cfg = inpaint_mod.InpaintConfig(
        n_candidates=int(_resolve(n_candidates, config, "candidates",
                                  inpaint_mod.DEFAULT_N_CANDIDATES)),
        alpha=float(_resolve(alpha, config, "alpha", inpaint_mod.DEFAULT_ALPHA)),
        lam=float(_resolve(lam, config, "lambda", inpaint_mod.DEFAULT_LAMBDA)),
        round_limit=int(_resolve(round_limit, config, "rounds",
                                 inpaint_mod.DEFAULT_ROUND_LIMIT)),
    )
    try:
        result = inpaint_mod.inpaint_iteratively(image, index, spec, archive,
                                                 backend, cfg)
    except InpainterError as e:
        click.echo(str(e), err=True)
        sys.exit(EXIT_BACKEND)
    except PuzzleSimError as e:
        click.echo(str(e), err=True)
        sys.exit(EXIT_USAGE)

    out_dir = os.path.dirname(os.path.abspath(out))
    os.makedirs(out_dir, exist_ok=True)
    tensor.save_image(result.image, out)
    if trace_path:
        inpaint_mod.write_trace(result.trace, trace_path)
    _echo_config(out_dir, {
        "command": "inpaint", "backend": backend.name,
        "candidates": cfg.n_candidates, "alpha": cfg.alpha, "lambda": cfg.lam,
        "rounds": cfg.round_limit,
    })
    _emit(as_json,
          {"out": out, "rounds": result.rounds, "accepted": result.accepted,
           "converged": result.converged, "aborted": result.aborted},
          f"wrote {out}: {result.accepted} accepted inpaintings over "
          f"{result.rounds} rounds")
    if result.aborted:
        click.echo(f"backend aborted: {result.aborted}", err=True)
        sys.exit(EXIT_BACKEND)
    if not result.converged:
        sys.exit(EXIT_PARTIAL)


if __name__ == "__main__":
    main()
