"""Command-line tool: dataset generation, training, evaluation, single-file
recognition, batch folder correction, and the HTTP service.

Exit codes for `adjust`: 0 all files handled, 2 some skipped or failed
(the report says which), 1 fatal setup error before any file was touched.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import datagen, train as train_mod
from .datagen import Sample, SplitSpec, make_phantom, generate_pair
from .nets import (MultiTaskConfig, MultiTaskNet, SimpleCnn, SimpleCnnConfig,
                   load_simple, save_model)
from .orient import as_code
from .preprocess import PreprocConfig
from .standardize import Recognizer, standardize_file
from .train import TrainConfig
from .volume import Volume, read_volume, write_volume

SPLITS = ("train", "val", "test")


@click.group()
def main():
    """Cardiac MR orientation recognition and standardization."""


def _default_affine(spacing):
    a = np.eye(4)
    a[0, 0] = a[1, 1] = spacing
    return a


@main.command("gen-dataset")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--count", default=200, show_default=True, help="Total phantoms.")
@click.option("--size", default=100, show_default=True)
@click.option("--modality", default="bssfp", show_default=True,
              type=click.Choice(sorted(datagen.MODALITY_PROFILES)))
@click.option("--spacing", default=1.367, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--seg/--no-seg", default=True, show_default=True)
def gen_dataset(out_dir, count, size, modality, spacing, seed, seg):
    """Generate phantom volumes with orientation labels into train/val/test."""
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(count):
        img, mask = make_phantom(rng, size=size, modality=modality)
        samples.append(generate_pair(img, mask, rng))
    train, val, test = datagen.split(samples, SplitSpec(seed=seed))
    out = Path(out_dir)
    for name, subset in zip(SPLITS, (train, val, test)):
        d = out / name
        d.mkdir(parents=True, exist_ok=True)
        labels = {}
        for i, s in enumerate(subset):
            stem = f"sample_{i:04d}"
            vol = Volume(voxels=s.image, spacing=(spacing, spacing),
                         affine=_default_affine(spacing))
            write_volume(vol, d / f"{stem}.nii")
            if seg and s.seg is not None:
                segvol = Volume(voxels=s.seg, spacing=(spacing, spacing),
                                affine=_default_affine(spacing), dtype_tag="u8")
                write_volume(segvol, d / f"{stem}_seg.nii")
            labels[f"{stem}.nii"] = str(s.orient)
        (d / "labels.json").write_text(json.dumps(labels, indent=2))
    click.echo(f"wrote {len(train)}/{len(val)}/{len(test)} samples under {out}")


def load_dataset(data_dir, with_seg: bool = False) -> dict[str, list[Sample]]:
    """Read a gen-dataset tree back into Sample lists per split."""
    out = {}
    for name in SPLITS:
        d = Path(data_dir) / name
        if not d.is_dir():
            continue
        labels = json.loads((d / "labels.json").read_text())
        samples = []
        for fname, code in sorted(labels.items()):
            vol = read_volume(d / fname)
            segp = d / fname.replace(".nii", "_seg.nii")
            segarr = None
            if with_seg and segp.exists():
                segarr = read_volume(segp).voxels
            samples.append(Sample(image=vol.voxels, orient=as_code(code), seg=segarr))
        out[name] = samples
    return out


def _load_train_config(path) -> TrainConfig:
    return TrainConfig.from_json(path) if path else TrainConfig()


def _load_preproc(path, **overrides) -> PreprocConfig:
    cfg = PreprocConfig.from_json(path) if path else PreprocConfig(**overrides)
    return cfg


@main.command("train")
@click.option("--kind", type=click.Choice(["simple", "multitask", "transfer"]),
              default="simple", show_default=True)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--preproc", "preproc_path", type=click.Path(exists=True))
@click.option("--base-model", type=click.Path(exists=True),
              help="Checkpoint to adapt (transfer only).")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--metrics-out", type=click.Path())
def train_cmd(kind, data_dir, config_path, preproc_path, base_model, out_path, metrics_out):
    """Train a model on a gen-dataset tree."""
    cfg = _load_train_config(config_path)
    if kind == "multitask":
        pre = _load_preproc(preproc_path)
        ds = load_dataset(data_dir, with_seg=True)
        data = {k: train_mod.samples_to_multitask_arrays(v, pre)
                for k, v in ds.items() if k != "test"}
        model, metrics = train_mod.train_multitask(cfg, data)
    else:
        ds = load_dataset(data_dir)
        sample_size = ds["train"][0].image.shape[0]
        pre = _load_preproc(preproc_path, simple_size=min(100, sample_size))
        data = {k: train_mod.samples_to_simple_arrays(v, pre)
                for k, v in ds.items() if k != "test"}
        if kind == "transfer":
            if not base_model:
                raise click.UsageError("--base-model is required for transfer")
            model = load_simple(base_model)
            model, metrics = train_mod.transfer(model, data, cfg)
        else:
            model = SimpleCnn(SimpleCnnConfig(input_size=pre.simple_size,
                                              head=cfg.head, seed=cfg.seed))
            model, metrics = train_mod.train_simple(cfg, data, model)
    save_model(model, out_path)
    if metrics_out:
        metrics.to_jsonl(metrics_out)
    click.echo(json.dumps({
        "orientation_accuracy": metrics.orientation_accuracy,
        "mean_dice": metrics.mean_dice,
        "model": str(out_path),
    }))


@main.command("eval")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--split", default="test", show_default=True,
              type=click.Choice(SPLITS))
@click.option("--preproc", "preproc_path", type=click.Path(exists=True))
def eval_cmd(model_path, data_dir, split, preproc_path):
    """Orientation accuracy of a small-CNN checkpoint on a dataset split."""
    model = load_simple(model_path)
    pre = _load_preproc(preproc_path, simple_size=model.cfg.input_size)
    ds = load_dataset(data_dir)
    if split not in ds:
        raise click.UsageError(f"split {split!r} not present in {data_dir}")
    x, y = train_mod.samples_to_simple_arrays(ds[split], pre)
    acc = train_mod.evaluate_orientation(model, x, y)
    click.echo(json.dumps({"split": split, "n": len(y), "accuracy": acc}))


@main.command("recognize")
@click.argument("path", type=click.Path(exists=True))
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
def recognize_cmd(path, model_path):
    """Predict the orientation of one volume; prints JSON."""
    from .standardize import recognize

    rec = Recognizer.load(model_path)
    slices, code, conf, unanimous = recognize(read_volume(path), rec)
    click.echo(json.dumps({
        "input": str(path),
        "slices": [{"index": s.index, "code": s.code, "confidence": s.confidence}
                   for s in slices],
        "consensus": str(code),
        "confidence": conf,
        "unanimous": unanimous,
    }))


@main.command("adjust")
@click.argument("folder", type=click.Path())
@click.option("--model", "model_path", type=click.Path(), required=True)
@click.option("--out-dir", type=click.Path(), help="Write here instead of in place.")
@click.option("--in-place", is_flag=True, default=False,
              help="Overwrite inputs (default when --out-dir is omitted).")
@click.option("--recursive", is_flag=True, default=False)
@click.option("--confidence-floor", default=0.5, show_default=True)
@click.option("--report", "report_path", type=click.Path())
@click.option("--json", "json_out", is_flag=True, default=False,
              help="Print the JSON-lines report to stdout.")
def adjust_cmd(folder, model_path, out_dir, in_place, recursive,
               confidence_floor, report_path, json_out):
    """Batch-correct every .nii/.nii.gz file in FOLDER."""
    folder = Path(folder)
    if not folder.is_dir():
        click.echo(f"error: no such folder: {folder}", err=True)
        sys.exit(1)
    try:
        rec = Recognizer.load(model_path)
    except Exception as e:
        click.echo(f"error: cannot load model {model_path}: {e}", err=True)
        sys.exit(1)
    pattern = "**/*" if recursive else "*"
    files = sorted(
        p for p in folder.glob(pattern)
        if p.is_file() and (p.name.endswith(".nii") or p.name.endswith(".nii.gz"))
    )
    reports = []
    for f in files:
        if out_dir:
            out = Path(out_dir) / f.relative_to(folder)
            out.parent.mkdir(parents=True, exist_ok=True)
        else:
            out = f
        reports.append(standardize_file(f, out, rec, confidence_floor))
    lines = [r.to_json() for r in reports]
    if report_path:
        Path(report_path).write_text("\n".join(lines) + ("\n" if lines else ""))
    if json_out or not report_path:
        for line in lines:
            click.echo(line)
    bad = [r for r in reports if r.action in ("error", "skipped-low-confidence")]
    n_fixed = sum(1 for r in reports if r.action == "corrected")
    click.echo(f"{len(files)} files: {n_fixed} corrected, "
               f"{sum(1 for r in reports if r.action == 'already-standard')} already standard, "
               f"{len(bad)} skipped/failed", err=True)
    sys.exit(2 if bad else 0)


@main.command("serve")
@click.option("--model", "model_path", type=click.Path(exists=True),
              envvar="CMR_ORIENT_MODEL", required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--workdir", type=click.Path(), default=".cmr-orient-uploads",
              show_default=True)
@click.option("--max-upload-mb", default=256, show_default=True)
@click.option("--ui-dir", type=click.Path(), default=None,
              help="Static directory with the built web UI.")
def serve_cmd(model_path, host, port, workdir, max_upload_mb, ui_dir):
    """Run the HTTP service backing the web UI."""
    import uvicorn

    from .service import create_app

    rec = Recognizer.load(model_path)
    if ui_dir is None:
        candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui_dir = candidate if candidate.is_dir() else None
    app = create_app(rec, workdir, max_upload=max_upload_mb * 1024 * 1024,
                     ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
