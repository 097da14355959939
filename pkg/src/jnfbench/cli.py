"""Command-line interface: simulate, train, enhance, evaluate, export-spectrogram.

Every command accepts ``--config FILE`` (INI). Keys are read from the section
named after the command plus ``[global]``; command-line flags override them.
Runs write an ``config.ini`` snapshot of the effective settings into their
output directory.

Failures print one line to stderr::

    {"error": "<kind>", "exit_code": <n>, "message": "..."}
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import signal as sig
from .acoustics import RenderedSample
from .corpus import SyntheticCorpus, WavCorpus, substream
from .evaluation import PipelineError, PipelineSpec, evaluate, format_table, run_pipeline
from .neural.checkpoint import CheckpointError, load_checkpoint
from .neural.model import VARIANTS, ConfigError, ModelConfig, build_model
from .training import TrainConfig, TrainingDiverged, fit_input_scale, train

log = logging.getLogger("jnfbench")

EXIT_CODES = {
    "usage": 2,
    "missing_file": 3,
    "bad_config": 4,
    "checkpoint": 5,
    "dataset": 6,
    "diverged": 7,
    "pipeline": 8,
    "internal": 1,
}


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


# ---------------------------------------------------------------------------
# configuration

DEFAULTS = {
    "global": {"seed": "0"},
    "simulate": {"train": "6000", "val": "1000", "test": "600", "synthetic": "false", "corpus": ""},
    "train": {"variant": "FT-JNF", "hidden": "", "batch_size": "6", "crop_seconds": "3.0", "max_epochs": "250",
              "patience": "20", "alpha": "10.0", "learning_rate": "1e-3", "grad_clip": "", "dtype": "float64",
              "input_scale": "auto", "input_stage": "", "speech_only_loss": "false", "limit_train": "",
              "limit_val": ""},
    "evaluate": {"split": "test", "pipelines": "identity,mvdr-oracle", "metric_command": "", "limit": ""},
}


def load_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.read_dict(DEFAULTS)
    if path:
        if not Path(path).exists():
            raise CliError("missing_file", f"config file {path} not found")
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise CliError("bad_config", f"{path}: {exc.message if hasattr(exc, 'message') else exc}") from None
    return cp


def merged(cp: configparser.ConfigParser, section: str, args: argparse.Namespace) -> configparser.ConfigParser:
    """Apply non-None command-line values over the config section."""
    for key in cp[section]:
        val = getattr(args, key, None)
        if val is not None:
            cp[section][key] = str(val).lower() if isinstance(val, bool) else str(val)
    if getattr(args, "seed", None) is not None:
        cp["global"]["seed"] = str(args.seed)
    return cp


def _get(cp, section, key, conv):
    raw = cp[section][key]
    try:
        return conv(raw)
    except ValueError:
        raise CliError("bad_config", f"[{section}] {key} = {raw!r} is not valid") from None


def _bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def _opt_int(s: str):
    return int(s) if s.strip() else None


def _opt_float(s: str):
    return float(s) if s.strip() else None


def snapshot(cp: configparser.ConfigParser, out_dir: Path, sections):
    out_dir.mkdir(parents=True, exist_ok=True)
    snap = configparser.ConfigParser()
    for s in ("global", *sections):
        snap[s] = dict(cp[s])
    with open(out_dir / "config.ini", "w") as fh:
        snap.write(fh)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, cp):
    seed = _get(cp, "global", "seed", int)
    counts = {s: _get(cp, "simulate", s, int) for s in ds.SPLITS}
    out = Path(args.out)
    if _get(cp, "simulate", "synthetic", _bool):
        corpus = SyntheticCorpus(seed=seed, size=ds.SOURCES_PER_SAMPLE * max(sum(counts.values()), 1))
    else:
        root = cp["simulate"]["corpus"]
        if not root:
            raise CliError("usage", "simulate needs --corpus DIR or --synthetic")
        try:
            corpus = WavCorpus(root)
        except FileNotFoundError as exc:
            raise CliError("missing_file", str(exc)) from None
    snapshot(cp, out, ["simulate"])

    def progress(split, j, n):
        if j == n or j % 50 == 0:
            log.info("%s: %d/%d", split, j, n)

    data = ds.simulate_dataset(corpus, counts, seed, out, progress)
    for split, samples in data.items():
        if samples:
            st = ds.snr_summary(samples)
            print(f"{split}: n={st['n']} snr mean {st['mean']:.2f} dB, 95% in [{st['p2.5']:.2f}, "
                  f"{st['p97.5']:.2f}] dB")
    ds.validate_dataset(out)


def _postfilter_inputs(samples, stage_text: str) -> list[RenderedSample]:
    spec = PipelineSpec.parse(stage_text)
    out = []
    for s in samples:
        y = run_pipeline(spec, s)
        out.append(RenderedSample(noisy=y[None], target=s.target, noise=None, snr_db=s.snr_db, scene=s.scene,
                                  sample_rate=s.sample_rate, sample_id=s.sample_id))
    return out


def cmd_train(args, cp):
    seed = _get(cp, "global", "seed", int)
    sec = "train"
    variant = cp[sec]["variant"]
    hidden = cp[sec]["hidden"]
    hidden = tuple(int(h) for h in hidden.split(",")) if hidden.strip() else None
    limit_train = _get(cp, sec, "limit_train", _opt_int)
    limit_val = _get(cp, sec, "limit_val", _opt_int)
    train_set = ds.load_split(args.data, "train", limit_train)
    val_set = ds.load_split(args.data, "val", limit_val) if (Path(args.data) / "val").exists() else None
    speech_only = _get(cp, sec, "speech_only_loss", _bool)
    stage = cp[sec]["input_stage"].strip()
    if stage:
        if variant != "PF":
            raise CliError("bad_config", "input_stage is only meaningful for the PF variant")
        train_set = _postfilter_inputs(train_set, stage)
        val_set = _postfilter_inputs(val_set, stage) if val_set else None
        speech_only = True
    scale_raw = cp[sec]["input_scale"].strip()
    scale = fit_input_scale(train_set) if scale_raw == "auto" else _get(cp, sec, "input_scale", float)
    cp[sec]["input_scale"] = repr(scale)
    try:
        mcfg = ModelConfig(variant=variant, hidden=hidden, input_scale=scale, seed=seed,
                           dtype=cp[sec]["dtype"])
    except (ConfigError, TypeError) as exc:
        raise CliError("bad_config", str(exc)) from None
    tcfg = TrainConfig(
        batch_size=_get(cp, sec, "batch_size", int),
        crop_seconds=_get(cp, sec, "crop_seconds", float),
        max_epochs=_get(cp, sec, "max_epochs", int),
        patience=_get(cp, sec, "patience", int),
        alpha=_get(cp, sec, "alpha", float),
        learning_rate=_get(cp, sec, "learning_rate", float),
        grad_clip=_get(cp, sec, "grad_clip", _opt_float),
        seed=int(substream(seed, "train").integers(2**31 - 1)),
        speech_only_loss=speech_only,
    )
    run_dir = Path(args.run_dir)
    snapshot(cp, run_dir, ["train"])
    model = build_model(mcfg, substream(seed, "train/init"))
    state = train(model, train_set, tcfg, val_set, run_dir)
    print(f"best epoch {state.best_epoch} val loss {state.best_validation_loss:.4f}; "
          f"checkpoint {run_dir / 'best.ckpt'}")


def cmd_enhance(args, cp):
    wave, rate = sig.read_wav(args.input)
    if args.filter == "identity":
        sig.write_wav(args.output, wave[0], rate)
        return
    noise = None
    noise_path = Path(args.noise) if args.noise else Path(args.input).with_name("noise.wav")
    if "mvdr-oracle" in args.filter:
        if not noise_path.exists():
            raise CliError("missing_file", f"oracle MVDR needs the noise stem: {noise_path} not found")
        noise, _ = sig.read_wav(noise_path)
        if noise.shape != wave.shape:
            raise CliError("pipeline", f"noise stem shape {noise.shape} != mixture shape {wave.shape}")
    spec = PipelineSpec.parse(args.filter)
    if args.expect_variant:
        models = [s for s in spec.stages if not isinstance(s, str)]
        if not models or models[-1].config.variant != args.expect_variant:
            got = models[-1].config.variant if models else "none"
            raise CliError("checkpoint", f"filter holds {got}, expected {args.expect_variant}")
    sample = RenderedSample(noisy=wave, target=np.zeros(wave.shape[-1]),
                            noise=noise if noise is not None else np.zeros_like(wave), snr_db=0.0,
                            sample_rate=rate)
    out = run_pipeline(spec, sample, seed=_get(cp, "global", "seed", int))
    sig.write_wav(args.output, out, rate)


def cmd_evaluate(args, cp):
    sec = "evaluate"
    seed = _get(cp, "global", "seed", int)
    split = cp[sec]["split"]
    samples = ds.load_split(args.data, split, _get(cp, sec, "limit", _opt_int))
    specs = [PipelineSpec.parse(p) for p in cp[sec]["pipelines"].split(",") if p.strip()]
    out = Path(args.out)
    snapshot(cp, out, [sec])
    reports = evaluate(specs, samples, split, out, cp[sec]["metric_command"] or None,
                       seed=int(substream(seed, "eval").integers(2**31 - 1)))
    print(format_table(reports))


def cmd_export_spectrogram(args, cp):
    wave, rate = sig.read_wav(args.input)
    if not 0 <= args.channel < wave.shape[0]:
        raise CliError("usage", f"channel {args.channel} out of range for a {wave.shape[0]}-channel file")
    spec = sig.stft(wave[args.channel], sig.StftParams(sample_rate=rate))
    out = args.out or str(Path(args.input).with_suffix(".csv"))
    sig.export_magnitude_csv(out, spec)
    print(out)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jnfbench", description=__doc__.split("\n")[0])
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--seed", type=int, help="root seed (overrides [global] seed)")

    s = sub.add_parser("simulate", help="render a simulated dataset")
    common(s)
    s.add_argument("--out", required=True, help="dataset root directory")
    s.add_argument("--corpus", help="directory of mono 16 kHz WAV utterances")
    s.add_argument("--synthetic", action="store_const", const=True, help="use synthetic speech stand-ins")
    for split in ds.SPLITS:
        s.add_argument(f"--{split}", type=int, help=f"number of {split} samples")

    t = sub.add_parser("train", help="train a filter variant")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--run-dir", required=True)
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--hidden", help="LSTM sizes, e.g. 64,32")
    t.add_argument("--max-epochs", dest="max_epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--crop-seconds", dest="crop_seconds", type=float)
    t.add_argument("--learning-rate", dest="learning_rate", type=float)
    t.add_argument("--dtype", choices=("float64", "float32"))
    t.add_argument("--input-stage", dest="input_stage", help="PF only: pipeline producing its input")
    t.add_argument("--speech-only-loss", dest="speech_only_loss", action="store_const", const=True)
    t.add_argument("--limit-train", dest="limit_train", type=int)
    t.add_argument("--limit-val", dest="limit_val", type=int)

    e = sub.add_parser("enhance", help="enhance one multichannel WAV file")
    common(e)
    e.add_argument("--filter", required=True, help="identity | mvdr-oracle | model.ckpt | stage+stage")
    e.add_argument("--noise", help="noise stem for the oracle MVDR (default: noise.wav next to the input)")
    e.add_argument("--expect-variant", choices=VARIANTS)
    e.add_argument("input")
    e.add_argument("output")

    v = sub.add_parser("evaluate", help="ΔSI-SDR report for pipelines on a split")
    common(v)
    v.add_argument("--data", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--pipelines", help="comma-separated; stages joined by '+'")
    v.add_argument("--split")
    v.add_argument("--limit", type=int)
    v.add_argument("--metric-command", dest="metric_command",
                   help="external metric, e.g. 'polqa {ref} {est}'; last output token is the score")

    x = sub.add_parser("export-spectrogram", help="magnitude spectrogram as CSV (257 rows)")
    common(x)
    x.add_argument("input")
    x.add_argument("--channel", type=int, default=0)
    x.add_argument("--out")
    return p


COMMANDS = {
    "simulate": (cmd_simulate, "simulate"),
    "train": (cmd_train, "train"),
    "enhance": (cmd_enhance, None),
    "evaluate": (cmd_evaluate, "evaluate"),
    "export-spectrogram": (cmd_export_spectrogram, None),
}


def _fail(kind: str, message: str) -> int:
    code = EXIT_CODES[kind]
    print(json.dumps({"error": kind, "exit_code": code, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    func, section = COMMANDS[args.command]
    try:
        cp = load_config(args.config)
        if section is not None:
            merged(cp, section, args)
        elif args.seed is not None:
            cp["global"]["seed"] = str(args.seed)
        func(args, cp)
    except CliError as exc:
        return _fail(exc.kind, str(exc))
    except FileNotFoundError as exc:
        return _fail("missing_file", str(exc))
    except CheckpointError as exc:
        return _fail("checkpoint", str(exc))
    except ds.DatasetError as exc:
        return _fail("dataset", str(exc))
    except TrainingDiverged as exc:
        return _fail("diverged", str(exc))
    except (PipelineError, ConfigError) as exc:
        return _fail("pipeline", str(exc))
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled error", exc_info=True)
        return _fail("internal", f"{type(exc).__name__}: {exc}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
