"""``neuralgpu`` command line: datagen, train, eval, gradcheck, decode.

Configuration is layered: built-in defaults, then a ``key=value`` file given
with ``--config``, then command-line flags.  Exit codes: 0 success, 1 usage
error, 2 numeric failure, 3 integrity error.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import BACKEND
from . import decode as D
from . import gradchecks
from . import models
from . import tasks
from . import tensor as T
from . import train as TR

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INTEGRITY = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    # model
    variant: str = "extended"
    layers: int = 2
    width: int = 4
    channels: int = 32
    kernel_w: int = 3
    kernel_h: int = 3
    precision: str = "float64"
    dropout: float = 0.0
    output_init: str = "uniform"
    embed_scale: float = 4.0
    # task
    task: str = "masked_copy"
    length: int = 8
    alphabet: int = 2
    period: int = 1
    # optimiser and schedule
    steps: int = 1000
    batch: int = 16
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-4
    clip: float = 1.0
    curriculum_start: int = 4
    curriculum_threshold: float = 0.95
    checkpoint_every: int = 0
    record_time: bool = False
    out_dir: str = "run"

    def task_spec(self):
        return tasks.TaskSpec(self.task, self.length, self.alphabet, self.period)

    def model_config(self):
        spec = self.task_spec()
        return models.ModelConfig(
            variant=self.variant, layers=self.layers, width=self.width, channels=self.channels,
            kernel_w=self.kernel_w, kernel_h=self.kernel_h, vocab_in=spec.vocab_in,
            vocab_out=spec.vocab_out, precision=self.precision, dropout=self.dropout,
            output_init=self.output_init, embed_scale=self.embed_scale)

    def train_config(self):
        return TR.TrainConfig(
            steps=self.steps, batch=self.batch, seed=self.seed, lr=self.lr, beta1=self.beta1,
            beta2=self.beta2, eps=self.eps, clip=self.clip, curriculum_start=self.curriculum_start,
            curriculum_threshold=self.curriculum_threshold, checkpoint_every=self.checkpoint_every,
            record_time=self.record_time)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key, raw):
    kind = _FIELD_TYPES[key]
    if kind in (bool, "bool"):
        if isinstance(raw, bool):
            return raw
        lowered = str(raw).strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    caster = {"int": int, "float": float, "str": str}.get(kind, kind)
    try:
        return caster(raw)
    except ValueError:
        raise UsageError(f"{key}: cannot parse {raw!r}") from None


def read_config_file(path):
    """``key=value`` lines; ``#`` starts a comment; keys may use dashes or underscores."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _FIELD_TYPES:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(key, value)
    return values


def resolve_config(file_values=None, flag_values=None):
    """Defaults, overridden by file values, overridden by flags (``None`` flags are ignored)."""
    merged = asdict(ExperimentConfig())
    merged.update(file_values or {})
    merged.update({k: v for k, v in (flag_values or {}).items() if v is not None})
    return ExperimentConfig(**{k: _coerce(k, v) for k, v in merged.items()})


def _add_config_flags(parser):
    parser.add_argument("--config", help="key=value config file")
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in (bool, "bool"):
            parser.add_argument(flag, dest=f.name, default=None, action=argparse.BooleanOptionalAction)
        else:
            parser.add_argument(flag, dest=f.name, default=None)


def _config_from_args(args):
    file_values = read_config_file(args.config) if args.config else {}
    flags = {f.name: getattr(args, f.name) for f in fields(ExperimentConfig)}
    return resolve_config(file_values, flags)


def write_manifest(out_dir, command, entries):
    """Record (or extend) the run directory's manifest of artifacts."""
    path = os.path.join(out_dir, "manifest.json")
    manifest = {"artifacts": {}, "commands": []}
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    manifest["commands"].append(command)
    manifest["artifacts"].update(entries)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- subcommands ---------------------------------------------------------------------

def cmd_datagen(args):
    cfg = _config_from_args(args)
    spec = cfg.task_spec()
    count = int(args.count)
    if count < 0:
        raise UsageError("count must be >= 0")
    out = args.out
    parent = os.path.dirname(os.path.abspath(out))
    if not os.path.isdir(parent):
        raise UsageError(f"cannot write to {out}: directory does not exist")
    if args.fixed_length:
        samples = [tasks.sample_fixed(spec, cfg.seed, i, int(args.fixed_length)) for i in range(count)]
    else:
        samples = [tasks.sample(spec, cfg.seed, i) for i in range(count)]
    tasks.write_dataset(out, spec, cfg.seed, count, samples)
    print(f"wrote {count} samples to {out}")
    return EXIT_OK


def cmd_train(args):
    cfg = _config_from_args(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.ngpu")
    metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
    model_config = cfg.model_config()
    resume = None
    if args.resume:
        resume = TR.load_checkpoint(ckpt_path, model_config.fingerprint())
    with T.precision(cfg.precision):
        try:
            result = TR.train_loop(model_config, cfg.task_spec(), cfg.train_config(), resume=resume,
                                   metrics_path=metrics_path, checkpoint_path=ckpt_path,
                                   extra={"experiment": asdict(cfg)})
        except TR.DivergenceError as err:
            print(f"error: training diverged: {err}", file=sys.stderr)
            return EXIT_NUMERIC
    write_manifest(cfg.out_dir, {"command": "train", "config": asdict(cfg), "resume": bool(args.resume)},
                   {"checkpoint.ngpu": {"fingerprint": model_config.fingerprint(), "step": result.step},
                    "metrics.csv": {"rows": result.step}})
    last = result.metrics[-1] if result.metrics else None
    if last:
        print(f"step {result.step} loss {last['loss']:.6f} per_symbol_acc {last['per_symbol_acc']:.4f}")
    else:
        print(f"step {result.step} (no training steps run)")
    return EXIT_OK


def _load_model(path, expected=None):
    ckpt = TR.load_checkpoint(path, expected)
    sidecar = f"{path}.txt"
    if os.path.exists(sidecar):
        with open(sidecar, encoding="utf-8") as fh:
            meta = dict(line.strip().split("=", 1) for line in fh if "=" in line)
        if meta.get("fingerprint") != ckpt.fingerprint:
            raise TR.FingerprintError("checkpoint sidecar fingerprint does not match the checkpoint")
    task = tasks.TaskSpec(**ckpt.extra["task"]) if "task" in ckpt.extra else None
    eos = task.eos if task else None
    return ckpt, task, D.Model(ckpt.config, ckpt.params, eos=eos)


def cmd_eval(args):
    ckpt, task, model = _load_model(args.checkpoint, args.fingerprint)
    spec, _, samples = tasks.read_dataset(args.dataset)
    if task is not None and (spec.vocab_in, spec.vocab_out) != (task.vocab_in, task.vocab_out):
        raise TR.FingerprintError(
            f"dataset task {spec.name} does not match the checkpoint's task {task.name}")
    rows = [("samples", len(samples))]
    with T.precision(ckpt.config.precision):
        ppl, log_ppl = D.per_word_perplexity(model, samples)
        per_symbol, seq, predictions = D.decode_accuracy(model, samples)
    rows += [("log_perplexity", log_ppl), ("perplexity", ppl),
             ("per_symbol_acc", per_symbol), ("seq_acc", seq)]
    if args.bleu:
        rows.append(("bleu", D.bleu(predictions, [s.target for s in samples])))
    if args.buckets or args.emit_plot_data:
        index = {id(s): i for i, s in enumerate(samples)}

        def seq_accuracy(group):
            return float(np.mean([predictions[index[id(s)]] == s.target for s in group]))

        report = D.length_bucket_report(seq_accuracy, samples, name="seq_acc")
        if args.buckets:
            report.write_csv(args.buckets)
        if args.emit_plot_data:
            report.write_plot_data(args.emit_plot_data)
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w", encoding="utf-8", newline="")
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for name, value in rows:
            writer.writerow([name, value if isinstance(value, int) else repr(float(value))])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_gradcheck(args):
    components = [c for c in (args.components or "").split(",") if c]
    if args.components is None:
        components = list(gradchecks.COMPONENTS)
    results = gradchecks.run_checks(components, seed=int(args.seed))
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


def _read_inputs(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if lines and lines[0].startswith("# task"):
        return [s.input for s in tasks.read_dataset(path)[2]]
    return [[int(t) for t in line.split("\t")[0].split()] for line in lines if line.strip()]


def cmd_decode(args):
    ckpt, task, model = _load_model(args.checkpoint, args.fingerprint)
    inputs = _read_inputs(args.input)
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w", encoding="utf-8")
    try:
        with T.precision(ckpt.config.precision):
            for tokens in inputs:
                out_len = int(args.out_len) if args.out_len else len(tokens) + 1
                if args.length_search:
                    r = D.length_search(model, tokens)
                elif args.beam:
                    r = D.beam_decode(model, tokens, out_len, beam=int(args.beam))
                else:
                    r = D.greedy_decode(model, tokens, out_len)
                shown = r.tokens[:r.output_length]
                line = f"{' '.join(map(str, shown))}\t{r.log_prob!r}"
                if args.length_search:
                    line += f"\t{r.length}"
                out.write(line + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="neuralgpu", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s (backend: {BACKEND})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="write a synthetic dataset file")
    _add_config_flags(p)
    p.add_argument("--count", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fixed-length", default=None, help="use this exact size for every sample")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train a model; writes checkpoint, metrics and manifest")
    _add_config_flags(p)
    p.add_argument("--resume", action="store_true", help="continue from OUT_DIR/checkpoint.ngpu")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="perplexity, accuracy and optional BLEU / length buckets")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--fingerprint", default=None, help="reject checkpoints with another fingerprint")
    p.add_argument("--bleu", action="store_true")
    p.add_argument("--buckets", default=None, help="write the length-bucket CSV here")
    p.add_argument("--emit-plot-data", default=None, help="write (source length, value) pairs here")
    p.add_argument("--out", default=None, help="report CSV (default stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every backward rule")
    p.add_argument("--components", default=None,
                   help=f"comma-separated subset of {','.join(gradchecks.COMPONENTS)} (empty: none)")
    p.add_argument("--seed", default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("decode", help="decode inputs with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="dataset file or one space-separated input per line")
    p.add_argument("--fingerprint", default=None)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--greedy", action="store_true")
    mode.add_argument("--beam", default=None)
    mode.add_argument("--length-search", action="store_true")
    p.add_argument("--out-len", default=None, help="memory size (default: input length + 1)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_decode)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except TR.CheckpointError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INTEGRITY
    except FloatingPointError as err:  # checked before ValueError: NaN errors are both
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ValueError, KeyError, FileNotFoundError, IsADirectoryError,
            PermissionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
