import argparse
import hashlib
import json
import logging
import os
import pathlib
import platform
import sys
import time
import traceback

from . import VERSION, checkpoint, config, convert, report, root_logger
from .errors import ContractError
from .experiment import Experiment
from .manifest import RunManifest
from .metrics import perplexity
from .metrics import report as eval_report
from .model import init_params
from .search import decode_dataset
from .trainer import Trainer, average_checkpoints, grid_search_beta


def generate_logfile_name(name=""):
    idstr = f"{time.localtime()}{os.getpid()}{platform.uname()}"
    return f'log{name}_{hashlib.md5(idstr.encode("utf-8")).hexdigest()}'


def configure_logging(logfile):
    root_logger.setLevel(logging.DEBUG)
    for handler in list(root_logger.handlers):
        root_logger.removeHandler(handler)
        handler.close()

    # create stdout handler and set level to info
    ch = logging.StreamHandler(stream=sys.stdout)
    ch.setLevel(logging.INFO)
    ch.setFormatter(logging.Formatter("%(message)s"))
    root_logger.addHandler(ch)

    # create log file handler and set level to debug
    fh = logging.FileHandler(logfile)
    fh.setLevel(logging.DEBUG)
    fh.setFormatter(logging.Formatter("%(asctime)s : %(levelname)-7s : %(message)s"))
    root_logger.addHandler(fh)


def write_lines(path, sequences):
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for tokens in sequences:
            f.write(" ".join(tokens) + "\n")
    return path


def read_lines(path):
    path = pathlib.Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"The token file '{path}' does not exist")
    return [line.split() for line in path.read_text().splitlines()]


def find_run_dir(checkpoint_path):
    """The run directory holding a checkpoint: its own or its parent's directory."""
    checkpoint_path = pathlib.Path(checkpoint_path).resolve()
    for candidate in (checkpoint_path.parent, checkpoint_path.parent.parent):
        if (candidate / "config.yaml").is_file():
            return candidate
    raise FileNotFoundError(f"no run directory (config.yaml) found for the checkpoint '{checkpoint_path}'")


def load_params(experiment, path):
    """Model parameters of `experiment` with the values of the checkpoint at `path`."""
    params = init_params(experiment.spec, experiment.config["train"]["seed"])
    params.assign(checkpoint.load(path))
    return params


def train_run(experiment, run_dir, manifest):
    """Train `experiment` into `run_dir`; returns the TrainResult and the averaged checkpoint path."""
    run_dir = pathlib.Path(run_dir)
    for path in experiment.save(run_dir):
        manifest.add_output(path)
    trainer = Trainer(experiment.spec, experiment.train_config, experiment.word_table(), run_dir=run_dir)
    log_path = run_dir / "train.log.jsonl"
    with manifest.timed("train"):
        result = trainer.fit(experiment.dataset("train"), experiment.dataset("dev"), experiment.vocab, log_path)
    manifest.add_output(log_path)
    for entry in result.checkpoints.entries:
        manifest.add_output(entry.path)
    averaged = checkpoint.save(run_dir / "averaged.bin", result.averaged.snapshot())
    manifest.add_output(averaged)
    return result, averaged


def new_manifest(command, experiment):
    manifest = RunManifest(command, experiment.config, experiment.config["train"]["seed"])
    manifest.add_input(experiment.source)
    for key in config.PATH_KEYS:
        manifest.add_input(experiment.config["data"].get(key))
    return manifest


def cmd_train(args):
    experiment = Experiment.from_config(args.config, args.set)
    manifest = new_manifest("train", experiment)
    result, averaged = train_run(experiment, args.output, manifest)
    manifest.write(pathlib.Path(args.output) / "manifest.json")
    root_logger.info(f"averaged checkpoint: {averaged} (best dev BLEU-4 {result.best_score:.2f})")


def cmd_generate(args):
    run_dir = pathlib.Path(args.run) if args.run else find_run_dir(args.checkpoint)
    experiment = Experiment.from_run(run_dir)
    decode = experiment.config["decode"]
    params = load_params(experiment, args.checkpoint)
    examples = experiment.load_examples(args.dataset)

    manifest = RunManifest("generate", experiment.config, experiment.config["train"]["seed"])
    manifest.add_input(args.checkpoint)
    manifest.add_input(args.dataset)
    with manifest.timed("decode"):
        questions = decode_dataset(
            examples,
            params,
            experiment.spec,
            experiment.vocab,
            beam_size=args.beam or decode["beam"],
            max_len=args.max_len or decode["max_len"],
            suppress_unk=decode["suppress_unk"],
            greedy=args.greedy,
            threads=args.threads or experiment.threads,
        )
    manifest.add_output(write_lines(args.output, questions))
    manifest.write(pathlib.Path(f"{args.output}.manifest.json"))
    root_logger.info(f"wrote {len(questions)} questions to {args.output}")


def cmd_evaluate(args):
    hypotheses = read_lines(args.hyps)
    references = read_lines(args.refs)
    if len(hypotheses) != len(references):
        raise ContractError(f"{args.hyps} has {len(hypotheses)} lines, {args.refs} has {len(references)}")

    ppl = None
    experiment = None
    if args.model:
        if not args.dataset:
            raise ContractError("--model requires --dataset with the source sentences of the references")
        experiment = Experiment.from_run(args.run or find_run_dir(args.model))

    manifest = RunManifest("evaluate", experiment.config if experiment else None)
    for path in (args.hyps, args.refs, args.model, args.dataset):
        manifest.add_input(path)
    with manifest.timed("evaluate"):
        if experiment is not None:
            params = load_params(experiment, args.model)
            ppl = perplexity(params, experiment.spec, experiment.load_examples(args.dataset))
        result = eval_report(hypotheses, references, ppl)

    text = result.to_json()
    if args.output:
        pathlib.Path(args.output).write_text(text + "\n")
        manifest.add_output(args.output)
    manifest.write(pathlib.Path(f"{args.output or args.hyps}.manifest.json"))
    root_logger.info(text)
    if args.table:
        label = args.label or pathlib.Path(args.hyps).stem
        root_logger.info(report.render_ablation([{"name": label, "title": label, "report": result}], title="Evaluation"))


def cmd_average(args):
    if len(args.checkpoints) < 2:
        raise ContractError("average needs at least 2 checkpoints")
    manifest = RunManifest("average")
    for path in args.checkpoints:
        manifest.add_input(path)
    params = average_checkpoints([checkpoint.load(path) for path in args.checkpoints])
    path = checkpoint.save(args.output, params.snapshot())
    manifest.add_output(path)
    manifest.write(pathlib.Path(f"{args.output}.manifest.json"))
    root_logger.info(f"averaged {len(args.checkpoints)} checkpoints into {path}")


def cmd_ablate(args):
    base = Experiment.from_config(args.config, args.set)
    output = pathlib.Path(args.output)
    manifest = new_manifest("ablate", base)
    split = "test" if base.config["data"].get("test") else "dev"

    rows = []
    for name in config.CONFIGURATIONS:
        experiment = base.with_configuration(name)
        root_logger.info(f"\n{config.title(name)}")
        _, averaged = train_run(experiment, output / name, manifest)
        params = load_params(experiment, averaged)
        examples = experiment.dataset(split) or experiment.dataset("train")
        decode = experiment.config["decode"]
        with manifest.timed(f"evaluate.{name}"):
            questions = decode_dataset(
                examples,
                params,
                experiment.spec,
                experiment.vocab,
                beam_size=decode["beam"],
                max_len=decode["max_len"],
                suppress_unk=decode["suppress_unk"],
                threads=experiment.threads,
            )
            ppl = perplexity(params, experiment.spec, examples)
        manifest.add_output(write_lines(output / name / f"{split}.questions.txt", questions))
        result = eval_report(questions, [e.tgt_tokens for e in examples], ppl)
        rows.append({"name": name, "title": config.title(name), "report": result})

    bleu4 = {row["name"]: row["report"].bleu[3] for row in rows}
    lm_beats_baseline = bleu4["full"] > bleu4["baseline"]
    markdown = output / "ablation.md"
    markdown.write_text(report.render_ablation(rows, lm_beats_baseline, title=f"Ablation on {split}"))
    manifest.add_output(markdown)
    summary = output / "ablation.json"
    summary.write_text(report.ablation_json(rows, lm_beats_baseline) + "\n")
    manifest.add_output(summary)
    manifest.write(output / "manifest.json")
    root_logger.info(markdown.read_text())


def cmd_beta_sweep(args):
    experiment = Experiment.from_config(args.config, args.set)
    output = pathlib.Path(args.output)
    manifest = new_manifest("beta-sweep", experiment)
    budget = args.budget or experiment.config["train"]["max_steps"]
    with manifest.timed("sweep"):
        best, table = grid_search_beta(
            args.values,
            budget,
            experiment.dataset("train"),
            experiment.dataset("dev"),
            experiment.vocab,
            experiment.spec,
            experiment.train_config,
            word_table=experiment.word_table(),
            threads=experiment.threads,
        )
    output.mkdir(parents=True, exist_ok=True)
    markdown = output / "beta_sweep.md"
    markdown.write_text(report.render_beta_sweep(table, best))
    manifest.add_output(markdown)
    summary = output / "beta_sweep.json"
    summary.write_text(json.dumps({"best": best, "table": table, "budget": budget}, indent=2) + "\n")
    manifest.add_output(summary)
    manifest.write(output / "manifest.json")
    root_logger.info(markdown.read_text())
    root_logger.info(f"best beta: {best}")


def cmd_convert(args):
    convert.convert(args.prefix, args.output)


def beta_values(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"'{text}' is not a comma separated list of numbers")


def make_argparser():
    parser = argparse.ArgumentParser(description="Train, run and evaluate answer-aware question generators.")
    parser.add_argument("--version", action="version", version=f"questionator version {VERSION}")
    parser.add_argument("--threads", type=int, default=None, help=f"worker threads (default: ${config.THREADS_ENV})")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def with_config(sub):
        sub.add_argument("config", type=str, help="run configuration (YAML or key=value text)")
        sub.add_argument("-o", "--output", required=True, type=str)
        sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a setting")

    with_config(subparsers.add_parser("train", help="train one configuration"))

    generate = subparsers.add_parser("generate", help="decode questions for a dataset")
    generate.add_argument("checkpoint", type=str)
    generate.add_argument("--dataset", required=True, type=str)
    generate.add_argument("-o", "--output", required=True, type=str)
    generate.add_argument("--run", type=str, help="run directory (default: found from the checkpoint)")
    generate.add_argument("--beam", type=int)
    generate.add_argument("--max-len", type=int)
    generate.add_argument("--greedy", action="store_true")

    evaluate = subparsers.add_parser("evaluate", help="score hypotheses against references")
    evaluate.add_argument("--hyps", required=True, type=str)
    evaluate.add_argument("--refs", required=True, type=str)
    evaluate.add_argument("--model", type=str, help="checkpoint for perplexity of the references")
    evaluate.add_argument("--dataset", type=str, help="JSON-lines triples of the references (with --model)")
    evaluate.add_argument("--run", type=str)
    evaluate.add_argument("--table", action="store_true", help="also print the markdown tables")
    evaluate.add_argument("--label", type=str)
    evaluate.add_argument("-o", "--output", type=str)

    average = subparsers.add_parser("average", help="average checkpoints")
    average.add_argument("checkpoints", nargs="+", type=str)
    average.add_argument("-o", "--output", required=True, type=str)

    with_config(subparsers.add_parser("ablate", help="train and compare the four configurations"))

    sweep = subparsers.add_parser("beta-sweep", help="grid search of the language modeling weight")
    with_config(sweep)
    sweep.add_argument("--values", required=True, type=beta_values, help="comma separated betas")
    sweep.add_argument("--budget", type=int, help="training steps per beta (default: train.max_steps)")

    conv = subparsers.add_parser("convert", help="convert parallel split files to JSON-lines")
    conv.add_argument("prefix", type=str)
    conv.add_argument("-o", "--output", required=True, type=str)

    return parser


COMMANDS = {
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "average": cmd_average,
    "ablate": cmd_ablate,
    "beta-sweep": cmd_beta_sweep,
    "convert": cmd_convert,
}


def main(argv=None):
    parser = make_argparser()
    args = parser.parse_args(argv)

    logfile = generate_logfile_name(f"_{args.command}")
    configure_logging(logfile)

    try:
        root_logger.debug(f"Command line arguments: {args}")
        if args.threads is not None:
            if hasattr(args, "set"):
                args.set.append(f"run.threads={args.threads}")
        root_logger.info(f"questionator {args.command}")
        COMMANDS[args.command](args)
        return 0
    except Exception as e:
        root_logger.debug(traceback.format_exc())
        root_logger.error(str(e))
        root_logger.info(f"see {logfile} for more information")
        return 1
