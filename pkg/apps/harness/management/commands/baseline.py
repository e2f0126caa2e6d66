from apps.codec.services import save_diff
from apps.harness.cli import HarnessCommand, add_config, add_seed
from apps.harness.services import evaluate_diff, file_metadata, finetune, open_checkpoint
from apps.training.models import TrainingRun
from apps.training.services.recorder import track_run

KINDS = ("full", "last-layer", "non-adaptive")


class Command(HarnessCommand):
    help = "Train a baseline diff: full finetuning, last layer only, or non-adaptive pruning."

    def add_arguments(self, parser):
        parser.add_argument("--kind", required=True, choices=KINDS)
        parser.add_argument("--base", required=True, help="Pretrained checkpoint")
        parser.add_argument("--task", required=True, help="Task name")
        parser.add_argument("--sparsity", type=float, default=None, help="Target nonzero fraction (non-adaptive)")
        add_seed(parser)
        add_config(parser)
        parser.add_argument("--out", required=True, help="Diff path to write")

    def run(self, **options):
        base = self.load_checkpoint(options["base"])
        ctx = open_checkpoint(base, options["config"], overrides={
            "target_sparsity": options["sparsity"],
            "seed": options["seed"],
        })
        kind = options["kind"]

        with track_run(
            TrainingRun.Kind.BASELINE,
            task=options["task"],
            method=kind,
            seed=ctx.config.train.seed,
            config=ctx.config.as_dict(),
        ) as recorder:
            delta = finetune(ctx, base.theta, kind, options["task"], on_epoch=recorder)
            save_diff(options["out"], delta, file_metadata(ctx, kind="diff", method=kind, task=options["task"]))
            recorder.complete(options["out"])

        accuracy = evaluate_diff(ctx, base.theta, delta, options["task"])
        self.stdout.write(f"{kind}: {delta.nnz} entries, {options['task']} accuracy {accuracy:.4f}")
        self.done("Diff written", options["out"])
