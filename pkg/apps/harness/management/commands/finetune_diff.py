from apps.codec.services import save_diff
from apps.harness.cli import HarnessCommand, add_config, add_seed
from apps.harness.services import evaluate_diff, file_metadata, finetune, open_checkpoint
from apps.training.models import TrainingRun
from apps.training.services.recorder import track_run


class Command(HarnessCommand):
    help = "Learn a sparse diff for one task on top of a pretrained checkpoint."

    def add_arguments(self, parser):
        parser.add_argument("--base", required=True, help="Pretrained checkpoint")
        parser.add_argument("--task", required=True, help="Task name")
        mode = parser.add_mutually_exclusive_group()
        mode.add_argument("--structured", dest="structured", action="store_true", default=None)
        mode.add_argument("--unstructured", dest="structured", action="store_false")
        parser.add_argument("--sparsity", type=float, default=None, help="Target nonzero fraction t")
        parser.add_argument("--lambda", dest="l0_lambda", type=float, default=None, help="L0 penalty weight")
        add_seed(parser)
        add_config(parser)
        parser.add_argument("--out", required=True, help="Diff path to write")

    def run(self, **options):
        base = self.load_checkpoint(options["base"])
        ctx = open_checkpoint(base, options["config"], overrides={
            "target_sparsity": options["sparsity"],
            "lambda": options["l0_lambda"],
            "seed": options["seed"],
            "structured": options["structured"],
        })
        train = ctx.config.train
        method = "structured" if train.structured else "unstructured"

        with track_run(
            TrainingRun.Kind.FINETUNE_DIFF,
            task=options["task"],
            method=method,
            seed=train.seed,
            config=ctx.config.as_dict(),
        ) as recorder:
            delta = finetune(ctx, base.theta, method, options["task"], on_epoch=recorder)
            save_diff(options["out"], delta, file_metadata(ctx, kind="diff", method=method, task=options["task"]))
            recorder.complete(options["out"])

        accuracy = evaluate_diff(ctx, base.theta, delta, options["task"])
        self.stdout.write(
            f"{delta.nonhead_nnz} of {delta.space.nonhead_dim} non-head parameters changed "
            f"({delta.nonzero_fraction:.4%}), {delta.nnz} entries stored"
        )
        self.stdout.write(f"{options['task']} accuracy {accuracy:.4f}")
        self.done("Diff written", options["out"])
