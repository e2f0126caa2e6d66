from apps.codec.services import save_diff
from apps.harness.cli import HarnessCommand, add_config, add_seed
from apps.harness.services import evaluate_diff, file_metadata, open_checkpoint
from apps.training.models import TrainingRun
from apps.training.services.pipeline import finetune_fixed_mask
from apps.training.services.recorder import track_run


class Command(HarnessCommand):
    help = "Retrain a diff's values with its support held fixed."

    def add_arguments(self, parser):
        parser.add_argument("--base", required=True, help="Pretrained checkpoint")
        parser.add_argument("--diff", required=True, help="Diff whose support is kept")
        parser.add_argument("--task", required=True, help="Task name")
        add_seed(parser)
        add_config(parser)
        parser.add_argument("--out", required=True, help="Diff path to write")

    def run(self, **options):
        base = self.load_checkpoint(options["base"])
        loaded = self.load_diff(options["diff"])
        ctx = open_checkpoint(
            base,
            options["config"],
            base_config=loaded.metadata.get("config") or base.metadata.get("config"),
            overrides={"seed": options["seed"]},
        )

        with track_run(
            TrainingRun.Kind.FINETUNE_MASK,
            task=options["task"],
            method=loaded.metadata.get("method", ""),
            seed=ctx.config.train.seed,
            config=ctx.config.as_dict(),
        ) as recorder:
            delta = finetune_fixed_mask(
                ctx.model, base.theta, loaded.delta, ctx.task(options["task"]), ctx.config.train,
                on_epoch=recorder,
            )
            metadata = file_metadata(
                ctx,
                kind="diff",
                method=loaded.metadata.get("method", ""),
                task=options["task"],
                finetuned_mask=True,
            )
            save_diff(options["out"], delta, metadata)
            recorder.complete(options["out"])

        before = evaluate_diff(ctx, base.theta, loaded.delta, options["task"])
        after = evaluate_diff(ctx, base.theta, delta, options["task"])
        self.stdout.write(f"{options['task']} accuracy {before:.4f} -> {after:.4f} on {delta.nnz} entries")
        self.done("Diff written", options["out"])
