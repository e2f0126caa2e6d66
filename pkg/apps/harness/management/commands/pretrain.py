from apps.codec.services import save_checkpoint
from apps.harness.cli import HarnessCommand, add_config, add_seed
from apps.harness.config import config_load
from apps.harness.services import context_for, evaluate, pretrain
from apps.harness.suite import BASE, majority_baseline
from apps.training.models import TrainingRun
from apps.training.services.recorder import track_run


class Command(HarnessCommand):
    help = "Pretrain a toy model on the base task and write a checkpoint."

    def add_arguments(self, parser):
        add_config(parser)
        add_seed(parser)
        parser.add_argument("--out", required=True, help="Checkpoint path to write")

    def run(self, **options):
        run_config = config_load(options["config"], overrides={"seed": options["seed"]})
        ctx = context_for(run_config)

        with track_run(
            TrainingRun.Kind.PRETRAIN,
            task=BASE,
            method="pretrain",
            seed=run_config.train.seed,
            config=run_config.as_dict(),
        ) as recorder:
            checkpoint = pretrain(ctx, on_epoch=recorder)
            save_checkpoint(options["out"], checkpoint)
            recorder.complete(options["out"])

        accuracy = evaluate(ctx, checkpoint.theta, BASE)
        baseline = majority_baseline(ctx.task(BASE).validation)
        self.stdout.write(f"d = {checkpoint.space.total_dim} ({checkpoint.space.nonhead_dim} outside the head)")
        self.stdout.write(f"base accuracy {accuracy:.4f} (majority class {baseline:.4f})")
        self.done("Pretrained checkpoint written", options["out"])
