from apps.harness.cli import HarnessCommand
from apps.harness.services import evaluate, open_checkpoint


class Command(HarnessCommand):
    help = "Report a checkpoint's validation accuracy on one task."

    def add_arguments(self, parser):
        parser.add_argument("--ckpt", required=True, help="Checkpoint to evaluate")
        parser.add_argument("--task", required=True, help="Task name")

    def run(self, **options):
        checkpoint = self.load_checkpoint(options["ckpt"])
        ctx = open_checkpoint(checkpoint)
        accuracy = evaluate(ctx, checkpoint.theta, options["task"])
        self.stdout.write(f"accuracy {accuracy:.4f}")
