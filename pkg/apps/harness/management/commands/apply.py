from apps.codec.services import apply_patch, save_checkpoint
from apps.harness.cli import HarnessCommand


class Command(HarnessCommand):
    help = "Add a diff onto a checkpoint and write the task checkpoint."

    def add_arguments(self, parser):
        parser.add_argument("--base", required=True, help="Pretrained checkpoint")
        parser.add_argument("--diff", required=True, help="Diff to apply")
        parser.add_argument("--out", required=True, help="Checkpoint path to write")

    def run(self, **options):
        base = self.load_checkpoint(options["base"])
        loaded = self.load_diff(options["diff"])
        metadata = dict(base.metadata)
        metadata["patched_with"] = {
            key: loaded.metadata[key] for key in ("method", "task") if key in loaded.metadata
        }
        patched = apply_patch(base, loaded.delta, metadata)
        save_checkpoint(options["out"], patched)
        self.stdout.write(f"applied {loaded.delta.nnz} entries to {base.space.total_dim} parameters")
        self.done("Checkpoint written", options["out"])
