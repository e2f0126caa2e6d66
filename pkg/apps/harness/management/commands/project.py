from apps.codec.services import save_diff
from apps.harness.cli import HarnessCommand
from apps.training.services.pipeline import budget, project_l0


class Command(HarnessCommand):
    help = "Magnitude-project a diff onto exactly ceil(t * d) non-head entries."

    def add_arguments(self, parser):
        parser.add_argument("--diff", required=True, help="Diff to project")
        parser.add_argument("--sparsity", type=float, required=True, help="Target nonzero fraction t")
        parser.add_argument("--out", required=True, help="Diff path to write")

    def run(self, **options):
        loaded = self.load_diff(options["diff"])
        t = options["sparsity"]
        delta = project_l0(loaded.delta, t)

        metadata = dict(loaded.metadata)
        if "config" in metadata:
            metadata["config"] = {**metadata["config"], "target_sparsity": t}
        metadata["projected"] = True
        save_diff(options["out"], delta, metadata)

        self.stdout.write(
            f"kept {delta.nonhead_nnz} of {loaded.delta.nonhead_nnz} non-head entries "
            f"(budget {budget(t, delta.space.nonhead_dim)})"
        )
        self.done("Projected diff written", options["out"])
