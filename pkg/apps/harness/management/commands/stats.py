from apps.analysis import services as analysis
from apps.harness.cli import HarnessCommand
from apps.harness.services import diff_stats

STORAGE_COLUMNS = ("scheme", "bytes", "megabytes", "mebibytes")


class Command(HarnessCommand):
    help = "Report a diff's per-layer sparsity, zero groups and storage cost."

    def add_arguments(self, parser):
        parser.add_argument("--diff", required=True, help="Diff to inspect")
        parser.add_argument("--groups", choices=["per-segment"], default="per-segment",
                            help="Grouping used for the zero-group fraction")
        parser.add_argument("--base", default=None, help="Checkpoint the diff applies to")
        parser.add_argument("--tasks", type=int, default=1, help="Task count for the parameter multiplier")
        parser.add_argument("--xlsx", default=None, help="Also write the tables to a workbook")

    def run(self, **options):
        loaded = self.load_diff(options["diff"])
        base = self.load_checkpoint(options["base"]) if options["base"] else None
        delta = loaded.delta
        stats = diff_stats(delta, base=base, n_tasks=options["tasks"])
        report = stats["report"]

        self.stdout.write(f"entries: {stats['nnz']} ({stats['nonhead_nnz']} of {delta.space.nonhead_dim} non-head)")
        self.stdout.write(f"nonzero fraction: {stats['natural_sparsity']:.6f}")
        self.stdout.write("per layer:")
        for row in report.rows():
            self.stdout.write(f"  {row['layer']:<12} {row['nonzero']:>8} {row['fraction']:>8.2%}")
        self.stdout.write(f"zero groups ({options['groups']}): {stats['zero_group_fraction']:.4f}")
        for estimate in stats["storage"]:
            self.stdout.write(f"storage {estimate.describe()}")
        efficiency = stats["efficiency"]
        self.stdout.write(
            f"new parameters per task: {efficiency.new_per_task:.4%}, "
            f"total for {options['tasks']} task(s): {efficiency.total_multiplier:.4f}x"
        )
        if base is not None:
            self.stdout.write(f"parameters changed in base: {stats['changed_in_base']}")

        if options["xlsx"]:
            storage_rows = [
                {"scheme": e.scheme, "bytes": e.bytes, "megabytes": e.megabytes, "mebibytes": e.mebibytes}
                for e in stats["storage"]
            ]
            analysis.write_xlsx(options["xlsx"], [
                ("layers", analysis.LAYER_COLUMNS, report.rows()),
                ("storage", STORAGE_COLUMNS, storage_rows),
            ])
            self.done("Workbook written", options["xlsx"])
