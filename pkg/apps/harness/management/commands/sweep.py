from pathlib import Path

from django.conf import settings

from apps.analysis import services as analysis
from apps.codec.services import save_checkpoint
from apps.harness.cli import HarnessCommand, add_config
from apps.harness.config import config_load
from apps.harness.services import context_for, open_checkpoint, pretrain, sweep
from apps.harness.suite import BASE
from apps.training.models import TrainingRun
from apps.training.services.recorder import track_run

COLUMNS = ("task",) + analysis.SWEEP_COLUMNS


class Command(HarnessCommand):
    help = "Sweep target sparsities and methods; writes one CSV row per (task, t, method)."

    def add_arguments(self, parser):
        add_config(parser, required=True)
        parser.add_argument("--out", required=True, help="CSV path to write")
        parser.add_argument("--base", default=None,
                            help="Pretrained checkpoint (default: pretrain one next to the CSV)")
        parser.add_argument("--xlsx", default=None, help="Also write the tables to a workbook")
        parser.add_argument("--workers", action="store_true", default=None,
                            help="Dispatch cells to Celery workers")
        parser.add_argument("--inline", dest="workers", action="store_false",
                            help="Run cells in this process")

    def run(self, **options):
        out = Path(options["out"])
        use_workers = settings.DIFFPRUNE_SWEEP_ASYNC if options["workers"] is None else options["workers"]

        if options["base"]:
            base_path = Path(options["base"])
            checkpoint = self.load_checkpoint(base_path)
            ctx = open_checkpoint(checkpoint, options["config"])
        else:
            ctx = context_for(config_load(options["config"]))
            base_path = out.with_name(out.name + ".base.dpck")
            with track_run(
                TrainingRun.Kind.PRETRAIN,
                task=BASE,
                method="pretrain",
                seed=ctx.config.train.seed,
                config=ctx.config.as_dict(),
            ) as recorder:
                checkpoint = pretrain(ctx, on_epoch=recorder)
                save_checkpoint(base_path, checkpoint)
                recorder.complete(base_path)
            self.stdout.write(f"pretrained base checkpoint {base_path}")

        spec = ctx.config.sweep
        n_cells = len(spec.tasks) * len(spec.sparsities) * len(spec.methods) * len(spec.seeds)
        self.stdout.write(f"running {n_cells} cells {'on workers' if use_workers else 'inline'}")

        rows = sweep(ctx, checkpoint, base_path=base_path, use_workers=use_workers)
        analysis.write_csv(out, COLUMNS, rows, ctx.config.as_dict())
        self.done(f"{len(rows)} rows written", out)

        if options["xlsx"]:
            sheets = [("sweep", COLUMNS, rows)]
            ablation = []
            for task in spec.tasks:
                for row in analysis.projection_ablation(_as_rows([r for r in rows if r["task"] == task])):
                    if row["without_projection"] is not None or row["without_finetune"] is not None:
                        ablation.append({"task": task, **row})
            if ablation:
                sheets.append(("ablation", ("task",) + analysis.ABLATION_COLUMNS, ablation))
            analysis.write_xlsx(options["xlsx"], sheets)
            self.done("Workbook written", options["xlsx"])


def _as_rows(rows):
    fields = analysis.SweepRow.__dataclass_fields__
    return [analysis.SweepRow(**{k: v for k, v in row.items() if k in fields}) for row in rows]
