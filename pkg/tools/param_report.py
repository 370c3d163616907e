import os
import sys

from rich.console import Console
from rich.table import Table

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "modules")))

from degrade import Task  # noqa: E402
from model import ModelConfig, build_model, parameter_breakdown  # noqa: E402

# published totals of the full networks
REFERENCE_COUNTS = {Task.DEINTERLACE: 2943235, Task.DEMOSAIC: 3460227}
TOLERANCE = 0.15


def report(task, console):
    model, total = build_model(ModelConfig(task=task))
    reference = REFERENCE_COUNTS[task]

    table = Table(title=f"{task.value}: parameters per component")
    table.add_column("component")
    table.add_column("parameters", justify="right")
    table.add_column("share", justify="right")
    for name, count in parameter_breakdown(model).items():
        table.add_row(name, f"{count:,}", f"{count / total:.1%}")
    table.add_row("[bold]total[/bold]", f"[bold]{total:,}[/bold]", "")
    table.add_row("reference", f"{reference:,}", "")
    gap = (total - reference) / reference
    color = "green" if abs(gap) <= TOLERANCE else "red"
    table.add_row("gap", f"[{color}]{total - reference:+,}[/{color}]", f"[{color}]{gap:+.2%}[/{color}]")
    console.print(table)
    return abs(gap) <= TOLERANCE


if __name__ == "__main__":
    console = Console()
    within = [report(task, console) for task in (Task.DEINTERLACE, Task.DEMOSAIC)]
    sys.exit(0 if all(within) else 1)
