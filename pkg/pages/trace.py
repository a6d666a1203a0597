import click

from cvt.analysis import count_flops, format_shape
from includes.config_file import select_model


def trace_lines(report):
    lines = [f"# {report.name} @ {format_shape(report.input_hw)}"]
    current = None

    # ==========================
    # Stage boundaries
    # ==========================
    for r in report.records:
        section = r.path.split(".")[1] if r.path.startswith("stages.") else "head"
        if section != current:
            current = section
            lines.append("[head]" if section == "head" else f"[stage {int(section) + 1}]")
        lines.append(f"{r.path}\t{format_shape(r.shape)}")
    return lines


def trace_view(config_path=None, preset=None, input_size=224):
    """One line per layer: path and output shape (H x W x C for maps, tokens x C for sequences)."""
    report = count_flops(select_model(config_path, preset), input_size)
    lines = trace_lines(report)
    click.echo("\n".join(lines))
    return lines
