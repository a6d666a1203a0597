import click

from cvt.analysis import count_flops, format_records, format_table, human
from cvt.config import with_stride_kv
from includes.config_file import select_model


def analyze_view(config_path=None, preset=None, input_size=224, output_format="table", stride_kv=None):
    """Per-layer params/FLOPs/shapes and the totals line."""
    config = select_model(config_path, preset)
    if stride_kv is not None:
        config = with_stride_kv(config, stride_kv)
    report = count_flops(config, input_size)

    if output_format == "records":
        click.echo(format_records(report))
        totals = f"{human(report.total_params, 'M')}/{human(report.total_flops, 'G')}"
        click.echo(f"TOTAL\ttotal\t{report.total_params}\t{report.total_flops}\t{totals}")
    else:
        click.echo(format_table(report))
    return report
