import click
import pandas as pd

from cvt.analysis import human
from cvt.search import bottleneck_candidate, enumerate_search_space, summarize
from includes.config_file import select_model


def search_view(config_path=None, preset=None, samples=20, seed=0, input_size=224, bottleneck=False):
    """Cost listing of the search space around a base model."""
    base = select_model(config_path, preset)
    extra = [bottleneck_candidate(base)] if bottleneck else []
    results = enumerate_search_space(base, samples, seed=seed, input_hw=input_size, extra=extra)

    df = pd.DataFrame(
        [
            {
                "Candidate": c.label,
                "Params": r.total_params,
                "FLOPs": r.total_flops,
                "Params (M)": human(r.total_params, "M"),
                "FLOPs (G)": human(r.total_flops, "G"),
                "Choices (stride/ratio)": c.choice_vector(),
            }
            for c, r in results
        ]
    )
    click.echo(df.to_string(index=False))

    summary = summarize(results)
    click.echo(
        f"Range  params {summary.min_params}..{summary.max_params} "
        f"({human(summary.min_params, 'M')}..{human(summary.max_params, 'M')})  "
        f"flops {summary.min_flops}..{summary.max_flops} "
        f"({human(summary.min_flops, 'G')}..{human(summary.max_flops, 'G')})"
    )
    return results
