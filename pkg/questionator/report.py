import json
import pathlib

import jinja2


def score(value):
    return "-" if value is None else f"{value:.2f}"


def environment():
    env = jinja2.Environment(
        loader=jinja2.FileSystemLoader(pathlib.Path(__file__).parent / "templates"),
        trim_blocks=True,
        lstrip_blocks=True,
    )
    env.filters["score"] = score
    return env


def render_ablation(rows, lm_beats_baseline=None, title="Ablation"):
    """Markdown comparison of configurations: BLEU-1..4, then perplexity and distinct-1/2.

    `rows` is a list of {"name", "title", "report"} mappings, one per configuration."""
    return environment().get_template("ablation.md").render(rows=rows, lm_beats_baseline=lm_beats_baseline, title=title)


def render_beta_sweep(table, best, title="Beta grid search"):
    return environment().get_template("beta_sweep.md").render(table=table, best=best, title=title)


def ablation_json(rows, lm_beats_baseline=None):
    data = {
        "rows": [
            {"name": row["name"], "title": row["title"], "report": json.loads(row["report"].to_json())} for row in rows
        ],
        "lm_beats_baseline": lm_beats_baseline,
    }
    return json.dumps(data, sort_keys=True, indent=2)
