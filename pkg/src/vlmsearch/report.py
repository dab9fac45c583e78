"""Report validation and rendering."""

from __future__ import annotations

import csv
import io
import json
from importlib import resources

import jsonschema

from .errors import InputError
from .oracle import PHASES


def report_schema() -> dict:
    return json.loads(resources.files("vlmsearch").joinpath("schemas/report.schema.json").read_text())


def validate_report(data: dict) -> None:
    try:
        jsonschema.validate(data, report_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"report does not match schema at {where}: {exc.message}") from None


def _fmt(v, spec=".4f"):
    return "-" if v is None else format(v, spec)


def render_text(data: dict, top: int = 5) -> str:
    out = io.StringIO()
    if data.get("incomplete"):
        out.write("*** INCOMPLETE: search aborted before finishing ***\n")
        if data.get("error"):
            out.write(f"    {data['error']}\n")
        out.write("\n")
    zoo = data["zoo"]
    out.write(f"zoo: {len(zoo['ve'])} vision encoders x {len(zoo['llm'])} language models, "
              f"{len(data['clusters'])} candidate clusters, seed {data['seed']}\n")
    top1 = data.get("top1")
    if top1:
        out.write(f"top-1: {top1['candidate']}  predicted error {_fmt(top1['predicted_error'])}"
                  f"  true error {_fmt(top1['true_error'])}\n")
    out.write("\nrank  candidate                         status\n")
    fits = {f["candidate"]: f for f in data.get("fits", [])}
    elim = {}
    for e in data.get("elimination_log", []):
        elim.setdefault(e["candidate"], e)
    for i, cand in enumerate(data["ranking"][:top], start=1):
        if cand in fits:
            f = fits[cand]
            tag = "converged" if f["converged"] else "unconverged"
            status = f"predicted {_fmt(f['predicted_full_error'])} ({tag})"
        elif cand in elim:
            e = elim[cand]
            status = f"stopped in {e['phase']} rung {e['rung']} at r={e['budget']:g}"
        else:
            status = ""
        out.write(f"{i:>4}  {cand:<32}  {status}\n")
    costs = data["costs"]
    out.write("\nphase        cost\n")
    for p in PHASES:
        out.write(f"{p:<11} {_fmt(costs.get(p)):>8}\n")
    out.write(f"{'total':<11} {_fmt(costs.get('total')):>8}\n")
    ev = data.get("evaluation")
    if ev:
        out.write("\n")
        out.write(f"grid top-1 {ev['grid_top1']}  (match: {'yes' if ev['top1_matches_grid'] else 'no'})\n")
        out.write(f"grid cost {_fmt(ev['grid_cost'])}  speedup {_fmt(ev['speedup'], '.2f')}x\n")
        out.write(f"tau {_fmt(ev['tau'], '.3f')}  tau_w {_fmt(ev['tau_w'], '.3f')}  "
                  f"top-{ev['topk']} tau_w {_fmt(ev['topk_tau_w'], '.3f')}\n")
    return out.getvalue()


def render_csv(data: dict) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["phase", "cost"])
    for p in PHASES:
        writer.writerow([p, repr(float(data["costs"].get(p, 0.0)))])
    return out.getvalue()
