"""Command-line entry points for every pipeline stage.

One declarative YAML config file can drive all stages; flags override config
values, and the CTRLGEN_ENDPOINT / CTRLGEN_API_KEY environment variables
override the file (but not flags). Each run echoes its effective
configuration to stderr for provenance. Errors print a single
machine-parseable line ("error: <code>: <message>") and exit nonzero.
"""
from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import yaml

from . import demo as demo_fixtures
from .corpus import CorpusError, SectionSpec, load_corpus, read_cases, write_cases
from .gateway import (
    ENV_API_KEY,
    ENV_ENDPOINT,
    ChatGateway,
    GatewayConfig,
    RetryPolicy,
)
from .genstream import start_session
from .metrics import TokenizationSpec, evaluate_corpus
from .mockchat import MockChatTransport, ScriptedChatModel
from .pipeline import run_guideline_job, run_segmentation_job
from .promptgen import (
    GuidelineStore,
    PromptConfig,
    SegmentationStore,
    export_training_set,
)


class CliError(click.ClickException):
    """Error with a machine-parseable single-line rendering."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code

    def show(self, file=None) -> None:
        click.echo(f"error: {self.code}: {self.message}", err=True)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise CliError("config-unreadable", str(exc)) from exc
    except yaml.YAMLError as exc:
        raise CliError("config-invalid", str(exc)) from exc
    if not isinstance(data, dict):
        raise CliError("config-invalid", f"{path}: expected a mapping")
    return data


def _effective(flags: dict, config: dict, env: dict | None = None) -> dict:
    """flag > env > config-file > absent."""
    merged = dict(config)
    for key, value in (env or {}).items():
        if value is not None:
            merged[key] = value
    for key, value in flags.items():
        if value is not None:
            merged[key] = value
    return merged


def _echo_config(command: str, effective: dict) -> None:
    shown = {k: ("***" if "key" in k and v else v) for k, v in effective.items()}
    click.echo(f"# config: {json.dumps({'command': command, **shown}, sort_keys=True)}", err=True)


def _gateway_from(effective: dict) -> ChatGateway:
    endpoint = effective.get("endpoint")
    if not endpoint:
        raise CliError(
            "no-endpoint", f"no endpoint configured (--endpoint, config, or {ENV_ENDPOINT})"
        )
    cfg = GatewayConfig(
        endpoint_url=endpoint,
        model_id=effective.get("model", "default-model"),
        api_key=effective.get("api_key"),
        temperature=float(effective.get("temperature", 0.0)),
        max_output_tokens=int(effective.get("max_output_tokens", 4096)),
        request_timeout=float(effective.get("request_timeout", 120.0)),
        retry=RetryPolicy(
            max_attempts=int(effective.get("max_attempts", 3)),
            backoff_base=float(effective.get("backoff_base", 0.5)),
        ),
        max_in_flight=int(effective.get("max_in_flight", 4)),
        prefix_mode=effective.get("prefix_mode", "prefill"),
    )
    return ChatGateway(cfg)


def _gateway_env() -> dict:
    return {
        "endpoint": os.environ.get(ENV_ENDPOINT),
        "api_key": os.environ.get(ENV_API_KEY),
    }


def _read_text_lines(path: str) -> list[str]:
    """One text per line: JSON objects with a "text" field."""
    texts = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    texts.append(json.loads(line)["text"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise CliError(
                        "bad-text-file", f'{path}:{lineno}: expected {{"text": ...}}'
                    ) from exc
    except OSError as exc:
        raise CliError("unreadable", f"{path}: {exc}") from exc
    return texts


@click.group()
def main() -> None:
    """Controlled clinical text generation toolkit."""


# --- ingest ---------------------------------------------------------------------

@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--summaries", type=click.Path(), default=None)
@click.option("--reports", type=click.Path(), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--bhc-pattern", multiple=True, help="Override BHC header patterns.")
@click.option("--di-pattern", multiple=True, help="Override DI header patterns.")
def ingest(config_path, summaries, reports, out_path, bhc_pattern, di_pattern):
    """Load the corpus CSVs, split targets, and write the case file."""
    cfg = _effective(
        {
            "summaries": summaries,
            "reports": reports,
            "cases": out_path,
            "bhc_patterns": list(bhc_pattern) or None,
            "di_patterns": list(di_pattern) or None,
        },
        _load_config_file(config_path),
    )
    _echo_config("ingest", cfg)
    for key in ("summaries", "reports", "cases"):
        if not cfg.get(key):
            raise CliError("missing-input", f"--{key if key != 'cases' else 'out'} is required")
    spec_kwargs = {}
    if cfg.get("bhc_patterns"):
        spec_kwargs["bhc_header_patterns"] = tuple(cfg["bhc_patterns"])
    if cfg.get("di_patterns"):
        spec_kwargs["di_header_patterns"] = tuple(cfg["di_patterns"])
    if cfg.get("end_markers"):
        spec_kwargs["end_markers"] = tuple(cfg["end_markers"])
    try:
        result = load_corpus(cfg["summaries"], cfg["reports"], SectionSpec(**spec_kwargs))
        write_cases(cfg["cases"], result.cases)
    except CorpusError as exc:
        raise CliError("corpus", str(exc)) from exc
    click.echo(
        json.dumps(
            {
                "cases": len(result.cases),
                "skipped": [
                    {"case_id": s.case_id, "reason": s.reason} for s in result.skipped
                ],
            }
        )
    )


# --- augment ---------------------------------------------------------------------

@main.group()
def augment() -> None:
    """Batch augmentation jobs against the configured endpoint."""


def _augment_common(config_path, cases_path, out_path, checkpoint_path, kind, tasks):
    file_cfg = _load_config_file(config_path)
    cfg = _effective(
        {"cases": cases_path, "out": out_path, "checkpoint": checkpoint_path},
        file_cfg,
        _gateway_env(),
    )
    _echo_config(f"augment-{kind}", cfg)
    for key in ("cases", "out", "checkpoint"):
        if not cfg.get(key):
            raise CliError("missing-input", f"--{key} is required")
    try:
        cases = list(read_cases(cfg["cases"]))
    except OSError as exc:
        raise CliError("unreadable", f"{cfg['cases']}: {exc}") from exc
    gateway = _gateway_from(cfg)
    try:
        if kind == "segment":
            stats = run_segmentation_job(
                cases, gateway, cfg["out"], cfg["checkpoint"], tasks=tasks
            )
        else:
            stats = run_guideline_job(
                cases,
                "style" if kind == "style" else "instructions",
                gateway,
                cfg["out"],
                cfg["checkpoint"],
                tasks=tasks,
                leakage_threshold=int(cfg.get("leakage_threshold", 5)),
            )
    finally:
        gateway.close()
    click.echo(json.dumps(stats.to_record()))


_TASKS_OPTION = click.option(
    "--tasks", type=click.Choice(["bhc", "di", "both"]), default="both"
)


def _task_tuple(tasks: str) -> tuple[str, ...]:
    return ("bhc", "di") if tasks == "both" else (tasks,)


@augment.command("segment")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--cases", "cases_path", type=click.Path(), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), default=None)
@_TASKS_OPTION
def augment_segment(config_path, cases_path, out_path, checkpoint_path, tasks):
    """Topic-segment every target and restore spans."""
    _augment_common(config_path, cases_path, out_path, checkpoint_path, "segment", _task_tuple(tasks))


@augment.command("style")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--cases", "cases_path", type=click.Path(), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), default=None)
@_TASKS_OPTION
def augment_style(config_path, cases_path, out_path, checkpoint_path, tasks):
    """Generate style guidelines per target."""
    _augment_common(config_path, cases_path, out_path, checkpoint_path, "style", _task_tuple(tasks))


@augment.command("instr")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--cases", "cases_path", type=click.Path(), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), default=None)
@_TASKS_OPTION
def augment_instr(config_path, cases_path, out_path, checkpoint_path, tasks):
    """Generate writing instructions per target."""
    _augment_common(config_path, cases_path, out_path, checkpoint_path, "instr", _task_tuple(tasks))


# --- export ----------------------------------------------------------------------

@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--cases", "cases_path", type=click.Path(), default=None)
@click.option("--segmentations", "seg_path", type=click.Path(), default=None)
@click.option("--guidelines", "guide_path", type=click.Path(), default=None)
@click.option("--c", "c_value", type=click.Choice(["none", "topics"]), default=None)
@click.option("--g", "g_value", type=click.Choice(["none", "style", "instr"]), default=None)
@click.option("--task", type=click.Choice(["bhc", "di"]), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--max-chars", type=int, default=None)
def export(config_path, cases_path, seg_path, guide_path, c_value, g_value, task, out_path, max_chars):
    """Export the instruction-tuning training set for one configuration."""
    cfg = _effective(
        {
            "cases": cases_path,
            "segmentations": seg_path,
            "guidelines": guide_path,
            "c": c_value,
            "g": g_value,
            "task": task,
            "out": out_path,
            "max_chars": max_chars,
        },
        _load_config_file(config_path),
    )
    _echo_config("export", cfg)
    for key in ("cases", "out"):
        if not cfg.get(key):
            raise CliError("missing-input", f"--{key} is required")
    prompt_cfg = PromptConfig(
        c=cfg.get("c", "none"), g=cfg.get("g", "none"), task=cfg.get("task", "bhc")
    )
    seg_store = None
    if prompt_cfg.c == "topics":
        if not cfg.get("segmentations"):
            raise CliError(
                "missing-store", "config c=topics needs --segmentations STORE"
            )
        try:
            seg_store = SegmentationStore.from_jsonl(cfg["segmentations"])
        except OSError as exc:
            raise CliError("missing-store", f"segmentation store: {exc}") from exc
    guide_store = None
    if prompt_cfg.guideline_kind is not None:
        if not cfg.get("guidelines"):
            raise CliError(
                "missing-store", f"config g={prompt_cfg.g} needs --guidelines STORE"
            )
        try:
            guide_store = GuidelineStore.from_jsonl(cfg["guidelines"])
        except OSError as exc:
            raise CliError("missing-store", f"guideline store: {exc}") from exc
    cases = list(read_cases(cfg["cases"]))
    result = export_training_set(
        cases, prompt_cfg, seg_store, guide_store, cfg["out"], max_chars=cfg.get("max_chars")
    )
    click.echo(
        json.dumps(
            {
                "exported": result.exported,
                "skipped": [
                    {"case_id": s.case_id, "reason": s.reason} for s in result.skipped
                ],
            }
        )
    )


# --- eval -----------------------------------------------------------------------

@main.command("eval")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--hyp", "hyp_path", type=click.Path(), default=None)
@click.option("--ref", "ref_path", type=click.Path(), default=None)
@click.option("--task", type=click.Choice(["bhc", "di"]), default="bhc",
              help="Task the pairs belong to; the report also carries a combined block.")
@click.option("--plugin", "plugins", multiple=True, help="NAME=COMMAND metric plugin.")
@click.option("--out", "out_path", type=click.Path(), default=None)
def eval_cmd(config_path, hyp_path, ref_path, task, plugins, out_path):
    """Score hypothesis texts against references with the metric ensemble."""
    cfg = _effective(
        {"hyp": hyp_path, "ref": ref_path, "task": task, "out": out_path},
        _load_config_file(config_path),
    )
    _echo_config("eval", cfg)
    for key in ("hyp", "ref"):
        if not cfg.get(key):
            raise CliError("missing-input", f"--{key} is required")
    hyps = _read_text_lines(cfg["hyp"])
    refs = _read_text_lines(cfg["ref"])
    if len(hyps) != len(refs):
        raise CliError(
            "length-mismatch", f"{len(hyps)} hypotheses vs {len(refs)} references"
        )
    if not hyps:
        raise CliError("missing-input", "no pairs to evaluate")
    plugin_map = dict(cfg.get("plugins", {}))
    for spec in plugins:
        name, _, command = spec.partition("=")
        if not name or not command:
            raise CliError("bad-plugin", f"expected NAME=COMMAND, got {spec!r}")
        plugin_map[name] = command
    pairs = list(zip(hyps, refs))
    resolved_task = cfg.get("task", "bhc")
    pairs_bhc = pairs if resolved_task == "bhc" else []
    pairs_di = pairs if resolved_task == "di" else []
    reports = evaluate_corpus(pairs_bhc, pairs_di, TokenizationSpec(), plugins=plugin_map)
    payload = json.dumps(
        {name: report.to_record() for name, report in reports.items()}, indent=2
    )
    if cfg.get("out"):
        Path(cfg["out"]).write_text(payload + "\n", encoding="utf-8")
    click.echo(payload)


# --- serve ----------------------------------------------------------------------

@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--cases", "cases_path", type=click.Path(), default=None)
@click.option("--sessions-dir", type=click.Path(), default=None)
@click.option("--guidelines", "guide_path", type=click.Path(), default=None)
@click.option("--segmentations", "seg_path", type=click.Path(), default=None)
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
def serve(config_path, cases_path, sessions_dir, guide_path, seg_path, host, port):
    """Run the HTTP session service."""
    import uvicorn

    from .service import ServiceConfig, http_api

    cfg = _effective(
        {
            "cases": cases_path,
            "sessions_dir": sessions_dir,
            "guidelines": guide_path,
            "segmentations": seg_path,
            "host": host,
            "port": port,
        },
        _load_config_file(config_path),
        _gateway_env(),
    )
    _echo_config("serve", cfg)
    for key in ("cases", "sessions_dir"):
        if not cfg.get(key):
            raise CliError("missing-input", f"--{key.replace('_', '-')} is required")
    gateway = _gateway_from(cfg)
    gateway.close()  # only validates configuration; the service owns its client
    service_cfg = ServiceConfig(
        cases_path=cfg["cases"],
        sessions_dir=cfg["sessions_dir"],
        gateway=gateway.cfg,
        guidelines_path=cfg.get("guidelines"),
        segmentations_path=cfg.get("segmentations"),
        plugins=dict(cfg.get("plugins", {})),
    )
    app = http_api(service_cfg)
    uvicorn.run(app, host=cfg.get("host", "127.0.0.1"), port=int(cfg.get("port", 8420)))


# --- demo-session ------------------------------------------------------------------

@main.command("demo-session")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--edit-heading", default=None,
              help="Replacement text applied to the first topic heading.")
@click.option("--quiet", is_flag=True, default=False)
def demo_session(config_path, edit_heading, quiet):
    """Run a scripted interactive session against the built-in mock endpoint."""
    cfg = _effective(
        {"edit_heading": edit_heading}, _load_config_file(config_path)
    )
    edit_heading = cfg.get("edit_heading") or "Admission Overview"
    _echo_config("demo-session", {"edit_heading": edit_heading})
    model = ScriptedChatModel(elements=list(demo_fixtures.DEMO_ELEMENTS))
    transport = MockChatTransport(model, chunk_size=13)
    gateway = ChatGateway(
        GatewayConfig(endpoint_url="http://mock.invalid", model_id="scripted-demo"),
        transport=transport,
    )
    events: list[dict] = []
    session = start_session(
        demo_fixtures.demo_case(),
        PromptConfig(c="topics", g="none", task="bhc"),
        gateway,
        "interactive",
    )
    session.add_listener(events.append)

    pauses = 0
    edited = False
    while True:
        status = session.wait(timeout=30)
        if status in ("completed", "failed"):
            break
        if status != "paused" or pauses > 100:
            raise CliError("demo-stuck", f"session stuck in {status}")
        pauses += 1
        pending = session.pending
        if not quiet:
            click.echo(f"[paused] {pending.kind}: {pending.text[:72]}")
        if pending.kind == "topic" and not edited:
            session.apply_user_action("edit", edit_heading)
            edited = True
        else:
            session.apply_user_action("accept")
    if session.status == "failed":
        raise CliError("demo-failed", session.failure_cause or "unknown failure")
    document, seg = session.finalize()
    gateway.close()
    click.echo(json.dumps({
        "pauses": pauses,
        "segments": len(seg.segments),
        "first_heading": seg.segments[0].heading,
        "document": document if not quiet else document[:120] + "...",
    }, ensure_ascii=False))


if __name__ == "__main__":
    sys.exit(main())
